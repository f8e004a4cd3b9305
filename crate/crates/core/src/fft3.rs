//! Cubic 3D complex FFT built from batched 1D transforms.

use crate::par;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

#[derive(Clone)]
pub struct Fft3 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft3({})", self.n)
    }
}

impl Fft3 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.fwd);
    }

    /// Inverse transform scaled by 1/n³, in place.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv);
        let s = 1.0 / (self.n * self.n * self.n) as f64;
        par::update(data, |_, v| v * s);
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.len(), n * n * n);
        let lines = (4096 / n).max(1);
        let run = |c: &mut [Complex64]| {
            let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(c, &mut scratch);
        };
        // last axis: contiguous lines
        par::chunks_mut(data, n * lines, |_, c| run(c));
        // middle axis: transpose each plane
        par::chunks_mut(data, n * n, |_, plane| {
            let mut t = vec![Complex64::default(); n * n];
            for j in 0..n {
                for k in 0..n {
                    t[k * n + j] = plane[j * n + k];
                }
            }
            run(&mut t);
            for j in 0..n {
                for k in 0..n {
                    plane[j * n + k] = t[k * n + j];
                }
            }
        });
        // first axis: gather into scratch, transform, scatter back
        let nn = n * n;
        let mut t = vec![Complex64::default(); n * nn];
        {
            let src: &[Complex64] = data;
            par::chunks_mut(&mut t, n * lines, |b, c| {
                for (l, line) in c.chunks_mut(n).enumerate() {
                    let jk = b * lines + l;
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = src[i * nn + jk];
                    }
                }
                run(c);
            });
        }
        let t: &[Complex64] = &t;
        par::chunks_mut(data, nn, |i, plane| {
            for (jk, v) in plane.iter_mut().enumerate() {
                *v = t[jk * n + i];
            }
        });
    }

    /// Angular wavenumbers for a periodic box of length `len` along one axis.
    /// The Nyquist mode is zeroed when `odd_derivative` is set.
    pub fn wavenumbers(n: usize, len: f64, odd_derivative: bool) -> Vec<f64> {
        let dk = 2.0 * std::f64::consts::PI / len;
        (0..n)
            .map(|i| {
                let m = if i < n / 2 {
                    i as f64
                } else if i == n / 2 && odd_derivative {
                    0.0
                } else {
                    i as f64 - n as f64
                };
                m * dk
            })
            .collect()
    }
}
