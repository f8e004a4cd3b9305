//! Radial and Cartesian grids, free-space Poisson solvers, field snapshots.

use crate::fft3::Fft3;
use crate::nonlin::FormFactorSpec;
use crate::{par, quad, Complex64};
use std::f64::consts::PI;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("density is not normalized: 4π∫r²ρ = {0}")]
    Unnormalized(f64),
    #[error("density has a negative or non-finite value at index {0}")]
    BadDensity(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Uniform,
    LogStretched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    r: Vec<f64>,
    spacing: Spacing,
}

impl RadialGrid {
    /// `n` equispaced nodes on `[0, r_max]`.
    pub fn uniform(n: usize, r_max: f64) -> Result<Self, FieldError> {
        if n < 3 || !(r_max > 0.0) {
            return Err(FieldError::Grid(format!("uniform grid needs n >= 3 and r_max > 0 (n={n}, r_max={r_max})")));
        }
        let h = r_max / (n - 1) as f64;
        Ok(Self { r: (0..n).map(|i| i as f64 * h).collect(), spacing: Spacing::Uniform })
    }

    /// `r_i = β(e^{αi} − 1)`: spacing ≈ αβ near the origin, ≈ αr far out.
    pub fn log_stretched(n: usize, r_scale: f64, r_max: f64) -> Result<Self, FieldError> {
        if n < 3 || !(r_scale > 0.0) || !(r_max > 0.0) {
            return Err(FieldError::Grid(format!(
                "log grid needs n >= 3, r_scale > 0, r_max > 0 (n={n}, r_scale={r_scale}, r_max={r_max})"
            )));
        }
        let alpha = (1.0 + r_max / r_scale).ln() / (n - 1) as f64;
        let mut r: Vec<f64> = (0..n).map(|i| r_scale * (alpha * i as f64).exp_m1()).collect();
        r[n - 1] = r_max;
        Ok(Self { r, spacing: Spacing::LogStretched })
    }

    pub fn from_nodes(r: Vec<f64>) -> Result<Self, FieldError> {
        if r.len() < 3 || r[0] < 0.0 || r.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FieldError::Grid("nodes must be nonnegative and strictly increasing".into()));
        }
        let h0 = r[1] - r[0];
        let uniform = r.windows(2).all(|w| ((w[1] - w[0]) - h0).abs() <= 1e-12 * h0);
        let spacing = if uniform { Spacing::Uniform } else { Spacing::LogStretched };
        Ok(Self { r, spacing })
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn r_max(&self) -> f64 {
        *self.r.last().unwrap()
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.r.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { self.r[i] - self.r[i - 1] } else { 0.0 };
                let right = if i + 1 < n { self.r[i + 1] - self.r[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    /// Linear interpolation of nodal values (end values held).
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let n = self.r.len();
        if x <= self.r[0] {
            return values[0];
        }
        if x >= self.r[n - 1] {
            return values[n - 1];
        }
        let i = self.r.partition_point(|&v| v <= x) - 1;
        let t = (x - self.r[i]) / (self.r[i + 1] - self.r[i]);
        values[i] * (1.0 - t) + values[i + 1] * t
    }
}

/// Exponential tail fit over the last decade of nodes: returns `(ρ_N, λ)` or `None`.
fn tail_fit(grid: &RadialGrid, rho: &[f64]) -> Option<(f64, f64)> {
    let n = rho.len();
    let m = n - 1 - (n / 10).max(2);
    let (rn, rm) = (rho[n - 1], rho[m]);
    if rn > 0.0 && rm > rn {
        let lambda = (rm / rn).ln() / (grid.r[n - 1] - grid.r[m]);
        Some((rn, lambda))
    } else {
        None
    }
}

/// Potential of a radial density, `φ(r) = q[M(r)/r + 4π∫_r^∞ r₁ρ dr₁]`
/// with `M(r) = 4π∫₀^r r₁²ρ dr₁`, which equals `(q/r)[1 − 4π∫_r^∞(r₁−r)r₁ρ dr₁]`
/// for normalized ρ; `φ(0) = 4πq∫ r₁ρ dr₁`.
pub fn poisson_radial(grid: &RadialGrid, density: &[f64], q: f64, norm_tol: f64) -> Result<Vec<f64>, FieldError> {
    let n = grid.len();
    if density.len() != n {
        return Err(FieldError::Length { expected: n, got: density.len() });
    }
    if let Some(i) = density.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(FieldError::BadDensity(i));
    }
    let r = grid.r();
    let rmax = grid.r_max();
    let (tail1, tail2) = match tail_fit(grid, density) {
        Some((rho_n, l)) => (
            rho_n * (rmax / l + 1.0 / (l * l)),
            rho_n * (rmax * rmax / l + 2.0 * rmax / (l * l) + 2.0 / (l * l * l)),
        ),
        None => (0.0, 0.0),
    };
    let mut inner = vec![0.0; n];
    for i in 1..n {
        let h = r[i] - r[i - 1];
        inner[i] = inner[i - 1] + 0.5 * h * (r[i] * r[i] * density[i] + r[i - 1] * r[i - 1] * density[i - 1]);
    }
    let mass = 4.0 * PI * (inner[n - 1] + tail2);
    if (mass - 1.0).abs() > norm_tol {
        return Err(FieldError::Unnormalized(mass));
    }
    let mut outer = vec![0.0; n];
    outer[n - 1] = tail1;
    for i in (0..n - 1).rev() {
        let h = r[i + 1] - r[i];
        outer[i] = outer[i + 1] + 0.5 * h * (r[i] * density[i] + r[i + 1] * density[i + 1]);
    }
    Ok((0..n)
        .map(|i| {
            let m = if r[i] > 0.0 { inner[i] / r[i] } else { 0.0 };
            4.0 * PI * q * (m + outer[i])
        })
        .collect())
}

/// `|φ_a(r_test) − 1/r_test|` for the unit-charge density `ψ̊_a²`.
pub fn coulomb_limit_error(spec: FormFactorSpec, a: f64, r_test: f64) -> Result<f64, FieldError> {
    if !(r_test > 0.0) || a > r_test / 4.0 || !(a > 0.0) {
        return Err(FieldError::Precondition(format!("need 0 < a <= r_test/4 (a={a}, r_test={r_test})")));
    }
    let spec = FormFactorSpec { kind: spec.kind, a };
    let rho = |x: f64| spec.eval(x).powi(2);
    let m = quad::integrate(|x| 4.0 * PI * x * x * rho(x), 0.0, r_test, 1e-13);
    let outer = quad::integrate_to_inf(|x| 4.0 * PI * x * rho(x), r_test, 1e-13);
    Ok((m / r_test + outer - 1.0 / r_test).abs())
}

/// Cubic box `[−L, L)³` with `n` nodes per axis, `x_i = −L + shift + i·h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianGrid {
    pub n: usize,
    pub l: f64,
    pub shift: f64,
}

impl CartesianGrid {
    pub fn new(n: usize, l: f64) -> Result<Self, FieldError> {
        if n < 16 || !n.is_power_of_two() || !(l > 0.0) {
            return Err(FieldError::Grid(format!("need n >= 16 a power of two and L > 0 (n={n}, L={l})")));
        }
        Ok(Self { n, l, shift: 0.0 })
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn h(&self) -> f64 {
        2.0 * self.l / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(3)
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.l + self.shift + i as f64 * self.h()
    }

    pub fn point(&self, idx: usize) -> [f64; 3] {
        let n = self.n;
        [self.coord(idx / (n * n)), self.coord((idx / n) % n), self.coord(idx % n)]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    /// `Σ f·h³`.
    pub fn integrate(&self, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
        par::sum(self.len(), f) * self.cell_volume()
    }
}

/// `w₀` in the self-cell kernel value `w₀h²`: the value that makes the punctured lattice
/// sum `Σ_{m≠0} h³/|hm| + w₀h²` reproduce `∫ ρ/|x|` for smooth ρ to high order
/// (minus the simple-cubic Madelung constant of the `1/r` lattice sum).
pub const SELF_CELL_WEIGHT: f64 = 2.837_297_479_480_6;

#[derive(Debug, Clone)]
pub struct PoissonResult {
    pub phi: Vec<f64>,
    pub leak_warning: bool,
}

/// Free-space Poisson solver on a fixed grid (domain doubling, cached kernel transform).
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    grid: CartesianGrid,
    fft: Fft3,
    kernel_hat: Vec<f64>,
}

impl PoissonSolver {
    pub fn new(grid: CartesianGrid) -> Self {
        let n = grid.n;
        let m = 2 * n;
        let h = grid.h();
        let fft = Fft3::new(m);
        let signed = |i: usize| if i < n { i as f64 } else { i as f64 - m as f64 };
        let mut k: Vec<Complex64> = par::map(m * m * m, |idx| {
            let (a, b, c) = (signed(idx / (m * m)), signed((idx / m) % m), signed(idx % m));
            let d = (a * a + b * b + c * c).sqrt();
            let v = if d == 0.0 { SELF_CELL_WEIGHT * h * h } else { h * h / d };
            Complex64::new(v, 0.0)
        });
        fft.forward(&mut k);
        let kernel_hat = k.iter().map(|v| v.re).collect();
        Self { grid, fft, kernel_hat }
    }

    pub fn grid(&self) -> CartesianGrid {
        self.grid
    }

    /// `φ(x) = q∫ρ(y)/|x−y| dy`.
    pub fn solve(&self, density: &[f64], q: f64) -> Result<PoissonResult, FieldError> {
        let g = self.grid;
        let n = g.n;
        let m = 2 * n;
        if density.len() != g.len() {
            return Err(FieldError::Length { expected: g.len(), got: density.len() });
        }
        if let Some(i) = density.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::BadDensity(i));
        }
        let mut buf = vec![Complex64::default(); m * m * m];
        par::chunks_mut(&mut buf, m * m, |i, plane| {
            if i < n {
                for j in 0..n {
                    for k in 0..n {
                        plane[j * m + k] = Complex64::new(density[g.index(i, j, k)], 0.0);
                    }
                }
            }
        });
        self.fft.forward(&mut buf);
        let kh = &self.kernel_hat;
        par::update(&mut buf, |i, v| v * kh[i]);
        self.fft.inverse(&mut buf);
        let mut phi = vec![0.0; g.len()];
        par::chunks_mut(&mut phi, n * n, |i, plane| {
            for j in 0..n {
                for k in 0..n {
                    plane[j * n + k] = q * buf[(i * m + j) * m + k].re;
                }
            }
        });
        let half = 0.5 * g.l;
        let [total, outside] = par::sum_k(g.len(), |idx| {
            let p = g.point(idx);
            let d = density[idx].abs();
            let out = if p.iter().any(|x| x.abs() > half) { d } else { 0.0 };
            [d, out]
        });
        let leak_warning = total > 0.0 && outside / total > 1e-8;
        Ok(PoissonResult { phi, leak_warning })
    }
}

/// One-off free-space solve; builds a solver for the grid.
pub fn poisson_cartesian(grid: CartesianGrid, density: &[f64], q: f64) -> Result<PoissonResult, FieldError> {
    PoissonSolver::new(grid).solve(density, q)
}

/// Snapshot payload.
#[derive(Debug, Clone, PartialEq)]
pub enum SnapshotData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

const MAGIC: &[u8; 4] = b"WCF1";

/// Header: magic, three u32 dims, f64 L, u32 dtype (1 real, 2 complex), u32 reserved; little-endian.
pub fn write_snapshot<W: Write>(mut w: W, grid: &CartesianGrid, data: &SnapshotData) -> Result<(), FieldError> {
    let (dtype, len) = match data {
        SnapshotData::Real(v) => (1u32, v.len()),
        SnapshotData::Complex(v) => (2u32, v.len()),
    };
    if len != grid.len() {
        return Err(FieldError::Length { expected: grid.len(), got: len });
    }
    let mut head = Vec::with_capacity(32);
    head.extend_from_slice(MAGIC);
    for _ in 0..3 {
        head.extend_from_slice(&(grid.n as u32).to_le_bytes());
    }
    head.extend_from_slice(&grid.l.to_le_bytes());
    head.extend_from_slice(&dtype.to_le_bytes());
    head.extend_from_slice(&0u32.to_le_bytes());
    w.write_all(&head)?;
    let mut body = Vec::with_capacity(len * 16);
    match data {
        SnapshotData::Real(v) => v.iter().for_each(|x| body.extend_from_slice(&x.to_le_bytes())),
        SnapshotData::Complex(v) => v.iter().for_each(|z| {
            body.extend_from_slice(&z.re.to_le_bytes());
            body.extend_from_slice(&z.im.to_le_bytes());
        }),
    }
    w.write_all(&body)?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<(CartesianGrid, SnapshotData), FieldError> {
    let mut head = [0u8; 32];
    r.read_exact(&mut head)?;
    if &head[0..4] != MAGIC {
        return Err(FieldError::Format("bad magic".into()));
    }
    let u = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap()) as usize;
    let (nx, ny, nz) = (u(4), u(8), u(12));
    if nx != ny || ny != nz {
        return Err(FieldError::Format("non-cubic dims".into()));
    }
    let l = f64::from_le_bytes(head[16..24].try_into().unwrap());
    let grid = CartesianGrid::new(nx, l)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let f = |o: usize| f64::from_le_bytes(body[o..o + 8].try_into().unwrap());
    let len = grid.len();
    let data = match u(24) {
        1 if body.len() == 8 * len => SnapshotData::Real((0..len).map(|i| f(8 * i)).collect()),
        2 if body.len() == 16 * len => {
            SnapshotData::Complex((0..len).map(|i| Complex64::new(f(16 * i), f(16 * i + 8))).collect())
        }
        d => return Err(FieldError::Format(format!("dtype {d} with {} payload bytes", body.len()))),
    };
    Ok((grid, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlin::FormFactorKind;

    fn erf(x: f64) -> f64 {
        // oracle: erf via its defining integral
        2.0 / PI.sqrt() * quad::integrate(|t| (-t * t).exp(), 0.0, x, 1e-14)
    }

    fn gaussian_density(r: f64) -> f64 {
        PI.powf(-1.5) * (-r * r).exp()
    }

    #[test]
    fn radial_gaussian_matches_erf() {
        let grid = RadialGrid::uniform(10_001, 10.0).unwrap();
        let rho: Vec<f64> = grid.r().iter().map(|&r| gaussian_density(r)).collect();
        let phi = poisson_radial(&grid, &rho, 1.0, 1e-6).unwrap();
        assert!((phi[0] - 2.0 / PI.sqrt()).abs() < 1e-6);
        for i in (100..10_001).step_by(250) {
            let r = grid.r()[i];
            let exact = erf(r) / r;
            assert!(((phi[i] - exact) / exact).abs() < 1e-6, "r={r}");
        }
    }

    #[test]
    fn radial_uniform_ball_shell_theorem() {
        let radius: f64 = 2.0;
        let grid = RadialGrid::uniform(20_001, 5.0).unwrap();
        let c = 3.0 / (4.0 * PI * radius.powi(3));
        // smooth the edge by evaluating the cell average so trapezoid converges
        let rho: Vec<f64> = grid.r().iter().map(|&r| if r < radius { c } else if r == radius { 0.5 * c } else { 0.0 }).collect();
        let phi = poisson_radial(&grid, &rho, 1.0, 1e-3).unwrap();
        for &i in &[12_000, 15_000, 20_000] {
            let r = grid.r()[i];
            assert!((phi[i] * r - 1.0).abs() < 1e-6, "r={r} {}", phi[i] * r);
        }
    }

    #[test]
    fn radial_rejects_unnormalized() {
        let grid = RadialGrid::uniform(1001, 10.0).unwrap();
        let rho: Vec<f64> = grid.r().iter().map(|&r| 2.0 * gaussian_density(r)).collect();
        assert!(matches!(poisson_radial(&grid, &rho, 1.0, 1e-6), Err(FieldError::Unnormalized(_))));
    }

    #[test]
    fn coulomb_limit_examples() {
        let spec = FormFactorSpec::new(FormFactorKind::Gaussian, 1.0).unwrap();
        let e = coulomb_limit_error(spec, 0.1, 1.0).unwrap();
        // oracle: 1/r − erf(r/a)/r = erfc(10)
        assert!(e < 1e-3);
        let prev = [0.2, 0.1, 0.05].map(|a| coulomb_limit_error(spec, a, 1.0).unwrap());
        assert!(prev[1] <= prev[0] && prev[2] <= prev[1]);
        assert!(coulomb_limit_error(spec, 0.5, 1.0).is_err());
    }

    #[test]
    fn self_cell_weight_is_lattice_constant() {
        // Ewald oracle for the constant c in Σ_{m≠0} f(hm)h³/|hm| ≈ ∫f/|x| − c·f(0)h².
        // Using ζ-regularization, c = −(Madelung sum of 1/|m| with neutralizing background),
        // computed here from Ewald's split with parameter α = 1 (errors < 1e-13).
        let alpha: f64 = 1.0;
        let mut real = 0.0;
        let mut recip = 0.0;
        let r = 6i32;
        for i in -r..=r {
            for j in -r..=r {
                for k in -r..=r {
                    if i == 0 && j == 0 && k == 0 {
                        continue;
                    }
                    let d = ((i * i + j * j + k * k) as f64).sqrt();
                    real += erfc(alpha * d) / d;
                    let g2 = 4.0 * PI * PI * d * d;
                    recip += 4.0 * PI / g2 * (-g2 / (4.0 * alpha * alpha)).exp();
                }
            }
        }
        let madelung = real + recip - PI / (alpha * alpha) - 2.0 * alpha / PI.sqrt();
        assert!((SELF_CELL_WEIGHT + madelung).abs() < 1e-11, "{madelung}");
    }

    fn erfc(x: f64) -> f64 {
        2.0 / PI.sqrt() * quad::integrate_to_inf(|t| (-t * t).exp(), x, 1e-15)
    }

    #[test]
    fn cartesian_matches_radial_and_is_linear() {
        let grid = CartesianGrid::new(64, 10.0).unwrap();
        let rho: Vec<f64> = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                gaussian_density((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            })
            .collect();
        let solver = PoissonSolver::new(grid);
        let res = solver.solve(&rho, 1.0).unwrap();
        assert!(!res.leak_warning);
        let c = grid.n / 2;
        for off in [0usize, 3, 8, 14] {
            let idx = grid.index(c + off, c, c);
            let r = grid.coord(c + off).abs();
            let exact = if r == 0.0 { 2.0 / PI.sqrt() } else { erf(r) / r };
            assert!(((res.phi[idx] - exact) / exact).abs() < 2e-3, "off={off}");
        }
        let twice = solver.solve(&rho, 2.0).unwrap();
        for (a, b) in twice.phi.iter().zip(&res.phi) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn cartesian_flags_leak() {
        let grid = CartesianGrid::new(16, 4.0).unwrap();
        let mut rho = vec![0.0; grid.len()];
        rho[grid.index(1, 8, 8)] = 1.0;
        assert!(poisson_cartesian(grid, &rho, 1.0).unwrap().leak_warning);
        rho[0] = f64::NAN;
        assert!(poisson_cartesian(grid, &rho, 1.0).is_err());
    }

    #[test]
    fn snapshot_roundtrip() {
        let grid = CartesianGrid::new(16, 3.0).unwrap();
        let data = SnapshotData::Complex((0..grid.len()).map(|i| Complex64::new(i as f64, -(i as f64))).collect());
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &grid, &data).unwrap();
        assert_eq!(buf.len(), 32 + 16 * grid.len());
        assert_eq!(&buf[0..4], b"WCF1");
        let (g2, d2) = read_snapshot(&buf[..]).unwrap();
        assert_eq!(g2.n, 16);
        assert_eq!(g2.l, 3.0);
        assert_eq!(d2, data);
    }
}
