//! Data-parallel primitives with a sequential fallback.
//!
//! Reductions are blocked with a fixed block size and the partial sums are
//! combined in order, so results are bitwise independent of thread count
//! and of whether the `parallel` feature is enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const BLOCK: usize = 1024;

/// Calls `f(chunk_index, chunk)` on consecutive chunks of `data`.
pub fn chunks_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Element-wise update `data[i] = f(i, data[i])`.
pub fn update<T, F>(data: &mut [T], f: F)
where
    T: Send + Copy,
    F: Fn(usize, T) -> T + Sync + Send,
{
    chunks_mut(data, BLOCK, |b, c| {
        let base = b * BLOCK;
        for (j, v) in c.iter_mut().enumerate() {
            *v = f(base + j, *v);
        }
    });
}

/// `(0..n).map(f).collect()`, possibly in parallel, order preserved.
pub fn map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}

/// Deterministic sum of `f(i)` for `i < n`.
pub fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    sum_k::<1, _>(n, |i| [f(i)])[0]
}

/// Deterministic component-wise sum of `K`-vectors.
pub fn sum_k<const K: usize, F>(n: usize, f: F) -> [f64; K]
where
    F: Fn(usize) -> [f64; K] + Sync + Send,
{
    let nb = n.div_ceil(BLOCK);
    let partial = map(nb, |b| {
        let mut acc = [0.0; K];
        for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
            let v = f(i);
            for k in 0..K {
                acc[k] += v[k];
            }
        }
        acc
    });
    let mut out = [0.0; K];
    for p in partial {
        for k in 0..K {
            out[k] += p[k];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_sequential_blocks() {
        let n = 10_000;
        let s = sum(n, |i| (i as f64).sqrt());
        let mut seq = 0.0;
        for b in 0..n.div_ceil(BLOCK) {
            let mut acc = 0.0;
            for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
                acc += (i as f64).sqrt();
            }
            seq += acc;
        }
        assert_eq!(s, seq);
    }

    #[test]
    fn update_and_map_preserve_order() {
        let mut v = vec![1.0; 3000];
        update(&mut v, |i, x| x + i as f64);
        assert_eq!(v[2999], 3000.0);
        assert_eq!(map(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
