//! Tridiagonal linear algebra: partially pivoted LU solves and Sturm counts.

/// Solves `T x = b` for `T` with sub-diagonal `lo` (`lo[i] = T[i+1][i]`), diagonal `d`
/// and super-diagonal `up` (`up[i] = T[i][i+1]`), with row interchanges.
/// Returns `None` on an exactly singular pivot.
pub fn solve(lo: &[f64], d: &[f64], up: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = d.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let mut dd = d.to_vec();
    let mut du = up.to_vec();
    du.push(0.0);
    let mut du2 = vec![0.0; n];
    let mut dl = lo.to_vec();
    let mut x = b.to_vec();
    for i in 0..n - 1 {
        if dd[i].abs() >= dl[i].abs() {
            if dd[i] == 0.0 {
                return None;
            }
            let f = dl[i] / dd[i];
            dd[i + 1] -= f * du[i];
            x[i + 1] -= f * x[i];
            dl[i] = 0.0;
        } else {
            let f = dd[i] / dl[i];
            dd[i] = dl[i];
            let tmp = dd[i + 1];
            dd[i + 1] = du[i] - f * tmp;
            du2[i] = du[i + 1];
            du[i + 1] *= -f;
            du[i] = tmp;
            x.swap(i, i + 1);
            x[i + 1] -= f * x[i];
        }
    }
    if dd[n - 1] == 0.0 {
        return None;
    }
    x[n - 1] /= dd[n - 1];
    if n > 1 {
        x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / dd[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / dd[i];
    }
    Some(x)
}

/// Number of eigenvalues below `x` of the symmetric tridiagonal matrix (`d`, `e`).
pub fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0f64;
    for i in 0..d.len() {
        q = d[i] - x - if i > 0 { e[i - 1] * e[i - 1] / q } else { 0.0 };
        if q == 0.0 {
            q = f64::EPSILON * (d[i].abs() + x.abs() + f64::MIN_POSITIVE);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `k`-th smallest eigenvalue (0-based) by bisection to absolute accuracy `tol`.
pub fn bisect_eigenvalue(d: &[f64], e: &[f64], k: usize, tol: f64) -> f64 {
    let n = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    while hi - lo > tol.max(f64::EPSILON * (lo.abs() + hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if sturm_count(d, e, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Eigenvector of the symmetric tridiagonal matrix for an accurate eigenvalue `lambda`,
/// by inverse iteration; unit Euclidean norm, first significant entry positive.
pub fn inverse_iteration(d: &[f64], e: &[f64], lambda: f64) -> Vec<f64> {
    let n = d.len();
    let shifted: Vec<f64> = d.iter().map(|v| v - lambda - 1e-10 * (1.0 + lambda.abs())).collect();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919 % 104_729) as f64 / 104_729.0)).collect();
    for _ in 0..3 {
        let mut x = solve(e, &shifted, e, &v).unwrap_or_else(|| v.clone());
        let nrm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        x.iter_mut().for_each(|a| *a /= nrm);
        v = x;
    }
    let amax = v.iter().map(|a| a.abs()).fold(0.0, f64::max);
    if let Some(first) = v.iter().find(|a| a.abs() > 1e-3 * amax) {
        if *first < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matvec(lo: &[f64], d: &[f64], up: &[f64], x: &[f64]) -> Vec<f64> {
        let n = d.len();
        (0..n)
            .map(|i| {
                let mut s = d[i] * x[i];
                if i > 0 {
                    s += lo[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += up[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    #[test]
    fn pivoted_solve_handles_zero_diagonal() {
        let d = [0.0, 1.0, -2.0, 0.5, 3.0];
        let lo = [2.0, -1.0, 0.7, 1.1];
        let up = [1.5, 0.3, -2.0, 0.9];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let x = solve(&lo, &d, &up, &b).unwrap();
        let r = matvec(&lo, &d, &up, &x);
        for i in 0..5 {
            assert!((r[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_eigenvalues() {
        // −u'' on n interior points of (0, π): λ_k = (2/h sin(kh/2))²
        let n = 200;
        let h = std::f64::consts::PI / (n + 1) as f64;
        let d = vec![2.0 / (h * h); n];
        let e = vec![-1.0 / (h * h); n - 1];
        for k in 0..4 {
            let exact = (2.0 / h * ((k + 1) as f64 * h / 2.0).sin()).powi(2);
            let lam = bisect_eigenvalue(&d, &e, k, 1e-12);
            assert!((lam - exact).abs() < 1e-9, "{k}: {lam} {exact}");
            let v = inverse_iteration(&d, &e, lam);
            let av = matvec(&e, &d, &e, &v);
            let res = av.iter().zip(&v).map(|(a, b)| (a - lam * b).powi(2)).sum::<f64>().sqrt();
            assert!(res < 1e-8 * lam, "{res}");
        }
    }
}
