//! Exponential integrals E_n(x).

/// E_n(x) for n ≥ 1, x > 0: series for x ≤ 1, continued fraction otherwise.
pub fn expint(n: u32, x: f64) -> f64 {
    const EULER: f64 = 0.577_215_664_901_532_9;
    const EPS: f64 = 1e-16;
    assert!(n >= 1 && x > 0.0);
    let nm1 = (n - 1) as f64;
    if x > 1.0 {
        let mut b = x + n as f64;
        let mut c = 1.0 / 1e-300;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (nm1 + i as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        h * (-x).exp()
    } else {
        let mut ans = if n == 1 { -x.ln() - EULER } else { 1.0 / nm1 };
        let mut fact = 1.0;
        for i in 1..10_000 {
            fact *= -x / i as f64;
            let del = if (i as f64) != nm1 {
                -fact / (i as f64 - nm1)
            } else {
                let mut psi = -EULER;
                for k in 1..=(n - 1) {
                    psi += 1.0 / k as f64;
                }
                fact * (-x.ln() + psi)
            };
            ans += del;
            if del.abs() < ans.abs() * EPS {
                break;
            }
        }
        ans
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate_to_inf;

    #[test]
    fn matches_defining_integral() {
        for &n in &[1u32, 2, 3] {
            for &x in &[0.3f64, 1.0, 2.0, 5.0, 30.0] {
                // E_n(x) = (e^{−x}/x) ∫₀^∞ e^{−y} (1 + y/x)^{−n} dy
                let q = (-x).exp() / x * integrate_to_inf(|y| (-y).exp() * (1.0 + y / x).powi(-(n as i32)), 0.0, 1e-14);
                let e = expint(n, x);
                assert!(((e - q) / q).abs() < 1e-11, "n={n} x={x} {e} {q}");
            }
        }
    }
}
