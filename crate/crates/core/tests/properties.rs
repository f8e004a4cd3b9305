use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use wavecorpuscle::eigensolver::{coulomb_energy_functional, log_sobolev_gap, RadialOperator};
use wavecorpuscle::fields::{poisson_radial, CartesianGrid, PoissonSolver, RadialGrid};
use wavecorpuscle::nonlin::{c_g, Nonlinearity, NonlinearityKind, Xi};

fn kind_strategy() -> impl Strategy<Value = NonlinearityKind> {
    prop_oneof![
        Just(NonlinearityKind::PowerLaw),
        Just(NonlinearityKind::Exponential),
        Just(NonlinearityKind::LogGaussian),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn size_scaling(kind in kind_strategy(), a in 0.3f64..3.0, ls in -8.0f64..1.0) {
        let s = 10f64.powf(ls);
        let unit = Nonlinearity::new(kind, 1.0).unwrap();
        let nl = Nonlinearity::new(kind, a).unwrap();
        let a3s = a.powi(3) * s;
        let gp = nl.gprime(s);
        let gp_ref = unit.gprime(a3s) / (a * a);
        prop_assert!((gp - gp_ref).abs() <= 1e-10 * (1.0 + gp_ref.abs()));
        let g = nl.antiderivative(s);
        let g_ref = unit.antiderivative(a3s) / a.powi(5);
        prop_assert!((g - g_ref).abs() <= 1e-9 * (1.0 + g_ref.abs()));
    }

    #[test]
    fn log_family_identity(kappa in 0.01f64..2.0, ls in -12.0f64..2.0) {
        let s = 10f64.powf(ls);
        let nl = Nonlinearity::log_kappa(kappa, Xi::NegInfinity).unwrap();
        let lhs = s * nl.gprime(s) - nl.antiderivative(s);
        prop_assert!((lhs + kappa * kappa * s).abs() <= 1e-12 * (1.0 + s * nl.gprime(s).abs()));
    }

    #[test]
    fn regularization_is_monotone_in_xi(x1 in -60.0f64..0.0, dx in 0.0f64..30.0, ls in -30.0f64..1.0, kappa in 0.05f64..1.0) {
        let s = 10f64.powf(ls);
        let (lo, hi) = (x1 - dx, x1);
        let a = Nonlinearity::log_kappa(kappa, Xi::finite(lo).unwrap()).unwrap();
        let b = Nonlinearity::log_kappa(kappa, Xi::finite(hi).unwrap()).unwrap();
        prop_assert!(a.gprime(s) >= b.gprime(s) - 1e-12 * b.gprime(s).abs());
    }

    #[test]
    fn regularization_gap_bound(xi in -40.0f64..-1.0, ls in -25.0f64..1.0, kappa in 0.05f64..1.0) {
        // |G_ξ − G_{−∞}| ≤ κ⁵e^ξC_g²
        let s = 10f64.powf(ls);
        let reg = Nonlinearity::log_kappa(kappa, Xi::finite(xi).unwrap()).unwrap();
        let raw = Nonlinearity::log_kappa(kappa, Xi::NegInfinity).unwrap();
        let bound = kappa.powi(5) * xi.exp() * c_g().powi(2);
        let d = (reg.antiderivative(s) - raw.antiderivative(s)).abs();
        prop_assert!(d <= bound * (1.0 + 1e-9) + 1e-15 * raw.antiderivative(s).abs(), "{d} {bound}");
    }

    #[test]
    fn radial_poisson_is_affine_on_mixtures(c1 in 0.5f64..3.0, c2 in 0.5f64..3.0, lam in 0.0f64..1.0) {
        let grid = RadialGrid::log_stretched(4001, 0.01, 60.0).unwrap();
        let gauss = |c: f64| -> Vec<f64> {
            let norm = (c / PI).powf(1.5);
            grid.r().iter().map(|r| norm * (-c * r * r).exp()).collect()
        };
        let (r1, r2) = (gauss(c1), gauss(c2));
        let mix: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
        let p1 = poisson_radial(&grid, &r1, 1.0, 1e-6).unwrap();
        let p2 = poisson_radial(&grid, &r2, 1.0, 1e-6).unwrap();
        let pm = poisson_radial(&grid, &mix, 2.5, 1e-6).unwrap();
        for i in (0..grid.len()).step_by(97) {
            let want = 2.5 * (lam * p1[i] + (1.0 - lam) * p2[i]);
            prop_assert!((pm[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn cartesian_poisson_linear_and_translation_covariant(shift in 1usize..4, c in 1.5f64..3.0, q in -2.0f64..2.0) {
        let grid = CartesianGrid::new(32, 8.0).unwrap();
        let solver = PoissonSolver::new(grid);
        let n = grid.n;
        let blob = |center: [f64; 3]| -> Vec<f64> {
            (0..grid.len())
                .map(|idx| {
                    let p = grid.point(idx);
                    let d2: f64 = (0..3).map(|k| (p[k] - center[k]).powi(2)).sum();
                    (c / PI).powf(1.5) * (-c * d2).exp()
                })
                .collect()
        };
        let h = grid.h();
        let base = blob([0.0; 3]);
        let moved = blob([shift as f64 * h, 0.0, 0.0]);
        let p0 = solver.solve(&base, 1.0).unwrap().phi;
        let pq = solver.solve(&base, q).unwrap().phi;
        let pm = solver.solve(&moved, 1.0).unwrap().phi;
        let sum: Vec<f64> = base.iter().zip(&moved).map(|(a, b)| a + b).collect();
        let ps = solver.solve(&sum, 1.0).unwrap().phi;
        for i in 4..n - 4 {
            for j in [n / 2 - 3, n / 2, n / 2 + 2] {
                let idx = grid.index(i, j, n / 2);
                prop_assert!((pq[idx] - q * p0[idx]).abs() <= 1e-12 * (1.0 + p0[idx].abs()));
                prop_assert!((ps[idx] - p0[idx] - pm[idx]).abs() <= 1e-11);
                let src = grid.index(i - shift, j, n / 2);
                prop_assert!((pm[idx] - p0[src]).abs() <= 1e-11);
            }
        }
    }
}

fn trial_state(grid: &RadialGrid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let op = RadialOperator::new(grid).unwrap();
    let (c1, c2, w) = (rng.gen_range(0.5..2.0), rng.gen_range(0.2..0.8), rng.gen_range(-0.5..0.5));
    let mut u: Vec<f64> = grid.r().iter().map(|&r| r * ((-c1 * r).exp() + w * r * (-c2 * r).exp())).collect();
    let n = u.len();
    u[n - 1] = 0.0;
    op.normalize(&mut u);
    u
}

#[test]
fn energy_derivative_matches_residual_pairing() {
    let grid = RadialGrid::log_stretched(3001, 0.01, 80.0).unwrap();
    let op = RadialOperator::new(&grid).unwrap();
    let kappa = 0.2;
    let nl = Nonlinearity::log_kappa(kappa, Xi::NegInfinity).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let u = trial_state(&grid, &mut rng);
    let w = op.weights();
    let r = grid.r();
    let au = op.apply_a(&u);
    let n = u.len();
    for _ in 0..10 {
        let mut v: Vec<f64> = r.iter().map(|&x| x * (-rng.gen_range(0.3..1.5) * x).exp() * rng.gen_range(-1.0..1.0)).collect();
        v[0] = 0.0;
        v[n - 1] = 0.0;
        // dE[v] = 2 Σ [(Au)ᵢ + Wᵢ(−1/rᵢ + ½G′(sᵢ))uᵢ] vᵢ
        let pairing: f64 = (1..n - 1)
            .map(|i| {
                let s = u[i] * u[i] / (4.0 * PI * r[i] * r[i]);
                2.0 * (au[i] + w[i] * (-1.0 / r[i] + 0.5 * nl.gprime(s)) * u[i]) * v[i]
            })
            .sum();
        let e = |t: f64| {
            let x: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + t * b).collect();
            coulomb_energy_functional(&grid, &x, kappa, Xi::NegInfinity).unwrap()
        };
        let (h1, h2) = (1e-3, 5e-4);
        let d1 = (e(h1) - e(-h1)) / (2.0 * h1) - pairing;
        let d2 = (e(h2) - e(-h2)) / (2.0 * h2) - pairing;
        // central differences: error O(h²), so halving h must cut it by ~4
        assert!(d2.abs() <= 1e-6 || d2.abs() < 0.3 * d1.abs(), "{d1} {d2}");
        assert!(d2.abs() < 1e-4 * (1.0 + pairing.abs()));
    }
}

#[test]
fn log_sobolev_holds_on_random_states() {
    let grid = RadialGrid::log_stretched(6001, 0.01, 80.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let u = trial_state(&grid, &mut rng);
        assert!(log_sobolev_gap(&grid, &u).unwrap() >= -1e-8);
    }
}
