//! Exact accelerating wave-corpuscles `ψ = e^{iS/χ} ψ̊(|x − r(t)|)` in affine
//! external potentials, used as oracles for the split-step integrator.

use crate::dynamics::{dot, ChargeState, DynamicsError, ExternalField, Propagator, SystemState};
use crate::fields::CartesianGrid;
use crate::nonlin::{FormFactorSpec, NonlinError, Nonlinearity};
use crate::{par, Complex64, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolitonError {
    #[error("external potential is not affine in x: sampled second difference {curvature:e}")]
    NonAffine { curvature: f64 },
    #[error("invalid setup: {0}")]
    Setup(String),
    #[error("time {t} outside the integrated window [0, {t_end}]")]
    OutOfRange { t: f64, t_end: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Nonlin(#[from] NonlinError),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    t: f64,
    r: Vec3,
    v: Vec3,
    s: f64,
}

/// Trajectory, velocity and phase function of one wave-corpuscle, tabulated on the RK4 steps.
#[derive(Debug, Clone)]
pub struct WaveCorpuscle {
    pub spec: FormFactorSpec,
    pub nl: Nonlinearity,
    pub m: f64,
    pub q: f64,
    pub chi: f64,
    external: ExternalField,
    nodes: Vec<Node>,
}

/// Largest normalized second difference of `φ(t, ·)` over probe triples.
pub fn affinity_defect(ext: &ExternalField, t_end: f64) -> f64 {
    let pts = [[0.0, 0.0, 0.0], [0.7, -0.3, 1.1], [-1.3, 0.9, 0.4], [2.1, 1.7, -2.4]];
    let dirs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.6, -0.8, 0.0], [0.48, 0.6, 0.64]];
    let mut worst: f64 = 0.0;
    for k in 0..=4 {
        let t = t_end * k as f64 / 4.0;
        for x in pts {
            for d in dirs {
                let at = |s: f64| ext.phi(t, [x[0] + s * d[0], x[1] + s * d[1], x[2] + s * d[2]]);
                let (a, b, c) = (at(-1.0), at(0.0), at(1.0));
                let scale = 1.0 + a.abs().max(b.abs()).max(c.abs());
                worst = worst.max((a - 2.0 * b + c).abs() / scale);
            }
        }
    }
    worst
}

/// RK4 for `m r̈ = qE(t, r)` and `ṡ_p = m|v|²/2 − qφ(t, r)` on `[0, T]`.
#[allow(clippy::too_many_arguments)]
pub fn build_wave_corpuscle(
    spec: FormFactorSpec,
    m: f64,
    q: f64,
    chi: f64,
    external: &ExternalField,
    r0: Vec3,
    v0: Vec3,
    t_end: f64,
    dt: f64,
) -> Result<WaveCorpuscle, SolitonError> {
    if !(m > 0.0 && chi > 0.0 && dt > 0.0 && t_end >= 0.0) {
        return Err(SolitonError::Setup(format!("need m, chi, dt > 0 and T >= 0 (m={m}, chi={chi}, dt={dt}, T={t_end})")));
    }
    let curvature = affinity_defect(external, t_end);
    if curvature > 1e-10 {
        return Err(SolitonError::NonAffine { curvature });
    }
    let nl = Nonlinearity::from_form_factor(spec)?;
    let steps = ((t_end / dt).ceil() as usize).max(1);
    let h = t_end / steps as f64;
    let rhs = |t: f64, r: Vec3, v: Vec3| {
        let e = external.e_field(t, r);
        (v, e.map(|x| q * x / m), 0.5 * m * dot(v, v) - q * external.phi(t, r))
    };
    let add = |a: Vec3, b: Vec3, s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    let mut nodes = Vec::with_capacity(steps + 1);
    let mut n = Node { t: 0.0, r: r0, v: v0, s: 0.0 };
    nodes.push(n);
    for k in 0..steps {
        let t = k as f64 * h;
        let (k1r, k1v, k1s) = rhs(t, n.r, n.v);
        let (k2r, k2v, k2s) = rhs(t + 0.5 * h, add(n.r, k1r, 0.5 * h), add(n.v, k1v, 0.5 * h));
        let (k3r, k3v, k3s) = rhs(t + 0.5 * h, add(n.r, k2r, 0.5 * h), add(n.v, k2v, 0.5 * h));
        let (k4r, k4v, k4s) = rhs(t + h, add(n.r, k3r, h), add(n.v, k3v, h));
        for i in 0..3 {
            n.r[i] += h / 6.0 * (k1r[i] + 2.0 * k2r[i] + 2.0 * k3r[i] + k4r[i]);
            n.v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        n.s += h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s);
        n.t = (k + 1) as f64 * h;
        nodes.push(n);
    }
    Ok(WaveCorpuscle { spec, nl, m, q, chi, external: external.clone(), nodes })
}

/// Kinematic state at one instant.
#[derive(Debug, Clone, Copy)]
pub struct Kinematics {
    pub r: Vec3,
    pub v: Vec3,
    pub accel: Vec3,
    pub s_p: f64,
    pub ds_p: f64,
}

fn hermite(y0: f64, d0: f64, y1: f64, d1: f64, h: f64, u: f64) -> (f64, f64) {
    let (u2, u3) = (u * u, u * u * u);
    let val = (2.0 * u3 - 3.0 * u2 + 1.0) * y0 + (u3 - 2.0 * u2 + u) * h * d0 + (-2.0 * u3 + 3.0 * u2) * y1 + (u3 - u2) * h * d1;
    let der = ((6.0 * u2 - 6.0 * u) * y0 + (3.0 * u2 - 4.0 * u + 1.0) * h * d0 + (-6.0 * u2 + 6.0 * u) * y1 + (3.0 * u2 - 2.0 * u) * h * d1) / h;
    (val, der)
}

impl WaveCorpuscle {
    pub fn t_end(&self) -> f64 {
        self.nodes.last().unwrap().t
    }

    pub fn external(&self) -> &ExternalField {
        &self.external
    }

    fn accel(&self, t: f64, r: Vec3) -> Vec3 {
        self.external.e_field(t, r).map(|x| self.q * x / self.m)
    }

    fn ds(&self, t: f64, r: Vec3, v: Vec3) -> f64 {
        0.5 * self.m * dot(v, v) - self.q * self.external.phi(t, r)
    }

    /// `r, v, r̈, s_p, ṡ_p` at `t`; exact on RK4 nodes, cubic Hermite in between.
    pub fn kinematics(&self, t: f64) -> Result<Kinematics, SolitonError> {
        let t_end = self.t_end();
        let tol = 1e-12 * (1.0 + t_end);
        if !(t >= -tol && t <= t_end + tol) {
            return Err(SolitonError::OutOfRange { t, t_end });
        }
        let t = t.clamp(0.0, t_end);
        let n = self.nodes.len();
        let h = if n > 1 { self.nodes[1].t } else { 1.0 };
        let k = if n > 1 { ((t / h).floor() as usize).min(n - 2) } else { 0 };
        let a = self.nodes[k];
        let from_node = |p: Node| Kinematics {
            r: p.r,
            v: p.v,
            accel: self.accel(p.t, p.r),
            s_p: p.s,
            ds_p: self.ds(p.t, p.r, p.v),
        };
        if n == 1 || (t - a.t).abs() <= 1e-14 * (1.0 + t) {
            return Ok(from_node(a));
        }
        let b = self.nodes[k + 1];
        if (t - b.t).abs() <= 1e-14 * (1.0 + t) {
            return Ok(from_node(b));
        }
        let u = (t - a.t) / h;
        let (aa, ab) = (self.accel(a.t, a.r), self.accel(b.t, b.r));
        let mut r = [0.0; 3];
        let mut v = [0.0; 3];
        for i in 0..3 {
            r[i] = hermite(a.r[i], a.v[i], b.r[i], b.v[i], h, u).0;
            v[i] = hermite(a.v[i], aa[i], b.v[i], ab[i], h, u).0;
        }
        let s_p = hermite(a.s, self.ds(a.t, a.r, a.v), b.s, self.ds(b.t, b.r, b.v), h, u).0;
        Ok(Kinematics { r, v, accel: self.accel(t, r), s_p, ds_p: self.ds(t, r, v) })
    }

    fn eval_with(&self, k: &Kinematics, x: Vec3) -> (Complex64, Complex64) {
        let d = [x[0] - k.r[0], x[1] - k.r[1], x[2] - k.r[2]];
        let rho = dot(d, d).sqrt();
        let amp = self.spec.eval(rho);
        let phase = Complex64::from_polar(1.0, (self.m * dot(k.v, d) + k.s_p) / self.chi);
        let psi = phase * amp;
        // ∂_t S = m r̈·(x−r) − m|v|² + ṡ_p ;  ∂_t ψ̊ = −ψ̊′ v·(x−r)/ρ
        let ds = self.m * dot(k.accel, d) - self.m * dot(k.v, k.v) + k.ds_p;
        let damp = if rho > 0.0 { -self.spec.derivative(rho) * dot(k.v, d) / rho } else { 0.0 };
        let dpsi = phase * Complex64::new(damp, ds / self.chi * amp);
        (psi, dpsi)
    }

    pub fn psi(&self, t: f64, x: Vec3) -> Result<Complex64, SolitonError> {
        Ok(self.eval_with(&self.kinematics(t)?, x).0)
    }

    /// Analytic `∂ψ/∂t`.
    pub fn dpsi_dt(&self, t: f64, x: Vec3) -> Result<Complex64, SolitonError> {
        Ok(self.eval_with(&self.kinematics(t)?, x).1)
    }

    pub fn sample_on_grid(&self, grid: &CartesianGrid, t: f64) -> Result<Vec<Complex64>, SolitonError> {
        let k = self.kinematics(t)?;
        Ok(par::map(grid.len(), |i| self.eval_with(&k, grid.point(i)).0))
    }

    fn sample_pair(&self, grid: &CartesianGrid, t: f64) -> Result<(Vec<Complex64>, Vec<Complex64>), SolitonError> {
        let k = self.kinematics(t)?;
        let both = par::map(grid.len(), |i| self.eval_with(&k, grid.point(i)));
        Ok(both.into_iter().unzip())
    }

    /// Charge state holding the sampled ansatz (no renormalization).
    pub fn charge_state(&self, grid: &CartesianGrid, t: f64) -> Result<ChargeState, SolitonError> {
        Ok(ChargeState { psi: self.sample_on_grid(grid, t)?, m: self.m, q: self.q, chi: self.chi, nl: self.nl })
    }
}

/// `‖iχ∂_tψ − Hψ‖₂` with `H` the integrator's own Hamiltonian and `∂_t` analytic.
pub fn nls_residual(wc: &WaveCorpuscle, t: f64, prop: &Propagator) -> Result<f64, SolitonError> {
    let grid = prop.grid();
    let (psi, dpsi) = wc.sample_pair(&grid, t)?;
    let c = ChargeState { psi, m: wc.m, q: wc.q, chi: wc.chi, nl: wc.nl };
    let h = prop.apply_hamiltonian(&c, None, &wc.external, t);
    let i_chi = Complex64::new(0.0, wc.chi);
    Ok(grid.integrate(|i| (i_chi * dpsi[i] - h[i]).norm_sqr()).sqrt())
}

/// Errors of a numerical evolution against the exact ansatz.
#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub times: Vec<f64>,
    pub l2_errors: Vec<f64>,
    pub center_errors: Vec<f64>,
    pub residuals: Vec<f64>,
    pub sup_l2: f64,
    pub sup_center: f64,
}

/// Evolves the sampled initial state with the split-step integrator over `[0, T]`.
pub fn oracle_compare(wc: &WaveCorpuscle, grid: CartesianGrid, dt: f64, t_end: f64, stride: usize) -> Result<OracleReport, SolitonError> {
    if t_end > wc.t_end() * (1.0 + 1e-12) + 1e-12 {
        return Err(SolitonError::OutOfRange { t: t_end, t_end: wc.t_end() });
    }
    let steps = (t_end / dt).round() as usize;
    if steps == 0 || ((steps as f64 * dt) - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(SolitonError::Setup(format!("T = {t_end} is not a positive multiple of dt = {dt}")));
    }
    let stride = stride.max(1);
    let mut prop = Propagator::new(grid);
    let c0 = wc.charge_state(&grid, 0.0)?;
    let mut sys = SystemState::new(grid, vec![c0], wc.external.clone());
    let mut rep = OracleReport::default();
    let record = |prop: &Propagator, sys: &SystemState, rep: &mut OracleReport| -> Result<(), SolitonError> {
        let t = sys.t;
        let exact = wc.sample_on_grid(&grid, t)?;
        let c = &sys.charges[0];
        let l2 = grid.integrate(|i| (c.psi[i] - exact[i]).norm_sqr()).sqrt();
        let rn = prop.charge_center(c);
        let re = wc.kinematics(t)?.r;
        let ce = ((rn[0] - re[0]).powi(2) + (rn[1] - re[1]).powi(2) + (rn[2] - re[2]).powi(2)).sqrt();
        rep.times.push(t);
        rep.l2_errors.push(l2);
        rep.center_errors.push(ce);
        rep.residuals.push(nls_residual(wc, t, prop)?);
        rep.sup_l2 = rep.sup_l2.max(l2);
        rep.sup_center = rep.sup_center.max(ce);
        Ok(())
    };
    record(&prop, &sys, &mut rep)?;
    for s in 1..=steps {
        prop.step(&mut sys, dt)?;
        sys.t = s as f64 * dt;
        if s % stride == 0 || s == steps {
            record(&prop, &sys, &mut rep)?;
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlin::FormFactorKind;
    use std::sync::Arc;

    fn gauss() -> FormFactorSpec {
        FormFactorSpec::new(FormFactorKind::Gaussian, 1.0).unwrap()
    }

    #[test]
    fn rest_and_free_motion() {
        let wc = build_wave_corpuscle(gauss(), 1.0, 1.0, 1.0, &ExternalField::none(), [0.2, 0.0, 0.0], [0.0; 3], 2.0, 0.1).unwrap();
        let k = wc.kinematics(1.37).unwrap();
        assert_eq!(k.s_p, 0.0);
        assert_eq!(k.r, [0.2, 0.0, 0.0]);
        let v0 = [0.5, -0.25, 1.0];
        let wc = build_wave_corpuscle(gauss(), 2.0, 1.0, 1.0, &ExternalField::none(), [0.0; 3], v0, 2.0, 0.1).unwrap();
        let k = wc.kinematics(2.0).unwrap();
        assert!((k.s_p - 0.5 * 2.0 * dot(v0, v0) * 2.0).abs() < 1e-13);
        assert!((k.r[2] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn constant_force_phase_is_cubic() {
        let (m, q, e0, phi0) = (1.5, -0.8, [0.3, -0.1, 0.2], 0.4);
        let (r0, v0) = ([0.1, 0.2, -0.3], [0.5, 0.0, -0.2]);
        let wc = build_wave_corpuscle(gauss(), m, q, 1.0, &ExternalField::linear(e0, phi0), r0, v0, 3.0, 0.05).unwrap();
        for t in [0.0, 0.05, 1.0, 2.35, 3.0] {
            let k = wc.kinematics(t).unwrap();
            let acc = e0.map(|x| q * x / m);
            let r: Vec<f64> = (0..3).map(|i| r0[i] + v0[i] * t + 0.5 * acc[i] * t * t).collect();
            // ∫₀ᵗ [m|v0 + a τ|²/2 − q(φ0 − E0·(r0 + v0 τ + a τ²/2))] dτ
            let s = 0.5 * m * (dot(v0, v0) * t + dot(v0, acc) * t * t + dot(acc, acc) * t.powi(3) / 3.0)
                - q * (phi0 * t - dot(e0, r0) * t - dot(e0, v0) * t * t / 2.0 - dot(e0, acc) * t.powi(3) / 6.0);
            assert!((k.s_p - s).abs() < 1e-12, "{t}: {} vs {s}", k.s_p);
            for i in 0..3 {
                assert!((k.r[i] - r[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_curved_potential() {
        match build_wave_corpuscle(gauss(), 1.0, 1.0, 1.0, &ExternalField::harmonic(1.0), [0.0; 3], [0.0; 3], 1.0, 0.1) {
            Err(SolitonError::NonAffine { curvature }) => assert!(curvature > 0.1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn analytic_time_derivative_matches_difference() {
        let wc = build_wave_corpuscle(gauss(), 1.0, 1.0, 1.0, &ExternalField::linear([0.4, 0.1, 0.0], 0.0), [0.0; 3], [0.3, 0.0, 0.1], 2.0, 0.01).unwrap();
        let x = [0.5, -0.3, 0.2];
        let h = 1e-4;
        let fd = (wc.psi(1.0 + h, x).unwrap() - wc.psi(1.0 - h, x).unwrap()) / (2.0 * h);
        assert!((fd - wc.dpsi_dt(1.0, x).unwrap()).norm() < 1e-7);
    }

    #[test]
    fn residual_exact_in_linear_field_and_large_in_quadratic() {
        let grid = CartesianGrid::new(64, 8.0).unwrap();
        let prop = Propagator::new(grid);
        let ext = ExternalField::linear([0.5, -0.2, 0.1], 0.3);
        let wc = build_wave_corpuscle(gauss(), 1.0, 1.0, 1.0, &ext, [0.3, 0.0, -0.2], [0.4, 0.2, 0.0], 1.0, 0.01).unwrap();
        for t in [0.0, 0.5, 1.0] {
            let r = nls_residual(&wc, t, &prop).unwrap();
            assert!(r < 1e-8, "t={t}: {r}");
        }
        let mut bent = wc.clone();
        bent.external = ExternalField::harmonic(1.0);
        assert!(nls_residual(&bent, 0.5, &prop).unwrap() > 1e-3);
    }

    #[test]
    fn gauge_shift_moves_only_the_phase() {
        let e0 = [0.2, 0.0, 0.0];
        let c0 = 0.7;
        let plain = ExternalField::linear(e0, 0.0);
        let shifted = ExternalField::linear(e0, c0);
        let a = build_wave_corpuscle(gauss(), 1.0, 2.0, 1.0, &plain, [0.0; 3], [0.1, 0.0, 0.0], 2.0, 0.05).unwrap();
        let b = build_wave_corpuscle(gauss(), 1.0, 2.0, 1.0, &shifted, [0.0; 3], [0.1, 0.0, 0.0], 2.0, 0.05).unwrap();
        for t in [0.3, 1.0, 2.0] {
            let (ka, kb) = (a.kinematics(t).unwrap(), b.kinematics(t).unwrap());
            assert!((kb.s_p - ka.s_p + 2.0 * c0 * t).abs() < 1e-12);
            let x = [0.4, 0.1, -0.3];
            assert!((a.psi(t, x).unwrap().norm() - b.psi(t, x).unwrap().norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn current_of_ansatz_is_trajectory_velocity() {
        let grid = CartesianGrid::new(32, 8.0).unwrap();
        let prop = Propagator::new(grid);
        let wc = build_wave_corpuscle(gauss(), 2.0, 1.0, 1.0, &ExternalField::linear([0.3, 0.2, 0.0], 0.0), [0.0; 3], [0.2, 0.0, -0.1], 2.0, 0.01).unwrap();
        for t in [0.0, 1.0, 2.0] {
            let c = wc.charge_state(&grid, t).unwrap();
            let (v, p) = prop.velocity_and_momentum(&c);
            let k = wc.kinematics(t).unwrap();
            for i in 0..3 {
                assert!((v[i] - k.v[i]).abs() < 1e-9 && (p[i] - 2.0 * k.v[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn time_dependent_uniform_field() {
        let ext = ExternalField::new(
            Some(Arc::new(|t: f64, x: Vec3| -0.1 * t * x[0])),
            Some(Arc::new(|t: f64, _| [0.1 * t, 0.0, 0.0])),
            None,
            false,
        )
        .unwrap();
        let wc = build_wave_corpuscle(gauss(), 1.0, 1.0, 1.0, &ext, [0.0; 3], [0.0; 3], 2.0, 0.01).unwrap();
        // x(t) = 0.1 t³ / 6
        assert!((wc.kinematics(2.0).unwrap().r[0] - 0.8 / 6.0).abs() < 1e-12);
    }
}
