//! Radial nonlinear eigenvalue problem `ωΨ + ½∇²Ψ − UΨ − ½G′(|Ψ|²)Ψ = 0`, `‖Ψ‖ = 1`,
//! with `U = −1/r` by default and `G` the logarithmic nonlinearity of parameter κ.
//!
//! States are stored as `u = √(4π) rΨ` on the nodes of a [`RadialGrid`] with
//! `u(0) = u(r_max) = 0`, so that `Σ Wᵢuᵢ² = ‖Ψ‖²` with lumped weights
//! `Wᵢ = (hᵢ₋₁ + hᵢ)/2`. The kinetic form is `Σ ½(Δu)²/h`.

use crate::fields::{poisson_radial, FieldError, RadialGrid};
use crate::nonlin::{NonlinError, Nonlinearity, NonlinearityKind, Xi};
use crate::{par, tridiag};
use std::f64::consts::PI;
use thiserror::Error;

/// Floor of the scaled log argument, `ln(a³s/C_g²) ≥ −690` (s ≈ 1e−300).
pub const RADIAL_XI_NUM: f64 = -690.0;

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("r_max = {r_max} too small: boundary amplitude {amplitude:e} exceeds 1e-6")]
    BoundaryAmplitude { r_max: f64, amplitude: f64 },
    #[error("level {n}: converged state has {found} nodes, expected {expected} (level crossing)")]
    NodeCount { n: usize, found: usize, expected: usize },
    #[error("Newton continuation failed at kappa = {kappa}: residual {residual:e}")]
    Divergence { kappa: f64, residual: f64 },
    #[error("gap scan refused: delta = {delta} below required {required}")]
    DeltaTooSmall { delta: f64, required: f64 },
    #[error("decay fit window has {decades:.1} decades, need 4")]
    DecayWindow { decades: f64 },
    #[error("scale mismatch: {0}")]
    ScaleMismatch(String),
    #[error("SCF did not converge after {iterations} iterations (last change {change:e})")]
    ScfFailure { iterations: usize, change: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Nonlin(#[from] NonlinError),
}

/// Discrete operator data for one grid.
#[derive(Debug, Clone)]
pub struct RadialOperator {
    r: Vec<f64>,
    /// `hᵢ = rᵢ₊₁ − rᵢ`
    h: Vec<f64>,
    /// lumped mass (zero at the Dirichlet ends)
    w: Vec<f64>,
}

impl RadialOperator {
    pub fn new(grid: &RadialGrid) -> Result<Self, EigenError> {
        let r = grid.r().to_vec();
        if r[0] != 0.0 {
            return Err(EigenError::Config("radial grid must start at r = 0".into()));
        }
        let h: Vec<f64> = r.windows(2).map(|p| p[1] - p[0]).collect();
        let n = r.len();
        let mut w = vec![0.0; n];
        for i in 1..n - 1 {
            w[i] = 0.5 * (h[i - 1] + h[i]);
        }
        Ok(Self { r, h, w })
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Stiffness `(Au)ᵢ` for interior `i`.
    pub fn apply_a(&self, u: &[f64]) -> Vec<f64> {
        let n = self.r.len();
        let mut out = vec![0.0; n];
        for i in 1..n - 1 {
            out[i] = 0.5 * ((u[i] - u[i - 1]) / self.h[i - 1] + (u[i] - u[i + 1]) / self.h[i]);
        }
        out
    }

    /// `Σ ½(Δu)²/h`, the discrete `½∫|∇Ψ|²`.
    pub fn kinetic(&self, u: &[f64]) -> f64 {
        self.h.iter().enumerate().map(|(i, h)| 0.5 * (u[i + 1] - u[i]).powi(2) / h).sum()
    }

    pub fn norm_sq(&self, u: &[f64]) -> f64 {
        self.w.iter().zip(u).map(|(w, v)| w * v * v).sum()
    }

    pub fn normalize(&self, u: &mut [f64]) {
        let s = self.norm_sq(u).sqrt();
        u.iter_mut().for_each(|v| *v /= s);
    }

    /// `|Ψ|² = u²/(4πr²)`; the origin value is extrapolated from the first node.
    pub fn density(&self, u: &[f64]) -> Vec<f64> {
        let mut s: Vec<f64> = self.r.iter().zip(u).map(|(r, v)| if *r > 0.0 { v * v / (4.0 * PI * r * r) } else { 0.0 }).collect();
        s[0] = s[1];
        s
    }

    /// `Ψ = u/(√(4π) r)`.
    pub fn psi(&self, u: &[f64]) -> Vec<f64> {
        let c = (4.0 * PI).sqrt();
        let mut p: Vec<f64> = self.r.iter().zip(u).map(|(r, v)| if *r > 0.0 { v / (c * r) } else { 0.0 }).collect();
        // Ψ(0) by linear extrapolation of the first two interior values
        let (r1, r2) = (self.r[1], self.r[2]);
        p[0] = p[1] + (p[1] - p[2]) * r1 / (r2 - r1);
        p
    }

    /// Symmetric tridiagonal form `W^{−1/2}(A + W·diag(v))W^{−1/2}` on interior nodes.
    fn symmetric(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.r.len();
        let d: Vec<f64> = (1..n - 1).map(|i| 0.5 * (1.0 / self.h[i - 1] + 1.0 / self.h[i]) / self.w[i] + v[i]).collect();
        let e: Vec<f64> = (1..n - 2).map(|i| -0.5 / self.h[i] / (self.w[i] * self.w[i + 1]).sqrt()).collect();
        (d, e)
    }

    /// Tridiagonal `A + W·diag(v)` on interior nodes as (lo, diag, up).
    fn unsymmetric(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.r.len();
        let d: Vec<f64> = (1..n - 1).map(|i| 0.5 * (1.0 / self.h[i - 1] + 1.0 / self.h[i]) + self.w[i] * v[i]).collect();
        let off: Vec<f64> = (1..n - 2).map(|i| -0.5 / self.h[i]).collect();
        (off.clone(), d, off)
    }

    /// Lowest `count` eigenpairs of `−½u″ + v u` (Rayleigh-refined), `u` W-normalized.
    pub fn lowest_eigenpairs(&self, v: &[f64], count: usize) -> Vec<(f64, Vec<f64>)> {
        let (d, e) = self.symmetric(v);
        let n = self.r.len();
        (0..count)
            .map(|k| {
                let lam = tridiag::bisect_eigenvalue(&d, &e, k, 1e-13);
                let y = tridiag::inverse_iteration(&d, &e, lam);
                let mut u = vec![0.0; n];
                for i in 1..n - 1 {
                    u[i] = y[i - 1] / self.w[i].sqrt();
                }
                let lam = self.rayleigh(&u, v);
                (lam, u)
            })
            .collect()
    }

    /// `⟨u, (A + Wv)u⟩ / ⟨u, Wu⟩`.
    pub fn rayleigh(&self, u: &[f64], v: &[f64]) -> f64 {
        let pot: f64 = self.w.iter().zip(u).zip(v).map(|((w, x), p)| w * p * x * x).sum();
        (self.kinetic(u) + pot) / self.norm_sq(u)
    }

    /// `(ωu − Hu)` per node, `H = −½∇² + v`; zero at the ends.
    pub fn residual_vector(&self, u: &[f64], v: &[f64], omega: f64) -> Vec<f64> {
        let au = self.apply_a(u);
        let n = self.r.len();
        let mut out = vec![0.0; n];
        for i in 1..n - 1 {
            out[i] = omega * u[i] - au[i] / self.w[i] - v[i] * u[i];
        }
        out
    }

    /// `(Σ W ρ²)^{1/2}`, the L² norm of the residual function in three dimensions.
    pub fn residual_norm(&self, u: &[f64], v: &[f64], omega: f64) -> f64 {
        self.norm_sq(&self.residual_vector(u, v, omega)).sqrt()
    }
}

/// Sign changes of `u` over interior nodes, ignoring entries below `1e−8·max|u|`.
pub fn node_count(u: &[f64]) -> usize {
    let amax = u.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut last = 0.0f64;
    let mut count = 0;
    for &v in u {
        if v.abs() <= 1e-8 * amax {
            continue;
        }
        if last != 0.0 && v.signum() != last.signum() {
            count += 1;
        }
        last = v;
    }
    count
}

/// Coulomb potential `−Z/r` on the nodes (zero at the origin, which carries no weight).
pub fn coulomb_potential(r: &[f64], z: f64) -> Vec<f64> {
    r.iter().map(|&x| if x > 0.0 { -z / x } else { 0.0 }).collect()
}

/// Nonlinear term of the radial problem: `None` is the linear (κ = 0) case.
#[derive(Debug, Clone, Copy)]
pub struct RadialNonlinearity(pub Option<Nonlinearity>);

impl RadialNonlinearity {
    pub fn log(kappa: f64, xi: Xi) -> Result<Self, EigenError> {
        if kappa == 0.0 {
            return Ok(Self(None));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(EigenError::Config(format!("kappa must be >= 0, got {kappa}")));
        }
        Ok(Self(Some(Nonlinearity::log_kappa(kappa, xi)?)))
    }

    /// `½G′(s)` per node.
    fn half_gprime(&self, s: &[f64]) -> Vec<f64> {
        match &self.0 {
            None => vec![0.0; s.len()],
            Some(nl) => s.iter().map(|&x| 0.5 * nl.gprime_floored(x, RADIAL_XI_NUM)).collect(),
        }
    }

    /// `½(G′ + 2sG″)` per node.
    fn half_dg(&self, s: &[f64]) -> Vec<f64> {
        match &self.0 {
            None => vec![0.0; s.len()],
            Some(nl) => s.iter().map(|&x| 0.5 * nl.dg_real(x, RADIAL_XI_NUM)).collect(),
        }
    }

    fn big_g(&self, s: f64) -> f64 {
        self.0.as_ref().map_or(0.0, |nl| nl.antiderivative(s))
    }
}

/// `V = U + ½G′(|Ψ|²)` for the state `u`.
pub fn total_potential(op: &RadialOperator, u: &[f64], pot: &[f64], nl: &RadialNonlinearity) -> Vec<f64> {
    let s = op.density(u);
    let g = nl.half_gprime(&s);
    pot.iter().zip(&g).map(|(a, b)| a + b).collect()
}

/// Energy pieces of a state.
#[derive(Debug, Clone, Copy)]
pub struct EnergyParts {
    /// `½∫|∇Ψ|²`
    pub kinetic: f64,
    /// `∫U|Ψ|²`
    pub potential: f64,
    /// `½∫G(|Ψ|²)`
    pub half_g: f64,
    /// `½∫G′(|Ψ|²)|Ψ|²`
    pub half_gprime_s: f64,
}

impl EnergyParts {
    pub fn energy(&self) -> f64 {
        self.kinetic + self.potential + self.half_g
    }

    /// Lagrange multiplier `ω = ½∫|∇Ψ|² + ∫U|Ψ|² + ½∫G′|Ψ|²` for a normalized state.
    pub fn omega(&self) -> f64 {
        self.kinetic + self.potential + self.half_gprime_s
    }
}

pub fn energy_parts(op: &RadialOperator, u: &[f64], pot: &[f64], nl: &RadialNonlinearity) -> EnergyParts {
    let s = op.density(u);
    let w = op.weights();
    let hg = nl.half_gprime(&s);
    let (mut p, mut g, mut gs) = (0.0, 0.0, 0.0);
    for i in 1..u.len() - 1 {
        let u2 = u[i] * u[i];
        p += w[i] * pot[i] * u2;
        g += w[i] * 4.0 * PI * op.r[i] * op.r[i] * nl.big_g(s[i]);
        gs += w[i] * hg[i] * u2;
    }
    EnergyParts { kinetic: op.kinetic(u), potential: p, half_g: 0.5 * g, half_gprime_s: gs }
}

/// `∫[½|∇Ψ|² − |Ψ|²/r + ½G_{κ,ξ}(|Ψ|²)]` for a state `u` on `grid`.
pub fn coulomb_energy_functional(grid: &RadialGrid, u: &[f64], kappa: f64, xi: Xi) -> Result<f64, EigenError> {
    let op = RadialOperator::new(grid)?;
    let nl = RadialNonlinearity::log(kappa, xi)?;
    Ok(energy_parts(&op, u, &coulomb_potential(op.r(), 1.0), &nl).energy())
}

/// Configuration of one radial solve.
#[derive(Debug, Clone)]
pub struct EigenConfig {
    pub kappa: f64,
    pub xi: Xi,
    pub n: usize,
    pub grid: RadialGrid,
    pub tol_residual: f64,
    pub tol_omega: f64,
    pub max_iter: usize,
    /// Fraction of the fresh state blended in per gradient-flow step.
    pub mixing: f64,
}

impl EigenConfig {
    /// Log-stretched grid with `10⁴` nodes reaching `max(30n² + 30, 12/κ)`.
    pub fn new(kappa: f64, n: usize) -> Result<Self, EigenError> {
        let mut r_max = 30.0 * (n * n) as f64 + 30.0;
        if kappa > 0.0 {
            r_max = r_max.max(12.0 / kappa);
        }
        Ok(Self {
            kappa,
            xi: Xi::NegInfinity,
            n,
            grid: RadialGrid::log_stretched(10_001, 0.01, r_max)?,
            tol_residual: 1e-8,
            tol_omega: 1e-12,
            max_iter: 500,
            mixing: 1.0,
        })
    }

    pub fn with_xi(mut self, xi: Xi) -> Self {
        self.xi = xi;
        self
    }

    pub fn with_grid(mut self, grid: RadialGrid) -> Self {
        self.grid = grid;
        self
    }

    fn validate(&self) -> Result<(), EigenError> {
        if !(self.kappa >= 0.0 && self.kappa <= 1.0) {
            return Err(EigenError::Config(format!("kappa must lie in [0, 1], got {}", self.kappa)));
        }
        if self.n == 0 {
            return Err(EigenError::Config("level index n must be >= 1".into()));
        }
        if self.kappa > 0.0 && self.grid.r_max() < 10.0 / self.kappa * (1.0 - 1e-12) {
            return Err(EigenError::Config(format!(
                "r_max = {} must be at least 10/kappa = {}",
                self.grid.r_max(),
                10.0 / self.kappa
            )));
        }
        if !(self.mixing > 0.0 && self.mixing <= 1.0) {
            return Err(EigenError::Config(format!("mixing must lie in (0, 1], got {}", self.mixing)));
        }
        Ok(())
    }
}

/// A converged (or flagged) radial state.
#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub n: usize,
    pub kappa: f64,
    pub xi: Xi,
    pub r: Vec<f64>,
    /// `u = √(4π) rΨ`
    pub u: Vec<f64>,
    pub omega: f64,
    /// Energy functional value.
    pub energy: f64,
    pub residual: f64,
    pub node_count: usize,
    /// Exponential tail rate from [`decay_fit`], when the tail window is long enough.
    pub decay_rate: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl EigenSolution {
    /// `Ψ(r)` on the nodes.
    pub fn psi(&self) -> Vec<f64> {
        let op = RadialOperator { r: self.r.clone(), h: self.r.windows(2).map(|p| p[1] - p[0]).collect(), w: Vec::new() };
        op.psi(&self.u)
    }

    pub fn grid(&self) -> RadialGrid {
        RadialGrid::from_nodes(self.r.clone()).expect("solution nodes are a valid grid")
    }
}

fn finish(op: &RadialOperator, mut u: Vec<f64>, pot: &[f64], nl: &RadialNonlinearity, n: usize, kappa: f64, xi: Xi, iterations: usize, tol: f64) -> EigenSolution {
    op.normalize(&mut u);
    let parts = energy_parts(op, &u, pot, nl);
    let omega = parts.omega();
    let v = total_potential(op, &u, pot, nl);
    let residual = op.residual_norm(&u, &v, omega);
    let mut sol = EigenSolution {
        n,
        kappa,
        xi,
        r: op.r.clone(),
        node_count: node_count(&u),
        u,
        omega,
        energy: parts.energy(),
        residual,
        decay_rate: None,
        iterations,
        converged: residual <= tol,
    };
    sol.decay_rate = decay_fit(&sol).ok().map(|f| f.exp_rate);
    sol
}

fn boundary_amplitude(u: &[f64]) -> f64 {
    let amax = u.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let n = u.len();
    u[n - 2].abs() / amax
}

/// Linear Coulomb levels `−½u″ − u/r = ωu`, lowest `n_max` radial states.
pub fn linear_hydrogen_spectrum(grid: &RadialGrid, n_max: usize) -> Result<Vec<EigenSolution>, EigenError> {
    if n_max == 0 || n_max > 6 {
        return Err(EigenError::Config(format!("n_max must lie in 1..=6, got {n_max}")));
    }
    let op = RadialOperator::new(grid)?;
    let pot = coulomb_potential(op.r(), 1.0);
    let pairs = op.lowest_eigenpairs(&pot, n_max);
    let nl = RadialNonlinearity(None);
    let mut out = Vec::with_capacity(n_max);
    for (k, (_, u)) in pairs.into_iter().enumerate() {
        let amp = boundary_amplitude(&u);
        if amp > 1e-6 {
            return Err(EigenError::BoundaryAmplitude { r_max: grid.r_max(), amplitude: amp });
        }
        out.push(finish(&op, u, &pot, &nl, k + 1, 0.0, Xi::NegInfinity, 0, f64::INFINITY));
    }
    Ok(out)
}

/// Normalized gradient flow from `u0` for the lowest state of `−½∇² + U + ½G′`.
///
/// Each step solves `(I + τ(H[uₖ] − ωₖ))ũ = uₖ` with the nonlinear potential frozen at
/// `uₖ`, then renormalizes. The step `τ = 1/(ωₖ − σ)` places the implicit shift `σ`
/// just below the lowest eigenvalue of the frozen operator, so the flow cannot
/// overshoot into excited states.
#[allow(clippy::too_many_arguments)]
pub fn gradient_flow(
    op: &RadialOperator,
    pot: &[f64],
    nl: &RadialNonlinearity,
    u0: Vec<f64>,
    tol: f64,
    max_iter: usize,
    mixing: f64,
) -> (Vec<f64>, usize) {
    let n = op.len();
    let mut u = u0;
    op.normalize(&mut u);
    for it in 0..max_iter {
        let v = total_potential(op, &u, pot, nl);
        let omega = op.rayleigh(&u, &v);
        if op.residual_norm(&u, &v, omega) <= tol {
            return (u, it);
        }
        let (d, e) = op.symmetric(&v);
        let lam0 = tridiag::bisect_eigenvalue(&d, &e, 0, 1e-9);
        let lam1 = tridiag::bisect_eigenvalue(&d, &e, 1, 1e-9);
        let sigma = lam0 - 1e-3 * (lam1 - lam0);
        let (lo, dg, up) = op.unsymmetric(&v.iter().map(|x| x - sigma).collect::<Vec<_>>());
        let rhs: Vec<f64> = (1..n - 1).map(|i| op.w[i] * u[i]).collect();
        let Some(x) = tridiag::solve(&lo, &dg, &up, &rhs) else {
            return (u, it);
        };
        let mut next = vec![0.0; n];
        next[1..n - 1].copy_from_slice(&x);
        op.normalize(&mut next);
        if next.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
            next.iter_mut().for_each(|x| *x = -*x);
        }
        if mixing < 1.0 {
            next.iter_mut().zip(&u).for_each(|(a, b)| *a = mixing * *a + (1.0 - mixing) * b);
            op.normalize(&mut next);
        }
        u = next;
    }
    (u, max_iter)
}

/// Damped Newton on `{Hu − ωu = 0, ‖u‖ = 1}` with the bordered tridiagonal Jacobian.
/// Returns the iterate and whether the residual reached `tol`.
pub fn newton_polish(op: &RadialOperator, pot: &[f64], nl: &RadialNonlinearity, u0: Vec<f64>, tol: f64, max_iter: usize) -> (Vec<f64>, f64, bool) {
    let n = op.len();
    let mut u = u0;
    op.normalize(&mut u);
    let mut omega = op.rayleigh(&u, &total_potential(op, &u, pot, nl));
    // F = (A + W(V − ω))u, g = ½(1 − ‖u‖²)
    let eval = |u: &[f64], omega: f64| -> (Vec<f64>, f64) {
        let v = total_potential(op, u, pot, nl);
        let au = op.apply_a(u);
        let f: Vec<f64> = (1..n - 1).map(|i| au[i] + op.w[i] * (v[i] - omega) * u[i]).collect();
        (f, 0.5 * (1.0 - op.norm_sq(u)))
    };
    let merit = |f: &[f64], g: f64| -> f64 { (1..n - 1).map(|i| f[i - 1] * f[i - 1] / op.w[i]).sum::<f64>() + g * g };
    for _ in 0..max_iter {
        let v = total_potential(op, &u, pot, nl);
        let res = op.residual_norm(&u, &v, op.rayleigh(&u, &v));
        if res <= tol {
            return (u, omega, true);
        }
        let (f, g) = eval(&u, omega);
        let m0 = merit(&f, g);
        let s = op.density(&u);
        let dg = nl.half_dg(&s);
        let jac: Vec<f64> = (0..n).map(|i| pot[i] + dg[i] - omega).collect();
        let (lo, d, up) = op.unsymmetric(&jac);
        let wu: Vec<f64> = (1..n - 1).map(|i| op.w[i] * u[i]).collect();
        let neg_f: Vec<f64> = f.iter().map(|x| -x).collect();
        let (Some(x1), Some(x2)) = (tridiag::solve(&lo, &d, &up, &neg_f), tridiag::solve(&lo, &d, &up, &wu)) else {
            return (u, omega, false);
        };
        let den: f64 = wu.iter().zip(&x2).map(|(a, b)| a * b).sum();
        let dom = -(g + wu.iter().zip(&x1).map(|(a, b)| a * b).sum::<f64>()) / den;
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-4 {
            let mut trial = u.clone();
            for i in 1..n - 1 {
                trial[i] += lambda * (x1[i - 1] + dom * x2[i - 1]);
            }
            let tom = omega + lambda * dom;
            let (ft, gt) = eval(&trial, tom);
            if merit(&ft, gt) < (1.0 - 1e-4 * lambda) * m0 || m0 < 1e-28 {
                u = trial;
                omega = tom;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return (u, omega, false);
        }
    }
    let v = total_potential(op, &u, pot, nl);
    let ok = op.residual_norm(&u, &v, op.rayleigh(&u, &v)) <= tol;
    (u, omega, ok)
}

/// Gradient flow to a loose tolerance, then Newton to `tol`.
fn relax(op: &RadialOperator, pot: &[f64], nl: &RadialNonlinearity, u0: Vec<f64>, tol: f64, max_iter: usize, mixing: f64) -> (Vec<f64>, usize) {
    let (u, it) = gradient_flow(op, pot, nl, u0, tol.max(1e-6), max_iter, mixing);
    let (u, _, _) = newton_polish(op, pot, nl, u, tol, 30);
    (u, it)
}

/// Ground state of the Coulomb problem by normalized gradient flow from `Ψ₁⁰`.
pub fn solve_ground(config: &EigenConfig) -> Result<EigenSolution, EigenError> {
    config.validate()?;
    let op = RadialOperator::new(&config.grid)?;
    let pot = coulomb_potential(op.r(), 1.0);
    let nl = RadialNonlinearity::log(config.kappa, config.xi)?;
    let u0 = op.lowest_eigenpairs(&pot, 1).remove(0).1;
    let (u, it) = relax(&op, &pot, &nl, u0, config.tol_residual, config.max_iter, config.mixing);
    Ok(finish(&op, u, &pot, &nl, 1, config.kappa, config.xi, it, config.tol_residual))
}

/// `n`-th radial state by κ-continuation from the linear eigenfunction `Ψₙ⁰`.
pub fn solve_excited(config: &EigenConfig) -> Result<EigenSolution, EigenError> {
    config.validate()?;
    let n = config.n;
    let op = RadialOperator::new(&config.grid)?;
    let pot = coulomb_potential(op.r(), 1.0);
    let mut u = op.lowest_eigenpairs(&pot, n).remove(n - 1).1;
    let amp = boundary_amplitude(&u);
    if amp > 1e-6 {
        return Err(EigenError::BoundaryAmplitude { r_max: config.grid.r_max(), amplitude: amp });
    }
    let target = config.kappa;
    let mut iterations = 0;
    if target > 0.0 {
        let mut kappa_done = 0.0;
        let mut step_kappa = target / 8.0;
        while kappa_done < target {
            let next = (kappa_done + step_kappa).min(target);
            let next = if target - next < 1e-12 * target { target } else { next };
            let nl = RadialNonlinearity::log(next, config.xi)?;
            let tol = if next == target { config.tol_residual } else { config.tol_residual.max(1e-6) };
            let (cand, _, ok) = newton_polish(&op, &pot, &nl, u.clone(), tol, 40);
            iterations += 1;
            if ok && node_count(&cand) == n - 1 {
                u = cand;
                kappa_done = next;
                step_kappa *= 2.0;
            } else {
                step_kappa *= 0.5;
                if step_kappa < target * 1e-4 {
                    let v = total_potential(&op, &cand, &pot, &nl);
                    return Err(EigenError::Divergence { kappa: next, residual: op.residual_norm(&cand, &v, op.rayleigh(&cand, &v)) });
                }
            }
        }
    }
    let nl = RadialNonlinearity::log(target, config.xi)?;
    let sol = finish(&op, u, &pot, &nl, n, target, config.xi, iterations, config.tol_residual);
    if sol.node_count != n - 1 {
        return Err(EigenError::NodeCount { n, found: sol.node_count, expected: n - 1 });
    }
    Ok(sol)
}

/// `solve_ground` for `n = 1`, continuation otherwise.
pub fn solve_level(config: &EigenConfig) -> Result<EigenSolution, EigenError> {
    if config.n == 1 {
        solve_ground(config)
    } else {
        solve_excited(config)
    }
}

/// Residual of a state and the two-sided check of `E = ω + κ²/2`.
#[derive(Debug, Clone, Copy)]
pub struct ResidualReport {
    pub residual: f64,
    pub omega: f64,
    pub energy: f64,
    /// `|E − ω − κ²/2|`
    pub energy_offset_error: f64,
}

/// `‖ωΨ + ½∇²Ψ + Ψ/r − ½G′(|Ψ|²)Ψ‖₂` with `ω` from the state itself.
pub fn eigen_residual(grid: &RadialGrid, u: &[f64], kappa: f64, xi: Xi) -> Result<ResidualReport, EigenError> {
    let op = RadialOperator::new(grid)?;
    let pot = coulomb_potential(op.r(), 1.0);
    let nl = RadialNonlinearity::log(kappa, xi)?;
    let parts = energy_parts(&op, u, &pot, &nl);
    let omega = parts.omega();
    let v = total_potential(&op, u, &pot, &nl);
    let energy = parts.energy();
    Ok(ResidualReport {
        residual: op.residual_norm(u, &v, omega),
        omega,
        energy,
        energy_offset_error: (energy - omega - 0.5 * kappa * kappa).abs(),
    })
}

/// Planck–Einstein deviation of converged solutions, with `(ω, E)` taken from each solution.
pub fn planck_einstein_check(solutions: &[EigenSolution], chi: f64, m: f64, a: f64) -> f64 {
    let levels: Vec<(f64, f64)> = solutions.iter().map(|s| (s.omega, s.energy)).collect();
    planck_einstein_deviation(&levels, chi, m, a)
}

/// Largest of `|χ(ωᵢ−ωⱼ) − (E₀ᵢ−E₀ⱼ)|` over pairs and `|E₀ᵢ − χωᵢ − χ²/(2a²m)|` over levels.
pub fn planck_einstein_deviation(levels: &[(f64, f64)], chi: f64, m: f64, a: f64) -> f64 {
    let offset = chi * chi / (2.0 * a * a * m);
    let mut worst: f64 = 0.0;
    for (i, &(wi, ei)) in levels.iter().enumerate() {
        worst = worst.max((ei - chi * wi - offset).abs());
        for &(wj, ej) in &levels[i + 1..] {
            worst = worst.max((chi * (wi - wj) - (ei - ej)).abs());
        }
    }
    worst
}

/// `(ω, E)` of each solution, both re-evaluated with the nonlinearity `nl`.
pub fn levels_with(solutions: &[EigenSolution], nl: Option<Nonlinearity>) -> Result<Vec<(f64, f64)>, EigenError> {
    solutions
        .iter()
        .map(|s| {
            let op = RadialOperator::new(&s.grid())?;
            let pot = coulomb_potential(op.r(), 1.0);
            let p = energy_parts(&op, &s.u, &pot, &RadialNonlinearity(nl));
            Ok((p.omega(), p.energy()))
        })
        .collect()
}

/// One point of a gap scan.
#[derive(Debug, Clone, Copy)]
pub struct GapPoint {
    pub omega: f64,
    pub floor_residual: f64,
}

/// Deterministic start states for the fixed-ω search: linear levels 1–3, one mixture,
/// and a broad exponential.
fn gap_starts(op: &RadialOperator, pot: &[f64]) -> Vec<Vec<f64>> {
    let pairs = op.lowest_eigenpairs(pot, 3);
    let mut starts: Vec<Vec<f64>> = pairs.iter().map(|(_, u)| u.clone()).collect();
    let mut mix: Vec<f64> = pairs[1].1.iter().zip(&pairs[2].1).map(|(a, b)| a + b).collect();
    op.normalize(&mut mix);
    starts.push(mix);
    let mut broad: Vec<f64> = op.r.iter().map(|&r| r * (-0.25 * r).exp()).collect();
    let n = broad.len();
    broad[n - 1] = 0.0;
    op.normalize(&mut broad);
    starts.push(broad);
    starts
}

/// Smallest residual `‖ωΨ − H[Ψ]Ψ‖` reachable at fixed ω from one start, by shifted
/// inverse iteration on the frozen operator.
fn fixed_omega_floor(op: &RadialOperator, pot: &[f64], nl: &RadialNonlinearity, omega: f64, start: &[f64], iters: usize) -> f64 {
    let n = op.len();
    let mut u = start.to_vec();
    op.normalize(&mut u);
    let mut best = f64::INFINITY;
    for _ in 0..=iters {
        let v = total_potential(op, &u, pot, nl);
        best = best.min(op.residual_norm(&u, &v, omega));
        let (lo, d, up) = op.unsymmetric(&v.iter().map(|x| x - omega).collect::<Vec<_>>());
        let rhs: Vec<f64> = (1..n - 1).map(|i| op.w[i] * u[i]).collect();
        let Some(x) = tridiag::solve(&lo, &d, &up, &rhs) else { break };
        let mut next = vec![0.0; n];
        next[1..n - 1].copy_from_slice(&x);
        let s = op.norm_sq(&next).sqrt();
        if !s.is_finite() || s == 0.0 {
            break;
        }
        next.iter_mut().for_each(|a| *a /= s);
        u = next;
    }
    best
}

/// Residual floor at each ω of `omegas` inside the gap between levels `n` and `n+1`.
///
/// Refuses when `δ < C₄κ²(1 + |ln κ|)` or when an ω lies outside
/// `[ω₀ₙ + δ, ω₀,ₙ₊₁ − δ]`. `extra_starts` are appended to the five built-in starts.
pub fn gap_scan(config: &EigenConfig, omegas: &[f64], delta: f64, c4: f64, extra_starts: &[Vec<f64>]) -> Result<Vec<GapPoint>, EigenError> {
    config.validate()?;
    let k = config.kappa;
    let required = if k > 0.0 { c4 * k * k * (1.0 + k.ln().abs()) } else { 0.0 };
    if delta < required {
        return Err(EigenError::DeltaTooSmall { delta, required });
    }
    let n = config.n as f64;
    let (lo, hi) = (-0.5 / (n * n) + delta, -0.5 / ((n + 1.0) * (n + 1.0)) - delta);
    if let Some(w) = omegas.iter().find(|&&w| w < lo || w > hi) {
        return Err(EigenError::Config(format!("omega = {w} outside the scan window [{lo}, {hi}]")));
    }
    gap_scan_unchecked(config, omegas, extra_starts)
}

/// [`gap_scan`] without the window gate (used for control points at actual eigenvalues).
pub fn gap_scan_unchecked(config: &EigenConfig, omegas: &[f64], extra_starts: &[Vec<f64>]) -> Result<Vec<GapPoint>, EigenError> {
    let op = RadialOperator::new(&config.grid)?;
    let pot = coulomb_potential(op.r(), 1.0);
    let nl = RadialNonlinearity::log(config.kappa, config.xi)?;
    let mut starts = gap_starts(&op, &pot);
    starts.extend(extra_starts.iter().cloned());
    Ok(par::map(omegas.len(), |j| {
        let omega = omegas[j];
        let floor = starts.iter().map(|s| fixed_omega_floor(&op, &pot, &nl, omega, s, 25)).fold(f64::INFINITY, f64::min);
        GapPoint { omega, floor_residual: floor }
    }))
}

/// Least-squares fits of `ln|Ψ|` on the far tail window.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    /// `p` in `ln|Ψ| ≈ c − p r`
    pub exp_rate: f64,
    pub exp_rms: f64,
    /// `γ` in `ln|Ψ| ≈ c − γ r²`
    pub gauss_coeff: f64,
    pub gauss_rms: f64,
    /// `(p, γ)` of the joint fit `c − p r − γ r²`
    pub joint: (f64, f64),
    pub window: (f64, f64),
    pub points: usize,
}

impl DecayFit {
    /// Whether the `r²` term of the joint fit carries more than 1% of the log drop over the window.
    pub fn superexponential(&self) -> bool {
        let (p, g) = self.joint;
        let (r0, r1) = self.window;
        let quad = g * (r1 * r1 - r0 * r0);
        quad > 0.01 * (p * (r1 - r0) + quad).abs()
    }
}

fn lstsq(cols: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let k = cols.len();
    let mut m = vec![vec![0.0; k + 1]; k];
    for a in 0..k {
        for b in 0..k {
            m[a][b] = cols[a].iter().zip(&cols[b]).map(|(x, z)| x * z).sum();
        }
        m[a][k] = cols[a].iter().zip(y).map(|(x, z)| x * z).sum();
    }
    for c in 0..k {
        let p = (c..k).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        for rr in 0..k {
            if rr != c {
                let f = m[rr][c] / m[c][c];
                for cc in c..=k {
                    m[rr][cc] -= f * m[c][cc];
                }
            }
        }
    }
    let coef: Vec<f64> = (0..k).map(|c| m[c][k] / m[c][c]).collect();
    let rms = (y
        .iter()
        .enumerate()
        .map(|(i, yi)| (yi - (0..k).map(|c| coef[c] * cols[c][i]).sum::<f64>()).powi(2))
        .sum::<f64>()
        / y.len() as f64)
        .sqrt();
    (coef, rms)
}

/// Fits on the window `|Ψ|/max|Ψ| ∈ [1e−12, 1e−4]`, `r < 0.9 r_max`, beyond the peak.
pub fn decay_fit(sol: &EigenSolution) -> Result<DecayFit, EigenError> {
    let psi = sol.psi();
    let amax = psi.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let r_cut = 0.9 * sol.r.last().unwrap();
    // last node above the upper window edge, so only the monotone tail is used
    let start = psi.iter().rposition(|v| v.abs() > 1e-4 * amax).unwrap_or(0);
    let idx: Vec<usize> = (start..psi.len())
        .filter(|&i| {
            let rel = psi[i].abs() / amax;
            (1e-12..=1e-4).contains(&rel) && sol.r[i] < r_cut
        })
        .collect();
    if idx.len() < 8 {
        return Err(EigenError::DecayWindow { decades: 0.0 });
    }
    let ys: Vec<f64> = idx.iter().map(|&i| psi[i].abs().ln()).collect();
    let decades = (ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ys.iter().cloned().fold(f64::INFINITY, f64::min)) / std::f64::consts::LN_10;
    if decades < 4.0 - 1e-9 {
        return Err(EigenError::DecayWindow { decades });
    }
    let rs: Vec<f64> = idx.iter().map(|&i| sol.r[i]).collect();
    let ones = vec![1.0; rs.len()];
    let r2: Vec<f64> = rs.iter().map(|r| r * r).collect();
    let (ce, exp_rms) = lstsq(&[ones.clone(), rs.clone()], &ys);
    let (cg, gauss_rms) = lstsq(&[ones.clone(), r2.clone()], &ys);
    let (cj, _) = lstsq(&[ones, rs.clone(), r2], &ys);
    Ok(DecayFit {
        exp_rate: -ce[1],
        exp_rms,
        gauss_coeff: -cg[1],
        gauss_rms,
        joint: (-cj[1], -cj[2]),
        window: (rs[0], *rs.last().unwrap()),
        points: rs.len(),
    })
}

/// `|½∫G − λ‖Ψ‖² + (1/6)∫|∇Ψ|²|` for a critical point of the free log functional.
pub fn pohozaev_defect(grid: &RadialGrid, u: &[f64], lambda: f64, nl: &Nonlinearity) -> Result<f64, EigenError> {
    let op = RadialOperator::new(grid)?;
    let zero = vec![0.0; op.len()];
    let p = energy_parts(&op, u, &zero, &RadialNonlinearity(Some(*nl)));
    Ok((p.half_g - lambda * op.norm_sq(u) + p.kinetic / 3.0).abs())
}

/// `(3/2)ln[(2/(3πe))∫|∇Ψ|²] − ∫|Ψ|² ln|Ψ|²`, nonnegative for normalized Ψ.
pub fn log_sobolev_gap(grid: &RadialGrid, u: &[f64]) -> Result<f64, EigenError> {
    let op = RadialOperator::new(grid)?;
    let grad = 2.0 * op.kinetic(u);
    let s = op.density(u);
    let w = op.weights();
    let ent: f64 = (1..u.len() - 1).filter(|&i| s[i] > 0.0).map(|i| w[i] * u[i] * u[i] * s[i].ln()).sum();
    Ok(1.5 * (2.0 / (3.0 * PI * std::f64::consts::E) * grad).ln() - ent)
}

/// Normalized free gausson `κ^{3/2}C_g e^{−κ²r²/2}` as a `u` vector on `grid`.
pub fn gausson_state(grid: &RadialGrid, kappa: f64) -> Result<Vec<f64>, EigenError> {
    let op = RadialOperator::new(grid)?;
    let cg = crate::nonlin::c_g();
    let mut u: Vec<f64> = op.r.iter().map(|&r| (4.0 * PI).sqrt() * r * kappa.powf(1.5) * cg * (-0.5 * kappa * kappa * r * r).exp()).collect();
    let n = u.len();
    u[n - 1] = 0.0;
    op.normalize(&mut u);
    Ok(u)
}

/// Parameters of the electron–proton self-consistent iteration.
#[derive(Debug, Clone)]
pub struct TwoParticleConfig {
    /// Mass ratio `b = m₁/m₂`.
    pub b: f64,
    pub kappa_e: f64,
    pub kappa_p: f64,
    pub xi: Xi,
    pub electron_grid: RadialGrid,
    pub proton_grid: RadialGrid,
    pub tol: f64,
    pub max_iter: usize,
    pub mixing: f64,
}

impl TwoParticleConfig {
    /// Electron grid resolving both the Bohr scale and `b/κ_p`; proton grid to `12/κ_p`.
    pub fn new(b: f64, kappa_e: f64, kappa_p: f64) -> Result<Self, EigenError> {
        if !(kappa_e > 0.0 && kappa_p > 0.0) {
            return Err(EigenError::Config("kappa_e and kappa_p must be positive".into()));
        }
        let scale = (b / kappa_p).min(1e-2);
        Ok(Self {
            b,
            kappa_e,
            kappa_p,
            xi: Xi::NegInfinity,
            electron_grid: RadialGrid::log_stretched(12_001, 0.05 * scale, (12.0 / kappa_e).max(60.0))?,
            proton_grid: RadialGrid::log_stretched(6_001, 0.01 / kappa_p, 12.0 / kappa_p)?,
            tol: 1e-10,
            max_iter: 200,
            mixing: 1.0,
        })
    }
}

/// Output of [`two_particle_scf`].
#[derive(Debug, Clone)]
pub struct TwoParticleResult {
    pub electron: EigenSolution,
    pub proton: EigenSolution,
    /// `−∫[(1/b)φ₂(y/b) − 1/|y|]|Ψ₁|²dy` evaluated on the electron grid.
    pub d_prot: f64,
    /// The same quantity as the ordered double integral on the proton grid.
    pub d_prot_double: f64,
    /// `(4π)²b²/6 · max|Ψ₁|² · ∫|Ψ₂|²r⁴dr`
    pub d_prot_bound: f64,
    pub iterations: usize,
}

/// `1/r − φ(r)` for a unit-charge density, from tail integrals (no cancellation for large r).
fn coulomb_deficit(r: &[f64], rho: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut t2 = vec![0.0; n];
    let mut t1 = vec![0.0; n];
    for i in (0..n - 1).rev() {
        let h = r[i + 1] - r[i];
        t2[i] = t2[i + 1] + 0.5 * h * (r[i] * r[i] * rho[i] + r[i + 1] * r[i + 1] * rho[i + 1]);
        t1[i] = t1[i + 1] + 0.5 * h * (r[i] * rho[i] + r[i + 1] * rho[i + 1]);
    }
    (0..n).map(|i| if r[i] > 0.0 { 4.0 * PI * (t2[i] / r[i] - t1[i]) } else { f64::INFINITY }).collect()
}

fn interp(r: &[f64], vals: &[f64], x: f64) -> f64 {
    let n = r.len();
    if x <= r[0] {
        return vals[0];
    }
    if x >= r[n - 1] {
        return vals[n - 1];
    }
    let i = r.partition_point(|&v| v <= x) - 1;
    let t = (x - r[i]) / (r[i + 1] - r[i]);
    vals[i] * (1.0 - t) + vals[i + 1] * t
}

/// Electron–proton self-consistent field in the rescaled variables:
/// electron in `−(1/b)φ₂(y/b)`, proton in `−bφ₁(by)`, alternating ground-state solves.
pub fn two_particle_scf(config: &TwoParticleConfig) -> Result<TwoParticleResult, EigenError> {
    let b = config.b;
    if !(b > 0.0 && b <= 0.1) {
        return Err(EigenError::Config(format!("b must lie in (0, 0.1], got {b}")));
    }
    let eop = RadialOperator::new(&config.electron_grid)?;
    let pop = RadialOperator::new(&config.proton_grid)?;
    let resolved = eop.r.iter().filter(|&&r| r > 0.0 && r <= 3.0 * b / config.kappa_p).count();
    if resolved < 16 {
        return Err(EigenError::ScaleMismatch(format!(
            "electron grid has {resolved} nodes inside 3b/kappa_p = {:e}; need 16",
            3.0 * b / config.kappa_p
        )));
    }
    if pop.r.last().unwrap() * config.kappa_p < 10.0 {
        return Err(EigenError::ScaleMismatch("proton grid must reach 10/kappa_p".into()));
    }
    let enl = RadialNonlinearity::log(config.kappa_e, config.xi)?;
    let pnl = RadialNonlinearity::log(config.kappa_p, config.xi)?;
    let coul = coulomb_potential(eop.r(), 1.0);
    let mut ue = eop.lowest_eigenpairs(&coul, 1).remove(0).1;
    let mut up = gausson_state(&config.proton_grid, config.kappa_p)?;

    let electron_pot = |up: &[f64]| -> Result<Vec<f64>, EigenError> {
        let phi2 = poisson_radial(&config.proton_grid, &pop.density(up), 1.0, 1e-6)?;
        let rp_max = *pop.r.last().unwrap();
        Ok(eop.r.iter().map(|&y| {
            let x = y / b;
            if y == 0.0 {
                0.0
            } else if x >= rp_max {
                -1.0 / y
            } else {
                -interp(&pop.r, &phi2, x) / b
            }
        }).collect())
    };
    let proton_pot = |ue: &[f64]| -> Result<Vec<f64>, EigenError> {
        let phi1 = poisson_radial(&config.electron_grid, &eop.density(ue), 1.0, 1e-6)?;
        Ok(pop.r.iter().map(|&y| -b * interp(&eop.r, &phi1, b * y)).collect())
    };

    let mut pe = electron_pot(&up)?;
    let mut pp = proton_pot(&ue)?;
    let (mut we, mut wp) = (f64::NAN, f64::NAN);
    let mut mixing = config.mixing;
    let mut last_change = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=config.max_iter {
        iterations = it;
        ue = relax(&eop, &pe, &enl, ue, 1e-8, 400, 1.0).0;
        let ppn = proton_pot(&ue)?;
        pp.iter_mut().zip(&ppn).for_each(|(a, b)| *a = mixing * b + (1.0 - mixing) * *a);
        up = relax(&pop, &pp, &pnl, up, 1e-8, 400, 1.0).0;
        let pen = electron_pot(&up)?;
        pe.iter_mut().zip(&pen).for_each(|(a, b)| *a = mixing * b + (1.0 - mixing) * *a);
        let nwe = energy_parts(&eop, &ue, &pe, &enl).omega();
        let nwp = energy_parts(&pop, &up, &pp, &pnl).omega();
        let change = (nwe - we).abs().max((nwp - wp).abs());
        we = nwe;
        wp = nwp;
        if change < config.tol {
            converged = true;
            break;
        }
        if change > last_change && it > 2 {
            mixing *= 0.5;
            if mixing < 1.0 / 64.0 {
                return Err(EigenError::ScfFailure { iterations: it, change });
            }
        }
        last_change = change;
    }
    if !converged {
        return Err(EigenError::ScfFailure { iterations, change: last_change });
    }
    let electron = finish(&eop, ue, &pe, &enl, 1, config.kappa_e, config.xi, iterations, f64::INFINITY);
    let proton = finish(&pop, up, &pp, &pnl, 1, config.kappa_p, config.xi, iterations, f64::INFINITY);

    // D_prot on the electron grid: Σ W u_e² (1/b)·deficit₂(y/b)
    let rho2 = pop.density(&proton.u);
    let def2 = coulomb_deficit(&pop.r, &rho2);
    let phi2 = poisson_radial(&config.proton_grid, &rho2, 1.0, 1e-6)?;
    let rp1 = pop.r[1];
    let rp_max = *pop.r.last().unwrap();
    let mut d_prot = 0.0;
    for i in 1..eop.len() - 1 {
        let x = eop.r[i] / b;
        let def = if x >= rp_max {
            0.0
        } else if x < rp1 {
            1.0 / x - interp(&pop.r, &phi2, x)
        } else {
            interp(&pop.r, &def2, x)
        };
        d_prot += eop.w[i] * electron.u[i] * electron.u[i] * def / b;
    }
    // ordered double integral (4π)²b² ∫ρ₂(r₁) r₁ ∫₀^{r₁} ρ₁(b r₂) r₂ (r₁ − r₂) dr₂ dr₁
    let psi1 = eop.psi(&electron.u);
    let rho1 = |y: f64| interp(&eop.r, &psi1, y).powi(2);
    let f_in = |r2: f64| rho1(b * r2);
    let mut d_double = 0.0;
    {
        let (mut p_acc, mut q_acc) = (0.0, 0.0);
        let mut prev_g = 0.0;
        for i in 1..pop.len() {
            let (ra, rb) = (pop.r[i - 1], pop.r[i]);
            let h = rb - ra;
            let (fa, fb) = (f_in(ra), f_in(rb));
            p_acc += 0.5 * h * (fa * ra + fb * rb);
            q_acc += 0.5 * h * (fa * ra * ra + fb * rb * rb);
            let g = rho2[i] * rb * (rb * p_acc - q_acc);
            d_double += 0.5 * h * (prev_g + g);
            prev_g = g;
        }
    }
    let d_double = (4.0 * PI).powi(2) * b * b * d_double;
    let max_psi1_sq = psi1.iter().map(|v| v * v).fold(0.0, f64::max);
    let w = pop.weights();
    let m4: f64 = (1..pop.len() - 1).map(|i| w[i] * rho2[i] * pop.r[i].powi(4)).sum();
    let bound = (4.0 * PI).powi(2) / 6.0 * b * b * max_psi1_sq * m4;
    Ok(TwoParticleResult { electron, proton, d_prot, d_prot_double: d_double, d_prot_bound: bound, iterations })
}

/// Free gausson or Coulomb solve in a user-supplied potential (testing and CLI helper).
pub fn solve_ground_in(grid: &RadialGrid, pot: &[f64], kappa: f64, xi: Xi, u0: Option<Vec<f64>>, tol: f64, max_iter: usize) -> Result<EigenSolution, EigenError> {
    let op = RadialOperator::new(grid)?;
    let nl = RadialNonlinearity::log(kappa, xi)?;
    let u0 = match u0 {
        Some(u) => u,
        None => op.lowest_eigenpairs(pot, 1).remove(0).1,
    };
    let (u, it) = relax(&op, pot, &nl, u0, tol, max_iter, 1.0);
    Ok(finish(&op, u, pot, &nl, 1, kappa, xi, it, tol))
}

/// `ω` of the analytic product ground state `A e^{−κ²r²/2 − r}`: `−½ − ½κ² ln C²(κ)` with
/// `C²(κ) = A²/(κ³C_g²)` and `A` fixed by normalization (quadrature).
pub fn product_ground_omega(kappa: f64) -> f64 {
    let a2 = product_ground_amplitude_sq(kappa);
    let cg2 = crate::nonlin::c_g().powi(2);
    -0.5 - 0.5 * kappa * kappa * (a2 / (kappa.powi(3) * cg2)).ln()
}

/// `A²` normalizing `A e^{−κ²r²/2 − r}` in three dimensions.
pub fn product_ground_amplitude_sq(kappa: f64) -> f64 {
    let i = crate::quad::integrate_to_inf(|r| r * r * (-kappa * kappa * r * r - 2.0 * r).exp(), 0.0, 1e-14);
    1.0 / (4.0 * PI * i)
}

/// `u` of the analytic product ground state on `grid`, normalized on the grid.
pub fn product_ground_state(grid: &RadialGrid, kappa: f64) -> Vec<f64> {
    let a = product_ground_amplitude_sq(kappa).sqrt();
    let mut u: Vec<f64> = grid.r().iter().map(|&r| (4.0 * PI).sqrt() * r * a * (-0.5 * kappa * kappa * r * r - r).exp()).collect();
    let n = u.len();
    u[n - 1] = 0.0;
    if let Ok(op) = RadialOperator::new(grid) {
        op.normalize(&mut u);
    }
    u
}

/// `Nonlinearity` of the power-law family with `a = 1/κ`, for off-family comparisons.
pub fn power_law_with_kappa(kappa: f64) -> Result<Nonlinearity, EigenError> {
    Ok(Nonlinearity::new(NonlinearityKind::PowerLaw, 1.0 / kappa)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlin::c_g;

    fn grid(r_max: f64) -> RadialGrid {
        RadialGrid::log_stretched(10_001, 0.01, r_max).unwrap()
    }

    fn l2_dist(op: &RadialOperator, a: &[f64], b: &[f64]) -> f64 {
        op.norm_sq(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>()).sqrt()
    }

    #[test]
    fn linear_levels_and_ground_profile() {
        let g = grid(400.0);
        let lin = linear_hydrogen_spectrum(&g, 4).unwrap();
        for s in &lin {
            let n = s.n as f64;
            assert!((s.omega + 0.5 / (n * n)).abs() < 1e-5, "{} {}", s.n, s.omega);
            assert_eq!(s.node_count, s.n - 1);
            assert!(s.residual < 1e-6);
        }
        assert!(lin.windows(2).all(|p| p[0].omega < p[1].omega));
        let op = RadialOperator::new(&g).unwrap();
        let exact: Vec<f64> = g.r().iter().map(|&r| (4.0 * PI).sqrt() * r * (-r).exp() / PI.sqrt()).collect();
        assert!(l2_dist(&op, &lin[0].u, &exact) < 1e-4);
        assert!((coulomb_energy_functional(&g, &lin[0].u, 0.0, Xi::NegInfinity).unwrap() + 0.5).abs() < 1e-5);
    }

    #[test]
    fn short_domain_is_rejected() {
        let g = RadialGrid::log_stretched(2001, 0.01, 8.0).unwrap();
        assert!(matches!(linear_hydrogen_spectrum(&g, 3), Err(EigenError::BoundaryAmplitude { .. })));
        assert!(linear_hydrogen_spectrum(&g, 7).is_err());
    }

    #[test]
    fn free_gausson_energy_and_pohozaev() {
        let g = grid(14.0);
        let u = gausson_state(&g, 1.0).unwrap();
        let op = RadialOperator::new(&g).unwrap();
        let nl = Nonlinearity::log_kappa(1.0, Xi::NegInfinity).unwrap();
        let p = energy_parts(&op, &u, &vec![0.0; op.len()], &RadialNonlinearity(Some(nl)));
        assert!((p.energy() - 0.5).abs() < 1e-5, "{}", p.energy());
        assert!((2.0 * p.kinetic - 1.5).abs() < 1e-5);
        assert!(p.omega().abs() < 1e-5);
        assert!(pohozaev_defect(&g, &u, 0.0, &nl).unwrap() < 1e-5);
        let gap = log_sobolev_gap(&g, &u).unwrap();
        assert!(gap.abs() < 1e-6, "{gap}");
    }

    #[test]
    fn log_sobolev_strict_off_gaussian() {
        let g = grid(60.0);
        let lin = linear_hydrogen_spectrum(&g, 1).unwrap();
        assert!(log_sobolev_gap(&g, &lin[0].u).unwrap() > 1e-2);
    }

    #[test]
    fn product_constant_against_quadrature() {
        // ln C²(κ) = ln(A²/(κ³C_g²)), A² = 1/(4π∫r²e^{−κ²r²−2r}dr); reference values by independent quadrature
        let lc2 = |k: f64| (product_ground_amplitude_sq(k) / (k.powi(3) * c_g().powi(2))).ln();
        assert!((lc2(1.0) - 1.8683928463619).abs() < 1e-9);
        assert!((lc2(0.1) - 7.5094715156826).abs() < 1e-9);
        assert!((product_ground_omega(0.05) + 0.5119587750046).abs() < 1e-11);
    }

    #[test]
    fn ground_state_matches_product_solution() {
        for k in [0.1, 0.05] {
            let c = EigenConfig::new(k, 1).unwrap();
            let s = solve_ground(&c).unwrap();
            assert!(s.converged && s.node_count == 0);
            assert!((s.omega - product_ground_omega(k)).abs() < 1e-6, "{} {}", s.omega, product_ground_omega(k));
            assert!((s.energy - s.omega - 0.5 * k * k).abs() < 1e-12);
            let op = RadialOperator::new(&c.grid).unwrap();
            assert!(l2_dist(&op, &s.u, &product_ground_state(&c.grid, k)) < 1e-3);
        }
    }

    #[test]
    fn residual_of_product_and_perturbed_states() {
        let g = grid(120.0);
        let u = product_ground_state(&g, 0.1);
        let rep = eigen_residual(&g, &u, 0.1, Xi::NegInfinity).unwrap();
        assert!(rep.residual < 1e-6, "{}", rep.residual);
        assert!(rep.energy_offset_error < 1e-12);
        let op = RadialOperator::new(&g).unwrap();
        let mut bumped: Vec<f64> = g.r().iter().zip(&u).map(|(&r, v)| v + 0.01 * r * (-(r - 2.0).powi(2)).exp()).collect();
        op.normalize(&mut bumped);
        assert!(eigen_residual(&g, &bumped, 0.1, Xi::NegInfinity).unwrap().residual > 1e-3);
    }

    #[test]
    fn regularized_ground_close_to_unregularized() {
        let c = EigenConfig::new(0.1, 1).unwrap();
        let w = solve_ground(&c).unwrap().omega;
        let mut prev = f64::INFINITY;
        for xi in [-10.0, -20.0, -40.0] {
            let d = (solve_ground(&c.clone().with_xi(Xi::finite(xi).unwrap())).unwrap().omega - w).abs();
            assert!(d <= prev);
            prev = d;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn excited_levels() {
        let c = EigenConfig::new(0.0, 2).unwrap();
        let s = solve_excited(&c).unwrap();
        let lin = linear_hydrogen_spectrum(&c.grid, 2).unwrap();
        assert_eq!(s.omega, lin[1].omega);
        let k = 0.05;
        let sols: Vec<EigenSolution> = (1..=4).map(|n| solve_level(&EigenConfig::new(k, n).unwrap()).unwrap()).collect();
        for (i, s) in sols.iter().enumerate() {
            assert_eq!(s.node_count, i);
            assert!(s.converged, "{} {}", s.n, s.residual);
            let n = (i + 1) as f64;
            assert!((s.omega + 0.5 / (n * n)).abs() <= 5.0 * k * k * (1.0 + k.ln().abs()));
        }
        assert!(sols.windows(2).all(|p| p[0].omega < p[1].omega));
        assert!(planck_einstein_check(&sols, 1.0, 1.0, 1.0 / k) < 1e-6);
        let swapped = levels_with(&sols[..2], Some(power_law_with_kappa(k).unwrap())).unwrap();
        assert!(planck_einstein_deviation(&swapped, 1.0, 1.0, 1.0 / k) > 1e-3);
    }

    #[test]
    fn gap_scan_floor_and_gate() {
        let c = EigenConfig::new(0.05, 2).unwrap();
        let s = solve_excited(&c).unwrap();
        let pts = gap_scan(&c, &[-0.09], 0.01, 1.0, &[]).unwrap();
        assert!(pts[0].floor_residual >= 1e-2);
        let ctl = gap_scan_unchecked(&c, &[s.omega], std::slice::from_ref(&s.u)).unwrap();
        assert!(ctl[0].floor_residual <= c.tol_residual);
        match gap_scan(&c, &[-0.09], 1e-4, 1.0, &[]) {
            Err(EigenError::DeltaTooSmall { required, .. }) => assert!(required > 1e-4),
            other => panic!("{other:?}"),
        }
        assert!(gap_scan(&c, &[-0.2], 0.01, 1.0, &[]).is_err());
    }

    #[test]
    fn tail_fits() {
        let c = EigenConfig::new(0.1, 1).unwrap();
        let lin = &linear_hydrogen_spectrum(&c.grid, 1).unwrap()[0];
        let f = decay_fit(lin).unwrap();
        assert!((f.exp_rate - 1.0).abs() < 0.02 && !f.superexponential());
        let g = solve_ground(&c).unwrap();
        let f = decay_fit(&g).unwrap();
        assert!(f.superexponential());
        assert!((f.joint.1 - 0.005).abs() < 5e-4, "{:?}", f.joint);
        let gx = solve_ground(&c.clone().with_xi(Xi::finite(-25.0).unwrap())).unwrap();
        assert!(decay_fit(&gx).unwrap().exp_rate >= 0.1 / 3.0 * 25f64.sqrt());
    }

    #[test]
    fn decay_window_error() {
        let g = RadialGrid::log_stretched(2001, 0.01, 30.0).unwrap();
        let mut s = linear_hydrogen_spectrum(&g, 1).unwrap().remove(0);
        let rmax = 12.0;
        s.u.iter_mut().zip(&s.r).for_each(|(u, &r)| if r > rmax { *u = 0.0 });
        assert!(matches!(decay_fit(&s), Err(EigenError::DecayWindow { .. })));
    }

    #[test]
    fn two_particle_reduction() {
        let r1 = two_particle_scf(&TwoParticleConfig::new(0.01, 0.1, 1.0).unwrap()).unwrap();
        let r2 = two_particle_scf(&TwoParticleConfig::new(0.02, 0.1, 1.0).unwrap()).unwrap();
        let ratio = r2.d_prot / r1.d_prot;
        assert!((3.0..=5.0).contains(&ratio), "{ratio}");
        for r in [&r1, &r2] {
            assert!((r.d_prot - r.d_prot_double).abs() < 1e-3 * r.d_prot);
            assert!(r.d_prot <= r.d_prot_bound * 1.01);
        }
        let tiny = two_particle_scf(&TwoParticleConfig::new(1.0 / 1837.0, 0.1, 10.0).unwrap()).unwrap();
        assert!(tiny.d_prot <= 1e-4);
        let ground = solve_ground(&EigenConfig::new(0.1, 1).unwrap()).unwrap();
        assert!((tiny.electron.omega - ground.omega).abs() < 1e-6);
    }

    #[test]
    fn two_particle_scale_gate() {
        let mut c = TwoParticleConfig::new(0.01, 0.1, 1.0).unwrap();
        c.electron_grid = RadialGrid::log_stretched(200, 0.5, 120.0).unwrap();
        assert!(matches!(two_particle_scf(&c), Err(EigenError::ScaleMismatch(_))));
    }
}
