//! Split-step evolution of coupled NLS–Poisson charges, observables, and the
//! point-particle Newton–Lorentz comparator.

use crate::fft3::Fft3;
use crate::fields::{CartesianGrid, FieldError, PoissonSolver};
use crate::nonlin::{FormFactorKind, FormFactorSpec, NonlinError, Nonlinearity};
use crate::{par, Complex64, Vec3};
use std::sync::Arc;
use thiserror::Error;

/// Floor on `ln|ψ|²` in the phase substep (amplitude floor `e^{−100}`).
pub const XI_NUM: f64 = -200.0;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-finite wavefunction in charge {charge} at t = {t}; state restored to last good step")]
    NonFinite { charge: usize, t: f64 },
    #[error("time step {dt} outside the kinetic phase bound {bound}")]
    TimeStep { dt: f64, bound: f64 },
    #[error("near collision: |r - r'| = {dist} < r_min = {r_min} at t = {t}")]
    Collision { dist: f64, r_min: f64, t: f64 },
    #[error("external field inconsistent: E differs from -grad phi by {0} at a probe point")]
    InconsistentField(f64),
    #[error("wavefunction has norm^2 {0}, expected 1")]
    NotNormalized(f64),
    #[error("invalid setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Nonlin(#[from] NonlinError),
}

pub type ScalarFn = Arc<dyn Fn(f64, Vec3) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, Vec3) -> Vec3 + Send + Sync>;

/// External potentials `φ_ex`, `E_ex` and (ODE only) `B_ex`.
#[derive(Clone, Default)]
pub struct ExternalField {
    phi: Option<ScalarFn>,
    e: Option<VectorFn>,
    b: Option<VectorFn>,
    time_independent: bool,
}

impl std::fmt::Debug for ExternalField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalField")
            .field("phi", &self.phi.is_some())
            .field("e", &self.e.is_some())
            .field("b", &self.b.is_some())
            .finish()
    }
}

fn fd_gradient(phi: &ScalarFn, t: f64, x: Vec3) -> Vec3 {
    let mut g = [0.0; 3];
    for (a, ga) in g.iter_mut().enumerate() {
        let h = 1e-4 * (1.0 + x[a].abs());
        let (mut p, mut m) = (x, x);
        p[a] += h;
        m[a] -= h;
        *ga = (phi(t, p) - phi(t, m)) / (2.0 * h);
    }
    g
}

impl ExternalField {
    pub fn none() -> Self {
        Self { time_independent: true, ..Default::default() }
    }

    /// General field; `E = −∇φ` is checked at probe points when both are given.
    pub fn new(phi: Option<ScalarFn>, e: Option<VectorFn>, b: Option<VectorFn>, time_independent: bool) -> Result<Self, DynamicsError> {
        let f = Self { phi, e, b, time_independent };
        if let (Some(phi), Some(e)) = (&f.phi, &f.e) {
            let probes = [[0.3, -0.2, 0.1], [-1.1, 0.7, 0.4], [0.9, 1.3, -0.8], [0.0, 0.0, 0.0]];
            for t in [0.0, 0.37, 1.0] {
                for x in probes {
                    let g = fd_gradient(phi, t, x);
                    let ev = e(t, x);
                    let scale = 1.0 + ev.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    let err = (0..3).map(|a| (ev[a] + g[a]).abs()).fold(0.0, f64::max);
                    if err > 1e-5 * scale {
                        return Err(DynamicsError::InconsistentField(err));
                    }
                }
            }
        }
        Ok(f)
    }

    /// `φ = φ₀ − E₀·x`, uniform field `E₀`.
    pub fn linear(e0: Vec3, phi0: f64) -> Self {
        Self {
            phi: Some(Arc::new(move |_, x| phi0 - dot(e0, x))),
            e: Some(Arc::new(move |_, _| e0)),
            b: None,
            time_independent: true,
        }
    }

    /// `φ = β|x|⁴`.
    pub fn quartic(beta: f64) -> Self {
        Self {
            phi: Some(Arc::new(move |_, x| beta * dot(x, x).powi(2))),
            e: Some(Arc::new(move |_, x| {
                let r2 = dot(x, x);
                [-4.0 * beta * r2 * x[0], -4.0 * beta * r2 * x[1], -4.0 * beta * r2 * x[2]]
            })),
            b: None,
            time_independent: true,
        }
    }

    /// `φ = ½k|x|²`.
    pub fn harmonic(k: f64) -> Self {
        Self {
            phi: Some(Arc::new(move |_, x| 0.5 * k * dot(x, x))),
            e: Some(Arc::new(move |_, x| [-k * x[0], -k * x[1], -k * x[2]])),
            b: None,
            time_independent: true,
        }
    }

    /// Adds a uniform magnetic field (point-particle comparator only).
    pub fn with_uniform_b(mut self, b: Vec3) -> Self {
        self.b = Some(Arc::new(move |_, _| b));
        self
    }

    pub fn has_phi(&self) -> bool {
        self.phi.is_some()
    }

    pub fn is_time_independent(&self) -> bool {
        self.time_independent
    }

    pub fn phi(&self, t: f64, x: Vec3) -> f64 {
        self.phi.as_ref().map_or(0.0, |f| f(t, x))
    }

    pub fn e_field(&self, t: f64, x: Vec3) -> Vec3 {
        match (&self.e, &self.phi) {
            (Some(e), _) => e(t, x),
            (None, Some(phi)) => {
                let g = fd_gradient(phi, t, x);
                [-g[0], -g[1], -g[2]]
            }
            _ => [0.0; 3],
        }
    }

    pub fn b_field(&self, t: f64, x: Vec3) -> Vec3 {
        self.b.as_ref().map_or([0.0; 3], |f| f(t, x))
    }
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm3(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone)]
pub struct ChargeState {
    pub psi: Vec<Complex64>,
    pub m: f64,
    pub q: f64,
    pub chi: f64,
    pub nl: Nonlinearity,
}

impl ChargeState {
    /// Checks `‖ψ‖² = 1` within 1e-8.
    pub fn new(grid: &CartesianGrid, psi: Vec<Complex64>, m: f64, q: f64, chi: f64, nl: Nonlinearity) -> Result<Self, DynamicsError> {
        if psi.len() != grid.len() {
            return Err(FieldError::Length { expected: grid.len(), got: psi.len() }.into());
        }
        if !(m > 0.0 && chi > 0.0) {
            return Err(DynamicsError::Setup(format!("m and chi must be positive (m={m}, chi={chi})")));
        }
        let n2 = norm_sq(grid, &psi);
        if (n2 - 1.0).abs() > 1e-8 {
            return Err(DynamicsError::NotNormalized(n2));
        }
        Ok(Self { psi, m, q, chi, nl })
    }

    /// Wave-corpuscle `e^{i m v·(x−r)/χ} ψ̊_a(|x−r|)` sampled and renormalized on the grid.
    pub fn corpuscle(grid: &CartesianGrid, nl: Nonlinearity, m: f64, q: f64, chi: f64, r0: Vec3, v0: Vec3) -> Result<Self, DynamicsError> {
        let spec = nl.form_factor();
        let mut psi = par::map(grid.len(), |i| {
            let x = grid.point(i);
            let d = [x[0] - r0[0], x[1] - r0[1], x[2] - r0[2]];
            Complex64::from_polar(spec.eval(norm3(d)), m * dot(v0, d) / chi)
        });
        let s = norm_sq(grid, &psi).sqrt();
        par::update(&mut psi, |_, v| v / s);
        Self::new(grid, psi, m, q, chi, nl)
    }

    pub fn a(&self) -> f64 {
        self.nl.a
    }

    pub fn density(&self) -> Vec<f64> {
        self.psi.iter().map(|v| v.norm_sqr()).collect()
    }
}

pub fn norm_sq(grid: &CartesianGrid, psi: &[Complex64]) -> f64 {
    grid.integrate(|i| psi[i].norm_sqr())
}

#[derive(Debug, Clone)]
pub struct SystemState {
    pub grid: CartesianGrid,
    pub charges: Vec<ChargeState>,
    pub t: f64,
    pub external: ExternalField,
}

impl SystemState {
    pub fn new(grid: CartesianGrid, charges: Vec<ChargeState>, external: ExternalField) -> Self {
        Self { grid, charges, t: 0.0, external }
    }
}

/// Time series for one charge (PDE) or one point particle (ODE).
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub centers: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub momenta: Vec<Vec3>,
    pub norms: Vec<f64>,
    pub energies: Vec<f64>,
}

impl Trajectory {
    fn push(&mut self, t: f64, r: Vec3, v: Vec3, p: Vec3, norm: f64, e: f64) {
        self.times.push(t);
        self.centers.push(r);
        self.velocities.push(v);
        self.momenta.push(p);
        self.norms.push(norm);
        self.energies.push(e);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Total energy and per-charge energies.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub total: f64,
    pub per_charge: Vec<f64>,
    pub grad_sq: Vec<f64>,
    pub nonlinear: Vec<f64>,
}

/// Spectral operators and the Strang step on a fixed grid.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: CartesianGrid,
    fft: Fft3,
    k: Vec<f64>,
    kd: Vec<f64>,
    poisson: Option<PoissonSolver>,
    kinetic_cache: Vec<(f64, f64, Vec<Complex64>)>,
}

impl Propagator {
    pub fn new(grid: CartesianGrid) -> Self {
        let len = 2.0 * grid.l;
        Self {
            grid,
            fft: Fft3::new(grid.n),
            k: Fft3::wavenumbers(grid.n, len, false),
            kd: Fft3::wavenumbers(grid.n, len, true),
            poisson: None,
            kinetic_cache: Vec::new(),
        }
    }

    pub fn grid(&self) -> CartesianGrid {
        self.grid
    }

    fn k2(&self, idx: usize) -> f64 {
        let n = self.grid.n;
        let (a, b, c) = (self.k[idx / (n * n)], self.k[(idx / n) % n], self.k[idx % n]);
        a * a + b * b + c * c
    }

    fn kvec(&self, idx: usize) -> Vec3 {
        let n = self.grid.n;
        [self.kd[idx / (n * n)], self.kd[(idx / n) % n], self.kd[idx % n]]
    }

    fn spectrum(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let mut f = psi.to_vec();
        self.fft.forward(&mut f);
        f
    }

    /// Largest stable kinetic phase increment, as a time-step bound.
    pub fn dt_bound(&self, m: f64, chi: f64) -> f64 {
        // phase χ|k|²dt/2m at the corner mode kept below 4π
        let kmax = std::f64::consts::PI / self.grid.h();
        8.0 * std::f64::consts::PI * m / (3.0 * chi * kmax * kmax)
    }

    /// Spectral Laplacian.
    pub fn laplacian(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let mut f = self.spectrum(psi);
        par::update(&mut f, |i, v| v * (-self.k2(i)));
        self.fft.inverse(&mut f);
        f
    }

    /// Spectral gradient components (Nyquist mode dropped).
    pub fn gradient(&self, psi: &[Complex64]) -> [Vec<Complex64>; 3] {
        let f = self.spectrum(psi);
        let comp = |a: usize| {
            let mut g = f.clone();
            par::update(&mut g, |i, v| v * Complex64::new(0.0, self.kvec(i)[a]));
            self.fft.inverse(&mut g);
            g
        };
        [comp(0), comp(1), comp(2)]
    }

    /// `∫|∇ψ|²` by Parseval.
    pub fn grad_sq(&self, psi: &[Complex64]) -> f64 {
        let f = self.spectrum(psi);
        let g = self.grid;
        par::sum(g.len(), |i| self.k2(i) * f[i].norm_sqr()) * g.cell_volume() / g.len() as f64
    }

    /// `∫ Im(ψ*∇ψ)` by Parseval.
    pub fn phase_current(&self, psi: &[Complex64]) -> Vec3 {
        let f = self.spectrum(psi);
        let g = self.grid;
        let s = par::sum_k(g.len(), |i| {
            let k = self.kvec(i);
            let w = f[i].norm_sqr();
            [k[0] * w, k[1] * w, k[2] * w]
        });
        let c = g.cell_volume() / g.len() as f64;
        [s[0] * c, s[1] * c, s[2] * c]
    }

    /// Own potentials `φ^ℓ` of all charges (empty for a single charge).
    pub fn own_potentials(&mut self, sys: &SystemState) -> Result<Vec<Vec<f64>>, DynamicsError> {
        if sys.charges.len() < 2 {
            return Ok(Vec::new());
        }
        let grid = self.grid;
        let solver = self.poisson.get_or_insert_with(|| PoissonSolver::new(grid));
        sys.charges.iter().map(|c| Ok(solver.solve(&c.density(), c.q)?.phi)).collect()
    }

    /// `φ_{≠ℓ}` for each charge; `None` for a single charge.
    pub fn couplings(&mut self, sys: &SystemState) -> Result<Vec<Option<Vec<f64>>>, DynamicsError> {
        let own = self.own_potentials(sys)?;
        if own.is_empty() {
            return Ok(vec![None; sys.charges.len()]);
        }
        Ok((0..own.len())
            .map(|l| {
                let mut acc = vec![0.0; self.grid.len()];
                for (j, p) in own.iter().enumerate() {
                    if j != l {
                        acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
                    }
                }
                Some(acc)
            })
            .collect())
    }

    /// Local potential `q(φ_{≠ℓ} + φ_ex) + (χ²/2m)G′(|ψ|²)` (log floored at `XI_NUM`).
    pub fn local_potential(&self, c: &ChargeState, coupling: Option<&[f64]>, ext: &ExternalField, t: f64) -> Vec<f64> {
        let g = self.grid;
        let pre = c.chi * c.chi / (2.0 * c.m);
        let has_ext = ext.has_phi();
        par::map(g.len(), |i| {
            let mut v = pre * c.nl.gprime_floored(c.psi[i].norm_sqr(), XI_NUM);
            if has_ext {
                v += c.q * ext.phi(t, g.point(i));
            }
            if let Some(p) = coupling {
                v += c.q * p[i];
            }
            v
        })
    }

    /// `Hψ = −(χ²/2m)∇²ψ + Vψ` with the same operators used in `step`.
    pub fn apply_hamiltonian(&self, c: &ChargeState, coupling: Option<&[f64]>, ext: &ExternalField, t: f64) -> Vec<Complex64> {
        let pre = c.chi * c.chi / (2.0 * c.m);
        let v = self.local_potential(c, coupling, ext, t);
        let mut lap = self.laplacian(&c.psi);
        par::update(&mut lap, |i, l| -pre * l + v[i] * c.psi[i]);
        lap
    }

    fn kick(&self, c: &mut ChargeState, coupling: Option<&[f64]>, ext: &ExternalField, t: f64, tau: f64) {
        let v = self.local_potential(c, coupling, ext, t);
        let chi = c.chi;
        par::update(&mut c.psi, |i, p| p * Complex64::from_polar(1.0, -v[i] * tau / chi));
    }

    fn drift(&mut self, psi: &mut [Complex64], m: f64, chi: f64, dt: f64) {
        let key = chi * dt / (2.0 * m);
        let pos = match self.kinetic_cache.iter().position(|(k, _, _)| *k == key) {
            Some(p) => p,
            None => {
                let phase = par::map(self.grid.len(), |i| Complex64::from_polar(1.0, -key * self.k2(i)));
                if self.kinetic_cache.len() > 4 {
                    self.kinetic_cache.remove(0);
                }
                self.kinetic_cache.push((key, dt, phase));
                self.kinetic_cache.len() - 1
            }
        };
        let phase = &self.kinetic_cache[pos].2;
        self.fft.forward(psi);
        par::update(psi, |i, p| p * phase[i]);
        self.fft.inverse(psi);
    }

    /// One Strang step: half kick, spectral drift, potentials refreshed, half kick.
    pub fn step(&mut self, sys: &mut SystemState, dt: f64) -> Result<(), DynamicsError> {
        for c in &sys.charges {
            let bound = self.dt_bound(c.m, c.chi);
            if !(dt > 0.0 && dt <= bound) {
                return Err(DynamicsError::TimeStep { dt, bound });
            }
        }
        let backup: Vec<Vec<Complex64>> = sys.charges.iter().map(|c| c.psi.clone()).collect();
        let t = sys.t;
        let coup = self.couplings(sys)?;
        for (c, p) in sys.charges.iter_mut().zip(&coup) {
            self.kick(c, p.as_deref(), &sys.external, t, 0.5 * dt);
        }
        for c in sys.charges.iter_mut() {
            self.drift(&mut c.psi, c.m, c.chi, dt);
        }
        let coup = self.couplings(sys)?;
        for (c, p) in sys.charges.iter_mut().zip(&coup) {
            self.kick(c, p.as_deref(), &sys.external, t + dt, 0.5 * dt);
        }
        for (l, c) in sys.charges.iter().enumerate() {
            if c.psi.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                for (c, b) in sys.charges.iter_mut().zip(backup) {
                    c.psi = b;
                }
                return Err(DynamicsError::NonFinite { charge: l, t });
            }
        }
        sys.t = t + dt;
        Ok(())
    }

    pub fn charge_center(&self, c: &ChargeState) -> Vec3 {
        let g = self.grid;
        let s = par::sum_k(g.len(), |i| {
            let x = g.point(i);
            let w = c.psi[i].norm_sqr();
            [x[0] * w, x[1] * w, x[2] * w]
        });
        let dv = g.cell_volume();
        [s[0] * dv, s[1] * dv, s[2] * dv]
    }

    /// `v = (χ/m)∫Im(ψ*∇ψ)`, `P = m v`.
    pub fn velocity_and_momentum(&self, c: &ChargeState) -> (Vec3, Vec3) {
        let j = self.phase_current(&c.psi);
        let v = j.map(|x| c.chi / c.m * x);
        (v, v.map(|x| c.m * x))
    }

    /// Halved coupling in the total, unhalved per charge.
    pub fn system_energy(&mut self, sys: &SystemState) -> Result<EnergyReport, DynamicsError> {
        let g = self.grid;
        let coup = self.couplings(sys)?;
        let mut total = 0.0;
        let mut per_charge = Vec::new();
        let mut grad_sq = Vec::new();
        let mut nonlinear = Vec::new();
        for (c, p) in sys.charges.iter().zip(&coup) {
            let pre = c.chi * c.chi / (2.0 * c.m);
            let gs = self.grad_sq(&c.psi);
            let gn = g.integrate(|i| c.nl.antiderivative(c.psi[i].norm_sqr()));
            let ext = if sys.external.has_phi() {
                c.q * g.integrate(|i| sys.external.phi(sys.t, g.point(i)) * c.psi[i].norm_sqr())
            } else {
                0.0
            };
            let cp = p.as_ref().map_or(0.0, |p| c.q * g.integrate(|i| p[i] * c.psi[i].norm_sqr()));
            let own = pre * (gs + gn) + ext;
            total += own + 0.5 * cp;
            per_charge.push(own + cp);
            grad_sq.push(gs);
            nonlinear.push(gn);
        }
        Ok(EnergyReport { total, per_charge, grad_sq, nonlinear })
    }

    /// Grid norm of `∂_t|ψ|² + ∇·((χ/m)Im(ψ*∇ψ))`, time derivative centred at `t + dt/2`.
    pub fn continuity_residual(&self, before: &ChargeState, after: &ChargeState, dt: f64) -> f64 {
        let g = self.grid;
        let div = |c: &ChargeState| {
            let grad = self.gradient(&c.psi);
            let mut acc = vec![0.0; g.len()];
            for (a, ga) in grad.iter().enumerate() {
                let mut j: Vec<Complex64> =
                    (0..g.len()).map(|i| Complex64::new(c.chi / c.m * (c.psi[i].conj() * ga[i]).im, 0.0)).collect();
                self.fft.forward(&mut j);
                par::update(&mut j, |i, v| v * Complex64::new(0.0, self.kvec(i)[a]));
                self.fft.inverse(&mut j);
                acc.iter_mut().zip(&j).for_each(|(s, v)| *s += v.re);
            }
            acc
        };
        let (d0, d1) = (div(before), div(after));
        let r2 = g.integrate(|i| {
            let dr = (after.psi[i].norm_sqr() - before.psi[i].norm_sqr()) / dt;
            let v = dr + 0.5 * (d0[i] + d1[i]);
            v * v
        });
        r2.sqrt()
    }

    /// Evolves `steps` steps, recording charge `which` every `stride` steps (and at t₀).
    pub fn evolve(&mut self, sys: &mut SystemState, dt: f64, steps: usize, stride: usize, which: usize) -> Result<Trajectory, DynamicsError> {
        let stride = stride.max(1);
        let mut tr = Trajectory::default();
        self.record(sys, which, &mut tr)?;
        for s in 1..=steps {
            self.step(sys, dt)?;
            if s % stride == 0 {
                self.record(sys, which, &mut tr)?;
            }
        }
        Ok(tr)
    }

    fn record(&mut self, sys: &SystemState, which: usize, tr: &mut Trajectory) -> Result<(), DynamicsError> {
        let c = &sys.charges[which];
        let r = self.charge_center(c);
        let (v, p) = self.velocity_and_momentum(c);
        let n = norm_sq(&self.grid, &c.psi);
        let e = self.system_energy(sys)?.total;
        tr.push(sys.t, r, v, p, n, e);
        Ok(())
    }
}

pub fn charge_center(grid: &CartesianGrid, c: &ChargeState) -> Vec3 {
    Propagator::new(*grid).charge_center(c)
}

pub fn velocity_and_momentum(grid: &CartesianGrid, c: &ChargeState) -> (Vec3, Vec3) {
    Propagator::new(*grid).velocity_and_momentum(c)
}

pub fn system_energy(sys: &SystemState) -> Result<EnergyReport, DynamicsError> {
    Propagator::new(sys.grid).system_energy(sys)
}

pub fn continuity_residual(grid: &CartesianGrid, before: &ChargeState, after: &ChargeState, dt: f64) -> f64 {
    Propagator::new(*grid).continuity_residual(before, after, dt)
}

/// A fixed point charge seen by the ODE comparator.
#[derive(Debug, Clone, Copy)]
pub struct PointCharge {
    pub q: f64,
    pub r: Vec3,
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    /// Speed-of-light constant in the Lorentz force.
    pub c: f64,
    /// Collision radius.
    pub r_min: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { c: 1.0, r_min: 1e-6 }
    }
}

/// RK4 for `m r̈ = qE + (q/c) ṙ×B − Σ q q′ (r′−r)/|r′−r|³`.
#[allow(clippy::too_many_arguments)]
pub fn newton_ode(
    q: f64,
    m: f64,
    fields: &ExternalField,
    extra: &[PointCharge],
    r0: Vec3,
    v0: Vec3,
    t_end: f64,
    dt: f64,
    opts: OdeOptions,
) -> Result<Trajectory, DynamicsError> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(DynamicsError::Setup(format!("need dt > 0 and T >= 0 (dt={dt}, T={t_end})")));
    }
    let accel = |t: f64, r: Vec3, v: Vec3| -> Result<Vec3, DynamicsError> {
        let e = fields.e_field(t, r);
        let b = fields.b_field(t, r);
        let vb = cross(v, b);
        let mut f = [0.0; 3];
        for a in 0..3 {
            f[a] = q * e[a] + q / opts.c * vb[a];
        }
        for pc in extra {
            let d = [pc.r[0] - r[0], pc.r[1] - r[1], pc.r[2] - r[2]];
            let dist = norm3(d);
            if dist < opts.r_min {
                return Err(DynamicsError::Collision { dist, r_min: opts.r_min, t });
            }
            let s = q * pc.q / dist.powi(3);
            for a in 0..3 {
                f[a] -= s * d[a];
            }
        }
        Ok(f.map(|x| x / m))
    };
    let energy = |t: f64, r: Vec3, v: Vec3| {
        let mut e = 0.5 * m * dot(v, v) + q * fields.phi(t, r);
        for pc in extra {
            let d = [pc.r[0] - r[0], pc.r[1] - r[1], pc.r[2] - r[2]];
            e += q * pc.q / norm3(d);
        }
        e
    };
    let steps = (t_end / dt).round() as usize;
    let mut tr = Trajectory::default();
    let (mut r, mut v) = (r0, v0);
    tr.push(0.0, r, v, v.map(|x| m * x), 1.0, energy(0.0, r, v));
    let add = |a: Vec3, b: Vec3, s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    for k in 0..steps {
        let t = k as f64 * dt;
        let a1 = accel(t, r, v)?;
        let (r2, v2) = (add(r, v, 0.5 * dt), add(v, a1, 0.5 * dt));
        let a2 = accel(t + 0.5 * dt, r2, v2)?;
        let (r3, v3) = (add(r, v2, 0.5 * dt), add(v, a2, 0.5 * dt));
        let a3 = accel(t + 0.5 * dt, r3, v3)?;
        let (r4, v4) = (add(r, v3, dt), add(v, a3, dt));
        let a4 = accel(t + dt, r4, v4)?;
        for i in 0..3 {
            r[i] += dt / 6.0 * (v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
            v[i] += dt / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]);
        }
        let tn = (k + 1) as f64 * dt;
        tr.push(tn, r, v, v.map(|x| m * x), 1.0, energy(tn, r, v));
    }
    Ok(tr)
}

/// Shared parameters of a Newton-limit sweep.
#[derive(Debug, Clone)]
pub struct NewtonLimitSetup {
    pub kind: FormFactorKind,
    /// Grid points per axis; the box half-width is sized per `a` to hold the orbit.
    pub n: usize,
    /// Box margin in units of `a` beyond the farthest Newton position.
    pub margin: f64,
    pub m: f64,
    pub q: f64,
    pub chi: f64,
    pub r0: Vec3,
    pub v0: Vec3,
    pub t_end: f64,
    pub dt: f64,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct NewtonLimitRow {
    pub a: f64,
    pub box_half_width: f64,
    pub sup_deviation: f64,
    pub eps1_max: f64,
    pub escaped_mass: f64,
    pub valid: bool,
}

/// For each `a`, evolves the PDE from the wave-corpuscle initial state and compares
/// the charge center with the Newton trajectory.
pub fn newton_limit_study(setup: &NewtonLimitSetup, external: &ExternalField, a_list: &[f64]) -> Result<Vec<NewtonLimitRow>, DynamicsError> {
    if a_list.windows(2).any(|w| w[1] >= w[0]) || a_list.iter().any(|&a| !(a > 0.0)) {
        return Err(DynamicsError::Setup("a_list must be positive and strictly decreasing".into()));
    }
    let newton = newton_ode(setup.q, setup.m, external, &[], setup.r0, setup.v0, setup.t_end, setup.dt, OdeOptions::default())?;
    let reach = newton.centers.iter().flat_map(|r| r.iter().map(|x| x.abs())).fold(0.0, f64::max);
    let rows = par::map(a_list.len(), |k| -> Result<NewtonLimitRow, DynamicsError> {
        let a = a_list[k];
        let half = reach + setup.margin * a;
        let grid = CartesianGrid::new(setup.n, half)?;
        let nl = Nonlinearity::from_form_factor(FormFactorSpec::new(setup.kind, a)?)?;
        let c = ChargeState::corpuscle(&grid, nl, setup.m, setup.q, setup.chi, setup.r0, setup.v0)?;
        let mut sys = SystemState::new(grid, vec![c], external.clone());
        let mut prop = Propagator::new(grid);
        let steps = newton.times.len() - 1;
        let stride = setup.stride.max(1);
        let (mut sup, mut eps1, mut esc) = (0.0f64, 0.0f64, 0.0f64);
        for s in 0..=steps {
            if s > 0 {
                prop.step(&mut sys, setup.dt)?;
            }
            if s % stride == 0 || s == steps {
                let c = &sys.charges[0];
                let r = prop.charge_center(c);
                let rn = newton.centers[s];
                sup = sup.max(norm3([r[0] - rn[0], r[1] - rn[1], r[2] - rn[2]]));
                let er = external.e_field(sys.t, r);
                let e1 = par::sum_k(grid.len(), |i| {
                    let e = external.e_field(sys.t, grid.point(i));
                    let w = c.psi[i].norm_sqr();
                    [(e[0] - er[0]) * w, (e[1] - er[1]) * w, (e[2] - er[2]) * w]
                })
                .map(|x| x * grid.cell_volume());
                eps1 = eps1.max(norm3(e1));
                let edge = 0.8 * half;
                esc = esc.max(grid.integrate(|i| {
                    if grid.point(i).iter().any(|x| x.abs() > edge) {
                        c.psi[i].norm_sqr()
                    } else {
                        0.0
                    }
                }));
            }
        }
        Ok(NewtonLimitRow { a, box_half_width: half, sup_deviation: sup, eps1_max: eps1, escaped_mass: esc, valid: esc <= 1e-4 })
    });
    rows.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlin::NonlinearityKind;

    fn gausson_system(n: usize, l: f64, r0: Vec3, v0: Vec3, ext: ExternalField) -> SystemState {
        let grid = CartesianGrid::new(n, l).unwrap();
        let nl = Nonlinearity::new(NonlinearityKind::LogGaussian, 1.0).unwrap();
        let c = ChargeState::corpuscle(&grid, nl, 1.0, 1.0, 1.0, r0, v0).unwrap();
        SystemState::new(grid, vec![c], ext)
    }

    #[test]
    fn ode_linear_and_quadratic_motion() {
        let tr = newton_ode(1.0, 1.0, &ExternalField::none(), &[], [1.0, 2.0, 3.0], [0.5, -1.0, 0.25], 2.0, 0.01, OdeOptions::default()).unwrap();
        let r = tr.centers.last().unwrap();
        assert!((r[0] - 2.0).abs() < 1e-13 && (r[1]).abs() < 1e-13 && (r[2] - 3.5).abs() < 1e-13);
        let e0 = [0.3, 0.0, -0.2];
        let tr = newton_ode(2.0, 0.5, &ExternalField::linear(e0, 0.0), &[], [0.0; 3], [1.0, 0.0, 0.0], 1.5, 0.01, OdeOptions::default()).unwrap();
        let t: f64 = 1.5;
        let r = tr.centers.last().unwrap();
        let want = [t + 0.5 * 2.0 * 0.3 / 0.5 * t * t, 0.0, 0.5 * 2.0 * -0.2 / 0.5 * t * t];
        for i in 0..3 {
            assert!((r[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ode_cyclotron_radius() {
        // radius m|v|c/(q|B|) = 2 with the centre at (0, 2, 0) for v along x and B along z
        let f = ExternalField::none().with_uniform_b([0.0, 0.0, -0.5]);
        let tr = newton_ode(1.0, 1.0, &f, &[], [0.0; 3], [1.0, 0.0, 0.0], 12.0, 1e-3, OdeOptions::default()).unwrap();
        let worst = tr.centers.iter().map(|r| ((r[0]).hypot(r[1] - 2.0) - 2.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn ode_collision_aborts() {
        let pc = [PointCharge { q: -1.0, r: [1.0, 0.0, 0.0] }];
        let res = newton_ode(1.0, 1.0, &ExternalField::none(), &pc, [0.0; 3], [0.0; 3], 10.0, 1e-3, OdeOptions { c: 1.0, r_min: 1e-2 });
        assert!(matches!(res, Err(DynamicsError::Collision { .. })));
    }

    #[test]
    fn inconsistent_field_rejected() {
        let phi: ScalarFn = Arc::new(|_, x| x[0]);
        let e: VectorFn = Arc::new(|_, _| [1.0, 0.0, 0.0]);
        assert!(ExternalField::new(Some(phi.clone()), Some(e), None, true).is_err());
        let e: VectorFn = Arc::new(|_, _| [-1.0, 0.0, 0.0]);
        assert!(ExternalField::new(Some(phi), Some(e), None, true).is_ok());
    }

    #[test]
    fn center_and_velocity_observables() {
        let grid = CartesianGrid::new(32, 8.0).unwrap().with_shift(0.25);
        let nl = Nonlinearity::new(NonlinearityKind::LogGaussian, 1.0).unwrap();
        let c = ChargeState::corpuscle(&grid, nl, 1.0, 1.0, 1.0, [0.0; 3], [0.0; 3]).unwrap();
        let r = charge_center(&grid, &c);
        assert!(norm3(r) < 1e-10, "{r:?}");
        let (v, _) = velocity_and_momentum(&grid, &c);
        assert!(norm3(v) < 1e-14);
        let grid = CartesianGrid::new(32, 8.0).unwrap();
        let c = ChargeState::corpuscle(&grid, nl, 1.0, 1.0, 1.0, [0.5, -1.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        let (v, p) = velocity_and_momentum(&grid, &c);
        assert!((v[0] - 1.0).abs() < 1e-9 && v[1].abs() < 1e-9 && (p[0] - 1.0).abs() < 1e-9);
        let r = charge_center(&grid, &c);
        assert!((r[0] - 0.5).abs() < 1e-9 && (r[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn gausson_energy_and_rest() {
        let mut sys = gausson_system(32, 7.0, [0.0; 3], [0.0; 3], ExternalField::none());
        let mut prop = Propagator::new(sys.grid);
        let e = prop.system_energy(&sys).unwrap();
        assert!((e.total - 0.5).abs() < 1e-6, "{}", e.total);
        assert!((e.grad_sq[0] - 1.5).abs() < 1e-6);
        let tr = prop.evolve(&mut sys, 0.01, 50, 10, 0).unwrap();
        assert!(tr.centers.iter().all(|r| norm3(*r) < 1e-10));
        assert!(tr.norms.iter().all(|n| (n - 1.0).abs() < 1e-12));
        let mid = sys.charges[0].clone();
        prop.step(&mut sys, 0.01).unwrap();
        let res = prop.continuity_residual(&mid, &sys.charges[0], 0.01);
        assert!(res < 1e-6, "{res}");
    }

    #[test]
    fn linear_potential_parabola() {
        let e0 = [0.5, 0.0, 0.0];
        let mut sys = gausson_system(32, 8.0, [-1.0, 0.0, 0.0], [0.0; 3], ExternalField::linear(e0, 0.0));
        let mut prop = Propagator::new(sys.grid);
        let tr = prop.evolve(&mut sys, 0.01, 200, 200, 0).unwrap();
        let t = tr.times[1];
        let want = -1.0 + 0.5 * 0.5 * t * t;
        assert!((tr.centers[1][0] - want).abs() < 1e-6, "{} {}", tr.centers[1][0], want);
        assert!((tr.velocities[1][0] - 0.5 * t).abs() < 1e-6);
    }

    #[test]
    fn nan_restores_state() {
        let mut sys = gausson_system(16, 6.0, [0.0; 3], [0.0; 3], ExternalField::none());
        sys.charges[0].psi[5] = Complex64::new(f64::NAN, 0.0);
        let snapshot = sys.charges[0].psi.clone();
        let mut prop = Propagator::new(sys.grid);
        assert!(matches!(prop.step(&mut sys, 0.01), Err(DynamicsError::NonFinite { .. })));
        assert!(sys.charges[0].psi[5].re.is_nan());
        assert_eq!(sys.charges[0].psi[0], snapshot[0]);
        assert_eq!(sys.t, 0.0);
    }
}
