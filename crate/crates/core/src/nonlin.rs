//! Self-interaction nonlinearities built from ground-state form factors.
//!
//! A form factor ψ̊₁ fixes G′₁ through the equilibrium condition
//! `−∇²ψ̊₁ + G′₁(ψ̊₁²)ψ̊₁ = 0`; the size parameter enters as
//! `G′_a(s) = a⁻² G′₁(a³s)` and `G_a(s) = a⁻⁵ G₁(a³s)`.

use crate::fields::RadialGrid;
use crate::interp::Pchip;
use crate::quad;
use crate::special::expint;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlinError {
    #[error("size parameter a must be positive and finite, got {0}")]
    NonPositiveSize(f64),
    #[error("negative argument s = {0}")]
    NegativeArgument(f64),
    #[error("regularization level xi must be <= 0, got {0}")]
    BadXi(f64),
    #[error("the exponential family has no closed form above its peak density")]
    NoClosedExtension,
    #[error("form factor samples not strictly decreasing near r = {0}")]
    NonMonotone(f64),
    #[error("grid too short for tabulation ({0} usable nodes)")]
    ShortGrid(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FormFactorKind {
    PowerLaw,
    Exponential,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormFactorSpec {
    pub kind: FormFactorKind,
    pub a: f64,
}

/// `c_pw = √3/√(4π)`.
pub fn c_pw() -> f64 {
    (3.0 / (4.0 * PI)).sqrt()
}

/// `C_g = π^{−3/4}`.
pub fn c_g() -> f64 {
    PI.powf(-0.75)
}

/// Normalization of `e^{−√(r²+1)}`, by adaptive quadrature (cached).
pub fn c_e() -> f64 {
    static CE: OnceLock<f64> = OnceLock::new();
    *CE.get_or_init(|| {
        let i = quad::integrate_to_inf(|r| r * r * (-2.0 * (r * r + 1.0).sqrt()).exp(), 0.0, 1e-13);
        (4.0 * PI * i).powf(-0.5)
    })
}

fn check_a(a: f64) -> Result<(), NonlinError> {
    if a > 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(NonlinError::NonPositiveSize(a))
    }
}

impl FormFactorSpec {
    pub fn new(kind: FormFactorKind, a: f64) -> Result<Self, NonlinError> {
        check_a(a)?;
        Ok(Self { kind, a })
    }

    /// ψ̊₁ at unit size.
    pub fn unit_profile(kind: FormFactorKind, r: f64) -> f64 {
        match kind {
            FormFactorKind::PowerLaw => c_pw() * (1.0 + r * r).powf(-1.25),
            FormFactorKind::Exponential => c_e() * (-(r * r + 1.0).sqrt()).exp(),
            FormFactorKind::Gaussian => c_g() * (-0.5 * r * r).exp(),
        }
    }

    /// `ψ̊_a(r) = a^{−3/2} ψ̊₁(r/a)`; even in `r`.
    pub fn eval(&self, r: f64) -> f64 {
        self.a.powf(-1.5) * Self::unit_profile(self.kind, r / self.a)
    }

    /// `dψ̊₁/dr` at unit size.
    pub fn unit_derivative(kind: FormFactorKind, r: f64) -> f64 {
        let p = Self::unit_profile(kind, r);
        match kind {
            FormFactorKind::PowerLaw => -2.5 * r * p / (1.0 + r * r),
            FormFactorKind::Exponential => -r * p / (r * r + 1.0).sqrt(),
            FormFactorKind::Gaussian => -r * p,
        }
    }

    /// `dψ̊_a/dr`.
    pub fn derivative(&self, r: f64) -> f64 {
        self.a.powf(-2.5) * Self::unit_derivative(self.kind, r / self.a)
    }

    /// Radial Laplacian `ψ̊″ + 2ψ̊′/r` by fourth-order differences of the closed form.
    pub fn laplacian(&self, r: f64) -> f64 {
        let h = 1e-3 * self.a;
        let f = |x: f64| self.eval(x);
        let (fm2, fm1, f0, fp1, fp2) = (f(r - 2.0 * h), f(r - h), f(r), f(r + h), f(r + 2.0 * h));
        let d2 = (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * h * h);
        if r == 0.0 {
            return 3.0 * d2;
        }
        let d1 = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h);
        d2 + 2.0 * d1 / r
    }
}

/// Validated form-factor evaluation.
pub fn eval_form_factor(spec: FormFactorSpec, r: f64) -> Result<f64, NonlinError> {
    check_a(spec.a)?;
    if r < 0.0 {
        return Err(NonlinError::NegativeArgument(r));
    }
    Ok(spec.eval(r))
}

/// Regularization level ξ ∈ [−∞, 0].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Xi {
    NegInfinity,
    Finite(f64),
}

impl Xi {
    pub fn finite(x: f64) -> Result<Self, NonlinError> {
        if x <= 0.0 && x.is_finite() {
            Ok(Xi::Finite(x))
        } else {
            Err(NonlinError::BadXi(x))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Xi::NegInfinity => f64::NEG_INFINITY,
            Xi::Finite(x) => x,
        }
    }
}

/// `max(ln s, ξ)`, with `ln₊,ξ(0) = ξ`.
pub fn ln_plus(xi: Xi, s: f64) -> f64 {
    match xi {
        Xi::NegInfinity => s.ln(),
        Xi::Finite(x) => {
            if s <= 0.0 {
                x
            } else {
                s.ln().max(x)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NonlinearityKind {
    PowerLaw,
    Exponential,
    LogGaussian,
}

/// Rule for `s ≥ ψ̊₁²(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Extension {
    ConstantAbovePeak,
    ClosedFormEverywhere,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nonlinearity {
    pub kind: NonlinearityKind,
    pub a: f64,
    pub xi: Xi,
    pub extension: Extension,
}

impl Nonlinearity {
    /// ξ = −∞; closed form everywhere for the log family, constant above the peak otherwise.
    pub fn new(kind: NonlinearityKind, a: f64) -> Result<Self, NonlinError> {
        check_a(a)?;
        let extension = match kind {
            NonlinearityKind::LogGaussian => Extension::ClosedFormEverywhere,
            _ => Extension::ConstantAbovePeak,
        };
        Ok(Self { kind, a, xi: Xi::NegInfinity, extension })
    }

    /// Logarithmic nonlinearity `G_{/κ,ξ}` with `a = 1/κ`.
    pub fn log_kappa(kappa: f64, xi: Xi) -> Result<Self, NonlinError> {
        Self::new(NonlinearityKind::LogGaussian, 1.0 / kappa)?.with_xi(xi)
    }

    pub fn from_form_factor(spec: FormFactorSpec) -> Result<Self, NonlinError> {
        let kind = match spec.kind {
            FormFactorKind::PowerLaw => NonlinearityKind::PowerLaw,
            FormFactorKind::Exponential => NonlinearityKind::Exponential,
            FormFactorKind::Gaussian => NonlinearityKind::LogGaussian,
        };
        Self::new(kind, spec.a)
    }

    pub fn form_factor(&self) -> FormFactorSpec {
        let kind = match self.kind {
            NonlinearityKind::PowerLaw => FormFactorKind::PowerLaw,
            NonlinearityKind::Exponential => FormFactorKind::Exponential,
            NonlinearityKind::LogGaussian => FormFactorKind::Gaussian,
        };
        FormFactorSpec { kind, a: self.a }
    }

    pub fn with_xi(mut self, xi: Xi) -> Result<Self, NonlinError> {
        if let Xi::Finite(x) = xi {
            Xi::finite(x)?;
        }
        self.xi = xi;
        Ok(self)
    }

    pub fn with_extension(mut self, extension: Extension) -> Result<Self, NonlinError> {
        if self.kind == NonlinearityKind::Exponential && extension == Extension::ClosedFormEverywhere {
            return Err(NonlinError::NoClosedExtension);
        }
        self.extension = extension;
        Ok(self)
    }

    pub fn kappa(&self) -> f64 {
        1.0 / self.a
    }

    /// ψ̊₁(0)², the unit-size peak density.
    pub fn unit_peak(&self) -> f64 {
        match self.kind {
            NonlinearityKind::PowerLaw => c_pw().powi(2),
            NonlinearityKind::Exponential => c_e().powi(2) * (-2.0f64).exp(),
            NonlinearityKind::LogGaussian => c_g().powi(2),
        }
    }

    fn above_peak(&self, s1: f64) -> bool {
        self.extension == Extension::ConstantAbovePeak && s1 > self.unit_peak()
    }

    fn log_xi(&self, xi_num: f64) -> Xi {
        match self.xi {
            Xi::NegInfinity if xi_num.is_finite() => Xi::Finite(xi_num),
            Xi::Finite(x) if x < xi_num => Xi::Finite(xi_num),
            xi => xi,
        }
    }

    fn gp1(&self, s1: f64, xi: Xi) -> f64 {
        let peak = self.unit_peak();
        let s1 = if self.above_peak(s1) { peak } else { s1 };
        match self.kind {
            NonlinearityKind::LogGaussian => -ln_plus(xi, s1 / peak) - 3.0,
            NonlinearityKind::PowerLaw => {
                let x = (s1 / peak).powf(0.4);
                3.75 * x - 11.25 * x * x
            }
            NonlinearityKind::Exponential => {
                if s1 <= 0.0 {
                    return 1.0;
                }
                let l = (c_e().powi(2) / s1).ln();
                1.0 - 4.0 / l - 4.0 / (l * l) - 8.0 / (l * l * l)
            }
        }
    }

    fn g1(&self, s1: f64) -> f64 {
        if s1 <= 0.0 {
            return 0.0;
        }
        let peak = self.unit_peak();
        if self.above_peak(s1) {
            return self.g1(peak) + self.gp1(peak, self.xi) * (s1 - peak);
        }
        match self.kind {
            NonlinearityKind::LogGaussian => match self.xi {
                Xi::NegInfinity => -s1 * (s1 / peak).ln() - 2.0 * s1,
                Xi::Finite(x) => {
                    let s0 = x.exp() * peak;
                    if s1 <= s0 {
                        -(x + 3.0) * s1
                    } else {
                        -s1 * (s1 / peak).ln() - 2.0 * s1 - s0
                    }
                }
            },
            NonlinearityKind::PowerLaw => {
                let x = (s1 / peak).powf(0.4);
                s1 * (75.0 / 28.0 * x - 6.25 * x * x)
            }
            NonlinearityKind::Exponential => {
                let c2 = c_e().powi(2);
                let l = (c2 / s1).ln();
                s1 - 4.0 * c2 * expint(1, l) - 4.0 * c2 * expint(2, l) / l - 8.0 * c2 * expint(3, l) / (l * l)
            }
        }
    }

    /// `s·G″₁(s)` at unit size.
    fn sgpp1(&self, s1: f64, xi: Xi) -> f64 {
        if s1 <= 0.0 || self.above_peak(s1) {
            return 0.0;
        }
        let peak = self.unit_peak();
        match self.kind {
            NonlinearityKind::LogGaussian => {
                if ln_plus(xi, s1 / peak) > (s1 / peak).ln() {
                    0.0
                } else {
                    -1.0
                }
            }
            NonlinearityKind::PowerLaw => {
                let x = (s1 / peak).powf(0.4);
                1.5 * x - 9.0 * x * x
            }
            NonlinearityKind::Exponential => {
                let l = (c_e().powi(2) / s1).ln();
                -(4.0 / (l * l) + 8.0 / (l * l * l) + 24.0 / (l * l * l * l))
            }
        }
    }

    /// `G′_a(s)`; `+∞` for the unregularized log at `s = 0`.
    pub fn gprime(&self, s: f64) -> f64 {
        self.a.powi(-2) * self.gp1(self.a.powi(3) * s, self.xi)
    }

    /// `G′_a(s)` with the log clamped at `max(ξ, xi_num)`; a numerical guard for empty cells.
    pub fn gprime_floored(&self, s: f64, xi_num: f64) -> f64 {
        self.a.powi(-2) * self.gp1(self.a.powi(3) * s, self.log_xi(xi_num))
    }

    /// `G_a(s)` with `G_a(0) = 0`.
    pub fn antiderivative(&self, s: f64) -> f64 {
        self.a.powi(-5) * self.g1(self.a.powi(3) * s)
    }

    /// `d/dψ [G′(ψ²)ψ]` for real ψ, i.e. `G′(s) + 2sG″(s)`.
    pub fn dg_real(&self, s: f64, xi_num: f64) -> f64 {
        let xi = self.log_xi(xi_num);
        let s1 = self.a.powi(3) * s;
        self.a.powi(-2) * (self.gp1(s1, xi) + 2.0 * self.sgpp1(s1, xi))
    }

    /// `g(ψ) = G′(|ψ|²)ψ` with `g(0) = 0`.
    pub fn g(&self, psi: Complex64) -> Complex64 {
        let s = psi.norm_sqr();
        if s == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        psi * self.gprime(s)
    }
}

pub fn eval_gprime(nl: &Nonlinearity, s: f64) -> Result<f64, NonlinError> {
    if s < 0.0 {
        return Err(NonlinError::NegativeArgument(s));
    }
    Ok(nl.gprime(s))
}

pub fn eval_big_g(nl: &Nonlinearity, s: f64) -> Result<f64, NonlinError> {
    if s < 0.0 {
        return Err(NonlinError::NegativeArgument(s));
    }
    Ok(nl.antiderivative(s))
}

pub fn eval_g(nl: &Nonlinearity, psi: Complex64) -> Complex64 {
    nl.g(psi)
}

/// `max_r |−∇²ψ̊_a + G′_a(ψ̊_a²)ψ̊_a|` over the grid nodes.
pub fn equilibrium_residual(nl: &Nonlinearity, grid: &RadialGrid) -> f64 {
    let spec = nl.form_factor();
    grid.r()
        .iter()
        .map(|&r| {
            let p = spec.eval(r);
            (-spec.laplacian(r) + nl.gprime(p * p) * p).abs()
        })
        .fold(0.0, f64::max)
}

/// `G′` tabulated from a sampled form factor.
#[derive(Debug, Clone)]
pub struct TabulatedNonlinearity {
    spec: FormFactorSpec,
    gp: Pchip,
    g_nodes: Vec<f64>,
    tail_p: f64,
}

const GL5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Tabulates `G′_a` from `∇²ψ̊_a/ψ̊_a` on the grid nodes, inverted through `s = ψ̊_a²(r)`.
pub fn build_gprime_numeric(spec: FormFactorSpec, grid: &RadialGrid) -> Result<TabulatedNonlinearity, NonlinError> {
    check_a(spec.a)?;
    let mut ln_s = Vec::new();
    let mut gp = Vec::new();
    let mut prev = f64::INFINITY;
    for &r in grid.r() {
        let p = spec.eval(r);
        let s = p * p;
        if s < 1e-280 {
            break;
        }
        if s >= prev {
            return Err(NonlinError::NonMonotone(r));
        }
        prev = s;
        ln_s.push(s.ln());
        gp.push(spec.laplacian(r) / p);
    }
    if ln_s.len() < 4 {
        return Err(NonlinError::ShortGrid(ln_s.len()));
    }
    ln_s.reverse();
    gp.reverse();
    let gp = Pchip::new(ln_s, gp).ok_or(NonlinError::NonMonotone(0.0))?;
    let u = gp.x();
    // local power law G′ ∝ s^p below the last sample
    let y = gp.y();
    let tail_p = if y[0] * y[1] > 0.0 { ((y[1] / y[0]).ln() / (u[1] - u[0])).max(-0.5) } else { 0.0 };
    let mut g_nodes = Vec::with_capacity(u.len());
    g_nodes.push(y[0] * u[0].exp() / (1.0 + tail_p));
    for i in 0..u.len() - 1 {
        let acc = g_nodes[i] + interval_integral(&gp, i, u[i], u[i + 1]);
        g_nodes.push(acc);
    }
    Ok(TabulatedNonlinearity { spec, gp, g_nodes, tail_p })
}

fn interval_integral(gp: &Pchip, i: usize, lo: f64, hi: f64) -> f64 {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    GL5.iter()
        .map(|&(x, w)| {
            let t = c + h * x;
            w * gp.eval_in(i, t) * t.exp()
        })
        .sum::<f64>()
        * h
}

impl TabulatedNonlinearity {
    pub fn spec(&self) -> FormFactorSpec {
        self.spec
    }

    fn s_peak(&self) -> f64 {
        self.gp.x().last().unwrap().exp()
    }

    /// Interpolated `G′_a(s)`; held constant above the peak and below the last sample.
    pub fn gprime(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return self.gp.y()[0];
        }
        self.gp.eval(s.ln())
    }

    /// `∫₀^s G′`.
    pub fn antiderivative(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let u = self.gp.x();
        let n = u.len();
        let t = s.ln();
        if t <= u[0] {
            return self.g_nodes[0] * (s / u[0].exp()).powf(1.0 + self.tail_p);
        }
        if t >= u[n - 1] {
            return self.g_nodes[n - 1] + self.gp.y()[n - 1] * (s - self.s_peak());
        }
        let i = u.partition_point(|&v| v <= t) - 1;
        self.g_nodes[i] + interval_integral(&self.gp, i, u[i], t)
    }

    /// Rows `(s, G′, G)` at the tabulation nodes, ascending in `s`.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        self.gp
            .x()
            .iter()
            .zip(self.gp.y())
            .zip(&self.g_nodes)
            .map(|((&u, &gp), &g)| (u.exp(), gp, g))
            .collect()
    }
}
