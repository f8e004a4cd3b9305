//! Flat experiment configuration: one TOML table, flags overlaid key by key.

use serde::{Deserialize, Serialize};
use std::path::Path;
use wavecorpuscle::nonlin::{FormFactorKind, Xi};

use crate::CliError;

/// `xi = -inf` (TOML float), `xi = "-inf"`, or a finite level `<= 0`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum XiValue {
    Level(f64),
    Text(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,

    // constants
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,

    // form factor
    #[serde(skip_serializing_if = "Option::is_none")]
    pub form_factor: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_values: Option<Vec<f64>>,

    // radial eigenproblem
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<XiValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radial_nodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixing: Option<f64>,

    // gap scan
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_points: Option<usize>,

    // Cartesian grid and time stepping
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_halving: Option<bool>,

    // external field
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_harmonic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<f64>,

    // two-particle
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_e: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_p: Option<f64>,

    // tabulation and radial Poisson
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_nodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_r_max: Option<f64>,
}

fn schema(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Schema(format!("{field}: {msg}"))
}

/// Reads the file (if any), overlays `overrides` key by key, and checks the result
/// against the strict schema.
pub fn load(path: Option<&Path>, overrides: toml::Table) -> Result<Config, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>().map_err(|e| CliError::Schema(format!("{}: {}", p.display(), e.message())))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        table.insert(k, v);
    }
    let mut cfg: Config = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Schema(e.message().to_string()))?;
    if let Some(XiValue::Level(x)) = cfg.xi {
        if x == f64::NEG_INFINITY {
            cfg.xi = Some(XiValue::Text("-inf".into()));
        }
    }
    Ok(cfg)
}

pub fn positive(field: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(schema(field, format!("must be positive and finite, got {v}")))
    }
}

pub fn in_range(field: &str, v: f64, lo: f64, hi: f64) -> Result<f64, CliError> {
    if v >= lo && v <= hi {
        Ok(v)
    } else {
        Err(schema(field, format!("must lie in [{lo}, {hi}], got {v}")))
    }
}

pub fn at_least(field: &str, v: usize, lo: usize) -> Result<usize, CliError> {
    if v >= lo {
        Ok(v)
    } else {
        Err(schema(field, format!("must be >= {lo}, got {v}")))
    }
}

pub fn vec3(field: &str, v: &Option<Vec<f64>>, default: [f64; 3]) -> Result<[f64; 3], CliError> {
    match v {
        None => Ok(default),
        Some(x) if x.len() == 3 && x.iter().all(|c| c.is_finite()) => Ok([x[0], x[1], x[2]]),
        Some(x) => Err(schema(field, format!("must be 3 finite numbers, got {x:?}"))),
    }
}

pub fn power_of_two(field: &str, v: usize) -> Result<usize, CliError> {
    if v >= 16 && v.is_power_of_two() {
        Ok(v)
    } else {
        Err(schema(field, format!("must be a power of two >= 16, got {v}")))
    }
}

impl Config {
    pub fn xi(&self) -> Result<Xi, CliError> {
        match &self.xi {
            None => Ok(Xi::NegInfinity),
            Some(XiValue::Text(t)) if t.trim() == "-inf" => Ok(Xi::NegInfinity),
            Some(XiValue::Text(t)) => Err(schema("xi", format!("expected a number <= 0 or \"-inf\", got {t:?}"))),
            Some(XiValue::Level(x)) => Xi::finite(*x).map_err(|_| schema("xi", format!("must be <= 0, got {x}"))),
        }
    }

    pub fn form_factor_kind(&self) -> Result<FormFactorKind, CliError> {
        match self.form_factor.as_deref().unwrap_or("gaussian") {
            "power_law" => Ok(FormFactorKind::PowerLaw),
            "exponential" => Ok(FormFactorKind::Exponential),
            "gaussian" => Ok(FormFactorKind::Gaussian),
            other => Err(schema("form_factor", format!("expected power_law, exponential or gaussian, got {other:?}"))),
        }
    }

    pub fn a(&self) -> Result<f64, CliError> {
        positive("a", self.a.unwrap_or(1.0))
    }

    pub fn chi(&self) -> Result<f64, CliError> {
        positive("chi", self.chi.unwrap_or(1.0))
    }

    pub fn m(&self) -> Result<f64, CliError> {
        positive("m", self.m.unwrap_or(1.0))
    }

    pub fn q(&self) -> Result<f64, CliError> {
        let q = self.q.unwrap_or(1.0);
        if q.is_finite() {
            Ok(q)
        } else {
            Err(schema("q", "must be finite"))
        }
    }

    pub fn kappa(&self, default: f64) -> Result<f64, CliError> {
        in_range("kappa", self.kappa.unwrap_or(default), 0.0, 1.0)
    }

    pub fn check_experiment(&self, name: &str) -> Result<(), CliError> {
        match &self.experiment {
            Some(e) if e != name => Err(schema("experiment", format!("config is for {e:?} but the subcommand is {name:?}"))),
            _ => Ok(()),
        }
    }
}
