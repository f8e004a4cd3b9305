use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod config;
mod output;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Schema(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "wavecorpuscle", version, about = "Wave-corpuscle charge mechanics experiments")]
struct Cli {
    /// TOML experiment file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Seed for perturbed initial data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel loops and sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Serialize, Default)]
struct EigenFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    /// Regularization level (<= 0) or -inf.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    xi: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    radial_nodes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    r_scale: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    r_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tol_residual: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iter: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mixing: Option<f64>,
}

#[derive(Args, Debug, Serialize, Default)]
struct PhysFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    chi: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    /// power_law, exponential or gaussian
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    form_factor: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
}

#[derive(Args, Debug, Serialize, Default)]
struct StepFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_n: Option<usize>,
    /// Box half-width L.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    box_l: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_end: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
}

#[derive(Args, Debug, Serialize, Default)]
struct FieldFlags {
    /// none, linear, harmonic or quartic
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    external: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    e0: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    phi0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    k_harmonic: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    r0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    v0: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Nonlinear hydrogen ground state by gradient flow.
    Ground {
        #[command(flatten)]
        eigen: EigenFlags,
        #[command(flatten)]
        extra: SweepKappa,
    },
    /// Lowest radial levels at one kappa.
    Spectrum {
        #[command(flatten)]
        eigen: EigenFlags,
        #[command(flatten)]
        extra: SpectrumFlags,
    },
    /// Fixed-omega residual floor between two levels.
    GapScan {
        #[command(flatten)]
        eigen: EigenFlags,
        #[command(flatten)]
        extra: GapFlags,
    },
    /// Split-step evolution of one charge in an external field.
    Dynamics {
        #[command(flatten)]
        phys: PhysFlags,
        #[command(flatten)]
        step: StepFlags,
        #[command(flatten)]
        field: FieldFlags,
        #[command(flatten)]
        extra: DynamicsFlags,
    },
    /// Exact wave-corpuscle in a linear potential against the integrator.
    SolitonVerify {
        #[command(flatten)]
        phys: PhysFlags,
        #[command(flatten)]
        step: StepFlags,
        #[command(flatten)]
        field: FieldFlags,
        #[command(flatten)]
        extra: SolitonFlags,
    },
    /// PDE charge center against the Newton trajectory for decreasing a.
    NewtonLimit {
        #[command(flatten)]
        phys: PhysFlags,
        #[command(flatten)]
        step: StepFlags,
        #[command(flatten)]
        field: FieldFlags,
        #[command(flatten)]
        extra: NewtonFlags,
    },
    /// Electron-proton self-consistent field and the proton-size correction.
    TwoParticle {
        #[command(flatten)]
        extra: TwoParticleFlags,
    },
    /// Tabulated nonlinearity from a form factor, against the closed form.
    NonlinTable {
        #[command(flatten)]
        phys: PhysFlags,
        #[command(flatten)]
        extra: TableFlags,
    },
    /// Radial and Cartesian Poisson solvers against erf(r)/r.
    PoissonTest {
        #[command(flatten)]
        extra: PoissonFlags,
    },
}

#[derive(Args, Debug, Serialize, Default)]
struct SweepKappa {
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa_values: Option<Vec<f64>>,
}

#[derive(Args, Debug, Serialize, Default)]
struct SpectrumFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa_values: Option<Vec<f64>>,
}

#[derive(Args, Debug, Serialize, Default)]
struct GapFlags {
    /// Lower level of the gap.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    c4: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    omega_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    omega_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    omega_points: Option<usize>,
}

#[derive(Args, Debug, Serialize, Default)]
struct DynamicsFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    snapshot_stride: Option<usize>,
    /// Amplitude of seeded random noise added to the initial state.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbation: Option<f64>,
}

#[derive(Args, Debug, Serialize, Default)]
struct SolitonFlags {
    /// Also run at dt/2 and report the error ratio.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt_halving: Option<bool>,
}

#[derive(Args, Debug, Serialize, Default)]
struct NewtonFlags {
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    a_values: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    margin: Option<f64>,
}

#[derive(Args, Debug, Serialize, Default)]
struct TwoParticleFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    b_values: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa_e: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa_p: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    xi: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tol_residual: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iter: Option<usize>,
}

#[derive(Args, Debug, Serialize, Default)]
struct TableFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    table_nodes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    table_r_max: Option<f64>,
}

#[derive(Args, Debug, Serialize, Default)]
struct PoissonFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    radial_nodes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    r_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    box_l: Option<f64>,
}

#[derive(Serialize)]
struct Globals {
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
}

fn table_of<T: Serialize>(parts: &[&T]) -> Result<toml::Table, CliError> {
    let mut out = toml::Table::new();
    for p in parts {
        match toml::Value::try_from(p).map_err(|e| CliError::Schema(e.to_string()))? {
            toml::Value::Table(t) => out.extend(t),
            _ => unreachable!("flag groups serialize to tables"),
        }
    }
    Ok(out)
}

fn overrides(cli: &Cli) -> Result<(&'static str, toml::Table), CliError> {
    let mut t = table_of(&[&Globals { out: cli.out.clone(), seed: cli.seed, threads: cli.threads }])?;
    let (name, rest) = match &cli.command {
        Command::Ground { eigen, extra } => ("ground", vec![table_of(&[eigen])?, table_of(&[extra])?]),
        Command::Spectrum { eigen, extra } => ("spectrum", vec![table_of(&[eigen])?, table_of(&[extra])?]),
        Command::GapScan { eigen, extra } => ("gap-scan", vec![table_of(&[eigen])?, table_of(&[extra])?]),
        Command::Dynamics { phys, step, field, extra } => ("dynamics", vec![table_of(&[phys])?, table_of(&[step])?, table_of(&[field])?, table_of(&[extra])?]),
        Command::SolitonVerify { phys, step, field, extra } => ("soliton-verify", vec![table_of(&[phys])?, table_of(&[step])?, table_of(&[field])?, table_of(&[extra])?]),
        Command::NewtonLimit { phys, step, field, extra } => ("newton-limit", vec![table_of(&[phys])?, table_of(&[step])?, table_of(&[field])?, table_of(&[extra])?]),
        Command::TwoParticle { extra } => ("two-particle", vec![table_of(&[extra])?]),
        Command::NonlinTable { phys, extra } => ("nonlin-table", vec![table_of(&[phys])?, table_of(&[extra])?]),
        Command::PoissonTest { extra } => ("poisson-test", vec![table_of(&[extra])?]),
    };
    for part in rest {
        t.extend(part);
    }
    Ok((name, t))
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    let Some(n) = threads else { return Ok(()) };
    config::at_least("threads", n, 1)?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let (name, over) = overrides(cli)?;
    let cfg = config::load(cli.config.as_deref(), over)?;
    cfg.check_experiment(name)?;
    configure_threads(cfg.threads)?;
    let out = output::OutDir::create(cfg.out.clone().unwrap_or_else(|| format!("out/{name}")))?;
    match name {
        "ground" => commands::ground(&cfg, &out),
        "spectrum" => commands::spectrum(&cfg, &out),
        "gap-scan" => commands::gap_scan(&cfg, &out),
        "dynamics" => commands::dynamics(&cfg, &out),
        "soliton-verify" => commands::soliton_verify(&cfg, &out),
        "newton-limit" => commands::newton_limit(&cfg, &out),
        "two-particle" => commands::two_particle(&cfg, &out),
        "nonlin-table" => commands::nonlin_table(&cfg, &out),
        "poisson-test" => commands::poisson_test(&cfg, &out),
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
