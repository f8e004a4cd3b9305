use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::f64::consts::PI;

use wavecorpuscle::dynamics::{self, ChargeState, DynamicsError, ExternalField, NewtonLimitSetup, Propagator, SystemState, Trajectory};
use wavecorpuscle::eigensolver::{self as eig, EigenConfig, EigenError, EigenSolution, TwoParticleConfig};
use wavecorpuscle::fields::{poisson_radial, write_snapshot, CartesianGrid, FieldError, PoissonSolver, RadialGrid, SnapshotData};
use wavecorpuscle::nonlin::{build_gprime_numeric, equilibrium_residual, FormFactorSpec, NonlinError, Nonlinearity, Xi};
use wavecorpuscle::soliton::{self, SolitonError};
use wavecorpuscle::Complex64;

use crate::config::{at_least, in_range, positive, power_of_two, vec3, Config};
use crate::output::{num, summary, OutDir};
use crate::CliError;

fn eig_err(e: EigenError) -> CliError {
    match e {
        EigenError::Config(m) => CliError::Schema(m),
        EigenError::DeltaTooSmall { delta, required } => CliError::Schema(format!("delta: {delta} is below the required {required}")),
        EigenError::ScaleMismatch(m) => CliError::Schema(format!("radial grids: {m}")),
        EigenError::Field(FieldError::Grid(m)) => CliError::Schema(format!("radial grid: {m}")),
        other => CliError::Numerical(other.to_string()),
    }
}

fn dyn_err(e: DynamicsError) -> CliError {
    match e {
        DynamicsError::TimeStep { dt, bound } => CliError::Schema(format!("dt: {dt} exceeds the stability bound {bound}")),
        DynamicsError::Setup(m) => CliError::Schema(m),
        DynamicsError::InconsistentField(d) => CliError::Schema(format!("external: E and -grad phi differ by {d}")),
        DynamicsError::Field(FieldError::Grid(m)) => CliError::Schema(format!("grid: {m}")),
        DynamicsError::Nonlin(e) => nl_err(e),
        other => CliError::Numerical(other.to_string()),
    }
}

fn nl_err(e: NonlinError) -> CliError {
    match e {
        NonlinError::NonPositiveSize(a) => CliError::Schema(format!("a: must be positive, got {a}")),
        NonlinError::BadXi(x) => CliError::Schema(format!("xi: must be <= 0, got {x}")),
        other => CliError::Numerical(other.to_string()),
    }
}

fn sol_err(e: SolitonError) -> CliError {
    match e {
        SolitonError::NonAffine { curvature } => CliError::Schema(format!("external: potential is not affine (second difference {curvature:e})")),
        SolitonError::Setup(m) => CliError::Schema(m),
        SolitonError::Dynamics(e) => dyn_err(e),
        SolitonError::Nonlin(e) => nl_err(e),
        other => CliError::Numerical(other.to_string()),
    }
}

fn field_err(e: FieldError) -> CliError {
    match e {
        FieldError::Grid(m) => CliError::Schema(m),
        other => CliError::Numerical(other.to_string()),
    }
}

fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
}

/// Runs `point` once per value in its own subdirectory and writes `index.json`.
fn sweep(
    command: &str,
    cfg: &Config,
    out: &OutDir,
    key: &str,
    values: &[f64],
    set: impl Fn(&mut Config, f64) + Sync + Send,
    point: impl Fn(&Config, &OutDir) -> Result<Value, CliError> + Sync + Send,
) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::Schema(format!("{key}_values: must not be empty")));
    }
    let results = par_map(values, |i, &v| {
        let name = format!("point_{i:03}");
        let mut c = cfg.clone();
        set(&mut c, v);
        let r = out.sub(&name).and_then(|o| point(&c, &o));
        (name, v, r)
    });
    let mut failures = Vec::new();
    let points: Vec<Value> = results
        .iter()
        .enumerate()
        .map(|(i, (name, v, r))| match r {
            Ok(headline) => json!({"index": i, key: v, "dir": name, "status": "ok", "headline": headline}),
            Err(e) => {
                failures.push(format!("{name}: {e}"));
                json!({"index": i, key: v, "dir": name, "status": "error", "error": e.to_string(), "exit_code": match e { CliError::Schema(_) => 2, CliError::Numerical(_) => 3, CliError::Io(_) => 1 }})
            }
        })
        .collect();
    out.write_json(
        "index.json",
        &json!({"schema_version": crate::output::SCHEMA_VERSION, "command": command, "sweep_key": key, "parameters": serde_json::to_value(cfg).unwrap_or(Value::Null), "points": points}),
    )?;
    if let Some(first) = results.iter().find_map(|(_, _, r)| r.as_ref().err()) {
        return Err(match first {
            CliError::Schema(_) => CliError::Schema(failures.join("; ")),
            CliError::Numerical(_) => CliError::Numerical(failures.join("; ")),
            CliError::Io(_) => CliError::Io(failures.join("; ")),
        });
    }
    Ok(())
}

fn eigen_config(cfg: &Config, kappa: f64, n: usize) -> Result<EigenConfig, CliError> {
    let mut c = EigenConfig::new(kappa, n).map_err(eig_err)?;
    let default_rmax = c.grid.r_max();
    if cfg.radial_nodes.is_some() || cfg.r_scale.is_some() || cfg.r_max.is_some() {
        let nodes = at_least("radial_nodes", cfg.radial_nodes.unwrap_or(10_001), 64)?;
        let beta = positive("r_scale", cfg.r_scale.unwrap_or(0.01))?;
        let r_max = positive("r_max", cfg.r_max.unwrap_or(default_rmax))?;
        c.grid = RadialGrid::log_stretched(nodes, beta, r_max).map_err(field_err)?;
    }
    c.xi = cfg.xi()?;
    if let Some(t) = cfg.tol_residual {
        c.tol_residual = positive("tol_residual", t)?;
    }
    if let Some(m) = cfg.max_iter {
        c.max_iter = at_least("max_iter", m, 1)?;
    }
    if let Some(m) = cfg.mixing {
        c.mixing = in_range("mixing", m, f64::MIN_POSITIVE, 1.0)?;
    }
    Ok(c)
}

fn xi_json(xi: Xi) -> Value {
    num(xi.value())
}

fn grid_json(g: &RadialGrid) -> Value {
    json!({"nodes": g.len(), "r_max": g.r_max(), "first_spacing": g.r()[1]})
}

fn profile_rows(sol: &EigenSolution) -> Vec<Vec<f64>> {
    sol.r.iter().zip(sol.psi()).map(|(&r, p)| vec![r, p]).collect()
}

fn level_json(s: &EigenSolution) -> Value {
    let n = s.n as f64;
    json!({
        "n": s.n,
        "kappa": s.kappa,
        "xi": xi_json(s.xi),
        "omega": s.omega,
        "E": s.energy,
        "residual": s.residual,
        "node_count": s.node_count,
        "decay_rate": s.decay_rate.map(num).unwrap_or(Value::Null),
        "converged": s.converged,
        "paper_target": -0.5 / (n * n),
        "deviation_from_linear": s.omega + 0.5 / (n * n),
    })
}

pub fn ground(cfg: &Config, out: &OutDir) -> Result<(), CliError> {
    match &cfg.kappa_values {
        Some(ks) => sweep("ground", cfg, out, "kappa", ks, |c, k| {
            c.kappa = Some(k);
            c.kappa_values = None;
        }, ground_point),
        None => ground_point(cfg, out).map(|_| ()),
    }
}

fn ground_point(cfg: &Config, out: &OutDir) -> Result<Value, CliError> {
    let kappa = cfg.kappa(0.1)?;
    let ec = eigen_config(cfg, kappa, 1)?;
    let sol = eig::solve_ground(&ec).map_err(eig_err)?;
    let op = eig::RadialOperator::new(&ec.grid).map_err(eig_err)?;
    let product = eig::product_ground_state(&ec.grid, kappa);
    let diff: Vec<f64> = sol.u.iter().zip(&product).map(|(a, b)| a - b).collect();
    let l2 = op.norm_sq(&diff).sqrt();
    let paper_target = -0.5 - kappa * kappa * 1.868;
    let decay = eig::decay_fit(&sol).ok();
    let results = json!({
        "omega": sol.omega,
        "energy": sol.energy,
        "energy_minus_omega": sol.energy - sol.omega,
        "residual": sol.residual,
        "node_count": sol.node_count,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "decay": decay.map(|f| json!({"exp_rate": f.exp_rate, "joint_rate": f.joint.0, "gaussian_coefficient": f.joint.1, "superexponential": f.superexponential(), "window": [f.window.0, f.window.1]})),
        "product_formula": {"omega": eig::product_ground_omega(kappa), "l2_distance": l2},
        "paper_target": paper_target,
        "deviation_from_paper_target": sol.omega - paper_target,
    });
    let resolved = json!({"kappa": kappa, "xi": xi_json(ec.xi), "grid": grid_json(&ec.grid), "tol_residual": ec.tol_residual, "max_iter": ec.max_iter, "mixing": ec.mixing});
    out.write_json(
        "summary.json",
        &summary("ground", cfg, resolved, &["nonlinear_ground_state_product_formula", "energy_equals_omega_plus_half_kappa_squared", "lagrange_multiplier_identity"], results),
    )?;
    out.write_csv("profile.csv", &["r", "Psi"], profile_rows(&sol))?;
    if !sol.converged {
        return Err(CliError::Numerical(format!("ground state not converged: residual {:e} after {} iterations", sol.residual, sol.iterations)));
    }
    Ok(json!({"omega": sol.omega, "residual": sol.residual}))
}

pub fn spectrum(cfg: &Config, out: &OutDir) -> Result<(), CliError> {
    match &cfg.kappa_values {
        Some(ks) => sweep("spectrum", cfg, out, "kappa", ks, |c, k| {
            c.kappa = Some(k);
            c.kappa_values = None;
        }, spectrum_point),
        None => spectrum_point(cfg, out).map(|_| ()),
    }
}

fn spectrum_point(cfg: &Config, out: &OutDir) -> Result<Value, CliError> {
    let kappa = cfg.kappa(0.0)?;
    let levels = cfg.levels.unwrap_or(3);
    if !(1..=5).contains(&levels) {
        return Err(CliError::Schema(format!("levels: must lie in 1..=5, got {levels}")));
    }
    let base = eigen_config(cfg, kappa, levels)?;
    let sols: Vec<EigenSolution> = if kappa == 0.0 {
        eig::linear_hydrogen_spectrum(&base.grid, levels).map_err(eig_err)?
    } else {
        let solved = par_map(&(1..=levels).collect::<Vec<_>>(), |_, &n| {
            let mut c = base.clone();
            c.n = n;
            eig::solve_level(&c)
        });
        solved.into_iter().collect::<Result<_, _>>().map_err(eig_err)?
    };
    let ordered = sols.windows(2).all(|p| p[0].omega < p[1].omega);
    let planck = if kappa > 0.0 { Some(eig::planck_einstein_check(&sols, 1.0, 1.0, 1.0 / kappa)) } else { None };
    let results = json!({
        "levels": sols.iter().map(level_json).collect::<Vec<_>>(),
        "ordered": ordered,
        "planck_einstein_deviation": planck,
    });
    let resolved = json!({"kappa": kappa, "levels": levels, "xi": xi_json(base.xi), "grid": grid_json(&base.grid), "tol_residual": base.tol_residual});
    out.write_json(
        "spectrum.json",
        &summary("spectrum", cfg, resolved, &["linear_coulomb_levels", "nonlinear_level_shift_bound", "planck_einstein_relation", "energy_offset_identity"], results),
    )?;
    for s in &sols {
        out.write_csv(&format!("profile_n{}.csv", s.n), &["r", "Psi"], profile_rows(s))?;
    }
    if let Some(bad) = sols.iter().find(|s| kappa > 0.0 && !s.converged) {
        return Err(CliError::Numerical(format!("level {} not converged: residual {:e}", bad.n, bad.residual)));
    }
    Ok(json!({"omegas": sols.iter().map(|s| s.omega).collect::<Vec<_>>()}))
}

pub fn gap_scan(cfg: &Config, out: &OutDir) -> Result<(), CliError> {
    let kappa = cfg.kappa(0.05)?;
    let n = cfg.n.unwrap_or(2);
    if !(1..=4).contains(&n) {
        return Err(CliError::Schema(format!("n: must lie in 1..=4, got {n}")));
    }
    let delta = positive("delta", cfg.delta.unwrap_or(0.01))?;
    let c4 = positive("c4", cfg.c4.unwrap_or(1.0))?;
    let nf = n as f64;
    let lo = cfg.omega_min.unwrap_or(-0.5 / (nf * nf) + delta);
    let hi = cfg.omega_max.unwrap_or(-0.5 / ((nf + 1.0) * (nf + 1.0)) - delta);
    let points = at_least("omega_points", cfg.omega_points.unwrap_or(11), 1)?;
    if !(lo <= hi) {
        return Err(CliError::Schema(format!("omega_min: {lo} exceeds omega_max {hi}")));
    }
    let omegas: Vec<f64> = (0..points).map(|i| if points == 1 { lo } else { lo + (hi - lo) * i as f64 / (points - 1) as f64 }).collect();
    let mut ec = eigen_config(cfg, kappa, n + 1)?;
    ec.n = n;
    let lower = eig::solve_level(&ec).map_err(eig_err)?;
    let mut upper_cfg = ec.clone();
    upper_cfg.n = n + 1;
    let upper = eig::solve_level(&upper_cfg).map_err(eig_err)?;
    let extra = [lower.u.clone(), upper.u.clone()];
    let scan = eig::gap_scan(&ec, &omegas, delta, c4, &extra).map_err(eig_err)?;
    let control = eig::gap_scan_unchecked(&ec, &[lower.omega], &extra).map_err(eig_err)?;
    let floor = scan.iter().map(|p| p.floor_residual).fold(f64::INFINITY, f64::min);
    let results = json!({
        "min_floor_residual": floor,
        "control": {"omega": lower.omega, "floor_residual": control[0].floor_residual},
        "neighbors": {"lower": lower.omega, "upper": upper.omega},
        "required_delta": c4 * kappa * kappa * (1.0 + kappa.ln().abs()),
        "points": scan.iter().map(|p| json!({"omega": p.omega, "floor_residual": p.floor_residual})).collect::<Vec<_>>(),
        "note": "a residual floor bounded away from zero is numerical evidence of no eigenvalue, not a proof",
    });
    let resolved = json!({"kappa": kappa, "n": n, "delta": delta, "c4": c4, "omega_min": lo, "omega_max": hi, "omega_points": points, "xi": xi_json(ec.xi), "grid": grid_json(&ec.grid), "starts": 5 + extra.len()});
    out.write_json("summary.json", &summary("gap-scan", cfg, resolved, &["gap_exclusion_between_levels", "gap_width_threshold"], results))?;
    out.write_csv("gap.csv", &["omega", "floor_residual"], scan.iter().map(|p| vec![p.omega, p.floor_residual]))
}

fn external_field(cfg: &Config, default: &str) -> Result<(ExternalField, Value), CliError> {
    let kind = cfg.external.as_deref().unwrap_or(default);
    Ok(match kind {
        "none" => (ExternalField::none(), json!({"kind": "none"})),
        "linear" => {
            let e0 = vec3("e0", &cfg.e0, [0.5, -0.2, 0.1])?;
            let phi0 = cfg.phi0.unwrap_or(0.0);
            (ExternalField::linear(e0, phi0), json!({"kind": "linear", "e0": e0, "phi0": phi0}))
        }
        "harmonic" => {
            let k = positive("k_harmonic", cfg.k_harmonic.unwrap_or(0.5))?;
            (ExternalField::harmonic(k), json!({"kind": "harmonic", "k_harmonic": k}))
        }
        "quartic" => {
            let b = positive("beta", cfg.beta.unwrap_or(1.0))?;
            (ExternalField::quartic(b), json!({"kind": "quartic", "beta": b}))
        }
        other => return Err(CliError::Schema(format!("external: expected none, linear, harmonic or quartic, got {other:?}"))),
    })
}

fn steps_for(t_end: f64, dt: f64) -> Result<usize, CliError> {
    let steps = (t_end / dt).round();
    if steps < 1.0 || (steps * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(CliError::Schema(format!("t_end: {t_end} is not a positive multiple of dt = {dt}")));
    }
    Ok(steps as usize)
}

fn trajectory_rows(tr: &Trajectory) -> Vec<Vec<f64>> {
    (0..tr.len())
        .map(|i| {
            let (r, v, p) = (tr.centers[i], tr.velocities[i], tr.momenta[i]);
            vec![tr.times[i], r[0], r[1], r[2], v[0], v[1], v[2], p[0], p[1], p[2], tr.norms[i], tr.energies[i]]
        })
        .collect()
}

const TRAJECTORY_HEADER: [&str; 12] = ["t", "rx", "ry", "rz", "vx", "vy", "vz", "Px", "Py", "Pz", "norm", "energy"];

fn snapshot_bytes(grid: &CartesianGrid, psi: &[Complex64]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_snapshot(&mut buf, grid, &SnapshotData::Complex(psi.to_vec())).map_err(field_err)?;
    Ok(buf)
}

pub fn dynamics(cfg: &Config, out: &OutDir) -> Result<(), CliError> {
    let kind = cfg.form_factor_kind()?;
    let (a, chi, m, q) = (cfg.a()?, cfg.chi()?, cfg.m()?, cfg.q()?);
    let n = power_of_two("grid_n", cfg.grid_n.unwrap_or(32))?;
    let l = positive("box_l", cfg.box_l.unwrap_or(8.0))?;
    let dt = positive("dt", cfg.dt.unwrap_or(0.001))?;
    let t_end = positive("t_end", cfg.t_end.unwrap_or(1.0))?;
    let stride = at_least("stride", cfg.stride.unwrap_or(10), 1)?;
    let snap = cfg.snapshot_stride.unwrap_or(0);
    let pert = cfg.perturbation.unwrap_or(0.0);
    if !(pert >= 0.0 && pert.is_finite()) {
        return Err(CliError::Schema(format!("perturbation: must be >= 0, got {pert}")));
    }
    let seed = cfg.seed.unwrap_or(0);
    let r0 = vec3("r0", &cfg.r0, [0.0; 3])?;
    let v0 = vec3("v0", &cfg.v0, [0.0; 3])?;
    let (ext, ext_json) = external_field(cfg, "none")?;
    let steps = steps_for(t_end, dt)?;
    if snap > 0 && snap % stride != 0 {
        return Err(CliError::Schema(format!("snapshot_stride: {snap} must be a multiple of stride {stride}")));
    }

    let grid = CartesianGrid::new(n, l).map_err(field_err)?;
    let nl = Nonlinearity::from_form_factor(FormFactorSpec::new(kind, a).map_err(nl_err)?).map_err(nl_err)?;
    let mut charge = ChargeState::corpuscle(&grid, nl, m, q, chi, r0, v0).map_err(dyn_err)?;
    if pert > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for z in charge.psi.iter_mut() {
            *z += Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * (pert * z.norm());
        }
        let s = dynamics::norm_sq(&grid, &charge.psi).sqrt();
        charge.psi.iter_mut().for_each(|z| *z /= s);
    }
    let mut sys = SystemState::new(grid, vec![charge], ext);
    let mut prop = Propagator::new(grid);
    let initial = prop.system_energy(&sys).map_err(dyn_err)?;

    let mut tr = Trajectory::default();
    let segment = if snap > 0 { snap } else { steps };
    let mut done = 0;
    let mut snaps = Vec::new();
    if snap > 0 {
        out.write_bytes("snap_00000.wcf", &snapshot_bytes(&grid, &sys.charges[0].psi)?)?;
        snaps.push("snap_00000.wcf".to_string());
    }
    while done < steps {
        let k = segment.min(steps - done);
        let part = prop.evolve(&mut sys, dt, k, stride, 0).map_err(dyn_err)?;
        let skip = usize::from(!tr.is_empty());
        tr.times.extend(&part.times[skip..]);
        tr.centers.extend(&part.centers[skip..]);
        tr.velocities.extend(&part.velocities[skip..]);
        tr.momenta.extend(&part.momenta[skip..]);
        tr.norms.extend(&part.norms[skip..]);
        tr.energies.extend(&part.energies[skip..]);
        done += k;
        if snap > 0 {
            let name = format!("snap_{done:05}.wcf");
            out.write_bytes(&name, &snapshot_bytes(&grid, &sys.charges[0].psi)?)?;
            snaps.push(name);
        }
    }
    let e0 = tr.energies[0];
    let n0 = tr.norms[0];
    let energy_drift = tr.energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE);
    let norm_drift = tr.norms.iter().map(|x| (x - n0).abs()).fold(0.0, f64::max);
    let results = json!({
        "steps": steps,
        "initial_energy": {"total": initial.total, "grad_sq": initial.grad_sq[0], "nonlinear": initial.nonlinear[0]},
        "final_center": tr.centers.last(),
        "relative_energy_drift": energy_drift,
        "norm_drift": norm_drift,
        "norm_drift_per_1000_steps": norm_drift * 1000.0 / steps as f64,
        "snapshots": snaps,
        "log_floor_xi_num": dynamics::XI_NUM,
    });
    let resolved = json!({"form_factor": format!("{kind:?}"), "a": a, "chi": chi, "m": m, "q": q, "grid_n": n, "box_l": l, "dt": dt, "t_end": t_end, "stride": stride, "snapshot_stride": snap, "perturbation": pert, "seed": seed, "r0": r0, "v0": v0, "external": ext_json});
    out.write_json("summary.json", &summary("dynamics", cfg, resolved, &["norm_conservation", "system_energy_conservation", "charge_center_and_momentum"], results))?;
    out.write_csv("trajectory.csv", &TRAJECTORY_HEADER, trajectory_rows(&tr))
}

pub fn soliton_verify(cfg: &Config, out: &OutDir) -> Result<(), CliError> {
    let kind = cfg.form_factor_kind()?;
    let (a, chi, m, q) = (cfg.a()?, cfg.chi()?, cfg.m()?, cfg.q()?);
    let n = power_of_two("grid_n", cfg.grid_n.unwrap_or(64))?;
    let l = positive("box_l", cfg.box_l.unwrap_or(8.0))?;
    let dt = positive("dt", cfg.dt.unwrap_or(0.02))?;
    let t_end = positive("t_end", cfg.t_end.unwrap_or(1.0))?;
    let stride = at_least("stride", cfg.stride.unwrap_or(5), 1)?;
    let r0 = vec3("r0", &cfg.r0, [0.3, 0.0, -0.2])?;
    let v0 = vec3("v0", &cfg.v0, [0.4, 0.2, 0.0])?;
    let (ext, ext_json) = external_field(cfg, "linear")?;
    steps_for(t_end, dt)?;
    let halving = cfg.dt_halving.unwrap_or(true);

    let spec = FormFactorSpec::new(kind, a).map_err(nl_err)?;
    let wc = soliton::build_wave_corpuscle(spec, m, q, chi, &ext, r0, v0, t_end, dt / 8.0).map_err(sol_err)?;
    let grid = CartesianGrid::new(n, l).map_err(field_err)?;
    let rep = soliton::oracle_compare(&wc, grid, dt, t_end, stride).map_err(sol_err)?;
    let fine = if halving { Some(soliton::oracle_compare(&wc, grid, 0.5 * dt, t_end, 2 * stride).map_err(sol_err)?) } else { None };
    let max_res = rep.residuals.iter().cloned().fold(0.0, f64::max);
    let results = json!({
        "max_nls_residual": max_res,
        "sup_l2_error": rep.sup_l2,
        "sup_center_error": rep.sup_center,
        "halved": fine.as_ref().map(|f| json!({"sup_l2_error": f.sup_l2, "error_ratio": rep.sup_l2 / f.sup_l2})),
    });
    let resolved = json!({"form_factor": format!("{kind:?}"), "a": a, "chi": chi, "m": m, "q": q, "grid_n": n, "box_l": l, "dt": dt, "t_end": t_end, "stride": stride, "r0": r0, "v0": v0, "external": ext_json, "dt_halving": halving});
    out.write_json("summary.json", &summary("soliton-verify", cfg, resolved, &["exact_wave_corpuscle_in_affine_potential", "trajectory_newton_law", "phase_action_integral"], results))?;
    out.write_csv(
        "residuals.csv",
        &["t", "residual_L2", "center_error", "l2_error"],
        (0..rep.times.len()).map(|i| vec![rep.times[i], rep.residuals[i], rep.center_errors[i], rep.l2_errors[i]]),
    )
}

pub fn newton_limit(cfg: &Config, out: &OutDir) -> Result<(), CliError> {
    let kind = cfg.form_factor_kind()?;
    let (chi, m, q) = (cfg.chi()?, cfg.m()?, cfg.q()?);
    let n = power_of_two("grid_n", cfg.grid_n.unwrap_or(64))?;
    let dt = positive("dt", cfg.dt.unwrap_or(0.001))?;
    let t_end = positive("t_end", cfg.t_end.unwrap_or(2.0))?;
    let stride = at_least("stride", cfg.stride.unwrap_or(20), 1)?;
    let margin = positive("margin", cfg.margin.unwrap_or(8.0))?;
    let a_values = cfg.a_values.clone().unwrap_or_else(|| vec![0.4, 0.2, 0.1]);
    for &a in &a_values {
        positive("a_values", a)?;
    }
    let r0 = vec3("r0", &cfg.r0, [0.5, 0.0, 0.0])?;
    let v0 = vec3("v0", &cfg.v0, [0.0; 3])?;
    let (ext, ext_json) = external_field(cfg, "quartic")?;
    steps_for(t_end, dt)?;
    let setup = NewtonLimitSetup { kind, n, margin, m, q, chi, r0, v0, t_end, dt, stride };
    let rows = dynamics::newton_limit_study(&setup, &ext, &a_values).map_err(dyn_err)?;
    let monotone = rows.windows(2).all(|w| w[1].sup_deviation < w[0].sup_deviation);
    let results = json!({
        "rows": rows.iter().map(|r| json!({"a": r.a, "box_half_width": r.box_half_width, "sup_deviation": r.sup_deviation, "eps1_max": r.eps1_max, "escaped_mass": r.escaped_mass, "valid": r.valid})).collect::<Vec<_>>(),
        "monotone_decrease": monotone,
    });
    let resolved = json!({"form_factor": format!("{kind:?}"), "chi": chi, "m": m, "q": q, "grid_n": n, "dt": dt, "t_end": t_end, "stride": stride, "margin": margin, "a_values": a_values, "r0": r0, "v0": v0, "external": ext_json});
    out.write_json("summary.json", &summary("newton-limit", cfg, resolved, &["point_charge_limit_of_charge_center", "field_inhomogeneity_bound"], results))?;
    out.write_csv(
        "newton.csv",
        &["a", "box_half_width", "sup_deviation", "eps1_max", "escaped_mass", "valid"],
        rows.iter().map(|r| vec![r.a, r.box_half_width, r.sup_deviation, r.eps1_max, r.escaped_mass, f64::from(u8::from(r.valid))]),
    )
}

pub fn two_particle(cfg: &Config, out: &OutDir) -> Result<(), CliError> {
    match &cfg.b_values {
        Some(bs) => {
            sweep("two-particle", cfg, out, "b", bs, |c, b| {
                c.b = Some(b);
                c.b_values = None;
            }, two_particle_point)?;
            Ok(())
        }
        None => two_particle_point(cfg, out).map(|_| ()),
    }
}

fn two_particle_point(cfg: &Config, out: &OutDir) -> Result<Value, CliError> {
    let b = in_range("b", cfg.b.unwrap_or(0.01), f64::MIN_POSITIVE, 0.1)?;
    let ke = in_range("kappa_e", cfg.kappa_e.unwrap_or(0.1), f64::MIN_POSITIVE, 1.0)?;
    let kp = positive("kappa_p", cfg.kappa_p.unwrap_or(1.0))?;
    let mut tc = TwoParticleConfig::new(b, ke, kp).map_err(eig_err)?;
    tc.xi = cfg.xi()?;
    if let Some(t) = cfg.tol_residual {
        tc.tol = positive("tol_residual", t)?;
    }
    if let Some(mi) = cfg.max_iter {
        tc.max_iter = at_least("max_iter", mi, 1)?;
    }
    let r = eig::two_particle_scf(&tc).map_err(eig_err)?;
    let results = json!({
        "electron": {"omega": r.electron.omega, "energy": r.electron.energy, "residual": r.electron.residual},
        "proton": {"omega": r.proton.omega, "energy": r.proton.energy, "residual": r.proton.residual},
        "d_prot": r.d_prot,
        "d_prot_double_integral": r.d_prot_double,
        "d_prot_bound": r.d_prot_bound,
        "iterations": r.iterations,
    });
    let resolved = json!({"b": b, "kappa_e": ke, "kappa_p": kp, "xi": xi_json(tc.xi), "tol": tc.tol, "max_iter": tc.max_iter, "electron_grid": grid_json(&tc.electron_grid), "proton_grid": grid_json(&tc.proton_grid)});
    out.write_json("summary.json", &summary("two-particle", cfg, resolved, &["rescaled_electron_proton_system", "proton_size_correction", "proton_size_correction_bound"], results))?;
    out.write_csv("electron.csv", &["r", "Psi"], profile_rows(&r.electron))?;
    out.write_csv("proton.csv", &["r", "Psi"], profile_rows(&r.proton))?;
    Ok(json!({"d_prot": r.d_prot}))
}

pub fn nonlin_table(cfg: &Config, out: &OutDir) -> Result<(), CliError> {
    let kind = cfg.form_factor_kind()?;
    let a = cfg.a()?;
    let nodes = at_least("table_nodes", cfg.table_nodes.unwrap_or(20_000), 16)?;
    let r_max = positive("table_r_max", cfg.table_r_max.unwrap_or(12.0 * a))?;
    let grid = RadialGrid::log_stretched(nodes, 1e-3 * a, r_max).map_err(field_err)?;
    let spec = FormFactorSpec::new(kind, a).map_err(nl_err)?;
    let tab = build_gprime_numeric(spec, &grid).map_err(nl_err)?;
    let nl = Nonlinearity::from_form_factor(spec).map_err(nl_err)?;
    let peak = nl.unit_peak() / a.powi(3);
    let mut worst_gp: f64 = 0.0;
    let mut worst_g: f64 = 0.0;
    for k in 0..=400 {
        let s = peak * 10f64.powf(-4.0 + 4.0 * k as f64 / 400.0);
        worst_gp = worst_gp.max((tab.gprime(s) - nl.gprime(s)).abs());
        let c = nl.antiderivative(s);
        worst_g = worst_g.max(((tab.antiderivative(s) - c) / c).abs());
    }
    let results = json!({
        "max_abs_gprime_error": worst_gp,
        "max_rel_g_error": worst_g,
        "equilibrium_residual": equilibrium_residual(&nl, &grid),
        "rows": tab.rows().len(),
        "peak_density": peak,
    });
    let resolved = json!({"form_factor": format!("{kind:?}"), "a": a, "table_nodes": nodes, "table_r_max": r_max, "check_window": [1e-4 * peak, peak]});
    out.write_json("summary.json", &summary("nonlin-table", cfg, resolved, &["charge_equilibrium_condition", "closed_form_nonlinearity"], results))?;
    out.write_csv("table.csv", &["s", "Gprime", "G"], tab.rows().into_iter().map(|(s, gp, g)| vec![s, gp, g]))
}

pub fn poisson_test(cfg: &Config, out: &OutDir) -> Result<(), CliError> {
    let nodes = at_least("radial_nodes", cfg.radial_nodes.unwrap_or(8001), 64)?;
    let n = power_of_two("grid_n", cfg.grid_n.unwrap_or(128))?;
    let l = positive("box_l", cfg.box_l.unwrap_or(10.0))?;
    let r_max = positive("r_max", cfg.r_max.unwrap_or((3f64.sqrt() * l + 2.0).max(12.0)))?;
    let rgrid = RadialGrid::log_stretched(nodes, 0.01, r_max).map_err(field_err)?;
    let rho = |r: f64| PI.powf(-1.5) * (-r * r).exp();
    let exact = |r: f64| if r == 0.0 { 2.0 / PI.sqrt() } else { libm::erf(r) / r };
    let density: Vec<f64> = rgrid.r().iter().map(|&r| rho(r)).collect();
    let phi_r = poisson_radial(&rgrid, &density, 1.0, 1e-6).map_err(field_err)?;
    let radial_err = rgrid.r().iter().zip(&phi_r).map(|(&r, p)| ((p - exact(r)) / exact(r)).abs()).fold(0.0, f64::max);

    let cgrid = CartesianGrid::new(n, l).map_err(field_err)?;
    let rc = |i: usize| {
        let p = cgrid.point(i);
        (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
    };
    let cd: Vec<f64> = (0..cgrid.len()).map(|i| rho(rc(i))).collect();
    let res = PoissonSolver::new(cgrid).solve(&cd, 1.0).map_err(field_err)?;
    let mut cart_err: f64 = 0.0;
    let mut cart_exact_err: f64 = 0.0;
    for i in 0..cgrid.len() {
        let r = rc(i);
        let reference = rgrid.interpolate(&phi_r, r);
        cart_err = cart_err.max(((res.phi[i] - reference) / reference).abs());
        cart_exact_err = cart_exact_err.max(((res.phi[i] - exact(r)) / exact(r)).abs());
    }
    let results = json!({
        "radial_max_rel_error_vs_erf": radial_err,
        "cartesian_max_rel_error_vs_radial": cart_err,
        "cartesian_max_rel_error_vs_erf": cart_exact_err,
        "leak_warning": res.leak_warning,
    });
    let resolved = json!({"radial_nodes": nodes, "r_max": r_max, "grid_n": n, "box_l": l, "density": "pi^-3/2 exp(-r^2)"});
    out.write_json("summary.json", &summary("poisson-test", cfg, resolved, &["radial_potential_formula", "free_space_poisson"], results))?;
    let stride = (nodes / 400).max(1);
    out.write_csv(
        "radial.csv",
        &["r", "phi", "exact"],
        rgrid.r().iter().zip(&phi_r).step_by(stride).map(|(&r, &p)| vec![r, p, exact(r)]),
    )
}
