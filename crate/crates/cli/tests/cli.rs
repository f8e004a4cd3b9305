use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavecorpuscle")).args(args).output().expect("spawn cli")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn out_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ground_summary_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["ground", "--kappa", "0.1", "--out", out_arg(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&dir.path().join("summary.json"));
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["command"], "ground");
    assert_eq!(doc["parameters"]["kappa"], 0.1);
    for key in ["resolved", "paper_refs", "results"] {
        assert!(!doc[key].is_null(), "{key}");
    }
    let r = &doc["results"];
    assert_eq!(r["node_count"], 0);
    assert!(r["converged"].as_bool().unwrap());
    let (w, e) = (r["omega"].as_f64().unwrap(), r["energy"].as_f64().unwrap());
    assert!((e - w - 0.005).abs() < 1e-9);
    let csv = std::fs::read_to_string(dir.path().join("profile.csv")).unwrap();
    assert!(csv.starts_with("r,Psi\n"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "experiment = \"spectrum\"\nkappa = 0.0\nlevels = 2\nxi = -inf\n").unwrap();
    let out = dir.path().join("o");
    let o = cli(&["spectrum", "--config", out_arg(&cfg), "--levels", "3", "--out", out_arg(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out.join("spectrum.json"));
    assert_eq!(doc["resolved"]["levels"], 3);
    assert_eq!(doc["parameters"]["xi"], "-inf");
    assert_eq!(doc["results"]["levels"].as_array().unwrap().len(), 3);
    assert!(out.join("profile_n3.csv").exists());
}

#[test]
fn schema_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "kappa = 0.1\nkapa = 0.2\n").unwrap();
    let wrong = dir.path().join("wrong.toml");
    std::fs::write(&wrong, "experiment = \"spectrum\"\n").unwrap();
    let o = out_arg(dir.path());
    let cases: Vec<Vec<&str>> = vec![
        vec!["ground", "--config", bad.to_str().unwrap(), "--out", o],
        vec!["ground", "--config", wrong.to_str().unwrap(), "--out", o],
        vec!["ground", "--kappa", "2", "--out", o],
        vec!["ground", "--xi", "0.5", "--out", o],
        vec!["gap-scan", "--delta", "0.0001", "--out", o],
        vec!["dynamics", "--dt", "0.5", "--out", o],
        vec!["dynamics", "--grid-n", "48", "--out", o],
        vec!["soliton-verify", "--external", "harmonic", "--out", o],
        vec!["dynamics", "--form-factor", "cubic", "--out", o],
    ];
    for args in cases {
        let r = cli(&args);
        assert_eq!(code(&r), 2, "{args:?}: {}", String::from_utf8_lossy(&r.stderr));
        assert!(!r.stderr.is_empty());
    }
}

#[test]
fn unconverged_solve_exits_3_after_writing_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["ground", "--tol-residual", "1e-14", "--max-iter", "3", "--out", out_arg(dir.path())]);
    assert_eq!(code(&o), 3);
    let doc = json(&dir.path().join("summary.json"));
    assert!(!doc["results"]["converged"].as_bool().unwrap());
}

#[test]
fn kappa_sweep_writes_index() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["ground", "--kappa-values", "0.1,0.05", "--out", out_arg(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let idx = json(&dir.path().join("index.json"));
    let pts = idx["points"].as_array().unwrap();
    assert_eq!(pts.len(), 2);
    for (p, k) in pts.iter().zip([0.1, 0.05]) {
        assert_eq!(p["status"], "ok");
        assert_eq!(p["kappa"], k);
        let sub = json(&dir.path().join(p["dir"].as_str().unwrap()).join("summary.json"));
        assert_eq!(sub["resolved"]["kappa"], k);
    }
}

#[test]
fn perturbed_dynamics_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = cli(&[
            "dynamics", "--threads", threads, "--seed", seed, "--perturbation", "0.05", "--grid-n", "16", "--box-l", "6",
            "--external", "harmonic", "--r0", "0.5,0,0", "--dt", "0.01", "--t-end", "0.2", "--stride", "5", "--snapshot-stride", "10",
            "--out", out_arg(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("1", "7", "a");
    let b = run("4", "7", "b");
    let c = run("1", "8", "c");
    let read = |p: &Path, f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(read(&a, "trajectory.csv"), read(&b, "trajectory.csv"));
    assert_eq!(read(&a, "snap_00020.wcf"), read(&b, "snap_00020.wcf"));
    assert_ne!(read(&a, "trajectory.csv"), read(&c, "trajectory.csv"));
    let doc = json(&a.join("summary.json"));
    assert!(doc["results"]["norm_drift"].as_f64().unwrap() < 1e-12);
    assert_eq!(doc["resolved"]["seed"], 7);
}

#[test]
fn nonlin_table_and_two_particle_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t");
    assert_eq!(code(&cli(&["nonlin-table", "--form-factor", "exponential", "--out", out_arg(&t)])), 0);
    let doc = json(&t.join("summary.json"));
    assert!(doc["results"]["max_abs_gprime_error"].as_f64().unwrap() < 1e-6);
    let csv = std::fs::read_to_string(t.join("table.csv")).unwrap();
    assert!(csv.starts_with("s,Gprime,G\n"));

    let p = dir.path().join("p");
    assert_eq!(code(&cli(&["two-particle", "--b", "0.01", "--out", out_arg(&p)])), 0);
    let r = &json(&p.join("summary.json"))["results"];
    let (d, dd, bound) = (r["d_prot"].as_f64().unwrap(), r["d_prot_double_integral"].as_f64().unwrap(), r["d_prot_bound"].as_f64().unwrap());
    assert!(d > 0.0 && d <= bound);
    assert!((d - dd).abs() < 1e-4 * d);
}
