//! Black-box tests of the `lindnet` binary: exit codes, artifact layout,
//! determinism, and override plumbing.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn lindnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lindnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Fast run target that genuinely converges: one spin with pure decay (the
/// all-down state is an exact fixed point, so the stopping rule fires).
fn dark_spin_cfg(out_root: &Path, seed: u64, max_steps: usize) -> String {
    format!(
        r#"
[model]
kind = "single_site"
h = 0.0
gamma = 1.0

[network]
layers = [2, 1]

[solver]
mode = "steady"
seed = {seed}
max_steps = {max_steps}
convergence_tol = 1e-4
observables = ["avg_x", "avg_z"]

[output]
dir = "{}"
"#,
        out_root.display()
    )
}

/// Driven variant with a nontrivial steady state; runs its full step budget.
fn driven_spin_cfg(out_root: &Path, seed: u64) -> String {
    dark_spin_cfg(out_root, seed, 2500)
        .replace("h = 0.0", "h = 0.3")
        .replace("convergence_tol = 1e-4", "convergence_tol = 1e-8")
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).expect("config written");
    path
}

/// The single run directory created under an output root.
fn only_run_dir(root: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .expect("output root exists")
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "expected one run dir in {root:?}, found {dirs:?}");
    dirs.pop().unwrap()
}

fn read_summary(run_dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(run_dir.join("summary.json")).expect("summary.json exists");
    serde_json::from_str(&text).expect("summary.json is valid JSON")
}

#[test]
fn validate_exits_zero_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out_root = tmp.path().join("runs");
    let cfg = write_cfg(tmp.path(), "ok.toml", &dark_spin_cfg(&out_root, 1, 50));
    let out = lindnet(&["validate", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(stdout_of(&out).contains("config ok"));
    assert!(!out_root.exists(), "validate must not create output files");
}

#[test]
fn missing_config_file_exits_two() {
    let out = lindnet(&["validate", "/nonexistent/nowhere.toml"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn usage_errors_exit_one() {
    // Missing required config argument.
    let out = lindnet(&["steady"]);
    assert_eq!(out.status.code(), Some(1));
    // Unknown subcommand.
    let out = lindnet(&["frobnicate", "x.toml"]);
    assert_eq!(out.status.code(), Some(1));
    // Unknown backend value.
    let out = lindnet(&["steady", "x.toml", "--backend", "gpu"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_config_reports_every_violation() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "bad.toml",
        r#"
[model]
kind = "ising1d"
n_sites = 5
h = 0.2

[network]
layers = [2, 2, 4]
connectivity = "diagonal"

[solver]
seed = 1
max_stepz = 100
"#,
    );
    let out = lindnet(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    // All three independent problems must be reported in one pass.
    assert!(err.contains("network.layers"), "missing layer mismatch: {err}");
    assert!(err.contains("model.n_sites"), "mismatch must name the model key: {err}");
    assert!(err.contains("connectivity"), "missing bad enum report: {err}");
    assert!(err.contains("max_stepz"), "missing unknown-key report: {err}");
    assert!(err.contains("max_steps"), "unknown key should suggest max_steps: {err}");
}

#[test]
fn alias_typo_suggests_canonical_key() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "typo.toml",
        r#"
[model]
kind = "single_site"
h = 0.1

[network]
layers = [2, 1]

[solver]
seed = 1
learning_rate_sched = 0.999
"#,
    );
    let out = lindnet(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("learning_rate_sched"), "{err}");
    assert!(err.contains("lr_decay"), "should point at lr_decay: {err}");
}

#[test]
fn steady_run_writes_three_artifacts_with_finite_values() {
    let tmp = TempDir::new().unwrap();
    let out_root = tmp.path().join("runs");
    let cfg = write_cfg(tmp.path(), "run.toml", &dark_spin_cfg(&out_root, 5, 2500));
    let out = lindnet(&["steady", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let run_dir = only_run_dir(&out_root);
    let traj = fs::read_to_string(run_dir.join("trajectory.csv")).expect("trajectory.csv");
    let mut lines = traj.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,time,avg_x,avg_z,deltaL_re,deltaL_im,sr_residual"
    );
    for line in lines {
        for (i, field) in line.split(',').enumerate() {
            if i == 1 {
                assert!(field.is_empty(), "steady runs leave time blank: {line}");
            } else {
                let v: f64 = field.parse().expect("numeric CSV field");
                assert!(v.is_finite(), "non-finite value in {line}");
            }
        }
    }

    let reference = fs::read_to_string(run_dir.join("reference.csv")).expect("reference.csv");
    assert!(reference.starts_with("avg_x,avg_z"), "{reference}");
    assert_eq!(reference.lines().count(), 2, "header plus one row: {reference}");

    let summary = read_summary(&run_dir);
    assert_eq!(summary["status"], "converged");
    assert_eq!(summary["converged"], true);
    assert_eq!(summary["seed"], 5);
    assert_eq!(summary["backend"], "exact");
    // Pure decay is exactly solvable: the trained state must sit on the
    // all-down fixed point.
    let rel = summary["relative_error"]["avg_z"].as_f64().unwrap();
    assert!(rel < 1e-2, "relative_error.avg_z = {rel}");
    let abs = summary["absolute_error"]["avg_x"].as_f64().unwrap();
    assert!(abs < 5e-2, "absolute_error.avg_x = {abs}");
    assert_eq!(summary["config"]["solver"]["max_steps"], 2500);
    assert!(!summary["version"].as_str().unwrap().is_empty());
}

#[test]
fn second_run_refuses_to_overwrite_unless_forced() {
    let tmp = TempDir::new().unwrap();
    let out_root = tmp.path().join("runs");
    let cfg = write_cfg(tmp.path(), "run.toml", &dark_spin_cfg(&out_root, 2, 2500));
    let first = lindnet(&["steady", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(first.status.code(), Some(0));
    let second = lindnet(&["steady", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(second.status.code(), Some(2), "must refuse to clobber an existing run dir");
    assert!(stderr_of(&second).contains("--force"), "error should mention --force");
    let forced = lindnet(&["steady", cfg.to_str().unwrap(), "--quiet", "--force"]);
    assert_eq!(forced.status.code(), Some(0), "stderr: {}", stderr_of(&forced));
}

#[test]
fn oracle_writes_reference_only() {
    let tmp = TempDir::new().unwrap();
    let out_root = tmp.path().join("runs");
    let cfg = write_cfg(tmp.path(), "run.toml", &dark_spin_cfg(&out_root, 3, 60));
    let out = lindnet(&["oracle", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let run_dir = only_run_dir(&out_root);
    assert!(run_dir.join("reference.csv").exists());
    assert!(!run_dir.join("trajectory.csv").exists(), "oracle must not train");
    assert!(!run_dir.join("summary.json").exists(), "oracle writes the reference only");
}

#[test]
fn backend_override_is_echoed_in_summary() {
    let tmp = TempDir::new().unwrap();
    let out_root = tmp.path().join("runs");
    let body = dark_spin_cfg(&out_root, 4, 25)
        .replace("[output]", "n_samples = 4000\nburn_in = 200\n\n[output]");
    let cfg = write_cfg(tmp.path(), "run.toml", &body);
    let out = lindnet(&["steady", cfg.to_str().unwrap(), "--quiet", "--backend", "mcmc"]);
    assert!(
        matches!(out.status.code(), Some(0) | Some(3)),
        "sampled run should complete: {}",
        stderr_of(&out)
    );
    let run_dir = only_run_dir(&out_root);
    let summary = read_summary(&run_dir);
    assert_eq!(summary["backend"], "mcmc");
    assert_eq!(summary["config"]["solver"]["backend"], "mcmc");
    assert_eq!(summary["config"]["solver"]["n_samples"], 4000);
}

#[test]
fn same_seed_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (root_a, root_b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg_a = write_cfg(tmp.path(), "a.toml", &dark_spin_cfg(&root_a, 9, 2500));
    let cfg_b = write_cfg(tmp.path(), "b.toml", &dark_spin_cfg(&root_b, 9, 2500));
    assert_eq!(lindnet(&["steady", cfg_a.to_str().unwrap(), "--quiet"]).status.code(), Some(0));
    assert_eq!(lindnet(&["steady", cfg_b.to_str().unwrap(), "--quiet"]).status.code(), Some(0));
    let bytes_a = fs::read(only_run_dir(&root_a).join("trajectory.csv")).unwrap();
    let bytes_b = fs::read(only_run_dir(&root_b).join("trajectory.csv")).unwrap();
    assert_eq!(bytes_a, bytes_b, "identical config + seed must reproduce bit-for-bit");
}

#[test]
fn different_seeds_differ_in_path_but_agree_in_physics() {
    let tmp = TempDir::new().unwrap();
    let out_root = tmp.path().join("runs");
    let cfg = write_cfg(tmp.path(), "run.toml", &driven_spin_cfg(&out_root, 5));
    let a = lindnet(&["steady", cfg.to_str().unwrap(), "--quiet"]);
    let b = lindnet(&["steady", cfg.to_str().unwrap(), "--quiet", "--seed", "6"]);
    for out in [&a, &b] {
        assert!(
            matches!(out.status.code(), Some(0) | Some(3)),
            "stderr: {}",
            stderr_of(out)
        );
    }

    let mut dirs: Vec<PathBuf> = fs::read_dir(&out_root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    dirs.sort();
    assert_eq!(dirs.len(), 2, "seed is part of the run id, so two dirs");

    let t0 = fs::read(dirs[0].join("trajectory.csv")).unwrap();
    let t1 = fs::read(dirs[1].join("trajectory.csv")).unwrap();
    assert_ne!(t0, t1, "different seeds must explore different paths");

    let z0 = read_summary(&dirs[0])["final"]["avg_z"].as_f64().unwrap();
    let z1 = read_summary(&dirs[1])["final"]["avg_z"].as_f64().unwrap();
    let rel = (z0 - z1).abs() / z0.abs().max(1e-12);
    assert!(rel < 2e-2, "seeds disagree on the converged answer: {z0} vs {z1}");
}

#[test]
fn out_flag_overrides_config_and_env_var_fills_default() {
    let tmp = TempDir::new().unwrap();
    let cfg_root = tmp.path().join("from_config");
    let flag_root = tmp.path().join("from_flag");
    let cfg = write_cfg(tmp.path(), "run.toml", &dark_spin_cfg(&cfg_root, 1, 2500));
    let out = lindnet(&[
        "steady",
        cfg.to_str().unwrap(),
        "--quiet",
        "--out",
        flag_root.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(flag_root.exists() && !cfg_root.exists(), "--out must win over [output]");

    // No [output] section at all: the environment variable supplies the root.
    let env_root = tmp.path().join("from_env");
    let body = dark_spin_cfg(&env_root, 1, 2500);
    let body = body[..body.find("[output]").unwrap()].to_string();
    let cfg2 = write_cfg(tmp.path(), "noout.toml", &body);
    let out = Command::new(env!("CARGO_BIN_EXE_lindnet"))
        .args(["steady", cfg2.to_str().unwrap(), "--quiet"])
        .env("LINDNET_OUT", &env_root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(env_root.exists(), "LINDNET_OUT must supply the default output root");
}

#[test]
fn sweep_writes_point_dirs_and_summary() {
    let tmp = TempDir::new().unwrap();
    let out_root = tmp.path().join("runs");
    let body = format!(
        r#"
[model]
kind = "single_site"
h = 0.0
gamma = 1.0

[network]
layers = [2, 1]

[solver]
mode = "steady"
seed = 2
max_steps = 2500
convergence_tol = 1e-4
observables = ["avg_z"]

[sweep]
parameter = "model.gamma"
values = [0.8, 1.2]

[output]
dir = "{}"
"#,
        out_root.display()
    );
    let cfg = write_cfg(tmp.path(), "sweep.toml", &body);
    let out = lindnet(&["sweep", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let sweep_dir = only_run_dir(&out_root);
    let text = fs::read_to_string(sweep_dir.join("sweep_summary.json")).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(summary["parameter"], "model.gamma");
    assert_eq!(summary["all_succeeded"], true);
    let points = summary["points"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    for (k, point) in points.iter().enumerate() {
        assert_eq!(point["value"].as_f64().unwrap(), [0.8, 1.2][k]);
        // Every point gets its own seed and directory with full artifacts.
        assert_eq!(point["seed"].as_u64().unwrap(), 2 + k as u64);
        let pdir = sweep_dir.join(point["dir"].as_str().unwrap());
        assert!(pdir.join("trajectory.csv").exists(), "missing artifacts in {pdir:?}");
        assert!(pdir.join("summary.json").exists());
        let rel = point["relative_error"]["avg_z"].as_f64().unwrap();
        assert!(rel < 1e-2, "point {k} off by {rel}");
    }
}

#[test]
fn exhausted_step_budget_exits_three_but_still_reports() {
    let tmp = TempDir::new().unwrap();
    let out_root = tmp.path().join("runs");
    let body = dark_spin_cfg(&out_root, 1, 3)
        .replace("convergence_tol = 1e-4", "convergence_tol = 1e-15");
    let cfg = write_cfg(tmp.path(), "short.toml", &body);
    let out = lindnet(&["steady", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr_of(&out));
    let run_dir = only_run_dir(&out_root);
    let summary = read_summary(&run_dir);
    assert_eq!(summary["status"], "max_steps");
    assert_eq!(summary["converged"], false);
    assert!(run_dir.join("trajectory.csv").exists(), "partial runs still leave a record");
}

#[test]
fn quiet_flag_silences_progress() {
    let tmp = TempDir::new().unwrap();
    let out_root = tmp.path().join("runs");
    let cfg = write_cfg(tmp.path(), "run.toml", &dark_spin_cfg(&out_root, 1, 2500));
    let out = lindnet(&["steady", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_of(&out).is_empty(), "quiet run printed: {}", stdout_of(&out));
}

#[test]
fn dynamics_run_records_time_axis_and_reference_rows() {
    let tmp = TempDir::new().unwrap();
    let out_root = tmp.path().join("runs");
    let body = format!(
        r#"
[model]
kind = "single_site"
h = 0.0
gamma = 1.0

[network]
layers = [2, 1]

[solver]
mode = "dynamics"
seed = 8
dt = 0.01
max_steps = 50
observables = ["avg_z"]

[output]
dir = "{}"
"#,
        out_root.display()
    );
    let cfg = write_cfg(tmp.path(), "dyn.toml", &body);
    let out = lindnet(&["dynamics", cfg.to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let run_dir = only_run_dir(&out_root);
    let traj = fs::read_to_string(run_dir.join("trajectory.csv")).unwrap();
    let second = traj.lines().nth(1).unwrap();
    let time: f64 = second.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(time, 0.0, "first record sits at t = 0: {second}");
    let third = traj.lines().nth(2).unwrap();
    let time: f64 = third.split(',').nth(1).unwrap().parse().unwrap();
    assert!((time - 0.01).abs() < 1e-15, "second record sits at t = dt: {third}");

    let reference = fs::read_to_string(run_dir.join("reference.csv")).unwrap();
    assert_eq!(reference.lines().count(), 51, "one integrator row per recorded step");
    assert!(reference.lines().next().unwrap().starts_with("time,avg_z"));

    let summary = read_summary(&run_dir);
    let max_err = summary["oracle"]["max_abs_error"]["avg_z"].as_f64().unwrap();
    assert!(max_err < 0.05, "trained dynamics drifted from the integrator by {max_err}");
}
