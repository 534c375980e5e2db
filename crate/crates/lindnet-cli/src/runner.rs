//! Experiment execution and artifact writing.
//!
//! Each run owns one directory named `<hash>-s<seed>` under the output
//! root, holding `trajectory.csv`, `reference.csv`, and `summary.json`
//! (sweeps add per-point subdirectories and a `sweep_summary.json`).
//! Numbers in CSV files are written as the shortest decimal string that
//! round-trips the underlying 64-bit float, so identical configurations
//! yield byte-identical files; every emitted numeric value is finite.

use serde::Serialize;
use serde_json::{Map, Value};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, ModeCfg, SweepConfig};
use lindnet::oracle::{evolve_rk4, steady_state};
use lindnet::solver::{initial_params, run, TrajectoryRecord};
use lindnet::{feedforward, LindbladModel, NetworkTopology, Observable};

/// Code state baked in at build time (`git describe`, or the crate
/// version outside a repository).
pub const VERSION: &str = env!("LINDNET_GIT_DESCRIBE");

/// Largest lattice for the dense steady-state reference; the generator is
/// a `4^n × 4^n` matrix, so this caps diagonalization at 1024².
const ED_STEADY_MAX_SITES: usize = 5;
/// Largest lattice for the RK4 dynamics reference (`2^n × 2^n` states).
const RK4_MAX_SITES: usize = 8;

// ---------------------------------------------------------------------------
// Errors and outcomes
// ---------------------------------------------------------------------------

/// Why a run could not produce artifacts.
#[derive(Debug)]
pub enum RunnerError {
    Io(PathBuf, std::io::Error),
    Csv(csv::Error),
    Solver(lindnet::Error),
    /// The target directory exists and `--force` was not given.
    OutputExists(PathBuf),
    /// The requested action needs a section the config does not have.
    MissingSweep,
    /// A value that was about to be emitted is not finite.
    NonFinite(String),
}

impl fmt::Display for RunnerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunnerError::Io(path, e) => write!(f, "io error at {}: {e}", path.display()),
            RunnerError::Csv(e) => write!(f, "csv error: {e}"),
            RunnerError::Solver(e) => write!(f, "solver error: {e}"),
            RunnerError::OutputExists(path) => write!(
                f,
                "output directory {} already exists; pass --force to overwrite",
                path.display()
            ),
            RunnerError::MissingSweep => {
                write!(f, "the sweep command requires a [sweep] section in the config")
            }
            RunnerError::NonFinite(what) => {
                write!(f, "refusing to emit non-finite value: {what}")
            }
        }
    }
}

impl std::error::Error for RunnerError {}

impl From<lindnet::Error> for RunnerError {
    fn from(e: lindnet::Error) -> Self {
        RunnerError::Solver(e)
    }
}

impl From<csv::Error> for RunnerError {
    fn from(e: csv::Error) -> Self {
        RunnerError::Csv(e)
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// Steady-state run stopped below the convergence threshold.
    Converged,
    /// Steady-state run exhausted `max_steps` without converging.
    MaxSteps,
    /// The parameter update stopped being finite; trailing diagnostics are
    /// reported in the summary, not the CSV.
    AbortedNonFinite,
    /// Dynamics run covered its full time grid.
    Completed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxSteps => "max_steps",
            RunStatus::AbortedNonFinite => "aborted_non_finite",
            RunStatus::Completed => "completed",
        }
    }

    /// A run counts as successful when it did what its mode promises.
    pub fn is_success(self) -> bool {
        matches!(self, RunStatus::Converged | RunStatus::Completed)
    }
}

/// Result of one executed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub status: RunStatus,
}

/// Result of a sweep.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub statuses: Vec<RunStatus>,
}

impl SweepOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.statuses.iter().all(|s| s.is_success())
    }
}

// ---------------------------------------------------------------------------
// Directories
// ---------------------------------------------------------------------------

/// Directory a config runs in: `<output root>/<hash>-s<seed>`.
pub fn run_dir_for(cfg: &ExperimentConfig) -> PathBuf {
    Path::new(&cfg.output.dir)
        .join(format!("{}-s{}", cfg.experiment_hash(), cfg.solver.seed))
}

fn prepare_dir(dir: &Path, force: bool) -> Result<(), RunnerError> {
    if dir.exists() && !force {
        return Err(RunnerError::OutputExists(dir.to_path_buf()));
    }
    fs::create_dir_all(dir).map_err(|e| RunnerError::Io(dir.to_path_buf(), e))
}

// ---------------------------------------------------------------------------
// Reference computation
// ---------------------------------------------------------------------------

/// Exact values the run is compared against.
enum Reference {
    /// Steady-state expectations plus spectral diagnostics.
    Steady { values: Vec<f64>, gap: f64, degenerate: bool },
    /// `(time, expectations)` samples on the solver's own grid.
    Dynamics(Vec<(f64, Vec<f64>)>),
    /// The system is too large for the dense reference.
    Unavailable,
}

fn compute_reference(
    cfg: &ExperimentConfig,
    model: &LindbladModel,
    topo: &NetworkTopology,
    observables: &[Observable],
) -> Result<Reference, RunnerError> {
    let n = model.n_sites();
    match cfg.solver.mode {
        ModeCfg::Steady => {
            if n > ED_STEADY_MAX_SITES {
                return Ok(Reference::Unavailable);
            }
            let ss = steady_state(model)?;
            let values =
                observables.iter().map(|o| o.expectation(ss.rho.mat())).collect();
            Ok(Reference::Steady { values, gap: ss.gap, degenerate: ss.degenerate })
        }
        ModeCfg::Dynamics => {
            if n > RK4_MAX_SITES {
                return Ok(Reference::Unavailable);
            }
            // Integrate from the network's own initial state so the curves
            // share their starting point.
            let rho0 = feedforward(topo, &initial_params(topo, cfg.solver.seed))?;
            let steps = cfg.solver.max_steps.saturating_sub(1);
            let samples = evolve_rk4(model, &rho0, cfg.solver.dt, steps, 1)?;
            Ok(Reference::Dynamics(
                samples
                    .into_iter()
                    .map(|(t, rho)| {
                        (t, observables.iter().map(|o| o.expectation(rho.mat())).collect())
                    })
                    .collect(),
            ))
        }
    }
}

// ---------------------------------------------------------------------------
// Artifact writers
// ---------------------------------------------------------------------------

/// Shortest decimal string that parses back to exactly `v`.
fn fmt_f64(v: f64, what: &str) -> Result<String, RunnerError> {
    if !v.is_finite() {
        return Err(RunnerError::NonFinite(what.to_string()));
    }
    Ok(format!("{v}"))
}

fn write_trajectory(
    path: &Path,
    obs_names: &[String],
    records: &[TrajectoryRecord],
) -> Result<(), RunnerError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| RunnerError::Io(path.to_path_buf(), std::io::Error::other(e)))?;
    let mut header: Vec<String> = vec!["step".into(), "time".into()];
    header.extend(obs_names.iter().cloned());
    header.extend(["deltaL_re".into(), "deltaL_im".into(), "sr_residual".into()]);
    w.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = vec![r.step.to_string()];
        row.push(match r.time {
            Some(t) => fmt_f64(t, "trajectory time")?,
            None => String::new(),
        });
        for (name, v) in obs_names.iter().zip(&r.observables) {
            row.push(fmt_f64(*v, name)?);
        }
        row.push(fmt_f64(r.delta_l_re, "deltaL_re")?);
        row.push(fmt_f64(r.delta_l_im, "deltaL_im")?);
        row.push(fmt_f64(r.sr_residual, "sr_residual")?);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| RunnerError::Io(path.to_path_buf(), e))
}

fn write_reference(
    path: &Path,
    obs_names: &[String],
    reference: &Reference,
) -> Result<(), RunnerError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| RunnerError::Io(path.to_path_buf(), std::io::Error::other(e)))?;
    match reference {
        Reference::Steady { values, .. } => {
            w.write_record(obs_names)?;
            let row: Result<Vec<String>, _> = obs_names
                .iter()
                .zip(values)
                .map(|(name, v)| fmt_f64(*v, name))
                .collect();
            w.write_record(&row?)?;
        }
        Reference::Dynamics(samples) => {
            let mut header: Vec<String> = vec!["time".into()];
            header.extend(obs_names.iter().cloned());
            w.write_record(&header)?;
            for (t, values) in samples {
                let mut row = vec![fmt_f64(*t, "reference time")?];
                for (name, v) in obs_names.iter().zip(values) {
                    row.push(fmt_f64(*v, name)?);
                }
                w.write_record(&row)?;
            }
        }
        Reference::Unavailable => {
            w.write_record(obs_names)?;
        }
    }
    w.flush().map_err(|e| RunnerError::Io(path.to_path_buf(), e))
}

/// JSON number that degrades to `null` instead of ever emitting NaN.
fn json_num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

fn obs_map(names: &[String], values: &[f64]) -> Value {
    let mut map = Map::new();
    for (n, v) in names.iter().zip(values) {
        map.insert(n.clone(), json_num(*v));
    }
    Value::Object(map)
}

struct SummaryInput<'a> {
    cfg: &'a ExperimentConfig,
    status: RunStatus,
    records: &'a [TrajectoryRecord],
    obs_names: &'a [String],
    reference: &'a Reference,
    pinv_fallback_steps: usize,
}

fn write_summary(path: &Path, input: &SummaryInput<'_>) -> Result<(), RunnerError> {
    let SummaryInput { cfg, status, records, obs_names, reference, pinv_fallback_steps } =
        input;
    let last = records.last();

    let final_map = last.map(|r| {
        let mut map = match obs_map(obs_names, &r.observables) {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        map.insert("deltaL_re".into(), json_num(r.delta_l_re));
        map.insert("deltaL_im".into(), json_num(r.delta_l_im));
        map.insert("sr_residual".into(), json_num(r.sr_residual));
        Value::Object(map)
    });

    // Reported side by side because relative error is uninformative when the
    // reference value sits near zero.
    let error_maps = |sim: &[f64], ed: &[f64]| {
        let abs: Vec<f64> = sim.iter().zip(ed).map(|(s, e)| (s - e).abs()).collect();
        let rel: Vec<f64> = abs.iter().zip(ed).map(|(a, e)| a / e.abs()).collect();
        (obs_map(obs_names, &abs), obs_map(obs_names, &rel))
    };

    let (reference_map, errors, oracle) = match reference {
        Reference::Steady { values, gap, degenerate } => {
            let errs = last.map(|r| error_maps(&r.observables, values));
            let mut diag = Map::new();
            diag.insert("gap".into(), json_num(*gap));
            diag.insert("degenerate".into(), Value::Bool(*degenerate));
            (Some(obs_map(obs_names, values)), errs, Some(Value::Object(diag)))
        }
        Reference::Dynamics(samples) => {
            // Final-point errors plus the largest deviation over the shared
            // grid.
            let errs = match (last, samples.last()) {
                (Some(r), Some((_, ed))) => Some(error_maps(&r.observables, ed)),
                _ => None,
            };
            let mut max_abs = vec![0.0f64; obs_names.len()];
            for (r, (_, ed)) in records.iter().zip(samples) {
                for (k, (sim, e)) in r.observables.iter().zip(ed).enumerate() {
                    max_abs[k] = max_abs[k].max((sim - e).abs());
                }
            }
            let reference_final = samples.last().map(|(_, ed)| obs_map(obs_names, ed));
            let mut diag = Map::new();
            diag.insert("max_abs_error".into(), obs_map(obs_names, &max_abs));
            (reference_final, errs, Some(Value::Object(diag)))
        }
        Reference::Unavailable => (None, None, None),
    };
    let (absolute_error, relative_error) = match errors {
        Some((a, r)) => (Some(a), Some(r)),
        None => (None, None),
    };

    #[derive(Serialize)]
    struct Summary<'a> {
        version: &'static str,
        status: &'static str,
        converged: bool,
        mode: &'a crate::config::ModeCfg,
        backend: &'a crate::config::BackendKind,
        seed: u64,
        model: String,
        steps_run: usize,
        pinv_fallback_steps: usize,
        r#final: Value,
        reference: Value,
        absolute_error: Value,
        relative_error: Value,
        oracle: Value,
        config: &'a ExperimentConfig,
    }

    let summary = Summary {
        version: VERSION,
        status: status.as_str(),
        converged: *status == RunStatus::Converged,
        mode: &cfg.solver.mode,
        backend: &cfg.solver.backend,
        seed: cfg.solver.seed,
        model: cfg.model.build().map(|m| m.label().to_string()).unwrap_or_default(),
        steps_run: records.len(),
        pinv_fallback_steps: *pinv_fallback_steps,
        r#final: final_map.unwrap_or(Value::Null),
        reference: reference_map.unwrap_or(Value::Null),
        absolute_error: absolute_error.unwrap_or(Value::Null),
        relative_error: relative_error.unwrap_or(Value::Null),
        oracle: oracle.unwrap_or(Value::Null),
        config: cfg,
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(path, text + "\n").map_err(|e| RunnerError::Io(path.to_path_buf(), e))
}

// ---------------------------------------------------------------------------
// Run drivers
// ---------------------------------------------------------------------------

/// Execute one config into `dir` (already chosen; used by sweeps).
pub fn run_single_in(
    cfg: &ExperimentConfig,
    dir: &Path,
    force: bool,
    quiet: bool,
) -> Result<RunOutcome, RunnerError> {
    let model = cfg.model.build()?;
    let topo = cfg.network.build()?;
    let observables = cfg.observables()?;
    let solver_cfg = cfg.solver.solver_config();

    let result = run(&solver_cfg, &model, &topo, &observables)?;
    let aborted = result.records.iter().any(|r| r.non_finite_abort);
    let clean: Vec<TrajectoryRecord> =
        result.records.iter().filter(|r| !r.non_finite_abort).cloned().collect();
    let status = if aborted {
        RunStatus::AbortedNonFinite
    } else if cfg.solver.mode == ModeCfg::Steady {
        if result.converged {
            RunStatus::Converged
        } else {
            RunStatus::MaxSteps
        }
    } else {
        RunStatus::Completed
    };

    let reference = compute_reference(cfg, &model, &topo, &observables)?;

    prepare_dir(dir, force)?;
    let obs_names = &cfg.solver.observables;
    write_trajectory(&dir.join("trajectory.csv"), obs_names, &clean)?;
    write_reference(&dir.join("reference.csv"), obs_names, &reference)?;
    let pinv_fallback_steps = clean.iter().filter(|r| r.pinv_fallback).count();
    write_summary(
        &dir.join("summary.json"),
        &SummaryInput {
            cfg,
            status,
            records: &clean,
            obs_names,
            reference: &reference,
            pinv_fallback_steps,
        },
    )?;

    if !quiet {
        let dl = clean.last().map(|r| (r.delta_l_re, r.delta_l_im)).unwrap_or((0.0, 0.0));
        println!(
            "{}: {} after {} step(s), |deltaL| = {:.3e}",
            dir.display(),
            status.as_str(),
            clean.len(),
            (dl.0 * dl.0 + dl.1 * dl.1).sqrt(),
        );
    }
    Ok(RunOutcome { dir: dir.to_path_buf(), status })
}

/// Execute one config in its hash-named directory.
pub fn run_single(
    cfg: &ExperimentConfig,
    force: bool,
    quiet: bool,
) -> Result<RunOutcome, RunnerError> {
    run_single_in(cfg, &run_dir_for(cfg), force, quiet)
}

/// Write only the exact reference for a config (no training).
pub fn run_oracle(
    cfg: &ExperimentConfig,
    force: bool,
    quiet: bool,
) -> Result<RunOutcome, RunnerError> {
    let model = cfg.model.build()?;
    let topo = cfg.network.build()?;
    let observables = cfg.observables()?;
    let reference = compute_reference(cfg, &model, &topo, &observables)?;
    let dir = run_dir_for(cfg);
    prepare_dir(&dir, force)?;
    write_reference(&dir.join("reference.csv"), &cfg.solver.observables, &reference)?;
    if !quiet {
        println!("{}: reference written", dir.display());
    }
    Ok(RunOutcome { dir, status: RunStatus::Completed })
}

/// Config for one sweep point: the swept parameter applied, the sweep
/// section dropped, and the point's own seed installed.
fn point_config(cfg: &ExperimentConfig, sweep: &SweepConfig, k: usize) -> ExperimentConfig {
    let mut point = cfg.clone();
    point.sweep = None;
    let value = sweep.values[k];
    match sweep.parameter.as_str() {
        "model.h" => point.model.h = value,
        "model.j" => point.model.j = Some(value),
        "model.j1" => point.model.j1 = Some(value),
        "model.j2" => point.model.j2 = Some(value),
        "model.gamma" => point.model.gamma = value,
        "solver.noise_eps" => point.solver.noise_eps = value,
        "solver.seed" => point.solver.seed = value as u64,
        other => unreachable!("validated sweep parameter {other:?}"),
    }
    // Each point draws from its own seed so no two points share an rng
    // stream; sweeping the seed itself uses the listed values as-is.
    if sweep.parameter != "solver.seed" {
        point.solver.seed = cfg.solver.seed + k as u64;
    }
    point
}

/// Execute every sweep point (in parallel up to the host's core count) and
/// write a combined `sweep_summary.json`.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    force: bool,
    quiet: bool,
) -> Result<SweepOutcome, RunnerError> {
    let sweep = cfg.sweep.as_ref().ok_or(RunnerError::MissingSweep)?;
    let dir = run_dir_for(cfg);
    prepare_dir(&dir, force)?;

    let points: Vec<ExperimentConfig> =
        (0..sweep.values.len()).map(|k| point_config(cfg, sweep, k)).collect();
    let subdirs: Vec<PathBuf> = points
        .iter()
        .map(|p| dir.join(format!("{}-s{}", p.experiment_hash(), p.solver.seed)))
        .collect();

    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut outcomes: Vec<Option<Result<RunOutcome, RunnerError>>> =
        (0..points.len()).map(|_| None).collect();
    for (chunk_idx, chunk) in outcomes.chunks_mut(workers).enumerate() {
        let base = chunk_idx * workers;
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter_mut()
                .enumerate()
                .map(|(off, slot)| {
                    let point = &points[base + off];
                    let subdir = &subdirs[base + off];
                    scope.spawn(move || {
                        *slot = Some(run_single_in(point, subdir, force, quiet));
                    })
                })
                .collect();
            for h in handles {
                h.join().expect("sweep worker panicked");
            }
        });
    }

    let mut statuses = Vec::with_capacity(points.len());
    let mut point_summaries = Vec::with_capacity(points.len());
    for (k, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome.expect("every point ran")?;
        statuses.push(outcome.status);
        let summary_path = subdirs[k].join("summary.json");
        let summary: Value = fs::read_to_string(&summary_path)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or(Value::Null);
        let mut entry = Map::new();
        entry.insert("value".into(), json_num(sweep.values[k]));
        entry.insert("seed".into(), Value::from(points[k].solver.seed));
        entry.insert(
            "dir".into(),
            Value::String(
                subdirs[k].file_name().unwrap_or_default().to_string_lossy().into_owned(),
            ),
        );
        entry.insert("status".into(), Value::String(outcome.status.as_str().into()));
        for field in ["final", "reference", "absolute_error", "relative_error"] {
            entry.insert(field.into(), summary.get(field).cloned().unwrap_or(Value::Null));
        }
        point_summaries.push(Value::Object(entry));
    }

    #[derive(Serialize)]
    struct SweepSummary<'a> {
        version: &'static str,
        parameter: &'a str,
        all_succeeded: bool,
        points: Vec<Value>,
        config: &'a ExperimentConfig,
    }
    let all_succeeded = statuses.iter().all(|s| s.is_success());
    let text = serde_json::to_string_pretty(&SweepSummary {
        version: VERSION,
        parameter: &sweep.parameter,
        all_succeeded,
        points: point_summaries,
        config: cfg,
    })
    .expect("summary serializes");
    let path = dir.join("sweep_summary.json");
    fs::write(&path, text + "\n").map_err(|e| RunnerError::Io(path.clone(), e))?;

    if !quiet {
        println!(
            "{}: {}/{} point(s) succeeded",
            dir.display(),
            statuses.iter().filter(|s| s.is_success()).count(),
            statuses.len()
        );
    }
    Ok(SweepOutcome { dir, statuses })
}
