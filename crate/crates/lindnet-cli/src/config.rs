//! Experiment configuration: a TOML document with `[model]`, `[network]`,
//! `[solver]`, and optional `[sweep]` and `[output]` sections.
//!
//! Parsing is strict and total: every unknown key, type mismatch, or
//! semantic violation is collected with its key path and reported in one
//! error, so a config never has to be fixed one message at a time. Unknown
//! keys come with a suggestion when a close or commonly confused name
//! exists.

use serde::ser::Serializer;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt;

use lindnet::{Connectivity, LindbladModel, NetworkTopology, Observable, ShotCount, Tying};

/// Default sample count of the `mcmc` backend.
pub const DEFAULT_N_SAMPLES: usize = 50_000;
/// Default shot budget of the `shots` backend.
pub const DEFAULT_SHOTS: u64 = 100_000;
/// Environment variable naming the default output root directory.
pub const OUT_ROOT_ENV: &str = "LINDNET_OUT";
/// Output root used when neither `[output] dir`, `--out`, nor the
/// environment variable is set.
pub const DEFAULT_OUT_ROOT: &str = "runs";

// ---------------------------------------------------------------------------
// Effective configuration (all defaults materialized)
// ---------------------------------------------------------------------------

/// Fully validated experiment description with every default materialized;
/// serializing it yields the exact configuration echoed into summaries.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub network: NetworkConfig,
    pub solver: SolverSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModelKind {
    #[serde(rename = "ising1d")]
    Ising1d,
    #[serde(rename = "j1j2")]
    J1J2,
    #[serde(rename = "single_site")]
    SingleSite,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ising1d => "ising1d",
            ModelKind::J1J2 => "j1j2",
            ModelKind::SingleSite => "single_site",
        }
    }
}

/// `[model]`: which dissipative spin system to solve.
#[derive(Debug, Clone, Serialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_sites: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ly: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j2: Option<f64>,
    pub h: f64,
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub periodic: Option<bool>,
}

impl ModelConfig {
    /// Lattice size implied by the model parameters.
    pub fn n_sites(&self) -> usize {
        match self.kind {
            ModelKind::Ising1d => self.n_sites.expect("validated"),
            ModelKind::J1J2 => self.lx.expect("validated") * self.ly.expect("validated"),
            ModelKind::SingleSite => 1,
        }
    }

    /// Instantiate the model.
    pub fn build(&self) -> lindnet::Result<LindbladModel> {
        match self.kind {
            ModelKind::Ising1d => LindbladModel::ising_1d(
                self.n_sites.expect("validated"),
                self.j.expect("validated"),
                self.h,
                self.gamma,
                self.periodic.expect("validated"),
            ),
            ModelKind::J1J2 => LindbladModel::j1j2_2d(
                self.lx.expect("validated"),
                self.ly.expect("validated"),
                self.j1.expect("validated"),
                self.j2.expect("validated"),
                self.h,
                self.gamma,
                self.periodic.expect("validated"),
            ),
            ModelKind::SingleSite => LindbladModel::single_site(self.h, self.gamma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConnectivityCfg {
    #[serde(rename = "local")]
    Local,
    #[serde(rename = "full")]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TyingCfg {
    #[serde(rename = "tied")]
    Tied,
    #[serde(rename = "untied")]
    Untied,
}

/// `[network]`: the layered ansatz shape.
#[derive(Debug, Clone, Serialize)]
pub struct NetworkConfig {
    pub layers: Vec<usize>,
    pub connectivity: ConnectivityCfg,
    pub tying: TyingCfg,
}

impl NetworkConfig {
    pub fn build(&self) -> lindnet::Result<NetworkTopology> {
        let conn = match self.connectivity {
            ConnectivityCfg::Local => Connectivity::LocalModulo,
            ConnectivityCfg::Full => Connectivity::Full,
        };
        let tying = match self.tying {
            TyingCfg::Tied => Tying::TiedPerLayer,
            TyingCfg::Untied => Tying::Untied,
        };
        NetworkTopology::new(self.layers.clone(), conn, tying)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModeCfg {
    #[serde(rename = "steady")]
    Steady,
    #[serde(rename = "dynamics")]
    Dynamics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BackendKind {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "mcmc")]
    Mcmc,
    #[serde(rename = "shots")]
    Shots,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Exact => "exact",
            BackendKind::Mcmc => "mcmc",
            BackendKind::Shots => "shots",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NoiseTargetCfg {
    #[serde(rename = "derivatives")]
    Derivatives,
    #[serde(rename = "system")]
    System,
}

/// Shot budget: a finite count or exact expectation values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShotsSpec {
    Exact,
    Count(u64),
}

impl Serialize for ShotsSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ShotsSpec::Exact => s.serialize_str("exact"),
            ShotsSpec::Count(n) => s.serialize_u64(*n),
        }
    }
}

/// `[solver]`: the training loop. Steady-state runs use the decaying
/// learning rate `lr0 · lr_decay^step`; dynamics runs step by `dt`.
#[derive(Debug, Clone, Serialize)]
pub struct SolverSection {
    pub mode: ModeCfg,
    pub seed: u64,
    pub max_steps: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub dt: f64,
    pub tikhonov: f64,
    pub convergence_tol: f64,
    pub noise_eps: f64,
    pub noise_target: NoiseTargetCfg,
    pub backend: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots: Option<ShotsSpec>,
    pub observables: Vec<String>,
}

impl SolverSection {
    /// Lower into the solver's own configuration struct.
    pub fn solver_config(&self) -> lindnet::SolverConfig {
        lindnet::SolverConfig {
            mode: match self.mode {
                ModeCfg::Steady => lindnet::Mode::SteadyState,
                ModeCfg::Dynamics => lindnet::Mode::Dynamics,
            },
            lr0: self.lr0,
            lr_decay: self.lr_decay,
            dt: self.dt,
            max_steps: self.max_steps,
            tikhonov_eps: self.tikhonov,
            noise_eps: self.noise_eps,
            noise_target: match self.noise_target {
                NoiseTargetCfg::Derivatives => lindnet::solver::NoiseTarget::Derivatives,
                NoiseTargetCfg::System => lindnet::solver::NoiseTarget::SystemEntries,
            },
            seed: self.seed,
            backend: match self.backend {
                BackendKind::Exact => lindnet::Backend::Exact,
                BackendKind::Mcmc => lindnet::Backend::Mcmc {
                    n_samples: self.n_samples.expect("validated"),
                    burn_in: self.burn_in,
                },
                BackendKind::Shots => lindnet::Backend::Shots {
                    shots: match self.shots.expect("validated") {
                        ShotsSpec::Exact => ShotCount::Exact,
                        ShotsSpec::Count(n) => ShotCount::Finite(n),
                    },
                },
            },
            convergence_tol: self.convergence_tol,
        }
    }
}

/// `[sweep]`: repeat the run over one scalar parameter.
#[derive(Debug, Clone, Serialize)]
pub struct SweepConfig {
    pub parameter: String,
    pub values: Vec<f64>,
}

/// `[output]`: where run directories are created.
#[derive(Debug, Clone, Serialize)]
pub struct OutputConfig {
    pub dir: String,
}

impl ExperimentConfig {
    /// Parsed observables, in column order.
    pub fn observables(&self) -> lindnet::Result<Vec<Observable>> {
        let n = self.model.n_sites();
        self.solver.observables.iter().map(|s| Observable::parse(s, n)).collect()
    }

    /// Hash identifying the experiment (model, network, solver, sweep); the
    /// output location does not participate, so moving artifacts does not
    /// rename runs. First eight hex digits of a SHA-256 over the canonical
    /// JSON encoding.
    pub fn experiment_hash(&self) -> String {
        #[derive(Serialize)]
        struct Identity<'a> {
            model: &'a ModelConfig,
            network: &'a NetworkConfig,
            solver: &'a SolverSection,
            sweep: &'a Option<SweepConfig>,
        }
        let bytes = serde_json::to_vec(&Identity {
            model: &self.model,
            network: &self.network,
            solver: &self.solver,
            sweep: &self.sweep,
        })
        .expect("plain data serializes");
        let digest = Sha256::digest(&bytes);
        digest[..4].iter().map(|b| format!("{b:02x}")).collect()
    }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// One rejected aspect of a configuration, anchored at a key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Why a configuration was rejected.
#[derive(Debug)]
pub enum ConfigError {
    /// The document is not well-formed TOML.
    Syntax(String),
    /// The document parsed but failed validation; every violation is listed.
    Invalid(Vec<Violation>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Syntax(msg) => write!(f, "configuration syntax error: {msg}"),
            ConfigError::Invalid(violations) => {
                writeln!(f, "configuration invalid ({} violation(s)):", violations.len())?;
                for v in violations {
                    writeln!(f, "  - {v}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

// ---------------------------------------------------------------------------
// Command-line overrides
// ---------------------------------------------------------------------------

/// Values that command-line flags force over the document's own keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub out_dir: Option<String>,
}

// ---------------------------------------------------------------------------
// Schema tables
// ---------------------------------------------------------------------------

const SECTIONS: [&str; 5] = ["model", "network", "solver", "sweep", "output"];

const MODEL_KEYS: [&str; 10] =
    ["kind", "n_sites", "lx", "ly", "j", "j1", "j2", "h", "gamma", "periodic"];
const NETWORK_KEYS: [&str; 3] = ["layers", "connectivity", "tying"];
const SOLVER_KEYS: [&str; 15] = [
    "mode",
    "seed",
    "max_steps",
    "lr0",
    "lr_decay",
    "dt",
    "tikhonov",
    "convergence_tol",
    "noise_eps",
    "noise_target",
    "backend",
    "n_samples",
    "burn_in",
    "shots",
    "observables",
];
const SWEEP_KEYS: [&str; 2] = ["parameter", "values"];
const OUTPUT_KEYS: [&str; 1] = ["dir"];

/// Parameters a sweep may vary, with the model kinds they apply to.
const SWEEP_PARAMETERS: [&str; 7] = [
    "model.h",
    "model.j",
    "model.j1",
    "model.j2",
    "model.gamma",
    "solver.noise_eps",
    "solver.seed",
];

/// Commonly confused names mapped to the schema key they almost certainly
/// meant; consulted before edit-distance matching so that renames across
/// vocabularies ("learning rate schedule" vs `lr_decay`) still get a
/// suggestion.
const ALIASES: [(&str, &str); 38] = [
    ("learning_rate_sched", "solver.lr_decay"),
    ("learning_rate_schedule", "solver.lr_decay"),
    ("lr_schedule", "solver.lr_decay"),
    ("lr_sched", "solver.lr_decay"),
    ("decay", "solver.lr_decay"),
    ("learning_rate", "solver.lr0"),
    ("lr", "solver.lr0"),
    ("tol", "solver.convergence_tol"),
    ("tolerance", "solver.convergence_tol"),
    ("time_step", "solver.dt"),
    ("timestep", "solver.dt"),
    ("steps", "solver.max_steps"),
    ("n_steps", "solver.max_steps"),
    ("iterations", "solver.max_steps"),
    ("max_iters", "solver.max_steps"),
    ("ridge", "solver.tikhonov"),
    ("regularization", "solver.tikhonov"),
    ("samples", "solver.n_samples"),
    ("n_shots", "solver.shots"),
    ("shot_count", "solver.shots"),
    ("rng_seed", "solver.seed"),
    ("random_seed", "solver.seed"),
    ("layer_sizes", "network.layers"),
    ("topology", "network.layers"),
    ("topo", "network.layers"),
    ("wiring", "network.connectivity"),
    ("weight_tying", "network.tying"),
    ("n", "model.n_sites"),
    ("sites", "model.n_sites"),
    ("n_spins", "model.n_sites"),
    ("coupling", "model.j"),
    ("field", "model.h"),
    ("boundary", "model.periodic"),
    ("pbc", "model.periodic"),
    ("decay_rate", "model.gamma"),
    ("outdir", "output.dir"),
    ("out_dir", "output.dir"),
    ("directory", "output.dir"),
];

fn section_keys(section: &str) -> &'static [&'static str] {
    match section {
        "model" => &MODEL_KEYS,
        "network" => &NETWORK_KEYS,
        "solver" => &SOLVER_KEYS,
        "sweep" => &SWEEP_KEYS,
        "output" => &OUTPUT_KEYS,
        _ => &[],
    }
}

// ---------------------------------------------------------------------------
// Suggestions
// ---------------------------------------------------------------------------

/// Classic edit distance; small inputs only.
fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Closest candidate within an edit-distance budget scaled to the length.
fn nearest<'a>(name: &str, candidates: &[&'a str]) -> Option<&'a str> {
    let budget = 2.max(name.len() / 3);
    candidates
        .iter()
        .map(|c| (levenshtein(name, c), *c))
        .filter(|(d, _)| *d <= budget)
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c)
}

/// Suggestion for an unknown key in `section`, if any: curated aliases
/// first, then edit distance within the section, then the same name or a
/// near name in another section.
fn suggest_key(section: &str, key: &str) -> Option<String> {
    if let Some((_, target)) = ALIASES.iter().find(|(wrong, _)| *wrong == key) {
        return Some((*target).to_string());
    }
    if let Some(near) = nearest(key, section_keys(section)) {
        return Some(format!("{section}.{near}"));
    }
    for other in SECTIONS {
        if other != section && section_keys(other).contains(&key) {
            return Some(format!("{other}.{key}"));
        }
    }
    for other in SECTIONS {
        if other == section {
            continue;
        }
        if let Some(near) = nearest(key, section_keys(other)) {
            // Cross-section fuzzy matches only when clearly close.
            if levenshtein(key, near) <= 1 {
                return Some(format!("{other}.{near}"));
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Typed accessors over a raw TOML table
// ---------------------------------------------------------------------------

fn type_name(v: &toml::Value) -> &'static str {
    match v {
        toml::Value::String(_) => "a string",
        toml::Value::Integer(_) => "an integer",
        toml::Value::Float(_) => "a float",
        toml::Value::Boolean(_) => "a boolean",
        toml::Value::Datetime(_) => "a datetime",
        toml::Value::Array(_) => "an array",
        toml::Value::Table(_) => "a table",
    }
}

struct Section<'a> {
    name: &'static str,
    table: Option<&'a toml::Table>,
    violations: &'a mut Vec<Violation>,
}

impl<'a> Section<'a> {
    fn path(&self, key: &str) -> String {
        format!("{}.{}", self.name, key)
    }

    fn push(&mut self, key: &str, message: impl Into<String>) {
        self.violations.push(Violation { path: self.path(key), message: message.into() });
    }

    fn raw(&self, key: &str) -> Option<&'a toml::Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn str(&mut self, key: &str) -> Option<String> {
        match self.raw(key) {
            None => None,
            Some(toml::Value::String(s)) => Some(s.clone()),
            Some(v) => {
                let msg = format!("expected a string, found {}", type_name(v));
                self.push(key, msg);
                None
            }
        }
    }

    fn u64(&mut self, key: &str) -> Option<u64> {
        match self.raw(key) {
            None => None,
            Some(toml::Value::Integer(i)) if *i >= 0 => Some(*i as u64),
            Some(toml::Value::Integer(i)) => {
                let msg = format!("must be non-negative, found {i}");
                self.push(key, msg);
                None
            }
            Some(v) => {
                let msg = format!("expected an integer, found {}", type_name(v));
                self.push(key, msg);
                None
            }
        }
    }

    fn usize(&mut self, key: &str) -> Option<usize> {
        self.u64(key).map(|v| v as usize)
    }

    fn f64(&mut self, key: &str) -> Option<f64> {
        match self.raw(key) {
            None => None,
            Some(toml::Value::Float(x)) if x.is_finite() => Some(*x),
            Some(toml::Value::Integer(i)) => Some(*i as f64),
            Some(toml::Value::Float(_)) => {
                self.push(key, "must be finite");
                None
            }
            Some(v) => {
                let msg = format!("expected a number, found {}", type_name(v));
                self.push(key, msg);
                None
            }
        }
    }

    fn bool(&mut self, key: &str) -> Option<bool> {
        match self.raw(key) {
            None => None,
            Some(toml::Value::Boolean(b)) => Some(*b),
            Some(v) => {
                let msg = format!("expected a boolean, found {}", type_name(v));
                self.push(key, msg);
                None
            }
        }
    }

    fn usize_array(&mut self, key: &str) -> Option<Vec<usize>> {
        let arr = match self.raw(key) {
            None => return None,
            Some(toml::Value::Array(a)) => a.clone(),
            Some(v) => {
                let msg = format!("expected an array of integers, found {}", type_name(v));
                self.push(key, msg);
                return None;
            }
        };
        let mut out = Vec::with_capacity(arr.len());
        for (i, v) in arr.iter().enumerate() {
            match v {
                toml::Value::Integer(x) if *x >= 0 => out.push(*x as usize),
                other => {
                    let msg = format!(
                        "element {i} must be a non-negative integer, found {}",
                        type_name(other)
                    );
                    self.push(key, msg);
                    return None;
                }
            }
        }
        Some(out)
    }

    fn f64_array(&mut self, key: &str) -> Option<Vec<f64>> {
        let arr = match self.raw(key) {
            None => return None,
            Some(toml::Value::Array(a)) => a.clone(),
            Some(v) => {
                let msg = format!("expected an array of numbers, found {}", type_name(v));
                self.push(key, msg);
                return None;
            }
        };
        let mut out = Vec::with_capacity(arr.len());
        for (i, v) in arr.iter().enumerate() {
            match v {
                toml::Value::Float(x) if x.is_finite() => out.push(*x),
                toml::Value::Integer(x) => out.push(*x as f64),
                other => {
                    let msg = format!(
                        "element {i} must be a finite number, found {}",
                        type_name(other)
                    );
                    self.push(key, msg);
                    return None;
                }
            }
        }
        Some(out)
    }

    fn str_array(&mut self, key: &str) -> Option<Vec<String>> {
        let arr = match self.raw(key) {
            None => return None,
            Some(toml::Value::Array(a)) => a.clone(),
            Some(v) => {
                let msg = format!("expected an array of strings, found {}", type_name(v));
                self.push(key, msg);
                return None;
            }
        };
        let mut out = Vec::with_capacity(arr.len());
        for (i, v) in arr.iter().enumerate() {
            match v {
                toml::Value::String(s) => out.push(s.clone()),
                other => {
                    let msg =
                        format!("element {i} must be a string, found {}", type_name(other));
                    self.push(key, msg);
                    return None;
                }
            }
        }
        Some(out)
    }

    /// String key constrained to a fixed vocabulary.
    fn keyword(&mut self, key: &str, allowed: &[&str]) -> Option<String> {
        let s = self.str(key)?;
        if allowed.contains(&s.as_str()) {
            Some(s)
        } else {
            let msg = format!("unknown value {s:?} (expected one of: {})", allowed.join(", "));
            self.push(key, msg);
            None
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_with_overrides(text, &Overrides::default())
}

/// Parse and validate with command-line overrides applied before
/// validation, so an overridden backend picks up its own defaults.
pub fn parse_config_with_overrides(
    text: &str,
    overrides: &Overrides,
) -> Result<ExperimentConfig, ConfigError> {
    let mut table: toml::Table =
        text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    apply_overrides(&mut table, overrides);
    validate(&table)
}

fn apply_overrides(table: &mut toml::Table, overrides: &Overrides) {
    let mut set = |section: &str, key: &str, value: toml::Value| {
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if let toml::Value::Table(t) = entry {
            t.insert(key.to_string(), value);
        }
        // A non-table section is left alone; validation reports it.
    };
    if let Some(seed) = overrides.seed {
        set("solver", "seed", toml::Value::Integer(seed as i64));
    }
    if let Some(backend) = &overrides.backend {
        set("solver", "backend", toml::Value::String(backend.clone()));
    }
    if let Some(dir) = &overrides.out_dir {
        set("output", "dir", toml::Value::String(dir.clone()));
    }
}

fn validate(table: &toml::Table) -> Result<ExperimentConfig, ConfigError> {
    let mut violations: Vec<Violation> = Vec::new();

    // Section scan: unknown sections and non-table sections.
    for (name, value) in table {
        if !SECTIONS.contains(&name.as_str()) {
            let suggestion = nearest(name, &SECTIONS)
                .map(|s| format!("; did you mean `[{s}]`?"))
                .unwrap_or_default();
            violations.push(Violation {
                path: name.clone(),
                message: format!("unknown section{suggestion}"),
            });
        } else if !value.is_table() {
            violations.push(Violation {
                path: name.clone(),
                message: format!("expected a `[{name}]` table, found {}", type_name(value)),
            });
        }
    }

    let get_section = |name: &str| -> Option<&toml::Table> {
        table.get(name).and_then(|v| v.as_table())
    };

    // Unknown keys inside known sections.
    for name in SECTIONS {
        let Some(sec) = get_section(name) else { continue };
        let known = section_keys(name);
        for key in sec.keys() {
            if !known.contains(&key.as_str()) {
                let suggestion = suggest_key(name, key)
                    .map(|s| format!("; did you mean `{s}`?"))
                    .unwrap_or_default();
                violations.push(Violation {
                    path: format!("{name}.{key}"),
                    message: format!("unknown key{suggestion}"),
                });
            }
        }
    }

    let model = validate_model(
        Section { name: "model", table: get_section("model"), violations: &mut violations },
        table.contains_key("model"),
    );
    let network = validate_network(Section {
        name: "network",
        table: get_section("network"),
        violations: &mut violations,
    });
    let n_sites = model.as_ref().map(|m| m.n_sites());
    let solver = validate_solver(
        Section { name: "solver", table: get_section("solver"), violations: &mut violations },
        n_sites,
    );
    let sweep = validate_sweep(
        Section { name: "sweep", table: get_section("sweep"), violations: &mut violations },
        model.as_ref(),
    );
    let output = validate_output(Section {
        name: "output",
        table: get_section("output"),
        violations: &mut violations,
    });

    // Cross-section invariant: the network must end on the model's sites.
    // Checked against the raw layer list so the mismatch is still reported
    // when an unrelated key in [network] is invalid.
    let out_layer = network.as_ref().and_then(|net| net.layers.last().copied()).or_else(|| {
        get_section("network")?
            .get("layers")?
            .as_array()?
            .last()?
            .as_integer()
            .and_then(|i| usize::try_from(i).ok())
    });
    if let (Some(m), Some(last)) = (&model, out_layer) {
        if last != m.n_sites() {
            violations.push(Violation {
                path: "network.layers".into(),
                message: format!(
                    "output layer has {last} qubit(s) but the model has {} site(s); \
                     network.layers must end at the lattice size implied by \
                     model.{}",
                    m.n_sites(),
                    match m.kind {
                        ModelKind::Ising1d => "n_sites".to_string(),
                        ModelKind::J1J2 => "lx/model.ly".to_string(),
                        ModelKind::SingleSite => "kind (single_site is one site)".to_string(),
                    }
                ),
            });
        }
    }

    if violations.is_empty() {
        Ok(ExperimentConfig {
            model: model.expect("no violations"),
            network: network.expect("no violations"),
            solver: solver.expect("no violations"),
            sweep,
            output: output.expect("no violations"),
        })
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

fn require<T>(sec: &mut Section<'_>, key: &str, value: Option<T>, what: &str) -> Option<T> {
    if value.is_none() && sec.raw(key).is_none() {
        sec.push(key, format!("missing ({what})"));
    }
    value
}

/// Reject keys that belong to a different model kind.
fn reject_inapplicable(sec: &mut Section<'_>, kind: ModelKind, applicable: &[&str]) {
    for key in MODEL_KEYS {
        if key == "kind" || applicable.contains(&key) {
            continue;
        }
        if sec.raw(key).is_some() {
            let msg = format!("does not apply to kind {:?}", kind.as_str());
            sec.push(key, msg);
        }
    }
}

fn validate_model(mut sec: Section<'_>, present: bool) -> Option<ModelConfig> {
    if !present {
        sec.violations.push(Violation {
            path: "model".into(),
            message: "missing section (the system to solve)".into(),
        });
        return None;
    }
    let before = sec.violations.len();
    let kind_raw = sec.keyword("kind", &["ising1d", "j1j2", "single_site"]);
    let kind_str =
        require(&mut sec, "kind", kind_raw, "one of: ising1d, j1j2, single_site")?;
    let kind = match kind_str.as_str() {
        "ising1d" => ModelKind::Ising1d,
        "j1j2" => ModelKind::J1J2,
        _ => ModelKind::SingleSite,
    };

    let h = sec.f64("h").unwrap_or(0.0);
    let gamma = sec.f64("gamma").unwrap_or(1.0);
    if gamma < 0.0 {
        sec.push("gamma", "decay rate must be non-negative");
    }

    let mut cfg = ModelConfig {
        kind,
        n_sites: None,
        lx: None,
        ly: None,
        j: None,
        j1: None,
        j2: None,
        h,
        gamma,
        periodic: None,
    };
    match kind {
        ModelKind::Ising1d => {
            reject_inapplicable(&mut sec, kind, &["n_sites", "j", "h", "gamma", "periodic"]);
            let n_raw = sec.usize("n_sites");
            let n = require(&mut sec, "n_sites", n_raw, "the chain length");
            if let Some(n) = n {
                if n == 0 {
                    sec.push("n_sites", "chain length must be at least 1");
                    return None;
                }
            }
            cfg.n_sites = n;
            cfg.j = Some(sec.f64("j").unwrap_or(1.0));
            cfg.periodic = Some(sec.bool("periodic").unwrap_or(true));
            cfg.n_sites?;
        }
        ModelKind::J1J2 => {
            reject_inapplicable(
                &mut sec,
                kind,
                &["lx", "ly", "j1", "j2", "h", "gamma", "periodic"],
            );
            let lx_raw = sec.usize("lx");
            let lx = require(&mut sec, "lx", lx_raw, "the lattice width");
            let ly_raw = sec.usize("ly");
            let ly = require(&mut sec, "ly", ly_raw, "the lattice height");
            if lx == Some(0) {
                sec.push("lx", "lattice width must be at least 1");
                return None;
            }
            if ly == Some(0) {
                sec.push("ly", "lattice height must be at least 1");
                return None;
            }
            cfg.lx = lx;
            cfg.ly = ly;
            cfg.j1 = Some(sec.f64("j1").unwrap_or(1.0));
            cfg.j2 = Some(sec.f64("j2").unwrap_or(0.0));
            cfg.periodic = Some(sec.bool("periodic").unwrap_or(true));
            cfg.lx?;
            cfg.ly?;
        }
        ModelKind::SingleSite => {
            reject_inapplicable(&mut sec, kind, &["h", "gamma"]);
        }
    }
    if sec.violations.len() > before {
        return None;
    }
    Some(cfg)
}

fn validate_network(mut sec: Section<'_>) -> Option<NetworkConfig> {
    if sec.table.is_none() {
        sec.violations.push(Violation {
            path: "network".into(),
            message: "missing section (the ansatz shape)".into(),
        });
        return None;
    }
    let before = sec.violations.len();
    let layers_raw = sec.usize_array("layers");
    let layers = require(&mut sec, "layers", layers_raw, "the layer widths")?;
    let connectivity = match sec.keyword("connectivity", &["local", "full"]) {
        Some(s) if s == "full" => ConnectivityCfg::Full,
        Some(_) => ConnectivityCfg::Local,
        None if sec.raw("connectivity").is_some() => return None,
        None => ConnectivityCfg::Local,
    };
    let tying = match sec.keyword("tying", &["tied", "untied"]) {
        Some(s) if s == "untied" => TyingCfg::Untied,
        Some(_) => TyingCfg::Tied,
        None if sec.raw("tying").is_some() => return None,
        None => TyingCfg::Tied,
    };
    let cfg = NetworkConfig { layers, connectivity, tying };
    // Surface constructor-level shape violations (width limits, joint-space
    // caps) under the key that caused them.
    if let Err(e) = cfg.build() {
        sec.push("layers", e.to_string());
    }
    if sec.violations.len() > before {
        return None;
    }
    Some(cfg)
}

fn validate_solver(mut sec: Section<'_>, n_sites: Option<usize>) -> Option<SolverSection> {
    if sec.table.is_none() {
        sec.violations.push(Violation {
            path: "solver".into(),
            message: "missing section (at minimum, a seed is required)".into(),
        });
        return None;
    }
    let before = sec.violations.len();

    let mode = match sec.keyword("mode", &["steady", "dynamics"]) {
        Some(s) if s == "dynamics" => ModeCfg::Dynamics,
        Some(_) => ModeCfg::Steady,
        None => ModeCfg::Steady,
    };
    let seed_raw = sec.u64("seed");
    let seed =
        require(&mut sec, "seed", seed_raw, "a fixed rng seed; runs must be reproducible");

    let max_steps = sec.usize("max_steps").unwrap_or(2000);
    if max_steps == 0 {
        sec.push("max_steps", "must be at least 1");
    }
    let lr0 = sec.f64("lr0").unwrap_or(0.01);
    if mode == ModeCfg::Steady && lr0 <= 0.0 {
        sec.push("lr0", "initial learning rate must be positive");
    }
    let lr_decay = sec.f64("lr_decay").unwrap_or(0.999);
    if lr_decay <= 0.0 || lr_decay > 1.0 {
        sec.push("lr_decay", "decay factor must be in (0, 1]");
    }
    let dt = sec.f64("dt").unwrap_or(5e-3);
    if mode == ModeCfg::Dynamics && dt <= 0.0 {
        sec.push("dt", "time step must be positive in dynamics mode");
    }
    let tikhonov = sec.f64("tikhonov").unwrap_or(1e-4);
    if tikhonov < 0.0 {
        sec.push("tikhonov", "ridge must be non-negative");
    }
    let convergence_tol = sec.f64("convergence_tol").unwrap_or(1e-2);
    if convergence_tol < 0.0 {
        sec.push("convergence_tol", "threshold must be non-negative");
    }
    let noise_eps = sec.f64("noise_eps").unwrap_or(0.0);
    if noise_eps < 0.0 {
        sec.push("noise_eps", "noise amplitude must be non-negative");
    }
    let noise_target = match sec.keyword("noise_target", &["derivatives", "system"]) {
        Some(s) if s == "system" => NoiseTargetCfg::System,
        _ => NoiseTargetCfg::Derivatives,
    };

    let backend = match sec.keyword("backend", &["exact", "mcmc", "shots"]) {
        Some(s) if s == "mcmc" => BackendKind::Mcmc,
        Some(s) if s == "shots" => BackendKind::Shots,
        _ => BackendKind::Exact,
    };
    // Backend tuning keys are accepted regardless of the active backend (a
    // `--backend` override must not invalidate the document); they
    // materialize only where they apply.
    let n_samples_raw = sec.usize("n_samples");
    let burn_in_raw = sec.usize("burn_in");
    let shots_raw = match sec.raw("shots") {
        None => None,
        Some(toml::Value::String(s)) if s == "exact" => Some(ShotsSpec::Exact),
        Some(toml::Value::String(s)) => {
            let msg = format!("expected a positive shot count or \"exact\", found {s:?}");
            sec.push("shots", msg);
            None
        }
        Some(toml::Value::Integer(i)) if *i > 0 => Some(ShotsSpec::Count(*i as u64)),
        Some(toml::Value::Integer(i)) => {
            let msg = format!("shot count must be positive, found {i}");
            sec.push("shots", msg);
            None
        }
        Some(v) => {
            let msg =
                format!("expected a positive shot count or \"exact\", found {}", type_name(v));
            sec.push("shots", msg);
            None
        }
    };
    let (n_samples, burn_in, shots) = match backend {
        BackendKind::Exact => (None, None, None),
        BackendKind::Mcmc => {
            let n = n_samples_raw.unwrap_or(DEFAULT_N_SAMPLES);
            if n == 0 {
                sec.push("n_samples", "sample count must be at least 1");
            }
            (Some(n), burn_in_raw, None)
        }
        BackendKind::Shots => {
            (None, None, Some(shots_raw.unwrap_or(ShotsSpec::Count(DEFAULT_SHOTS))))
        }
    };

    let observables = match sec.str_array("observables") {
        Some(list) => {
            if list.is_empty() {
                sec.push("observables", "at least one observable is required");
            }
            list
        }
        None if sec.raw("observables").is_some() => return None,
        None => match n_sites {
            Some(n) if n >= 2 => {
                vec!["avg_x".to_string(), "avg_z".to_string(), "xx(0,1)".to_string()]
            }
            _ => vec!["avg_x".to_string(), "avg_z".to_string()],
        },
    };
    if let Some(n) = n_sites {
        for name in &observables {
            if let Err(e) = Observable::parse(name, n) {
                sec.push("observables", e.to_string());
            }
        }
    }

    if sec.violations.len() > before {
        return None;
    }
    Some(SolverSection {
        mode,
        seed: seed?,
        max_steps,
        lr0,
        lr_decay,
        dt,
        tikhonov,
        convergence_tol,
        noise_eps,
        noise_target,
        backend,
        n_samples,
        burn_in,
        shots,
        observables,
    })
}

fn validate_sweep(mut sec: Section<'_>, model: Option<&ModelConfig>) -> Option<SweepConfig> {
    sec.table?;
    let before = sec.violations.len();
    let parameter_raw = sec.str("parameter");
    let parameter = require(
        &mut sec,
        "parameter",
        parameter_raw,
        &format!("one of: {}", SWEEP_PARAMETERS.join(", ")),
    );
    let values_raw = sec.f64_array("values");
    let values = require(&mut sec, "values", values_raw, "the points to sweep");

    let parameter = match parameter {
        Some(p) if SWEEP_PARAMETERS.contains(&p.as_str()) => {
            if let Some(m) = model {
                let applies = match p.as_str() {
                    "model.j" => m.kind == ModelKind::Ising1d,
                    "model.j1" | "model.j2" => m.kind == ModelKind::J1J2,
                    _ => true,
                };
                if !applies {
                    let msg =
                        format!("`{p}` does not apply to model kind {:?}", m.kind.as_str());
                    sec.push("parameter", msg);
                }
            }
            Some(p)
        }
        Some(p) => {
            let suggestion = nearest(&p, &SWEEP_PARAMETERS)
                .map(|s| format!("; did you mean `{s}`?"))
                .unwrap_or_default();
            let msg = format!(
                "unsupported sweep parameter {p:?}{suggestion} (supported: {})",
                SWEEP_PARAMETERS.join(", ")
            );
            sec.push("parameter", msg);
            None
        }
        None => None,
    };
    if let Some(vals) = &values {
        if vals.is_empty() {
            sec.push("values", "at least one point is required");
        }
        if parameter.as_deref() == Some("solver.seed")
            && vals.iter().any(|v| v.fract() != 0.0 || *v < 0.0)
        {
            sec.push("values", "seed values must be non-negative integers");
        }
    }

    if sec.violations.len() > before {
        return None;
    }
    Some(SweepConfig { parameter: parameter?, values: values? })
}

fn validate_output(mut sec: Section<'_>) -> Option<OutputConfig> {
    let dir = sec
        .str("dir")
        .or_else(|| std::env::var(OUT_ROOT_ENV).ok())
        .unwrap_or_else(|| DEFAULT_OUT_ROOT.to_string());
    if dir.is_empty() {
        sec.push("dir", "output root must not be empty");
        return None;
    }
    Some(OutputConfig { dir })
}
