//! Configuration-driven experiment runner.
//!
//! Experiments are described by small TOML files: a model from the catalog,
//! an ε value or grid, tolerances, and optional window overrides. Parsing is
//! strict (unknown keys are rejected, all problems reported at once) and
//! every emitted CSV starts with a `#` metadata block carrying the full
//! parameter set and a hash of the config text, so a plot can always be
//! traced back to the run that produced it. Outputs are byte-identical for
//! identical configs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::asymptotics::{fit_decay_rate, theorem1_estimate, theorem1prime_estimate};
use crate::complexplane::{
    crossing_census, dissipativity_along, find_crossing, geometric_prefactor_on,
    half_action_height, loop_integral, rectangle_loop, trace_level_line, CrossingPoint, LineEnd,
};
use crate::error::Error;
use crate::models::{self, HamiltonianModel};
use crate::propagator::{transition_probability, transition_probability_on, TransitionResult};
use crate::superadiabatic::{
    comparison_propagator, optimal_truncation, superadiabatic_transition, TruncationCriterion,
};
use crate::C64;

pub const TOOL_NAME: &str = "adlab";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Centralized defaults; `defaults` prints exactly these.
pub mod defaults {
    /// Propagation tolerance when neither the config nor --tolerance sets one.
    pub const TOLERANCE: f64 = 1e-10;
    /// Initial state label.
    pub const FROM_LABEL: usize = 1;
    /// Target state label.
    pub const TO_LABEL: usize = 2;
    /// Window used by the superadiabatic operation when none is configured.
    pub const WINDOW: (f64, f64) = (-3.0, 3.0);
    /// Depth cap for the truncation-order search.
    pub const Q_MAX: usize = 12;
    /// Truncation criterion name.
    pub const CRITERION: &str = "defect";
    /// Real range scanned for crossings.
    pub const CENSUS_RE: (f64, f64) = (-2.5, 2.5);
    /// Census height floor and cap (the cap also respects the model strip).
    pub const CENSUS_IM_FLOOR: f64 = 0.05;
    pub const CENSUS_IM_CAP: f64 = 1.2;
    /// Model parameters applied when the config omits them.
    pub const RATE: f64 = 1.0;
    pub const COUPLING: f64 = 0.5;
    pub const TWIST: f64 = 0.2;
    pub const CASCADE_FIRST: f64 = -1.0;
    pub const CASCADE_SECOND: f64 = 1.0;
}

/// The operations a config can drive. Mirrors the subcommand set, minus
/// `fit` and `defaults` which do not need a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    Simulate,
    Sweep,
    Crossing,
    LoopIntegral,
    Prefactor,
    Dissipativity,
    Superadiabatic,
    Compare,
    Fit,
}

impl Operation {
    pub fn name(self) -> &'static str {
        match self {
            Operation::Simulate => "simulate",
            Operation::Sweep => "sweep",
            Operation::Crossing => "crossing",
            Operation::LoopIntegral => "loop-integral",
            Operation::Prefactor => "prefactor",
            Operation::Dissipativity => "dissipativity",
            Operation::Superadiabatic => "superadiabatic",
            Operation::Compare => "compare",
            Operation::Fit => "fit",
        }
    }

    fn from_name(s: &str) -> Option<Operation> {
        Some(match s {
            "simulate" => Operation::Simulate,
            "sweep" => Operation::Sweep,
            "crossing" => Operation::Crossing,
            "loop-integral" => Operation::LoopIntegral,
            "prefactor" => Operation::Prefactor,
            "dissipativity" => Operation::Dissipativity,
            "superadiabatic" => Operation::Superadiabatic,
            "compare" => Operation::Compare,
            "fit" => Operation::Fit,
            _ => return None,
        })
    }
}

/// Parsed and validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Operation named in the file, when present; must match the subcommand.
    pub operation: Option<Operation>,
    pub model: Option<ModelSpec>,
    /// ε grid; a single entry for point operations.
    pub epsilons: Vec<f64>,
    pub tolerance: f64,
    pub window: Option<(f64, f64)>,
    pub from_label: usize,
    pub to_label: usize,
    pub output: Option<PathBuf>,
    pub q_max: usize,
    pub criterion: TruncationCriterion,
    /// Optional crossing seed overriding the census.
    pub seed: Option<C64>,
    /// The raw config text, hashed for provenance.
    pub source: String,
}

/// Model selector plus family parameters.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub rate: f64,
    pub coupling: f64,
    pub twist: f64,
    pub first: f64,
    pub second: f64,
}

impl ModelSpec {
    pub fn build(&self) -> HamiltonianModel {
        match self.name.as_str() {
            "landau_zener" => models::landau_zener(self.rate, self.coupling),
            "tanh_sweep" => models::tanh_sweep(self.coupling),
            "complex_hermitian" => {
                models::complex_hermitian(self.rate, self.coupling, self.twist)
            }
            "three_level_cascade" => {
                models::three_level_cascade(self.coupling, self.first, self.second)
            }
            _ => unreachable!("validation admits only catalog names"),
        }
    }
}

const CATALOG: [&str; 4] =
    ["landau_zener", "tanh_sweep", "complex_hermitian", "three_level_cascade"];

/// Which parameter keys each family accepts.
fn allowed_params(name: &str) -> &'static [&'static str] {
    match name {
        "landau_zener" => &["a", "delta"],
        "tanh_sweep" => &["delta"],
        "complex_hermitian" => &["a", "delta", "b"],
        "three_level_cascade" => &["delta", "first", "second"],
        _ => &[],
    }
}

struct Walker<'a> {
    errors: Vec<String>,
    root: &'a toml::Table,
}

impl<'a> Walker<'a> {
    fn err(&mut self, path: &str, msg: impl AsRef<str>) {
        self.errors.push(format!("{path}: {}", msg.as_ref()));
    }

    fn check_keys(&mut self, path: &str, table: &toml::Table, allowed: &[&str]) {
        let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
        for key in table.keys() {
            if !allowed.contains(key.as_str()) {
                let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                self.errors.push(format!("{full}: unknown key"));
            }
        }
    }

    fn float(&mut self, path: &str, v: &toml::Value) -> Option<f64> {
        match v {
            toml::Value::Float(f) => Some(*f),
            toml::Value::Integer(i) => Some(*i as f64),
            _ => {
                self.err(path, "expected a number");
                None
            }
        }
    }

    fn positive_float(&mut self, path: &str, v: &toml::Value) -> Option<f64> {
        let f = self.float(path, v)?;
        if f > 0.0 {
            Some(f)
        } else {
            self.err(path, format!("must be positive, got {f}"));
            None
        }
    }

    fn label(&mut self, path: &str, v: &toml::Value) -> Option<usize> {
        match v {
            toml::Value::Integer(i) if *i >= 1 && *i <= 8 => Some(*i as usize),
            toml::Value::Integer(i) => {
                self.err(path, format!("labels are 1-based and at most 8, got {i}"));
                None
            }
            _ => {
                self.err(path, "expected an integer label");
                None
            }
        }
    }

    fn epsilons(&mut self) -> Vec<f64> {
        let Some(v) = self.root.get("epsilon") else { return Vec::new() };
        let list: Vec<&toml::Value> = match v {
            toml::Value::Array(a) => a.iter().collect(),
            other => vec![other],
        };
        if list.is_empty() {
            self.err("epsilon", "grid must not be empty");
            return Vec::new();
        }
        let mut out = Vec::new();
        for (i, item) in list.iter().enumerate() {
            if let Some(f) = self.positive_float(&format!("epsilon[{i}]"), item) {
                out.push(f);
            }
        }
        if out.len() >= 2 {
            let increasing = out.windows(2).all(|w| w[1] > w[0]);
            let decreasing = out.windows(2).all(|w| w[1] < w[0]);
            if !increasing && !decreasing {
                self.err("epsilon", "grid must be strictly increasing or strictly decreasing");
            }
        }
        out
    }

    fn model(&mut self) -> Option<ModelSpec> {
        let v = self.root.get("model")?;
        let Some(table) = v.as_table() else {
            self.err("model", "expected a table with a `name` key");
            return None;
        };
        let name = match table.get("name").and_then(|n| n.as_str()) {
            Some(n) => n.to_string(),
            None => {
                self.err("model.name", "expected a string");
                return None;
            }
        };
        if !CATALOG.contains(&name.as_str()) {
            self.err(
                "model.name",
                format!("unknown model `{name}`; catalog: {}", CATALOG.join(", ")),
            );
            return None;
        }
        let mut keys = vec!["name"];
        keys.extend_from_slice(allowed_params(&name));
        self.check_keys("model", table, &keys);

        let mut spec = ModelSpec {
            name: name.clone(),
            rate: defaults::RATE,
            coupling: defaults::COUPLING,
            twist: defaults::TWIST,
            first: defaults::CASCADE_FIRST,
            second: defaults::CASCADE_SECOND,
        };
        for key in allowed_params(&name) {
            let Some(v) = table.get(*key) else { continue };
            let Some(f) = self.float(&format!("model.{key}"), v) else { continue };
            match *key {
                "a" => spec.rate = f,
                "delta" => spec.coupling = f,
                "b" => spec.twist = f,
                "first" => spec.first = f,
                "second" => spec.second = f,
                _ => {}
            }
        }
        if (spec.name == "landau_zener" || spec.name == "complex_hermitian") && spec.rate <= 0.0 {
            self.err("model.a", format!("must be positive, got {}", spec.rate));
            return None;
        }
        if spec.name == "three_level_cascade" && spec.second <= spec.first {
            self.err(
                "model.second",
                format!("must exceed `first`, got {} <= {}", spec.second, spec.first),
            );
            return None;
        }
        if spec.coupling < 0.0 {
            self.err("model.delta", format!("must be nonnegative, got {}", spec.coupling));
            return None;
        }
        Some(spec)
    }

    fn window(&mut self) -> Option<(f64, f64)> {
        let v = self.root.get("window")?;
        let Some(arr) = v.as_array() else {
            self.err("window", "expected [start, end]");
            return None;
        };
        if arr.len() != 2 {
            self.err("window", format!("expected 2 entries, got {}", arr.len()));
            return None;
        }
        let a = self.float("window[0]", &arr[0])?;
        let b = self.float("window[1]", &arr[1])?;
        if b <= a {
            self.err("window", format!("end must exceed start, got [{a}, {b}]"));
            return None;
        }
        Some((a, b))
    }
}

/// Parse config text, collecting every problem instead of stopping at the
/// first one.
pub fn validate(text: &str) -> std::result::Result<ExperimentConfig, Vec<String>> {
    let root: toml::Table = match text.parse() {
        Ok(t) => t,
        Err(e) => return Err(vec![format!("config: {e}")]),
    };
    let mut w = Walker { errors: Vec::new(), root: &root };
    w.check_keys(
        "",
        &root,
        &[
            "operation",
            "model",
            "epsilon",
            "tolerance",
            "window",
            "from_label",
            "to_label",
            "output",
            "q_max",
            "criterion",
            "seed",
        ],
    );

    let operation = match root.get("operation") {
        None => None,
        Some(v) => match v.as_str() {
            Some(s) => match Operation::from_name(s) {
                Some(op) => Some(op),
                None => {
                    w.err("operation", format!("unknown operation `{s}`"));
                    None
                }
            },
            None => {
                w.err("operation", "expected a string");
                None
            }
        },
    };

    let model = w.model();
    let epsilons = w.epsilons();
    let window = w.window();

    let tolerance = match root.get("tolerance") {
        None => defaults::TOLERANCE,
        Some(v) => w.positive_float("tolerance", v).unwrap_or(defaults::TOLERANCE),
    };
    let from_label = match root.get("from_label") {
        None => defaults::FROM_LABEL,
        Some(v) => w.label("from_label", v).unwrap_or(defaults::FROM_LABEL),
    };
    let to_label = match root.get("to_label") {
        None => defaults::TO_LABEL,
        Some(v) => w.label("to_label", v).unwrap_or(defaults::TO_LABEL),
    };
    let output = match root.get("output") {
        None => None,
        Some(v) => match v.as_str() {
            Some(s) => Some(PathBuf::from(s)),
            None => {
                w.err("output", "expected a path string");
                None
            }
        },
    };
    let q_max = match root.get("q_max") {
        None => defaults::Q_MAX,
        Some(toml::Value::Integer(i)) if (1..=40).contains(i) => *i as usize,
        Some(toml::Value::Integer(i)) => {
            w.err("q_max", format!("must be between 1 and 40, got {i}"));
            defaults::Q_MAX
        }
        Some(_) => {
            w.err("q_max", "expected an integer");
            defaults::Q_MAX
        }
    };
    let criterion = match root.get("criterion") {
        None => TruncationCriterion::DefectNorm,
        Some(v) => match v.as_str() {
            Some("defect") => TruncationCriterion::DefectNorm,
            Some("transition") => TruncationCriterion::MeasuredTransition { tolerance },
            Some(other) => {
                w.err("criterion", format!("expected `defect` or `transition`, got `{other}`"));
                TruncationCriterion::DefectNorm
            }
            None => {
                w.err("criterion", "expected a string");
                TruncationCriterion::DefectNorm
            }
        },
    };
    let seed = match root.get("seed") {
        None => None,
        Some(toml::Value::Array(arr)) if arr.len() == 2 => {
            let re = w.float("seed[0]", &arr[0]);
            let im = w.float("seed[1]", &arr[1]);
            match (re, im) {
                (Some(re), Some(im)) => Some(C64::new(re, im)),
                _ => None,
            }
        }
        Some(_) => {
            w.err("seed", "expected [re, im]");
            None
        }
    };

    if w.errors.is_empty() {
        Ok(ExperimentConfig {
            operation,
            model,
            epsilons,
            tolerance,
            window,
            from_label,
            to_label,
            output,
            q_max,
            criterion,
            seed,
            source: text.to_string(),
        })
    } else {
        Err(w.errors)
    }
}

/// FNV-1a, 64-bit; hashes the config text for the provenance header.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn fmt_f(x: f64) -> String {
    format!("{x:.12e}")
}

/// `#`-prefixed provenance block common to every CSV.
fn metadata(config: &ExperimentConfig, operation: Operation) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {TOOL_NAME} v{TOOL_VERSION}");
    let _ = writeln!(s, "# operation = {}", operation.name());
    let _ = writeln!(s, "# config_hash = {:016x}", fnv1a_64(config.source.as_bytes()));
    if let Some(spec) = &config.model {
        let _ = writeln!(s, "# model = {:?}", spec.build());
    }
    if !config.epsilons.is_empty() {
        let eps: Vec<String> = config.epsilons.iter().map(|e| fmt_f(*e)).collect();
        let _ = writeln!(s, "# epsilon = [{}]", eps.join(", "));
    }
    let _ = writeln!(s, "# tolerance = {}", fmt_f(config.tolerance));
    if let Some((a, b)) = config.window {
        let _ = writeln!(s, "# window = [{}, {}]", fmt_f(a), fmt_f(b));
    }
    let _ = writeln!(s, "# labels = {} -> {}", config.from_label, config.to_label);
    s
}

/// Outcome of one configured run: the CSV text plus manifest lines.
pub struct RunOutput {
    pub csv: String,
    pub manifest: String,
}

/// Errors surfaced to the process exit code.
pub enum CliFailure {
    /// Exit 2: the config (or its fit input) is invalid.
    Config(Vec<String>),
    /// Exit 3: a numerical routine failed.
    Numerical(Error),
}

impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        CliFailure::Numerical(e)
    }
}

type RunResult = std::result::Result<RunOutput, CliFailure>;

fn config_err(msg: impl Into<String>) -> CliFailure {
    CliFailure::Config(vec![msg.into()])
}

fn require_model(config: &ExperimentConfig) -> std::result::Result<HamiltonianModel, CliFailure> {
    match &config.model {
        Some(spec) => Ok(spec.build()),
        None => Err(config_err("model: required for this operation")),
    }
}

fn require_epsilons(config: &ExperimentConfig) -> std::result::Result<Vec<f64>, CliFailure> {
    if config.epsilons.is_empty() {
        return Err(config_err("epsilon: required for this operation"));
    }
    Ok(config.epsilons.clone())
}

fn check_operation(config: &ExperimentConfig, op: Operation) -> std::result::Result<(), CliFailure> {
    match config.operation {
        Some(declared) if declared != op => Err(config_err(format!(
            "operation: config says `{}` but the `{}` subcommand was invoked",
            declared.name(),
            op.name()
        ))),
        _ => Ok(()),
    }
}

fn transition_at(
    model: &HamiltonianModel,
    config: &ExperimentConfig,
    epsilon: f64,
) -> crate::error::Result<TransitionResult> {
    match config.window {
        Some(window) => transition_probability_on(
            model,
            config.from_label,
            config.to_label,
            window,
            epsilon,
            config.tolerance,
        ),
        None => transition_probability(
            model,
            config.from_label,
            config.to_label,
            epsilon,
            config.tolerance,
        ),
    }
}

fn finish(config: &ExperimentConfig, operation: Operation, csv: String, rows: usize) -> RunOutput {
    let mut manifest = String::new();
    let _ = writeln!(manifest, "tool = {TOOL_NAME} {TOOL_VERSION}");
    let _ = writeln!(manifest, "operation = {}", operation.name());
    let _ = writeln!(manifest, "config_hash = {:016x}", fnv1a_64(config.source.as_bytes()));
    let _ = writeln!(manifest, "rows = {rows}");
    RunOutput { csv, manifest }
}

/// Probability columns for sweeps: P{from}{to}.
fn p_column(config: &ExperimentConfig) -> String {
    format!("P{}{}", config.from_label, config.to_label)
}

fn sorted_by_epsilon<T>(mut rows: Vec<(f64, T)>) -> Vec<(f64, T)> {
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows
}

/// Run ε points concurrently, reporting the first failure.
fn per_epsilon<T: Send>(
    epsilons: &[f64],
    f: impl Fn(f64) -> crate::error::Result<T> + Sync,
) -> std::result::Result<Vec<(f64, T)>, CliFailure> {
    use rayon::prelude::*;
    let rows: Vec<(f64, crate::error::Result<T>)> =
        epsilons.par_iter().map(|&eps| (eps, f(eps))).collect();
    let mut out = Vec::with_capacity(rows.len());
    for (eps, r) in rows {
        out.push((eps, r.map_err(CliFailure::Numerical)?));
    }
    Ok(sorted_by_epsilon(out))
}

fn run_simulate(config: &ExperimentConfig) -> RunResult {
    let model = require_model(config)?;
    let eps = require_epsilons(config)?;
    if eps.len() != 1 {
        return Err(config_err(format!(
            "epsilon: simulate needs exactly one value, got {}",
            eps.len()
        )));
    }
    let r = transition_at(&model, config, eps[0]).map_err(CliFailure::Numerical)?;
    let mut csv = metadata(config, Operation::Simulate);
    let _ = writeln!(csv, "epsilon,{},T_used,unitarity_defect", p_column(config));
    let _ = writeln!(
        csv,
        "{},{},{},{}",
        fmt_f(eps[0]),
        fmt_f(r.probability),
        fmt_f(r.interval.1),
        fmt_f(r.unitarity_defect)
    );
    Ok(finish(config, Operation::Simulate, csv, 1))
}

fn run_sweep(config: &ExperimentConfig) -> RunResult {
    let model = require_model(config)?;
    let eps = require_epsilons(config)?;
    if eps.len() < 2 {
        return Err(config_err("epsilon: sweep needs a grid of at least two values"));
    }
    let rows = per_epsilon(&eps, |e| transition_at(&model, config, e))?;
    let mut csv = metadata(config, Operation::Sweep);
    let _ = writeln!(csv, "epsilon,{},T_used,unitarity_defect", p_column(config));
    for (e, r) in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            fmt_f(*e),
            fmt_f(r.probability),
            fmt_f(r.interval.1),
            fmt_f(r.unitarity_defect)
        );
    }
    let samples: Vec<(f64, f64)> = rows.iter().map(|(e, r)| (*e, r.probability)).collect();
    match fit_decay_rate(&samples) {
        Ok(fit) => {
            let _ = writeln!(csv, "# gamma_fit = {}", fmt_f(fit.gamma));
            let _ = writeln!(csv, "# prefactor_fit = {}", fmt_f(fit.prefactor));
            let _ = writeln!(csv, "# r_squared = {}", fmt_f(fit.r_squared));
        }
        Err(e) => {
            let _ = writeln!(csv, "# fit_skipped = {e}");
        }
    }
    let n = rows.len();
    Ok(finish(config, Operation::Sweep, csv, n))
}

fn census_for(model: &HamiltonianModel) -> crate::error::Result<Vec<CrossingPoint>> {
    let cap = defaults::CENSUS_IM_CAP.min(0.9 * model.strip_halfwidth());
    crossing_census(model, defaults::CENSUS_RE, (defaults::CENSUS_IM_FLOOR, cap), 41)
}

fn crossings_for(
    model: &HamiltonianModel,
    config: &ExperimentConfig,
) -> crate::error::Result<Vec<CrossingPoint>> {
    match config.seed {
        Some(seed) => Ok(vec![find_crossing(model, seed)?]),
        None => census_for(model),
    }
}

fn run_crossing(config: &ExperimentConfig) -> RunResult {
    let model = require_model(config)?;
    let crossings = crossings_for(&model, config)?;
    let mut csv = metadata(config, Operation::Crossing);
    let _ = writeln!(csv, "re,im,branch_a,branch_b,order_check,residual");
    for c in &crossings {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            fmt_f(c.z0.re),
            fmt_f(c.z0.im),
            c.pair.0,
            c.pair.1,
            fmt_f(c.order_check),
            fmt_f(c.residual)
        );
    }
    let n = crossings.len();
    Ok(finish(config, Operation::Crossing, csv, n))
}

fn run_loop_integral(config: &ExperimentConfig) -> RunResult {
    let model = require_model(config)?;
    let crossings = crossings_for(&model, config)?;
    let mut csv = metadata(config, Operation::LoopIntegral);
    let _ = writeln!(
        csv,
        "re,im,label,integral_re,integral_im,exponent_per_eps,returned_as_label,estimated_error"
    );
    let mut rows = 0usize;
    for c in &crossings {
        let path = rectangle_loop(&model, c, None, None)?;
        let li = loop_integral(&model, &path, c.pair.0)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            fmt_f(c.z0.re),
            fmt_f(c.z0.im),
            c.pair.0,
            fmt_f(li.value.re),
            fmt_f(li.value.im),
            fmt_f(2.0 * li.value.im),
            li.returned_as_label,
            fmt_f(li.estimated_error)
        );
        rows += 1;
    }
    Ok(finish(config, Operation::LoopIntegral, csv, rows))
}

fn run_prefactor(config: &ExperimentConfig) -> RunResult {
    let model = require_model(config)?;
    let crossings = crossings_for(&model, config)?;
    let mut csv = metadata(config, Operation::Prefactor);
    let _ = writeln!(
        csv,
        "re,im,theta_re,theta_im,probability_factor,landed_label,closure_defect"
    );
    let mut rows = 0usize;
    for c in &crossings {
        let path = rectangle_loop(&model, c, None, None)?;
        let p = geometric_prefactor_on(&model, &path, c.pair.0)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            fmt_f(c.z0.re),
            fmt_f(c.z0.im),
            fmt_f(p.theta_re),
            fmt_f(p.theta_im),
            fmt_f(p.probability_factor),
            p.landed_label,
            fmt_f(p.closure_defect)
        );
        rows += 1;
    }
    Ok(finish(config, Operation::Prefactor, csv, rows))
}

fn run_dissipativity(config: &ExperimentConfig) -> RunResult {
    let model = require_model(config)?;
    let crossings = crossings_for(&model, config)?;
    let mut csv = metadata(config, Operation::Dissipativity);
    let _ = writeln!(csv, "re,im,connected,dissipative,max_violation,max_im");
    let mut rows = 0usize;
    for c in &crossings {
        let path = rectangle_loop(&model, c, None, None)?;
        let action = loop_integral(&model, &path, c.pair.0)?.value.im.abs();
        let height = half_action_height(&model, c.pair, action, c.z0.re - 4.0);
        let seed = C64::new(c.z0.re - 4.0, height);
        let line = trace_level_line(&model, seed, c.pair, c.z0.re + 4.0, 0.01);
        match line {
            Ok(l) if l.end == LineEnd::ReachedGoal => {
                let r = dissipativity_along(&model, &l.points, c.pair)?;
                let _ = writeln!(
                    csv,
                    "{},{},1,{},{},{}",
                    fmt_f(c.z0.re),
                    fmt_f(c.z0.im),
                    u8::from(r.dissipative),
                    fmt_f(r.max_violation),
                    fmt_f(r.max_im)
                );
            }
            _ => {
                let _ = writeln!(csv, "{},{},0,0,nan,nan", fmt_f(c.z0.re), fmt_f(c.z0.im));
            }
        }
        rows += 1;
    }
    Ok(finish(config, Operation::Dissipativity, csv, rows))
}

fn run_superadiabatic(config: &ExperimentConfig) -> RunResult {
    let model = require_model(config)?;
    let eps = require_epsilons(config)?;
    let window = config.window.unwrap_or(defaults::WINDOW);
    let q_max = config.q_max;
    let criterion = config.criterion;
    let rows = per_epsilon(&eps, |e| {
        let tr = optimal_truncation(&model, window, e, q_max, criterion)?;
        let level = &tr.levels[tr.q_star];
        let t = superadiabatic_transition(&model, level, config.tolerance)?;
        let distance = comparison_propagator(&model, level, config.tolerance)?;
        Ok((tr.q_star, level.defect_norm, t.probability, distance, tr.stalled))
    })?;
    let mut csv = metadata(config, Operation::Superadiabatic);
    let _ = writeln!(csv, "epsilon,q_star,defect_norm,P_qstar,propagator_distance,warning");
    for (e, (q, d, p, dist, warn)) in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            fmt_f(*e),
            q,
            fmt_f(*d),
            fmt_f(*p),
            fmt_f(*dist),
            u8::from(*warn)
        );
    }
    let n = rows.len();
    Ok(finish(config, Operation::Superadiabatic, csv, n))
}

fn run_compare(config: &ExperimentConfig) -> RunResult {
    let model = require_model(config)?;
    let eps = require_epsilons(config)?;
    let dim = model.dimension();
    let estimate = |e: f64| match dim {
        2 => theorem1_estimate(&model, e),
        3 => theorem1prime_estimate(&model, e),
        _ => Err(Error::InvalidArgument(format!(
            "compare has no estimate for dimension {dim}"
        ))),
    };
    if dim == 3 && (config.from_label, config.to_label) != (1, 3) {
        return Err(config_err(
            "to_label: the cascade estimate covers the 1 -> 3 transition; set from_label = 1, to_label = 3",
        ));
    }
    let rows = per_epsilon(&eps, |e| {
        let measured = transition_at(&model, config, e)?;
        let est = estimate(e)?;
        Ok((measured.probability, est.value))
    })?;
    let mut csv = metadata(config, Operation::Compare);
    let _ = writeln!(csv, "epsilon,{},estimate,relative_deviation", p_column(config));
    for (e, (p, est)) in &rows {
        let rel = (p - est).abs() / p.abs().max(f64::MIN_POSITIVE);
        let _ = writeln!(csv, "{},{},{},{}", fmt_f(*e), fmt_f(*p), fmt_f(*est), fmt_f(rel));
    }
    let n = rows.len();
    Ok(finish(config, Operation::Compare, csv, n))
}

/// Parse an emitted CSV back into (ε, P) samples: `#` lines are skipped, the
/// header row names the columns, and the probability column is the first one
/// whose name starts with `P`.
pub fn parse_probability_csv(text: &str) -> std::result::Result<Vec<(f64, f64)>, Vec<String>> {
    let mut errors = Vec::new();
    let mut data_lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
    let header = match data_lines.next() {
        Some(h) => h,
        None => return Err(vec!["input: empty file".into()]),
    };
    let columns: Vec<&str> = header.split(',').map(|c| c.trim()).collect();
    let eps_col = columns.iter().position(|c| *c == "epsilon");
    let p_col = columns
        .iter()
        .position(|c| c.starts_with('P') && c[1..].chars().all(|ch| ch.is_ascii_digit()));
    let (Some(eps_col), Some(p_col)) = (eps_col, p_col) else {
        return Err(vec![format!(
            "input: header must name an `epsilon` column and a probability column, got `{header}`"
        )]);
    };
    let mut samples = Vec::new();
    for (lineno, line) in data_lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if fields.len() != columns.len() {
            errors.push(format!(
                "input line {}: expected {} fields, got {}",
                lineno + 2,
                columns.len(),
                fields.len()
            ));
            continue;
        }
        let eps = fields[eps_col].parse::<f64>();
        let p = fields[p_col].parse::<f64>();
        match (eps, p) {
            (Ok(e), Ok(p)) => samples.push((e, p)),
            _ => errors.push(format!("input line {}: unparseable numbers", lineno + 2)),
        }
    }
    if errors.is_empty() {
        Ok(samples)
    } else {
        Err(errors)
    }
}

/// The `fit` operation: re-ingest a sweep CSV and emit the decay law.
pub fn run_fit(input_text: &str, input_name: &str) -> RunResult {
    let samples = parse_probability_csv(input_text).map_err(CliFailure::Config)?;
    let fit = fit_decay_rate(&samples).map_err(CliFailure::Numerical)?;
    let mut csv = String::new();
    let _ = writeln!(csv, "# {TOOL_NAME} v{TOOL_VERSION}");
    let _ = writeln!(csv, "# operation = fit");
    let _ = writeln!(csv, "# input = {input_name}");
    let _ = writeln!(csv, "# input_hash = {:016x}", fnv1a_64(input_text.as_bytes()));
    let _ = writeln!(csv, "gamma_fit,prefactor_fit,r_squared");
    let _ = writeln!(csv, "{},{},{}", fmt_f(fit.gamma), fmt_f(fit.prefactor), fmt_f(fit.r_squared));
    let mut manifest = String::new();
    let _ = writeln!(manifest, "tool = {TOOL_NAME} {TOOL_VERSION}");
    let _ = writeln!(manifest, "operation = fit");
    let _ = writeln!(manifest, "config_hash = {:016x}", fnv1a_64(input_text.as_bytes()));
    let _ = writeln!(manifest, "rows = 1");
    Ok(RunOutput { csv, manifest })
}

/// Dispatch one configured operation.
pub fn run_operation(config: &ExperimentConfig, op: Operation) -> RunResult {
    check_operation(config, op)?;
    match op {
        Operation::Simulate => run_simulate(config),
        Operation::Sweep => run_sweep(config),
        Operation::Crossing => run_crossing(config),
        Operation::LoopIntegral => run_loop_integral(config),
        Operation::Prefactor => run_prefactor(config),
        Operation::Dissipativity => run_dissipativity(config),
        Operation::Superadiabatic => run_superadiabatic(config),
        Operation::Compare => run_compare(config),
        Operation::Fit => Err(config_err("fit takes a CSV file argument, not a config")),
    }
}

/// Reference values printed by the `defaults` subcommand.
pub fn defaults_text() -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {TOOL_NAME} v{TOOL_VERSION} defaults");
    let _ = writeln!(s, "tolerance = {:e}", defaults::TOLERANCE);
    let _ = writeln!(s, "from_label = {}", defaults::FROM_LABEL);
    let _ = writeln!(s, "to_label = {}", defaults::TO_LABEL);
    let _ = writeln!(s, "q_max = {}", defaults::Q_MAX);
    let _ = writeln!(s, "criterion = \"{}\"", defaults::CRITERION);
    let _ = writeln!(
        s,
        "window = [{}, {}]  # superadiabatic only; other operations default to scattering",
        defaults::WINDOW.0,
        defaults::WINDOW.1
    );
    let _ = writeln!(
        s,
        "census_region = [[{}, {}], [{}, {}]]  # capped at 90% of the model strip",
        defaults::CENSUS_RE.0,
        defaults::CENSUS_RE.1,
        defaults::CENSUS_IM_FLOOR,
        defaults::CENSUS_IM_CAP
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "[model]  # parameter defaults by family");
    let _ = writeln!(s, "a = {}", defaults::RATE);
    let _ = writeln!(s, "delta = {}", defaults::COUPLING);
    let _ = writeln!(s, "b = {}", defaults::TWIST);
    let _ = writeln!(s, "first = {}", defaults::CASCADE_FIRST);
    let _ = writeln!(s, "second = {}", defaults::CASCADE_SECOND);
    s
}

/// Write the CSV (file or stdout) and, when writing a file, the `.manifest`
/// next to it. Returns the process exit code.
pub fn deliver(
    result: RunResult,
    output: Option<&Path>,
) -> i32 {
    match result {
        Ok(run) => match output {
            Some(path) => {
                let manifest_path = {
                    let mut os = path.as_os_str().to_owned();
                    os.push(".manifest");
                    PathBuf::from(os)
                };
                if let Err(e) = std::fs::write(path, &run.csv) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return 3;
                }
                if let Err(e) = std::fs::write(&manifest_path, &run.manifest) {
                    eprintln!("error: cannot write {}: {e}", manifest_path.display());
                    return 3;
                }
                0
            }
            None => {
                print!("{}", run.csv);
                0
            }
        },
        Err(CliFailure::Config(errors)) => {
            for e in &errors {
                eprintln!("config error: {e}");
            }
            2
        }
        Err(CliFailure::Numerical(e)) => {
            eprintln!("error: {e}");
            3
        }
    }
}
