//! Experiment orchestration: configuration files, benchmark runs, brute-force
//! error curves and multi-experiment suites.
//!
//! A configuration is a TOML document. Everything not given explicitly is
//! filled from per-model defaults, and the fully materialized configuration is
//! echoed next to the results so a run can be repeated from its echo alone.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{
    builtin_models, find_model, generate_samples, ModelSpec, SampleSet, SamplingConfig,
};
use crate::error::{Error, Result};
use crate::features::{BlockSelector, CrossBlockPolicy, LibrarySpec, RationalTerm};
use crate::integrators::SolverOptions;
use crate::optimize::{
    brute_force, particle_swarm, write_grid_csv, write_trace_csv, Dimension, GridValues,
    OptimizationResult, PsoConfig, SearchSpace, Termination, TracePoint,
};
use crate::par::Parallelism;
use crate::pipelines::{
    esindy_objective, psindy_objective, validate, CallCounter, ErrorWeights, FitResult,
    HistoryProvider, ObjectiveSettings, ValidationReport, BLOW_UP_SENTINEL,
};
use crate::regression::StlsqConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Esindy,
    Psindy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Bf,
    Pso,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Bf => "bf",
            OptimizerKind::Pso => "pso",
        })
    }
}

/// Initial function used when simulating learned models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryMode {
    /// The generating model's initial function.
    Benchmark,
    /// Constant extension of the first sample.
    Blind,
}

/// Integration settings for the simulation terms and for validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    pub blow_up_factor: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let s = ObjectiveSettings::default();
        Self {
            rel_tol: s.solver.rel_tol,
            abs_tol: s.solver.abs_tol,
            max_steps: s.solver.max_steps,
            blow_up_factor: s.blow_up_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    pub method: Method,
    /// Collocation degree M; ignored by `esindy`.
    pub collocation_degree: usize,
    pub optimizer: OptimizerKind,
    pub horizon: f64,
    pub output: PathBuf,
    pub seed: u64,
    pub history: HistoryMode,
    pub parallelism: Parallelism,
    /// Grid points per search dimension for brute force.
    pub grid: Vec<usize>,
    pub search: Vec<Dimension>,
    pub pso: PsoConfig,
    pub library: LibrarySpec,
    pub stlsq: StlsqConfig,
    pub sampling: SamplingConfig,
    pub weights: ErrorWeights,
    pub simulation: SimulationConfig,
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "model",
    "method",
    "collocation_degree",
    "optimizer",
    "horizon",
    "output",
    "seed",
    "history",
    "parallelism",
    "grid",
    "search",
    "pso",
    "library",
    "stlsq",
    "sampling",
    "weights",
    "simulation",
];

fn dim(label: &str, lower: f64, upper: f64) -> Dimension {
    Dimension {
        label: label.into(),
        lower,
        upper,
    }
}

fn default_grid(dims: usize) -> Vec<usize> {
    if dims == 1 {
        vec![1000]
    } else {
        vec![100; dims]
    }
}

fn default_search(model: &str, method: Method) -> Vec<Dimension> {
    match (model, method) {
        ("mackey-glass", _) => vec![dim("tau", 0.1, 2.0), dim("alpha", 0.1, 20.0)],
        ("two-delay", Method::Esindy) => vec![dim("tau1", 0.1, 1.0), dim("tau2", 0.5, 1.5)],
        ("two-delay", Method::Psindy) => vec![dim("tau", 0.5, 1.5)],
        ("rossler", Method::Esindy) => vec![dim("tau1", 0.1, 2.0), dim("tau2", 0.1, 2.0)],
        ("rossler", Method::Psindy) => vec![dim("tau", 0.1, 2.0)],
        _ => vec![dim("tau", 0.1, 1.5)],
    }
}

fn default_library(model: &ModelSpec, method: Method) -> LibrarySpec {
    let degree = if model.name == "two-delay" { 3 } else { 2 };
    let cross_block = match method {
        Method::Esindy => CrossBlockPolicy::Full,
        Method::Psindy => CrossBlockPolicy::Auto,
    };
    let rational = (model.name == "mackey-glass").then(|| RationalTerm {
        exponent: model.param("alpha").unwrap_or(1.0),
        selector: match method {
            Method::Esindy => BlockSelector::AllDelayed,
            Method::Psindy => BlockSelector::LastBlock,
        },
        numerator: 1,
    });
    LibrarySpec {
        degree,
        include_constant: true,
        rational,
        cross_block,
    }
}

/// Short method tag used in names: `E` or `P<M>`.
pub fn method_tag(method: Method, degree: usize) -> String {
    match method {
        Method::Esindy => "E".into(),
        Method::Psindy => format!("P{degree}"),
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Fully defaulted configuration for one model and method.
    pub fn defaults(model: &str, method: Method) -> Result<Self> {
        let spec = find_model(model).ok_or_else(|| unknown_model(model))?;
        let search = default_search(model, method);
        let tag = method_tag(method, 10);
        Ok(Self {
            model: model.into(),
            method,
            collocation_degree: 10,
            optimizer: OptimizerKind::Pso,
            horizon: spec.horizon,
            output: PathBuf::from(format!("out/{model}-{tag}-pso")),
            seed: 0,
            history: HistoryMode::Benchmark,
            parallelism: Parallelism::Parallel,
            grid: default_grid(search.len()),
            search,
            pso: PsoConfig::default(),
            library: default_library(&spec, method),
            stlsq: StlsqConfig::default(),
            sampling: SamplingConfig {
                samples: spec.samples,
                ..SamplingConfig::default()
            },
            weights: ErrorWeights::default(),
            simulation: SimulationConfig::default(),
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        Self::from_table(table)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Materializes `user` over the defaults of its model and method and
    /// validates the result. All problems found are reported together.
    pub fn from_table(user: toml::Table) -> Result<Self> {
        let mut errs: Vec<String> = user
            .keys()
            .filter(|k| !TOP_LEVEL_KEYS.contains(&k.as_str()))
            .map(|k| format!("unknown key `{k}`"))
            .collect();
        let model = match user.get("model") {
            Some(toml::Value::String(s)) => {
                if find_model(s).is_none() {
                    errs.push(unknown_model(s).to_string());
                }
                Some(s.clone())
            }
            Some(_) => {
                errs.push("`model` must be a string".into());
                None
            }
            None => {
                errs.push("`model` is required".into());
                None
            }
        };
        let method = match user.get("method").map(|v| v.clone().try_into::<Method>()) {
            Some(Ok(m)) => Some(m),
            Some(Err(_)) => {
                errs.push("`method` must be \"esindy\" or \"psindy\"".into());
                None
            }
            None => {
                errs.push("`method` is required".into());
                None
            }
        };
        let (Some(model), Some(method)) = (model, method) else {
            return Err(Error::Config(errs));
        };
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let mut defaults = Self::defaults(&model, method)?;
        if let Some(seed) = user.get("seed").and_then(|v| v.as_integer()) {
            defaults.seed = seed as u64;
            defaults.pso.seed = seed as u64;
            defaults.sampling.seed = seed as u64;
        }
        let degree = user
            .get("collocation_degree")
            .and_then(|v| v.as_integer())
            .unwrap_or(10);
        let optimizer = user
            .get("optimizer")
            .and_then(|v| v.as_str())
            .unwrap_or("pso");
        let tag = method_tag(method, degree.max(0) as usize);
        defaults.output = PathBuf::from(format!("out/{model}-{tag}-{optimizer}"));
        let grid_given = user.contains_key("grid");
        let mut table = match toml::Value::try_from(&defaults) {
            Ok(toml::Value::Table(t)) => t,
            _ => {
                return Err(Error::Invalid(
                    "default configuration is not a table".into(),
                ))
            }
        };
        merge(&mut table, user);
        let mut cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        if !grid_given {
            cfg.grid = default_grid(cfg.search.len());
        }
        let errs = cfg.validate();
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Every problem with this configuration, empty when it is runnable.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if find_model(&self.model).is_none() {
            errs.push(unknown_model(&self.model).to_string());
        }
        if self.method == Method::Psindy && self.collocation_degree < 1 {
            errs.push("collocation_degree must be at least 1".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            errs.push(format!("horizon must be positive (got {})", self.horizon));
        }
        let space = SearchSpace {
            dimensions: self.search.clone(),
        };
        errs.extend(space.validate().into_iter().map(|e| format!("search: {e}")));
        let labels: Vec<&str> = self.search.iter().map(|d| d.label.as_str()).collect();
        let mut taus: Vec<&str> = labels
            .iter()
            .copied()
            .filter(|l| l.starts_with("tau"))
            .collect();
        taus.sort_unstable();
        for l in &labels {
            if !(l.starts_with("tau") || *l == "alpha") {
                errs.push(format!(
                    "search: unknown label `{l}` (expected tau, tau<k> or alpha)"
                ));
            }
        }
        match self.method {
            Method::Esindy => {
                let k = taus.len();
                let numbered: BTreeSet<String> = (1..=k).map(|i| format!("tau{i}")).collect();
                let given: BTreeSet<String> = taus.iter().map(|s| s.to_string()).collect();
                if k == 0 || !(given == numbered || (k == 1 && taus[0] == "tau")) {
                    errs.push("search: esindy needs `tau` or `tau1`..`tauk` dimensions".into());
                }
            }
            Method::Psindy => {
                if taus != ["tau"] {
                    errs.push(
                        "search: psindy needs exactly one `tau` dimension (the maximum delay)"
                            .into(),
                    );
                }
            }
        }
        for d in &self.search {
            if d.label.starts_with("tau") && !(d.lower > 0.0) {
                errs.push(format!(
                    "search: `{}` lower bound must be positive",
                    d.label
                ));
            }
            if d.label == "alpha" && !(d.lower > 0.0) {
                errs.push("search: `alpha` lower bound must be positive".into());
            }
        }
        if labels.contains(&"alpha") && self.library.rational.is_none() {
            errs.push("search: `alpha` needs a rational term in [library]".into());
        }
        if self.grid.len() != self.search.len() {
            errs.push(format!(
                "grid has {} entries for {} search dimensions",
                self.grid.len(),
                self.search.len()
            ));
        }
        if let Some(c) = self.grid.iter().find(|&&c| c < 2) {
            errs.push(format!("grid counts must be at least 2 (got {c})"));
        }
        errs.extend(self.pso.validate().into_iter().map(|e| format!("pso: {e}")));
        errs.extend(
            self.library
                .validate()
                .into_iter()
                .map(|e| format!("library: {e}")),
        );
        errs.extend(self.stlsq.validate());
        errs.extend(self.sampling.validate());
        errs.extend(self.weights.validate());
        let s = &self.simulation;
        if !(s.rel_tol > 0.0 && s.abs_tol > 0.0) {
            errs.push("simulation tolerances must be positive".into());
        }
        if s.max_steps == 0 {
            errs.push("simulation.max_steps must be positive".into());
        }
        if !(s.blow_up_factor > 0.0) {
            errs.push("simulation.blow_up_factor must be positive".into());
        }
        errs
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::Invalid(format!("cannot serialize configuration: {e}")))
    }

    /// `<model>-<E|P<M>>-<optimizer>`
    pub fn name(&self) -> String {
        format!(
            "{}-{}-{}",
            self.model,
            method_tag(self.method, self.collocation_degree),
            self.optimizer
        )
    }

    pub fn search_space(&self) -> Result<SearchSpace> {
        SearchSpace::new(self.search.clone())
    }

    fn settings(&self) -> ObjectiveSettings {
        ObjectiveSettings {
            library: self.library.clone(),
            stlsq: self.stlsq,
            weights: self.weights,
            solver: SolverOptions {
                max_steps: self.simulation.max_steps,
                ..SolverOptions::default()
                    .with_tolerances(self.simulation.rel_tol, self.simulation.abs_tol)
            },
            blow_up_factor: self.simulation.blow_up_factor,
        }
    }
}

fn unknown_model(name: &str) -> Error {
    let known: Vec<String> = builtin_models().into_iter().map(|m| m.name).collect();
    Error::Config(vec![format!(
        "unknown model `{name}` (available: {})",
        known.join(", ")
    )])
}

/// Everything an objective evaluation needs, bound once per experiment.
pub struct Problem {
    pub config: ExperimentConfig,
    pub model: ModelSpec,
    pub samples: SampleSet,
    pub space: SearchSpace,
    settings: ObjectiveSettings,
    history: HistoryProvider,
    tau_slots: Vec<usize>,
    alpha_slot: Option<usize>,
}

impl Problem {
    /// Generates the samples for `config`.
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let model = find_model(&config.model).ok_or_else(|| unknown_model(&config.model))?;
        let samples = generate_samples(&model, &config.sampling, config.horizon)?;
        let space = config.search_space()?;
        let mut taus: Vec<(&str, usize)> = space
            .dimensions
            .iter()
            .enumerate()
            .filter(|(_, d)| d.label.starts_with("tau"))
            .map(|(i, d)| (d.label.as_str(), i))
            .collect();
        taus.sort_by_key(|(l, _)| l[3..].parse::<usize>().unwrap_or(0));
        let history = match config.history {
            HistoryMode::Benchmark => HistoryProvider::Model(model.history),
            HistoryMode::Blind => HistoryProvider::ConstantFirstSample,
        };
        Ok(Self {
            tau_slots: taus.iter().map(|&(_, i)| i).collect(),
            alpha_slot: space.position("alpha"),
            settings: config.settings(),
            config: config.clone(),
            model,
            samples,
            space,
            history,
        })
    }

    pub fn history(&self) -> HistoryProvider {
        self.history
    }

    /// Delays (or the maximum delay) encoded by a search point.
    pub fn delays(&self, x: &[f64]) -> Vec<f64> {
        self.tau_slots.iter().map(|&i| x[i]).collect()
    }

    /// Fit plus simulation at one search point. Counts one call on `counter`.
    pub fn fit(&self, x: &[f64], counter: &CallCounter) -> Result<FitResult> {
        let mut settings = self.settings.clone();
        if let (Some(i), Some(r)) = (self.alpha_slot, settings.library.rational.as_mut()) {
            r.exponent = x[i];
        }
        let delays = self.delays(x);
        match self.config.method {
            Method::Esindy => {
                esindy_objective(&self.samples, &delays, &settings, self.history, counter)
            }
            Method::Psindy => psindy_objective(
                &self.samples,
                delays[0],
                self.config.collocation_degree,
                &settings,
                self.history,
                counter,
            ),
        }
    }

    /// The scalar the optimizers minimize. Failed fits count as a call and
    /// score the blow-up sentinel.
    pub fn objective(&self, x: &[f64], counter: &CallCounter) -> f64 {
        match self.fit(x, counter) {
            Ok(f) => f.objective,
            Err(_) => {
                counter.increment();
                BLOW_UP_SENTINEL
            }
        }
    }

    pub fn optimize(
        &self,
        kind: OptimizerKind,
        counter: &CallCounter,
    ) -> Result<OptimizationResult> {
        let f = |x: &[f64]| self.objective(x, counter);
        match kind {
            OptimizerKind::Bf => {
                brute_force(f, &self.space, &self.config.grid, self.config.parallelism)
            }
            OptimizerKind::Pso => {
                let pso = PsoConfig {
                    parallelism: self.config.parallelism,
                    ..self.config.pso.clone()
                };
                particle_swarm(f, &self.space, &pso)
            }
        }
    }

    fn validation_options(&self) -> SolverOptions {
        let scale = self
            .samples
            .states
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        SolverOptions {
            max_state_norm: self.settings.blow_up_factor * (1.0 + scale),
            ..self.settings.solver
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub name: String,
    pub config: ExperimentConfig,
    pub labels: Vec<String>,
    pub best_point: Vec<f64>,
    pub best_objective: f64,
    pub termination: Termination,
    /// Objective evaluations spent by the optimizer.
    pub calls: u64,
    pub trace: Vec<TracePoint>,
    pub grid: Option<GridValues>,
    /// Refit at the optimum.
    pub fit: FitResult,
    pub validation: ValidationReport,
    /// Informational only.
    pub wall_time: Duration,
    pub outputs: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn value(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.best_point[i])
    }

    pub fn coefficient(&self, descriptor: &str, channel: usize) -> Option<f64> {
        self.fit.coefficients.coefficient(descriptor, channel)
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(f, "experiment: {}", self.name)?;
        writeln!(f, "model: {}", c.model)?;
        writeln!(f, "optimizer: {} ({:?})", c.optimizer, self.termination)?;
        writeln!(
            f,
            "history: {}",
            match c.history {
                HistoryMode::Benchmark => "benchmark (model initial function)",
                HistoryMode::Blind => "blind (constant first sample)",
            }
        )?;
        writeln!(
            f,
            "samples: {} on [0, {}], retained training rows {}",
            c.sampling.samples,
            c.horizon,
            self.fit.rows.len()
        )?;
        writeln!(f, "recovered:")?;
        for (l, v) in self.labels.iter().zip(&self.best_point) {
            writeln!(f, "  {l} = {v:.10}")?;
        }
        writeln!(f, "best objective: {:.6e}", self.best_objective)?;
        writeln!(f, "calls: {}", self.calls)?;
        writeln!(f, "wall time: {:.3} s", self.wall_time.as_secs_f64())?;
        writeln!(f)?;
        write!(f, "{}", self.fit)?;
        writeln!(f)?;
        write!(f, "{}", self.validation)?;
        if !self.outputs.is_empty() {
            writeln!(f)?;
            writeln!(f, "outputs:")?;
            for p in &self.outputs {
                writeln!(f, "  {}", p.display())?;
            }
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// `t,x1..xn` rows at full precision.
pub fn write_trajectory_csv<W: Write>(w: W, times: &[f64], states: &DMatrix<f64>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=states.ncols()).map(|j| format!("x{j}")));
    out.write_record(&header)?;
    for (i, t) in times.iter().enumerate().take(states.nrows()) {
        let mut row = vec![format!("{t:.16e}")];
        row.extend((0..states.ncols()).map(|j| format!("{:.16e}", states[(i, j)])));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn write_echo(config: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("config_echo.txt");
    fs::write(&path, config.to_toml()?)?;
    Ok(path)
}

/// Generates data, optimizes, refits at the optimum, validates and writes
/// `report.txt`, `trajectory_true.csv`, `trajectory_fit.csv`,
/// `error_trace.csv`, `error_grid.csv` (brute force only) and
/// `config_echo.txt` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let problem = Problem::new(config)?;
    let dir = config.output.clone();
    fs::create_dir_all(&dir)?;
    let mut outputs = vec![write_echo(config, &dir)?];

    let counter = CallCounter::new();
    let opt = problem.optimize(config.optimizer, &counter)?;
    let calls = counter.get();
    debug_assert_eq!(Some(calls), opt.trace.last().map(|t| t.evaluations));

    let fit = problem.fit(&opt.best_point, &CallCounter::new())?;
    let validation = validate(
        &fit,
        &problem.samples,
        problem.history(),
        &problem.validation_options(),
    )?;

    let path = dir.join("trajectory_true.csv");
    problem.samples.write_csv(create(&path)?)?;
    outputs.push(path);
    let path = dir.join("trajectory_fit.csv");
    let empty = DMatrix::zeros(0, problem.samples.dim());
    write_trajectory_csv(
        create(&path)?,
        &problem.samples.times,
        validation.trajectory.as_ref().unwrap_or(&empty),
    )?;
    outputs.push(path);
    let path = dir.join("error_trace.csv");
    write_trace_csv(create(&path)?, &opt.trace)?;
    outputs.push(path);
    if let Some(grid) = &opt.grid {
        let path = dir.join("error_grid.csv");
        write_grid_csv(create(&path)?, grid)?;
        outputs.push(path);
    }
    let report_path = dir.join("report.txt");
    outputs.push(report_path.clone());

    let report = ExperimentReport {
        name: config.name(),
        config: config.clone(),
        labels: problem
            .space
            .labels()
            .iter()
            .map(|s| s.to_string())
            .collect(),
        best_point: opt.best_point,
        best_objective: opt.best_objective,
        termination: opt.termination,
        calls,
        trace: opt.trace,
        grid: opt.grid,
        fit,
        validation,
        wall_time: start.elapsed(),
        outputs,
    };
    fs::write(&report_path, report.to_string())?;
    Ok(report)
}

/// Brute-force objective curve over the configured search space, whatever the
/// configured optimizer. Writes `error_grid.csv`, `error_trace.csv` and
/// `config_echo.txt`.
pub fn run_grid(config: &ExperimentConfig) -> Result<OptimizationResult> {
    let problem = Problem::new(config)?;
    fs::create_dir_all(&config.output)?;
    write_echo(config, &config.output)?;
    let counter = CallCounter::new();
    let opt = problem.optimize(OptimizerKind::Bf, &counter)?;
    if let Some(grid) = &opt.grid {
        write_grid_csv(create(&config.output.join("error_grid.csv"))?, grid)?;
    }
    write_trace_csv(create(&config.output.join("error_trace.csv"))?, &opt.trace)?;
    Ok(opt)
}

fn default_workers() -> usize {
    1
}

fn default_optimizers() -> Vec<OptimizerKind> {
    vec![OptimizerKind::Bf, OptimizerKind::Pso]
}

/// A model x method x optimizer matrix of experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub output: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub models: Vec<String>,
    /// `E`, `P<M>`, `esindy` or `psindy`.
    pub methods: Vec<String>,
    #[serde(default = "default_optimizers")]
    pub optimizers: Vec<OptimizerKind>,
    /// Settings merged into every experiment configuration.
    #[serde(default)]
    pub base: toml::Table,
}

/// `E` / `esindy` or `P<M>` / `psindy`.
pub fn parse_method(s: &str) -> Option<(Method, Option<usize>)> {
    match s {
        "E" | "e" | "esindy" => Some((Method::Esindy, None)),
        "psindy" => Some((Method::Psindy, None)),
        _ => {
            let m = s
                .strip_prefix('P')
                .or_else(|| s.strip_prefix('p'))?
                .parse()
                .ok()?;
            Some((Method::Psindy, Some(m)))
        }
    }
}

impl SuiteConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// The experiment configurations in suite order. Every invalid entry is
    /// reported before anything runs.
    pub fn experiments(&self) -> Result<Vec<ExperimentConfig>> {
        let mut errs = Vec::new();
        if self.models.is_empty() {
            errs.push("suite: `models` is empty".into());
        }
        if self.methods.is_empty() {
            errs.push("suite: `methods` is empty".into());
        }
        if self.optimizers.is_empty() {
            errs.push("suite: `optimizers` is empty".into());
        }
        if self.workers == 0 {
            errs.push("suite: `workers` must be at least 1".into());
        }
        for key in [
            "model",
            "method",
            "optimizer",
            "output",
            "collocation_degree",
        ] {
            if self.base.contains_key(key) {
                errs.push(format!("suite: `{key}` cannot be set in [base]"));
            }
        }
        let mut out = Vec::new();
        for model in &self.models {
            for method in &self.methods {
                let Some((kind, degree)) = parse_method(method) else {
                    errs.push(format!("suite: unknown method `{method}`"));
                    continue;
                };
                for opt in &self.optimizers {
                    let mut t = self.base.clone();
                    t.insert("model".into(), model.clone().into());
                    t.insert(
                        "method".into(),
                        toml::Value::try_from(kind).expect("enum serializes"),
                    );
                    t.insert("optimizer".into(), opt.to_string().into());
                    if let Some(m) = degree {
                        t.insert("collocation_degree".into(), (m as i64).into());
                    }
                    let tag = method_tag(kind, degree.unwrap_or(10));
                    let dir = self.output.join(format!("{model}-{tag}-{opt}"));
                    t.insert("output".into(), dir.to_string_lossy().into_owned().into());
                    match ExperimentConfig::from_table(t) {
                        Ok(c) => out.push(c),
                        Err(Error::Config(e)) => {
                            errs.extend(e.into_iter().map(|e| format!("{model}-{tag}-{opt}: {e}")))
                        }
                        Err(e) => errs.push(format!("{model}-{tag}-{opt}: {e}")),
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(out)
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug)]
pub struct SuiteEntry {
    pub config: ExperimentConfig,
    pub outcome: Result<ExperimentReport>,
}

#[derive(Debug)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub outputs: Vec<PathBuf>,
}

impl SuiteReport {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.outcome.is_err()).count()
    }
}

/// Runs every experiment of the suite on up to `workers` threads. A failing
/// experiment is recorded and the rest continue. Writes `suite_calls.csv`,
/// `suite_values.csv` (both deterministic) and `suite_times.csv`.
pub fn run_suite(suite: &SuiteConfig) -> Result<SuiteReport> {
    let configs = suite.experiments()?;
    let slots: Vec<Mutex<Option<Result<ExperimentReport>>>> =
        configs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..suite.workers.min(configs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let r = run_experiment(&configs[i]);
                *slots[i].lock().expect("suite slot poisoned") = Some(r);
            });
        }
    });
    let entries: Vec<SuiteEntry> = configs
        .into_iter()
        .zip(slots)
        .map(|(config, slot)| SuiteEntry {
            config,
            outcome: slot
                .into_inner()
                .expect("suite slot poisoned")
                .unwrap_or_else(|| Err(Error::Invalid("experiment did not run".into()))),
        })
        .collect();

    fs::create_dir_all(&suite.output)?;
    let calls_path = suite.output.join("suite_calls.csv");
    let values_path = suite.output.join("suite_values.csv");
    let times_path = suite.output.join("suite_times.csv");
    let mut calls = csv::Writer::from_writer(create(&calls_path)?);
    let mut values = csv::Writer::from_writer(create(&values_path)?);
    let mut times = csv::Writer::from_writer(create(&times_path)?);
    calls.write_record([
        "experiment",
        "model",
        "method",
        "optimizer",
        "calls",
        "status",
    ])?;
    values.write_record([
        "experiment",
        "model",
        "method",
        "optimizer",
        "parameter",
        "value",
        "objective",
    ])?;
    times.write_record(["experiment", "wall_time_s"])?;
    for e in &entries {
        let c = &e.config;
        let name = c.name();
        let tag = method_tag(c.method, c.collocation_degree);
        let opt = c.optimizer.to_string();
        match &e.outcome {
            Ok(r) => {
                calls.write_record([&name, &c.model, &tag, &opt, &r.calls.to_string(), "ok"])?;
                for (l, v) in r.labels.iter().zip(&r.best_point) {
                    values.write_record([
                        name.as_str(),
                        &c.model,
                        &tag,
                        &opt,
                        l,
                        &format!("{v:.16e}"),
                        &format!("{:.16e}", r.best_objective),
                    ])?;
                }
                times
                    .write_record([name.as_str(), &format!("{:.3}", r.wall_time.as_secs_f64())])?;
            }
            Err(err) => {
                calls.write_record([&name, &c.model, &tag, &opt, "", &format!("failed: {err}")])?;
            }
        }
    }
    calls.flush()?;
    values.flush()?;
    times.flush()?;
    Ok(SuiteReport {
        entries,
        outputs: vec![calls_path, values_path, times_path],
    })
}
