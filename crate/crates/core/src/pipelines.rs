//! End-to-end fits for both identification routes and their physics-informed
//! objectives.
//!
//! An objective combines the regression residual `||X' - Theta Xi||_F` with the
//! mismatch between the training samples and a simulation of the learned
//! model, weighted by [`ErrorWeights`]. Only training rows enter either term.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::collocation::{assemble_field, collocation_offsets, make_scheme, CollocationScheme};
use crate::data::{delayed_blocks, InitialFn, SampleSet};
use crate::error::{Error, Result};
use crate::features::{BlockLabels, Library, LibrarySpec, Term};
use crate::integrators::{
    solve_dde, solve_ode, DdeProblem, DenseSolution, OdeProblem, SolverOptions,
};
use crate::regression::{residual_norm, stlsq, SparseCoefficients, StlsqConfig};

/// Objective value reported when the learned model cannot be simulated.
pub const BLOW_UP_SENTINEL: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorWeights {
    pub residual: f64,
    pub simulation: f64,
}

impl Default for ErrorWeights {
    fn default() -> Self {
        Self {
            residual: 1.0,
            simulation: 1.0,
        }
    }
}

impl ErrorWeights {
    pub fn new(residual: f64, simulation: f64) -> Result<Self> {
        let w = Self {
            residual,
            simulation,
        };
        let errs = w.validate();
        if errs.is_empty() {
            Ok(w)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.residual >= 0.0 && self.simulation >= 0.0) {
            errs.push("error weights must be nonnegative".to_string());
        }
        if !(self.residual + self.simulation > 0.0) {
            errs.push("at least one error weight must be positive".to_string());
        }
        errs
    }
}

/// Initial function used to simulate a learned model.
#[derive(Clone, Copy)]
pub enum HistoryProvider {
    /// The benchmark's own initial function.
    Model(InitialFn),
    /// The earliest sample, extended constantly into the past.
    ConstantFirstSample,
}

impl fmt::Debug for HistoryProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HistoryProvider::Model(_) => f.write_str("Model"),
            HistoryProvider::ConstantFirstSample => f.write_str("ConstantFirstSample"),
        }
    }
}

impl HistoryProvider {
    pub fn is_blind(&self) -> bool {
        matches!(self, HistoryProvider::ConstantFirstSample)
    }

    pub fn eval(&self, samples: &SampleSet, eta: f64, out: &mut [f64]) {
        match self {
            HistoryProvider::Model(phi) => phi(eta, out),
            HistoryProvider::ConstantFirstSample => {
                for (j, v) in out.iter_mut().enumerate() {
                    *v = samples.states[(0, j)];
                }
            }
        }
    }
}

/// Shared count of regression-plus-simulation evaluations.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn increment(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// How the delayed blocks of a fit were formed.
#[derive(Debug, Clone, PartialEq)]
pub enum Reconstruction {
    /// Interpolated copies at `t - tau_j`, in the given order.
    Delays(Vec<f64>),
    /// Interpolated copies at the collocation nodes of `[-tau_bar, 0]`.
    Collocation { degree: usize, tau_bar: f64 },
}

impl Reconstruction {
    pub fn offsets(&self) -> Result<Vec<f64>> {
        match self {
            Reconstruction::Delays(d) => Ok(d.iter().map(|t| -t).collect()),
            Reconstruction::Collocation { degree, tau_bar } => {
                Ok(collocation_offsets(&make_scheme(*degree, *tau_bar, 1)?))
            }
        }
    }

    pub fn labels(&self) -> BlockLabels {
        match self {
            Reconstruction::Delays(_) => BlockLabels::Delays,
            Reconstruction::Collocation { .. } => BlockLabels::Nodes,
        }
    }

    pub fn max_delay(&self) -> f64 {
        match self {
            Reconstruction::Delays(d) => d.iter().copied().fold(0.0, f64::max),
            Reconstruction::Collocation { tau_bar, .. } => *tau_bar,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Reconstruction::Delays(d) => {
                if d.is_empty() {
                    return Err(Error::Invalid("at least one delay is required".into()));
                }
                if let Some(t) = d.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
                    return Err(Error::Invalid(format!("delays must be positive (got {t})")));
                }
            }
            Reconstruction::Collocation { degree, tau_bar } => {
                if *degree < 1 {
                    return Err(Error::Invalid(
                        "collocation degree must be at least 1".into(),
                    ));
                }
                if !(*tau_bar > 0.0 && tau_bar.is_finite()) {
                    return Err(Error::Invalid(format!(
                        "maximum delay must be positive (got {tau_bar})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Settings shared by every objective evaluation of one experiment.
#[derive(Debug, Clone)]
pub struct ObjectiveSettings {
    pub library: LibrarySpec,
    pub stlsq: StlsqConfig,
    pub weights: ErrorWeights,
    pub solver: SolverOptions,
    /// A simulated state larger than this multiple of the data range counts as
    /// a blow-up.
    pub blow_up_factor: f64,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        Self {
            library: LibrarySpec::default(),
            stlsq: StlsqConfig::default(),
            weights: ErrorWeights::default(),
            solver: SolverOptions {
                max_steps: 200_000,
                ..SolverOptions::default().with_tolerances(1e-8, 1e-10)
            },
            blow_up_factor: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub reconstruction: Reconstruction,
    pub library: LibrarySpec,
    pub coefficients: SparseCoefficients,
    pub weights: ErrorWeights,
    pub residual: f64,
    pub simulation: f64,
    pub objective: f64,
    /// Why the simulation of the learned model failed, if it did.
    pub blow_up: Option<String>,
    /// Sample rows (all in the training segment) that entered the fit.
    pub rows: Vec<usize>,
    /// Simulated states at the times of `rows`.
    pub trajectory: Option<DMatrix<f64>>,
    pub blind_history: bool,
    /// Contribution to the call counter.
    pub calls: u64,
}

impl FitResult {
    pub fn dim(&self) -> usize {
        self.coefficients.dim()
    }

    pub fn num_blocks(&self) -> usize {
        match &self.reconstruction {
            Reconstruction::Delays(d) => d.len() + 1,
            Reconstruction::Collocation { degree, .. } => degree + 1,
        }
    }

    pub fn compiled_library(&self) -> Result<Library> {
        Library::new(
            &self.library,
            self.dim(),
            self.num_blocks(),
            self.reconstruction.labels(),
        )
    }

    /// Learned right-hand side restricted to its active terms.
    pub fn learned_rhs(&self) -> Result<LearnedRhs> {
        let lib = self.compiled_library()?;
        let n = self.dim();
        let rows = (0..n)
            .map(|j| {
                self.coefficients.active[j]
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a)
                    .map(|(k, _)| {
                        (
                            lib.terms()[k].clone(),
                            self.coefficients.coefficients[(k, j)],
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(LearnedRhs { rows })
    }
}

/// Sparse sum of library terms per output channel.
#[derive(Debug, Clone)]
pub struct LearnedRhs {
    rows: Vec<Vec<(Term, f64)>>,
}

impl LearnedRhs {
    /// `vars` holds every block back to back.
    pub fn eval(&self, vars: &[f64], out: &mut [f64]) {
        for (o, terms) in out.iter_mut().zip(&self.rows) {
            *o = terms.iter().map(|(t, c)| c * t.eval(vars)).sum();
        }
    }
}

impl fmt::Display for FitResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.reconstruction {
            Reconstruction::Delays(d) => {
                let list: Vec<String> = d.iter().map(|t| format!("{t:.6}")).collect();
                writeln!(f, "method: esindy")?;
                writeln!(f, "delays: {}", list.join(", "))?;
            }
            Reconstruction::Collocation { degree, tau_bar } => {
                writeln!(f, "method: psindy")?;
                writeln!(f, "collocation degree: {degree}")?;
                writeln!(f, "max delay: {tau_bar:.6}")?;
            }
        }
        writeln!(
            f,
            "library: degree {}, constant {}, cross-block {:?}{}",
            self.library.degree,
            self.library.include_constant,
            self.library.cross_block,
            match &self.library.rational {
                Some(r) => format!(", rational exponent {} on {:?}", r.exponent, r.selector),
                None => String::new(),
            }
        )?;
        writeln!(f, "library columns: {}", self.coefficients.num_terms())?;
        writeln!(f, "training rows used: {}", self.rows.len())?;
        if self.blind_history {
            writeln!(f, "history: constant extension of the first sample")?;
        }
        for j in 0..self.dim() {
            writeln!(f, "dx{}/dt =", j + 1)?;
            let terms = self.coefficients.active_terms(j);
            if terms.is_empty() {
                writeln!(f, "    0")?;
            }
            for (d, c) in terms {
                writeln!(f, "    {c:+.6e} {d}")?;
            }
        }
        writeln!(
            f,
            "weights: residual {}, simulation {}",
            self.weights.residual, self.weights.simulation
        )?;
        writeln!(f, "residual term: {:.6e}", self.residual)?;
        writeln!(f, "simulation term: {:.6e}", self.simulation)?;
        writeln!(f, "objective: {:.6e}", self.objective)?;
        if let Some(reason) = &self.blow_up {
            writeln!(f, "blow-up: {reason}")?;
        }
        Ok(())
    }
}

fn regress(
    samples: &SampleSet,
    reconstruction: Reconstruction,
    library: &LibrarySpec,
    stlsq_cfg: &StlsqConfig,
) -> Result<FitResult> {
    reconstruction.validate()?;
    if samples.train_end == 0 {
        return Err(Error::InsufficientData("no training samples".into()));
    }
    let training = samples.training();
    let offsets = reconstruction.offsets()?;
    let shifted = delayed_blocks(&training, &offsets)?;
    let rows = shifted.rows;
    let n = samples.dim();
    let current = DMatrix::from_fn(rows.len(), n, |r, j| training.states[(rows[r], j)]);
    let dx = DMatrix::from_fn(rows.len(), n, |r, j| training.derivatives[(rows[r], j)]);
    let mut blocks = vec![&current];
    blocks.extend(shifted.blocks.iter());
    let library = library.resolve_for(n, blocks.len(), rows.len());
    let lib = Library::new(&library, n, blocks.len(), reconstruction.labels())?;
    let theta = lib.build(&blocks)?;
    let coefficients = stlsq(&theta, &dx, stlsq_cfg)?;
    let residual = residual_norm(&theta.matrix, &coefficients.coefficients, &dx)?;
    Ok(FitResult {
        reconstruction,
        library,
        coefficients,
        weights: ErrorWeights::new(1.0, 0.0)?,
        residual,
        simulation: 0.0,
        objective: residual,
        blow_up: None,
        rows,
        trajectory: None,
        blind_history: false,
        calls: 0,
    })
}

/// Regression with delayed blocks at `t - tau_j`.
pub fn esindy_fit(
    samples: &SampleSet,
    delays: &[f64],
    library: &LibrarySpec,
    stlsq_cfg: &StlsqConfig,
) -> Result<FitResult> {
    regress(
        samples,
        Reconstruction::Delays(delays.to_vec()),
        library,
        stlsq_cfg,
    )
}

/// Regression with blocks at the collocation nodes of `[-tau_bar, 0]`.
pub fn psindy_fit(
    samples: &SampleSet,
    tau_bar: f64,
    degree: usize,
    library: &LibrarySpec,
    stlsq_cfg: &StlsqConfig,
) -> Result<FitResult> {
    regress(
        samples,
        Reconstruction::Collocation { degree, tau_bar },
        library,
        stlsq_cfg,
    )
}

fn data_scale(samples: &SampleSet) -> f64 {
    samples.states.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn simulation_options(samples: &SampleSet, settings: &ObjectiveSettings) -> SolverOptions {
    SolverOptions {
        max_state_norm: settings.blow_up_factor * (1.0 + data_scale(samples)),
        ..settings.solver
    }
}

/// The learned model integrated from `history` over `[t_0, t_end]`, where
/// `t_0` is the first sample time. For collocated fits only the block of
/// current states is returned.
pub fn simulate(
    fit: &FitResult,
    samples: &SampleSet,
    history: HistoryProvider,
    t_end: f64,
    options: &SolverOptions,
) -> Result<SimulatedTrajectory> {
    let rhs = fit.learned_rhs()?;
    let n = fit.dim();
    let t0 = samples.times[0];
    match &fit.reconstruction {
        Reconstruction::Delays(delays) => {
            let mut unique = delays.clone();
            unique.sort_by(f64::total_cmp);
            unique.dedup();
            // block b + 1 of the library reads delay slot `slot[b]` of the solver
            let slot: Vec<usize> = delays
                .iter()
                .map(|d| unique.iter().position(|u| u == d).unwrap())
                .collect();
            let k = delays.len();
            let problem = DdeProblem::new(
                move |_t, x: &[f64], xd: &[f64], out: &mut [f64]| {
                    let mut vars = vec![0.0; n * (k + 1)];
                    vars[..n].copy_from_slice(x);
                    for (b, &s) in slot.iter().enumerate() {
                        vars[(b + 1) * n..(b + 2) * n].copy_from_slice(&xd[s * n..(s + 1) * n]);
                    }
                    rhs.eval(&vars, out);
                },
                move |eta, out: &mut [f64]| history.eval(samples, eta, out),
                unique,
                n,
                (t0, t_end),
            )
            .with_options(*options);
            Ok(SimulatedTrajectory {
                solution: solve_dde(&problem)?,
                dim: n,
            })
        }
        Reconstruction::Collocation { degree, tau_bar } => {
            let scheme = make_scheme(*degree, *tau_bar, n)?;
            let u0 = scheme.restrict(|eta, out| history.eval(samples, eta, out));
            let field = assemble_field(&scheme, move |u: &[f64], out: &mut [f64]| rhs.eval(u, out));
            let problem = OdeProblem::new(move |t, u, du| field.eval(t, u, du), u0, (t0, t_end))
                .with_options(*options);
            Ok(SimulatedTrajectory {
                solution: solve_ode(&problem)?,
                dim: n,
            })
        }
    }
}

/// Dense solution of a simulated learned model.
#[derive(Debug, Clone)]
pub struct SimulatedTrajectory {
    pub solution: DenseSolution,
    dim: usize,
}

impl SimulatedTrajectory {
    /// Physical state at `t`: the first `n` components of the solution.
    pub fn state(&self, t: f64) -> Result<Vec<f64>> {
        let mut full = self.solution.eval(t)?;
        full.truncate(self.dim);
        Ok(full)
    }

    pub fn sample(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(times.len(), self.dim);
        for (i, &t) in times.iter().enumerate() {
            let s = self.state(t)?;
            out.row_mut(i).copy_from_slice(&s);
        }
        Ok(out)
    }
}

fn attach_simulation(
    mut fit: FitResult,
    samples: &SampleSet,
    settings: &ObjectiveSettings,
    history: HistoryProvider,
    counter: &CallCounter,
) -> FitResult {
    counter.increment();
    fit.calls = 1;
    fit.weights = settings.weights;
    fit.blind_history = history.is_blind();
    let times: Vec<f64> = fit.rows.iter().map(|&i| samples.times[i]).collect();
    let t_end = *times.last().unwrap();
    let opts = simulation_options(samples, settings);
    let outcome = simulate(&fit, samples, history, t_end, &opts).and_then(|sim| sim.sample(&times));
    let w = settings.weights;
    match outcome {
        Ok(traj) => {
            let target = DMatrix::from_fn(times.len(), samples.dim(), |r, j| {
                samples.states[(fit.rows[r], j)]
            });
            let mismatch = (&target - &traj).norm();
            fit.trajectory = Some(traj);
            if mismatch.is_finite() {
                fit.simulation = mismatch;
            } else {
                fit.simulation = BLOW_UP_SENTINEL;
                fit.blow_up = Some("non-finite simulated state".into());
            }
        }
        Err(e) => {
            fit.simulation = BLOW_UP_SENTINEL;
            fit.blow_up = Some(e.to_string());
        }
    }
    fit.objective = w.residual * fit.residual + w.simulation * fit.simulation;
    if !fit.residual.is_finite() || (fit.blow_up.is_some() && w.simulation > 0.0) {
        fit.objective = BLOW_UP_SENTINEL;
    }
    fit
}

/// Delayed-library fit plus simulation of the learned delay equation over the
/// training window. Counts one call.
pub fn esindy_objective(
    samples: &SampleSet,
    delays: &[f64],
    settings: &ObjectiveSettings,
    history: HistoryProvider,
    counter: &CallCounter,
) -> Result<FitResult> {
    let fit = esindy_fit(samples, delays, &settings.library, &settings.stlsq)?;
    Ok(attach_simulation(fit, samples, settings, history, counter))
}

/// Collocated-library fit plus simulation of the collocated ODE over the
/// training window. Counts one call.
pub fn psindy_objective(
    samples: &SampleSet,
    tau_bar: f64,
    degree: usize,
    settings: &ObjectiveSettings,
    history: HistoryProvider,
    counter: &CallCounter,
) -> Result<FitResult> {
    let fit = psindy_fit(samples, tau_bar, degree, &settings.library, &settings.stlsq)?;
    Ok(attach_simulation(fit, samples, settings, history, counter))
}

/// Mismatch of one segment of the samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentError {
    pub sup: f64,
    pub frobenius: f64,
}

impl SegmentError {
    fn between(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Self {
        let d = a - b;
        Self {
            sup: d.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
            frobenius: d.norm(),
        }
    }

    fn blown_up() -> Self {
        Self {
            sup: f64::INFINITY,
            frobenius: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub training: SegmentError,
    pub validation: SegmentError,
    pub blow_up: Option<String>,
    /// Simulated states at every sample time, absent after a blow-up.
    pub trajectory: Option<DMatrix<f64>>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "training mismatch: sup {:.6e}, frobenius {:.6e}",
            self.training.sup, self.training.frobenius
        )?;
        writeln!(
            f,
            "validation mismatch: sup {:.6e}, frobenius {:.6e}",
            self.validation.sup, self.validation.frobenius
        )?;
        if let Some(r) = &self.blow_up {
            writeln!(f, "validation blow-up: {r}")?;
        }
        Ok(())
    }
}

/// Simulates the learned model over all samples and compares it with the
/// training and validation segments separately.
pub fn validate(
    fit: &FitResult,
    samples: &SampleSet,
    history: HistoryProvider,
    options: &SolverOptions,
) -> Result<ValidationReport> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empty sample set".into()));
    }
    if samples.dim() != fit.dim() {
        return Err(Error::Shape(format!(
            "fit has dimension {}, samples {}",
            fit.dim(),
            samples.dim()
        )));
    }
    let m = samples.len();
    let k = samples.train_end;
    let t_end = samples.times[m - 1];
    let outcome = if t_end > samples.times[0] {
        simulate(fit, samples, history, t_end, options).and_then(|sim| sim.sample(&samples.times))
    } else {
        let mut x0 = vec![0.0; samples.dim()];
        history.eval(samples, 0.0, &mut x0);
        Ok(DMatrix::from_row_slice(1, x0.len(), &x0))
    };
    match outcome {
        Ok(traj) if traj.iter().all(|v| v.is_finite()) => {
            let seg = |a: usize, b: usize| {
                if a == b {
                    SegmentError {
                        sup: 0.0,
                        frobenius: 0.0,
                    }
                } else {
                    SegmentError::between(
                        &samples.states.rows(a, b - a).into_owned(),
                        &traj.rows(a, b - a).into_owned(),
                    )
                }
            };
            Ok(ValidationReport {
                training: seg(0, k),
                validation: seg(k, m),
                blow_up: None,
                trajectory: Some(traj),
            })
        }
        Ok(_) => Ok(ValidationReport {
            training: SegmentError::blown_up(),
            validation: SegmentError::blown_up(),
            blow_up: Some("non-finite simulated state".into()),
            trajectory: None,
        }),
        Err(e @ (Error::Integration { .. } | Error::Domain { .. })) => Ok(ValidationReport {
            training: SegmentError::blown_up(),
            validation: SegmentError::blown_up(),
            blow_up: Some(e.to_string()),
            trajectory: None,
        }),
        Err(e) => Err(e),
    }
}

/// The collocation scheme a collocated fit simulates with.
pub fn scheme_of(fit: &FitResult) -> Option<CollocationScheme> {
    match fit.reconstruction {
        Reconstruction::Collocation { degree, tau_bar } => {
            make_scheme(degree, tau_bar, fit.dim()).ok()
        }
        Reconstruction::Delays(_) => None,
    }
}
