//! Benchmark delay models, synthetic sampling, derivative estimation and the
//! linear reconstruction of delayed samples.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{solve_dde, DdeProblem, DenseSolution, SolverOptions};

/// `f(params, x(t), [x(t - tau_1), ..., x(t - tau_k)], out)`.
pub type ModelRhsFn = fn(&[f64], &[f64], &[f64], &mut [f64]);
/// Initial function on `[-max_delay, 0]`.
pub type InitialFn = fn(f64, &mut [f64]);

/// Fraction of the samples used for training; the rest is held out.
pub const TRAIN_FRACTION: f64 = 0.6;

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    pub param_names: Vec<String>,
    pub params: Vec<f64>,
    pub delays: Vec<f64>,
    pub rhs: ModelRhsFn,
    pub history: InitialFn,
    pub horizon: f64,
    pub samples: usize,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field(
                "params",
                &self
                    .param_names
                    .iter()
                    .zip(&self.params)
                    .collect::<Vec<_>>(),
            )
            .field("delays", &self.delays)
            .field("horizon", &self.horizon)
            .field("samples", &self.samples)
            .finish()
    }
}

impl ModelSpec {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.param_names
            .iter()
            .position(|p| p == name)
            .map(|i| self.params[i])
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Result<Self> {
        let i = self
            .param_names
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| {
                Error::Invalid(format!("model {} has no parameter {name}", self.name))
            })?;
        self.params[i] = value;
        Ok(self)
    }

    pub fn max_delay(&self) -> f64 {
        self.delays.iter().copied().fold(0.0, f64::max)
    }

    /// Right-hand side at a point, delayed states flattened in delay order.
    pub fn eval_rhs(&self, x: &[f64], delayed: &[f64], out: &mut [f64]) {
        (self.rhs)(&self.params, x, delayed, out)
    }

    pub fn dde_problem(&self, horizon: f64, options: SolverOptions) -> DdeProblem<'_> {
        let params = &self.params;
        let rhs = self.rhs;
        DdeProblem::new(
            move |_, x, xd, out| rhs(params, x, xd, out),
            self.history,
            self.delays.clone(),
            self.dim,
            (0.0, horizon),
        )
        .with_options(options)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.dim == 0 {
            errs.push("model dimension must be at least 1".to_string());
        }
        if self.delays.iter().any(|&d| !(d > 0.0)) {
            errs.push("model delays must be positive".to_string());
        }
        if self.param_names.len() != self.params.len() {
            errs.push("parameter names and values differ in length".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

fn logistic_rhs(p: &[f64], x: &[f64], xd: &[f64], out: &mut [f64]) {
    out[0] = p[0] * x[0] * (1.0 - xd[0]);
}

fn mackey_glass_rhs(p: &[f64], x: &[f64], xd: &[f64], out: &mut [f64]) {
    let (beta, gamma, alpha) = (p[0], p[1], p[2]);
    out[0] = beta * xd[0] / (1.0 + xd[0].powf(alpha)) - gamma * x[0];
}

fn two_delay_rhs(p: &[f64], _x: &[f64], xd: &[f64], out: &mut [f64]) {
    out[0] = p[0] * xd[0].powi(2) + p[1] * xd[1].powi(3);
}

fn rossler_rhs(p: &[f64], x: &[f64], xd: &[f64], out: &mut [f64]) {
    let (a1, a2, b1, b2) = (p[0], p[1], p[2], p[3]);
    out[0] = -x[1] - x[2] + a1 * xd[0] + a2 * xd[3];
    out[1] = x[0] + b1 * x[1];
    out[2] = b2 + x[2] * (x[0] - 1.0);
}

fn cos_history(eta: f64, out: &mut [f64]) {
    out[0] = eta.cos();
}

fn rossler_history(_eta: f64, out: &mut [f64]) {
    out.copy_from_slice(&[1.5, 0.4, 0.9]);
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// The four benchmark problems with their reference parameters.
pub fn builtin_models() -> Vec<ModelSpec> {
    vec![
        ModelSpec {
            name: "logistic".into(),
            dim: 1,
            param_names: names(&["r"]),
            params: vec![1.8],
            delays: vec![1.0],
            rhs: logistic_rhs,
            history: cos_history,
            horizon: 30.0,
            samples: 100,
        },
        ModelSpec {
            name: "mackey-glass".into(),
            dim: 1,
            param_names: names(&["beta", "gamma", "alpha"]),
            params: vec![4.0, 2.0, 9.6],
            delays: vec![1.0],
            rhs: mackey_glass_rhs,
            history: cos_history,
            horizon: 30.0,
            samples: 100,
        },
        ModelSpec {
            name: "two-delay".into(),
            dim: 1,
            param_names: names(&["a2", "a3"]),
            params: vec![-1.0, -1.0],
            delays: vec![0.65, 1.2],
            rhs: two_delay_rhs,
            history: cos_history,
            horizon: 30.0,
            samples: 100,
        },
        ModelSpec {
            name: "rossler".into(),
            dim: 3,
            param_names: names(&["alpha1", "alpha2", "beta1", "beta2"]),
            params: vec![0.2, 0.5, 0.2, 0.2],
            delays: vec![1.5, 2.0],
            rhs: rossler_rhs,
            history: rossler_history,
            horizon: 30.0,
            samples: 100,
        },
    ]
}

pub fn find_model(name: &str) -> Option<ModelSpec> {
    builtin_models().into_iter().find(|m| m.name == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeDistribution {
    Uniform,
    RandomUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    /// Right-hand side of the generating model evaluated on its own solution.
    Exact,
    /// Second-order finite differences of the (possibly noisy) states.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub samples: usize,
    pub distribution: TimeDistribution,
    /// Noise standard deviation relative to each channel's sample standard deviation.
    pub noise: f64,
    pub seed: u64,
    pub derivatives: DerivativeMode,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            distribution: TimeDistribution::Uniform,
            noise: 0.0,
            seed: 0,
            derivatives: DerivativeMode::Exact,
            rel_tol: 1e-6,
            abs_tol: 1e-8,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.samples < 2 {
            errs.push(format!(
                "sampling.samples must be at least 2 (got {})",
                self.samples
            ));
        }
        if !(self.noise >= 0.0) {
            errs.push(format!(
                "sampling.noise must be non-negative (got {})",
                self.noise
            ));
        }
        if self.derivatives == DerivativeMode::FiniteDifference && self.samples < 3 {
            errs.push("finite-difference derivatives need at least 3 samples".into());
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            errs.push("sampling tolerances must be positive".into());
        }
        errs
    }
}

/// Trajectory samples: times, states `X` (m x n) and derivatives `X'` (m x n).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub derivatives: DMatrix<f64>,
    pub derivative_source: DerivativeMode,
    /// Number of leading rows used for training.
    pub train_end: usize,
}

pub fn default_train_end(m: usize) -> usize {
    ((TRAIN_FRACTION * m as f64).ceil() as usize).min(m)
}

impl SampleSet {
    pub fn new(
        times: Vec<f64>,
        states: DMatrix<f64>,
        derivatives: DMatrix<f64>,
        derivative_source: DerivativeMode,
    ) -> Result<Self> {
        let m = times.len();
        if states.nrows() != m || derivatives.shape() != states.shape() {
            return Err(Error::Shape(format!(
                "{} times, states {:?}, derivatives {:?}",
                m,
                states.shape(),
                derivatives.shape()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid(
                "sample times must be strictly ascending".into(),
            ));
        }
        Ok(Self {
            times,
            states,
            derivatives,
            derivative_source,
            train_end: default_train_end(m),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn state(&self, i: usize) -> Vec<f64> {
        self.states.row(i).iter().copied().collect()
    }

    /// The training rows as a sample set of their own.
    pub fn training(&self) -> SampleSet {
        let k = self.train_end;
        SampleSet {
            times: self.times[..k].to_vec(),
            states: self.states.rows(0, k).into_owned(),
            derivatives: self.derivatives.rows(0, k).into_owned(),
            derivative_source: self.derivative_source,
            train_end: k,
        }
    }

    /// CSV with header `t,x1..xn,dx1..dxn` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.dim();
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|j| format!("x{j}")));
        header.extend((1..=n).map(|j| format!("dx{j}")));
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![fmt_f64(self.times[i])];
            rec.extend((0..n).map(|j| fmt_f64(self.states[(i, j)])));
            rec.extend((0..n).map(|j| fmt_f64(self.derivatives[(i, j)])));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, derivative_source: DerivativeMode) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let cols = header.len();
        if cols < 3 || cols % 2 == 0 || &header[0] != "t" {
            return Err(Error::Invalid(format!(
                "unexpected sample header {header:?}"
            )));
        }
        let n = (cols - 1) / 2;
        let mut times = Vec::new();
        let mut xs = Vec::new();
        let mut dxs = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Invalid(format!("bad number in sample file: {e}")))?;
            if vals.len() != cols {
                return Err(Error::Shape(format!(
                    "row with {} fields, expected {cols}",
                    vals.len()
                )));
            }
            times.push(vals[0]);
            xs.extend_from_slice(&vals[1..=n]);
            dxs.extend_from_slice(&vals[n + 1..]);
        }
        let m = times.len();
        SampleSet::new(
            times,
            DMatrix::from_row_slice(m, n, &xs),
            DMatrix::from_row_slice(m, n, &dxs),
            derivative_source,
        )
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn sample_times(cfg: &SamplingConfig, horizon: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = cfg.samples;
    match cfg.distribution {
        TimeDistribution::Uniform => (0..m)
            .map(|i| horizon * i as f64 / (m - 1) as f64)
            .collect(),
        TimeDistribution::RandomUniform => {
            let mut ts: Vec<f64> = (0..m.saturating_sub(2))
                .map(|_| rng.random::<f64>() * horizon)
                .collect();
            ts.push(0.0);
            ts.push(horizon);
            ts.sort_by(f64::total_cmp);
            ts.dedup();
            ts
        }
    }
}

fn channel_std(x: &DMatrix<f64>, j: usize) -> f64 {
    let col = x.column(j);
    let m = col.len() as f64;
    let mean = col.sum() / m;
    (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt()
}

fn add_noise(x: &mut DMatrix<f64>, level: f64, rng: &mut ChaCha8Rng) {
    let scales: Vec<f64> = (0..x.ncols()).map(|j| level * channel_std(x, j)).collect();
    for i in 0..x.nrows() {
        for (j, s) in scales.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            x[(i, j)] += s * z;
        }
    }
}

/// Delayed state of a model trajectory at time `s`, from the initial function
/// before 0 and from the dense solution afterwards.
fn model_state_at(model: &ModelSpec, sol: &DenseSolution, s: f64, out: &mut [f64]) -> Result<()> {
    if s <= 0.0 {
        (model.history)(s, out);
        Ok(())
    } else {
        sol.eval_into(s, out)
    }
}

/// Integrates `model` on `[0, horizon]` and samples it according to `cfg`.
pub fn generate_samples(
    model: &ModelSpec,
    cfg: &SamplingConfig,
    horizon: f64,
) -> Result<SampleSet> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    model.validate()?;
    let opts = SolverOptions::default().with_tolerances(cfg.rel_tol, cfg.abs_tol);
    let sol = solve_dde(&model.dde_problem(horizon, opts))?;
    let (times, states) = sample_model(model, &sol, cfg, horizon)?;
    let n = model.dim;
    let m = times.len();
    let mut x = states;
    let dx = match cfg.derivatives {
        DerivativeMode::Exact => {
            let mut dx = DMatrix::zeros(m, n);
            let mut xi = vec![0.0; n];
            let mut xd = vec![0.0; n * model.delays.len()];
            let mut out = vec![0.0; n];
            for (i, &t) in times.iter().enumerate() {
                xi.iter_mut().enumerate().for_each(|(j, v)| *v = x[(i, j)]);
                for (k, tau) in model.delays.iter().enumerate() {
                    model_state_at(model, &sol, t - tau, &mut xd[k * n..(k + 1) * n])?;
                }
                model.eval_rhs(&xi, &xd, &mut out);
                dx.row_mut(i).copy_from_slice(&out);
            }
            if cfg.noise > 0.0 {
                let mut rng = noise_rng(cfg);
                add_noise(&mut x, cfg.noise, &mut rng);
            }
            dx
        }
        DerivativeMode::FiniteDifference => {
            if cfg.noise > 0.0 {
                let mut rng = noise_rng(cfg);
                add_noise(&mut x, cfg.noise, &mut rng);
            }
            estimate_derivatives(&times, &x)?
        }
    };
    SampleSet::new(times, x, dx, cfg.derivatives)
}

fn noise_rng(cfg: &SamplingConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15)
}

fn sample_model(
    model: &ModelSpec,
    sol: &DenseSolution,
    cfg: &SamplingConfig,
    horizon: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let times = sample_times(cfg, horizon, &mut rng);
    let mut x = DMatrix::zeros(times.len(), model.dim);
    for (i, &t) in times.iter().enumerate() {
        let v = sol.eval(t)?;
        x.row_mut(i).copy_from_slice(&v);
    }
    Ok((times, x))
}

/// Weights of the derivative at `s` of the quadratic through three points.
fn quadratic_derivative_weights(t: [f64; 3], s: f64) -> [f64; 3] {
    let [a, b, c] = t;
    [
        ((s - b) + (s - c)) / ((a - b) * (a - c)),
        ((s - a) + (s - c)) / ((b - a) * (b - c)),
        ((s - a) + (s - b)) / ((c - a) * (c - b)),
    ]
}

/// Second-order finite differences on a possibly nonuniform grid.
pub fn estimate_derivatives(times: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = times.len();
    if m < 3 {
        return Err(Error::InsufficientData(format!(
            "derivative estimation needs at least 3 samples, got {m}"
        )));
    }
    if x.nrows() != m {
        return Err(Error::Shape(format!(
            "{m} times but {} state rows",
            x.nrows()
        )));
    }
    let mut dx = DMatrix::zeros(m, x.ncols());
    for i in 0..m {
        let c = i.clamp(1, m - 2);
        let idx = [c - 1, c, c + 1];
        let w = quadratic_derivative_weights(idx.map(|k| times[k]), times[i]);
        for j in 0..x.ncols() {
            dx[(i, j)] = w[0] * x[(idx[0], j)] + w[1] * x[(idx[1], j)] + w[2] * x[(idx[2], j)];
        }
    }
    Ok(dx)
}

/// Index `k` with `times[k] <= q <= times[k + 1]`, assuming `q` is in range.
fn bracket(times: &[f64], q: f64) -> usize {
    let k = times.partition_point(|&t| t <= q);
    k.saturating_sub(1).min(times.len() - 2)
}

fn interp_row_into(times: &[f64], x: &DMatrix<f64>, q: f64, out: &mut [f64]) {
    let m = times.len();
    if m == 1 {
        out.iter_mut().enumerate().for_each(|(j, v)| *v = x[(0, j)]);
        return;
    }
    let k = bracket(times, q);
    if q == times[k] {
        out.iter_mut().enumerate().for_each(|(j, v)| *v = x[(k, j)]);
        return;
    }
    if q == times[k + 1] {
        out.iter_mut()
            .enumerate()
            .for_each(|(j, v)| *v = x[(k + 1, j)]);
        return;
    }
    let s = (q - times[k]) / (times[k + 1] - times[k]);
    for (j, v) in out.iter_mut().enumerate() {
        *v = (1.0 - s) * x[(k, j)] + s * x[(k + 1, j)];
    }
}

/// Piecewise-linear interpolation of the rows of `x` at `query`.
pub fn interp_linear(times: &[f64], x: &DMatrix<f64>, query: f64) -> Result<Vec<f64>> {
    let (lo, hi) = match (times.first(), times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::InsufficientData("no samples to interpolate".into())),
    };
    if !(query >= lo && query <= hi) {
        return Err(Error::Domain {
            value: query,
            lo,
            hi,
        });
    }
    let mut out = vec![0.0; x.ncols()];
    interp_row_into(times, x, query, &mut out);
    Ok(out)
}

/// Rows that can be shifted by every offset, and the shifted copies of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedBlocks {
    pub rows: Vec<usize>,
    pub blocks: Vec<DMatrix<f64>>,
}

/// Reconstructs `x(t_i + offset)` for every offset by linear interpolation,
/// dropping rows whose shifted time falls before the first sample.
pub fn delayed_blocks(samples: &SampleSet, offsets: &[f64]) -> Result<DelayedBlocks> {
    if let Some(o) = offsets.iter().find(|&&o| !(o < 0.0)) {
        return Err(Error::Invalid(format!("offsets must be negative, got {o}")));
    }
    let times = &samples.times;
    let m = times.len();
    if m == 0 {
        return Err(Error::InsufficientData("empty sample set".into()));
    }
    let t_first = times[0];
    let slack = 1e-12 * (t_first.abs() + times[m - 1].abs() + 1.0);
    let min_off = offsets.iter().copied().fold(0.0, f64::min);
    let rows: Vec<usize> = (0..m)
        .filter(|&i| times[i] + min_off >= t_first - slack)
        .collect();
    if rows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no sample can be shifted by {min_off}"
        )));
    }
    let n = samples.dim();
    let blocks = offsets
        .iter()
        .map(|&off| {
            let mut b = DMatrix::zeros(rows.len(), n);
            let mut buf = vec![0.0; n];
            for (r, &i) in rows.iter().enumerate() {
                let q = (times[i] + off).max(t_first);
                interp_row_into(times, &samples.states, q, &mut buf);
                b.row_mut(r).copy_from_slice(&buf);
            }
            b
        })
        .collect();
    Ok(DelayedBlocks { rows, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_samples() -> SampleSet {
        let t = vec![0.0, 1.0, 2.0, 3.0];
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 4.0, 9.0]);
        SampleSet::new(t, x.clone(), x, DerivativeMode::Exact).unwrap()
    }

    #[test]
    fn builtin_rhs_values() {
        let models = builtin_models();
        assert_eq!(models.len(), 4);
        let mut out = [0.0; 3];
        models[0].eval_rhs(&[1.0], &[1.0], &mut out[..1]);
        assert_eq!(out[0], 0.0);
        models[1].eval_rhs(&[1.0], &[1.0], &mut out[..1]);
        assert_eq!(out[0], 0.0);
        models[3].eval_rhs(&[1.0, 2.0, 0.0], &[0.0; 6], &mut out);
        assert!((out[1] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn reference_parameters() {
        let m = find_model("rossler").unwrap();
        assert_eq!(m.param("alpha2"), Some(0.5));
        assert_eq!(m.delays, vec![1.5, 2.0]);
        let m = find_model("two-delay").unwrap();
        assert_eq!(m.params, vec![-1.0, -1.0]);
        assert_eq!(m.delays, vec![0.65, 1.2]);
        assert_eq!(
            find_model("mackey-glass").unwrap().param("alpha"),
            Some(9.6)
        );
    }

    fn zero_rhs(_: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn const_history(_: f64, out: &mut [f64]) {
        out[0] = 2.5;
    }

    #[test]
    fn constant_model_samples() {
        let model = ModelSpec {
            name: "flat".into(),
            dim: 1,
            param_names: vec![],
            params: vec![],
            delays: vec![1.0],
            rhs: zero_rhs,
            history: const_history,
            horizon: 5.0,
            samples: 10,
        };
        let cfg = SamplingConfig {
            samples: 10,
            ..Default::default()
        };
        let s = generate_samples(&model, &cfg, 5.0).unwrap();
        assert!(s.states.iter().all(|&v| v == 2.5));
        assert!(s.derivatives.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_grid() {
        let model = find_model("logistic").unwrap();
        let cfg = SamplingConfig::default();
        let s = generate_samples(&model, &cfg, 30.0).unwrap();
        assert_eq!(s.len(), 100);
        for (i, &t) in s.times.iter().enumerate() {
            assert!((t - 30.0 * i as f64 / 99.0).abs() < 1e-14);
        }
        assert_eq!(s.train_end, 60);
    }

    #[test]
    fn random_times_pinned_to_ends() {
        let model = find_model("logistic").unwrap();
        let cfg = SamplingConfig {
            distribution: TimeDistribution::RandomUniform,
            seed: 7,
            ..Default::default()
        };
        let s = generate_samples(&model, &cfg, 30.0).unwrap();
        assert_eq!(s.times[0], 0.0);
        assert_eq!(*s.times.last().unwrap(), 30.0);
        assert!(s.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn seeded_generation_is_bit_identical() {
        let model = find_model("mackey-glass").unwrap();
        let cfg = SamplingConfig {
            distribution: TimeDistribution::RandomUniform,
            noise: 0.05,
            seed: 11,
            derivatives: DerivativeMode::FiniteDifference,
            ..Default::default()
        };
        let a = generate_samples(&model, &cfg, 30.0).unwrap();
        let b = generate_samples(&model, &cfg, 30.0).unwrap();
        assert_eq!(a, b);
        let c = generate_samples(&model, &SamplingConfig { seed: 12, ..cfg }, 30.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn finite_differences_exact_on_quadratics() {
        let s = quad_samples();
        let dx = estimate_derivatives(&s.times, &s.states).unwrap();
        let expect = [0.0, 2.0, 4.0, 6.0];
        for i in 0..4 {
            assert!((dx[(i, 0)] - expect[i]).abs() < 1e-13);
        }
        // nonuniform grid
        let t = vec![0.0, 0.3, 1.1, 1.5, 2.9];
        let x = DMatrix::from_iterator(5, 1, t.iter().map(|t| 2.0 * t * t - t + 1.0));
        let dx = estimate_derivatives(&t, &x).unwrap();
        for i in 0..5 {
            assert!((dx[(i, 0)] - (4.0 * t[i] - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_differences_need_three_samples() {
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(matches!(
            estimate_derivatives(&[0.0, 1.0], &x),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn finite_differences_truncation_bound() {
        let m = 200;
        let h = 0.05;
        let t: Vec<f64> = (0..m).map(|i| i as f64 * h).collect();
        let x = DMatrix::from_iterator(m, 1, t.iter().map(|t| t.sin()));
        let dx = estimate_derivatives(&t, &x).unwrap();
        for i in 1..m - 1 {
            assert!((dx[(i, 0)] - t[i].cos()).abs() <= h * h / 6.0 + 1e-12);
        }
        let c = DMatrix::from_element(m, 1, 3.0);
        assert!(estimate_derivatives(&t, &c)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn linear_interpolation() {
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 2.0]);
        assert_eq!(interp_linear(&[0.0, 1.0], &x, 0.5).unwrap(), vec![1.0]);
        let s = quad_samples();
        assert_eq!(interp_linear(&s.times, &s.states, 1.5).unwrap(), vec![2.5]);
        for i in 0..4 {
            assert_eq!(
                interp_linear(&s.times, &s.states, s.times[i]).unwrap()[0],
                s.states[(i, 0)]
            );
        }
        assert!(matches!(
            interp_linear(&s.times, &s.states, 3.5),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn delayed_blocks_by_hand() {
        let s = quad_samples();
        let d = delayed_blocks(&s, &[-0.5]).unwrap();
        assert_eq!(d.rows, vec![1, 2, 3]);
        assert_eq!(d.blocks[0].as_slice(), &[0.5, 2.5, 6.5]);

        let d = delayed_blocks(&s, &[]).unwrap();
        assert_eq!(d.rows, vec![0, 1, 2, 3]);
        assert!(d.blocks.is_empty());

        let d = delayed_blocks(&s, &[-1.0]).unwrap();
        assert_eq!(d.rows, vec![1, 2, 3]);
        assert_eq!(d.blocks[0].as_slice(), &[0.0, 1.0, 4.0]);

        assert!(delayed_blocks(&s, &[0.0]).is_err());
        assert!(matches!(
            delayed_blocks(&s, &[-4.0]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let model = find_model("rossler").unwrap();
        let s = generate_samples(
            &model,
            &SamplingConfig {
                samples: 20,
                ..Default::default()
            },
            10.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,x3,dx1,dx2,dx3\n"));
        let back = SampleSet::read_csv(buf.as_slice(), DerivativeMode::Exact).unwrap();
        assert_eq!(back, s);
    }
}
