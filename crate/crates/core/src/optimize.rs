//! External minimization over delays and library parameters: exhaustive grid
//! search and a global-best particle swarm.
//!
//! Objectives are plain `Fn(&[f64]) -> f64`. Non-finite values rank above every
//! finite one. Batches of evaluations go through [`par::map`], so results do
//! not depend on the [`Parallelism`] mode.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimension {
    pub label: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub dimensions: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        let s = Self { dimensions };
        let errs = s.validate();
        if errs.is_empty() {
            Ok(s)
        } else {
            Err(Error::Config(errs))
        }
    }

    /// One labelled interval.
    pub fn interval(label: &str, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![Dimension {
            label: label.into(),
            lower,
            upper,
        }])
    }

    pub fn dim(&self) -> usize {
        self.dimensions.len()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.dimensions.iter().map(|d| d.label.as_str()).collect()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.label == label)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.dimensions)
                .all(|(v, d)| *v >= d.lower && *v <= d.upper)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.dimensions.is_empty() {
            errs.push("search space needs at least one dimension".to_string());
        }
        for d in &self.dimensions {
            if !(d.lower.is_finite() && d.upper.is_finite() && d.lower < d.upper) {
                errs.push(format!(
                    "search bounds for `{}` must satisfy lower < upper (got [{}, {}])",
                    d.label, d.lower, d.upper
                ));
            }
        }
        for (i, d) in self.dimensions.iter().enumerate() {
            if self.dimensions[..i].iter().any(|e| e.label == d.label) {
                errs.push(format!("duplicate search label `{}`", d.label));
            }
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GridExhausted,
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub evaluations: u64,
    pub best_objective: f64,
}

/// Every grid point with its objective value, in evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridValues {
    pub labels: Vec<String>,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best_point: Vec<f64>,
    pub best_objective: f64,
    pub evaluations: u64,
    pub trace: Vec<TracePoint>,
    pub termination: Termination,
    pub grid: Option<GridValues>,
}

/// `a` ranks strictly before `b`; NaN ranks last.
fn better(a: f64, b: f64) -> bool {
    match (a.is_nan(), b.is_nan()) {
        (false, true) => true,
        (true, _) => false,
        _ => a < b,
    }
}

fn argmin(values: &[f64]) -> usize {
    let mut k = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if better(v, values[k]) {
            k = i;
        }
    }
    k
}

/// Uniform tensor grid including the endpoints; the last dimension varies
/// fastest.
pub fn grid_points(space: &SearchSpace, counts: &[usize]) -> Result<Vec<Vec<f64>>> {
    let errs = space.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if counts.len() != space.dim() {
        return Err(Error::Shape(format!(
            "{} grid counts for a {}-dimensional space",
            counts.len(),
            space.dim()
        )));
    }
    if let Some(c) = counts.iter().find(|&&c| c < 2) {
        return Err(Error::Invalid(format!(
            "grid counts must be at least 2 (got {c})"
        )));
    }
    let axes: Vec<Vec<f64>> = space
        .dimensions
        .iter()
        .zip(counts)
        .map(|(d, &c)| {
            (0..c)
                .map(|i| {
                    if i == c - 1 {
                        d.upper
                    } else {
                        d.lower + (d.upper - d.lower) * i as f64 / (c - 1) as f64
                    }
                })
                .collect()
        })
        .collect();
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; counts.len()];
    for _ in 0..total {
        out.push(idx.iter().enumerate().map(|(k, &i)| axes[k][i]).collect());
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(out)
}

/// Evaluates `objective` on the full grid and returns its argmin, lowest index
/// first among ties.
pub fn brute_force<F>(
    objective: F,
    space: &SearchSpace,
    counts: &[usize],
    parallelism: Parallelism,
) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let points = grid_points(space, counts)?;
    let values = par::map(parallelism, &points, |p| objective(p));
    let k = argmin(&values);
    let mut trace = Vec::with_capacity(values.len());
    let mut best = f64::NAN;
    for (i, &v) in values.iter().enumerate() {
        if i == 0 || better(v, best) {
            best = v;
        }
        trace.push(TracePoint {
            evaluations: i as u64 + 1,
            best_objective: best,
        });
    }
    Ok(OptimizationResult {
        best_point: points[k].clone(),
        best_objective: values[k],
        evaluations: values.len() as u64,
        trace,
        termination: Termination::GridExhausted,
        grid: Some(GridValues {
            labels: space.labels().iter().map(|s| s.to_string()).collect(),
            points,
            values,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    /// Defaults to `min(20 * dim, 40)`.
    pub swarm_size: Option<usize>,
    pub inertia_start: f64,
    pub inertia_end: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Stop once the best value improves by no more than
    /// `stall_tolerance * max(1, |best|)` over `stall_window` iterations.
    pub stall_tolerance: f64,
    pub stall_window: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub parallelism: Parallelism,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: None,
            inertia_start: 0.7,
            inertia_end: 0.4,
            cognitive: 1.49,
            social: 1.49,
            stall_tolerance: 1e-3,
            stall_window: 20,
            max_iterations: 100,
            seed: 0,
            parallelism: Parallelism::default(),
        }
    }
}

impl PsoConfig {
    pub fn swarm_size_for(&self, dim: usize) -> usize {
        self.swarm_size.unwrap_or((20 * dim).min(40))
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.swarm_size.is_some_and(|s| s < 2) {
            errs.push("swarm size must be at least 2".to_string());
        }
        if !(self.stall_tolerance > 0.0) {
            errs.push("stall tolerance must be positive".to_string());
        }
        if self.stall_window == 0 {
            errs.push("stall window must be at least 1".to_string());
        }
        if self.max_iterations == 0 {
            errs.push("max iterations must be at least 1".to_string());
        }
        for (name, v) in [
            ("inertia_start", self.inertia_start),
            ("inertia_end", self.inertia_end),
            ("cognitive", self.cognitive),
            ("social", self.social),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be a nonnegative number"));
            }
        }
        errs
    }
}

/// Moves `x` back inside `[lo, hi]` by mirroring, flipping `v` on every bounce.
fn reflect(x: &mut f64, v: &mut f64, lo: f64, hi: f64) {
    for _ in 0..8 {
        if *x > hi {
            *x = 2.0 * hi - *x;
        } else if *x < lo {
            *x = 2.0 * lo - *x;
        } else {
            return;
        }
        *v = -*v;
    }
    *x = x.clamp(lo, hi);
    *v = 0.0;
}

/// Global-best particle swarm with reflecting walls and linearly decreasing
/// inertia. Runs with the same seed and config reproduce bit for bit.
pub fn particle_swarm<F>(
    objective: F,
    space: &SearchSpace,
    config: &PsoConfig,
) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let mut errs = space.validate();
    errs.extend(config.validate());
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let dim = space.dim();
    let size = config.swarm_size_for(dim);
    let lo: Vec<f64> = space.dimensions.iter().map(|d| d.lower).collect();
    let hi: Vec<f64> = space.dimensions.iter().map(|d| d.upper).collect();
    let span: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| b - a).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut pos: Vec<Vec<f64>> = (0..size)
        .map(|_| {
            (0..dim)
                .map(|k| lo[k] + span[k] * rng.random::<f64>())
                .collect()
        })
        .collect();
    let mut vel: Vec<Vec<f64>> = (0..size)
        .map(|_| {
            (0..dim)
                .map(|k| span[k] * (2.0 * rng.random::<f64>() - 1.0))
                .collect()
        })
        .collect();

    let mut evaluations = 0u64;
    let mut evaluate = |pos: &[Vec<f64>]| {
        let vals = par::map(config.parallelism, pos, |p| objective(p));
        evaluations += vals.len() as u64;
        vals
    };

    let vals = evaluate(&pos);
    let mut pbest = pos.clone();
    let mut pbest_val = vals.clone();
    let g = argmin(&pbest_val);
    let mut gbest = pbest[g].clone();
    let mut gbest_val = pbest_val[g];
    let mut trace = vec![TracePoint {
        evaluations: size as u64,
        best_objective: gbest_val,
    }];
    // best value after each iteration, iteration 0 being the initial swarm
    let mut history = vec![gbest_val];
    let mut termination = Termination::MaxIterations;

    for it in 1..=config.max_iterations {
        let frac = if config.max_iterations > 1 {
            (it - 1) as f64 / (config.max_iterations - 1) as f64
        } else {
            0.0
        };
        let w = config.inertia_start + (config.inertia_end - config.inertia_start) * frac;
        for i in 0..size {
            let (x, v) = (&mut pos[i], &mut vel[i]);
            for k in 0..dim {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let mut vk = w * v[k]
                    + config.cognitive * r1 * (pbest[i][k] - x[k])
                    + config.social * r2 * (gbest[k] - x[k]);
                vk = vk.clamp(-span[k], span[k]);
                let mut xk = x[k] + vk;
                reflect(&mut xk, &mut vk, lo[k], hi[k]);
                x[k] = xk;
                v[k] = vk;
            }
        }
        let vals = evaluate(&pos);
        for i in 0..size {
            if better(vals[i], pbest_val[i]) {
                pbest_val[i] = vals[i];
                pbest[i] = pos[i].clone();
            }
        }
        let g = argmin(&pbest_val);
        if better(pbest_val[g], gbest_val) {
            gbest_val = pbest_val[g];
            gbest = pbest[g].clone();
        }
        trace.push(TracePoint {
            evaluations: trace.last().unwrap().evaluations + size as u64,
            best_objective: gbest_val,
        });
        history.push(gbest_val);
        if it >= config.stall_window {
            let before = history[it - config.stall_window];
            let gain = before - gbest_val;
            let gain = if gain.is_nan() { f64::INFINITY } else { gain };
            if gbest_val.is_finite() && gain <= config.stall_tolerance * gbest_val.abs().max(1.0) {
                termination = Termination::Stalled;
                break;
            }
        }
    }

    Ok(OptimizationResult {
        best_point: gbest,
        best_objective: gbest_val,
        evaluations,
        trace,
        termination,
        grid: None,
    })
}

pub fn write_trace_csv<W: Write>(w: W, trace: &[TracePoint]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["evaluations", "best_objective"])?;
    for p in trace {
        wr.write_record([p.evaluations.to_string(), fmt_value(p.best_objective)])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_grid_csv<W: Write>(w: W, grid: &GridValues) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = grid.labels.clone();
    header.push("objective".into());
    wr.write_record(&header)?;
    for (p, v) in grid.points.iter().zip(&grid.values) {
        let mut row: Vec<String> = p.iter().map(|x| fmt_value(*x)).collect();
        row.push(fmt_value(*v));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &[f64]) -> f64 {
        (x[0] - 1.0).powi(2)
    }

    #[test]
    fn grid_includes_endpoints_last_dim_fastest() {
        let s = SearchSpace::new(vec![
            Dimension {
                label: "a".into(),
                lower: 0.0,
                upper: 1.0,
            },
            Dimension {
                label: "b".into(),
                lower: 10.0,
                upper: 12.0,
            },
        ])
        .unwrap();
        let g = grid_points(&s, &[2, 3]).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], vec![0.0, 10.0]);
        assert_eq!(g[1], vec![0.0, 11.0]);
        assert_eq!(g[5], vec![1.0, 12.0]);
        assert!(grid_points(&s, &[1, 3]).is_err());
        assert!(grid_points(&s, &[3]).is_err());
    }

    #[test]
    fn brute_force_finds_quadratic_minimum() {
        let s = SearchSpace::interval("tau", 0.1, 1.5).unwrap();
        let r = brute_force(quad, &s, &[1000], Parallelism::Sequential).unwrap();
        assert!((r.best_point[0] - 1.0).abs() <= 1.4 / 999.0);
        assert_eq!(r.evaluations, 1000);
        assert_eq!(r.grid.as_ref().unwrap().values.len(), 1000);
        assert_eq!(r.termination, Termination::GridExhausted);
    }

    #[test]
    fn brute_force_counts_full_tensor() {
        let s = SearchSpace::new(vec![
            Dimension {
                label: "tau1".into(),
                lower: 0.1,
                upper: 1.0,
            },
            Dimension {
                label: "tau2".into(),
                lower: 0.5,
                upper: 1.5,
            },
        ])
        .unwrap();
        let r = brute_force(
            |x: &[f64]| x[0] + x[1],
            &s,
            &[100, 100],
            Parallelism::Parallel,
        )
        .unwrap();
        assert_eq!(r.evaluations, 10_000);
        assert_eq!(r.best_point, vec![0.1, 0.5]);
    }

    #[test]
    fn ties_resolve_to_first_point() {
        let s = SearchSpace::interval("x", -1.0, 1.0).unwrap();
        let r = brute_force(|_: &[f64]| 3.0, &s, &[7], Parallelism::Parallel).unwrap();
        assert_eq!(r.best_point, vec![-1.0]);
    }

    #[test]
    fn nan_never_wins() {
        let s = SearchSpace::interval("x", 0.0, 1.0).unwrap();
        let r = brute_force(
            |x: &[f64]| if x[0] < 0.5 { f64::NAN } else { x[0] },
            &s,
            &[11],
            Parallelism::Sequential,
        )
        .unwrap();
        assert_eq!(r.best_point, vec![0.5]);
    }

    #[test]
    fn swarm_on_quadratic() {
        let s = SearchSpace::interval("tau", 0.1, 1.5).unwrap();
        let r = particle_swarm(quad, &s, &PsoConfig::default()).unwrap();
        assert!((r.best_point[0] - 1.0).abs() <= 1e-3, "{:?}", r.best_point);
        assert!(r.evaluations < 1000, "{}", r.evaluations);
        assert_eq!(r.trace.last().unwrap().evaluations, r.evaluations);
    }

    #[test]
    fn swarm_on_two_dimensional_bowl() {
        let s = SearchSpace::new(vec![
            Dimension {
                label: "tau1".into(),
                lower: 0.1,
                upper: 1.0,
            },
            Dimension {
                label: "tau2".into(),
                lower: 0.5,
                upper: 1.5,
            },
        ])
        .unwrap();
        let r = particle_swarm(
            |x: &[f64]| (x[0] - 0.65).powi(2) + (x[1] - 1.2).powi(2),
            &s,
            &PsoConfig::default(),
        )
        .unwrap();
        assert!((r.best_point[0] - 0.65).abs() <= 1e-2);
        assert!((r.best_point[1] - 1.2).abs() <= 1e-2);
    }

    #[test]
    fn config_validation() {
        let bad = PsoConfig {
            swarm_size: Some(1),
            stall_tolerance: 0.0,
            ..PsoConfig::default()
        };
        assert_eq!(bad.validate().len(), 2);
        assert_eq!(PsoConfig::default().swarm_size_for(1), 20);
        assert_eq!(PsoConfig::default().swarm_size_for(3), 40);
        assert!(SearchSpace::interval("x", 1.0, 1.0).is_err());
        assert!(SearchSpace::new(vec![]).is_err());
    }

    #[test]
    fn reflection_stays_inside() {
        let (mut x, mut v) = (1.3, 0.5);
        reflect(&mut x, &mut v, 0.0, 1.0);
        assert!((x - 0.7).abs() < 1e-15 && v == -0.5);
        let (mut x, mut v) = (-0.25, -1.0);
        reflect(&mut x, &mut v, 0.0, 1.0);
        assert!((x - 0.25).abs() < 1e-15 && v == 1.0);
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        let trace = [TracePoint {
            evaluations: 20,
            best_objective: 0.5,
        }];
        write_trace_csv(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("evaluations,best_objective\n20,5.0000000000000000e-1"));
    }
}
