//! Adaptive explicit Runge-Kutta integration with dense output, and a
//! method-of-steps driver for equations with constant discrete delays.

mod dense;
mod dopri;

pub use dense::DenseSolution;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// Integration aborts once any component exceeds this magnitude.
    pub max_state_norm: f64,
    pub max_step: Option<f64>,
    /// Disables error control and steps with this size (last step shortened).
    pub fixed_step: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            max_steps: 500_000,
            max_state_norm: f64::INFINITY,
            max_step: None,
            fixed_step: None,
        }
    }
}

impl SolverOptions {
    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::Invalid("tolerances must be positive".into()));
        }
        if let Some(h) = self.fixed_step {
            if !(h > 0.0) {
                return Err(Error::Invalid("fixed step must be positive".into()));
            }
        }
        Ok(())
    }
}

pub type OdeRhs<'a> = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'a>;

/// `y' = f(t, y)` on `t_span` with `y(t0) = initial_state`.
pub struct OdeProblem<'a> {
    rhs: OdeRhs<'a>,
    pub initial_state: Vec<f64>,
    pub t_span: (f64, f64),
    pub options: SolverOptions,
}

impl<'a> OdeProblem<'a> {
    pub fn new<F>(rhs: F, initial_state: Vec<f64>, t_span: (f64, f64)) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'a,
    {
        Self {
            rhs: Box::new(rhs),
            initial_state,
            t_span,
            options: SolverOptions::default(),
        }
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_span.1 > self.t_span.0) {
            return Err(Error::Invalid(format!(
                "empty time span [{}, {}]",
                self.t_span.0, self.t_span.1
            )));
        }
        if self.initial_state.is_empty() {
            return Err(Error::Invalid("empty initial state".into()));
        }
        self.options.validate()
    }
}

pub fn solve_ode(problem: &OdeProblem<'_>) -> Result<DenseSolution> {
    problem.validate()?;
    let rhs = &problem.rhs;
    let mut field = |t: f64, y: &[f64], _: &DenseSolution, out: &mut [f64]| -> Result<()> {
        rhs(t, y, out);
        Ok(())
    };
    dopri::integrate(
        &mut field,
        &problem.initial_state,
        problem.t_span,
        &[],
        f64::INFINITY,
        &problem.options,
    )
}

pub type DdeRhs<'a> = Box<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'a>;
pub type HistoryFn<'a> = Box<dyn Fn(f64, &mut [f64]) + Send + Sync + 'a>;

/// `x'(t) = f(t, x(t), x(t - tau_1), ..., x(t - tau_k))` with `x = history` on
/// `[-tau_k, 0]` relative to the initial time.
///
/// The delayed states reach the right-hand side as one flat slice, `k` blocks
/// of `n` values in the order of `delays`.
pub struct DdeProblem<'a> {
    rhs: DdeRhs<'a>,
    history: HistoryFn<'a>,
    pub delays: Vec<f64>,
    pub dim: usize,
    pub t_span: (f64, f64),
    pub options: SolverOptions,
    /// Highest total multiplicity of delay sums that are treated as breaking points.
    pub discontinuity_order: usize,
}

impl<'a> DdeProblem<'a> {
    pub fn new<F, H>(rhs: F, history: H, delays: Vec<f64>, dim: usize, t_span: (f64, f64)) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'a,
        H: Fn(f64, &mut [f64]) + Send + Sync + 'a,
    {
        Self {
            rhs: Box::new(rhs),
            history: Box::new(history),
            delays,
            dim,
            t_span,
            options: SolverOptions::default(),
            discontinuity_order: 3,
        }
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn max_delay(&self) -> f64 {
        self.delays.last().copied().unwrap_or(0.0)
    }

    /// History value at `eta` in `[-max_delay, 0]`.
    pub fn history(&self, eta: f64, out: &mut [f64]) -> Result<()> {
        let lo = -self.max_delay();
        let slack = 1e-12 * (1.0 + lo.abs());
        if !(eta >= lo - slack && eta <= slack) {
            return Err(Error::Domain {
                value: eta,
                lo,
                hi: 0.0,
            });
        }
        (self.history)(eta, out);
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_span.1 > self.t_span.0) {
            return Err(Error::Invalid("empty time span".into()));
        }
        if self.dim == 0 {
            return Err(Error::Invalid("zero dimension".into()));
        }
        if self.delays.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Invalid("delays must be positive and finite".into()));
        }
        if self.delays.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Invalid("delays must be strictly ascending".into()));
        }
        self.options.validate()
    }

    /// Times `t0 + sum n_j tau_j` with `1 <= sum n_j <= order` inside the span.
    pub fn breaking_points(&self) -> Vec<f64> {
        let (t0, t1) = self.t_span;
        let mut sums = vec![0.0];
        let mut out = Vec::new();
        for _ in 0..self.discontinuity_order {
            let mut next = Vec::new();
            for s in &sums {
                for d in &self.delays {
                    let v = s + d;
                    if t0 + v < t1 {
                        next.push(v);
                    }
                }
            }
            out.extend(next.iter().map(|v| t0 + v));
            sums = next;
        }
        out.sort_by(f64::total_cmp);
        let tol = 1e-12 * (t1 - t0).abs().max(1.0);
        out.dedup_by(|a, b| (*a - *b).abs() <= tol);
        out
    }
}

pub fn solve_dde(problem: &DdeProblem<'_>) -> Result<DenseSolution> {
    problem.validate()?;
    let n = problem.dim;
    let t0 = problem.t_span.0;
    let mut x0 = vec![0.0; n];
    problem.history(0.0, &mut x0)?;

    if problem.delays.is_empty() {
        let rhs = &problem.rhs;
        let mut field = |t: f64, y: &[f64], _: &DenseSolution, out: &mut [f64]| -> Result<()> {
            rhs(t, y, &[], out);
            Ok(())
        };
        return dopri::integrate(
            &mut field,
            &x0,
            problem.t_span,
            &[],
            f64::INFINITY,
            &problem.options,
        );
    }

    let k = problem.delays.len();
    let mut delayed = vec![0.0; k * n];
    let rhs = &problem.rhs;
    let mut field = |t: f64, y: &[f64], past: &DenseSolution, out: &mut [f64]| -> Result<()> {
        for (j, &tau) in problem.delays.iter().enumerate() {
            let s = t - tau;
            let slot = &mut delayed[j * n..(j + 1) * n];
            if s <= t0 {
                problem.history(s - t0, slot)?;
            } else {
                // a full-length step may overshoot the accepted range by rounding
                let end = past.t_end();
                let s = if s > end && s - end <= 1e-10 * (1.0 + end.abs()) {
                    end
                } else {
                    s
                };
                past.eval_into(s, slot)?;
            }
        }
        rhs(t, y, &delayed, out);
        Ok(())
    };
    let bps = problem.breaking_points();
    dopri::integrate(
        &mut field,
        &x0,
        problem.t_span,
        &bps,
        problem.delays[0],
        &problem.options,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn exp_problem(rel: f64) -> OdeProblem<'static> {
        OdeProblem::new(|_, y, dy| dy[0] = y[0], vec![1.0], (0.0, 1.0))
            .with_options(SolverOptions::default().with_tolerances(rel, rel * 1e-2))
    }

    #[test]
    fn exponential_growth() {
        let sol = solve_ode(&exp_problem(1e-9)).unwrap();
        assert!((sol.final_state()[0] - 1f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn constant_solution() {
        let p = OdeProblem::new(|_, _, dy| dy[0] = 0.0, vec![3.25], (0.0, 5.0));
        let sol = solve_ode(&p).unwrap();
        for t in [0.0, 0.3, 2.2, 5.0] {
            assert_eq!(sol.eval(t).unwrap()[0], 3.25);
        }
    }

    #[test]
    fn circular_orbit() {
        let p = OdeProblem::new(
            |_, y, dy| {
                dy[0] = -y[1];
                dy[1] = y[0];
            },
            vec![1.0, 0.0],
            (0.0, 2.0 * PI),
        )
        .with_options(SolverOptions::default().with_tolerances(1e-10, 1e-12));
        let sol = solve_ode(&p).unwrap();
        let y = sol.final_state();
        assert!((y[0] - 1.0).abs() < 1e-6 && y[1].abs() < 1e-6);
        for i in 0..=200 {
            let v = sol.eval(2.0 * PI * i as f64 / 200.0).unwrap();
            assert!((v[0] * v[0] + v[1] * v[1] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dense_output_exact_at_step_times() {
        let sol = solve_ode(&exp_problem(1e-6)).unwrap();
        for k in 0..sol.step_times().len() {
            let t = sol.step_times()[k];
            assert_eq!(sol.eval(t).unwrap(), sol.step_state(k));
        }
    }

    #[test]
    fn evaluation_outside_span_fails() {
        let sol = solve_ode(&exp_problem(1e-6)).unwrap();
        assert!(matches!(sol.eval(1.5), Err(Error::Domain { .. })));
        assert!(matches!(sol.eval(-0.1), Err(Error::Domain { .. })));
    }

    #[test]
    fn dense_output_is_c1_across_steps() {
        let sol = solve_ode(&exp_problem(1e-5)).unwrap();
        let ts = sol.step_times();
        for &t in &ts[1..ts.len() - 1] {
            let d = 1e-6;
            let left = (sol.eval(t).unwrap()[0] - sol.eval(t - d).unwrap()[0]) / d;
            let right = (sol.eval(t + d).unwrap()[0] - sol.eval(t).unwrap()[0]) / d;
            assert!(
                (left - right).abs() < 1e-4,
                "kink at {t}: {left} vs {right}"
            );
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let p = OdeProblem::new(|_, y, dy| dy[0] = y[0] * y[0], vec![1.0], (0.0, 2.0));
        match solve_ode(&p) {
            Err(Error::Integration { time, .. }) => assert!(time < 1.0 + 1e-3 && time > 0.9),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn invalid_span_rejected() {
        let p = OdeProblem::new(|_, _, dy| dy[0] = 0.0, vec![1.0], (1.0, 1.0));
        assert!(solve_ode(&p).is_err());
    }

    fn linear_dde(phi: f64, t1: f64) -> DdeProblem<'static> {
        DdeProblem::new(
            |_, _, xd, dx| dx[0] = -xd[0],
            move |_, out| out[0] = phi,
            vec![1.0],
            1,
            (0.0, t1),
        )
    }

    #[test]
    fn method_of_steps_by_hand() {
        let sol = solve_dde(&linear_dde(1.0, 2.0)).unwrap();
        assert!((sol.eval(1.0).unwrap()[0]).abs() < 1e-8);
        assert!((sol.eval(2.0).unwrap()[0] + 0.5).abs() < 1e-8);
    }

    #[test]
    fn zero_history_stays_zero() {
        let sol = solve_dde(&linear_dde(0.0, 10.0)).unwrap();
        for t in [0.5, 3.0, 10.0] {
            assert_eq!(sol.eval(t).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn breaking_points_up_to_order_three() {
        let p = DdeProblem::new(
            |_, _, _, dx| dx[0] = 0.0,
            |_, out| out[0] = 0.0,
            vec![1.0, 1.5],
            1,
            (0.0, 10.0),
        );
        let bps = p.breaking_points();
        assert_eq!(bps, vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5]);
    }

    #[test]
    fn unsorted_delays_rejected() {
        let p = DdeProblem::new(
            |_, _, _, dx| dx[0] = 0.0,
            |_, out| out[0] = 0.0,
            vec![1.5, 1.0],
            1,
            (0.0, 10.0),
        );
        assert!(matches!(solve_dde(&p), Err(Error::Invalid(_))));
    }

    #[test]
    fn history_domain_checked() {
        let p = linear_dde(1.0, 1.0);
        let mut out = [0.0];
        assert!(p.history(-0.5, &mut out).is_ok());
        assert!(matches!(
            p.history(-1.5, &mut out),
            Err(Error::Domain { .. })
        ));
    }
}
