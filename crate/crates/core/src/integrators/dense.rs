use crate::error::{Error, Result};

/// Piecewise continuous extension of an accepted Runge-Kutta step sequence.
///
/// Each step stores its start state and four coefficient vectors of the
/// Dormand-Prince interpolant; evaluation at an accepted step time returns the
/// stored state exactly.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    dim: usize,
    // step start times followed by the final time
    times: Vec<f64>,
    // one state per entry of `times`
    states: Vec<f64>,
    // 4 * dim coefficients per step
    coeffs: Vec<f64>,
}

impl DenseSolution {
    pub(crate) fn new(t0: f64, y0: &[f64]) -> Self {
        Self {
            dim: y0.len(),
            times: vec![t0],
            states: y0.to_vec(),
            coeffs: Vec::new(),
        }
    }

    /// Appends a step ending at `t_new` with state `y_new`. `coeffs` holds the
    /// interpolant coefficients `r2..r5` (4 * dim values).
    pub(crate) fn push_step(&mut self, t_new: f64, y_new: &[f64], coeffs: &[f64]) {
        debug_assert_eq!(coeffs.len(), 4 * self.dim);
        debug_assert_eq!(y_new.len(), self.dim);
        self.times.push(t_new);
        self.states.extend_from_slice(y_new);
        self.coeffs.extend_from_slice(coeffs);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Accepted step times, including the initial and final time.
    pub fn step_times(&self) -> &[f64] {
        &self.times
    }

    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// State stored at the `k`-th entry of [`step_times`](Self::step_times).
    pub fn step_state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.step_state(self.times.len() - 1)
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = (self.t_start(), self.t_end());
        if !(t >= lo && t <= hi) {
            return Err(Error::Domain { value: t, lo, hi });
        }
        let n = self.dim;
        let last = self.times.len() - 1;
        if t == hi {
            out.copy_from_slice(self.step_state(last));
            return Ok(());
        }
        // index of the step containing t: times[k] <= t < times[k + 1]
        let k = self.times[..last].partition_point(|&s| s <= t) - 1;
        let t0 = self.times[k];
        if t == t0 {
            out.copy_from_slice(self.step_state(k));
            return Ok(());
        }
        let h = self.times[k + 1] - t0;
        let theta = (t - t0) / h;
        let theta1 = 1.0 - theta;
        let y0 = self.step_state(k);
        let c = &self.coeffs[4 * n * k..4 * n * (k + 1)];
        for i in 0..n {
            let (r2, r3, r4, r5) = (c[i], c[n + i], c[2 * n + i], c[3 * n + i]);
            out[i] = y0[i] + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)));
        }
        Ok(())
    }

    /// Samples the solution at each of `ts`, one row per time.
    pub fn sample(&self, ts: &[f64]) -> Result<Vec<Vec<f64>>> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }
}
