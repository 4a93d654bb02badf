//! Dormand-Prince 5(4) stepping with the standard fourth-order continuous
//! extension, shared by the ODE and DDE drivers.

use super::dense::DenseSolution;
use super::SolverOptions;
use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

/// Right-hand side seen by the stepper. The partially built solution is passed
/// along so that delay equations can read their own past.
pub(crate) trait StageField {
    fn eval(&mut self, t: f64, y: &[f64], past: &DenseSolution, out: &mut [f64]) -> Result<()>;
}

impl<F> StageField for F
where
    F: FnMut(f64, &[f64], &DenseSolution, &mut [f64]) -> Result<()>,
{
    fn eval(&mut self, t: f64, y: &[f64], past: &DenseSolution, out: &mut [f64]) -> Result<()> {
        self(t, y, past, out)
    }
}

struct Work {
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    coeffs: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
            ynew: vec![0.0; n],
            coeffs: vec![0.0; 4 * n],
        }
    }
}

fn err_norm(y: &[f64], ynew: &[f64], err: impl Iterator<Item = f64>, opts: &SolverOptions) -> f64 {
    let n = y.len();
    let mut acc = 0.0;
    for ((yi, yn), e) in y.iter().zip(ynew).zip(err) {
        let sc = opts.abs_tol + opts.rel_tol * yi.abs().max(yn.abs());
        acc += (e / sc).powi(2);
    }
    (acc / n as f64).sqrt()
}

/// One Dormand-Prince trial step from `(t, y)` with `k[0] = f(t, y)` already
/// filled. Leaves the fifth-order state in `w.ynew`, `f(t + h, ynew)` in
/// `w.k[6]` and returns the scaled error norm.
fn trial_step<F: StageField>(
    field: &mut F,
    t: f64,
    y: &[f64],
    h: f64,
    past: &DenseSolution,
    w: &mut Work,
    opts: &SolverOptions,
) -> Result<f64> {
    let n = y.len();
    macro_rules! stage {
        ($dst:expr, $c:expr, $($a:expr => $ki:expr),+) => {{
            for i in 0..n {
                w.ytmp[i] = y[i] + h * (0.0 $(+ $a * w.k[$ki][i])+);
            }
            let (ytmp, k) = (&w.ytmp, &mut w.k);
            field.eval(t + $c * h, ytmp, past, &mut k[$dst])?;
        }};
    }
    stage!(1, C2, A21 => 0);
    stage!(2, C3, A31 => 0, A32 => 1);
    stage!(3, C4, A41 => 0, A42 => 1, A43 => 2);
    stage!(4, C5, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
    stage!(5, 1.0, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);
    for i in 0..n {
        w.ynew[i] = y[i]
            + h * (A71 * w.k[0][i]
                + A73 * w.k[2][i]
                + A74 * w.k[3][i]
                + A75 * w.k[4][i]
                + A76 * w.k[5][i]);
    }
    let t_new = t + h;
    {
        let (ynew, k) = (&w.ynew, &mut w.k);
        field.eval(t_new, ynew, past, &mut k[6])?;
    }
    if opts.fixed_step.is_some() {
        return Ok(0.0);
    }
    let k = &w.k;
    let err = (0..n).map(|i| {
        h * (E1 * k[0][i]
            + E3 * k[2][i]
            + E4 * k[3][i]
            + E5 * k[4][i]
            + E6 * k[5][i]
            + E7 * k[6][i])
    });
    Ok(err_norm(y, &w.ynew, err, opts))
}

fn dense_coeffs(y: &[f64], h: f64, w: &mut Work) {
    let n = y.len();
    let k = &w.k;
    for i in 0..n {
        let r2 = w.ynew[i] - y[i];
        let r3 = h * k[0][i] - r2;
        let r4 = r2 - h * k[6][i] - r3;
        let r5 = h
            * (D1 * k[0][i]
                + D3 * k[2][i]
                + D4 * k[3][i]
                + D5 * k[4][i]
                + D6 * k[5][i]
                + D7 * k[6][i]);
        w.coeffs[i] = r2;
        w.coeffs[n + i] = r3;
        w.coeffs[2 * n + i] = r4;
        w.coeffs[3 * n + i] = r5;
    }
}

fn initial_step<F: StageField>(
    field: &mut F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    h_max: f64,
    past: &DenseSolution,
    opts: &SolverOptions,
) -> Result<f64> {
    let n = y0.len();
    let sc: Vec<f64> = y0
        .iter()
        .map(|y| opts.abs_tol + opts.rel_tol * y.abs())
        .collect();
    let rms = |v: &mut dyn Iterator<Item = f64>| (v.map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let d0 = rms(&mut y0.iter().zip(&sc).map(|(y, s)| y / s));
    let d1 = rms(&mut f0.iter().zip(&sc).map(|(f, s)| f / s));
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(h_max);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; n];
    field.eval(t0 + h0, &y1, past, &mut f1)?;
    let d2 = rms(&mut f1.iter().zip(f0).zip(&sc).map(|((a, b), s)| (a - b) / s)) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(h_max))
}

/// Integrates `field` from `t_span.0` to `t_span.1`, landing exactly on every
/// time in `breakpoints` and never taking a step longer than `max_step`.
pub(crate) fn integrate<F: StageField>(
    field: &mut F,
    y0: &[f64],
    t_span: (f64, f64),
    breakpoints: &[f64],
    max_step: f64,
    opts: &SolverOptions,
) -> Result<DenseSolution> {
    let n = y0.len();
    let (t0, t1) = t_span;
    let mut sol = DenseSolution::new(t0, y0);
    let mut w = Work::new(n);
    let mut y = y0.to_vec();
    let mut t = t0;
    let span = t1 - t0;
    let h_max = max_step
        .min(opts.max_step.unwrap_or(f64::INFINITY))
        .min(span);

    field.eval(t, &y, &sol, &mut w.k[0])?;
    let mut h = match opts.fixed_step {
        Some(h) => h.min(h_max),
        None => initial_step(field, t, &y, &w.k[0].clone(), h_max, &sol, opts)?,
    };
    let mut bp_iter = breakpoints
        .iter()
        .copied()
        .filter(|&b| b > t0 && b < t1)
        .peekable();
    let mut steps = 0usize;
    let mut rejected_last = false;

    while t < t1 {
        while bp_iter.peek().is_some_and(|&b| b <= t) {
            bp_iter.next();
        }
        let target = bp_iter.peek().copied().unwrap_or(t1);
        let min_h = 16.0 * f64::EPSILON * t.abs().max(span);
        let mut h_try = h.min(h_max);
        let mut t_new = t + h_try;
        // land on the target instead of leaving a sliver behind it
        if t_new >= target - min_h || (target - t_new < 1e-3 * h_try && target - t <= h_max) {
            h_try = target - t;
            t_new = target;
        }
        if h_try < min_h {
            return Err(Error::Integration {
                time: t,
                reason: "step size underflow".into(),
            });
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Integration {
                time: t,
                reason: format!("exceeded {} steps", opts.max_steps),
            });
        }

        let err = trial_step(field, t, &y, h_try, &sol, &mut w, opts)?;
        if !err.is_finite() || w.ynew.iter().any(|v| !v.is_finite()) {
            if opts.fixed_step.is_some() {
                return Err(Error::Integration {
                    time: t,
                    reason: "non-finite state".into(),
                });
            }
            h = 0.25 * h_try;
            rejected_last = true;
            continue;
        }
        if err <= 1.0 {
            dense_coeffs(&y, h_try, &mut w);
            sol.push_step(t_new, &w.ynew, &w.coeffs);
            t = t_new;
            y.copy_from_slice(&w.ynew);
            let (k0, k6) = {
                let (a, b) = w.k.split_at_mut(6);
                (&mut a[0], &b[0])
            };
            k0.copy_from_slice(k6);
            if opts.max_state_norm.is_finite() {
                let norm = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if norm > opts.max_state_norm {
                    return Err(Error::Integration {
                        time: t,
                        reason: format!("state norm {norm:.3e} exceeds bound"),
                    });
                }
            }
            h = match opts.fixed_step {
                Some(hf) => hf,
                None => {
                    let mut fac = SAFETY * err.max(1e-10).powf(-0.2);
                    fac = fac.clamp(FAC_MIN, FAC_MAX);
                    if rejected_last {
                        fac = fac.min(1.0);
                    }
                    // keep the proposal relative to the untruncated step
                    h.max(h_try) * fac
                }
            };
            rejected_last = false;
        } else {
            let fac = (SAFETY * err.powf(-0.2)).max(FAC_MIN);
            h = h_try * fac;
            rejected_last = true;
        }
    }
    Ok(sol)
}
