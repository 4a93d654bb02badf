//! Pseudospectral collocation of a delay equation on Chebyshev extremal nodes.
//!
//! The history segment `x(t + eta)`, `eta` in `[-tau_bar, 0]`, is represented by
//! its values `U_0, ..., U_M` at the nodes `eta_i = tau_bar/2 (cos(i pi/M) - 1)`.
//! Block 0 follows the delay equation, blocks `1..M` follow the interpolating
//! polynomial's derivative.

use nalgebra::DMatrix;
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationScheme {
    degree: usize,
    tau_bar: f64,
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    // scalar rows 1..=M of the differentiation matrix, M x (M+1)
    diff: DMatrix<f64>,
}

pub fn make_scheme(degree: usize, tau_bar: f64, dim: usize) -> Result<CollocationScheme> {
    if degree < 1 {
        return Err(Error::Invalid(
            "collocation degree must be at least 1".into(),
        ));
    }
    if !(tau_bar > 0.0 && tau_bar.is_finite()) {
        return Err(Error::Invalid(format!(
            "maximum delay must be positive (got {tau_bar})"
        )));
    }
    if dim == 0 {
        return Err(Error::Invalid("zero physical dimension".into()));
    }
    let m = degree;
    let mf = m as f64;
    // sin form of cos(i pi / M): exactly antisymmetric, exact zero in the middle
    let cheb: Vec<f64> = (0..=m)
        .map(|i| (PI * (mf - 2.0 * i as f64) / (2.0 * mf)).sin())
        .collect();
    let half = 0.5 * tau_bar;
    let nodes: Vec<f64> = cheb.iter().map(|x| half * (x - 1.0)).collect();
    let weights: Vec<f64> = (0..=m)
        .map(|j| {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == m {
                0.5 * s
            } else {
                s
            }
        })
        .collect();
    // eta_i - eta_j = tau_bar * sin((i+j) pi / 2M) * sin((j-i) pi / 2M)
    let gap = |i: usize, j: usize| {
        tau_bar
            * (PI * (i + j) as f64 / (2.0 * mf)).sin()
            * (PI * (j as f64 - i as f64) / (2.0 * mf)).sin()
    };
    let mut diff = DMatrix::zeros(m, m + 1);
    for i in 1..=m {
        let mut diag = 0.0;
        for j in 0..=m {
            if j != i {
                let d = (weights[j] / weights[i]) / gap(i, j);
                diff[(i - 1, j)] = d;
                diag -= d;
            }
        }
        diff[(i - 1, i)] = diag;
    }
    Ok(CollocationScheme {
        degree,
        tau_bar,
        dim,
        nodes,
        weights,
        diff,
    })
}

impl CollocationScheme {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn tau_bar(&self) -> f64 {
        self.tau_bar
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `eta_0 = 0 > eta_1 > ... > eta_M = -tau_bar`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn barycentric_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Scalar differentiation rows for nodes `1..=M` (`M x (M+1)`).
    pub fn diff_rows(&self) -> &DMatrix<f64> {
        &self.diff
    }

    /// The `nM x n(M+1)` block matrix with blocks `d_ij I_n`.
    pub fn block_diff_matrix(&self) -> DMatrix<f64> {
        let (m, n) = (self.degree, self.dim);
        let mut out = DMatrix::zeros(n * m, n * (m + 1));
        for i in 0..m {
            for j in 0..=m {
                for c in 0..n {
                    out[(i * n + c, j * n + c)] = self.diff[(i, j)];
                }
            }
        }
        out
    }

    /// State length of the collocated system, `n (M + 1)`.
    pub fn state_len(&self) -> usize {
        self.dim * (self.degree + 1)
    }

    /// Node values of a function of `eta`, blocks back to back.
    pub fn restrict(&self, f: impl Fn(f64, &mut [f64])) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; self.state_len()];
        for (i, &eta) in self.nodes.iter().enumerate() {
            f(eta, &mut out[i * n..(i + 1) * n]);
        }
        out
    }

    /// Applies the differentiation rows to `u`, writing blocks `1..=M` of `du`.
    pub fn apply_diff(&self, u: &[f64], du: &mut [f64]) {
        let (m, n) = (self.degree, self.dim);
        for i in 1..=m {
            for c in 0..n {
                let mut acc = 0.0;
                for j in 0..=m {
                    acc += self.diff[(i - 1, j)] * u[j * n + c];
                }
                du[i * n + c] = acc;
            }
        }
    }
}

/// Barycentric interpolation of node values (blocks back to back) at `eta`.
pub fn prolong(scheme: &CollocationScheme, node_values: &[f64], eta: f64) -> Result<Vec<f64>> {
    let n = scheme.dim;
    if node_values.len() != scheme.state_len() {
        return Err(Error::Shape(format!(
            "expected {} node values, got {}",
            scheme.state_len(),
            node_values.len()
        )));
    }
    let lo = -scheme.tau_bar;
    if !(eta >= lo && eta <= 0.0) {
        return Err(Error::Domain {
            value: eta,
            lo,
            hi: 0.0,
        });
    }
    if let Some(k) = scheme.nodes.iter().position(|&e| e == eta) {
        return Ok(node_values[k * n..(k + 1) * n].to_vec());
    }
    let mut num = vec![0.0; n];
    let mut den = 0.0;
    for (j, (&e, &w)) in scheme.nodes.iter().zip(&scheme.weights).enumerate() {
        let c = w / (eta - e);
        den += c;
        for (k, v) in num.iter_mut().enumerate() {
            *v += c * node_values[j * n + k];
        }
    }
    Ok(num.into_iter().map(|v| v / den).collect())
}

/// Offsets `eta_1, ..., eta_M` at which collocated samples are reconstructed.
pub fn collocation_offsets(scheme: &CollocationScheme) -> Vec<f64> {
    scheme.nodes[1..].to_vec()
}

/// The collocated ODE field: block 0 from `block0_rhs`, the rest from the
/// differentiation rows.
pub struct CollocatedField<F> {
    scheme: CollocationScheme,
    block0_rhs: F,
}

pub fn assemble_field<F>(scheme: &CollocationScheme, block0_rhs: F) -> CollocatedField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    CollocatedField {
        scheme: scheme.clone(),
        block0_rhs,
    }
}

impl<F> CollocatedField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn scheme(&self) -> &CollocationScheme {
        &self.scheme
    }

    pub fn eval(&self, _t: f64, u: &[f64], du: &mut [f64]) {
        let n = self.scheme.dim;
        debug_assert_eq!(u.len(), self.scheme.state_len());
        (self.block0_rhs)(u, &mut du[..n]);
        self.scheme.apply_diff(u, du);
    }

    pub fn check_state(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.scheme.state_len() {
            return Err(Error::Shape(format!(
                "collocated state has length {}, expected {}",
                u.len(),
                self.scheme.state_len()
            )));
        }
        Ok(())
    }
}
