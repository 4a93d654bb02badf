//! Sequential thresholded least squares.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Ridge used when an active submatrix turns out rank deficient.
pub const AUTO_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StlsqConfig {
    pub threshold: f64,
    pub ridge: f64,
    pub max_iterations: usize,
}

impl Default for StlsqConfig {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            ridge: 0.0,
            max_iterations: 10,
        }
    }
}

impl StlsqConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.threshold > 0.0) {
            errs.push(format!(
                "stlsq.threshold must be positive (got {})",
                self.threshold
            ));
        }
        if !(self.ridge >= 0.0) {
            errs.push(format!(
                "stlsq.ridge must be non-negative (got {})",
                self.ridge
            ));
        }
        errs
    }
}

fn rank_tol(svd: &SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, rows: usize, cols: usize) -> f64 {
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    smax * rows.max(cols) as f64 * f64::EPSILON
}

/// Minimizer of `|A x - b|^2 + ridge |x|^2` from a thin SVD. With `ridge = 0`
/// singular values below the rank tolerance are dropped (minimum-norm solution).
fn svd_solve(
    svd: &SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    b: &DVector<f64>,
    ridge: f64,
    tol: f64,
) -> DVector<f64> {
    let u = svd.u.as_ref().expect("svd computed with U");
    let vt = svd.v_t.as_ref().expect("svd computed with V^T");
    let utb = u.transpose() * b;
    let scaled = DVector::from_iterator(
        utb.len(),
        utb.iter().zip(svd.singular_values.iter()).map(|(c, &s)| {
            if ridge > 0.0 {
                c * s / (s * s + ridge)
            } else if s > tol {
                c / s
            } else {
                0.0
            }
        }),
    );
    vt.transpose() * scaled
}

pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let (m, p) = a.shape();
    if m == 0 || p == 0 {
        return DVector::zeros(p);
    }
    let svd = SVD::new(a.clone(), true, true);
    let tol = rank_tol(&svd, m, p);
    svd_solve(&svd, b, ridge, tol)
}

/// Least squares restricted to the `active` columns; the others are zero.
/// Switches to [`AUTO_RIDGE`] when the submatrix is rank deficient and no
/// ridge was requested.
fn solve_active(a: &DMatrix<f64>, b: &DVector<f64>, active: &[bool], ridge: f64) -> DVector<f64> {
    let cols: Vec<usize> = (0..active.len()).filter(|&k| active[k]).collect();
    let mut xi = DVector::zeros(active.len());
    if cols.is_empty() {
        return xi;
    }
    let sub = a.select_columns(&cols);
    let (m, p) = sub.shape();
    let svd = SVD::new(sub, true, true);
    let tol = rank_tol(&svd, m, p);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let ridge = if ridge == 0.0 && rank < p {
        AUTO_RIDGE
    } else {
        ridge
    };
    let sol = svd_solve(&svd, b, ridge, tol);
    for (k, &c) in cols.iter().enumerate() {
        xi[c] = sol[k];
    }
    xi
}

/// Result of thresholded regression for one state component.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnFit {
    pub coefficients: DVector<f64>,
    pub active: Vec<bool>,
    /// Active set after each thresholding pass, starting with the full set.
    pub history: Vec<Vec<bool>>,
}

pub fn stlsq_column(a: &DMatrix<f64>, b: &DVector<f64>, cfg: &StlsqConfig) -> ColumnFit {
    let p = a.ncols();
    let mut active = vec![true; p];
    let mut history = vec![active.clone()];
    let mut xi = solve_active(a, b, &active, cfg.ridge);
    for _ in 0..cfg.max_iterations {
        let next: Vec<bool> = (0..p)
            .map(|k| active[k] && xi[k].abs() >= cfg.threshold)
            .collect();
        if next == active {
            break;
        }
        active = next;
        history.push(active.clone());
        // refit on the reduced support
        xi = solve_active(a, b, &active, cfg.ridge);
    }
    for k in 0..p {
        if !active[k] {
            xi[k] = 0.0;
        }
    }
    ColumnFit {
        coefficients: xi,
        active,
        history,
    }
}

/// Library weights, one column per state component.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCoefficients {
    pub coefficients: DMatrix<f64>,
    pub active: Vec<Vec<bool>>,
    pub descriptors: Vec<String>,
}

impl SparseCoefficients {
    pub fn zeros(descriptors: Vec<String>, n: usize) -> Self {
        let p = descriptors.len();
        Self {
            coefficients: DMatrix::zeros(p, n),
            active: vec![vec![false; p]; n],
            descriptors,
        }
    }

    pub fn num_terms(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coefficients.ncols()
    }

    /// `(descriptor, coefficient)` for every active term of component `j`.
    pub fn active_terms(&self, j: usize) -> Vec<(&str, f64)> {
        self.active[j]
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(k, _)| (self.descriptors[k].as_str(), self.coefficients[(k, j)]))
            .collect()
    }

    pub fn coefficient(&self, descriptor: &str, j: usize) -> Option<f64> {
        self.descriptors
            .iter()
            .position(|d| d == descriptor)
            .map(|k| self.coefficients[(k, j)])
    }

    /// `out = Xi^T theta_row`.
    pub fn apply(&self, theta_row: &[f64], out: &mut [f64]) {
        let c = &self.coefficients;
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &t) in theta_row.iter().enumerate() {
                if self.active[j][k] {
                    acc += c[(k, j)] * t;
                }
            }
            *o = acc;
        }
    }
}

pub fn stlsq(
    theta: &FeatureMatrix,
    dx: &DMatrix<f64>,
    cfg: &StlsqConfig,
) -> Result<SparseCoefficients> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if theta.nrows() != dx.nrows() {
        return Err(Error::Shape(format!(
            "library has {} rows, derivatives {}",
            theta.nrows(),
            dx.nrows()
        )));
    }
    let (p, n) = (theta.ncols(), dx.ncols());
    let mut out = SparseCoefficients::zeros(theta.descriptors.clone(), n);
    for j in 0..n {
        let fit = stlsq_column(&theta.matrix, &dx.column(j).into_owned(), cfg);
        for k in 0..p {
            out.coefficients[(k, j)] = fit.coefficients[k];
        }
        out.active[j] = fit.active;
    }
    Ok(out)
}

/// Frobenius norm of `dx - theta * xi`.
pub fn residual_norm(theta: &DMatrix<f64>, xi: &DMatrix<f64>, dx: &DMatrix<f64>) -> Result<f64> {
    if theta.ncols() != xi.nrows() || theta.nrows() != dx.nrows() || xi.ncols() != dx.ncols() {
        return Err(Error::Shape(format!(
            "theta {:?}, xi {:?}, dx {:?}",
            theta.shape(),
            xi.shape(),
            dx.shape()
        )));
    }
    Ok((dx - theta * xi).norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(a: DMatrix<f64>) -> FeatureMatrix {
        let descriptors = (0..a.ncols()).map(|k| format!("c{k}")).collect();
        FeatureMatrix {
            matrix: a,
            descriptors,
        }
    }

    #[test]
    fn consistent_system_solved_exactly() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 3.0, 5.0]);
        let x = least_squares(&a, &b, 0.0);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
        assert_eq!(
            least_squares(&a, &DVector::zeros(3), 0.0),
            DVector::zeros(2)
        );
    }

    #[test]
    fn duplicated_column_gives_minimum_norm() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let b = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let x = least_squares(&a, &b, 0.0);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_shrinks() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        // (a^T a + r) x = a^T b  ->  x = 2 / (2 + r)
        let x = least_squares(&a, &b, 2.0);
        assert!((x[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn sparse_recovery_on_polynomial_library() {
        let xs: [f64; 4] = [-1.0, 0.0, 1.0, 2.0];
        let a = DMatrix::from_fn(4, 3, |i, k| xs[i].powi(k as i32));
        let b = DMatrix::from_fn(4, 1, |i, _| 3.0 * xs[i]);
        let cfg = StlsqConfig {
            threshold: 0.1,
            ..Default::default()
        };
        let xi = stlsq(&fm(a.clone()), &b, &cfg).unwrap();
        assert_eq!(xi.coefficients[(0, 0)], 0.0);
        assert!((xi.coefficients[(1, 0)] - 3.0).abs() < 1e-12);
        assert_eq!(xi.coefficients[(2, 0)], 0.0);
        assert_eq!(xi.active[0], vec![false, true, false]);
        assert!(residual_norm(&a, &xi.coefficients, &b).unwrap() < 1e-12);
    }

    #[test]
    fn zero_target_gives_zero_column() {
        let a = DMatrix::from_fn(5, 3, |i, k| (i + k) as f64);
        let xi = stlsq(&fm(a), &DMatrix::zeros(5, 1), &StlsqConfig::default()).unwrap();
        assert!(xi.coefficients.iter().all(|&c| c == 0.0));
        assert!(xi.active[0].iter().all(|&a| !a));
    }

    #[test]
    fn threshold_then_refit_by_hand() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_column_slice(3, 1, &[2.0, 3.0, 5.0]);
        let cfg = StlsqConfig {
            threshold: 2.5,
            ..Default::default()
        };
        let xi = stlsq(&fm(a), &b, &cfg).unwrap();
        assert_eq!(xi.coefficients[(0, 0)], 0.0);
        assert!((xi.coefficients[(1, 0)] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        assert_eq!(residual_norm(&one(2.0), &one(1.0), &one(5.0)).unwrap(), 3.0);
        let a = DMatrix::from_fn(4, 2, |i, k| (i * k) as f64);
        let dx = DMatrix::from_fn(4, 2, |i, j| (i + j) as f64);
        assert_eq!(
            residual_norm(&a, &DMatrix::zeros(2, 2), &dx).unwrap(),
            dx.norm()
        );
        assert!(matches!(
            residual_norm(&a, &DMatrix::zeros(3, 2), &dx),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = DMatrix::from_element(4, 2, 1.0);
        assert!(stlsq(&fm(a), &DMatrix::zeros(3, 1), &StlsqConfig::default()).is_err());
    }

    #[test]
    fn active_terms_listing() {
        let xs: [f64; 5] = [-1.0, 0.5, 1.0, 2.0, 3.0];
        let a = DMatrix::from_fn(5, 3, |i, k| xs[i].powi(k as i32));
        let b = DMatrix::from_fn(5, 1, |i, _| 1.0 - 2.0 * xs[i] * xs[i]);
        let xi = stlsq(&fm(a), &b, &StlsqConfig::default()).unwrap();
        let terms = xi.active_terms(0);
        assert_eq!(terms.len(), 2);
        assert_eq!(terms[0].0, "c0");
        assert!((terms[1].1 + 2.0).abs() < 1e-12);
        let mut out = [0.0];
        xi.apply(&[1.0, 2.0, 4.0], &mut out);
        assert!((out[0] + 7.0).abs() < 1e-12);
    }
}
