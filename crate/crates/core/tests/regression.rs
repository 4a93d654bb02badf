use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use psindy::regression::{stlsq_column, StlsqConfig};

/// Least squares restricted to `support` via normal equations solved by
/// Cholesky, independent of the crate's SVD path.
fn refit(a: &DMatrix<f64>, b: &DVector<f64>, support: &[usize]) -> Option<(DVector<f64>, f64)> {
    if support.is_empty() {
        return Some((DVector::zeros(0), b.norm()));
    }
    let sub = a.select_columns(support);
    let gram = sub.transpose() * &sub;
    let x = gram.cholesky()?.solve(&(sub.transpose() * b));
    let r = (b - &sub * &x).norm();
    Some((x, r))
}

/// Smallest residual over every support whose refit survives the threshold.
fn best_subset(a: &DMatrix<f64>, b: &DVector<f64>, threshold: f64) -> f64 {
    let p = a.ncols();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << p) {
        let support: Vec<usize> = (0..p).filter(|k| mask & (1 << k) != 0).collect();
        if let Some((x, r)) = refit(a, b, &support) {
            if x.iter().all(|c| c.abs() >= threshold) {
                best = best.min(r);
            }
        }
    }
    best
}

fn planted() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, Vec<usize>)> {
    (2usize..=8).prop_flat_map(|p| {
        (
            prop::collection::vec(-1.0f64..1.0, 40 * p),
            prop::collection::vec(prop::bool::ANY, p),
            prop::collection::vec((0.5f64..2.0, prop::bool::ANY), p),
        )
            .prop_map(move |(entries, mask, coefs)| {
                let a = DMatrix::from_vec(40, p, entries);
                let mut xi = DVector::zeros(p);
                let mut support = Vec::new();
                for k in 0..p {
                    if mask[k] {
                        let (m, neg) = coefs[k];
                        xi[k] = if neg { -m } else { m };
                        support.push(k);
                    }
                }
                let b = &a * &xi;
                (a, b, support)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_brute_force_subset_oracle((a, b, support) in planted()) {
        let cfg = StlsqConfig { threshold: 0.1, ..StlsqConfig::default() };
        let fit = stlsq_column(&a, &b, &cfg);
        let found: Vec<usize> = (0..a.ncols()).filter(|&k| fit.active[k]).collect();
        let residual = (&b - &a * &fit.coefficients).norm();
        let oracle = best_subset(&a, &b, cfg.threshold);
        prop_assert!(residual <= oracle + 1e-8, "{residual} vs {oracle}");
        prop_assert_eq!(found, support);
    }

    #[test]
    fn rerun_on_own_support_is_idempotent((a, b, _s) in planted(), noise in prop::collection::vec(-0.2f64..0.2, 40)) {
        let b = b + DVector::from_vec(noise);
        let cfg = StlsqConfig { threshold: 0.3, ..StlsqConfig::default() };
        let fit = stlsq_column(&a, &b, &cfg);
        let cols: Vec<usize> = (0..a.ncols()).filter(|&k| fit.active[k]).collect();
        let again = stlsq_column(&a.select_columns(&cols), &b, &cfg);
        prop_assert!(again.active.iter().all(|&x| x));
        for (i, &k) in cols.iter().enumerate() {
            prop_assert!((again.coefficients[i] - fit.coefficients[k]).abs() <= 1e-10 * (1.0 + fit.coefficients[k].abs()));
        }
    }

    #[test]
    fn active_sets_only_shrink((a, b, _s) in planted(), noise in prop::collection::vec(-0.5f64..0.5, 40)) {
        let b = b + DVector::from_vec(noise);
        let fit = stlsq_column(&a, &b, &StlsqConfig { threshold: 0.4, ..StlsqConfig::default() });
        for w in fit.history.windows(2) {
            prop_assert!(w[0].iter().zip(&w[1]).all(|(&before, &after)| before || !after));
        }
        for (k, &on) in fit.active.iter().enumerate() {
            prop_assert!(on || fit.coefficients[k] == 0.0);
        }
    }
}
