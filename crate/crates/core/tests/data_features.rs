use nalgebra::DMatrix;
use proptest::prelude::*;
use psindy::data::{delayed_blocks, interp_linear, DerivativeMode, SampleSet};
use psindy::features::{
    build_library, evaluate_row, BlockLabels, BlockSelector, LibrarySpec, RationalTerm,
};

fn sorted_times() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 4..40).prop_map(|gaps| {
        let mut t = vec![0.0];
        for g in gaps {
            let last = *t.last().unwrap();
            t.push(last + g);
        }
        t
    })
}

fn affine_samples(times: &[f64], a: f64, b: f64) -> SampleSet {
    let m = times.len();
    let x = DMatrix::from_fn(m, 2, |i, j| {
        if j == 0 {
            a + b * times[i]
        } else {
            b - a * times[i]
        }
    });
    SampleSet::new(
        times.to_vec(),
        x,
        DMatrix::zeros(m, 2),
        DerivativeMode::Exact,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn retained_rows_are_exactly_the_interpolable_ones(
        times in sorted_times(),
        fracs in prop::collection::vec(0.01f64..0.9, 1..4),
    ) {
        let span = times[times.len() - 1];
        let offsets: Vec<f64> = fracs.iter().map(|f| -f * span).collect();
        let s = affine_samples(&times, 0.3, -1.2);
        let lo = offsets.iter().copied().fold(0.0, f64::min);
        let db = delayed_blocks(&s, &offsets).unwrap();
        for (i, &t) in times.iter().enumerate() {
            let inside = offsets.iter().all(|o| t + o >= times[0] && t + o <= span);
            prop_assert_eq!(db.rows.contains(&i), inside, "row {} at t = {}, min offset {}", i, t, lo);
        }
    }

    #[test]
    fn affine_signals_interpolate_exactly(times in sorted_times(), a in -5.0f64..5.0, b in -5.0f64..5.0, u in 0.0f64..1.0) {
        let s = affine_samples(&times, a, b);
        let q = u * times[times.len() - 1];
        let v = interp_linear(&s.times, &s.states, q).unwrap();
        let want = [a + b * q, b - a * q];
        for (got, w) in v.iter().zip(want) {
            prop_assert!((got - w).abs() <= 1e-12 * (1.0 + w.abs() + a.abs() + b.abs()));
        }
    }

    #[test]
    fn on_grid_delay_is_a_row_shift(m in 5usize..40, h in 0.05f64..1.0, k in 1usize..4, seed in 0u64..1000) {
        prop_assume!(k < m);
        let times: Vec<f64> = (0..m).map(|i| i as f64 * h).collect();
        let x = DMatrix::from_fn(m, 1, |i, _| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 100.0);
        let s = SampleSet::new(times, x.clone(), DMatrix::zeros(m, 1), DerivativeMode::Exact).unwrap();
        let db = delayed_blocks(&s, &[-(k as f64) * h]).unwrap();
        prop_assert_eq!(db.rows.clone(), (k..m).collect::<Vec<_>>());
        for (r, &i) in db.rows.iter().enumerate() {
            prop_assert!((db.blocks[0][(r, 0)] - x[(i - k, 0)]).abs() <= 1e-12 * (1.0 + x[(i - k, 0)].abs()));
        }
    }

    #[test]
    fn row_permutation_commutes_with_library(
        entries in prop::collection::vec(-2.0f64..2.0, 3 * 12),
        perm_seed in 0usize..1000,
    ) {
        let spec = LibrarySpec {
            rational: Some(RationalTerm::new(2.5, BlockSelector::AllDelayed)),
            ..LibrarySpec::polynomial(3)
        };
        let blocks: Vec<DMatrix<f64>> = (0..3).map(|b| DMatrix::from_fn(12, 1, |i, _| entries[b * 12 + i])).collect();
        let theta = build_library(&blocks, &spec, BlockLabels::Delays).unwrap().matrix;
        let perm: Vec<usize> = (0..12).map(|i| (i * 5 + perm_seed) % 12).collect();
        let permuted: Vec<DMatrix<f64>> = blocks.iter().map(|b| b.select_rows(&perm)).collect();
        let theta_p = build_library(&permuted, &spec, BlockLabels::Delays).unwrap().matrix;
        prop_assert_eq!(theta_p, theta.select_rows(&perm));
    }

    #[test]
    fn row_evaluation_is_bit_identical(entries in prop::collection::vec(-2.0f64..2.0, 2 * 3 * 9)) {
        let spec = LibrarySpec {
            rational: Some(RationalTerm { numerator: 1, ..RationalTerm::new(1.7, BlockSelector::LastBlock) }),
            ..LibrarySpec::polynomial(2)
        };
        let blocks: Vec<DMatrix<f64>> =
            (0..3).map(|b| DMatrix::from_fn(9, 2, |i, j| entries[(b * 9 + i) * 2 + j])).collect();
        let fm = build_library(&blocks, &spec, BlockLabels::Nodes).unwrap();
        for i in 0..9 {
            let row: Vec<Vec<f64>> = blocks.iter().map(|b| b.row(i).iter().copied().collect()).collect();
            let r = evaluate_row(&spec, &row, BlockLabels::Nodes).unwrap();
            for (k, v) in r.iter().enumerate() {
                prop_assert_eq!(v.to_bits(), fm.matrix[(i, k)].to_bits());
            }
        }
    }
}
