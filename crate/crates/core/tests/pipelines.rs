use proptest::prelude::*;
use psindy::data::{find_model, generate_samples, SampleSet, SamplingConfig};
use psindy::features::LibrarySpec;
use psindy::par::{self, Parallelism};
use psindy::pipelines::{
    esindy_objective, psindy_objective, CallCounter, ErrorWeights, HistoryProvider,
    ObjectiveSettings, BLOW_UP_SENTINEL,
};

fn logistic() -> (SampleSet, HistoryProvider) {
    let model = find_model("logistic").unwrap();
    let s = generate_samples(&model, &SamplingConfig::default(), 30.0).unwrap();
    (s, HistoryProvider::Model(model.history))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_decomposes(w1 in 0.0f64..3.0, w2 in 0.0f64..3.0, tau in 0.3f64..1.5, psindy in prop::bool::ANY) {
        prop_assume!(w1 + w2 > 0.0);
        let (s, h) = logistic();
        let settings = ObjectiveSettings { weights: ErrorWeights::new(w1, w2).unwrap(), ..ObjectiveSettings::default() };
        let c = CallCounter::new();
        let fit = if psindy {
            psindy_objective(&s, tau, 4, &settings, h, &c).unwrap()
        } else {
            esindy_objective(&s, &[tau], &settings, h, &c).unwrap()
        };
        prop_assume!(fit.blow_up.is_none());
        let want = w1 * fit.residual + w2 * fit.simulation;
        prop_assert!((fit.objective - want).abs() <= 1e-12 * want.abs().max(f64::MIN_POSITIVE));
        prop_assert_eq!(c.get(), 1);
    }
}

#[test]
fn counter_counts_concurrent_evaluations() {
    let (s, h) = logistic();
    let settings = ObjectiveSettings::default();
    let c = CallCounter::new();
    let taus: Vec<f64> = (0..37).map(|i| 0.2 + 0.035 * i as f64).collect();
    let a = par::map(Parallelism::Parallel, &taus, |&t| {
        esindy_objective(&s, &[t], &settings, h, &c)
            .unwrap()
            .objective
    });
    assert_eq!(c.get(), 37);
    let b = par::map(Parallelism::Sequential, &taus, |&t| {
        psindy_objective(&s, t, 3, &settings, h, &c)
            .unwrap()
            .objective
    });
    assert_eq!(c.get(), 74);
    assert!(a.iter().chain(&b).all(|v| v.is_finite()));
}

#[test]
fn single_delay_and_single_node_agree() {
    let (s, h) = logistic();
    let settings = ObjectiveSettings {
        library: LibrarySpec::polynomial(2),
        ..ObjectiveSettings::default()
    };
    for tau in [0.4, 0.8, 1.0, 1.3] {
        let c = CallCounter::new();
        let e = esindy_objective(&s, &[tau], &settings, h, &c).unwrap();
        let p = psindy_objective(&s, tau, 1, &settings, h, &c).unwrap();
        assert_eq!(
            e.coefficients.coefficients, p.coefficients.coefficients,
            "tau = {tau}"
        );
        assert_eq!(e.coefficients.active, p.coefficients.active);
        assert_eq!(e.residual, p.residual);
        assert_eq!(e.rows, p.rows);
    }
}

#[test]
fn blow_ups_leave_no_trace() {
    let (s, h) = logistic();
    let good = ObjectiveSettings::default();
    let fragile = ObjectiveSettings {
        blow_up_factor: 1e-9,
        ..ObjectiveSettings::default()
    };
    let c = CallCounter::new();
    let fresh = esindy_objective(&s, &[1.0], &good, h, &c).unwrap();
    let jobs: Vec<(bool, f64)> = (0..40)
        .map(|i| (i % 2 == 0, 0.5 + 0.02 * i as f64))
        .collect();
    let out = par::map(Parallelism::Parallel, &jobs, |&(bad, tau)| {
        let settings = if bad { &fragile } else { &good };
        esindy_objective(&s, &[tau], settings, h, &c).unwrap()
    });
    for ((bad, tau), fit) in jobs.iter().zip(&out) {
        if *bad {
            assert_eq!(fit.objective, BLOW_UP_SENTINEL);
            assert!(fit.blow_up.is_some());
        } else {
            let again = esindy_objective(&s, &[*tau], &good, h, &CallCounter::new()).unwrap();
            assert_eq!(fit.objective, again.objective);
            assert!(fit.blow_up.is_none());
        }
    }
    let after = esindy_objective(&s, &[1.0], &good, h, &c).unwrap();
    assert_eq!(after.objective, fresh.objective);
    assert_eq!(after.coefficients, fresh.coefficients);
    assert_eq!(c.get(), 42);
}

#[test]
fn far_delay_scores_much_worse() {
    let model = find_model("logistic").unwrap();
    let cfg = SamplingConfig {
        samples: 1000,
        ..SamplingConfig::default()
    };
    let s = generate_samples(&model, &cfg, 30.0).unwrap();
    let h = HistoryProvider::Model(model.history);
    let settings = ObjectiveSettings::default();
    let c = CallCounter::new();
    let near = esindy_objective(&s, &[1.0], &settings, h, &c).unwrap();
    let far = esindy_objective(&s, &[0.3], &settings, h, &c).unwrap();
    assert!(
        far.objective >= 10.0 * near.objective,
        "{} vs {}",
        far.objective,
        near.objective
    );
}
