use std::collections::BTreeSet;

use exprune_core::engine::{
    evaluate, model_flops, HeadPredictorCfg, LayerPruneCfg, ReluPredictorCfg, TermOrder,
};
use exprune_core::model::gen_blobs;
use exprune_core::predict::{statstest_predict, threshold_predict, PartialStats, Schedule};
use exprune_core::sweep::pareto_slice_indices;
use exprune_core::train::{init_model, Arch};
use exprune_core::{Model, Precision, PruneConfig};
use proptest::prelude::*;

fn terms() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 2..48)
}

fn mlp(seed: u64) -> Model {
    let arch: Arch = "mlp:40-36-4".parse().unwrap();
    init_model(&arch, seed, Precision::F64).unwrap()
}

proptest! {
    #[test]
    fn threshold_is_monotone_in_t(xs in terms(), t in -5.0f64..1.0, dt in 0.0f64..3.0) {
        let s = PartialStats::from_terms(xs);
        if threshold_predict(&s, t) {
            prop_assert!(threshold_predict(&s, t + dt));
        }
    }

    #[test]
    fn statstest_is_monotone_in_alpha(xs in terms(), a in 1e-6f64..0.5, b in 1e-6f64..0.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s = PartialStats::from_terms(xs);
        if statstest_predict(&s, lo).unwrap() {
            prop_assert!(statstest_predict(&s, hi).unwrap());
        }
    }

    #[test]
    fn statstest_ignores_positive_scale(xs in terms(), alpha in 1e-6f64..0.5, e in -20i32..20) {
        let c = 2f64.powi(e);
        let a = PartialStats::from_terms(xs.iter().copied());
        let b = PartialStats::from_terms(xs.iter().map(|x| c * x));
        prop_assert_eq!(statstest_predict(&a, alpha).unwrap(), statstest_predict(&b, alpha).unwrap());
    }

    #[test]
    fn statstest_at_half_is_sign_test(xs in terms()) {
        let s = PartialStats::from_terms(xs);
        prop_assert_eq!(statstest_predict(&s, 0.5).unwrap(), s.sum < 0.0);
    }

    #[test]
    fn pareto_slices_are_disjoint_and_layered(
        pts in prop::collection::vec((0u8..12, 0u8..12), 1..80),
        n in 1usize..6,
    ) {
        let points: Vec<(f64, f64)> = pts.iter().map(|&(f, c)| (f as f64, c as f64)).collect();
        let slices = pareto_slice_indices(&points, n);
        prop_assert!(slices.len() <= n);
        let mut seen = BTreeSet::new();
        for s in &slices {
            prop_assert!(!s.is_empty());
            for &i in s {
                prop_assert!(seen.insert(i), "index {} in two slices", i);
            }
        }
        // Every point left out is dominated by some member of the last slice.
        if slices.len() == n {
            let last = &slices[n - 1];
            for i in (0..points.len()).filter(|i| !seen.contains(i)) {
                let (f, c) = points[i];
                let covered = last.iter().any(|&j| {
                    let (g, d) = points[j];
                    g >= f && d <= c && (g > f || d < c)
                });
                prop_assert!(covered, "point {} left out but not dominated", i);
            }
        } else {
            prop_assert_eq!(seen.len(), points.len());
        }
    }

    #[test]
    fn unpruned_cost_ignores_weight_scale(seed in 0u64..50, e in -8i32..8) {
        let m = mlp(seed);
        let c = 2f64.powi(e);
        let scaled = m.with_tensors(m.tensors().iter().map(|(k, t)| (k.clone(), t.map(|x| c * x))).collect()).unwrap();
        prop_assert_eq!(model_flops(&m).unwrap(), model_flops(&scaled).unwrap());
    }

    #[test]
    fn cost_falls_as_threshold_rises(seed in 0u64..20, t in -3.0f64..0.0, dt in 0.0f64..2.0) {
        let m = mlp(seed);
        let data = gen_blobs(seed, 24, 40, 4, 1.0).unwrap();
        let run = |t: f64| {
            let cfg = PruneConfig::none().with_layer("fc1", LayerPruneCfg::new(ReluPredictorCfg::threshold(t, 16)));
            evaluate(&m, &data, &cfg).unwrap()
        };
        let (a, b) = (run(t), run(t + dt));
        prop_assert!(b.total_flops <= a.total_flops);
        prop_assert!(b.prunes() >= a.prunes());
    }

    #[test]
    fn prune_config_round_trips_through_toml(
        t in -30.0f64..0.0,
        alpha in 0.0f64..0.5,
        k in 1usize..64,
        r in 0.1f64..0.5,
        every in any::<bool>(),
        by_cost in any::<bool>(),
        margins in prop::collection::vec(0.0f64..5.0, 1..3),
    ) {
        let schedule = if every { Schedule::EveryK } else { Schedule::OnceAtK };
        let cfg = PruneConfig::none()
            .with_layer("fc1", LayerPruneCfg::new(ReluPredictorCfg::threshold(t, k).with_schedule(schedule)))
            .with_layer("fc2", LayerPruneCfg::new(ReluPredictorCfg::statstest(alpha, k.max(2))).with_disable_ratio(r))
            .with_head(HeadPredictorCfg::threshold(margins, k))
            .with_order(if by_cost { TermOrder::ByNonzeroCost } else { TermOrder::Natural });
        let text = cfg.to_toml_string().unwrap();
        prop_assert_eq!(PruneConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn manifest_round_trips_and_rejects_truncation(seed in 0u64..1000, cut in 1usize..64) {
        let m = mlp(seed);
        let dir = tempfile::tempdir().unwrap();
        m.save_dir(dir.path()).unwrap();
        prop_assert_eq!(Model::load_dir(dir.path()).unwrap(), m);
        let blob = dir.path().join("weights.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - cut]).unwrap();
        prop_assert!(Model::load_dir(dir.path()).is_err());
    }
}
