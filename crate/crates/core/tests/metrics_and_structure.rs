mod common;

use mot_core::baselines::{moe_ffn_forward, multihead_forward, MultiHeadParams};
use mot_core::datagen::draw_sample;
use mot_core::metrics::{fit_convergence_rate, routing_histogram, specialization_report};
use mot_core::model::expert_forward;
use mot_core::rng::seeded;
use mot_core::{ExpertParams, ModelState, SignalDictionary};
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn algebraic_decay_fits_a_shallow_line() {
    let losses: Vec<(usize, f64)> = (100..=1000).map(|t| (t, 1.0 / t as f64)).collect();
    let fit = fit_convergence_rate(&losses, 100..=1000).unwrap();
    assert!(fit.slope.abs() <= 0.003, "slope {}", fit.slope);
    assert!(fit.r_squared < 0.95, "r² {}", fit.r_squared);
}

#[test]
fn initial_projections_are_of_order_sigma0() {
    for (seed, sigma0) in [(0, 0.1), (1, 1.0), (2, 0.3)] {
        let mut rng = seeded(seed);
        let dict = SignalDictionary::build(64, 4, &mut rng).unwrap();
        let model = ModelState::init(64, 24, sigma0, &mut rng).unwrap();
        for e in &model.experts {
            for mu in dict.all_signals() {
                assert!(e.w.dot(mu).abs() <= 5.0 * sigma0);
                for nu in dict.all_signals() {
                    assert!(nu.dot(&e.w_kq.dot(mu)).abs() <= 5.0 * sigma0);
                }
            }
        }
    }
}

#[test]
fn zero_gating_histogram_is_uniform() {
    let (corpus, model) = common::small_setup(8, 3, 5, 6, 2);
    let trials = 400;
    let hist = routing_histogram(&model, &corpus, trials, 1.0, &mut seeded(3)).unwrap();
    let per_class = (corpus.len() / 3 * trials) as f64;
    let se = (1.0 / 6.0 * (5.0 / 6.0) / per_class).sqrt();
    for row in hist.rows() {
        assert!((row.sum() - 1.0).abs() <= 1e-12);
        for x in row {
            assert!((x - 1.0 / 6.0).abs() <= 3.0 * se, "{x}");
        }
    }
    assert!(routing_histogram(&model, &corpus, 0, 1.0, &mut seeded(3)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn specialization_matches_brute_force_and_partitions(seed in any::<u64>(), experts in 1usize..10, scale in 0.01f64..50.0) {
        let mut rng = seeded(seed);
        let dict = SignalDictionary::build(10, 4, &mut rng).unwrap();
        let model = ModelState::init(10, experts, 1.0, &mut rng).unwrap();
        let report = specialization_report(&model, &dict);
        prop_assert_eq!(report.sets.iter().map(Vec::len).sum::<usize>(), experts);
        for (i, e) in model.experts.iter().enumerate() {
            let proj: Vec<f64> = dict.cls_signals.iter().map(|v| e.w.dot(v)).collect();
            let mut best = 0;
            for n in 1..proj.len() {
                if proj[n] > proj[best] {
                    best = n;
                }
            }
            prop_assert_eq!(report.best_class[i], best);
            prop_assert!(report.sets[best].contains(&i));
        }

        let mut scaled = model.clone();
        for e in &mut scaled.experts {
            e.w *= scale;
        }
        let rescaled = specialization_report(&scaled, &dict);
        prop_assert_eq!(rescaled.best_class, report.best_class);
        prop_assert_eq!(rescaled.sets, report.sets);
    }

    #[test]
    fn multihead_forward_is_the_sum_of_heads(seed in any::<u64>(), heads in 1usize..6) {
        let mut rng = seeded(seed);
        let dict = SignalDictionary::build(8, 3, &mut rng).unwrap();
        let s = draw_sample(&dict, 5, 0.5, &mut rng).unwrap();
        let params = MultiHeadParams::init(8, heads, 1.5, &mut rng).unwrap();
        let sum: f64 = params.heads.iter().map(|h| expert_forward(h, &s).unwrap()).sum();
        prop_assert!((multihead_forward(&params, &s).unwrap() - sum).abs() <= 1e-12);
    }

    #[test]
    fn token_sum_head_equals_zero_key_query_expert(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let dict = SignalDictionary::build(8, 3, &mut rng).unwrap();
        let s = draw_sample(&dict, 6, 0.5, &mut rng).unwrap();
        let mut e = ExpertParams::init(8, 1.0, &mut rng);
        e.w_kq = Array2::zeros((8, 8));
        let a = expert_forward(&e, &s).unwrap();
        let b = moe_ffn_forward(&e.w, &s).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }
}
