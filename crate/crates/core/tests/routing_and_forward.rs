mod common;

use mot_core::datagen::draw_sample;
use mot_core::model::{expert_forward, gate_outputs, route, select_expert, softmax_gate_probs};
use mot_core::rng::seeded;
use mot_core::{ExpertParams, GatingParams, SignalDictionary};
use ndarray::Array1;
use proptest::prelude::*;
use rand::Rng as _;

#[test]
fn expert_forward_matches_naive_loop() {
    let mut rng = seeded(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let dim = rng.random_range(4..=8);
        let classes = rng.random_range(2..=dim / 2);
        let tokens = rng.random_range(3..=6);
        let dict = SignalDictionary::build(dim, classes, &mut rng).unwrap();
        let s = draw_sample(&dict, tokens, 0.5, &mut rng).unwrap();
        let e = ExpertParams::init(dim, 2.0, &mut rng);
        let fast = expert_forward(&e, &s).unwrap();
        let slow = common::naive_forward(&e, &s.tokens);
        worst = worst.max((fast - slow).abs());
    }
    assert!(worst <= 1e-12, "max deviation {worst}");
}

#[test]
fn pure_noise_routing_is_uniform() {
    let mut rng = seeded(21);
    let dict = SignalDictionary::build(8, 2, &mut rng).unwrap();
    let sample = draw_sample(&dict, 4, 0.1, &mut rng).unwrap();
    let gating = GatingParams::zeros(8, 8);
    let mut counts = [0usize; 8];
    let draws = 100_000;
    for _ in 0..draws {
        counts[route(&gating, &sample, &mut rng, 1.0).unwrap().selected] += 1;
    }
    for c in counts {
        assert!((c as f64 / draws as f64 - 0.125).abs() <= 0.01, "{counts:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn argmax_ignores_a_common_shift(
        h in prop::collection::vec(-5.0f64..5.0, 1..10),
        shift in -100.0f64..100.0,
        seed in any::<u64>(),
    ) {
        let mut rng = seeded(seed);
        let noise = Array1::from_shape_simple_fn(h.len(), || rng.random_range(0.0..1.0));
        let h = Array1::from(h);
        let shifted = &h + shift;
        prop_assert_eq!(select_expert(&h, &noise), select_expert(&shifted, &noise));
    }

    #[test]
    fn gate_probs_are_distributions(h in prop::collection::vec(-800.0f64..800.0, 1..12)) {
        let p = softmax_gate_probs(&Array1::from(h));
        prop_assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn routed_gate_probs_are_distributions(seed in any::<u64>(), experts in 1usize..7, scale in 0.0f64..3.0) {
        let mut rng = seeded(seed);
        let dict = SignalDictionary::build(6, 3, &mut rng).unwrap();
        let s = draw_sample(&dict, 5, 0.4, &mut rng).unwrap();
        let mut gating = GatingParams::zeros(6, experts);
        gating.theta.mapv_inplace(|_| rng.random_range(-4.0..4.0));
        let out = route(&gating, &s, &mut rng, scale).unwrap();
        prop_assert!(out.selected < experts);
        prop_assert!(out.noise.iter().all(|r| (0.0..=scale).contains(r)));
        prop_assert!((out.gate_probs.sum() - 1.0).abs() < 1e-12);
        prop_assert_eq!(out.gate_outputs, gate_outputs(&gating, &s).unwrap());
    }
}
