mod common;

use common::{mat_checksum, w_checksum, wkq_checksum};
use mot_core::baselines::{train_multihead, train_multihead_observed, MultiHeadParams};
use mot_core::loss_grad::ForwardKind;
use mot_core::trainer::{train, train_routed};
use mot_core::{ModelState, Stage, StageSchedule};

fn short_schedule() -> StageSchedule {
    StageSchedule {
        t1: 6,
        t2: 12,
        t_total: 18,
        eta: 0.05,
        eta_a: 0.5,
        eta_r: 0.5,
        noise_scale_by_stage: [1.0, 1.0, 0.0],
    }
}

fn observed_states(model: ModelState, schedule: &StageSchedule) -> Vec<ModelState> {
    let (corpus, _) = common::small_setup(8, 3, 5, 1, 4);
    let mut states = vec![model.clone()];
    train_routed(model, &corpus, schedule, 4, ForwardKind::Attention, |_, m| states.push(m.clone())).unwrap();
    states
}

#[test]
fn frozen_blocks_keep_their_checksums_within_each_stage() {
    let sch = short_schedule();
    let (_, model) = common::small_setup(8, 3, 5, 3, 4);
    let states = observed_states(model, &sch);
    for epoch in sch.epochs(Stage::I) {
        assert_eq!(wkq_checksum(&states[epoch]), wkq_checksum(&states[0]), "epoch {epoch}");
    }
    for epoch in sch.epochs(Stage::II) {
        assert_eq!(w_checksum(&states[epoch]), w_checksum(&states[sch.t1]), "epoch {epoch}");
    }
    for epoch in sch.epochs(Stage::III) {
        assert_eq!(wkq_checksum(&states[epoch]), wkq_checksum(&states[sch.t2]), "epoch {epoch}");
    }
    assert_ne!(w_checksum(&states[sch.t1]), w_checksum(&states[0]));
    assert_ne!(wkq_checksum(&states[sch.t2]), wkq_checksum(&states[sch.t1]));
    assert_ne!(w_checksum(&states[sch.t_total]), w_checksum(&states[sch.t2]));
}

#[test]
fn stage_one_steps_have_length_eta() {
    let sch = short_schedule();
    let (corpus, model) = common::small_setup(8, 3, 5, 3, 4);
    let mut states = vec![model.clone()];
    let mut counts = Vec::new();
    train_routed(model, &corpus, &sch, 4, ForwardKind::Attention, |r, m| {
        counts.push(r.routed_counts.clone());
        states.push(m.clone());
    })
    .unwrap();
    for epoch in sch.epochs(Stage::I) {
        for (i, &count) in counts[epoch - 1].iter().enumerate() {
            let dw = &states[epoch].experts[i].w - &states[epoch - 1].experts[i].w;
            let len = dw.dot(&dw).sqrt();
            if count > 0 {
                assert!((len - sch.eta).abs() <= 1e-10, "epoch {epoch} expert {i}: {len}");
            } else {
                assert_eq!(len, 0.0);
            }
        }
    }
}

#[test]
fn router_moves_every_epoch_and_stays_balanced() {
    let sch = short_schedule();
    let (_, model) = common::small_setup(8, 3, 5, 3, 4);
    let states = observed_states(model, &sch);
    for epoch in 1..=sch.t_total {
        assert_ne!(
            mat_checksum(&states[epoch].gating.theta),
            mat_checksum(&states[epoch - 1].gating.theta),
            "epoch {epoch}"
        );
        let sum = states[epoch].gating.column_sum();
        assert!(sum.iter().all(|x| x.abs() <= 1e-7));
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let sch = short_schedule();
    let (corpus, model) = common::small_setup(8, 3, 5, 3, 4);
    let a = train(model.clone(), &corpus, &sch, 9).unwrap();
    let b = train(model.clone(), &corpus, &sch, 9).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.model, b.model);
    let c = train(model, &corpus, &sch, 10).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn single_expert_matches_single_head() {
    let sch = short_schedule();
    let (corpus, model) = common::small_setup(8, 3, 5, 1, 6);
    let heads = MultiHeadParams {
        heads: model.experts.clone(),
    };
    let mot = train(model, &corpus, &sch, 6).unwrap();
    let mh = train_multihead(heads, &corpus, &sch).unwrap();
    for (a, b) in mot.records.iter().zip(&mh.records) {
        assert_eq!(a.expert_loss, b.expert_loss, "epoch {}", a.epoch);
        assert_eq!(a.router_loss, Some(a.expert_loss));
        assert_eq!(a.routed_counts, b.routed_counts);
    }
    assert_eq!(mot.model.experts, mh.model.heads);
}

#[test]
fn multihead_respects_stage_freezing() {
    let sch = short_schedule();
    let (corpus, model) = common::small_setup(8, 3, 5, 2, 8);
    let params = MultiHeadParams { heads: model.experts };
    let mut states = vec![params.clone()];
    train_multihead_observed(params, &corpus, &sch, |r, p| {
        assert!(r.router_loss.is_none());
        states.push(p.clone());
    })
    .unwrap();
    let w = |p: &MultiHeadParams| p.heads.iter().map(|h| common::vec_checksum(&h.w)).collect::<String>();
    let a = |p: &MultiHeadParams| p.heads.iter().map(|h| mat_checksum(&h.w_kq)).collect::<String>();
    for epoch in sch.epochs(Stage::I) {
        assert_eq!(a(&states[epoch]), a(&states[0]));
    }
    for epoch in sch.epochs(Stage::II) {
        assert_eq!(w(&states[epoch]), w(&states[sch.t1]));
    }
    for epoch in sch.epochs(Stage::III) {
        assert_eq!(a(&states[epoch]), a(&states[sch.t2]));
    }
}

#[test]
fn rejects_invalid_schedules() {
    let (corpus, model) = common::small_setup(8, 3, 5, 2, 1);
    let mut bad = short_schedule();
    bad.t2 = bad.t1;
    assert!(train(model.clone(), &corpus, &bad, 0).is_err());
    let mut bad = short_schedule();
    bad.noise_scale_by_stage[1] = -1.0;
    assert!(train(model, &corpus, &bad, 0).is_err());
}
