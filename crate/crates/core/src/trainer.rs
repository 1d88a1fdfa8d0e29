//! Three-stage training with continuous router updates.
//!
//! Each epoch routes the whole corpus once, applies the stage's expert
//! update, then takes a router step on the same routes evaluated at the
//! updated experts.

use std::fmt;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::datagen::Corpus;
use crate::error::{Error, Result};
use crate::loss_grad::{routed_counts, Evaluation, ForwardKind};
use crate::metrics::specialization_report_for_heads;
use crate::model::{route, ModelState};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
    III,
}

impl Stage {
    pub fn index(self) -> usize {
        match self {
            Stage::I => 0,
            Stage::II => 1,
            Stage::III => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "I" => Some(Stage::I),
            "II" => Some(Stage::II),
            "III" => Some(Stage::III),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::I => "I",
            Stage::II => "II",
            Stage::III => "III",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub t1: usize,
    pub t2: usize,
    pub t_total: usize,
    pub eta: f64,
    pub eta_a: f64,
    pub eta_r: f64,
    pub noise_scale_by_stage: [f64; 3],
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self {
            t1: 300,
            t2: 800,
            t_total: 1200,
            eta: 0.05,
            eta_a: 8.0,
            eta_r: 0.5,
            noise_scale_by_stage: [1.0, 1.0, 0.0],
        }
    }
}

impl StageSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.t1 && self.t1 < self.t2 && self.t2 < self.t_total) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < t1 < t2 < t_total, got t1={} t2={} t_total={}",
                self.t1, self.t2, self.t_total
            )));
        }
        for (name, rate) in [("eta", self.eta), ("eta_a", self.eta_a), ("eta_r", self.eta_r)] {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::InvalidSchedule(format!("{name} must be positive, got {rate}")));
            }
        }
        if let Some(bad) = self.noise_scale_by_stage.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidSchedule(format!(
                "routing noise scales must be nonnegative, got {bad}"
            )));
        }
        Ok(())
    }

    /// Stage of 1-based `epoch`.
    pub fn stage_of(&self, epoch: usize) -> Stage {
        if epoch <= self.t1 {
            Stage::I
        } else if epoch <= self.t2 {
            Stage::II
        } else {
            Stage::III
        }
    }

    pub fn noise_scale(&self, stage: Stage) -> f64 {
        self.noise_scale_by_stage[stage.index()]
    }

    /// Epochs belonging to `stage`, 1-based and inclusive.
    pub fn epochs(&self, stage: Stage) -> std::ops::RangeInclusive<usize> {
        match stage {
            Stage::I => 1..=self.t1,
            Stage::II => self.t1 + 1..=self.t2,
            Stage::III => self.t2 + 1..=self.t_total,
        }
    }
}

/// Metrics for one epoch, measured after that epoch's expert update on the
/// epoch's routes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub expert_loss: f64,
    /// Absent for architectures without a router.
    pub router_loss: Option<f64>,
    pub routed_counts: Vec<usize>,
    pub margins: Vec<f64>,
    pub mean_margin: f64,
    /// Mean `(v_n, v_n)` attention over samples whose routed expert
    /// specializes in the sample's class; NaN when there are none.
    pub mean_pvv: f64,
    /// `‖Σ_i θ^(i)‖∞` after the router step.
    pub theta_sum_inf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<P = ModelState> {
    pub epoch: usize,
    pub stage: Stage,
    pub model: P,
}

#[derive(Debug, Clone)]
pub struct Trajectory<P = ModelState> {
    pub records: Vec<TrainRecord>,
    pub model: P,
    /// Snapshots after epochs `t1`, `t2` and `t_total`.
    pub checkpoints: Vec<Checkpoint<P>>,
}

impl<P> Trajectory<P> {
    pub fn checkpoint(&self, epoch: usize) -> Option<&P> {
        self.checkpoints.iter().find(|c| c.epoch == epoch).map(|c| &c.model)
    }

    pub fn losses(&self) -> Vec<(usize, f64)> {
        self.records.iter().map(|r| (r.epoch, r.expert_loss)).collect()
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.expert_loss)
    }

    pub fn map<Q>(self, mut f: impl FnMut(P) -> Q) -> Trajectory<Q> {
        Trajectory {
            records: self.records,
            model: f(self.model),
            checkpoints: self
                .checkpoints
                .into_iter()
                .map(|c| Checkpoint {
                    epoch: c.epoch,
                    stage: c.stage,
                    model: f(c.model),
                })
                .collect(),
        }
    }
}

pub(crate) fn is_checkpoint(schedule: &StageSchedule, epoch: usize) -> bool {
    epoch == schedule.t1 || epoch == schedule.t2 || epoch == schedule.t_total
}

pub(crate) fn check_corpus(dim: usize, corpus: &Corpus) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("corpus is empty".into()));
    }
    if corpus.dictionary.dim != dim {
        return Err(Error::DimensionMismatch(format!(
            "model has dimension {dim} but corpus has {}",
            corpus.dictionary.dim
        )));
    }
    Ok(())
}

/// `W ← W − η g/‖g‖`, skipped when `g = 0`.
pub(crate) fn normalized_step(w: &mut Array1<f64>, grad: &Array1<f64>, eta: f64) {
    let norm = grad.dot(grad).sqrt();
    if norm > 0.0 {
        w.scaled_add(-eta / norm, grad);
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub(crate) fn theta_sum_inf(theta: &Array2<f64>) -> f64 {
    theta
        .sum_axis(ndarray::Axis(1))
        .iter()
        .fold(0.0, |m, x| m.max(x.abs()))
}

/// Trains the Mixture-of-Transformers model.
pub fn train(model: ModelState, corpus: &Corpus, schedule: &StageSchedule, seed: u64) -> Result<Trajectory> {
    train_routed(model, corpus, schedule, seed, ForwardKind::Attention, |_, _| {})
}

/// Routed training loop shared by the transformer experts and the
/// token-sum heads. `observer` sees every record with the model state at the
/// end of that epoch.
pub fn train_routed<F>(
    mut model: ModelState,
    corpus: &Corpus,
    schedule: &StageSchedule,
    seed: u64,
    forward: ForwardKind,
    mut observer: F,
) -> Result<Trajectory>
where
    F: FnMut(&TrainRecord, &ModelState),
{
    schedule.validate()?;
    check_corpus(model.dim(), corpus)?;
    let mut rng = stream(seed, Stream::Routing);
    let mut records = Vec::with_capacity(schedule.t_total);
    let mut checkpoints = Vec::new();

    for epoch in 1..=schedule.t_total {
        let stage = schedule.stage_of(epoch);
        let noise = schedule.noise_scale(stage);
        let routes = corpus
            .samples
            .iter()
            .map(|s| route(&model.gating, s, &mut rng, noise).map(|r| r.selected))
            .collect::<Result<Vec<_>>>()?;

        {
            let eval = Evaluation::with_forward(&model, corpus, &routes, forward)?;
            match (stage, forward) {
                (Stage::I, _) => {
                    let grads = eval.grad_w();
                    drop(eval);
                    for (e, g) in model.experts.iter_mut().zip(&grads) {
                        normalized_step(&mut e.w, g, schedule.eta);
                    }
                }
                (Stage::II, ForwardKind::Attention) => {
                    let grads = eval.grad_wkq();
                    drop(eval);
                    for (e, g) in model.experts.iter_mut().zip(&grads) {
                        e.w_kq.scaled_add(-schedule.eta_a, g);
                    }
                }
                (Stage::II, ForwardKind::TokenSum) => {}
                (Stage::III, _) => {
                    let grads = eval.grad_w();
                    drop(eval);
                    for (e, g) in model.experts.iter_mut().zip(&grads) {
                        e.w.scaled_add(-schedule.eta, g);
                    }
                }
            }
        }

        let eval = Evaluation::with_forward(&model, corpus, &routes, forward)?;
        let breakdown = eval.expert_loss();
        let d_theta = eval.grad_theta();
        let report = specialization_report_for_heads(model.experts.iter().map(|e| &e.w), &corpus.dictionary);
        let mean_pvv = {
            let scores: Vec<f64> = corpus
                .samples
                .iter()
                .zip(eval.traces())
                .zip(&routes)
                .filter(|((s, _), &m)| report.best_class[m] == s.class_index)
                .map(|((s, t), _)| t.attention[(s.pos_signal, s.pos_signal)])
                .collect();
            if scores.is_empty() {
                f64::NAN
            } else {
                mean(&scores)
            }
        };
        drop(eval);
        model.gating.theta.scaled_add(-schedule.eta_r, &d_theta);
        model.epoch = epoch;

        let record = TrainRecord {
            epoch,
            stage,
            expert_loss: breakdown.expert_loss,
            router_loss: Some(breakdown.router_loss),
            routed_counts: routed_counts(&routes, model.num_experts()),
            mean_margin: report.mean_margin(),
            margins: report.margins,
            mean_pvv,
            theta_sum_inf: theta_sum_inf(&model.gating.theta),
        };
        observer(&record, &model);
        records.push(record);
        if is_checkpoint(schedule, epoch) {
            checkpoints.push(Checkpoint {
                epoch,
                stage,
                model: model.clone(),
            });
        }
    }

    Ok(Trajectory {
        records,
        model,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::signal_space::SignalDictionary;

    fn small() -> (Corpus, ModelState) {
        let dict = SignalDictionary::build(8, 2, &mut seeded(0)).unwrap();
        let corpus = Corpus::build(&dict, 4, 0.05, 2, 1).unwrap();
        let model = ModelState::init(8, 3, 0.1, &mut seeded(2)).unwrap();
        (corpus, model)
    }

    fn schedule() -> StageSchedule {
        StageSchedule {
            t1: 4,
            t2: 8,
            t_total: 12,
            ..StageSchedule::default()
        }
    }

    #[test]
    fn rejects_bad_schedules() {
        let (corpus, model) = small();
        for (t1, t2, t) in [(0, 2, 3), (2, 2, 3), (3, 2, 4), (1, 2, 2)] {
            let s = StageSchedule {
                t1,
                t2,
                t_total: t,
                ..StageSchedule::default()
            };
            assert!(matches!(
                train(model.clone(), &corpus, &s, 0),
                Err(Error::InvalidSchedule(_))
            ));
        }
        let s = StageSchedule {
            eta: 0.0,
            ..schedule()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let (corpus, _) = small();
        let model = ModelState::init(9, 3, 0.1, &mut seeded(2)).unwrap();
        assert!(matches!(
            train(model, &corpus, &schedule(), 0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn single_expert_stage_one_step_is_eta() {
        let (corpus, _) = small();
        let model = ModelState::init(8, 1, 0.1, &mut seeded(2)).unwrap();
        let mut prev = model.experts[0].w.clone();
        let s = schedule();
        train_routed(model, &corpus, &s, 0, ForwardKind::Attention, |r, m| {
            if r.stage == Stage::I {
                let step = &m.experts[0].w - &prev;
                assert!((step.dot(&step).sqrt() - s.eta).abs() <= 1e-10);
            }
            prev = m.experts[0].w.clone();
        })
        .unwrap();
    }

    #[test]
    fn records_and_checkpoints() {
        let (corpus, model) = small();
        let s = schedule();
        let traj = train(model, &corpus, &s, 0).unwrap();
        assert_eq!(traj.records.len(), 12);
        let stages: Vec<Stage> = traj.records.iter().map(|r| r.stage).collect();
        assert_eq!(stages[3], Stage::I);
        assert_eq!(stages[4], Stage::II);
        assert_eq!(stages[8], Stage::III);
        let epochs: Vec<usize> = traj.checkpoints.iter().map(|c| c.epoch).collect();
        assert_eq!(epochs, vec![4, 8, 12]);
        assert_eq!(traj.checkpoint(12), Some(&traj.model));
        for r in &traj.records {
            assert_eq!(r.routed_counts.iter().sum::<usize>(), corpus.len());
            assert!(r.theta_sum_inf <= 1e-7);
        }
    }
}
