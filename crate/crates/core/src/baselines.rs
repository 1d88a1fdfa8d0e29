//! Comparison architectures: a gate-free multi-head transformer trained on
//! every sample, and a routed mixture whose experts are plain token-sum heads.

use ndarray::{Array1, Array2};
use rand_distr::StandardNormal;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::loss_grad::{head_grad_w, head_grad_wkq, logistic_loss, logistic_loss_grad, ForwardKind};
use crate::metrics::specialization_report_for_heads;
use crate::model::{expert_trace, ExpertParams, ExpertTrace, GatingParams, ModelState};
use crate::rng::Rng;
use crate::trainer::{
    check_corpus, is_checkpoint, mean, normalized_step, train_routed, Checkpoint, Stage, StageSchedule,
    TrainRecord, Trajectory,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadParams {
    pub heads: Vec<ExpertParams>,
}

impl MultiHeadParams {
    pub fn init(dim: usize, num_heads: usize, init_std: f64, rng: &mut Rng) -> Result<Self> {
        if num_heads == 0 {
            return Err(Error::InvalidArgument("need at least one head".into()));
        }
        Ok(Self {
            heads: (0..num_heads).map(|_| ExpertParams::init(dim, init_std, rng)).collect(),
        })
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn dim(&self) -> usize {
        self.heads[0].dim()
    }
}

/// `f = Σ_h f_h`.
pub fn multihead_forward(params: &MultiHeadParams, sample: &Sample) -> Result<f64> {
    params
        .heads
        .iter()
        .map(|h| expert_trace(h, sample).map(|t| t.output))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeFfnParams {
    pub gating: GatingParams,
    #[serde(with = "crate::serde_arrays::vectors")]
    pub heads: Vec<Array1<f64>>,
}

impl MoeFfnParams {
    /// Zero gating and heads with entries i.i.d. `N(0, σ₀²/d)`.
    pub fn init(dim: usize, num_experts: usize, init_std: f64, rng: &mut Rng) -> Result<Self> {
        if num_experts == 0 {
            return Err(Error::InvalidArgument("need at least one expert".into()));
        }
        let scale = init_std / (dim as f64).sqrt();
        let heads = (0..num_experts)
            .map(|_| {
                Array1::from_shape_simple_fn(dim, || {
                    let z: f64 = rng.sample(StandardNormal);
                    scale * z
                })
            })
            .collect();
        Ok(Self {
            gating: GatingParams::zeros(dim, num_experts),
            heads,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.heads.len()
    }

    fn into_model(self) -> ModelState {
        ModelState {
            gating: self.gating,
            experts: self
                .heads
                .into_iter()
                .map(|w| ExpertParams {
                    w,
                    w_kq: Array2::zeros((0, 0)),
                })
                .collect(),
            epoch: 0,
        }
    }

    fn from_model(model: ModelState) -> Self {
        Self {
            gating: model.gating,
            heads: model.experts.into_iter().map(|e| e.w).collect(),
        }
    }
}

/// `f = Wᵀ Σ_l X_l`.
pub fn moe_ffn_forward(head: &Array1<f64>, sample: &Sample) -> Result<f64> {
    if head.len() != sample.dim() {
        return Err(Error::DimensionMismatch(format!(
            "head has dimension {} but sample has {}",
            head.len(),
            sample.dim()
        )));
    }
    Ok(head.dot(&sample.token_sum()))
}

/// Routed token-sum mixture: normalized then plain GD on the heads, no
/// expert update during the attention stage, router stepped every epoch.
pub fn train_moe_ffn(
    params: MoeFfnParams,
    corpus: &Corpus,
    schedule: &StageSchedule,
    seed: u64,
) -> Result<Trajectory<MoeFfnParams>> {
    let traj = train_routed(
        params.into_model(),
        corpus,
        schedule,
        seed,
        ForwardKind::TokenSum,
        |_, _| {},
    )?;
    Ok(traj.map(MoeFfnParams::from_model))
}

/// Per-sample head traces and summed outputs.
fn multihead_traces(params: &MultiHeadParams, corpus: &Corpus) -> Result<Vec<Vec<ExpertTrace>>> {
    corpus
        .samples
        .par_iter()
        .map(|s| params.heads.iter().map(|h| expert_trace(h, s)).collect())
        .collect()
}

fn multihead_coefs(corpus: &Corpus, traces: &[Vec<ExpertTrace>]) -> (f64, Vec<f64>, Vec<f64>) {
    let margins: Vec<f64> = corpus
        .samples
        .iter()
        .zip(traces)
        .map(|(s, ts)| s.y() * ts.iter().map(|t| t.output).sum::<f64>())
        .collect();
    let loss = mean(&margins.iter().map(|&z| logistic_loss(z)).collect::<Vec<_>>());
    let coefs = corpus
        .samples
        .iter()
        .zip(&margins)
        .map(|(s, &z)| logistic_loss_grad(z) * s.y())
        .collect();
    (loss, margins, coefs)
}

/// Expert loss of the multi-head model over the whole corpus.
pub fn multihead_loss(params: &MultiHeadParams, corpus: &Corpus) -> Result<f64> {
    let traces = multihead_traces(params, corpus)?;
    Ok(multihead_coefs(corpus, &traces).0)
}

/// Per-head `W` and `W_KQ` gradients.
pub type HeadGradients = (Vec<Array1<f64>>, Vec<Array2<f64>>);

/// Gradients of the multi-head loss with respect to every `W_h` and
/// `W_KQ,h`, each a sum over the full corpus scaled by `1/K`.
pub fn multihead_gradients(
    params: &MultiHeadParams,
    corpus: &Corpus,
) -> Result<HeadGradients> {
    let traces = multihead_traces(params, corpus)?;
    let (_, _, coefs) = multihead_coefs(corpus, &traces);
    Ok((
        grad_heads_w(params, corpus, &traces, &coefs),
        grad_heads_wkq(params, corpus, &traces, &coefs),
    ))
}

fn grad_heads_w(
    params: &MultiHeadParams,
    corpus: &Corpus,
    traces: &[Vec<ExpertTrace>],
    coefs: &[f64],
) -> Vec<Array1<f64>> {
    let k = corpus.len() as f64;
    (0..params.num_heads())
        .into_par_iter()
        .map(|h| {
            let mut g = Array1::<f64>::zeros(params.dim());
            for (idx, s) in corpus.samples.iter().enumerate() {
                g.scaled_add(coefs[idx], &head_grad_w(&traces[idx][h], s));
            }
            g / k
        })
        .collect()
}

fn grad_heads_wkq(
    params: &MultiHeadParams,
    corpus: &Corpus,
    traces: &[Vec<ExpertTrace>],
    coefs: &[f64],
) -> Vec<Array2<f64>> {
    let k = corpus.len() as f64;
    let d = params.dim();
    (0..params.num_heads())
        .into_par_iter()
        .map(|h| {
            let mut g = Array2::<f64>::zeros((d, d));
            for (idx, s) in corpus.samples.iter().enumerate() {
                g.scaled_add(coefs[idx], &head_grad_wkq(&traces[idx][h], s));
            }
            g / k
        })
        .collect()
}

/// Gate-free multi-head training on the three-stage schedule; every head
/// sees every sample.
pub fn train_multihead(
    params: MultiHeadParams,
    corpus: &Corpus,
    schedule: &StageSchedule,
) -> Result<Trajectory<MultiHeadParams>> {
    train_multihead_observed(params, corpus, schedule, |_, _| {})
}

pub fn train_multihead_observed<F>(
    mut params: MultiHeadParams,
    corpus: &Corpus,
    schedule: &StageSchedule,
    mut observer: F,
) -> Result<Trajectory<MultiHeadParams>>
where
    F: FnMut(&TrainRecord, &MultiHeadParams),
{
    schedule.validate()?;
    check_corpus(params.dim(), corpus)?;
    let mut records = Vec::with_capacity(schedule.t_total);
    let mut checkpoints = Vec::new();
    let h = params.num_heads();

    for epoch in 1..=schedule.t_total {
        let stage = schedule.stage_of(epoch);
        {
            let traces = multihead_traces(&params, corpus)?;
            let (_, _, coefs) = multihead_coefs(corpus, &traces);
            match stage {
                Stage::I => {
                    let grads = grad_heads_w(&params, corpus, &traces, &coefs);
                    for (head, g) in params.heads.iter_mut().zip(&grads) {
                        normalized_step(&mut head.w, g, schedule.eta);
                    }
                }
                Stage::II => {
                    let grads = grad_heads_wkq(&params, corpus, &traces, &coefs);
                    for (head, g) in params.heads.iter_mut().zip(&grads) {
                        head.w_kq.scaled_add(-schedule.eta_a, g);
                    }
                }
                Stage::III => {
                    let grads = grad_heads_w(&params, corpus, &traces, &coefs);
                    for (head, g) in params.heads.iter_mut().zip(&grads) {
                        head.w.scaled_add(-schedule.eta, g);
                    }
                }
            }
        }

        let traces = multihead_traces(&params, corpus)?;
        let (loss, _, _) = multihead_coefs(corpus, &traces);
        let report = specialization_report_for_heads(params.heads.iter().map(|e| &e.w), &corpus.dictionary);
        let pvv: Vec<f64> = (0..h)
            .flat_map(|head| {
                let class = report.best_class[head];
                corpus
                    .samples
                    .iter()
                    .zip(&traces)
                    .filter(move |(s, _)| s.class_index == class)
                    .map(move |(s, ts)| ts[head].attention[(s.pos_signal, s.pos_signal)])
            })
            .collect();
        let record = TrainRecord {
            epoch,
            stage,
            expert_loss: loss,
            router_loss: None,
            routed_counts: vec![corpus.len(); h],
            mean_margin: report.mean_margin(),
            margins: report.margins,
            mean_pvv: if pvv.is_empty() { f64::NAN } else { mean(&pvv) },
            theta_sum_inf: 0.0,
        };
        observer(&record, &params);
        records.push(record);
        if is_checkpoint(schedule, epoch) {
            checkpoints.push(Checkpoint {
                epoch,
                stage,
                model: params.clone(),
            });
        }
    }

    Ok(Trajectory {
        records,
        model: params,
        checkpoints,
    })
}
