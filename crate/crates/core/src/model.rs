//! Mixture-of-Transformers parameters, gating, top-1 routing and the
//! merged-parameter expert forward pass.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Linear gating network `Θ ∈ R^{d×M}`; column `i` scores expert `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingParams {
    #[serde(with = "crate::serde_arrays::matrix")]
    pub theta: Array2<f64>,
}

impl GatingParams {
    pub fn zeros(dim: usize, num_experts: usize) -> Self {
        Self {
            theta: Array2::zeros((dim, num_experts)),
        }
    }

    pub fn num_experts(&self) -> usize {
        self.theta.ncols()
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    /// `Σ_i θ^(i)`, which stays zero under router gradient descent from zero.
    pub fn column_sum(&self) -> Array1<f64> {
        self.theta.sum_axis(Axis(1))
    }
}

/// One transformer expert: merged value/FFN head `W` and merged key-query
/// matrix `W_KQ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams {
    #[serde(with = "crate::serde_arrays::vector")]
    pub w: Array1<f64>,
    #[serde(with = "crate::serde_arrays::matrix")]
    pub w_kq: Array2<f64>,
}

impl ExpertParams {
    /// Entries i.i.d. `N(0, σ₀²/d)`; `W` is drawn before `W_KQ`.
    pub fn init(dim: usize, init_std: f64, rng: &mut Rng) -> Self {
        let scale = init_std / (dim as f64).sqrt();
        let mut draw = || {
            let z: f64 = rng.sample(StandardNormal);
            scale * z
        };
        let w = Array1::from_shape_simple_fn(dim, &mut draw);
        let w_kq = Array2::from_shape_simple_fn((dim, dim), &mut draw);
        Self { w, w_kq }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub gating: GatingParams,
    pub experts: Vec<ExpertParams>,
    pub epoch: usize,
}

impl ModelState {
    /// Zero gating, Gaussian experts drawn in expert order from `rng`.
    pub fn init(dim: usize, num_experts: usize, init_std: f64, rng: &mut Rng) -> Result<Self> {
        if num_experts == 0 {
            return Err(Error::InvalidArgument("need at least one expert".into()));
        }
        let experts = (0..num_experts)
            .map(|_| ExpertParams::init(dim, init_std, rng))
            .collect();
        Ok(Self {
            gating: GatingParams::zeros(dim, num_experts),
            experts,
            epoch: 0,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn dim(&self) -> usize {
        self.gating.dim()
    }
}

/// Result of routing one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingOutcome {
    /// Zero-based index of the selected expert.
    pub selected: usize,
    pub gate_outputs: Array1<f64>,
    pub gate_probs: Array1<f64>,
    pub noise: Array1<f64>,
}

/// `h = Θᵀ Σ_l X_l`.
pub fn gate_outputs(gating: &GatingParams, sample: &Sample) -> Result<Array1<f64>> {
    if gating.dim() != sample.dim() {
        return Err(Error::DimensionMismatch(format!(
            "gating has dimension {} but sample has {}",
            gating.dim(),
            sample.dim()
        )));
    }
    Ok(gating.theta.t().dot(&sample.token_sum()))
}

/// Max-shifted softmax.
pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|x| (x - max).exp());
    let total = out.sum();
    out.mapv_inplace(|x| x / total);
    out
}

/// Softmax gating probabilities `π`.
pub fn softmax_gate_probs(gate_outputs: &Array1<f64>) -> Array1<f64> {
    softmax(gate_outputs.view())
}

/// `argmax_i (h_i + r_i)`, lowest index on ties.
pub fn select_expert(gate_outputs: &Array1<f64>, noise: &Array1<f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, (h, r)) in gate_outputs.iter().zip(noise.iter()).enumerate() {
        let score = h + r;
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

/// Noisy top-1 routing with `r_i ~ U[0, noise_scale]`.
pub fn route(
    gating: &GatingParams,
    sample: &Sample,
    rng: &mut Rng,
    noise_scale: f64,
) -> Result<RoutingOutcome> {
    if noise_scale.is_nan() || noise_scale < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "routing noise scale must be nonnegative, got {noise_scale}"
        )));
    }
    let gate_outputs = gate_outputs(gating, sample)?;
    let noise = if noise_scale > 0.0 {
        Array1::from_shape_simple_fn(gating.num_experts(), || {
            rng.random_range(0.0..=noise_scale)
        })
    } else {
        Array1::zeros(gating.num_experts())
    };
    Ok(RoutingOutcome {
        selected: select_expert(&gate_outputs, &noise),
        gate_probs: softmax_gate_probs(&gate_outputs),
        gate_outputs,
        noise,
    })
}

/// Intermediate values of one expert forward pass.
#[derive(Debug, Clone)]
pub struct ExpertTrace {
    /// `L × L`; column `l` is `p_l = softmax(Xᵀ W_KQ X_l)`.
    pub attention: Array2<f64>,
    /// `Xᵀ W`, the per-token head values.
    pub values: Array1<f64>,
    /// `Σ_l p_l`, the total attention each token receives.
    pub mass: Array1<f64>,
    pub output: f64,
}

fn check_expert_dims(expert: &ExpertParams, sample: &Sample) -> Result<()> {
    let d = sample.dim();
    if expert.w.len() != d || expert.w_kq.dim() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "expert has dimension {} (W_KQ {:?}) but sample has {}",
            expert.w.len(),
            expert.w_kq.dim(),
            d
        )));
    }
    Ok(())
}

pub fn expert_trace(expert: &ExpertParams, sample: &Sample) -> Result<ExpertTrace> {
    check_expert_dims(expert, sample)?;
    let x = &sample.tokens;
    let keyed = expert.w_kq.dot(x);
    let logits = x.t().dot(&keyed);
    let mut attention = Array2::zeros(logits.dim());
    for (l, col) in logits.columns().into_iter().enumerate() {
        attention.column_mut(l).assign(&softmax(col));
    }
    let values = x.t().dot(&expert.w);
    let mass = attention.sum_axis(Axis(1));
    let output = values.dot(&mass);
    Ok(ExpertTrace {
        attention,
        values,
        mass,
        output,
    })
}

/// Attention-absent head `f = Wᵀ Σ_l X_l`, reported with uniform attention
/// and unit mass per token.
pub fn token_sum_trace(w: &Array1<f64>, sample: &Sample) -> Result<ExpertTrace> {
    if w.len() != sample.dim() {
        return Err(Error::DimensionMismatch(format!(
            "head has dimension {} but sample has {}",
            w.len(),
            sample.dim()
        )));
    }
    let l = sample.num_tokens();
    let values = sample.tokens.t().dot(w);
    let output = values.sum();
    Ok(ExpertTrace {
        attention: Array2::from_elem((l, l), 1.0 / l as f64),
        values,
        mass: Array1::ones(l),
        output,
    })
}

/// `f = Σ_l Wᵀ X softmax(Xᵀ W_KQ X_l)`.
pub fn expert_forward(expert: &ExpertParams, sample: &Sample) -> Result<f64> {
    Ok(expert_trace(expert, sample)?.output)
}

/// Entry `position` of `softmax(Xᵀ W_KQ probe)`.
pub fn attention_score(
    expert: &ExpertParams,
    sample: &Sample,
    probe: &Array1<f64>,
    position: usize,
) -> Result<f64> {
    check_expert_dims(expert, sample)?;
    if position >= sample.num_tokens() {
        return Err(Error::PositionOutOfRange {
            pos: position,
            len: sample.num_tokens(),
        });
    }
    if probe.len() != sample.dim() {
        return Err(Error::DimensionMismatch(format!(
            "probe has length {} but sample dimension is {}",
            probe.len(),
            sample.dim()
        )));
    }
    let logits = sample.tokens.t().dot(&expert.w_kq.dot(probe));
    Ok(softmax(logits.view())[position])
}
