//! Router and expert losses with their closed-form gradients, plus a
//! central-difference oracle.
//!
//! Routing decisions are inputs here: gradients flow through the gating
//! probabilities and the expert outputs, never through the argmax.

use ndarray::{Array, Array1, Array2, Axis, Dimension};
use rayon::prelude::*;

use crate::datagen::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::model::{expert_trace, softmax_gate_probs, token_sum_trace, ExpertTrace, ModelState};

/// `ℓ(z) = log(1 + e^{−z})`, evaluated without overflow.
pub fn logistic_loss(z: f64) -> f64 {
    (-z).max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `ℓ'(z) = −1 / (1 + e^{z})`.
pub fn logistic_loss_grad(z: f64) -> f64 {
    -1.0 / (1.0 + z.exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub router_loss: f64,
    pub expert_loss: f64,
    /// Mean expert loss over the samples routed to each expert; `None` when
    /// nothing was routed there.
    pub per_expert_loss: Vec<Option<f64>>,
    /// `y·f` per sample.
    pub margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_theta: Array2<f64>,
    pub d_w: Vec<Array1<f64>>,
    pub d_wkq: Vec<Array2<f64>>,
}

/// `∂f/∂W` for one head: `X Σ_l p_l`.
pub(crate) fn head_grad_w(trace: &ExpertTrace, sample: &Sample) -> Array1<f64> {
    sample.tokens.dot(&trace.mass)
}

/// `∂f/∂W_KQ` for one head: `Σ_l X [diag(p_l) − p_l p_lᵀ] Xᵀ W X_lᵀ`.
pub(crate) fn head_grad_wkq(trace: &ExpertTrace, sample: &Sample) -> Array2<f64> {
    let p = &trace.attention;
    let u = &trace.values;
    let mut jac_u = Array2::<f64>::zeros(p.dim());
    for (l, col) in p.columns().into_iter().enumerate() {
        let mean = col.dot(u);
        for h in 0..u.len() {
            jac_u[(h, l)] = col[h] * (u[h] - mean);
        }
    }
    sample.tokens.dot(&jac_u).dot(&sample.tokens.t())
}

/// Which forward pass the experts use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForwardKind {
    /// Softmax attention with `W_KQ`.
    #[default]
    Attention,
    /// Plain token-sum head; `W_KQ` is ignored.
    TokenSum,
}

/// Forward quantities for a corpus under frozen routing decisions.
pub struct Evaluation<'a> {
    corpus: &'a Corpus,
    model: &'a ModelState,
    routes: Vec<usize>,
    traces: Vec<ExpertTrace>,
    gate_probs: Vec<Array1<f64>>,
}

impl<'a> Evaluation<'a> {
    /// Gate probabilities are recomputed from `model.gating`, so perturbing
    /// `Θ` moves `π` while `routes` stays fixed.
    pub fn new(model: &'a ModelState, corpus: &'a Corpus, routes: &[usize]) -> Result<Self> {
        Self::with_forward(model, corpus, routes, ForwardKind::Attention)
    }

    pub fn with_forward(
        model: &'a ModelState,
        corpus: &'a Corpus,
        routes: &[usize],
        forward: ForwardKind,
    ) -> Result<Self> {
        if routes.len() != corpus.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} routes for {} samples",
                routes.len(),
                corpus.len()
            )));
        }
        if let Some(&bad) = routes.iter().find(|&&m| m >= model.num_experts()) {
            return Err(Error::InvalidArgument(format!(
                "route to expert {bad} but model has {}",
                model.num_experts()
            )));
        }
        let evaluated: Result<Vec<(ExpertTrace, Array1<f64>)>> = corpus
            .samples
            .par_iter()
            .zip(routes.par_iter())
            .map(|(sample, &m)| {
                let trace = match forward {
                    ForwardKind::Attention => expert_trace(&model.experts[m], sample)?,
                    ForwardKind::TokenSum => token_sum_trace(&model.experts[m].w, sample)?,
                };
                let h = crate::model::gate_outputs(&model.gating, sample)?;
                Ok((trace, softmax_gate_probs(&h)))
            })
            .collect();
        let (traces, gate_probs) = evaluated?.into_iter().unzip();
        Ok(Self {
            corpus,
            model,
            routes: routes.to_vec(),
            traces,
            gate_probs,
        })
    }

    pub fn routes(&self) -> &[usize] {
        &self.routes
    }

    pub fn traces(&self) -> &[ExpertTrace] {
        &self.traces
    }

    pub fn outputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.traces.iter().map(|t| t.output)
    }

    fn k(&self) -> f64 {
        self.corpus.len() as f64
    }

    fn selected_prob(&self, k: usize) -> f64 {
        self.gate_probs[k][self.routes[k]]
    }

    /// `(1/K) Σ_k ℓ(y_k f_k π_{m_k})`.
    pub fn router_loss(&self) -> f64 {
        let total: f64 = self
            .corpus
            .samples
            .iter()
            .enumerate()
            .map(|(k, s)| logistic_loss(s.y() * self.traces[k].output * self.selected_prob(k)))
            .sum();
        total / self.k()
    }

    pub fn expert_loss(&self) -> LossBreakdown {
        let m = self.model.num_experts();
        let margins: Vec<f64> = self
            .corpus
            .samples
            .iter()
            .zip(&self.traces)
            .map(|(s, t)| s.y() * t.output)
            .collect();
        let mut sums = vec![0.0; m];
        let mut counts = vec![0usize; m];
        let mut total = 0.0;
        for (&z, &r) in margins.iter().zip(&self.routes) {
            let l = logistic_loss(z);
            total += l;
            sums[r] += l;
            counts[r] += 1;
        }
        LossBreakdown {
            router_loss: self.router_loss(),
            expert_loss: total / self.k(),
            per_expert_loss: sums
                .iter()
                .zip(&counts)
                .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
                .collect(),
            margins,
        }
    }

    /// `∇_{θ^(i)} L^r = (1/K) Σ_k y f ℓ'(y f π_m) π_m (1{i=m} − π_i) Σ_l X_l`.
    pub fn grad_theta(&self) -> Array2<f64> {
        let m = self.model.num_experts();
        let mut grad = Array2::<f64>::zeros((self.model.dim(), m));
        for (k, s) in self.corpus.samples.iter().enumerate() {
            let yf = s.y() * self.traces[k].output;
            let pm = self.selected_prob(k);
            let coef = yf * logistic_loss_grad(yf * pm) * pm;
            if coef == 0.0 {
                continue;
            }
            let xsum = s.token_sum();
            let probs = &self.gate_probs[k];
            for i in 0..m {
                let indicator = if i == self.routes[k] { 1.0 } else { 0.0 };
                grad.column_mut(i)
                    .scaled_add(coef * (indicator - probs[i]), &xsum);
            }
        }
        grad.mapv_inplace(|x| x / self.k());
        grad
    }

    fn expert_coef(&self, k: usize) -> f64 {
        let s = &self.corpus.samples[k];
        logistic_loss_grad(s.y() * self.traces[k].output) * s.y()
    }

    /// Sample indices routed to `expert`, in corpus order.
    fn routed_to(&self, expert: usize) -> impl Iterator<Item = usize> + '_ {
        self.routes
            .iter()
            .enumerate()
            .filter(move |&(_, &r)| r == expert)
            .map(|(k, _)| k)
    }

    /// `∇_{W^(i)} L^e`, summed over samples routed to `i`, scaled by `1/K`.
    pub fn grad_w(&self) -> Vec<Array1<f64>> {
        (0..self.model.num_experts())
            .into_par_iter()
            .map(|i| {
                let mut g = Array1::<f64>::zeros(self.model.dim());
                for k in self.routed_to(i) {
                    let dfdw = head_grad_w(&self.traces[k], &self.corpus.samples[k]);
                    g.scaled_add(self.expert_coef(k), &dfdw);
                }
                g / self.k()
            })
            .collect()
    }

    /// `∇_{W_KQ^(i)} L^e`, summed over samples routed to `i`, scaled by `1/K`.
    pub fn grad_wkq(&self) -> Vec<Array2<f64>> {
        let d = self.model.dim();
        (0..self.model.num_experts())
            .into_par_iter()
            .map(|i| {
                let mut g = Array2::<f64>::zeros((d, d));
                for k in self.routed_to(i) {
                    let dfda = head_grad_wkq(&self.traces[k], &self.corpus.samples[k]);
                    g.scaled_add(self.expert_coef(k), &dfda);
                }
                g / self.k()
            })
            .collect()
    }

    pub fn gradients(&self) -> GradientSet {
        GradientSet {
            d_theta: self.grad_theta(),
            d_w: self.grad_w(),
            d_wkq: self.grad_wkq(),
        }
    }

    /// Routed sample count per expert.
    pub fn routed_counts(&self) -> Vec<usize> {
        routed_counts(&self.routes, self.model.num_experts())
    }
}

pub fn routed_counts(routes: &[usize], num_experts: usize) -> Vec<usize> {
    let mut counts = vec![0; num_experts];
    for &r in routes {
        counts[r] += 1;
    }
    counts
}

pub fn router_loss(model: &ModelState, corpus: &Corpus, routes: &[usize]) -> Result<f64> {
    Ok(Evaluation::new(model, corpus, routes)?.router_loss())
}

pub fn expert_loss(model: &ModelState, corpus: &Corpus, routes: &[usize]) -> Result<LossBreakdown> {
    Ok(Evaluation::new(model, corpus, routes)?.expert_loss())
}

pub fn grad_theta(model: &ModelState, corpus: &Corpus, routes: &[usize]) -> Result<Array2<f64>> {
    Ok(Evaluation::new(model, corpus, routes)?.grad_theta())
}

pub fn grad_w(model: &ModelState, corpus: &Corpus, routes: &[usize]) -> Result<Vec<Array1<f64>>> {
    Ok(Evaluation::new(model, corpus, routes)?.grad_w())
}

pub fn grad_wkq(model: &ModelState, corpus: &Corpus, routes: &[usize]) -> Result<Vec<Array2<f64>>> {
    Ok(Evaluation::new(model, corpus, routes)?.grad_wkq())
}

/// Central differences `(L(p + h e) − L(p − h e)) / 2h`, entry by entry.
pub fn finite_diff_oracle<D, F>(block: &Array<f64, D>, step: f64, mut loss: F) -> Array<f64, D>
where
    D: Dimension,
    F: FnMut(&Array<f64, D>) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = block.as_standard_layout().into_owned();
    let mut grad = Array::<f64, D>::zeros(block.raw_dim());
    for i in 0..probe.len() {
        let orig = probe.as_slice().expect("standard layout")[i];
        probe.as_slice_mut().expect("standard layout")[i] = orig + step;
        let up = loss(&probe);
        probe.as_slice_mut().expect("standard layout")[i] = orig - step;
        let down = loss(&probe);
        probe.as_slice_mut().expect("standard layout")[i] = orig;
        grad.as_slice_mut().expect("standard layout")[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// Sum of gradient columns; zero by the softmax identity `Σ_i π_i = 1`.
pub fn theta_column_sum(d_theta: &Array2<f64>) -> Array1<f64> {
    d_theta.sum_axis(Axis(1))
}
