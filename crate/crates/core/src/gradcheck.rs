//! Closed-form gradients against central differences on random small
//! instances with frozen routes.

use std::fmt;

use ndarray::{Array, Dimension};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::datagen::{draw_sample, Corpus};
use crate::error::Result;
use crate::loss_grad::{finite_diff_oracle, Evaluation};
use crate::model::ModelState;
use crate::rng::{stream, Rng, Stream};
use crate::signal_space::SignalDictionary;

pub const REL_TOL: f64 = 1e-5;
pub const ABS_FLOOR: f64 = 1e-9;
pub const FD_STEP: f64 = 1e-5;
pub const SIGNIFICANT: f64 = 1e-4;

/// One parameter block of one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckRow {
    pub instance: usize,
    pub dim: usize,
    pub num_tokens: usize,
    pub num_experts: usize,
    pub num_samples: usize,
    pub block: String,
    pub entries: usize,
    pub max_abs_err: f64,
    /// Largest relative error among entries whose absolute error exceeds
    /// the floor; zero when all entries are within it.
    pub max_rel_err: f64,
    /// Relative error over entries with magnitude at least `SIGNIFICANT`.
    pub max_rel_significant: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn max_rel_significant(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_significant).fold(0.0, f64::max)
    }

    pub fn summary_line(&self) -> String {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let cmp = if self.passed() { "≤" } else { ">" };
        format!(
            "{verdict} max_rel_err {cmp} {REL_TOL:e} ({} blocks, largest relative error on entries ≥ {SIGNIFICANT:e}: {:.3e})",
            self.rows.len(),
            self.max_rel_significant()
        )
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>4} {:>3} {:>3} {:>3} {:>3} {:<10} {:>7} {:>12} {:>12} {:>12} result",
            "inst", "d", "L", "M", "K", "block", "entries", "max_abs", "max_rel", "rel_signif"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>4} {:>3} {:>3} {:>3} {:>3} {:<10} {:>7} {:>12.3e} {:>12.3e} {:>12.3e} {}",
                r.instance,
                r.dim,
                r.num_tokens,
                r.num_experts,
                r.num_samples,
                r.block,
                r.entries,
                r.max_abs_err,
                r.max_rel_err,
                r.max_rel_significant,
                if r.passed { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "{}", self.summary_line())
    }
}

/// Entry passes when `|a − b| ≤ ABS_FLOOR` or `|a − b| ≤ REL_TOL·max(|a|, |b|)`.
pub fn compare<D: Dimension>(analytic: &Array<f64, D>, numeric: &Array<f64, D>) -> Comparison {
    let mut c = Comparison {
        max_abs: 0.0,
        max_rel: 0.0,
        max_rel_significant: 0.0,
        passed: true,
    };
    for (a, b) in analytic.iter().zip(numeric.iter()) {
        let diff = (a - b).abs();
        let scale = a.abs().max(b.abs());
        c.max_abs = c.max_abs.max(diff);
        if scale >= SIGNIFICANT {
            c.max_rel_significant = c.max_rel_significant.max(diff / scale);
        }
        if diff > ABS_FLOOR {
            let rel = diff / scale;
            c.max_rel = c.max_rel.max(rel);
            c.passed &= rel <= REL_TOL;
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub max_abs: f64,
    /// Over entries outside the absolute floor.
    pub max_rel: f64,
    pub max_rel_significant: f64,
    pub passed: bool,
}

/// A random instance: small dictionary, `K` unstratified samples, random
/// gating and expert parameters of unit scale, random frozen routes.
pub struct Instance {
    pub model: ModelState,
    pub corpus: Corpus,
    pub routes: Vec<usize>,
}

impl Instance {
    pub fn random(rng: &mut Rng) -> Result<Self> {
        let dim = rng.random_range(4..=8);
        let num_classes = rng.random_range(2..=dim / 2);
        let num_tokens = rng.random_range(3..=5);
        let num_experts = rng.random_range(1..=4);
        let num_samples = rng.random_range(4..=16);
        let dict = SignalDictionary::build(dim, num_classes, rng)?;
        let samples = (0..num_samples)
            .map(|_| draw_sample(&dict, num_tokens, 0.3, rng))
            .collect::<Result<Vec<_>>>()?;
        let corpus = Corpus {
            samples,
            dictionary: dict,
            seed: 0,
            samples_per_type: 0,
        };
        let mut model = ModelState::init(dim, num_experts, 1.0, rng)?;
        model.gating.theta.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
        let routes = (0..num_samples).map(|_| rng.random_range(0..num_experts)).collect();
        Ok(Self { model, corpus, routes })
    }

    fn row(&self, instance: usize, block: String, entries: usize, cmp: Comparison) -> GradcheckRow {
        GradcheckRow {
            instance,
            dim: self.model.dim(),
            num_tokens: self.corpus.num_tokens(),
            num_experts: self.model.num_experts(),
            num_samples: self.corpus.len(),
            block,
            entries,
            max_abs_err: cmp.max_abs,
            max_rel_err: cmp.max_rel,
            max_rel_significant: cmp.max_rel_significant,
            passed: cmp.passed,
        }
    }

    /// Checks the gating block and every expert's `W` and `W_KQ`.
    pub fn check(&self, instance: usize) -> Result<Vec<GradcheckRow>> {
        let eval = Evaluation::new(&self.model, &self.corpus, &self.routes)?;
        let grads = eval.gradients();
        drop(eval);
        let mut rows = Vec::new();

        let mut probe = self.model.clone();
        let numeric = finite_diff_oracle(&self.model.gating.theta, FD_STEP, |theta| {
            probe.gating.theta.assign(theta);
            Evaluation::new(&probe, &self.corpus, &self.routes)
                .map(|e| e.router_loss())
                .unwrap_or(f64::NAN)
        });
        rows.push(self.row(instance, "theta".into(), numeric.len(), compare(&grads.d_theta, &numeric)));

        for i in 0..self.model.num_experts() {
            let mut probe = self.model.clone();
            let numeric = finite_diff_oracle(&self.model.experts[i].w, FD_STEP, |w| {
                probe.experts[i].w.assign(w);
                Evaluation::new(&probe, &self.corpus, &self.routes)
                    .map(|e| e.expert_loss().expert_loss)
                    .unwrap_or(f64::NAN)
            });
            rows.push(self.row(instance, format!("w[{i}]"), numeric.len(), compare(&grads.d_w[i], &numeric)));

            let mut probe = self.model.clone();
            let numeric = finite_diff_oracle(&self.model.experts[i].w_kq, FD_STEP, |a| {
                probe.experts[i].w_kq.assign(a);
                Evaluation::new(&probe, &self.corpus, &self.routes)
                    .map(|e| e.expert_loss().expert_loss)
                    .unwrap_or(f64::NAN)
            });
            rows.push(self.row(
                instance,
                format!("w_kq[{i}]"),
                numeric.len(),
                compare(&grads.d_wkq[i], &numeric),
            ));
        }
        Ok(rows)
    }
}

pub fn run_gradcheck(seed: u64, instances: usize) -> Result<GradcheckReport> {
    let mut rng = stream(seed, Stream::GradCheck);
    let mut rows = Vec::new();
    for k in 0..instances {
        rows.extend(Instance::random(&mut rng)?.check(k)?);
    }
    Ok(GradcheckReport { rows })
}
