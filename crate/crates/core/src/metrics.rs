//! Measurements of specialization, routing, attention concentration,
//! signal projections and convergence rate.

use std::ops::RangeInclusive;

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::datagen::Corpus;
use crate::error::{Error, Result};
use crate::model::{expert_trace, route, ModelState};
use crate::rng::Rng;
use crate::signal_space::SignalDictionary;

/// Per-expert best class `n*_i = argmax_n ⟨W^(i), v_n⟩` and the induced
/// partition of experts into specialization sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecializationReport {
    pub best_class: Vec<usize>,
    /// `⟨W, v_{n*}⟩ − max_{n≠n*} ⟨W, v_n⟩`.
    pub margins: Vec<f64>,
    /// `sets[n]` lists the experts with `n*_i = n`.
    pub sets: Vec<Vec<usize>>,
    pub covers_all_classes: bool,
}

impl SpecializationReport {
    pub fn mean_margin(&self) -> f64 {
        if self.margins.is_empty() {
            return 0.0;
        }
        self.margins.iter().sum::<f64>() / self.margins.len() as f64
    }
}

pub fn specialization_report_for_heads<'a, I>(heads: I, dict: &SignalDictionary) -> SpecializationReport
where
    I: IntoIterator<Item = &'a Array1<f64>>,
{
    let n_classes = dict.num_classes;
    let mut best_class = Vec::new();
    let mut margins = Vec::new();
    let mut sets = vec![Vec::new(); n_classes];
    for (i, w) in heads.into_iter().enumerate() {
        let proj: Vec<f64> = dict.cls_signals.iter().map(|v| w.dot(v)).collect();
        let mut best = 0;
        for (n, &p) in proj.iter().enumerate() {
            if p > proj[best] {
                best = n;
            }
        }
        let runner_up = proj
            .iter()
            .enumerate()
            .filter(|&(n, _)| n != best)
            .map(|(_, &p)| p)
            .fold(f64::NEG_INFINITY, f64::max);
        let margin = if runner_up.is_finite() {
            proj[best] - runner_up
        } else {
            proj[best]
        };
        best_class.push(best);
        margins.push(margin);
        sets[best].push(i);
    }
    let covers_all_classes = sets.iter().all(|s| !s.is_empty());
    SpecializationReport {
        best_class,
        margins,
        sets,
        covers_all_classes,
    }
}

pub fn specialization_report(model: &ModelState, dict: &SignalDictionary) -> SpecializationReport {
    specialization_report_for_heads(model.experts.iter().map(|e| &e.w), dict)
}

/// Routes every sample `num_trials` times with fresh noise and returns the
/// `N × M` matrix of routing frequencies, normalized per class.
pub fn routing_histogram(
    model: &ModelState,
    corpus: &Corpus,
    num_trials: usize,
    noise_scale: f64,
    rng: &mut Rng,
) -> Result<Array2<f64>> {
    if num_trials == 0 {
        return Err(Error::InvalidArgument("num_trials must be at least 1".into()));
    }
    let mut hist = Array2::<f64>::zeros((corpus.num_classes(), model.num_experts()));
    for _ in 0..num_trials {
        for s in &corpus.samples {
            let r = route(&model.gating, s, rng, noise_scale)?;
            hist[(s.class_index, r.selected)] += 1.0;
        }
    }
    for mut row in hist.rows_mut() {
        let total = row.sum();
        if total > 0.0 {
            row.mapv_inplace(|x| x / total);
        }
    }
    Ok(hist)
}

/// Fraction of class `n`'s routing mass that lands on `sets[n]`, per class.
pub fn mass_on_sets(hist: &Array2<f64>, report: &SpecializationReport) -> Vec<f64> {
    report
        .sets
        .iter()
        .enumerate()
        .map(|(n, set)| set.iter().map(|&i| hist[(n, i)]).sum())
        .collect()
}

/// Mean attention scores of one expert over probe samples of its best class.
///
/// Query and key vectors are the tokens as they appear in the sample, so the
/// classification signal carries its label sign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionProbeRow {
    pub expert: usize,
    pub class: usize,
    pub samples: usize,
    /// Query `y·v_n`, key `y·v_n`.
    pub v_v: f64,
    /// Query `y·v_n`, key `c_n`.
    pub v_c: f64,
    /// Query `c_n`, key `y·v_n`.
    pub c_v: f64,
    /// Query `y·v_n`, mean over noise keys.
    pub v_noise: f64,
}

impl AttentionProbeRow {
    /// Largest score among the non-`(v_n, v_n)` pairs.
    pub fn max_other(&self) -> f64 {
        self.v_c.max(self.c_v).max(self.v_noise)
    }
}

pub fn attention_probe(model: &ModelState, dict: &SignalDictionary, probe: &Corpus) -> Result<Vec<AttentionProbeRow>> {
    let report = specialization_report(model, dict);
    model
        .experts
        .iter()
        .enumerate()
        .map(|(i, expert)| {
            let class = report.best_class[i];
            let mut row = AttentionProbeRow {
                expert: i,
                class,
                samples: 0,
                v_v: 0.0,
                v_c: 0.0,
                c_v: 0.0,
                v_noise: 0.0,
            };
            for s in probe.samples.iter().filter(|s| s.class_index == class) {
                let a = expert_trace(expert, s)?.attention;
                let (l0, l1) = (s.pos_class, s.pos_signal);
                row.v_v += a[(l1, l1)];
                row.v_c += a[(l0, l1)];
                row.c_v += a[(l1, l0)];
                let noise: Vec<usize> = s.noise_positions().collect();
                if !noise.is_empty() {
                    row.v_noise += noise.iter().map(|&h| a[(h, l1)]).sum::<f64>() / noise.len() as f64;
                }
                row.samples += 1;
            }
            if row.samples > 0 {
                let k = row.samples as f64;
                row.v_v /= k;
                row.v_c /= k;
                row.c_v /= k;
                row.v_noise /= k;
            }
            Ok(row)
        })
        .collect()
}

/// `M × 2N` table of `⟨W^(i), μ⟩` for `μ` in `C` then `V`.
pub fn signal_projection_probe(model: &ModelState, dict: &SignalDictionary) -> Array2<f64> {
    let signals: Vec<&Array1<f64>> = dict.all_signals().collect();
    Array2::from_shape_fn((model.num_experts(), signals.len()), |(i, j)| {
        model.experts[i].w.dot(signals[j])
    })
}

/// `⟨W, v_{n*}⟩` divided by the largest other absolute dictionary projection.
pub fn projection_dominance(row: ndarray::ArrayView1<'_, f64>, num_classes: usize, best_class: usize) -> f64 {
    let target = num_classes + best_class;
    let other = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, x)| x.abs())
        .fold(0.0, f64::max);
    row[target] / other
}

/// Least-squares line through `(epoch, ln loss)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `ln loss` against epoch over the inclusive epoch `window`; `losses`
/// are `(epoch, loss)` pairs.
pub fn fit_convergence_rate(losses: &[(usize, f64)], window: RangeInclusive<usize>) -> Result<RateFit> {
    let mut pts = Vec::new();
    for &(epoch, loss) in losses.iter().filter(|(e, _)| window.contains(e)) {
        if loss.is_nan() || loss <= 0.0 {
            return Err(Error::NonPositiveLoss { epoch, value: loss });
        }
        pts.push((epoch as f64, loss.ln()));
    }
    if pts.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit {
        first_epoch: *window.start(),
        last_epoch: *window.end(),
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Corpus;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;

    fn model_with_heads(dict: &SignalDictionary, heads: Vec<Array1<f64>>) -> ModelState {
        let mut m = ModelState::init(dict.dim, heads.len(), 0.0, &mut seeded(0)).unwrap();
        for (e, w) in m.experts.iter_mut().zip(heads) {
            e.w = w;
        }
        m
    }

    #[test]
    fn exact_alignment_and_degenerate_heads() {
        let dict = SignalDictionary::canonical(4);
        let m = model_with_heads(&dict, vec![dict.cls_signal(2).clone(), Array1::zeros(8)]);
        let r = specialization_report(&m, &dict);
        assert_eq!(r.best_class, vec![2, 0]);
        assert_eq!(r.margins, vec![1.0, 0.0]);
        assert_eq!(r.sets, vec![vec![1], vec![], vec![0], vec![]]);
        assert!(!r.covers_all_classes);
    }

    #[test]
    fn projection_table_of_scaled_signal() {
        let dict = SignalDictionary::canonical(3);
        let m = model_with_heads(&dict, vec![dict.cls_signal(1) * 2.0]);
        let t = signal_projection_probe(&m, &dict);
        assert_eq!(t.row(0).to_vec(), vec![0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn pure_noise_routing_is_uniform_and_rows_normalized() {
        let dict = SignalDictionary::build(8, 2, &mut seeded(0)).unwrap();
        let corpus = Corpus::build(&dict, 4, 0.1, 2, 0).unwrap();
        let m = ModelState::init(8, 4, 0.1, &mut seeded(1)).unwrap();
        let h = routing_histogram(&m, &corpus, 500, 1.0, &mut seeded(2)).unwrap();
        for row in h.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
            let per_class = (corpus.len() / 2 * 500) as f64;
            let se = (0.25 * 0.75 / per_class).sqrt();
            for &x in row {
                assert!((x - 0.25).abs() <= 3.0 * se, "{x}");
            }
        }
        assert!(routing_histogram(&m, &corpus, 0, 1.0, &mut seeded(2)).is_err());
    }

    #[test]
    fn zero_key_query_probes_are_uniform() {
        let dict = SignalDictionary::build(12, 2, &mut seeded(0)).unwrap();
        let probe = Corpus::build(&dict, 6, 0.1, 1, 5).unwrap();
        let mut m = ModelState::init(12, 3, 0.1, &mut seeded(1)).unwrap();
        for e in &mut m.experts {
            e.w_kq.fill(0.0);
        }
        for row in attention_probe(&m, &dict, &probe).unwrap() {
            for x in [row.v_v, row.v_c, row.c_v, row.v_noise] {
                assert_abs_diff_eq!(x, 1.0 / 6.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn exponential_fit_is_exact() {
        let losses: Vec<(usize, f64)> = (0..200).map(|t| (t, (-0.1 * t as f64).exp())).collect();
        let fit = fit_convergence_rate(&losses, 0..=199).unwrap();
        assert_abs_diff_eq!(fit.slope, -0.1, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_errors() {
        let losses = vec![(1, 0.5), (2, 0.0), (3, 0.1)];
        assert!(matches!(
            fit_convergence_rate(&losses, 1..=3),
            Err(Error::NonPositiveLoss { epoch: 2, .. })
        ));
        assert!(matches!(fit_convergence_rate(&losses, 10..=20), Err(Error::EmptyWindow)));
    }
}
