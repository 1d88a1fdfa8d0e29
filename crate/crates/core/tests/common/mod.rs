#![allow(dead_code)]

use mot_core::artifact::sha256_hex;
use mot_core::datagen::Corpus;
use mot_core::rng::seeded;
use mot_core::{ExpertParams, ModelState, SignalDictionary};
use ndarray::{Array1, Array2};

/// Small corpus and model drawn from `seed`.
pub fn small_setup(dim: usize, classes: usize, tokens: usize, experts: usize, seed: u64) -> (Corpus, ModelState) {
    let mut rng = seeded(seed);
    let dict = SignalDictionary::build(dim, classes, &mut rng).unwrap();
    let corpus = Corpus::build(&dict, tokens, 0.2, 1, seed).unwrap();
    let model = ModelState::init(dim, experts, 0.5, &mut rng).unwrap();
    (corpus, model)
}

/// Triple loop over `f = Σ_l Σ_h (Wᵀ X_h) softmax_h(X_hᵀ W_KQ X_l)`.
pub fn naive_forward(expert: &ExpertParams, x: &Array2<f64>) -> f64 {
    let (d, l) = x.dim();
    let mut total = 0.0;
    for q in 0..l {
        let mut logits = vec![0.0; l];
        for (h, logit) in logits.iter_mut().enumerate() {
            for a in 0..d {
                for b in 0..d {
                    *logit += x[(a, h)] * expert.w_kq[(a, b)] * x[(b, q)];
                }
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for h in 0..l {
            let value: f64 = (0..d).map(|a| expert.w[a] * x[(a, h)]).sum();
            total += value * exps[h] / z;
        }
    }
    total
}

pub fn vec_checksum(v: &Array1<f64>) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

pub fn mat_checksum(m: &Array2<f64>) -> String {
    let bytes: Vec<u8> = m.iter().flat_map(|x| x.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

pub fn w_checksum(model: &ModelState) -> String {
    model.experts.iter().map(|e| vec_checksum(&e.w)).collect::<Vec<_>>().join("")
}

pub fn wkq_checksum(model: &ModelState) -> String {
    model.experts.iter().map(|e| mat_checksum(&e.w_kq)).collect::<Vec<_>>().join("")
}
