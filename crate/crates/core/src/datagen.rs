//! Samples from the N-mixture classification distribution and the stratified
//! training corpus built from it.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, Rng, Stream};
use crate::signal_space::SignalDictionary;

/// One labeled token matrix with its generation metadata.
///
/// Indices are zero-based: `class_index ∈ [0, N)`, positions `∈ [0, L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// `d × L`, column `l` is token `l`.
    #[serde(with = "crate::serde_arrays::matrix")]
    pub tokens: Array2<f64>,
    pub label: i8,
    pub class_index: usize,
    pub distractor_index: usize,
    pub distractor_sign: i8,
    pub pos_class: usize,
    pub pos_signal: usize,
    pub pos_distractor: usize,
    pub noise_std: f64,
}

impl Sample {
    pub fn y(&self) -> f64 {
        f64::from(self.label)
    }

    pub fn dim(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.ncols()
    }

    /// `Σ_l X_l`.
    pub fn token_sum(&self) -> Array1<f64> {
        self.tokens.sum_axis(ndarray::Axis(1))
    }

    /// Positions holding Gaussian noise, in increasing order.
    pub fn noise_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_tokens())
            .filter(move |&l| l != self.pos_class && l != self.pos_signal && l != self.pos_distractor)
    }

    /// Rebuilds the three signal columns from the metadata.
    pub fn expected_signal_columns(&self, dict: &SignalDictionary) -> [Array1<f64>; 3] {
        [
            dict.class_signal(self.class_index).clone(),
            dict.cls_signal(self.class_index) * self.y(),
            dict.cls_signal(self.distractor_index) * f64::from(self.distractor_sign),
        ]
    }
}

fn sign(rng: &mut Rng) -> i8 {
    if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

/// Uniform draw from `[0, len)` with the `excluded` (distinct) values removed.
fn index_excluding(rng: &mut Rng, len: usize, excluded: &[usize]) -> usize {
    let mut sorted = excluded.to_vec();
    sorted.sort_unstable();
    let mut idx = rng.random_range(0..len - excluded.len());
    for &e in &sorted {
        if idx >= e {
            idx += 1;
        }
    }
    idx
}

/// The type of a sample: label, distractor sign, class and distractor class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixtureType {
    pub label: i8,
    pub distractor_sign: i8,
    pub class_index: usize,
    pub distractor_index: usize,
}

fn check_tokens(num_tokens: usize) -> Result<()> {
    if num_tokens < 3 {
        return Err(Error::TooFewTokens(num_tokens));
    }
    Ok(())
}

/// Draws one sample with every choice uniform.
pub fn draw_sample(
    dict: &SignalDictionary,
    num_tokens: usize,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<Sample> {
    check_tokens(num_tokens)?;
    let label = sign(rng);
    let distractor_sign = sign(rng);
    let class_index = rng.random_range(0..dict.num_classes);
    let distractor_index = if dict.num_classes > 1 {
        index_excluding(rng, dict.num_classes, &[class_index])
    } else {
        return Err(Error::InvalidArgument(
            "a distractor class needs at least 2 classes".into(),
        ));
    };
    let ty = MixtureType {
        label,
        distractor_sign,
        class_index,
        distractor_index,
    };
    Ok(draw_typed(dict, num_tokens, noise_std, ty, rng))
}

/// Draws positions and noise for a fixed mixture type.
pub fn draw_typed(
    dict: &SignalDictionary,
    num_tokens: usize,
    noise_std: f64,
    ty: MixtureType,
    rng: &mut Rng,
) -> Sample {
    let d = dict.dim;
    let l0 = rng.random_range(0..num_tokens);
    let l1 = index_excluding(rng, num_tokens, &[l0]);
    let l2 = index_excluding(rng, num_tokens, &[l0, l1]);

    let scale = noise_std / (d as f64).sqrt();
    let mut tokens = Array2::<f64>::zeros((d, num_tokens));
    for l in 0..num_tokens {
        let mut col = tokens.column_mut(l);
        if l == l0 {
            col.assign(dict.class_signal(ty.class_index));
        } else if l == l1 {
            col.assign(&(dict.cls_signal(ty.class_index) * f64::from(ty.label)));
        } else if l == l2 {
            col.assign(&(dict.cls_signal(ty.distractor_index) * f64::from(ty.distractor_sign)));
        } else {
            for x in col.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x = scale * z;
            }
        }
    }
    Sample {
        tokens,
        label: ty.label,
        class_index: ty.class_index,
        distractor_index: ty.distractor_index,
        distractor_sign: ty.distractor_sign,
        pos_class: l0,
        pos_signal: l1,
        pos_distractor: l2,
        noise_std,
    }
}

/// All `4·N·(N−1)` mixture types in a fixed order.
pub fn mixture_types(num_classes: usize) -> Vec<MixtureType> {
    let mut out = Vec::with_capacity(4 * num_classes * num_classes.saturating_sub(1));
    for label in [1i8, -1] {
        for distractor_sign in [1i8, -1] {
            for class_index in 0..num_classes {
                for distractor_index in (0..num_classes).filter(|&m| m != class_index) {
                    out.push(MixtureType {
                        label,
                        distractor_sign,
                        class_index,
                        distractor_index,
                    });
                }
            }
        }
    }
    out
}

/// A fixed, stratified training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub dictionary: SignalDictionary,
    pub seed: u64,
    pub samples_per_type: usize,
}

impl Corpus {
    /// `samples_per_type` samples of every mixture type, shuffled.
    pub fn build(
        dict: &SignalDictionary,
        num_tokens: usize,
        noise_std: f64,
        samples_per_type: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::build_with_stream(dict, num_tokens, noise_std, samples_per_type, seed, Stream::Corpus)
    }

    /// Same law as [`build`](Self::build), drawn from a different substream
    /// (used for held-out probe sets).
    pub fn build_with_stream(
        dict: &SignalDictionary,
        num_tokens: usize,
        noise_std: f64,
        samples_per_type: usize,
        seed: u64,
        stream: Stream,
    ) -> Result<Self> {
        check_tokens(num_tokens)?;
        if samples_per_type == 0 {
            return Err(Error::InvalidArgument("samples_per_type must be positive".into()));
        }
        if dict.num_classes < 2 {
            return Err(Error::InvalidArgument(
                "a distractor class needs at least 2 classes".into(),
            ));
        }
        let mut rng = rng::stream(seed, stream);
        let mut samples = Vec::new();
        for ty in mixture_types(dict.num_classes) {
            for _ in 0..samples_per_type {
                samples.push(draw_typed(dict, num_tokens, noise_std, ty, &mut rng));
            }
        }
        samples.shuffle(&mut rng);
        Ok(Self {
            samples,
            dictionary: dict.clone(),
            seed,
            samples_per_type,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.dictionary.num_classes
    }

    pub fn num_tokens(&self) -> usize {
        self.samples.first().map_or(0, Sample::num_tokens)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.class_index] += 1;
        }
        counts
    }

    /// SHA-256 over every stored number and index, in order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.dictionary.all_signals() {
            for x in v {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        for s in &self.samples {
            for x in &s.tokens {
                h.update(x.to_bits().to_le_bytes());
            }
            for idx in [
                s.class_index,
                s.distractor_index,
                s.pos_class,
                s.pos_signal,
                s.pos_distractor,
            ] {
                h.update((idx as u64).to_le_bytes());
            }
            h.update([s.label as u8, s.distractor_sign as u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn summary(&self) -> CorpusSummary {
        CorpusSummary {
            num_samples: self.len(),
            num_classes: self.num_classes(),
            dim: self.dictionary.dim,
            num_tokens: self.num_tokens(),
            noise_std: self.samples.first().map_or(0.0, |s| s.noise_std),
            samples_per_type: self.samples_per_type,
            seed: self.seed,
            class_counts: self.class_counts(),
            positive_labels: self.samples.iter().filter(|s| s.label > 0).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub num_samples: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub num_tokens: usize,
    pub noise_std: f64,
    pub samples_per_type: usize,
    pub seed: u64,
    pub class_counts: Vec<usize>,
    pub positive_labels: usize,
}

impl fmt::Display for CorpusSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples (K)       {}", self.num_samples)?;
        writeln!(f, "classes (N)       {}", self.num_classes)?;
        writeln!(f, "dimension (d)     {}", self.dim)?;
        writeln!(f, "tokens (L)        {}", self.num_tokens)?;
        writeln!(f, "noise std         {}", self.noise_std)?;
        writeln!(f, "samples per type  {}", self.samples_per_type)?;
        writeln!(f, "seed              {}", self.seed)?;
        writeln!(f, "positive labels   {}", self.positive_labels)?;
        let counts: Vec<String> = self.class_counts.iter().map(ToString::to_string).collect();
        write!(f, "class counts      {}", counts.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn three_tokens_without_noise_is_a_permutation_of_the_signals() {
        let dict = SignalDictionary::canonical(2);
        let mut rng = seeded(4);
        for _ in 0..50 {
            let s = draw_sample(&dict, 3, 0.0, &mut rng).unwrap();
            let mut cols: Vec<Vec<f64>> = (0..3).map(|l| s.tokens.column(l).to_vec()).collect();
            let mut want: Vec<Vec<f64>> =
                s.expected_signal_columns(&dict).iter().map(|c| c.to_vec()).collect();
            cols.sort_by(|a, b| a.partial_cmp(b).unwrap());
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(cols, want);
            assert_eq!(s.noise_positions().count(), 0);
        }
    }

    #[test]
    fn rejects_short_sequences() {
        let dict = SignalDictionary::canonical(2);
        assert!(matches!(
            draw_sample(&dict, 2, 0.1, &mut seeded(0)),
            Err(Error::TooFewTokens(2))
        ));
        assert!(Corpus::build(&dict, 2, 0.1, 1, 0).is_err());
    }

    #[test]
    fn positions_are_distinct_and_columns_exact() {
        let dict = SignalDictionary::build(16, 3, &mut seeded(1)).unwrap();
        let mut rng = seeded(2);
        for _ in 0..200 {
            let s = draw_sample(&dict, 5, 0.3, &mut rng).unwrap();
            assert_ne!(s.pos_class, s.pos_signal);
            assert_ne!(s.pos_class, s.pos_distractor);
            assert_ne!(s.pos_signal, s.pos_distractor);
            assert_ne!(s.class_index, s.distractor_index);
            let [c, v, u] = s.expected_signal_columns(&dict);
            assert_eq!(s.tokens.column(s.pos_class), c);
            assert_eq!(s.tokens.column(s.pos_signal), v);
            assert_eq!(s.tokens.column(s.pos_distractor), u);
        }
    }

    #[test]
    fn two_class_corpus_covers_every_type_once() {
        let dict = SignalDictionary::canonical(2);
        let c = Corpus::build(&dict, 4, 0.1, 1, 0).unwrap();
        assert_eq!(c.len(), 8);
        let mut seen: Vec<(i8, i8, usize, usize)> = c
            .samples
            .iter()
            .map(|s| (s.label, s.distractor_sign, s.class_index, s.distractor_index))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn stratified_counts() {
        let dict = SignalDictionary::build(16, 4, &mut seeded(0)).unwrap();
        let c = Corpus::build(&dict, 5, 0.1, 3, 11).unwrap();
        assert_eq!(c.len(), 144);
        assert_eq!(c.class_counts(), vec![36; 4]);
        for n in 0..4 {
            let pos = c
                .samples
                .iter()
                .filter(|s| s.class_index == n && s.label > 0)
                .count();
            assert_eq!(pos, 18);
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let dict = SignalDictionary::canonical(3);
        let a = Corpus::build(&dict, 6, 0.2, 2, 5).unwrap();
        let b = Corpus::build(&dict, 6, 0.2, 2, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        let c = Corpus::build(&dict, 6, 0.2, 2, 6).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn index_excluding_never_hits_excluded() {
        let mut rng = seeded(0);
        let mut hits = [0usize; 5];
        for _ in 0..5000 {
            let i = index_excluding(&mut rng, 5, &[3, 1]);
            assert!(i != 1 && i != 3);
            hits[i] += 1;
        }
        assert!(hits[0] > 1400 && hits[2] > 1400 && hits[4] > 1400);
    }
}
