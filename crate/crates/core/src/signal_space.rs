//! Orthonormal dictionaries of class signals `c_n` and classification
//! signals `v_n`.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// The orthonormal signal set `C ∪ V` in `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDictionary {
    pub dim: usize,
    pub num_classes: usize,
    #[serde(with = "crate::serde_arrays::vectors")]
    pub class_signals: Vec<Array1<f64>>,
    #[serde(with = "crate::serde_arrays::vectors")]
    pub cls_signals: Vec<Array1<f64>>,
}

impl SignalDictionary {
    /// Draws a `dim × 2N` Gaussian matrix, orthonormalizes its columns and
    /// splits them into `C` (first N) and `V` (next N).
    pub fn build(dim: usize, num_classes: usize, rng: &mut Rng) -> Result<Self> {
        if num_classes == 0 || dim < 2 * num_classes {
            return Err(Error::DimensionTooSmall { dim, num_classes });
        }
        let cols = 2 * num_classes;
        let mut raw = Array2::<f64>::zeros((dim, cols));
        for j in 0..cols {
            for i in 0..dim {
                raw[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let basis = orthonormalize_columns(raw);
        let class_signals = (0..num_classes).map(|j| basis.column(j).to_owned()).collect();
        let cls_signals = (num_classes..cols)
            .map(|j| basis.column(j).to_owned())
            .collect();
        Ok(Self {
            dim,
            num_classes,
            class_signals,
            cls_signals,
        })
    }

    /// `d = 2N`, `c_n = e_n`, `v_n = e_{N+n}`.
    pub fn canonical(num_classes: usize) -> Self {
        let dim = 2 * num_classes;
        let unit = |k: usize| {
            let mut e = Array1::zeros(dim);
            e[k] = 1.0;
            e
        };
        Self {
            dim,
            num_classes,
            class_signals: (0..num_classes).map(unit).collect(),
            cls_signals: (0..num_classes).map(|n| unit(num_classes + n)).collect(),
        }
    }

    pub fn class_signal(&self, n: usize) -> &Array1<f64> {
        &self.class_signals[n]
    }

    pub fn cls_signal(&self, n: usize) -> &Array1<f64> {
        &self.cls_signals[n]
    }

    /// All 2N vectors, `C` first then `V`.
    pub fn all_signals(&self) -> impl Iterator<Item = &Array1<f64>> {
        self.class_signals.iter().chain(self.cls_signals.iter())
    }

    /// Gram matrix of `C ∪ V` in the order of [`all_signals`](Self::all_signals).
    pub fn gram(&self) -> Array2<f64> {
        let vs: Vec<&Array1<f64>> = self.all_signals().collect();
        let k = vs.len();
        Array2::from_shape_fn((k, k), |(a, b)| vs[a].dot(vs[b]))
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.gram();
        g.indexed_iter()
            .map(|((a, b), &x)| if a == b { (x - 1.0).abs() } else { x.abs() })
            .fold(0.0, f64::max)
    }
}

/// Modified Gram-Schmidt with one reorthogonalization pass.
fn orthonormalize_columns(mut m: Array2<f64>) -> Array2<f64> {
    let cols = m.ncols();
    for j in 0..cols {
        for _pass in 0..2 {
            for k in 0..j {
                let proj = m.column(k).dot(&m.column(j));
                let qk = m.column(k).to_owned();
                m.column_mut(j).scaled_add(-proj, &qk);
            }
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        m.column_mut(j).mapv_inplace(|x| x / norm);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn small_dictionary_is_orthonormal() {
        let d = SignalDictionary::build(4, 2, &mut seeded(0)).unwrap();
        assert!(d.class_signal(0).dot(d.class_signal(1)).abs() <= 1e-12);
        assert!(d.class_signal(0).dot(d.cls_signal(0)).abs() <= 1e-12);
        assert!((d.cls_signal(1).dot(d.cls_signal(1)).sqrt() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn tight_dimension_gives_full_basis() {
        for n in 1..=5 {
            let d = SignalDictionary::build(2 * n, n, &mut seeded(3)).unwrap();
            assert!(d.orthonormality_error() <= 1e-12);
        }
    }

    #[test]
    fn different_seeds_differ_but_both_orthonormal() {
        let a = SignalDictionary::build(64, 4, &mut seeded(0)).unwrap();
        let b = SignalDictionary::build(64, 4, &mut seeded(1)).unwrap();
        assert!(a.orthonormality_error() <= 1e-12);
        assert!(b.orthonormality_error() <= 1e-12);
        assert_ne!(a.class_signals, b.class_signals);
    }

    #[test]
    fn rejects_small_dimension() {
        assert!(matches!(
            SignalDictionary::build(7, 4, &mut seeded(0)),
            Err(Error::DimensionTooSmall { dim: 7, num_classes: 4 })
        ));
    }

    #[test]
    fn canonical_layout() {
        let d = SignalDictionary::canonical(2);
        assert_eq!(d.class_signal(0).to_vec(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.cls_signal(1).to_vec(), vec![0.0, 0.0, 0.0, 1.0]);
        let d1 = SignalDictionary::canonical(1);
        assert_eq!(d1.class_signal(0).to_vec(), vec![1.0, 0.0]);
        assert_eq!(d1.cls_signal(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(SignalDictionary::canonical(3).gram(), Array2::<f64>::eye(6));
    }

    #[test]
    fn build_is_deterministic() {
        let a = SignalDictionary::build(16, 3, &mut seeded(9)).unwrap();
        let b = SignalDictionary::build(16, 3, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }
}
