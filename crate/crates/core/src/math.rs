//! Vector kernels shared by every scoring path: cosine similarity,
//! normalization and temperature-free softmax. Everything is computed in
//! `f64`; stored `f32` payloads are widened on load.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WcaError};

/// Tolerance for a vector to count as unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-4;

/// A point in the shared image/text latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Builds an embedding, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(WcaError::domain("embedding must have at least one dimension"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(WcaError::domain(format!(
                "embedding component {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Embedding(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOL
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    /// Multiplies every component by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }
}

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = WcaError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Equal weights `1/len`.
    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(WcaError::domain("weight vector must be nonempty"));
        }
        Ok(WeightVector(vec![1.0 / len as f64; len]))
    }

    /// Wraps caller-provided weights after checking they lie on the simplex.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(WcaError::domain("weight vector must be nonempty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(WcaError::domain("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(WcaError::domain(format!("weights sum to {total}, not 1")));
        }
        Ok(WeightVector(weights))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(WcaError::Dimension { expected, actual });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u.len(), v.len())?;
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(WcaError::domain("cosine of a zero-norm vector is undefined"));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Scales `v` to unit Euclidean norm.
pub fn normalize(v: &Embedding) -> Result<Embedding> {
    let n = v.norm();
    if n == 0.0 {
        return Err(WcaError::domain("cannot normalize a zero-norm vector"));
    }
    Embedding::new(v.iter().map(|x| x / n).collect())
}

/// `exp(s_i) / Σ exp(s_l)` with the maximum subtracted first. No temperature.
pub fn softmax(scores: &[f64]) -> Result<WeightVector> {
    if scores.is_empty() {
        return Err(WcaError::domain("softmax of an empty score list"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(WcaError::domain("softmax input contains a non-finite score"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(WeightVector(exps.into_iter().map(|e| e / total).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0, epsilon = 1e-15);
        // 1 / sqrt(2)
        assert_abs_diff_eq!(
            cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            0.70710678,
            epsilon = 1e-7
        );
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(WcaError::Domain(_))
        ));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(WcaError::Dimension { expected: 1, actual: 2 })
        ));
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&emb(&[3.0, 4.0])).unwrap();
        assert_abs_diff_eq!(n[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(n[1], 0.8, epsilon = 1e-15);
        assert_eq!(normalize(&emb(&[1.0, 0.0, 0.0])).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        assert!(matches!(normalize(&emb(&[0.0, 0.0])), Err(WcaError::Domain(_))));
    }

    #[test]
    fn softmax_examples() {
        let w = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for x in w.iter() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
        // e / (e + 1)
        let w = softmax(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.7310586, epsilon = 1e-6);
        assert_abs_diff_eq!(w[1], 0.2689414, epsilon = 1e-6);
        assert_eq!(softmax(&[5.0]).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn softmax_errors() {
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn softmax_large_scores_stay_finite() {
        let w = softmax(&[1000.0, 999.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.7310586, epsilon = 1e-6);
    }

    #[test]
    fn embedding_rejects_bad_values() {
        assert!(Embedding::new(vec![]).is_err());
        assert!(Embedding::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::from_weights(vec![0.5, 0.5]).is_ok());
        assert!(WeightVector::from_weights(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::from_weights(vec![1.5, -0.5]).is_err());
        assert!(WeightVector::uniform(0).is_err());
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|d| {
            (
                prop::collection::vec(-10.0f64..10.0, d),
                prop::collection::vec(-10.0f64..10.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn cosine_positive_scale_invariant((u, v) in vec_pair(), c in 1e-3f64..1e3) {
            prop_assume!(norm(&u) > 1e-6 && norm(&v) > 1e-6);
            let scaled: Vec<f64> = u.iter().map(|x| x * c).collect();
            let a = cosine(&u, &v).unwrap();
            let b = cosine(&scaled, &v).unwrap();
            prop_assert!((a - b).abs() <= 1e-7);
            prop_assert!((-1.0..=1.0).contains(&a));
            prop_assert!((a - cosine(&v, &u).unwrap()).abs() <= 1e-15);
        }

        #[test]
        fn softmax_simplex_and_shift(scores in prop::collection::vec(-50.0f64..50.0, 1..40), shift in -100.0f64..100.0) {
            let w = softmax(&scores).unwrap();
            let total: f64 = w.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            prop_assert!(w.iter().all(|x| *x >= 0.0));
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let ws = softmax(&shifted).unwrap();
            for (a, b) in w.iter().zip(ws.iter()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    if scores[i] > scores[j] {
                        prop_assert!(w[i] >= w[j]);
                    }
                }
            }
        }

        #[test]
        fn normalize_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..16)) {
            prop_assume!(norm(&v) > 1e-6);
            let once = normalize(&emb(&v)).unwrap();
            prop_assert!((once.norm() - 1.0).abs() <= 1e-6);
            let twice = normalize(&once).unwrap();
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() <= 1e-7);
            }
        }
    }
}
