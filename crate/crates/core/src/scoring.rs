//! Score functions over image/text embeddings.
//!
//! The central score is the doubly weighted cross alignment
//!
//! ```text
//! s = Σ_i Σ_j w_i v_j cos(f(x_i), g(y_j))
//! ```
//!
//! with `w = softmax_i cos(f(x), f(x_i))` over crops and
//! `v = softmax_j cos(g(y), g(y_j))` over descriptions. Because cosine
//! factors through unit vectors, the same value is the inner product of the
//! augmented embeddings `k = Σ_i w_i f(x_i)/|f(x_i)|` and
//! `t = Σ_j v_j g(y_j)/|g(y_j)|`, which is what the cached fast path uses.

use serde::Serialize;

use crate::error::{Result, WcaError};
use crate::math::{check_dims, cosine, dot, norm, softmax, Embedding, WeightVector};

/// Dense row-major `rows x cols` matrix of cosine similarities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if n == 0 || m == 0 {
            return Err(WcaError::domain("similarity matrix must be nonempty"));
        }
        if rows.iter().any(|r| r.len() != m) {
            return Err(WcaError::domain("similarity matrix rows have unequal lengths"));
        }
        Ok(SimilarityMatrix {
            rows: n,
            cols: m,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// `Σ_i w_i sims[i][j]` for every column `j`.
    pub fn weighted_column_sums(&self, w: &WeightVector) -> Result<Vec<f64>> {
        check_dims(self.rows, w.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, wi) in w.iter().enumerate() {
            for (o, s) in out.iter_mut().zip(self.row(i)) {
                *o += wi * s;
            }
        }
        Ok(out)
    }
}

/// Similarity matrix together with its row (patch) and column
/// (description) weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossAlignMatrix {
    pub sims: SimilarityMatrix,
    pub patch_weights: WeightVector,
    pub desc_weights: WeightVector,
}

impl CrossAlignMatrix {
    pub fn new(sims: SimilarityMatrix, patch_weights: WeightVector, desc_weights: WeightVector) -> Result<Self> {
        check_dims(sims.rows(), patch_weights.len())?;
        check_dims(sims.cols(), desc_weights.len())?;
        Ok(CrossAlignMatrix {
            sims,
            patch_weights,
            desc_weights,
        })
    }

    pub fn score(&self) -> Result<f64> {
        wca_score(&self.sims, &self.patch_weights, &self.desc_weights)
    }
}

fn unit_rows(vectors: &[Embedding], what: &str) -> Result<Vec<Vec<f64>>> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let n = v.norm();
            if n == 0.0 {
                return Err(WcaError::domain(format!("{what} {i} has zero norm")));
            }
            Ok(v.iter().map(|x| x / n).collect())
        })
        .collect()
}

fn same_dim(vectors: &[Embedding], dim: usize) -> Result<()> {
    vectors.iter().try_for_each(|v| check_dims(dim, v.dim()))
}

/// Plain cosine between an image and a label prompt.
pub fn clip_score(image: &Embedding, label: &Embedding) -> Result<f64> {
    cosine(image, label)
}

/// Unweighted mean cosine between an image and each description.
pub fn llm_score(image: &Embedding, descriptions: &[Embedding]) -> Result<f64> {
    if descriptions.is_empty() {
        return Err(WcaError::domain("no description embeddings"));
    }
    let total = descriptions
        .iter()
        .map(|d| cosine(image, d))
        .sum::<Result<f64>>()?;
    Ok(total / descriptions.len() as f64)
}

/// `sims[i][j] = cos(patch_i, desc_j)`.
pub fn cross_matrix(patches: &[Embedding], descriptions: &[Embedding]) -> Result<SimilarityMatrix> {
    if patches.is_empty() || descriptions.is_empty() {
        return Err(WcaError::domain("cross alignment needs at least one patch and one description"));
    }
    let dim = patches[0].dim();
    same_dim(patches, dim)?;
    same_dim(descriptions, dim)?;
    let p = unit_rows(patches, "patch")?;
    let d = unit_rows(descriptions, "description")?;
    let mut data = Vec::with_capacity(p.len() * d.len());
    for pi in &p {
        for dj in &d {
            data.push(dot(pi, dj).clamp(-1.0, 1.0));
        }
    }
    Ok(SimilarityMatrix {
        rows: p.len(),
        cols: d.len(),
        data,
    })
}

/// Softmax of each member's cosine with `anchor`.
fn anchor_weights(anchor: &Embedding, members: &[Embedding]) -> Result<WeightVector> {
    if members.is_empty() {
        return Err(WcaError::domain("cannot weight an empty set"));
    }
    let scores = members
        .iter()
        .map(|m| cosine(anchor, m))
        .collect::<Result<Vec<f64>>>()?;
    softmax(&scores)
}

/// Patch weights: softmax over each crop's cosine with the whole image.
pub fn patch_weights(image: &Embedding, patches: &[Embedding]) -> Result<WeightVector> {
    anchor_weights(image, patches)
}

/// Description weights: softmax over each description's cosine with the
/// label prompt.
pub fn desc_weights(label: &Embedding, descriptions: &[Embedding]) -> Result<WeightVector> {
    anchor_weights(label, descriptions)
}

/// `Σ_i Σ_j w_i v_j sims[i][j]`.
pub fn wca_score(sims: &SimilarityMatrix, w: &WeightVector, v: &WeightVector) -> Result<f64> {
    check_dims(sims.rows(), w.len())?;
    check_dims(sims.cols(), v.len())?;
    let mut total = 0.0;
    for (i, wi) in w.iter().enumerate() {
        let row: f64 = sims.row(i).iter().zip(v.iter()).map(|(s, vj)| vj * s).sum();
        total += wi * row;
    }
    Ok(total)
}

/// Mean of all entries.
pub fn avg_score(sims: &SimilarityMatrix) -> Result<f64> {
    if sims.values().is_empty() {
        return Err(WcaError::domain("empty similarity matrix"));
    }
    Ok(sims.values().iter().sum::<f64>() / sims.values().len() as f64)
}

/// Largest entry.
pub fn max_score(sims: &SimilarityMatrix) -> Result<f64> {
    sims.values()
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| WcaError::domain("empty similarity matrix"))
}

/// `λ whole + (1 − λ) patch`, `λ ∈ [0, 1]`.
pub fn mixed_score(lambda: f64, whole_image_score: f64, patch_score: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(WcaError::config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(lambda * whole_image_score + (1.0 - lambda) * patch_score)
}

/// `Σ_i weights_i · members_i / |members_i|`. Not unit-norm in general.
fn augmented(members: &[Embedding], weights: &WeightVector, what: &str) -> Result<Embedding> {
    check_dims(members.len(), weights.len())?;
    let dim = members
        .first()
        .ok_or_else(|| WcaError::domain(format!("no {what} embeddings")))?
        .dim();
    same_dim(members, dim)?;
    let mut out = vec![0.0; dim];
    for (i, (m, wi)) in members.iter().zip(weights.iter()).enumerate() {
        let n = norm(m);
        if n == 0.0 {
            return Err(WcaError::domain(format!("{what} {i} has zero norm")));
        }
        let scale = wi / n;
        for (o, x) in out.iter_mut().zip(m.iter()) {
            *o += scale * x;
        }
    }
    Embedding::new(out)
}

/// Augmented image embedding `k`.
pub fn augmented_image_embedding(patches: &[Embedding], w: &WeightVector) -> Result<Embedding> {
    augmented(patches, w, "patch")
}

/// Augmented text embedding `t`.
pub fn augmented_text_embedding(descriptions: &[Embedding], v: &WeightVector) -> Result<Embedding> {
    augmented(descriptions, v, "description")
}

/// Mean of unit-normalized vectors, used for template ensembles.
pub fn mean_direction(members: &[Embedding]) -> Result<Embedding> {
    let w = WeightVector::uniform(members.len())?;
    augmented(members, &w, "template")
}
