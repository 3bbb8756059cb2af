//! Brute-force reference evaluator.
//!
//! Shares nothing with the scoring code beyond reading raw store vectors:
//! plain loops, explicit normalization, unshifted `exp` softmax (inputs
//! are cosines, so no overflow). Used to generate the expected outputs
//! shipped with fixtures and to cross-check the engine in tests.

use serde::{Deserialize, Serialize};

use crate::encoder::PrecomputedStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleAgg {
    Wca,
    Avg,
    Max,
}

impl OracleAgg {
    pub const ALL: [OracleAgg; 3] = [OracleAgg::Max, OracleAgg::Avg, OracleAgg::Wca];

    pub fn name(self) -> &'static str {
        match self {
            OracleAgg::Wca => "wca",
            OracleAgg::Avg => "avg",
            OracleAgg::Max => "max",
        }
    }
}

/// Everything the oracle needs about one class.
#[derive(Debug, Clone)]
pub struct OracleClass {
    pub label: String,
    pub prompt: Vec<f64>,
    pub descriptions: Vec<Vec<f64>>,
}

/// Whole image plus its crops.
#[derive(Debug, Clone)]
pub struct OracleImage {
    pub whole: Vec<f64>,
    pub patches: Vec<Vec<f64>>,
}

fn fetch(store: &PrecomputedStore, key: &str) -> Vec<f64> {
    store
        .raw(key)
        .unwrap_or_else(|| panic!("oracle: store has no {key:?}"))
        .iter()
        .map(|&v| f64::from(v))
        .collect()
}

impl OracleClass {
    pub fn from_store(store: &PrecomputedStore, label: &str, n_descriptions: usize) -> Self {
        OracleClass {
            label: label.to_string(),
            prompt: fetch(store, &format!("cls::{label}")),
            descriptions: (0..n_descriptions).map(|j| fetch(store, &format!("{label}::{j}"))).collect(),
        }
    }
}

impl OracleImage {
    pub fn from_store(store: &PrecomputedStore, id: &str, n_patches: usize) -> Self {
        OracleImage {
            whole: fetch(store, id),
            patches: (0..n_patches).map(|i| fetch(store, &format!("{id}::{i}"))).collect(),
        }
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

fn plain_softmax(xs: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Score of one class for one image.
pub fn score(agg: OracleAgg, image: &OracleImage, class: &OracleClass) -> f64 {
    let n = image.patches.len();
    let m = class.descriptions.len();
    let mut sims = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            sims[i][j] = cos(&image.patches[i], &class.descriptions[j]);
        }
    }
    match agg {
        OracleAgg::Max => {
            let mut best = f64::NEG_INFINITY;
            for row in &sims {
                for &s in row {
                    if s > best {
                        best = s;
                    }
                }
            }
            best
        }
        OracleAgg::Avg => {
            let mut total = 0.0;
            for row in &sims {
                for &s in row {
                    total += s;
                }
            }
            total / (n * m) as f64
        }
        OracleAgg::Wca => {
            let w = plain_softmax(&image.patches.iter().map(|p| cos(&image.whole, p)).collect::<Vec<_>>());
            let v = plain_softmax(&class.descriptions.iter().map(|d| cos(&class.prompt, d)).collect::<Vec<_>>());
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..m {
                    total += w[i] * v[j] * sims[i][j];
                }
            }
            total
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePrediction {
    pub id: String,
    pub label: String,
    pub predicted: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRun {
    pub aggregation: OracleAgg,
    pub accuracy: f64,
    pub n_correct: usize,
    pub predictions: Vec<OraclePrediction>,
}

/// Scores every `(id, true label)` against every class; the first maximum wins.
pub fn run(agg: OracleAgg, images: &[(String, String, OracleImage)], classes: &[OracleClass]) -> OracleRun {
    let mut predictions = Vec::new();
    let mut n_correct = 0;
    for (id, label, image) in images {
        let scores: Vec<f64> = classes.iter().map(|c| score(agg, image, c)).collect();
        let mut best = 0;
        for k in 1..scores.len() {
            if scores[k] > scores[best] {
                best = k;
            }
        }
        if classes[best].label == *label {
            n_correct += 1;
        }
        predictions.push(OraclePrediction {
            id: id.clone(),
            label: label.clone(),
            predicted: classes[best].label.clone(),
            scores,
        });
    }
    OracleRun {
        aggregation: agg,
        accuracy: n_correct as f64 / images.len() as f64,
        n_correct,
        predictions,
    }
}
