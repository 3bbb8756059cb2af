//! End-to-end classification, explanations, augmented-embedding caching
//! and batch evaluation.
//!
//! Per image: draw the crops, embed whole image and crops, compute the crop
//! weights once. Per class (prepared once per run in a [`TextBank`]): embed
//! the label prompt and descriptions, compute the description weights and
//! the augmented text embedding. Scores are compared across classes and
//! the first maximum in catalog order wins.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    description_key, patch_key, template_key, EncoderBackend, ImageInput, PrecomputedStore, TextInput,
};
use crate::error::{Result, WcaError};
use crate::manifest::DatasetManifest;
use crate::math::{cosine, Embedding, WeightVector};
use crate::scoring::{
    augmented_image_embedding, augmented_text_embedding, avg_score, cross_matrix, desc_weights, llm_score,
    max_score, mean_direction, mixed_score, patch_weights, wca_score, CrossAlignMatrix,
};
use crate::text_prompt::{label_prompt, LabelCatalog, DEFAULT_MAX_DESCRIPTIONS};
use crate::visual_prompt::{apply_prompt, CropSpec, ImageBuffer, PromptConfig};

/// How the per-class score is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Weighted cross alignment of crops and descriptions.
    Wca,
    /// Mean of the crop x description similarity matrix.
    Avg,
    /// Maximum of the crop x description similarity matrix.
    Max,
    /// Mean cosine between the whole image and each description.
    Llm,
    /// Cosine between the whole image and the label prompt.
    Clip,
    /// Cosine between the whole image and the mean label-prompt direction
    /// over all templates.
    ClipE,
    /// `λ · (whole image vs v-weighted descriptions) + (1 − λ) · wca`.
    Mixed,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Wca => "wca",
            Aggregation::Avg => "avg",
            Aggregation::Max => "max",
            Aggregation::Llm => "llm",
            Aggregation::Clip => "clip",
            Aggregation::ClipE => "clip-e",
            Aggregation::Mixed => "mixed",
        }
    }

    fn needs_patches(self) -> bool {
        matches!(self, Aggregation::Wca | Aggregation::Avg | Aggregation::Max | Aggregation::Mixed)
    }

    fn needs_whole(self) -> bool {
        !matches!(self, Aggregation::Avg | Aggregation::Max)
    }

    fn needs_descriptions(self) -> bool {
        !matches!(self, Aggregation::Clip | Aggregation::ClipE)
    }
}

impl FromStr for Aggregation {
    type Err = WcaError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "wca" => Aggregation::Wca,
            "avg" | "mean" => Aggregation::Avg,
            "max" => Aggregation::Max,
            "llm" => Aggregation::Llm,
            "clip" => Aggregation::Clip,
            "clip-e" => Aggregation::ClipE,
            "mixed" => Aggregation::Mixed,
            other => return Err(WcaError::config(format!("unknown aggregation {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub aggregation: Aggregation,
    pub prompt: PromptConfig,
    pub lambda: Option<f64>,
    pub max_descriptions: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            aggregation: Aggregation::Wca,
            prompt: PromptConfig::default(),
            lambda: None,
            max_descriptions: Some(DEFAULT_MAX_DESCRIPTIONS),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.prompt.validate()?;
        match (self.aggregation, self.lambda) {
            (Aggregation::Mixed, None) => Err(WcaError::config("--agg mixed requires --lambda")),
            (Aggregation::Mixed, Some(l)) if !(0.0..=1.0).contains(&l) => {
                Err(WcaError::config(format!("--lambda must lie in [0, 1], got {l}")))
            }
            (Aggregation::Mixed, Some(_)) => Ok(()),
            (other, Some(_)) => Err(WcaError::config(format!(
                "--lambda is only valid with --agg mixed, not --agg {}",
                other.as_str()
            ))),
            (_, None) => Ok(()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.prompt.seed
    }
}

/// Text-side embeddings of one class, prepared once per run.
#[derive(Debug, Clone)]
pub struct ClassText {
    pub label: String,
    pub descriptions: Vec<String>,
    pub label_embedding: Embedding,
    pub description_embeddings: Vec<Embedding>,
    pub desc_weights: Option<WeightVector>,
    /// Augmented text embedding `t`.
    pub augmented: Option<Embedding>,
    pub template_direction: Option<Embedding>,
}

/// Text embeddings for every class of a catalog.
#[derive(Debug, Clone)]
pub struct TextBank {
    classes: Vec<ClassText>,
}

impl TextBank {
    pub fn build(catalog: &LabelCatalog, backend: &dyn EncoderBackend, aggregation: Aggregation) -> Result<Self> {
        let dim = backend.dim();
        let encode = |key: &str, text: &str| -> Result<Embedding> {
            let e = backend.encode_text(TextInput { key, text })?;
            if e.dim() != dim {
                return Err(WcaError::Dimension {
                    expected: dim,
                    actual: e.dim(),
                });
            }
            Ok(e)
        };
        let mut classes = Vec::with_capacity(catalog.len());
        for set in catalog.classes() {
            let label = set.label.as_str();
            let label_embedding = encode(&template_key(label, 0), &catalog.prompt_for(label))?;
            let description_embeddings = if aggregation.needs_descriptions() {
                set.descriptions
                    .iter()
                    .enumerate()
                    .map(|(j, d)| encode(&description_key(label, j), d))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let (desc_weights, augmented) = if description_embeddings.is_empty() {
                (None, None)
            } else {
                let v = desc_weights(&label_embedding, &description_embeddings)?;
                let t = augmented_text_embedding(&description_embeddings, &v)?;
                (Some(v), Some(t))
            };
            let template_direction = if aggregation == Aggregation::ClipE {
                let mut members = vec![label_embedding.clone()];
                for (k, template) in catalog.templates().iter().enumerate().skip(1) {
                    members.push(encode(&template_key(label, k), &label_prompt(label, template)?)?);
                }
                Some(mean_direction(&members)?)
            } else {
                None
            };
            classes.push(ClassText {
                label: label.to_string(),
                descriptions: set.descriptions.clone(),
                label_embedding,
                description_embeddings,
                desc_weights,
                augmented,
                template_direction,
            });
        }
        Ok(TextBank { classes })
    }

    pub fn classes(&self) -> &[ClassText] {
        &self.classes
    }
}

/// Whole-image and crop embeddings of one image.
#[derive(Debug, Clone)]
pub struct ImageViews {
    pub whole: Option<Embedding>,
    pub patches: Vec<Embedding>,
    /// Crops applied to the pixels; empty for precomputed embeddings.
    pub crops: Vec<CropSpec>,
    pub crop_preprocess_seconds: f64,
    pub encode_seconds: f64,
}

/// Embeds the views of one image that `aggregation` needs.
///
/// Without pixels, crop `i` is looked up under `<id>::i`; the exporter
/// produced it from the same `(seed, id)` crop stream.
pub fn embed_image(
    backend: &dyn EncoderBackend,
    image_id: &str,
    pixels: Option<&ImageBuffer>,
    cfg: &RunConfig,
) -> Result<ImageViews> {
    let dim = backend.dim();
    let checked = |e: Embedding| -> Result<Embedding> {
        if e.dim() != dim {
            return Err(WcaError::Dimension {
                expected: dim,
                actual: e.dim(),
            });
        }
        Ok(e)
    };
    let mut crop_preprocess_seconds = 0.0;
    let mut encode_seconds = 0.0;

    let whole = if cfg.aggregation.needs_whole() {
        let t = Instant::now();
        let e = checked(backend.encode_image(ImageInput { key: image_id, pixels })?)?;
        encode_seconds += t.elapsed().as_secs_f64();
        Some(e)
    } else {
        None
    };

    let mut patches = Vec::new();
    let mut crops = Vec::new();
    if cfg.aggregation.needs_patches() {
        let n = cfg.prompt.num_crops;
        patches.reserve(n);
        match pixels {
            Some(img) => {
                let t = Instant::now();
                crops = cfg.prompt.crops_for(image_id, img.width(), img.height())?;
                let prompted = crops
                    .iter()
                    .map(|c| apply_prompt(img, cfg.prompt.style, c))
                    .collect::<Result<Vec<_>>>()?;
                crop_preprocess_seconds += t.elapsed().as_secs_f64();
                let t = Instant::now();
                for (i, p) in prompted.iter().enumerate() {
                    let key = patch_key(image_id, i);
                    patches.push(checked(backend.encode_image(ImageInput { key: &key, pixels: Some(p) })?)?);
                }
                encode_seconds += t.elapsed().as_secs_f64();
            }
            None => {
                let t = Instant::now();
                for i in 0..n {
                    let key = patch_key(image_id, i);
                    patches.push(checked(backend.encode_image(ImageInput { key: &key, pixels: None })?)?);
                }
                encode_seconds += t.elapsed().as_secs_f64();
            }
        }
    }
    Ok(ImageViews {
        whole,
        patches,
        crops,
        crop_preprocess_seconds,
        encode_seconds,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timing {
    pub crop_preprocess_seconds: f64,
    pub encode_seconds: f64,
    pub score_seconds: f64,
}

/// One description's share of a class score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplanationRow {
    pub description: String,
    /// Description weight `v_j`.
    pub weight: f64,
    /// `v_j · Σ_i w_i sims[i][j]`; rows sum to the class score.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassExplanation {
    pub label: String,
    pub score: f64,
    pub rows: Vec<ExplanationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub image_id: String,
    pub predicted_label: String,
    pub per_class_scores: IndexMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<Vec<ClassExplanation>>,
    #[serde(skip)]
    pub predicted_index: usize,
    #[serde(skip)]
    pub timing: Timing,
}

/// Index of the first maximum.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

fn explain_class(class: &ClassText, matrix: &CrossAlignMatrix) -> Result<ClassExplanation> {
    let column = matrix.sims.weighted_column_sums(&matrix.patch_weights)?;
    let mut rows: Vec<ExplanationRow> = class
        .descriptions
        .iter()
        .zip(matrix.desc_weights.iter())
        .zip(column)
        .map(|((d, v), c)| ExplanationRow {
            description: d.clone(),
            weight: *v,
            contribution: v * c,
        })
        .collect();
    rows.sort_by(|a, b| b.contribution.total_cmp(&a.contribution));
    Ok(ClassExplanation {
        label: class.label.clone(),
        score: matrix.score()?,
        rows,
    })
}

/// Classifies images against one catalog with one backend.
pub struct Classifier<'a> {
    backend: &'a dyn EncoderBackend,
    cfg: RunConfig,
    bank: TextBank,
}

impl<'a> Classifier<'a> {
    pub fn new(catalog: &LabelCatalog, backend: &'a dyn EncoderBackend, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        if catalog.is_empty() {
            return Err(WcaError::domain("label catalog has no classes"));
        }
        let bank = TextBank::build(catalog, backend, cfg.aggregation)?;
        Ok(Classifier { backend, cfg, bank })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &TextBank {
        &self.bank
    }

    /// Weighted matrix of one class against an image's crops. Weights are
    /// uniform for `avg`.
    fn cross_align(&self, class: &ClassText, views: &ImageViews, w: &WeightVector) -> Result<CrossAlignMatrix> {
        let sims = cross_matrix(&views.patches, &class.description_embeddings)?;
        let v = match self.cfg.aggregation {
            Aggregation::Avg => WeightVector::uniform(sims.cols())?,
            _ => class.desc_weights.clone().expect("descriptions embedded"),
        };
        CrossAlignMatrix::new(sims, w.clone(), v)
    }

    /// Scores every class for already-embedded views.
    pub fn score_views(&self, image_id: &str, views: &ImageViews, explain: bool) -> Result<ClassificationReport> {
        let agg = self.cfg.aggregation;
        if explain && !matches!(agg, Aggregation::Wca | Aggregation::Avg) {
            return Err(WcaError::ExplanationUnavailable(format!(
                "--agg {} has no weighted similarity matrix; use --agg wca or avg",
                agg.as_str()
            )));
        }
        let t0 = Instant::now();
        let whole = views.whole.as_ref();
        let w = match agg {
            Aggregation::Wca | Aggregation::Mixed => {
                Some(patch_weights(whole.expect("whole image embedded"), &views.patches)?)
            }
            Aggregation::Avg => Some(WeightVector::uniform(views.patches.len())?),
            _ => None,
        };
        let k = match (agg, explain) {
            (Aggregation::Wca | Aggregation::Mixed, false) => {
                Some(augmented_image_embedding(&views.patches, w.as_ref().expect("weights"))?)
            }
            _ => None,
        };

        let mut scores = Vec::with_capacity(self.bank.classes.len());
        let mut matrices = Vec::new();
        for class in &self.bank.classes {
            let s = match agg {
                Aggregation::Wca | Aggregation::Avg if explain => {
                    let m = self.cross_align(class, views, w.as_ref().expect("weights"))?;
                    let s = m.score()?;
                    matrices.push(m);
                    s
                }
                Aggregation::Wca => k.as_ref().expect("k").dot(class.augmented.as_ref().expect("t"))?,
                Aggregation::Avg => avg_score(&cross_matrix(&views.patches, &class.description_embeddings)?)?,
                Aggregation::Max => max_score(&cross_matrix(&views.patches, &class.description_embeddings)?)?,
                Aggregation::Llm => llm_score(whole.expect("whole"), &class.description_embeddings)?,
                Aggregation::Clip => cosine(whole.expect("whole"), &class.label_embedding)?,
                Aggregation::ClipE => cosine(
                    whole.expect("whole"),
                    class.template_direction.as_ref().expect("template direction"),
                )?,
                Aggregation::Mixed => {
                    let whole_sims = cross_matrix(std::slice::from_ref(whole.expect("whole")), &class.description_embeddings)?;
                    let v = class.desc_weights.as_ref().expect("v");
                    let whole_score = wca_score(&whole_sims, &WeightVector::uniform(1)?, v)?;
                    let patch_score = k.as_ref().expect("k").dot(class.augmented.as_ref().expect("t"))?;
                    mixed_score(self.cfg.lambda.expect("validated"), whole_score, patch_score)?
                }
            };
            scores.push(s);
        }
        let predicted_index = argmax_first(&scores).expect("catalog nonempty");

        let explanation = if explain {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            Some(
                order
                    .iter()
                    .take(2)
                    .map(|&c| explain_class(&self.bank.classes[c], &matrices[c]))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };

        Ok(ClassificationReport {
            image_id: image_id.to_string(),
            predicted_label: self.bank.classes[predicted_index].label.clone(),
            per_class_scores: self
                .bank
                .classes
                .iter()
                .zip(&scores)
                .map(|(c, s)| (c.label.clone(), *s))
                .collect(),
            explanation,
            predicted_index,
            timing: Timing {
                crop_preprocess_seconds: views.crop_preprocess_seconds,
                encode_seconds: views.encode_seconds,
                score_seconds: t0.elapsed().as_secs_f64(),
            },
        })
    }

    /// Runs the full pipeline on one image.
    pub fn classify(&self, image_id: &str, pixels: Option<&ImageBuffer>, explain: bool) -> Result<ClassificationReport> {
        let views = embed_image(self.backend, image_id, pixels, &self.cfg)?;
        self.score_views(image_id, &views, explain)
    }

    /// Augmented image embedding `k` of one image (wca only).
    pub fn image_augmented(&self, image_id: &str, pixels: Option<&ImageBuffer>) -> Result<Embedding> {
        let views = embed_image(self.backend, image_id, pixels, &self.cfg)?;
        let w = patch_weights(views.whole.as_ref().expect("whole image embedded"), &views.patches)?;
        augmented_image_embedding(&views.patches, &w)
    }
}

/// One-shot classification.
pub fn classify(
    image_id: &str,
    pixels: Option<&ImageBuffer>,
    catalog: &LabelCatalog,
    backend: &dyn EncoderBackend,
    cfg: &RunConfig,
) -> Result<ClassificationReport> {
    Classifier::new(catalog, backend, cfg.clone())?.classify(image_id, pixels, false)
}

/// Explaining variant of [`classify`]: rows for the winner and runner-up.
pub fn explain(
    image_id: &str,
    pixels: Option<&ImageBuffer>,
    catalog: &LabelCatalog,
    backend: &dyn EncoderBackend,
    cfg: &RunConfig,
) -> Result<ClassificationReport> {
    Classifier::new(catalog, backend, cfg.clone())?.classify(image_id, pixels, true)
}

pub fn image_cache_key(image_id: &str) -> String {
    format!("img::{image_id}")
}

pub fn class_cache_key(label: &str) -> String {
    format!("cls::{label}")
}

/// Precomputed augmented embeddings: `k` per image, `t` per class.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCache {
    store: PrecomputedStore,
}

impl AugmentedCache {
    pub fn from_store(store: PrecomputedStore) -> Self {
        AugmentedCache { store }
    }

    pub fn store(&self) -> &PrecomputedStore {
        &self.store
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    /// Loads a cache file and checks it against the backend dimension.
    pub fn load(path: impl AsRef<Path>, backend_dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let store = PrecomputedStore::read(path)?;
        if store.dim() != backend_dim {
            return Err(WcaError::CacheInvalid {
                path: path.to_path_buf(),
                message: format!("cache dim {} does not match backend dim {backend_dim}", store.dim()),
            });
        }
        Ok(AugmentedCache { store })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.store.write(path)
    }

    fn lookup(&self, key: &str) -> Result<Embedding> {
        self.store.lookup(key).map_err(|_| WcaError::CacheInvalid {
            path: "<cache>".into(),
            message: format!("no entry {key:?}; rebuild the cache for this manifest and catalog"),
        })
    }

    pub fn image(&self, image_id: &str) -> Result<Embedding> {
        self.lookup(&image_cache_key(image_id))
    }

    pub fn class(&self, label: &str) -> Result<Embedding> {
        self.lookup(&class_cache_key(label))
    }

    /// Fast-path report from cached `k · t`.
    pub fn classify(&self, image_id: &str, catalog: &LabelCatalog) -> Result<ClassificationReport> {
        let t0 = Instant::now();
        let k = self.image(image_id)?;
        let mut scores = Vec::with_capacity(catalog.len());
        for label in catalog.labels() {
            scores.push(k.dot(&self.class(label)?)?);
        }
        let predicted_index = argmax_first(&scores).ok_or_else(|| WcaError::domain("empty catalog"))?;
        Ok(ClassificationReport {
            image_id: image_id.to_string(),
            predicted_label: catalog.classes()[predicted_index].label.clone(),
            per_class_scores: catalog.labels().map(str::to_string).zip(scores).collect(),
            explanation: None,
            predicted_index,
            timing: Timing {
                score_seconds: t0.elapsed().as_secs_f64(),
                ..Timing::default()
            },
        })
    }
}

fn load_pixels(manifest: &DatasetManifest, backend: &dyn EncoderBackend, id: &str) -> Result<Option<ImageBuffer>> {
    if backend.needs_pixels() {
        ImageBuffer::load(manifest.image_path(id)).map(Some)
    } else {
        Ok(None)
    }
}

fn run_pool<T: Send>(jobs: Option<usize>, concurrent: bool, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    if !concurrent || jobs == Some(1) {
        return Ok((0..n).map(f).collect());
    }
    let work = || (0..n).into_par_iter().map(&f).collect::<Vec<T>>();
    match jobs {
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| WcaError::config(format!("cannot start {j} worker threads: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Writes `k` for every manifest image and `t` for every class.
pub fn precompute_cache(
    manifest: &DatasetManifest,
    catalog: &LabelCatalog,
    backend: &dyn EncoderBackend,
    cfg: &RunConfig,
    cache_path: Option<&Path>,
    jobs: Option<usize>,
) -> Result<AugmentedCache> {
    if cfg.aggregation != Aggregation::Wca {
        return Err(WcaError::config("the augmented-embedding cache is only defined for --agg wca"));
    }
    let classifier = Classifier::new(catalog, backend, cfg.clone())?;
    let ks = first_error(run_pool(jobs, backend.supports_concurrency(), manifest.len(), |i| {
        let id = &manifest.records[i].id;
        let pixels = load_pixels(manifest, backend, id).map_err(|e| e.for_image(id))?;
        classifier
            .image_augmented(id, pixels.as_ref())
            .map_err(|e| e.for_image(id))
    })?)?;
    let mut store = PrecomputedStore::new(backend.dim(), false)?;
    for (record, k) in manifest.records.iter().zip(ks) {
        store.insert(image_cache_key(&record.id), &k)?;
    }
    for class in classifier.bank().classes() {
        store.insert(class_cache_key(&class.label), class.augmented.as_ref().expect("wca embeds descriptions"))?;
    }
    let cache = AugmentedCache { store };
    if let Some(path) = cache_path {
        cache.write(path)?;
    }
    Ok(cache)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub n: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub id: String,
    pub label: String,
    pub predicted: String,
    pub score: f64,
}

/// Settings echoed into the accuracy report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSummary {
    pub aggregation: Aggregation,
    pub alpha: f64,
    pub beta: f64,
    pub crops: usize,
    pub prompt_style: String,
    pub max_descriptions: Option<usize>,
    pub templates: Vec<String>,
    pub lambda: Option<f64>,
    pub backend: String,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub top1: f64,
    pub n: usize,
    pub n_correct: usize,
    pub per_class: IndexMap<String, ClassAccuracy>,
    /// true label -> predicted label -> count, nonzero cells only.
    pub confusion: IndexMap<String, IndexMap<String, usize>>,
    pub seed: u64,
    pub config: ConfigSummary,
    pub predictions: Vec<PredictionRow>,
    #[serde(skip)]
    pub reports: Vec<ClassificationReport>,
    #[serde(skip)]
    pub wall_seconds: f64,
    #[serde(skip)]
    pub timing: Timing,
}

impl EvalReport {
    /// Canonical JSON body; contains no timings.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions<'c> {
    pub jobs: Option<usize>,
    pub cache: Option<&'c AugmentedCache>,
}

/// Classifies every manifest record and tallies top-1 accuracy.
/// Any per-image failure aborts the run.
pub fn evaluate(
    manifest: &DatasetManifest,
    catalog: &LabelCatalog,
    backend: &dyn EncoderBackend,
    cfg: &RunConfig,
    opts: EvalOptions<'_>,
) -> Result<EvalReport> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(WcaError::domain("manifest has no records"));
    }
    manifest.check_labels(catalog)?;
    let start = Instant::now();

    let reports = match opts.cache {
        Some(cache) => {
            if cfg.aggregation != Aggregation::Wca {
                return Err(WcaError::config("--cache holds augmented embeddings and requires --agg wca"));
            }
            if cache.dim() != backend.dim() {
                return Err(WcaError::CacheInvalid {
                    path: "<cache>".into(),
                    message: format!("cache dim {} does not match backend dim {}", cache.dim(), backend.dim()),
                });
            }
            first_error(run_pool(opts.jobs, true, manifest.len(), |i| {
                let id = &manifest.records[i].id;
                cache.classify(id, catalog).map_err(|e| e.for_image(id))
            })?)?
        }
        None => {
            let classifier = Classifier::new(catalog, backend, cfg.clone())?;
            first_error(run_pool(opts.jobs, backend.supports_concurrency(), manifest.len(), |i| {
                let id = &manifest.records[i].id;
                let pixels = load_pixels(manifest, backend, id).map_err(|e| e.for_image(id))?;
                classifier
                    .classify(id, pixels.as_ref(), false)
                    .map_err(|e| e.for_image(id))
            })?)?
        }
    };

    let k = catalog.len();
    let mut counts = vec![vec![0usize; k]; k];
    let mut timing = Timing::default();
    let mut predictions = Vec::with_capacity(reports.len());
    for (record, report) in manifest.records.iter().zip(&reports) {
        let truth = catalog.index_of(&record.label).expect("labels checked");
        counts[truth][report.predicted_index] += 1;
        timing.crop_preprocess_seconds += report.timing.crop_preprocess_seconds;
        timing.encode_seconds += report.timing.encode_seconds;
        timing.score_seconds += report.timing.score_seconds;
        predictions.push(PredictionRow {
            id: record.id.clone(),
            label: record.label.clone(),
            predicted: report.predicted_label.clone(),
            score: report.per_class_scores[report.predicted_index],
        });
    }

    let labels: Vec<&str> = catalog.labels().collect();
    let n_correct: usize = (0..k).map(|c| counts[c][c]).sum();
    let per_class = labels
        .iter()
        .enumerate()
        .map(|(c, l)| {
            let n: usize = counts[c].iter().sum();
            let correct = counts[c][c];
            let accuracy = (n > 0).then(|| correct as f64 / n as f64);
            (l.to_string(), ClassAccuracy { n, correct, accuracy })
        })
        .collect();
    let confusion = labels
        .iter()
        .enumerate()
        .filter(|(c, _)| counts[*c].iter().any(|x| *x > 0))
        .map(|(c, l)| {
            let row = labels
                .iter()
                .enumerate()
                .filter(|(p, _)| counts[c][*p] > 0)
                .map(|(p, pl)| (pl.to_string(), counts[c][p]))
                .collect();
            (l.to_string(), row)
        })
        .collect();

    Ok(EvalReport {
        top1: n_correct as f64 / manifest.len() as f64,
        n: manifest.len(),
        n_correct,
        per_class,
        confusion,
        seed: cfg.seed(),
        config: ConfigSummary {
            aggregation: cfg.aggregation,
            alpha: cfg.prompt.alpha,
            beta: cfg.prompt.beta,
            crops: cfg.prompt.num_crops,
            prompt_style: cfg.prompt.style.as_str().to_string(),
            max_descriptions: cfg.max_descriptions,
            templates: catalog.templates().to_vec(),
            lambda: cfg.lambda,
            backend: backend.name().to_string(),
            cached: opts.cache.is_some(),
        },
        predictions,
        reports,
        wall_seconds: start.elapsed().as_secs_f64(),
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::ManifestRecord;
    use crate::text_prompt::DescriptionSet;

    fn e(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; 4];
        v[i] = 1.0;
        v
    }

    /// Class "a" describes exactly what every crop shows; "b" is orthogonal.
    fn perfect() -> (PrecomputedStore, LabelCatalog) {
        let mut s = PrecomputedStore::new(4, true).unwrap();
        s.insert("img", &e(0)).unwrap();
        s.insert("img::0", &e(0)).unwrap();
        s.insert("img::1", &e(0)).unwrap();
        s.insert("cls::a", &e(0)).unwrap();
        s.insert("a::0", &e(0)).unwrap();
        s.insert("a::1", &e(0)).unwrap();
        s.insert("cls::b", &e(2)).unwrap();
        s.insert("b::0", &e(2)).unwrap();
        s.insert("b::1", &e(3)).unwrap();
        let c = LabelCatalog::new(vec![
            DescriptionSet { label: "a".into(), descriptions: vec!["a0".into(), "a1".into()] },
            DescriptionSet { label: "b".into(), descriptions: vec!["b0".into(), "b1".into()] },
        ])
        .unwrap();
        (s, c)
    }

    fn cfg(agg: Aggregation, crops: usize) -> RunConfig {
        RunConfig {
            aggregation: agg,
            prompt: PromptConfig { num_crops: crops, ..PromptConfig::default() },
            ..RunConfig::default()
        }
    }

    #[test]
    fn perfect_alignment() {
        let (s, c) = perfect();
        for agg in [Aggregation::Wca, Aggregation::Avg, Aggregation::Max] {
            let r = classify("img", None, &c, &s, &cfg(agg, 2)).unwrap();
            assert_eq!(r.predicted_label, "a");
            assert!((r.per_class_scores["a"] - 1.0).abs() < 1e-12);
            assert!(r.per_class_scores["b"].abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_always_wins() {
        let (s, _) = perfect();
        let c = LabelCatalog::new(vec![DescriptionSet { label: "b".into(), descriptions: vec!["b0".into()] }]).unwrap();
        let r = classify("img", None, &c, &s, &cfg(Aggregation::Wca, 2)).unwrap();
        assert_eq!(r.predicted_label, "b");
    }

    #[test]
    fn ties_go_to_first_class() {
        assert_eq!(argmax_first(&[0.2, 0.5, 0.5]), Some(1));
        assert_eq!(argmax_first(&[0.0, 0.0]), Some(0));
        assert_eq!(argmax_first(&[]), None);
    }

    #[test]
    fn explanation_rows_sum_to_score() {
        let (s, c) = perfect();
        let r = explain("img", None, &c, &s, &cfg(Aggregation::Wca, 2)).unwrap();
        let ex = r.explanation.unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].label, "a");
        for class in &ex {
            let total: f64 = class.rows.iter().map(|row| row.contribution).sum();
            assert!((total - r.per_class_scores[&class.label]).abs() < 1e-9);
            assert!(class.rows.windows(2).all(|w| w[0].contribution >= w[1].contribution));
        }
    }

    #[test]
    fn single_description_row() {
        let (s, _) = perfect();
        let c = LabelCatalog::new(vec![DescriptionSet { label: "b".into(), descriptions: vec!["b0".into()] }]).unwrap();
        let r = explain("img", None, &c, &s, &cfg(Aggregation::Wca, 2)).unwrap();
        let rows = &r.explanation.unwrap()[0].rows;
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].weight, 1.0);
        assert_eq!(rows[0].contribution, r.per_class_scores["b"]);
    }

    #[test]
    fn explain_needs_a_matrix() {
        let (s, c) = perfect();
        assert!(matches!(
            explain("img", None, &c, &s, &cfg(Aggregation::Clip, 2)),
            Err(WcaError::ExplanationUnavailable(_))
        ));
    }

    #[test]
    fn lambda_validation() {
        let mut c = cfg(Aggregation::Wca, 2);
        c.lambda = Some(0.5);
        assert!(matches!(c.validate(), Err(WcaError::Config(_))));
        c.aggregation = Aggregation::Mixed;
        assert!(c.validate().is_ok());
        c.lambda = Some(1.5);
        assert!(c.validate().is_err());
        c.lambda = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mixed_endpoints() {
        let (s, c) = perfect();
        let wca = classify("img", None, &c, &s, &cfg(Aggregation::Wca, 2)).unwrap();
        let mut m = cfg(Aggregation::Mixed, 2);
        m.lambda = Some(0.0);
        let r = classify("img", None, &c, &s, &m).unwrap();
        for (l, v) in &wca.per_class_scores {
            assert!((r.per_class_scores[l] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_patch_is_an_error() {
        let (s, c) = perfect();
        assert!(matches!(
            classify("img", None, &c, &s, &cfg(Aggregation::Wca, 3)),
            Err(WcaError::MissingEmbedding(k)) if k == "img::2"
        ));
    }

    #[test]
    fn evaluate_perfect_and_empty() {
        let (s, c) = perfect();
        let m = DatasetManifest::new(vec![ManifestRecord { id: "img".into(), label: "a".into() }]).unwrap();
        let r = evaluate(&m, &c, &s, &cfg(Aggregation::Wca, 2), EvalOptions::default()).unwrap();
        assert_eq!(r.top1, 1.0);
        assert_eq!(r.confusion["a"]["a"], 1);
        assert_eq!(r.per_class["b"].accuracy, None);
        let empty = DatasetManifest::default();
        assert!(matches!(
            evaluate(&empty, &c, &s, &cfg(Aggregation::Wca, 2), EvalOptions::default()),
            Err(WcaError::Domain(_))
        ));
        let bad = DatasetManifest::new(vec![ManifestRecord { id: "img".into(), label: "zebra".into() }]).unwrap();
        assert!(evaluate(&bad, &c, &s, &cfg(Aggregation::Wca, 2), EvalOptions::default()).is_err());
    }

    #[test]
    fn cache_matches_and_checks_dim() {
        let (s, c) = perfect();
        let m = DatasetManifest::new(vec![ManifestRecord { id: "img".into(), label: "a".into() }]).unwrap();
        let run = cfg(Aggregation::Wca, 2);
        let cache = precompute_cache(&m, &c, &s, &run, None, None).unwrap();
        assert_eq!(cache.store().len(), 3);
        let cached = evaluate(&m, &c, &s, &run, EvalOptions { jobs: None, cache: Some(&cache) }).unwrap();
        let plain = evaluate(&m, &c, &s, &run, EvalOptions::default()).unwrap();
        assert_eq!(cached.predictions[0].predicted, plain.predictions[0].predicted);
        assert!((cached.predictions[0].score - plain.predictions[0].score).abs() < 1e-6);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wem1");
        cache.write(&path).unwrap();
        assert_eq!(AugmentedCache::load(&path, 4).unwrap(), cache);
        assert!(matches!(AugmentedCache::load(&path, 8), Err(WcaError::CacheInvalid { .. })));
        assert!(precompute_cache(&m, &c, &s, &cfg(Aggregation::Avg, 2), None, None).is_err());
    }

    #[test]
    fn aggregation_names_round_trip() {
        for a in [
            Aggregation::Wca,
            Aggregation::Avg,
            Aggregation::Max,
            Aggregation::Llm,
            Aggregation::Clip,
            Aggregation::ClipE,
            Aggregation::Mixed,
        ] {
            assert_eq!(a.as_str().parse::<Aggregation>().unwrap(), a);
        }
        assert!("median".parse::<Aggregation>().is_err());
    }
}
