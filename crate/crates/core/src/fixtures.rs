//! Seeded synthetic fixture bundles.
//!
//! Each bundle is a directory holding `manifest.jsonl`, `descriptions.json`,
//! `embeddings.wem1` (unit-normalized, precomputed crops), `meta.json` and
//! `oracle.json` (expected outputs of [`crate::oracle`] for max, avg and
//! wca). All vectors come from one stream per bundle, `Stream::new(seed,
//! <bundle name>)`, drawn in the order documented on each recipe.
//!
//! Noise terms are `σ · z / sqrt(d)` with `z` standard normal, so their
//! norm is close to `σ`. Every stored vector is normalized after mixing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::encoder::{description_key, label_key, patch_key, PrecomputedStore};
use crate::error::{Result, WcaError};
use crate::manifest::{DatasetManifest, ManifestRecord};
use crate::oracle::{self, OracleAgg, OracleClass, OracleImage, OracleRun};
use crate::rng::Stream;
use crate::text_prompt::{DescriptionSet, LabelCatalog};

pub const CLASSIFY_01: &str = "fx-classify-01";
pub const BENCH_NOISY: &str = "fx-bench-noisy";

const LABELS: [&str; 10] = [
    "heron", "lantern", "fern", "anvil", "otter", "kettle", "quartz", "tulip", "walrus", "zither",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureMeta {
    pub name: String,
    pub seed: u64,
    pub dim: usize,
    pub crops: usize,
    pub descriptions: usize,
    pub classes: usize,
    pub images: usize,
    pub recipe: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleFile {
    pub fixture: String,
    pub seed: u64,
    pub crops: usize,
    pub runs: Vec<OracleRun>,
}

/// One generated bundle, in memory.
#[derive(Debug, Clone)]
pub struct FixtureBundle {
    pub meta: FixtureMeta,
    pub manifest: DatasetManifest,
    pub catalog: LabelCatalog,
    pub store: PrecomputedStore,
    pub oracle: Vec<OracleRun>,
}

impl FixtureBundle {
    pub fn oracle_run(&self, agg: OracleAgg) -> &OracleRun {
        self.oracle
            .iter()
            .find(|r| r.aggregation == agg)
            .expect("every bundle carries all oracle runs")
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| WcaError::io(dir, e))?;
        self.manifest.write(dir.join("manifest.jsonl"))?;
        write_text(&dir.join("descriptions.json"), &self.catalog.to_json())?;
        self.store.write(dir.join("embeddings.wem1"))?;
        write_text(&dir.join("meta.json"), &pretty(&self.meta))?;
        let oracle = OracleFile {
            fixture: self.meta.name.clone(),
            seed: self.meta.seed,
            crops: self.meta.crops,
            runs: self.oracle.clone(),
        };
        write_text(&dir.join("oracle.json"), &pretty(&oracle))
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("fixture metadata serializes");
    s.push('\n');
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| WcaError::io(path, e))
}

struct Draw<'a> {
    stream: &'a mut Stream,
    dim: usize,
}

impl Draw<'_> {
    fn unit(&mut self) -> Vec<f64> {
        unit(self.stream.normal_vec(self.dim))
    }

    fn noise(&mut self, sigma: f64) -> Vec<f64> {
        let s = sigma / (self.dim as f64).sqrt();
        self.stream.normal_vec(self.dim).into_iter().map(|z| s * z).collect()
    }

    /// `unit(Σ c_k v_k + noise(sigma))`.
    fn mix(&mut self, parts: &[(f64, &[f64])], sigma: f64) -> Vec<f64> {
        let mut out = self.noise(sigma);
        for (c, v) in parts {
            for (o, x) in out.iter_mut().zip(v.iter()) {
                *o += c * x;
            }
        }
        unit(out)
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

struct Builder {
    store: PrecomputedStore,
    records: Vec<ManifestRecord>,
    classes: Vec<DescriptionSet>,
}

impl Builder {
    fn new(dim: usize) -> Result<Self> {
        Ok(Builder {
            store: PrecomputedStore::new(dim, true)?,
            records: Vec::new(),
            classes: Vec::new(),
        })
    }

    fn finish(self, meta: FixtureMeta) -> Result<FixtureBundle> {
        let manifest = DatasetManifest::new(self.records)?;
        let catalog = LabelCatalog::new(self.classes)?;
        let oracle = run_oracle(&self.store, &manifest, &catalog, meta.crops);
        Ok(FixtureBundle {
            meta,
            manifest,
            catalog,
            store: self.store,
            oracle,
        })
    }
}

/// Oracle runs (max, avg, wca) over a store laid out with the standard keys.
pub fn run_oracle(
    store: &PrecomputedStore,
    manifest: &DatasetManifest,
    catalog: &LabelCatalog,
    crops: usize,
) -> Vec<OracleRun> {
    let classes: Vec<OracleClass> = catalog
        .classes()
        .iter()
        .map(|c| OracleClass::from_store(store, &c.label, c.descriptions.len()))
        .collect();
    let images: Vec<(String, String, OracleImage)> = manifest
        .records
        .iter()
        .map(|r| (r.id.clone(), r.label.clone(), OracleImage::from_store(store, &r.id, crops)))
        .collect();
    OracleAgg::ALL
        .iter()
        .map(|&agg| oracle::run(agg, &images, &classes))
        .collect()
}

/// Three classes, one image each, 8 crops, 5 descriptions, d = 16.
///
/// Draw order: per class a prototype `p`, the label prompt
/// `unit(p + noise(0.3))`, descriptions `j = 0..5` as
/// `unit(p + noise(0.6 + 0.2 j))`. Then per class one image `<label>.png`:
/// whole `unit(p + noise(0.8))`, crops `i = 0..8` as
/// `unit(a_i p + noise(1.0))` with `a_i ~ U(0.2, 1.0)` drawn before each crop.
pub fn classify_01(seed: u64) -> Result<FixtureBundle> {
    const DIM: usize = 16;
    const CROPS: usize = 8;
    const DESCS: usize = 5;
    let labels = &LABELS[..3];
    let mut stream = Stream::new(seed, CLASSIFY_01);
    let mut d = Draw { stream: &mut stream, dim: DIM };
    let mut b = Builder::new(DIM)?;

    let mut prototypes = Vec::new();
    for label in labels {
        let p = d.unit();
        b.store.insert(label_key(label), &d.mix(&[(1.0, &p)], 0.3))?;
        let mut descriptions = Vec::new();
        for j in 0..DESCS {
            b.store
                .insert(description_key(label, j), &d.mix(&[(1.0, &p)], 0.6 + 0.2 * j as f64))?;
            descriptions.push(format!("{label} detail {j}"));
        }
        b.classes.push(DescriptionSet {
            label: label.to_string(),
            descriptions,
        });
        prototypes.push(p);
    }
    for (label, p) in labels.iter().zip(&prototypes) {
        let id = format!("{label}.png");
        b.store.insert(id.clone(), &d.mix(&[(1.0, p)], 0.8))?;
        for i in 0..CROPS {
            let a = d.stream.uniform(0.2, 1.0);
            b.store.insert(patch_key(&id, i), &d.mix(&[(a, p)], 1.0))?;
        }
        b.records.push(ManifestRecord {
            id,
            label: label.to_string(),
        });
    }
    b.finish(FixtureMeta {
        name: CLASSIFY_01.to_string(),
        seed,
        dim: DIM,
        crops: CROPS,
        descriptions: DESCS,
        classes: labels.len(),
        images: labels.len(),
        recipe: "prototype p per class; prompt unit(p+noise(0.3)); description j unit(p+noise(0.6+0.2j)); \
                 whole unit(p+noise(0.8)); crop i unit(a_i p+noise(1.0)), a_i~U(0.2,1)"
            .to_string(),
    })
}

/// Knobs of the noisy benchmark recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyRecipe {
    pub dim: usize,
    pub classes: usize,
    pub images_per_class: usize,
    pub crops: usize,
    pub object_crops: usize,
    pub visual_descriptions: usize,
    pub context_descriptions: usize,
    pub backgrounds: usize,
    pub prompt_noise: f64,
    pub visual_noise: f64,
    pub context_share: f64,
    pub context_noise: f64,
    pub object_noise: f64,
    pub background_leak: f64,
    pub background_noise: f64,
    pub whole_background: f64,
    pub whole_noise: f64,
}

impl Default for NoisyRecipe {
    fn default() -> Self {
        NoisyRecipe {
            dim: 32,
            classes: 10,
            images_per_class: 20,
            crops: 12,
            object_crops: 4,
            visual_descriptions: 5,
            context_descriptions: 5,
            backgrounds: 3,
            prompt_noise: 0.3,
            visual_noise: 0.8,
            context_share: 0.5,
            context_noise: 0.8,
            object_noise: 1.6,
            background_leak: 0.3,
            background_noise: 0.8,
            whole_background: 0.6,
            whole_noise: 1.0,
        }
    }
}

impl NoisyRecipe {
    fn describe(&self) -> String {
        format!(
            "prototypes p_c and shared backgrounds b_k (k<{bg}); prompt unit(p+noise({pn})); \
             visual descriptions unit(p+noise({vn})); context descriptions unit({cs} p + b_(c mod {bg}) + noise({cn})); \
             per image a background k~U{{0..{bg}}}; object crops unit(p+noise({on})); \
             background crops unit(b_k + {bl} p + noise({bn})); whole unit(p + {wb} b_k + noise({wn}))",
            bg = self.backgrounds,
            pn = self.prompt_noise,
            vn = self.visual_noise,
            cs = self.context_share,
            cn = self.context_noise,
            on = self.object_noise,
            bl = self.background_leak,
            bn = self.background_noise,
            wb = self.whole_background,
            wn = self.whole_noise,
        )
    }
}

/// Ten classes x twenty images with distracting background crops and
/// context descriptions that describe backgrounds rather than the object.
///
/// Draw order: prototypes for all classes, then backgrounds. Per class: the
/// prompt, visual descriptions, context descriptions (context description
/// of class `c` lean on background `c mod backgrounds`). Per image in class
/// order: background index, whole image, object crops, background crops.
pub fn bench_noisy(seed: u64) -> Result<FixtureBundle> {
    bench_noisy_with(seed, &NoisyRecipe::default())
}

pub fn bench_noisy_with(seed: u64, r: &NoisyRecipe) -> Result<FixtureBundle> {
    if r.classes > LABELS.len() || r.object_crops > r.crops || r.backgrounds == 0 {
        return Err(WcaError::config("noisy recipe out of range"));
    }
    let labels = &LABELS[..r.classes];
    let mut stream = Stream::new(seed, BENCH_NOISY);
    let mut d = Draw {
        stream: &mut stream,
        dim: r.dim,
    };
    let mut b = Builder::new(r.dim)?;

    let prototypes: Vec<Vec<f64>> = (0..r.classes).map(|_| d.unit()).collect();
    let backgrounds: Vec<Vec<f64>> = (0..r.backgrounds).map(|_| d.unit()).collect();

    for (c, label) in labels.iter().enumerate() {
        let p = &prototypes[c];
        b.store.insert(label_key(label), &d.mix(&[(1.0, p)], r.prompt_noise))?;
        let mut descriptions = Vec::new();
        for j in 0..r.visual_descriptions {
            b.store.insert(description_key(label, j), &d.mix(&[(1.0, p)], r.visual_noise))?;
            descriptions.push(format!("{label} detail {j}"));
        }
        for j in 0..r.context_descriptions {
            let bg = &backgrounds[c % r.backgrounds];
            let idx = r.visual_descriptions + j;
            b.store.insert(
                description_key(label, idx),
                &d.mix(&[(r.context_share, p), (1.0, bg)], r.context_noise),
            )?;
            descriptions.push(format!("{label} context {j}"));
        }
        b.classes.push(DescriptionSet {
            label: label.to_string(),
            descriptions,
        });
    }

    for (c, label) in labels.iter().enumerate() {
        let p = &prototypes[c];
        for n in 0..r.images_per_class {
            let id = format!("{label}/{n:02}.png");
            let k = d.stream.index_inclusive(r.backgrounds as u64 - 1) as usize;
            let bg = &backgrounds[k];
            b.store
                .insert(id.clone(), &d.mix(&[(1.0, p), (r.whole_background, bg)], r.whole_noise))?;
            for i in 0..r.crops {
                let v = if i < r.object_crops {
                    d.mix(&[(1.0, p)], r.object_noise)
                } else {
                    d.mix(&[(1.0, bg), (r.background_leak, p)], r.background_noise)
                };
                b.store.insert(patch_key(&id, i), &v)?;
            }
            b.records.push(ManifestRecord {
                id,
                label: label.to_string(),
            });
        }
    }

    b.finish(FixtureMeta {
        name: BENCH_NOISY.to_string(),
        seed,
        dim: r.dim,
        crops: r.crops,
        descriptions: r.visual_descriptions + r.context_descriptions,
        classes: r.classes,
        images: r.classes * r.images_per_class,
        recipe: r.describe(),
    })
}

/// Writes both bundles under `out_dir/<bundle name>/`.
pub fn gen_fixtures(seed: u64, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let mut written = Vec::new();
    for bundle in [classify_01(seed)?, bench_noisy(seed)?] {
        let dir = out_dir.join(&bundle.meta.name);
        bundle.write(&dir)?;
        written.push(dir);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_01_shape() {
        let b = classify_01(0).unwrap();
        assert_eq!(b.manifest.len(), 3);
        assert_eq!(b.catalog.len(), 3);
        // 3 prompts + 15 descriptions + 3 wholes + 24 crops
        assert_eq!(b.store.len(), 45);
        assert!(b.store.is_normalized());
    }

    #[test]
    fn bench_shape() {
        let b = bench_noisy(0).unwrap();
        assert_eq!(b.manifest.len(), 200);
        assert_eq!(b.catalog.len(), 10);
        assert_eq!(b.store.len(), 10 * 11 + 200 * 13);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = bench_noisy(5).unwrap();
        let b = bench_noisy(5).unwrap();
        assert_eq!(a.store.to_bytes(), b.store.to_bytes());
        assert_ne!(a.store.to_bytes(), bench_noisy(6).unwrap().store.to_bytes());
    }

    #[test]
    fn written_bundle_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let paths = gen_fixtures(0, dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        for p in &paths {
            for f in ["manifest.jsonl", "descriptions.json", "embeddings.wem1", "meta.json", "oracle.json"] {
                assert!(p.join(f).is_file(), "{}", p.join(f).display());
            }
        }
        let b = classify_01(0).unwrap();
        let store = PrecomputedStore::read(paths[0].join("embeddings.wem1")).unwrap();
        assert_eq!(store, b.store);
        let m = DatasetManifest::load(paths[0].join("manifest.jsonl")).unwrap();
        assert_eq!(m, b.manifest);
    }
}
