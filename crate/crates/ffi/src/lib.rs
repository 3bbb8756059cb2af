//! C ABI over `wca-core`.
//!
//! Conventions:
//!
//! * Every fallible function returns a [`WcaStatus`]; results go through
//!   out-pointers that are written only on success.
//! * On failure, [`wca_last_error_message`] describes the most recent error
//!   on the calling thread.
//! * Handles ([`WcaStore`], [`WcaCatalog`]) are opaque and freed with their
//!   `_free` function. Strings returned as `char *` are freed with
//!   [`wca_string_free`]; `const char *` results are borrowed.
//! * Panics never cross the boundary; they surface as `WCA_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use wca_core::classifier::{evaluate, Classifier, EvalOptions};
use wca_core::encoder::PrecomputedStore;
use wca_core::manifest::DatasetManifest;
use wca_core::math::{cosine, softmax};
use wca_core::scoring::{wca_score, SimilarityMatrix};
use wca_core::text_prompt::{load_descriptions, LabelCatalog};
use wca_core::theorem::{counterexample_probe, TheoremConfig};
use wca_core::visual_prompt::{PromptConfig, PromptStyle};
use wca_core::{Aggregation, RunConfig, WcaError, WeightVector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WcaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    Dimension = 4,
    Config = 5,
    MissingEmbedding = 6,
    Io = 7,
    Format = 8,
    Ingestion = 9,
    CacheInvalid = 10,
    Construction = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// Score aggregation, mirroring the `--agg` values of the command line.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WcaAggregation {
    Wca = 0,
    Avg = 1,
    Max = 2,
    Llm = 3,
    Clip = 4,
    ClipE = 5,
    Mixed = 6,
}

/// Run settings for classification and evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WcaConfig {
    pub aggregation: WcaAggregation,
    pub alpha: f64,
    pub beta: f64,
    /// Crops per image; 0 means the number stored for the image.
    pub num_crops: usize,
    pub seed: u64,
    /// Used only when `has_lambda` is nonzero.
    pub lambda: f64,
    pub has_lambda: u8,
}

/// Summary of a theorem probe.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct WcaProbeSummary {
    pub trials: usize,
    pub violations: usize,
    /// Meaningful only when `trials > 0`.
    pub max_cos: f64,
    pub worst_seed: u64,
    pub linearity_max_err: f64,
}

/// Embedding store loaded from a WEM1 file.
pub struct WcaStore {
    inner: PrecomputedStore,
}

/// Class catalog loaded from a description JSON file.
pub struct WcaCatalog {
    inner: LabelCatalog,
    labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &WcaError) -> WcaStatus {
    match e {
        WcaError::Domain(_) | WcaError::Bounds { .. } | WcaError::ExplanationUnavailable(_) => WcaStatus::Domain,
        WcaError::Dimension { .. } => WcaStatus::Dimension,
        WcaError::Config(_) => WcaStatus::Config,
        WcaError::MissingEmbedding(_) => WcaStatus::MissingEmbedding,
        WcaError::Io { .. } => WcaStatus::Io,
        WcaError::Format { .. } | WcaError::Decode { .. } => WcaStatus::Format,
        WcaError::Ingestion { .. } => WcaStatus::Ingestion,
        WcaError::CacheInvalid { .. } => WcaStatus::CacheInvalid,
        WcaError::Construction { .. } => WcaStatus::Construction,
        WcaError::Image { source, .. } => status_of(source),
    }
}

struct Failure(WcaStatus, String);

impl From<WcaError> for Failure {
    fn from(e: WcaError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WcaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WcaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            WcaStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(WcaStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(WcaStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

impl WcaConfig {
    fn to_run_config(self, store: &PrecomputedStore, first_id: Option<&str>) -> RunConfig {
        let num_crops = match (self.num_crops, first_id) {
            (0, Some(id)) => store.patch_count(id),
            (n, _) => n,
        };
        RunConfig {
            aggregation: match self.aggregation {
                WcaAggregation::Wca => Aggregation::Wca,
                WcaAggregation::Avg => Aggregation::Avg,
                WcaAggregation::Max => Aggregation::Max,
                WcaAggregation::Llm => Aggregation::Llm,
                WcaAggregation::Clip => Aggregation::Clip,
                WcaAggregation::ClipE => Aggregation::ClipE,
                WcaAggregation::Mixed => Aggregation::Mixed,
            },
            prompt: PromptConfig {
                alpha: self.alpha,
                beta: self.beta,
                num_crops,
                seed: self.seed,
                style: PromptStyle::Crop,
            },
            lambda: (self.has_lambda != 0).then_some(self.lambda),
            max_descriptions: None,
        }
    }
}

/// Defaults: wca, alpha 0.5, beta 0.9, crops from the store, seed 0.
#[no_mangle]
pub extern "C" fn wca_config_default() -> WcaConfig {
    let d = PromptConfig::default();
    WcaConfig {
        aggregation: WcaAggregation::Wca,
        alpha: d.alpha,
        beta: d.beta,
        num_crops: 0,
        seed: 0,
        lambda: 0.0,
        has_lambda: 0,
    }
}

/// Message of the last failed call on this thread; empty if none.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wca_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn wca_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wca_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens a WEM1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wca_store_open(path: *const c_char, out: *mut *mut WcaStore) -> WcaStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let inner = PrecomputedStore::read(path)?;
        *out = Box::into_raw(Box::new(WcaStore { inner }));
        Ok(())
    })
}

/// # Safety
/// `store` must come from [`wca_store_open`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn wca_store_free(store: *mut WcaStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// # Safety
/// `store` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wca_store_dim(store: *const WcaStore, out: *mut usize) -> WcaStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(store, "store")?.inner.dim();
        Ok(())
    })
}

/// # Safety
/// `store` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wca_store_len(store: *const WcaStore, out: *mut usize) -> WcaStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(store, "store")?.inner.len();
        Ok(())
    })
}

/// Copies the vector stored under `id` into `buf` (`buf_len >= dim`).
///
/// # Safety
/// `store` live, `id` NUL-terminated, `buf` writable for `buf_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn wca_store_get(
    store: *const WcaStore,
    id: *const c_char,
    buf: *mut f64,
    buf_len: usize,
) -> WcaStatus {
    guard(|| {
        let store = &ref_arg(store, "store")?.inner;
        let e = store.lookup(str_arg(id, "id")?)?;
        if buf_len < e.dim() {
            return Err(Failure(
                WcaStatus::BufferTooSmall,
                format!("buffer holds {buf_len} values, need {}", e.dim()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        slice::from_raw_parts_mut(buf, e.dim()).copy_from_slice(e.as_slice());
        Ok(())
    })
}

/// Loads a description JSON file; `max_descriptions = 0` keeps all.
///
/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wca_catalog_open(
    path: *const c_char,
    max_descriptions: usize,
    out: *mut *mut WcaCatalog,
) -> WcaStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let inner = load_descriptions(path, (max_descriptions > 0).then_some(max_descriptions))?;
        let labels = inner
            .labels()
            .map(|l| CString::new(l).map_err(|_| Failure(WcaStatus::InvalidUtf8, format!("label {l:?} has a NUL"))))
            .collect::<Result<Vec<_>, _>>()?;
        *out = Box::into_raw(Box::new(WcaCatalog { inner, labels }));
        Ok(())
    })
}

/// # Safety
/// `catalog` must come from [`wca_catalog_open`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn wca_catalog_free(catalog: *mut WcaCatalog) {
    if !catalog.is_null() {
        drop(Box::from_raw(catalog));
    }
}

/// # Safety
/// `catalog` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wca_catalog_len(catalog: *const WcaCatalog, out: *mut usize) -> WcaStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(catalog, "catalog")?.inner.len();
        Ok(())
    })
}

/// Label of class `index`, borrowed for the catalog's lifetime.
///
/// # Safety
/// `catalog` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wca_catalog_label(
    catalog: *const WcaCatalog,
    index: usize,
    out: *mut *const c_char,
) -> WcaStatus {
    guard(|| {
        let catalog = ref_arg(catalog, "catalog")?;
        let out = out_arg(out, "out")?;
        let label = catalog.labels.get(index).ok_or_else(|| {
            Failure(
                WcaStatus::Domain,
                format!("class index {index} out of range for {} classes", catalog.labels.len()),
            )
        })?;
        *out = label.as_ptr();
        Ok(())
    })
}

/// Classifies a stored image. Writes one score per class, in catalog
/// order, to `scores` (`scores_len >= number of classes`) and the winning
/// class index to `predicted`.
///
/// # Safety
/// Handles live; `image_id` NUL-terminated; `cfg`, `predicted` valid;
/// `scores` writable for `scores_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn wca_classify(
    store: *const WcaStore,
    catalog: *const WcaCatalog,
    cfg: *const WcaConfig,
    image_id: *const c_char,
    scores: *mut f64,
    scores_len: usize,
    predicted: *mut usize,
) -> WcaStatus {
    guard(|| {
        let store = &ref_arg(store, "store")?.inner;
        let catalog = &ref_arg(catalog, "catalog")?.inner;
        let cfg = *ref_arg(cfg, "cfg")?;
        let id = str_arg(image_id, "image_id")?;
        let predicted = out_arg(predicted, "predicted")?;
        if scores_len < catalog.len() {
            return Err(Failure(
                WcaStatus::BufferTooSmall,
                format!("score buffer holds {scores_len} values, need {}", catalog.len()),
            ));
        }
        if scores.is_null() {
            return Err(null("scores"));
        }
        let run = cfg.to_run_config(store, Some(id));
        let report = Classifier::new(catalog, store, run)?.classify(id, None, false)?;
        let out = slice::from_raw_parts_mut(scores, catalog.len());
        for (o, s) in out.iter_mut().zip(report.per_class_scores.values()) {
            *o = *s;
        }
        *predicted = report.predicted_index;
        Ok(())
    })
}

/// Evaluates a JSONL manifest and returns the accuracy report as JSON.
/// Free the string with [`wca_string_free`].
///
/// # Safety
/// Handles live; `manifest_path` NUL-terminated; `cfg` valid; `json_out` writable.
#[no_mangle]
pub unsafe extern "C" fn wca_evaluate_json(
    store: *const WcaStore,
    catalog: *const WcaCatalog,
    cfg: *const WcaConfig,
    manifest_path: *const c_char,
    json_out: *mut *mut c_char,
) -> WcaStatus {
    guard(|| {
        let store = &ref_arg(store, "store")?.inner;
        let catalog = &ref_arg(catalog, "catalog")?.inner;
        let cfg = *ref_arg(cfg, "cfg")?;
        let manifest = DatasetManifest::load(str_arg(manifest_path, "manifest_path")?)?;
        let json_out = out_arg(json_out, "json_out")?;
        let run = cfg.to_run_config(store, manifest.records.first().map(|r| r.id.as_str()));
        let report = evaluate(&manifest, catalog, store, &run, EvalOptions::default())?;
        *json_out = CString::new(report.to_json()).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Cosine similarity of two `dim`-vectors.
///
/// # Safety
/// `a`, `b` readable for `dim` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wca_cosine(a: *const f64, b: *const f64, dim: usize, out: *mut f64) -> WcaStatus {
    guard(|| {
        let a = slice_arg(a, dim, "a")?;
        let b = slice_arg(b, dim, "b")?;
        *out_arg(out, "out")? = cosine(a, b)?;
        Ok(())
    })
}

/// Softmax of `n` scores into `out`.
///
/// # Safety
/// `scores` readable and `out` writable for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn wca_softmax(scores: *const f64, n: usize, out: *mut f64) -> WcaStatus {
    guard(|| {
        let w = softmax(slice_arg(scores, n, "scores")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        slice::from_raw_parts_mut(out, n).copy_from_slice(w.as_slice());
        Ok(())
    })
}

/// `Σ_i Σ_j w_i v_j sims[i][j]` for a row-major `n x m` matrix.
///
/// # Safety
/// `sims` readable for `n * m` doubles, `w` for `n`, `v` for `m`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wca_weighted_score(
    sims: *const f64,
    n: usize,
    m: usize,
    w: *const f64,
    v: *const f64,
    out: *mut f64,
) -> WcaStatus {
    guard(|| {
        let total = n
            .checked_mul(m)
            .ok_or_else(|| Failure(WcaStatus::Domain, "matrix size overflows".into()))?;
        let values = slice_arg(sims, total, "sims")?;
        let rows: Vec<Vec<f64>> = values.chunks(m.max(1)).map(<[f64]>::to_vec).collect();
        let matrix = SimilarityMatrix::from_rows(&rows)?;
        let w = WeightVector::from_weights(slice_arg(w, n, "w")?.to_vec())?;
        let v = WeightVector::from_weights(slice_arg(v, m, "v")?.to_vec())?;
        *out_arg(out, "out")? = wca_score(&matrix, &w, &v)?;
        Ok(())
    })
}

/// Runs `trials` theorem instances with trial seeds `seed, seed + 1, ...`.
///
/// # Safety
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wca_theorem_probe(
    seed: u64,
    trials: usize,
    d_in: usize,
    d_out: usize,
    cos2_max: f64,
    out: *mut WcaProbeSummary,
) -> WcaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let s = counterexample_probe(seed, trials, &TheoremConfig::new(d_in, d_out, cos2_max))?;
        *out = WcaProbeSummary {
            trials: s.trials,
            violations: s.violations,
            max_cos: s.max_cos.unwrap_or(f64::NAN),
            worst_seed: s.worst_seed.unwrap_or(0),
            linearity_max_err: s.linearity_max_err,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn errors_map_to_codes() {
        assert_eq!(status_of(&WcaError::config("x")), WcaStatus::Config);
        let nested = WcaError::Image {
            id: "a".into(),
            source: Box::new(WcaError::MissingEmbedding("a::0".into())),
        };
        assert_eq!(status_of(&nested), WcaStatus::MissingEmbedding);
    }

    #[test]
    fn null_pointers_are_reported() {
        let mut out = 0.0;
        let st = unsafe { wca_cosine(ptr::null(), ptr::null(), 2, &mut out) };
        assert_eq!(st, WcaStatus::NullArgument);
        let msg = unsafe { CStr::from_ptr(wca_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("null"));
    }
}
