use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use wca_core::bench::{bench_timing, DEFAULT_BENCH_CROPS};
use wca_core::classifier::{evaluate, precompute_cache, AugmentedCache, Classifier, EvalOptions};
use wca_core::encoder::{EncoderBackend, PrecomputedStore, SyntheticEncoder};
use wca_core::fixtures::gen_fixtures;
use wca_core::manifest::DatasetManifest;
use wca_core::text_prompt::{load_descriptions, LabelCatalog, DEFAULT_MAX_DESCRIPTIONS, DEFAULT_TEMPLATE};
use wca_core::theorem::{counterexample_probe, TheoremConfig, DEFAULT_COS2_MAX};
use wca_core::visual_prompt::{ImageBuffer, PromptConfig, PromptStyle, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_CROPS};
use wca_core::{Aggregation, Result, RunConfig, WcaError};

/// Weights for the synthetic encoder's projection. Fixed so that `--seed`
/// only changes crops.
const MODEL_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "wca", version, about = "Zero-shot classification by weighted visual-text cross alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify individual images and print per-class scores.
    Classify(ClassifyArgs),
    /// Evaluate top-1 accuracy over a manifest.
    Eval(EvalArgs),
    /// Precompute augmented embeddings for a manifest and catalog.
    Cache(CacheArgs),
    /// Time cropping and encoding against the number of crops.
    Bench(BenchArgs),
    /// Probe the linear-encoder misalignment theorem on random instances.
    Theorem(TheoremArgs),
    /// Write the seeded fixture bundles.
    GenFixtures(GenFixturesArgs),
}

#[derive(Args)]
struct Backend {
    /// WEM1 file of precomputed embeddings.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    embeddings: Option<PathBuf>,
    /// Built-in model, `synthetic` or `synthetic:<dim>`.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct Catalog {
    /// JSON object mapping class names to description lists.
    #[arg(long)]
    descriptions: PathBuf,
    /// Keep the first M descriptions per class.
    #[arg(long, default_value_t = DEFAULT_MAX_DESCRIPTIONS)]
    max_descriptions: usize,
    /// Label prompt template with one `{}`; repeat for an ensemble, the first one anchors description weights.
    #[arg(long = "template", default_values_t = [DEFAULT_TEMPLATE.to_string()])]
    templates: Vec<String>,
}

#[derive(Args)]
struct Scoring {
    #[arg(long, default_value = "wca", value_parser = parse_agg)]
    agg: Aggregation,
    /// Whole-image share for `--agg mixed`.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    /// Crops per image. With --embeddings the default is the number of crops stored for the first image.
    #[arg(long)]
    crops: Option<usize>,
    #[arg(long, default_value = "crop", value_parser = parse_style)]
    prompt_style: PromptStyle,
    #[arg(long, env = "WCA_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    backend: Backend,
    #[command(flatten)]
    catalog: Catalog,
    #[command(flatten)]
    scoring: Scoring,
    /// Image id to classify; repeatable.
    #[arg(long = "id")]
    ids: Vec<String>,
    /// Image file to classify; repeatable.
    #[arg(long = "image")]
    images: Vec<PathBuf>,
    /// Classify every record of this manifest when no --id or --image is given.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory image ids resolve against.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Add per-description contributions for the top two classes.
    #[arg(long)]
    explain: bool,
    /// Score from a cache written by `wca cache` instead of embedding.
    #[arg(long, conflicts_with = "explain")]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    backend: Backend,
    #[command(flatten)]
    catalog: Catalog,
    #[command(flatten)]
    scoring: Scoring,
    /// JSONL manifest of {"id", "label"} records.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CacheArgs {
    #[command(flatten)]
    backend: Backend,
    #[command(flatten)]
    catalog: Catalog,
    #[command(flatten)]
    scoring: Scoring,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    root: Option<PathBuf>,
    /// Output WEM1 file.
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// Sample image; repeatable.
    #[arg(long = "image", required = true)]
    images: Vec<PathBuf>,
    #[arg(long, default_value = "synthetic")]
    model: String,
    /// Crop counts to time; 0 is the whole-image baseline.
    #[arg(long = "n", value_delimiter = ',', default_values_t = DEFAULT_BENCH_CROPS)]
    crop_counts: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value = "crop", value_parser = parse_style)]
    prompt_style: PromptStyle,
    #[arg(long, env = "WCA_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoremArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Input dimension; also the output dimension unless --d-out is given.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long)]
    d_out: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_COS2_MAX, allow_negative_numbers = true)]
    cos2_max: f64,
    #[arg(long, env = "WCA_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenFixturesArgs {
    #[arg(long, env = "WCA_SEED", default_value_t = 0)]
    seed: u64,
    /// Directory receiving one subdirectory per bundle.
    #[arg(long)]
    out: PathBuf,
}

fn parse_agg(s: &str) -> std::result::Result<Aggregation, String> {
    s.parse().map_err(|e: WcaError| e.to_string())
}

fn parse_style(s: &str) -> std::result::Result<PromptStyle, String> {
    s.parse().map_err(|e: WcaError| e.to_string())
}

enum LoadedBackend {
    Store(PrecomputedStore),
    Synthetic(SyntheticEncoder),
}

impl LoadedBackend {
    fn open(b: &Backend) -> Result<Self> {
        match (&b.embeddings, &b.model) {
            (Some(path), None) => {
                let store = PrecomputedStore::read(path)?;
                info!("loaded {} embeddings of dim {} from {}", store.len(), store.dim(), path.display());
                Ok(LoadedBackend::Store(store))
            }
            (None, Some(spec)) => Ok(LoadedBackend::Synthetic(SyntheticEncoder::from_model_spec(spec, MODEL_SEED)?)),
            _ => Err(WcaError::config("pass exactly one of --embeddings or --model")),
        }
    }

    fn get(&self) -> &dyn EncoderBackend {
        match self {
            LoadedBackend::Store(s) => s,
            LoadedBackend::Synthetic(s) => s,
        }
    }

    /// Crop count when --crops is absent.
    fn default_crops(&self, first_id: Option<&str>) -> usize {
        match (self, first_id) {
            (LoadedBackend::Store(s), Some(id)) => match s.patch_count(id) {
                0 => DEFAULT_CROPS,
                n => n,
            },
            _ => DEFAULT_CROPS,
        }
    }
}

fn load_catalog(c: &Catalog) -> Result<LabelCatalog> {
    load_descriptions(&c.descriptions, Some(c.max_descriptions))?.with_templates(c.templates.clone())
}

fn run_config(s: &Scoring, c: &Catalog, crops: usize) -> RunConfig {
    RunConfig {
        aggregation: s.agg,
        prompt: PromptConfig {
            alpha: s.alpha,
            beta: s.beta,
            num_crops: crops,
            seed: s.seed,
            style: s.prompt_style,
        },
        lambda: s.lambda,
        max_descriptions: Some(c.max_descriptions),
    }
}

fn jobs_checked(jobs: Option<usize>) -> Result<Option<usize>> {
    match jobs {
        Some(0) => Err(WcaError::config("--jobs must be at least 1")),
        j => Ok(j),
    }
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, body).map_err(|e| WcaError::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| WcaError::io("<stdout>", e))
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn classify_cmd(a: &ClassifyArgs) -> Result<()> {
    let backend = LoadedBackend::open(&a.backend)?;
    let catalog = load_catalog(&a.catalog)?;

    // (id, pixel path)
    let mut targets: Vec<(String, Option<PathBuf>)> = Vec::new();
    let resolve = |id: &str| a.root.as_ref().map_or_else(|| PathBuf::from(id), |r| r.join(id));
    for id in &a.ids {
        targets.push((id.clone(), Some(resolve(id))));
    }
    for path in &a.images {
        targets.push((path.to_string_lossy().into_owned(), Some(path.clone())));
    }
    if targets.is_empty() {
        let Some(manifest) = &a.manifest else {
            return Err(WcaError::config("nothing to classify: pass --id, --image or --manifest"));
        };
        let m = DatasetManifest::load(manifest)?.with_root(a.root.clone());
        for r in &m.records {
            targets.push((r.id.clone(), Some(m.image_path(&r.id))));
        }
    }

    let crops = a
        .scoring
        .crops
        .unwrap_or_else(|| backend.default_crops(targets.first().map(|t| t.0.as_str())));
    let cfg = run_config(&a.scoring, &a.catalog, crops);
    cfg.validate()?;

    let mut reports = Vec::with_capacity(targets.len());
    if let Some(path) = &a.cache {
        let cache = AugmentedCache::load(path, backend.get().dim())?;
        for (id, _) in &targets {
            reports.push(cache.classify(id, &catalog).map_err(|e| e.for_image(id))?);
        }
    } else {
        let classifier = Classifier::new(&catalog, backend.get(), cfg)?;
        for (id, path) in &targets {
            let pixels = match path {
                Some(p) if backend.get().needs_pixels() => Some(ImageBuffer::load(p).map_err(|e| e.for_image(id))?),
                _ => None,
            };
            let r = classifier
                .classify(id, pixels.as_ref(), a.explain)
                .map_err(|e| e.for_image(id))?;
            info!(
                "{id}: crop {:.4}s encode {:.4}s score {:.4}s",
                r.timing.crop_preprocess_seconds, r.timing.encode_seconds, r.timing.score_seconds
            );
            reports.push(r);
        }
    }
    emit(a.out.as_deref(), &to_json(&reports))
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let backend = LoadedBackend::open(&a.backend)?;
    let catalog = load_catalog(&a.catalog)?;
    let manifest = DatasetManifest::load(&a.manifest)?.with_root(a.root.clone());
    let crops = a
        .scoring
        .crops
        .unwrap_or_else(|| backend.default_crops(manifest.records.first().map(|r| r.id.as_str())));
    let cfg = run_config(&a.scoring, &a.catalog, crops);
    let cache = match &a.cache {
        Some(path) => Some(AugmentedCache::load(path, backend.get().dim())?),
        None => None,
    };
    let report = evaluate(
        &manifest,
        &catalog,
        backend.get(),
        &cfg,
        EvalOptions {
            jobs: jobs_checked(a.jobs)?,
            cache: cache.as_ref(),
        },
    )?;
    info!(
        "top-1 {:.4} ({}/{}) in {:.3}s wall; crop {:.3}s encode {:.3}s score {:.3}s summed over images",
        report.top1,
        report.n_correct,
        report.n,
        report.wall_seconds,
        report.timing.crop_preprocess_seconds,
        report.timing.encode_seconds,
        report.timing.score_seconds
    );
    let mut body = report.to_json();
    body.push('\n');
    emit(a.out.as_deref(), &body)
}

fn cache_cmd(a: &CacheArgs) -> Result<()> {
    let backend = LoadedBackend::open(&a.backend)?;
    let catalog = load_catalog(&a.catalog)?;
    let manifest = DatasetManifest::load(&a.manifest)?.with_root(a.root.clone());
    let crops = a
        .scoring
        .crops
        .unwrap_or_else(|| backend.default_crops(manifest.records.first().map(|r| r.id.as_str())));
    let cfg = run_config(&a.scoring, &a.catalog, crops);
    let cache = precompute_cache(&manifest, &catalog, backend.get(), &cfg, Some(&a.cache), jobs_checked(a.jobs)?)?;
    info!("wrote {} augmented embeddings to {}", cache.store().len(), a.cache.display());
    Ok(())
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    let encoder = SyntheticEncoder::from_model_spec(&a.model, MODEL_SEED)?;
    let images = a.images.iter().map(ImageBuffer::load).collect::<Result<Vec<_>>>()?;
    let cfg = PromptConfig {
        alpha: a.alpha,
        beta: a.beta,
        num_crops: DEFAULT_CROPS,
        seed: a.seed,
        style: a.prompt_style,
    };
    let table = bench_timing(&images, &cfg, &encoder, &a.crop_counts)?;
    if !table.crop_cost_monotone() {
        warn!("crop+preprocess time is not monotone in N on this run");
    }
    emit(a.out.as_deref(), &table.to_csv()?)
}

fn theorem_cmd(a: &TheoremArgs) -> Result<()> {
    let cfg = TheoremConfig::new(a.dim, a.d_out.unwrap_or(a.dim), a.cos2_max);
    let summary = counterexample_probe(a.seed, a.trials, &cfg)?;
    if summary.violations > 0 {
        warn!(
            "{} trials reached cosine >= 1 - 1e-9; reproduce with --seed {:?} --trials 1",
            summary.violations, summary.worst_seed
        );
    }
    emit(a.out.as_deref(), &to_json(&summary))
}

fn gen_fixtures_cmd(a: &GenFixturesArgs) -> Result<()> {
    for dir in gen_fixtures(a.seed, &a.out)? {
        info!("wrote {}", dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Classify(a) => classify_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Cache(a) => cache_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Theorem(a) => theorem_cmd(a),
        Command::GenFixtures(a) => gen_fixtures_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
