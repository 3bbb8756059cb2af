//! Embedding sources.
//!
//! [`EncoderBackend`] is what the classifier talks to. Three sources ship
//! with the crate:
//!
//! * [`PrecomputedStore`]: vectors exported offline and looked up by key;
//!   this is the path used by evaluation and every fixture test.
//! * [`LinearEncoder`]: `f(x) = A x`, the encoder model of the theorem lab.
//! * [`SyntheticEncoder`]: a model-free pixel encoder (resize then fixed
//!   random projection) used by the timing bench and for running the
//!   pipeline on real image files without a neural runtime.
//!
//! Keys follow one scheme throughout: `<image id>` for a whole image,
//! `<image id>::<i>` for crop `i`, `cls::<label>` for the templated label
//! prompt and `<label>::<j>` for description `j`.

pub mod store;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, WcaError};
use crate::math::Embedding;
use crate::rng::Stream;
use crate::visual_prompt::ImageBuffer;

pub use store::PrecomputedStore;

/// Image to embed. `key` identifies it in precomputed stores; `pixels` is
/// present when the caller has decoded image data.
#[derive(Debug, Clone, Copy)]
pub struct ImageInput<'a> {
    pub key: &'a str,
    pub pixels: Option<&'a ImageBuffer>,
}

/// Text to embed, with its store key.
#[derive(Debug, Clone, Copy)]
pub struct TextInput<'a> {
    pub key: &'a str,
    pub text: &'a str,
}

pub fn patch_key(image_id: &str, index: usize) -> String {
    format!("{image_id}::{index}")
}

pub fn label_key(label: &str) -> String {
    format!("cls::{label}")
}

/// Key for the `k`-th extra template of a label. Template 0 uses [`label_key`].
pub fn template_key(label: &str, template_index: usize) -> String {
    if template_index == 0 {
        label_key(label)
    } else {
        format!("cls::{label}::{template_index}")
    }
}

pub fn description_key(label: &str, index: usize) -> String {
    format!("{label}::{index}")
}

/// Source of image and text embeddings in one shared space.
pub trait EncoderBackend: Send + Sync {
    fn dim(&self) -> usize;

    fn encode_image(&self, input: ImageInput<'_>) -> Result<Embedding>;

    fn encode_text(&self, input: TextInput<'_>) -> Result<Embedding>;

    /// Whether the evaluation harness may call this backend from several
    /// threads at once. Backends returning `false` are driven sequentially.
    fn supports_concurrency(&self) -> bool {
        true
    }

    /// Whether `encode_image` needs decoded pixels.
    fn needs_pixels(&self) -> bool {
        false
    }

    fn name(&self) -> &str;
}

/// `f(x) = A x` for a dense `d_out x d_in` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    matrix: DMatrix<f64>,
}

impl LinearEncoder {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(WcaError::domain("linear encoder matrix must be nonempty"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(WcaError::domain("linear encoder matrix has non-finite entries"));
        }
        Ok(LinearEncoder { matrix })
    }

    /// Builds from row-major rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(WcaError::domain("linear encoder rows have unequal lengths"));
        }
        Self::new(DMatrix::from_fn(n_rows, n_cols, |r, c| rows[r][c]))
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim))
    }

    /// Entries drawn i.i.d. standard normal from `stream`.
    pub fn gaussian(stream: &mut Stream, d_out: usize, d_in: usize) -> Result<Self> {
        let values = stream.normal_vec(d_out * d_in);
        Self::new(DMatrix::from_row_slice(d_out, d_in, &values))
    }

    pub fn d_in(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Raw `A x` without finiteness or zero checks on the output.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in() {
            return Err(WcaError::Dimension {
                expected: self.d_in(),
                actual: x.len(),
            });
        }
        let v = &self.matrix * DVector::from_column_slice(x);
        Ok(v.as_slice().to_vec())
    }

    pub fn encode(&self, x: &Embedding) -> Result<Embedding> {
        Embedding::new(self.apply(x)?)
    }
}

/// Model-free pixel encoder: resize to `resolution x resolution` RGB,
/// scale channels to `[-0.5, 0.5]`, project with a seeded Gaussian matrix.
/// Texts map to a seeded Gaussian vector keyed by the text itself.
#[derive(Debug, Clone)]
pub struct SyntheticEncoder {
    projection: LinearEncoder,
    resolution: u32,
    seed: u64,
}

pub const SYNTHETIC_RESOLUTION: u32 = 16;

impl SyntheticEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        Self::with_resolution(dim, SYNTHETIC_RESOLUTION, seed)
    }

    pub fn with_resolution(dim: usize, resolution: u32, seed: u64) -> Result<Self> {
        if dim == 0 || resolution == 0 {
            return Err(WcaError::config("synthetic encoder needs dim and resolution >= 1"));
        }
        let mut stream = Stream::new(seed, "synthetic-projection");
        let d_in = 3 * (resolution as usize).pow(2);
        let projection = LinearEncoder::gaussian(&mut stream, dim, d_in)?;
        Ok(SyntheticEncoder {
            projection,
            resolution,
            seed,
        })
    }

    /// Parses a `--model` value. Only `synthetic[:dim]` is built in.
    pub fn from_model_spec(spec: &str, seed: u64) -> Result<Self> {
        match spec.split_once(':') {
            None if spec == "synthetic" => Self::new(64, seed),
            Some(("synthetic", dim)) => {
                let dim: usize = dim
                    .parse()
                    .map_err(|_| WcaError::config(format!("--model {spec}: bad dimension {dim:?}")))?;
                Self::new(dim, seed)
            }
            _ => Err(WcaError::config(format!(
                "--model {spec}: no runtime for this model in this build; export embeddings \
                 offline and pass --embeddings, or use --model synthetic[:dim]"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.projection.d_out()
    }
}

/// Two-phase pixel encoder, split the way the timing bench measures it.
pub trait PixelEncoder: Send + Sync {
    /// Resize and normalize one image into model input.
    fn preprocess(&self, image: &ImageBuffer) -> Result<Vec<f64>>;

    /// Embed a batch of preprocessed inputs.
    fn encode_batch(&self, batch: &[Vec<f64>]) -> Result<Vec<Embedding>>;
}

impl PixelEncoder for SyntheticEncoder {
    fn preprocess(&self, image: &ImageBuffer) -> Result<Vec<f64>> {
        let resized = image.resized(self.resolution, self.resolution)?;
        Ok(resized
            .pixels()
            .iter()
            .map(|&c| f64::from(c) / 255.0 - 0.5)
            .collect())
    }

    fn encode_batch(&self, batch: &[Vec<f64>]) -> Result<Vec<Embedding>> {
        batch.iter().map(|x| Embedding::new(self.projection.apply(x)?)).collect()
    }
}

impl EncoderBackend for SyntheticEncoder {
    fn dim(&self) -> usize {
        self.projection.d_out()
    }

    fn encode_image(&self, input: ImageInput<'_>) -> Result<Embedding> {
        let pixels = input.pixels.ok_or_else(|| {
            WcaError::config(format!(
                "synthetic encoder needs decoded pixels for {:?}",
                input.key
            ))
        })?;
        let x = self.preprocess(pixels)?;
        let v = self.projection.apply(&x)?;
        if v.iter().all(|c| *c == 0.0) {
            // flat mid-grey input projects to the origin
            return Err(WcaError::domain(format!("image {:?} encodes to the zero vector", input.key)));
        }
        Embedding::new(v)
    }

    fn encode_text(&self, input: TextInput<'_>) -> Result<Embedding> {
        let mut stream = Stream::new(self.seed, &format!("synthetic-text:{}", input.text));
        Embedding::new(stream.normal_vec(self.dim()))
    }

    fn needs_pixels(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "synthetic"
    }
}
