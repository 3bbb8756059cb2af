//! Per-image cost of cropping, preprocessing and encoding as the crop
//! count grows.

use std::time::Instant;

use serde::Serialize;

use crate::encoder::PixelEncoder;
use crate::error::{Result, WcaError};
use crate::scoring::patch_weights;
use crate::visual_prompt::{apply_prompt, ImageBuffer, PromptConfig};

pub const DEFAULT_BENCH_CROPS: [usize; 11] = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

/// Mean seconds per image for one crop count. `N = 0` is the whole image alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub crop_preprocess_s: f64,
    pub encode_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)
                .map_err(|e| WcaError::domain(format!("cannot format bench row: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| WcaError::domain(format!("cannot format bench table: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Whether crop+preprocess cost never decreases with `N`. Reported, not enforced.
    pub fn crop_cost_monotone(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].crop_preprocess_s >= w[0].crop_preprocess_s)
    }
}

/// Times the image side of the pipeline on `images` for each crop count.
/// Crops use `cfg` with `num_crops` replaced by each `N`; the whole image
/// is always preprocessed and encoded, so `N = 0` is the baseline.
pub fn bench_timing(
    images: &[ImageBuffer],
    cfg: &PromptConfig,
    encoder: &dyn PixelEncoder,
    crop_counts: &[usize],
) -> Result<BenchTable> {
    if images.is_empty() {
        return Err(WcaError::domain("bench needs at least one sample image"));
    }
    cfg.validate()?;
    let mut rows = Vec::with_capacity(crop_counts.len());
    for &n in crop_counts {
        let run_cfg = PromptConfig { num_crops: n, ..*cfg };
        let (mut crop_s, mut encode_s, mut total_s) = (0.0, 0.0, 0.0);
        for (idx, img) in images.iter().enumerate() {
            let start = Instant::now();
            let specs = if n == 0 {
                Vec::new()
            } else {
                run_cfg.crops_for(&format!("bench-{idx}"), img.width(), img.height())?
            };
            let mut inputs = Vec::with_capacity(n + 1);
            inputs.push(encoder.preprocess(img)?);
            for spec in &specs {
                inputs.push(encoder.preprocess(&apply_prompt(img, run_cfg.style, spec)?)?);
            }
            let encode_start = Instant::now();
            crop_s += (encode_start - start).as_secs_f64();
            let embeddings = encoder.encode_batch(&inputs)?;
            encode_s += encode_start.elapsed().as_secs_f64();
            if n > 0 {
                patch_weights(&embeddings[0], &embeddings[1..])?;
            }
            total_s += start.elapsed().as_secs_f64();
        }
        let k = images.len() as f64;
        rows.push(BenchRow {
            n,
            crop_preprocess_s: crop_s / k,
            encode_s: encode_s / k,
            total_s: total_s / k,
        });
    }
    Ok(BenchTable { rows })
}
