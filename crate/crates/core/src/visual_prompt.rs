//! Localized visual prompting.
//!
//! Crops are square. For each of `N` crops a scale `gamma ~ U(alpha, beta)` is
//! drawn, the side is `n = round_half_up(gamma * min(W, H))` clamped to
//! `[1, min(W, H)]`, and the top-left corner is uniform over all positions
//! that keep the crop inside the image. The red-circle, blur and greyscale
//! styles keep the full frame and only mark the region.

use std::path::Path;
use std::str::FromStr;

use image::imageops::{self, FilterType};
use image::{DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WcaError};
use crate::rng::Stream;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 0.9;
pub const DEFAULT_CROPS: usize = 60;

/// Packed RGB8 image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(WcaError::domain(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(WcaError::domain(format!(
                "pixel buffer has {} bytes, expected {}",
                pixels.len(),
                width * height * 3
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    /// Decodes PNG or JPEG. Alpha is composited over white.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|e| WcaError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_dynamic(decoded)
    }

    pub fn from_dynamic(img: DynamicImage) -> Result<Self> {
        let rgb = if img.color().has_alpha() {
            let rgba = img.to_rgba8();
            let (w, h) = rgba.dimensions();
            let mut out = Vec::with_capacity(w as usize * h as usize * 3);
            for p in rgba.pixels() {
                let a = u32::from(p[3]);
                for c in &p.0[..3] {
                    out.push(((u32::from(*c) * a + 255 * (255 - a) + 127) / 255) as u8);
                }
            }
            return Self::new(w as usize, h as usize, out);
        } else {
            img.to_rgb8()
        };
        let (w, h) = rgb.dimensions();
        Self::new(w as usize, h as usize, rgb.into_raw())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn min_side(&self) -> usize {
        self.width.min(self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    /// Triangle-filtered resize, used as encoder preprocessing.
    pub fn resized(&self, width: u32, height: u32) -> Result<Self> {
        let out = imageops::resize(&self.to_rgb_image(), width, height, FilterType::Triangle);
        Self::new(width as usize, height as usize, out.into_raw())
    }
}

/// One square crop: scale, side length and top-left corner, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub gamma: f64,
    pub size: usize,
    pub left: usize,
    pub top: usize,
}

impl CropSpec {
    /// The whole image when it is square, otherwise its top-left square.
    pub fn full(width: usize, height: usize) -> Self {
        CropSpec {
            gamma: 1.0,
            size: width.min(height),
            left: 0,
            top: 0,
        }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.size >= 1 && self.left + self.size <= width && self.top + self.size <= height
    }

    fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(WcaError::Bounds {
                left: self.left,
                top: self.top,
                n: self.size,
                width,
                height,
            })
        }
    }
}

/// `round_half_up(gamma * min_side)` clamped to `[1, min_side]`.
pub fn crop_side(gamma: f64, min_side: usize) -> usize {
    let n = (gamma * min_side as f64 + 0.5).floor();
    (n.max(1.0) as usize).min(min_side)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptStyle {
    #[default]
    Crop,
    RedCircle,
    Blur,
    Greyscale,
}

impl PromptStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptStyle::Crop => "crop",
            PromptStyle::RedCircle => "red-circle",
            PromptStyle::Blur => "blur",
            PromptStyle::Greyscale => "greyscale",
        }
    }
}

impl FromStr for PromptStyle {
    type Err = WcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crop" => Ok(PromptStyle::Crop),
            "red-circle" => Ok(PromptStyle::RedCircle),
            "blur" => Ok(PromptStyle::Blur),
            "greyscale" | "grayscale" => Ok(PromptStyle::Greyscale),
            other => Err(WcaError::config(format!("unknown prompt style {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub alpha: f64,
    pub beta: f64,
    pub num_crops: usize,
    pub seed: u64,
    pub style: PromptStyle,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            num_crops: DEFAULT_CROPS,
            seed: 0,
            style: PromptStyle::Crop,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= self.beta && self.beta <= 1.0) {
            return Err(WcaError::config(format!(
                "crop bounds must satisfy 0 < alpha <= beta <= 1, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if self.num_crops == 0 {
            return Err(WcaError::config("number of crops must be at least 1"));
        }
        Ok(())
    }

    /// The per-image stream: `(seed, image_id)`.
    pub fn stream_for(&self, image_id: &str) -> Stream {
        Stream::new(self.seed, image_id)
    }

    /// Crop specs for one image, drawn from its own stream.
    pub fn crops_for(&self, image_id: &str, width: usize, height: usize) -> Result<Vec<CropSpec>> {
        sample_crop_specs(self, width, height, &mut self.stream_for(image_id))
    }
}

/// Draws `cfg.num_crops` crops. Per crop: one unit draw for gamma, then the
/// left offset, then the top offset.
pub fn sample_crop_specs(
    cfg: &PromptConfig,
    width: usize,
    height: usize,
    stream: &mut Stream,
) -> Result<Vec<CropSpec>> {
    if width == 0 || height == 0 {
        return Err(WcaError::domain(format!(
            "cannot crop a {width}x{height} image"
        )));
    }
    cfg.validate()?;
    let min_side = width.min(height);
    Ok((0..cfg.num_crops)
        .map(|_| {
            let gamma = stream.uniform(cfg.alpha, cfg.beta);
            let size = crop_side(gamma, min_side);
            let left = stream.index_inclusive((width - size) as u64) as usize;
            let top = stream.index_inclusive((height - size) as u64) as usize;
            CropSpec {
                gamma,
                size,
                left,
                top,
            }
        })
        .collect())
}

/// Copies the `n x n` region; no resampling.
pub fn apply_crop(img: &ImageBuffer, spec: &CropSpec) -> Result<ImageBuffer> {
    spec.check(img.width, img.height)?;
    let n = spec.size;
    let mut pixels = Vec::with_capacity(n * n * 3);
    for r in 0..n {
        let start = ((spec.top + r) * img.width + spec.left) * 3;
        pixels.extend_from_slice(&img.pixels[start..start + n * 3]);
    }
    ImageBuffer::new(n, n, pixels)
}

/// Stroke width of the red circle for an image.
pub fn red_circle_stroke(img: &ImageBuffer) -> usize {
    ((0.01 * img.min_side() as f64).round() as usize).max(2)
}

/// Blur sigma for an image.
pub fn blur_sigma(img: &ImageBuffer) -> f64 {
    0.05 * img.min_side() as f64
}

fn luma(p: [u8; 3]) -> u8 {
    let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
    y.round().clamp(0.0, 255.0) as u8
}

fn inside(spec: &CropSpec, x: usize, y: usize) -> bool {
    x >= spec.left && x < spec.left + spec.size && y >= spec.top && y < spec.top + spec.size
}

/// Full-frame prompt marking `region`. `Crop` returns the cropped patch.
pub fn apply_prompt(img: &ImageBuffer, style: PromptStyle, region: &CropSpec) -> Result<ImageBuffer> {
    match style {
        PromptStyle::Crop => apply_crop(img, region),
        other => apply_alt_prompt(img, other, region),
    }
}

/// Red-circle, blur or greyscale prompt around `region`; output keeps the
/// input size.
///
/// * red circle: outline centred on the region, radius `n/2`, stroke
///   `max(2, round(0.01 min(W,H)))`, colour (255, 0, 0)
/// * blur: Gaussian blur with sigma `0.05 min(W,H)` outside the region
/// * greyscale: luma `0.299R + 0.587G + 0.114B` outside the region
pub fn apply_alt_prompt(img: &ImageBuffer, style: PromptStyle, region: &CropSpec) -> Result<ImageBuffer> {
    region.check(img.width, img.height)?;
    match style {
        PromptStyle::Crop => Err(WcaError::config(
            "crop is not a full-frame prompt style; use apply_crop",
        )),
        PromptStyle::RedCircle => {
            let mut out = img.clone();
            let cx = region.left as f64 + region.size as f64 / 2.0;
            let cy = region.top as f64 + region.size as f64 / 2.0;
            let radius = region.size as f64 / 2.0;
            let half = red_circle_stroke(img) as f64 / 2.0;
            let reach = radius + half;
            let x0 = (cx - reach).floor().max(0.0) as usize;
            let y0 = (cy - reach).floor().max(0.0) as usize;
            let x1 = ((cx + reach).ceil() as usize).min(img.width - 1);
            let y1 = ((cy + reach).ceil() as usize).min(img.height - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = (x as f64 - cx).hypot(y as f64 - cy);
                    if (d - radius).abs() <= half {
                        out.set_pixel(x, y, [255, 0, 0]);
                    }
                }
            }
            Ok(out)
        }
        PromptStyle::Blur => {
            let blurred = imageops::blur(&img.to_rgb_image(), blur_sigma(img) as f32);
            let mut out = ImageBuffer::new(img.width, img.height, blurred.into_raw())?;
            for y in region.top..region.top + region.size {
                for x in region.left..region.left + region.size {
                    out.set_pixel(x, y, img.pixel(x, y));
                }
            }
            Ok(out)
        }
        PromptStyle::Greyscale => {
            let mut out = img.clone();
            for y in 0..img.height {
                for x in 0..img.width {
                    if !inside(region, x, y) {
                        let l = luma(img.pixel(x, y));
                        out.set_pixel(x, y, [l, l, l]);
                    }
                }
            }
            Ok(out)
        }
    }
}
