//! Image I/O, cropping, ROI sampling, and the procedural toy corpus.
//!
//! Images live in memory as `(h*w, 3)` row-major matrices of `f64` in
//! `[0, 1]` — the same flat layout the models consume — wrapped in an
//! [`Image`] that remembers the spatial dimensions.

use crate::error::{Error, Result};
use crate::geometry::RoiPosition;
use crate::util::{stream_rng, Stream};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// RGB image with pixels in `[0, 1]`, stored `(h*w, 3)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub pixels: Array2<f64>,
}

impl Image {
    pub fn new(h: usize, w: usize, pixels: Array2<f64>) -> Self {
        assert_eq!(pixels.dim(), (h * w, 3), "pixel matrix must be (h*w, 3)");
        Image { h, w, pixels }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Image { h, w, pixels: Array2::zeros((h * w, 3)) }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.w + x, c)]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.pixels[(y * self.w + x, c)] = v;
    }

    /// Quantize to 8-bit RGB bytes, row-major RGBRGB..., clamping to [0, 1].
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != h * w * 3 {
            return Err(Error::domain(format!(
                "byte buffer holds {} values, expected {} for {h}x{w} RGB",
                bytes.len(),
                h * w * 3
            )));
        }
        let pixels = Array2::from_shape_vec(
            (h * w, 3),
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )
        .unwrap();
        Ok(Image { h, w, pixels })
    }
}

/// How a full-resolution image is reduced to a network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CropMode {
    /// Square crop of `size` at a uniformly random offset (training).
    Random { size: usize },
    /// Center crop of `size` (deterministic).
    Center { size: usize },
    /// Center crop to the largest dimensions divisible by `multiple`
    /// (evaluation on full images with grid-compatible sizes).
    CenterMultiple { multiple: usize },
}

/// Apply `mode` to `img`. Only `Random` consumes randomness.
pub fn crop(img: &Image, mode: CropMode, rng: &mut impl Rng) -> Result<Image> {
    let (ch, cw, oy, ox) = match mode {
        CropMode::Random { size } => {
            if img.h < size || img.w < size {
                return Err(Error::domain(format!(
                    "image {}x{} smaller than crop {size}",
                    img.h, img.w
                )));
            }
            let oy = rng.random_range(0..=img.h - size);
            let ox = rng.random_range(0..=img.w - size);
            (size, size, oy, ox)
        }
        CropMode::Center { size } => {
            if img.h < size || img.w < size {
                return Err(Error::domain(format!(
                    "image {}x{} smaller than crop {size}",
                    img.h, img.w
                )));
            }
            (size, size, (img.h - size) / 2, (img.w - size) / 2)
        }
        CropMode::CenterMultiple { multiple } => {
            if multiple == 0 {
                return Err(Error::domain("crop multiple must be positive"));
            }
            let ch = img.h / multiple * multiple;
            let cw = img.w / multiple * multiple;
            if ch == 0 || cw == 0 {
                return Err(Error::domain(format!(
                    "image {}x{} smaller than one {multiple}-pixel block",
                    img.h, img.w
                )));
            }
            (ch, cw, (img.h - ch) / 2, (img.w - cw) / 2)
        }
    };
    let mut out = Image::zeros(ch, cw);
    for y in 0..ch {
        for x in 0..cw {
            for c in 0..3 {
                out.set(y, x, c, img.get(oy + y, ox + x, c));
            }
        }
    }
    Ok(out)
}

/// Load one image file into the unit-interval representation.
pub fn load_image(path: &Path) -> Result<Image> {
    let rgb = image::open(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Image::from_rgb8(h, w, rgb.as_raw())
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

/// Image files directly under `dir`, sorted by name for determinism.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.as_deref().is_some_and(|e| IMAGE_EXTENSIONS.contains(&e)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Where training/evaluation images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Image files in a directory (non-recursive).
    Directory { root: PathBuf },
    /// Procedurally generated corpus of `count` images of side `size`.
    Toy { count: usize, size: usize },
}

/// An in-memory set of full-resolution images.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<Image>,
}

impl Dataset {
    /// Load a source. Unreadable files are skipped with a warning on
    /// stderr; an empty result is a configuration error.
    pub fn load(source: &DataSource, seed: u64) -> Result<Self> {
        let images = match source {
            DataSource::Directory { root } => {
                let mut images = Vec::new();
                for path in list_images(root)? {
                    match load_image(&path) {
                        Ok(img) => images.push(img),
                        Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
                    }
                }
                images
            }
            DataSource::Toy { count, size } => {
                (0..*count).map(|i| toy_image(seed, i as u64, *size)).collect()
            }
        };
        if images.is_empty() {
            return Err(Error::config(format!("no usable images in {source:?}")));
        }
        Ok(Dataset { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Image {
        &self.images[idx]
    }

    /// Crop image `idx` with the given mode.
    pub fn cropped(&self, idx: usize, mode: CropMode, rng: &mut impl Rng) -> Result<Image> {
        crop(&self.images[idx], mode, rng)
    }

    /// Batch of crops at uniformly random indices (with replacement).
    pub fn sample_batch(
        &self,
        batch: usize,
        mode: CropMode,
        rng: &mut impl Rng,
    ) -> Result<Vec<Image>> {
        (0..batch)
            .map(|_| {
                let idx = rng.random_range(0..self.images.len());
                self.cropped(idx, mode, rng)
            })
            .collect()
    }
}

/// Deterministic procedural image: a smooth color gradient, a low-frequency
/// sinusoid, and a few solid rectangles. Compressible structure with enough
/// variety for a toy codec to learn from.
pub fn toy_image(seed: u64, index: u64, size: usize) -> Image {
    let mut rng = stream_rng(seed, Stream::Toy, index, 0);
    let s = size as f64;
    let mut img = Image::zeros(size, size);
    let base: [f64; 3] = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
    let gy: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.4..0.4));
    let gx: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.4..0.4));
    let freq = rng.random_range(0.5..2.5) * std::f64::consts::TAU / s;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let wave_chan = rng.random_range(0..3usize);
    let wave_amp = rng.random_range(0.05..0.2);
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let mut v = base[c] + gy[c] * y as f64 / s + gx[c] * x as f64 / s;
                if c == wave_chan {
                    v += wave_amp * (freq * (y + x) as f64 + phase).sin();
                }
                img.set(y, x, c, v);
            }
        }
    }
    let rects = rng.random_range(2..5usize);
    for _ in 0..rects {
        let rh = rng.random_range(size / 8..size / 2 + 1);
        let rw = rng.random_range(size / 8..size / 2 + 1);
        let oy = rng.random_range(0..size - rh + 1);
        let ox = rng.random_range(0..size - rw + 1);
        let col: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        for y in oy..oy + rh {
            for x in ox..ox + rw {
                for c in 0..3 {
                    img.set(y, x, c, col[c]);
                }
            }
        }
    }
    for v in img.pixels.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    img
}

/// Which grid cells an ROI may land on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// Any cell of the grid (training).
    Any,
    /// Cells with all eight neighbours present (evaluation).
    Interior,
}

/// Draw a 1-based ROI position uniformly under the given mode.
pub fn sample_gamma(
    n_h: usize,
    n_w: usize,
    mode: GammaMode,
    rng: &mut impl Rng,
) -> Result<RoiPosition> {
    match mode {
        GammaMode::Any => {
            let h = rng.random_range(1..=n_h);
            let w = rng.random_range(1..=n_w);
            Ok(RoiPosition::new(h, w))
        }
        GammaMode::Interior => {
            if n_h < 3 || n_w < 3 {
                return Err(Error::config(format!(
                    "a {n_h}x{n_w} grid has no interior cells to sample"
                )));
            }
            let h = rng.random_range(2..=n_h - 1);
            let w = rng.random_range(2..=n_w - 1);
            Ok(RoiPosition::new(h, w))
        }
    }
}

/// Every interior position of the grid, row-major (evaluation sweeps).
pub fn interior_positions(n_h: usize, n_w: usize) -> Vec<RoiPosition> {
    let mut out = Vec::new();
    for h in 2..n_h.max(1) {
        for w in 2..n_w.max(1) {
            out.push(RoiPosition::new(h, w));
        }
    }
    out
}

/// Every position of the grid, row-major.
pub fn all_positions(n_h: usize, n_w: usize) -> Vec<RoiPosition> {
    let mut out = Vec::new();
    for h in 1..=n_h {
        for w in 1..=n_w {
            out.push(RoiPosition::new(h, w));
        }
    }
    out
}
