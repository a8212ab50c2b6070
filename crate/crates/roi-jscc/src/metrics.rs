//! Region-weighted reconstruction loss and PSNR reporting.
//!
//! The training objective adds region-focused terms on top of the usual
//! mean-squared error:
//!
//! ```text
//! L = MSE(x, xhat) + alpha * MSE_ROI(x, xhat) + beta * MSE_ROP(x, xhat)
//! ```
//!
//! where each region term averages over that region's own pixels. PSNR is
//! reported on the 8-bit scale, `10 * log10(255^2 / MSE)`; since pixels are
//! stored in `[0, 1]` the ratio is computed against a unit peak, which gives
//! the identical value in dB.

use crate::autodiff::{Tape, Tensor};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::geometry::{feature_labels, patch_rect, Region, RegionMap, RoiPosition};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Weights of the ROI and ROP loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    /// Region-weighted objective; requires `0 < beta < alpha <= 1`.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(0.0 < beta && beta < alpha && alpha <= 1.0) {
            return Err(Error::domain(format!(
                "loss weights must satisfy 0 < beta < alpha <= 1, got alpha {alpha}, beta {beta}"
            )));
        }
        Ok(LossWeights { alpha, beta })
    }

    /// Plain MSE objective (the "without ROI loss" ablation).
    pub fn uniform() -> Self {
        LossWeights { alpha: 0.0, beta: 0.0 }
    }

    pub fn is_uniform(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 0.5 }
    }
}

/// Pixel-resolution region indicator masks with their pixel counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub h: usize,
    pub w: usize,
    pub roi: Vec<f64>,
    pub rop: Vec<f64>,
    pub roni: Vec<f64>,
    pub roi_count: usize,
    pub rop_count: usize,
    pub roni_count: usize,
}

impl RegionMasks {
    pub fn mask(&self, region: Region) -> &[f64] {
        match region {
            Region::Roi => &self.roi,
            Region::Rop => &self.rop,
            Region::Roni => &self.roni,
        }
    }

    pub fn count(&self, region: Region) -> usize {
        match region {
            Region::Roi => self.roi_count,
            Region::Rop => self.rop_count,
            Region::Roni => self.roni_count,
        }
    }
}

/// Expand a patch-grid region map to per-pixel 0/1 masks.
pub fn region_masks(map: &RegionMap, h: usize, w: usize) -> Result<RegionMasks> {
    let labels = feature_labels(map, h, w)?;
    let mut out = RegionMasks {
        h,
        w,
        roi: vec![0.0; h * w],
        rop: vec![0.0; h * w],
        roni: vec![0.0; h * w],
        roi_count: 0,
        rop_count: 0,
        roni_count: 0,
    };
    for (i, l) in labels.iter().enumerate() {
        match l {
            Region::Roi => {
                out.roi[i] = 1.0;
                out.roi_count += 1;
            }
            Region::Rop => {
                out.rop[i] = 1.0;
                out.rop_count += 1;
            }
            Region::Roni => {
                out.roni[i] = 1.0;
                out.roni_count += 1;
            }
        }
    }
    Ok(out)
}

/// Pixels of every patch carrying `label`, patch-major then row-major,
/// as an `(n, 3)` matrix. Empty label sets yield an empty matrix.
pub fn extract_region(img: &Image, map: &RegionMap, label: Region) -> Result<Array2<f64>> {
    let cells = map.cells_with(label);
    let mut rows = Vec::new();
    for cell in cells {
        let (y0, x0, ph, pw) = patch_rect(map, cell, img.h, img.w)?;
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                for c in 0..3 {
                    rows.push(img.get(y, x, c));
                }
            }
        }
    }
    let n = rows.len() / 3;
    Ok(Array2::from_shape_vec((n, 3), rows).unwrap())
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.h != b.h || a.w != b.w {
        return Err(Error::domain(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    Ok(())
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.pixels.len() as f64;
    Ok(a.pixels
        .iter()
        .zip(b.pixels.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// MSE restricted to one region's pixels; `None` when the region is empty.
pub fn region_mse(a: &Image, b: &Image, masks: &RegionMasks, region: Region) -> Result<Option<f64>> {
    check_dims(a, b)?;
    if a.h != masks.h || a.w != masks.w {
        return Err(Error::domain("region masks built for different dimensions"));
    }
    let count = masks.count(region);
    if count == 0 {
        return Ok(None);
    }
    let mask = masks.mask(region);
    let mut acc = 0.0;
    for (p, &m) in mask.iter().enumerate() {
        if m != 0.0 {
            for c in 0..3 {
                let d = a.pixels[(p, c)] - b.pixels[(p, c)];
                acc += d * d;
            }
        }
    }
    Ok(Some(acc / (count * 3) as f64))
}

/// Region-weighted training loss on plain values. Empty regions contribute
/// nothing, matching the graph version.
pub fn roi_loss(a: &Image, b: &Image, masks: &RegionMasks, weights: &LossWeights) -> Result<f64> {
    let mut loss = mse(a, b)?;
    if weights.alpha != 0.0 {
        if let Some(m) = region_mse(a, b, masks, Region::Roi)? {
            loss += weights.alpha * m;
        }
    }
    if weights.beta != 0.0 {
        if let Some(m) = region_mse(a, b, masks, Region::Rop)? {
            loss += weights.beta * m;
        }
    }
    Ok(loss)
}

/// Differentiable version of [`roi_loss`] over `(pixels, 3)` tensors.
pub fn roi_loss_graph<'t>(
    tape: &'t Tape,
    x: Tensor<'t>,
    xhat: Tensor<'t>,
    masks: &RegionMasks,
    weights: &LossWeights,
) -> Tensor<'t> {
    let diff = x.sub(xhat);
    let mut loss = diff.mul(diff).mean_all();
    for (region, weight) in [(Region::Roi, weights.alpha), (Region::Rop, weights.beta)] {
        if weight == 0.0 || masks.count(region) == 0 {
            continue;
        }
        let m = tape.constant(
            ndarray::ArrayD::from_shape_vec(
                ndarray::IxDyn(&[masks.h * masks.w]),
                masks.mask(region).to_vec(),
            )
            .unwrap(),
        );
        let masked = diff.mul_colvec(m);
        let term = masked
            .mul(masked)
            .sum_all()
            .mul_scalar(weight / (masks.count(region) * 3) as f64);
        loss = loss.add(term);
    }
    loss
}

/// `10 * log10(peak^2 / mse)`; infinite for a perfect reconstruction.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return f64::INFINITY;
    }
    10.0 * (peak * peak / mse).log10()
}

/// PSNR between two unit-interval images on the 8-bit dB scale.
pub fn psnr_images(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, 1.0))
}

/// Per-image PSNR broken out by region. Empty regions are `NaN`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub psnr_avg: f64,
    pub psnr_roi: f64,
    pub psnr_rop: f64,
    pub psnr_roni: f64,
}

impl ImageScores {
    pub fn csv_header() -> &'static str {
        "psnr_avg,psnr_roi,psnr_rop,psnr_roni"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.4},{:.4},{:.4},{:.4}",
            self.psnr_avg, self.psnr_roi, self.psnr_rop, self.psnr_roni
        )
    }
}

/// Whole-image and per-region PSNR for one reconstruction.
pub fn region_scores(a: &Image, b: &Image, masks: &RegionMasks) -> Result<ImageScores> {
    let to_psnr = |m: Option<f64>| m.map_or(f64::NAN, |v| psnr_from_mse(v, 1.0));
    Ok(ImageScores {
        psnr_avg: psnr_images(a, b)?,
        psnr_roi: to_psnr(region_mse(a, b, masks, Region::Roi)?),
        psnr_rop: to_psnr(region_mse(a, b, masks, Region::Rop)?),
        psnr_roni: to_psnr(region_mse(a, b, masks, Region::Roni)?),
    })
}

/// One evaluation row: an image under one (gamma, SNR, CPP) condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub image_id: String,
    pub gamma: RoiPosition,
    /// `None` encodes a noiseless channel (infinite SNR).
    pub snr_db: Option<f64>,
    pub cpp: f64,
    pub psnr_roi: f64,
    pub psnr_avg: f64,
}

impl RegionReport {
    pub fn csv_header() -> &'static str {
        "image_id,h_gamma,w_gamma,snr_db,cpp,psnr_roi,psnr_avg"
    }

    pub fn csv_row(&self) -> String {
        let snr = match self.snr_db {
            Some(v) => format!("{v}"),
            None => "inf".to_string(),
        };
        format!(
            "{},{},{},{},{:.6},{:.4},{:.4}",
            self.image_id, self.gamma.h, self.gamma.w, snr, self.cpp, self.psnr_roi, self.psnr_avg
        )
    }
}

/// Arithmetic mean of per-image PSNRs (infinities propagate).
pub fn mean_psnr(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
