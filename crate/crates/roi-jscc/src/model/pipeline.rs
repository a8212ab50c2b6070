//! Differentiable end-to-end transmission: encode, allocate, normalise,
//! add channel noise, decode, and score.
//!
//! One [`forward_sample`] call builds the whole graph for a single
//! `(image, gamma)` pair on the caller's tape.  The channel lives inside
//! the graph as (a) a keep-mask multiply implementing the ROI-adaptive
//! truncation, (b) an exact power-normalisation node, and (c) an additive
//! noise constant, so gradients flow through the channel to the encoder
//! while the noise itself stays non-differentiable.  The same noise draws
//! are laid out in packed symbol order, which keeps the in-graph channel
//! and the physical symbol vectors
//! (`tx`/`rx` in [`SampleRun`]) consistent.

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use rand::Rng;

use crate::autodiff::{Tape, Tensor};
use crate::bandwidth::{allocate, keep_mask, pack, reals_to_complex, Allocation, BandwidthPolicy};
use crate::channel::{draw_noise, ChannelSpec};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::geometry::RoiPosition;
use crate::metrics::{region_masks, roi_loss_graph, LossWeights, RegionMasks};
use crate::model::codec::{conv_geometry, sample_geometry, Codec, ConvCodec, SampleGeometry};
use crate::model::params::Binding;

/// Everything about the link that is not part of the network weights.
#[derive(Debug, Clone)]
pub struct LinkSpec {
    /// Channel (SNR and average symbol power).
    pub channel: ChannelSpec,
    /// Total complex symbol budget `k` per image.
    pub k_budget: usize,
    /// ROI bandwidth boost factor.
    pub tau: f64,
    /// Region loss weights (`alpha`, `beta`).
    pub weights: LossWeights,
}

/// A model that can run the transmission pipeline.
pub enum Model {
    /// The region-routed transformer codec.
    Roi(Codec),
    /// The plain convolutional baseline (always uniform bandwidth and
    /// uniform loss).
    Conv(ConvCodec),
}

impl Model {
    /// Stage/bandwidth configuration of the underlying codec.
    pub fn config(&self) -> &crate::model::codec::ModelConfig {
        match self {
            Model::Roi(c) => &c.cfg,
            Model::Conv(c) => c.config(),
        }
    }
}

/// Result of one end-to-end pass, alive as long as its tape.
pub struct SampleRun<'t> {
    /// Scalar training loss (region-weighted unless ablated).
    pub loss: Tensor<'t>,
    /// Unclamped reconstruction, `(H*W, 3)`.
    pub xhat: Tensor<'t>,
    /// Region geometry used by the pass.
    pub geometry: SampleGeometry,
    /// Pixel-level region masks (for scoring).
    pub masks: RegionMasks,
    /// Bandwidth allocation of this sample.
    pub alloc: Allocation,
    /// Transmitted symbols after power normalisation, packed order.
    pub tx: Vec<Complex64>,
    /// Received symbols (tx plus noise), packed order.
    pub rx: Vec<Complex64>,
    /// Scale applied by power normalisation.
    pub power_scale: f64,
}

/// Runs one image through the full pipeline.
///
/// The ablation flags on the model's config decide the effective
/// behaviour: `roi_bandwidth` off falls back to uniform allocation,
/// `roi_loss` off to the plain MSE.  The conv baseline ignores both ROI
/// mechanisms by construction.  `noise_rng` is consumed only when the
/// channel is noisy, and exactly `k_used` draws are taken, so paired
/// evaluations across variants stay aligned symbol for symbol.
pub fn forward_sample<'t>(
    tape: &'t Tape,
    model: &Model,
    bind: &Binding<'t>,
    image: &Image,
    gamma: RoiPosition,
    link: &LinkSpec,
    noise_rng: &mut impl Rng,
) -> Result<SampleRun<'t>> {
    let cfg = model.config();
    let (h, w) = (image.h, image.w);
    let geometry = match model {
        Model::Roi(_) => sample_geometry(cfg, h, w, gamma)?,
        Model::Conv(_) => conv_geometry(cfg, h, w, gamma)?,
    };

    let x = tape.constant(image.pixels.clone().into_dyn());
    let z = match model {
        Model::Roi(codec) => codec.encoder.forward(tape, bind, x, &geometry)?,
        Model::Conv(codec) => codec.encode(bind, x, h, w)?,
    };

    // Bandwidth allocation: region-adaptive only for the transformer with
    // the mechanism enabled.
    let policy = match model {
        Model::Roi(_) if cfg.flags.roi_bandwidth => BandwidthPolicy::roi(link.tau),
        _ => BandwidthPolicy::uniform(),
    };
    let alloc = allocate(
        &geometry.map,
        geometry.feat_h,
        geometry.feat_w,
        cfg.c_m,
        link.k_budget,
        &policy,
    )?;

    let mask = tape.constant(keep_mask(&alloc).into_dyn());
    let masked = z.mul(mask);

    // Exact average power P per transmitted complex symbol: the sum of
    // squared reals must equal k_used * P.
    let target_sq = alloc.k_used as f64 * link.channel.power;
    let norm = masked.power_normalize(target_sq);
    let scale = power_scale_of(&masked.value(), target_sq);

    let tx = pack(&reals_matrix(&norm.value(), alloc.positions(), cfg.c_m)?, &alloc);

    let sigma2 = link.channel.noise_variance();
    let (received, rx) = if sigma2 == 0.0 {
        (norm, tx.clone())
    } else {
        let draws = draw_noise(alloc.k_used, sigma2, noise_rng);
        let noise = scatter_noise(&draws, &alloc, cfg.c_m);
        let rx: Vec<Complex64> = tx.iter().zip(draws.iter()).map(|(t, n)| t + n).collect();
        (norm.add(tape.constant(noise)), rx)
    };

    let xhat = match model {
        Model::Roi(codec) => codec.decoder.forward(tape, bind, received, &geometry)?,
        Model::Conv(codec) => codec.decode(bind, received, h, w)?,
    };

    let weights = match model {
        Model::Roi(_) if cfg.flags.roi_loss => link.weights,
        _ => LossWeights::uniform(),
    };
    let masks = region_masks(&geometry.map, h, w)?;
    let loss = roi_loss_graph(tape, x, xhat, &masks, &weights);

    Ok(SampleRun {
        loss,
        xhat,
        geometry,
        masks,
        alloc,
        tx,
        rx,
        power_scale: scale,
    })
}

/// Averages per-sample losses into one batch loss on the same tape.
pub fn batch_loss<'t>(samples: &[SampleRun<'t>]) -> Tensor<'t> {
    assert!(!samples.is_empty(), "batch must contain at least one sample");
    let mut total = samples[0].loss;
    for s in &samples[1..] {
        total = total.add(s.loss);
    }
    total.mul_scalar(1.0 / samples.len() as f64)
}

/// Clamps a reconstruction to the displayable range; metrics and rendered
/// outputs use this, the loss never does.
pub fn clamp_pixels(xhat: &ArrayD<f64>) -> ArrayD<f64> {
    xhat.mapv(|v| v.clamp(0.0, 1.0))
}

/// Clamped reconstruction as an [`Image`] (the scoring and display form).
pub fn reconstruction_image(h: usize, w: usize, xhat: &ArrayD<f64>) -> Image {
    let pixels = clamp_pixels(xhat)
        .into_dimensionality()
        .expect("reconstruction is (h*w, 3)");
    Image::new(h, w, pixels)
}

fn power_scale_of(value: &ArrayD<f64>, target_sq: f64) -> f64 {
    let sum_sq: f64 = value.iter().map(|v| v * v).sum();
    if sum_sq == 0.0 {
        1.0
    } else {
        (target_sq / sum_sq).sqrt()
    }
}

/// Interprets a `(B, 2*c_m)` real matrix as complex symbols.
fn reals_matrix(
    value: &ArrayD<f64>,
    positions: usize,
    c_m: usize,
) -> Result<ndarray::Array2<Complex64>> {
    let flat: Vec<f64> = value.iter().copied().collect();
    if flat.len() != positions * 2 * c_m {
        return Err(Error::internal(format!(
            "symbol matrix has {} reals, expected {}",
            flat.len(),
            positions * 2 * c_m
        )));
    }
    let symbols = reals_to_complex(&flat);
    Ok(ndarray::Array2::from_shape_vec((positions, c_m), symbols)
        .expect("length checked above"))
}

/// Lays packed-order noise draws back onto the `(B, 2*c_m)` real grid;
/// dropped coordinates stay exactly zero.
fn scatter_noise(draws: &[Complex64], alloc: &Allocation, c_m: usize) -> ArrayD<f64> {
    let b = alloc.positions();
    let mut noise = ArrayD::zeros(IxDyn(&[b, 2 * c_m]));
    let mut next = 0;
    for (pos, &c) in alloc.per_position.iter().enumerate() {
        for ch in 0..c {
            noise[[pos, 2 * ch]] = draws[next].re;
            noise[[pos, 2 * ch + 1]] = draws[next].im;
            next += 1;
        }
    }
    debug_assert_eq!(next, draws.len());
    noise
}
