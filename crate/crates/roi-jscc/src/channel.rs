//! Simulated complex AWGN channel: power normalization, noise injection,
//! and the SNR / bandwidth-rate arithmetic that goes with it.
//!
//! Symbols are unit-power by convention: after [`power_normalize`], the
//! packed vector satisfies `(1/k) * sum |z_i|^2 = P` exactly. For a channel
//! at `snr` dB the complex noise variance is `sigma^2 = P * 10^(-snr/10)`,
//! split evenly between the real and imaginary components.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Channel quality. `Noiseless` bypasses noise injection entirely, so a
/// transmit-receive round trip returns bit-identical symbols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Snr {
    /// Signal-to-noise ratio in decibels.
    Db(f64),
    Noiseless,
}

impl Snr {
    pub fn is_noiseless(&self) -> bool {
        matches!(self, Snr::Noiseless)
    }
}

impl std::fmt::Display for Snr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Snr::Db(v) => write!(f, "{v} dB"),
            Snr::Noiseless => write!(f, "noiseless"),
        }
    }
}

/// Transmission-side channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub snr: Snr,
    /// Average symbol power `P` enforced by normalization.
    pub power: f64,
}

impl ChannelSpec {
    pub fn new(snr: Snr) -> Self {
        ChannelSpec { snr, power: 1.0 }
    }

    /// Complex noise variance `sigma^2`; zero when noiseless.
    pub fn noise_variance(&self) -> f64 {
        match self.snr {
            Snr::Db(db) => self.power * 10f64.powf(-db / 10.0),
            Snr::Noiseless => 0.0,
        }
    }
}

/// Scale `z` in place so its average symbol power equals `power` exactly;
/// returns the applied scale. An all-zero vector is left unchanged.
pub fn power_normalize(z: &mut [Complex64], power: f64) -> f64 {
    let ssq: f64 = z.iter().map(|c| c.norm_sqr()).sum();
    if ssq == 0.0 {
        return 1.0;
    }
    let scale = (power * z.len() as f64 / ssq).sqrt();
    for c in z.iter_mut() {
        *c *= scale;
    }
    scale
}

/// Draw circularly-symmetric complex Gaussian noise, `sigma2` per symbol
/// (`sigma2 / 2` per real component). Real parts are drawn before imaginary
/// parts within each symbol, which fixes the stream layout used when the
/// same draw is replayed componentwise.
pub fn draw_noise(n: usize, sigma2: f64, rng: &mut impl Rng) -> Vec<Complex64> {
    if sigma2 == 0.0 {
        return vec![Complex64::new(0.0, 0.0); n];
    }
    let comp = Normal::new(0.0, (sigma2 / 2.0).sqrt()).expect("valid std dev");
    (0..n)
        .map(|_| {
            let re = comp.sample(rng);
            let im = comp.sample(rng);
            Complex64::new(re, im)
        })
        .collect()
}

/// Add AWGN for the given spec in place. Noiseless specs leave `z` intact
/// and draw nothing from `rng`.
pub fn add_awgn(z: &mut [Complex64], spec: &ChannelSpec, rng: &mut impl Rng) {
    let sigma2 = spec.noise_variance();
    if sigma2 == 0.0 {
        return;
    }
    let noise = draw_noise(z.len(), sigma2, rng);
    for (c, n) in z.iter_mut().zip(noise) {
        *c += n;
    }
}

/// Normalize to the spec power, then add noise. Returns the normalization
/// scale so receivers can undo it if they operate on raw amplitudes.
pub fn transmit(z: &mut [Complex64], spec: &ChannelSpec, rng: &mut impl Rng) -> f64 {
    let scale = power_normalize(z, spec.power);
    add_awgn(z, spec, rng);
    scale
}

/// Channel usage per pixel for `k` complex symbols on an `h x w` RGB image.
pub fn cpp_value(k: usize, h: usize, w: usize) -> f64 {
    k as f64 / (3.0 * h as f64 * w as f64)
}

/// Exact symbol budget for a CPP given as the fraction `num/den`.
/// Fails unless `3 * h * w * num` is divisible by `den`, so budgets are
/// always exact integers rather than rounded floats.
pub fn symbols_for_cpp(num: u64, den: u64, h: usize, w: usize) -> Result<usize> {
    if num == 0 || den == 0 {
        return Err(Error::config(format!("CPP fraction {num}/{den} must be positive")));
    }
    let total = 3u64 * h as u64 * w as u64 * num;
    if total % den != 0 {
        return Err(Error::config(format!(
            "CPP {num}/{den} does not yield an integral symbol count for {h}x{w} \
             (3*{h}*{w}*{num} = {total} is not divisible by {den})"
        )));
    }
    Ok((total / den) as usize)
}
