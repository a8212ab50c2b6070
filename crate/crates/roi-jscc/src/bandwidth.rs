//! ROI-adaptive bandwidth allocation and symbol packing.
//!
//! The encoder produces `c_max` complex channels per bottleneck position;
//! the allocator decides how many of them each position may actually send,
//! redistributing channel uses from the background (RONI) to the ROI patch.
//! With `b` positions and a budget of `k` symbols, the average allocation is
//! `c_avg = k / b` and the per-region dimensions are
//!
//! ```text
//! eta    = (n_h * n_w - 9 * n_roi) / n_roi
//! c_roi  = min(c_max, floor((1 + eta * tau) * c_avg))
//! c_rop  = c_avg
//! c_roni = max(1, floor((1 - tau) * c_avg))
//! ```
//!
//! For an interior ROI (all eight neighbours present) the per-position sum
//! equals the budget exactly whenever the products are integral; any other
//! placement comes in under budget. Allocation arithmetic is done on
//! integers, with `tau` read to the nearest 1e-6, so the floors are immune
//! to floating-point dust.
//!
//! Packing keeps the first `c` complex channels of each position in
//! row-major position order; unpacking zero-fills the dropped channels.

use crate::error::{Error, Result};
use crate::geometry::{feature_labels, Region, RegionMap};
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{Read as _, Write as _};
use std::path::Path;

const TAU_SCALE: i128 = 1_000_000;

/// How the symbol budget is spread over positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPolicy {
    /// Reallocation ratio `tau` in `[0, 1)`. Zero degenerates to uniform.
    pub tau: f64,
    /// When false every position gets `c_avg` regardless of region.
    pub roi_adaptive: bool,
}

impl BandwidthPolicy {
    pub fn roi(tau: f64) -> Self {
        BandwidthPolicy { tau, roi_adaptive: true }
    }

    pub fn uniform() -> Self {
        BandwidthPolicy { tau: 0.0, roi_adaptive: false }
    }
}

/// Channel dimensions granted to each region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionChannels {
    pub roi: usize,
    pub rop: usize,
    pub roni: usize,
}

impl RegionChannels {
    pub fn get(&self, region: Region) -> usize {
        match region {
            Region::Roi => self.roi,
            Region::Rop => self.rop,
            Region::Roni => self.roni,
        }
    }
}

/// Complete allocation for one (region map, feature resolution, budget).
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub per_region: RegionChannels,
    pub c_avg: usize,
    pub c_max: usize,
    /// Complex channels kept at each feature position, row-major.
    pub per_position: Vec<usize>,
    /// Symbols actually sent; `<= k_budget`, with equality for interior
    /// ROI placements under exact arithmetic and for uniform policies.
    pub k_used: usize,
    pub k_budget: usize,
}

impl Allocation {
    pub fn positions(&self) -> usize {
        self.per_position.len()
    }
}

/// Decide per-position channel counts for a symbol budget of `k_budget`.
pub fn allocate(
    map: &RegionMap,
    feat_h: usize,
    feat_w: usize,
    c_max: usize,
    k_budget: usize,
    policy: &BandwidthPolicy,
) -> Result<Allocation> {
    if !(0.0..1.0).contains(&policy.tau) {
        return Err(Error::domain(format!(
            "tau must lie in [0, 1), got {}",
            policy.tau
        )));
    }
    let b = feat_h * feat_w;
    if b == 0 {
        return Err(Error::domain("feature grid must be non-empty"));
    }
    if k_budget == 0 || k_budget % b != 0 {
        return Err(Error::config(format!(
            "symbol budget {k_budget} must be a positive multiple of the \
             {b} feature positions ({feat_h}x{feat_w})"
        )));
    }
    let c_avg = k_budget / b;
    if c_avg > c_max {
        return Err(Error::config(format!(
            "budget needs {c_avg} channels per position but the encoder \
             provides only {c_max}"
        )));
    }
    let labels = feature_labels(map, feat_h, feat_w)?;

    let per_region = if policy.roi_adaptive {
        let (n_roi, _, _) = map.counts();
        debug_assert!(n_roi > 0, "region map always contains the ROI");
        let tau_i = (policy.tau * TAU_SCALE as f64).round() as i128;
        // eta = (n_h*n_w - 9*n_roi) / n_roi, kept as a rational over n_roi.
        let eta_num = map.n_h as i128 * map.n_w as i128 - 9 * n_roi as i128;
        let c_avg_i = c_avg as i128;
        let roi_num = c_avg_i * (TAU_SCALE * n_roi as i128 + eta_num * tau_i);
        let roi_den = TAU_SCALE * n_roi as i128;
        let c_roi_unclamped = roi_num.div_euclid(roi_den);
        if c_roi_unclamped < 1 {
            return Err(Error::domain(format!(
                "tau {} starves the ROI on a {}x{} grid",
                policy.tau, map.n_h, map.n_w
            )));
        }
        let c_roi = (c_roi_unclamped as usize).min(c_max);
        let c_roni_i = (c_avg_i * (TAU_SCALE - tau_i)).div_euclid(TAU_SCALE);
        let c_roni = (c_roni_i.max(1)) as usize;
        RegionChannels { roi: c_roi, rop: c_avg, roni: c_roni }
    } else {
        RegionChannels { roi: c_avg, rop: c_avg, roni: c_avg }
    };

    let per_position: Vec<usize> = labels.iter().map(|&r| per_region.get(r)).collect();
    let k_used: usize = per_position.iter().sum();
    assert!(
        k_used <= k_budget,
        "allocation overran the budget: {k_used} > {k_budget}"
    );
    Ok(Allocation {
        per_region,
        c_avg,
        c_max,
        per_position,
        k_used,
        k_budget,
    })
}

/// Keep the first allocated channels of each position, position-major.
pub fn pack(z: &Array2<Complex64>, alloc: &Allocation) -> Vec<Complex64> {
    assert_eq!(z.nrows(), alloc.positions(), "pack: position count mismatch");
    assert_eq!(z.ncols(), alloc.c_max, "pack: channel count mismatch");
    let mut out = Vec::with_capacity(alloc.k_used);
    for (i, &c) in alloc.per_position.iter().enumerate() {
        for j in 0..c {
            out.push(z[(i, j)]);
        }
    }
    out
}

/// Inverse of [`pack`]: allocated channels restored, the rest zero.
pub fn unpack(symbols: &[Complex64], alloc: &Allocation) -> Result<Array2<Complex64>> {
    if symbols.len() != alloc.k_used {
        return Err(Error::protocol(format!(
            "expected {} symbols, got {}",
            alloc.k_used,
            symbols.len()
        )));
    }
    let mut z = Array2::from_elem((alloc.positions(), alloc.c_max), Complex64::new(0.0, 0.0));
    let mut it = symbols.iter();
    for (i, &c) in alloc.per_position.iter().enumerate() {
        for j in 0..c {
            z[(i, j)] = *it.next().unwrap();
        }
    }
    Ok(z)
}

/// 0/1 mask over the real-valued feature matrix `(positions, 2*c_max)`
/// marking which components are transmitted. Real channel `2j` and `2j+1`
/// carry the real and imaginary part of complex channel `j`, so the mask is
/// constant on those pairs.
pub fn keep_mask(alloc: &Allocation) -> Array2<f64> {
    let mut m = Array2::zeros((alloc.positions(), 2 * alloc.c_max));
    for (i, &c) in alloc.per_position.iter().enumerate() {
        for j in 0..2 * c {
            m[(i, j)] = 1.0;
        }
    }
    m
}

/// Pair consecutive reals `(re, im)` into complex symbols.
pub fn reals_to_complex(reals: &[f64]) -> Vec<Complex64> {
    assert!(reals.len() % 2 == 0, "real vector must have even length");
    reals
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect()
}

/// Inverse of [`reals_to_complex`].
pub fn complex_to_reals(symbols: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(symbols.len() * 2);
    for c in symbols {
        out.push(c.re);
        out.push(c.im);
    }
    out
}

// ---- symbol traces ---------------------------------------------------------

const TRACE_MAGIC: &[u8; 8] = b"RJSYM01\n";

/// Metadata stored alongside a dumped symbol vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub n_h: usize,
    pub n_w: usize,
    /// 1-based ROI position.
    pub gamma: (usize, usize),
    pub feat_h: usize,
    pub feat_w: usize,
    pub c_max: usize,
    pub k_budget: usize,
    pub k_used: usize,
    pub per_region: RegionChannels,
    /// `None` for a noiseless channel.
    pub snr_db: Option<f64>,
    pub power: f64,
}

/// Write symbols as little-endian `f32` pairs behind a JSON header.
pub fn write_symbol_trace(path: &Path, header: &TraceHeader, symbols: &[Complex64]) -> Result<()> {
    if symbols.len() != header.k_used {
        return Err(Error::protocol(format!(
            "trace header claims {} symbols but {} were provided",
            header.k_used,
            symbols.len()
        )));
    }
    let head = serde_json::to_vec(header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(TRACE_MAGIC)?;
    f.write_all(&(head.len() as u32).to_le_bytes())?;
    f.write_all(&head)?;
    for c in symbols {
        f.write_all(&(c.re as f32).to_le_bytes())?;
        f.write_all(&(c.im as f32).to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Read a trace written by [`write_symbol_trace`].
pub fn read_symbol_trace(path: &Path) -> Result<(TraceHeader, Vec<Complex64>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)
        .map_err(|_| Error::protocol("symbol trace too short for magic"))?;
    if &magic != TRACE_MAGIC {
        return Err(Error::protocol("not a symbol trace (bad magic)"));
    }
    let mut len4 = [0u8; 4];
    f.read_exact(&mut len4)
        .map_err(|_| Error::protocol("symbol trace missing header length"))?;
    let hlen = u32::from_le_bytes(len4) as usize;
    let mut head = vec![0u8; hlen];
    f.read_exact(&mut head)
        .map_err(|_| Error::protocol("symbol trace truncated in header"))?;
    let header: TraceHeader = serde_json::from_slice(&head)
        .map_err(|e| Error::protocol(format!("bad trace header: {e}")))?;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    if payload.len() != header.k_used * 8 {
        return Err(Error::protocol(format!(
            "trace payload holds {} bytes, expected {} for {} symbols",
            payload.len(),
            header.k_used * 8,
            header.k_used
        )));
    }
    let symbols = payload
        .chunks_exact(8)
        .map(|b| {
            let re = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
            let im = f32::from_le_bytes([b[4], b[5], b[6], b[7]]) as f64;
            Complex64::new(re, im)
        })
        .collect();
    Ok((header, symbols))
}
