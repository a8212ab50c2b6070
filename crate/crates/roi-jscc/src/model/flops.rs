//! Analytical multiply-accumulate (MAC) counts for the codec.
//!
//! The counts are closed-form functions of the architecture and the
//! routing decision, independent of any forward pass.  Conventions:
//! a linear layer over `n` rows costs `n * in * out`; attention cost
//! covers QKV/output projections plus the two batched score/apply
//! products; layer norms are counted at `4 * n * c` (mean, variance,
//! normalise, affine); pooling and elementwise gating count one MAC per
//! multiply.  Additions, comparisons, and transcendental functions are
//! not counted — the totals are for comparing routing decisions, not for
//! cycle-accurate modelling.

use crate::model::block::BlockGeometry;
use crate::model::codec::ModelConfig;
use crate::model::layers::{CA_REDUCTION, GDF_EXPANSION};

/// MACs of windowed multi-head attention over `tokens` tokens grouped in
/// windows of `window²`.
pub fn attention_macs(tokens: u64, window: u64, c: u64) -> u64 {
    // QKV + output projections, then scores (Q Kᵀ) and apply (A V): each
    // batched product costs tokens * window² * c across all heads.
    4 * tokens * c * c + 2 * tokens * window * window * c
}

/// MACs of the spatial gate over `tokens` tokens.
pub fn gate_macs(tokens: u64, c: u64) -> u64 {
    // Channel-mean pool (c), 3x3 single-channel conv (9), rescale (c).
    tokens * (2 * c + 9)
}

/// MACs of one ROI block for a given geometry and feature width.
///
/// `mask_injection` adds the importance projection; routing decides how
/// many tokens take the attention path versus the gate path.
pub fn block_macs(geo: &BlockGeometry, c: usize, mask_injection: bool) -> u64 {
    let c = c as u64;
    let p = geo.positions() as u64;
    let tokens_per_patch = ((geo.r_h / geo.n_h) * (geo.r_w / geo.n_w)) as u64;
    let heavy = geo.routing.heavy.len() as u64 * tokens_per_patch;
    let light = geo.routing.light.len() as u64 * tokens_per_patch;
    let window = geo.window as u64;

    let mut total = 0;
    if mask_injection {
        total += p * c; // pointwise 1 -> c projection
    }
    total += 4 * p * c; // pre-attention layer norm
    total += attention_macs(heavy, window, c);
    total += gate_macs(light, c);
    // Joint tail: depthwise 3x3, channel attention, output projection.
    total += 9 * p * c;
    let ca_hidden = (c / CA_REDUCTION as u64).max(1);
    total += 2 * p * c + 2 * c * ca_hidden;
    total += p * c * c;
    // Feed-forward sub-block.
    total += 4 * p * c; // second layer norm
    let hidden = GDF_EXPANSION as u64 * c;
    total += 2 * p * c * hidden; // two pointwise expansions
    total += 2 * 9 * p * hidden; // two depthwise convs
    total += p * hidden; // gate multiply
    total += p * hidden * c; // output projection
    total
}

/// MACs of the same block with every patch forced onto the attention
/// path (the no-split ablation).
pub fn block_macs_all_heavy(geo: &BlockGeometry, c: usize, mask_injection: bool) -> u64 {
    let mut all_heavy = geo.clone();
    all_heavy.routing.heavy.extend(all_heavy.routing.light.drain(..));
    block_macs(&all_heavy, c, mask_injection)
}

/// Total MACs of the transformer encoder plus decoder for one sample.
pub fn codec_macs(cfg: &ModelConfig, geos: &[BlockGeometry]) -> u64 {
    assert_eq!(geos.len(), cfg.stages, "one geometry per stage");
    let mask = cfg.flags.mask_injection;
    let mut total = 0u64;

    // Encoder: patch embedding, stages, merges, bottleneck head.
    let p0 = geos[0].positions() as u64;
    total += p0 * 12 * cfg.channels[0] as u64;
    for s in 0..cfg.stages {
        let c = cfg.channels[s];
        let bm = block_macs(&geos[s], c, mask);
        total += 2 * cfg.blocks[s] as u64 * bm; // encoder + decoder stage
        if s + 1 < cfg.stages {
            let coarse = geos[s + 1].positions() as u64;
            // Encoder merge 4c -> c_next and decoder expansion c_next -> 4c.
            total += 2 * coarse * 4 * c as u64 * cfg.channels[s + 1] as u64;
        }
    }
    let last = *cfg.channels.last().expect("validated config") as u64;
    let pb = geos[cfg.stages - 1].positions() as u64;
    total += 4 * pb * last; // encoder head layer norm
    total += 2 * pb * last * 2 * cfg.c_m as u64; // encoder head + decoder head
    total += p0 * cfg.channels[0] as u64 * 12; // decoder output projection
    total
}
