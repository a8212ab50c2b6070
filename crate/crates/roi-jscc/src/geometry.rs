//! Region geometry: patch-grid classification around the ROI, importance mask
//! generation, feature-to-patch correspondence, and the heavy/light attention
//! routing rule.
//!
//! An image is partitioned into an `n_h x n_w` grid of patches. The single
//! patch at the ROI position is labeled ROI, every patch 8-adjacent to it is
//! ROP, and everything else is RONI. All functions here are pure; positions
//! are 1-based in the public API (matching configuration files) and converted
//! to 0-based indices internally.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Patch categories, ordered by importance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Roi,
    Rop,
    Roni,
}

impl Region {
    /// Embedding value used when building the importance mask.
    pub fn embedding(self) -> f64 {
        match self {
            Region::Roi => 1.0,
            Region::Rop => 0.5,
            Region::Roni => 0.0,
        }
    }
}

/// Patch-grid dimensions together with the feature resolution they map onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_h: usize,
    pub n_w: usize,
    pub feat_h: usize,
    pub feat_w: usize,
}

impl GridSpec {
    pub fn new(n_h: usize, n_w: usize, feat_h: usize, feat_w: usize) -> Result<Self> {
        if n_h == 0 || n_w == 0 {
            return Err(Error::domain("patch grid must be at least 1x1"));
        }
        if feat_h == 0 || feat_w == 0 || feat_h % n_h != 0 || feat_w % n_w != 0 {
            return Err(Error::domain(format!(
                "feature dims {feat_h}x{feat_w} must be positive multiples of the {n_h}x{n_w} grid"
            )));
        }
        Ok(GridSpec {
            n_h,
            n_w,
            feat_h,
            feat_w,
        })
    }
}

/// ROI position on the patch grid, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoiPosition {
    pub h: usize,
    pub w: usize,
}

impl RoiPosition {
    pub fn new(h: usize, w: usize) -> Self {
        RoiPosition { h, w }
    }

    fn checked(self, n_h: usize, n_w: usize) -> Result<(usize, usize)> {
        if self.h < 1 || self.h > n_h || self.w < 1 || self.w > n_w {
            return Err(Error::domain(format!(
                "ROI position ({}, {}) outside {}x{} grid",
                self.h, self.w, n_h, n_w
            )));
        }
        Ok((self.h - 1, self.w - 1))
    }
}

impl std::fmt::Display for RoiPosition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.h, self.w)
    }
}

/// Per-patch region labels on the grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    pub n_h: usize,
    pub n_w: usize,
    labels: Vec<Region>,
}

impl RegionMap {
    /// Label of the 0-based cell (row, col).
    pub fn label(&self, row: usize, col: usize) -> Region {
        self.labels[row * self.n_w + col]
    }

    pub fn labels(&self) -> &[Region] {
        &self.labels
    }

    /// (n_roi, n_rop, n_roni) cell counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for l in &self.labels {
            match l {
                Region::Roi => c.0 += 1,
                Region::Rop => c.1 += 1,
                Region::Roni => c.2 += 1,
            }
        }
        c
    }

    /// 0-based cells with the given label, row-major order.
    pub fn cells_with(&self, region: Region) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.n_h {
            for c in 0..self.n_w {
                if self.label(r, c) == region {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

/// Importance mask at feature resolution; values in {1.0, 0.5, 0.0}.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMask {
    pub feat_h: usize,
    pub feat_w: usize,
    values: Vec<f64>,
}

impl ImportanceMask {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.feat_w + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Heavy (self-attention) versus light (spatial-attention) patch assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionRouting {
    /// 0-based patch cells on the self-attention path.
    pub heavy: Vec<(usize, usize)>,
    /// 0-based patch cells on the spatial-attention path.
    pub light: Vec<(usize, usize)>,
}

/// Number of 8-adjacent neighbors of `(row, col)` carrying `label`.
fn adjacent_count(map: &RegionMap, row: usize, col: usize, label: Region) -> usize {
    let mut n = 0;
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            if dr == 0 && dc == 0 {
                continue;
            }
            let r = row as i64 + dr;
            let c = col as i64 + dc;
            if r >= 0 && c >= 0 && (r as usize) < map.n_h && (c as usize) < map.n_w {
                if map.label(r as usize, c as usize) == label {
                    n += 1;
                }
            }
        }
    }
    n
}

/// Classify every patch of an `n_h x n_w` grid relative to the ROI at `gamma`.
///
/// The ROI cell itself is `Roi`, every cell within Chebyshev distance 1 is
/// `Rop`, and the rest are `Roni`.
pub fn classify_regions(gamma: RoiPosition, n_h: usize, n_w: usize) -> Result<RegionMap> {
    if n_h == 0 || n_w == 0 {
        return Err(Error::domain("patch grid must be at least 1x1"));
    }
    let (gr, gc) = gamma.checked(n_h, n_w)?;
    let mut labels = Vec::with_capacity(n_h * n_w);
    for r in 0..n_h {
        for c in 0..n_w {
            let dist = r.abs_diff(gr).max(c.abs_diff(gc));
            labels.push(match dist {
                0 => Region::Roi,
                1 => Region::Rop,
                _ => Region::Roni,
            });
        }
    }
    Ok(RegionMap { n_h, n_w, labels })
}

/// Upsample the per-patch embedding (1.0 / 0.5 / 0.0) to feature resolution by
/// nearest-neighbor block replication.
pub fn make_importance_mask(map: &RegionMap, feat_h: usize, feat_w: usize) -> Result<ImportanceMask> {
    let grid = GridSpec::new(map.n_h, map.n_w, feat_h, feat_w)?;
    let bh = grid.feat_h / grid.n_h;
    let bw = grid.feat_w / grid.n_w;
    let mut values = Vec::with_capacity(feat_h * feat_w);
    for r in 0..feat_h {
        for c in 0..feat_w {
            values.push(map.label(r / bh, c / bw).embedding());
        }
    }
    Ok(ImportanceMask {
        feat_h,
        feat_w,
        values,
    })
}

/// Split patches into the heavy self-attention path and the light
/// spatial-attention path.
///
/// The ROI patch is always heavy and RONI patches are always light. An ROP
/// patch goes light when it has at least `threshold` RONI cells among its
/// 8-neighbors; raising the threshold keeps more of the ROP ring on the heavy
/// path.
pub fn route_attention(map: &RegionMap, threshold: usize) -> Result<AttentionRouting> {
    if threshold == 0 {
        return Err(Error::domain("routing threshold must be at least 1"));
    }
    let mut heavy = Vec::new();
    let mut light = Vec::new();
    for r in 0..map.n_h {
        for c in 0..map.n_w {
            match map.label(r, c) {
                Region::Roi => heavy.push((r, c)),
                Region::Roni => light.push((r, c)),
                Region::Rop => {
                    if adjacent_count(map, r, c, Region::Roni) >= threshold {
                        light.push((r, c));
                    } else {
                        heavy.push((r, c));
                    }
                }
            }
        }
    }
    Ok(AttentionRouting { heavy, light })
}

/// Default ROP-routing threshold: keeps seven of the eight ROP patches of an
/// interior ROI on the heavy path (only the far corner, with five RONI
/// neighbors, goes light).
pub const DEFAULT_ROUTING_THRESHOLD: usize = 4;

/// Label every feature position by the region of its containing patch.
///
/// Row-major over (feat_h, feat_w).
pub fn feature_labels(map: &RegionMap, feat_h: usize, feat_w: usize) -> Result<Vec<Region>> {
    let grid = GridSpec::new(map.n_h, map.n_w, feat_h, feat_w)?;
    let bh = grid.feat_h / grid.n_h;
    let bw = grid.feat_w / grid.n_w;
    let mut out = Vec::with_capacity(feat_h * feat_w);
    for r in 0..feat_h {
        for c in 0..feat_w {
            out.push(map.label(r / bh, c / bw));
        }
    }
    Ok(out)
}

/// Pixel rectangle `(row0, col0, height, width)` of a 0-based patch cell in an
/// `img_h x img_w` image partitioned by the map's grid.
pub fn patch_rect(
    map: &RegionMap,
    cell: (usize, usize),
    img_h: usize,
    img_w: usize,
) -> Result<(usize, usize, usize, usize)> {
    if img_h % map.n_h != 0 || img_w % map.n_w != 0 {
        return Err(Error::domain(format!(
            "image {img_h}x{img_w} not divisible by {}x{} grid",
            map.n_h, map.n_w
        )));
    }
    let ph = img_h / map.n_h;
    let pw = img_w / map.n_w;
    Ok((cell.0 * ph, cell.1 * pw, ph, pw))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: count RONI 8-neighbors of a cell by brute force
    /// over the whole grid.
    fn roni_neighbors_oracle(map: &RegionMap, cell: (usize, usize)) -> usize {
        let mut n = 0;
        for r in 0..map.n_h {
            for c in 0..map.n_w {
                let adjacent = (r, c) != cell
                    && r.abs_diff(cell.0) <= 1
                    && c.abs_diff(cell.1) <= 1;
                if adjacent && map.label(r, c) == Region::Roni {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn interior_roi_on_4x4() {
        let map = classify_regions(RoiPosition::new(2, 2), 4, 4).unwrap();
        assert_eq!(map.counts(), (1, 8, 7));
        assert_eq!(map.label(1, 1), Region::Roi);
        // The 3x3 block rows/cols 0..3 is ROI plus its ROP ring.
        for r in 0..3 {
            for c in 0..3 {
                if (r, c) != (1, 1) {
                    assert_eq!(map.label(r, c), Region::Rop, "cell ({r},{c})");
                }
            }
        }
        // Last row and last column are RONI.
        for i in 0..4 {
            assert_eq!(map.label(3, i), Region::Roni);
            assert_eq!(map.label(i, 3), Region::Roni);
        }
    }

    #[test]
    fn corner_roi_on_4x4() {
        let map = classify_regions(RoiPosition::new(1, 1), 4, 4).unwrap();
        assert_eq!(map.counts(), (1, 3, 12));
        assert_eq!(map.cells_with(Region::Rop), vec![(0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn degenerate_1x1_grid() {
        let map = classify_regions(RoiPosition::new(1, 1), 1, 1).unwrap();
        assert_eq!(map.counts(), (1, 0, 0));
    }

    #[test]
    fn out_of_grid_gamma_is_domain_error() {
        assert!(classify_regions(RoiPosition::new(5, 2), 4, 4).is_err());
        assert!(classify_regions(RoiPosition::new(0, 2), 4, 4).is_err());
    }

    #[test]
    fn partition_identity_all_positions() {
        for n_h in 1..=5 {
            for n_w in 1..=5 {
                for h in 1..=n_h {
                    for w in 1..=n_w {
                        let map = classify_regions(RoiPosition::new(h, w), n_h, n_w).unwrap();
                        let (roi, rop, roni) = map.counts();
                        assert_eq!(roi, 1);
                        assert_eq!(roi + rop + roni, n_h * n_w);
                        assert!(rop <= 8);
                        assert!(roni + 9 >= n_h * n_w || roni == n_h * n_w - 1 - rop);
                    }
                }
            }
        }
    }

    #[test]
    fn translation_equivariance() {
        // The label of a cell depends only on its offset from gamma, so any
        // shift of gamma shifts the labels on the overlapping cells.
        let a = classify_regions(RoiPosition::new(2, 2), 5, 5).unwrap();
        let b = classify_regions(RoiPosition::new(3, 4), 5, 5).unwrap();
        let (dr, dc) = (1i64, 2i64);
        for r in 0..5i64 {
            for c in 0..5i64 {
                let (sr, sc) = (r + dr, c + dc);
                if sr >= 0 && sr < 5 && sc >= 0 && sc < 5 {
                    assert_eq!(
                        a.label(r as usize, c as usize),
                        b.label(sr as usize, sc as usize)
                    );
                }
            }
        }
    }

    #[test]
    fn mask_matches_embedding_at_grid_resolution() {
        let map = classify_regions(RoiPosition::new(2, 2), 4, 4).unwrap();
        let mask = make_importance_mask(&map, 4, 4).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(mask.value(r, c), map.label(r, c).embedding());
            }
        }
        assert_eq!(mask.value(1, 1), 1.0);
        assert_eq!(mask.value(0, 0), 0.5);
        assert_eq!(mask.value(3, 3), 0.0);
    }

    #[test]
    fn mask_block_replicates() {
        let map = classify_regions(RoiPosition::new(2, 2), 4, 4).unwrap();
        let mask = make_importance_mask(&map, 8, 8).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(mask.value(r, c), map.label(r / 2, c / 2).embedding());
            }
        }
        // Block-constant within each 2x2 block.
        for r in (0..8).step_by(2) {
            for c in (0..8).step_by(2) {
                let v = mask.value(r, c);
                assert_eq!(v, mask.value(r + 1, c));
                assert_eq!(v, mask.value(r, c + 1));
                assert_eq!(v, mask.value(r + 1, c + 1));
            }
        }
    }

    #[test]
    fn mask_single_patch_grid_is_all_ones() {
        let map = classify_regions(RoiPosition::new(1, 1), 1, 1).unwrap();
        let mask = make_importance_mask(&map, 4, 4).unwrap();
        assert!(mask.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mask_rejects_non_divisible_dims() {
        let map = classify_regions(RoiPosition::new(2, 2), 4, 4).unwrap();
        assert!(make_importance_mask(&map, 6, 8).is_err());
    }

    #[test]
    fn mask_values_in_allowed_set() {
        for h in 1..=4 {
            for w in 1..=4 {
                let map = classify_regions(RoiPosition::new(h, w), 4, 4).unwrap();
                let mask = make_importance_mask(&map, 16, 16).unwrap();
                for &v in mask.values() {
                    assert!(v == 0.0 || v == 0.5 || v == 1.0);
                }
            }
        }
    }

    #[test]
    fn routing_interior_gamma_enumerated() {
        let map = classify_regions(RoiPosition::new(2, 2), 4, 4).unwrap();
        // Oracle: RONI-neighbor counts of the eight ROP cells.
        let expected: Vec<((usize, usize), usize)> = map
            .cells_with(Region::Rop)
            .into_iter()
            .map(|cell| (cell, roni_neighbors_oracle(&map, cell)))
            .collect();
        assert_eq!(
            expected,
            vec![
                ((0, 0), 0),
                ((0, 1), 0),
                ((0, 2), 2),
                ((1, 0), 0),
                ((1, 2), 3),
                ((2, 0), 2),
                ((2, 1), 3),
                ((2, 2), 5),
            ]
        );

        // Default threshold: only the far corner (five RONI neighbors) is light.
        let routing = route_attention(&map, DEFAULT_ROUTING_THRESHOLD).unwrap();
        let light_rop: Vec<_> = routing
            .light
            .iter()
            .copied()
            .filter(|&c| map.label(c.0, c.1) == Region::Rop)
            .collect();
        assert_eq!(light_rop, vec![(2, 2)]);
        assert_eq!(routing.heavy.len(), 8); // ROI + 7 ROP

        // Threshold 3 additionally sends the two edge-adjacent ROP cells light.
        let routing3 = route_attention(&map, 3).unwrap();
        let light_rop3: Vec<_> = routing3
            .light
            .iter()
            .copied()
            .filter(|&c| map.label(c.0, c.1) == Region::Rop)
            .collect();
        assert_eq!(light_rop3, vec![(1, 2), (2, 1), (2, 2)]);
    }

    #[test]
    fn routing_unreachable_threshold_keeps_all_rop_heavy() {
        let map = classify_regions(RoiPosition::new(2, 2), 4, 4).unwrap();
        let routing = route_attention(&map, 9).unwrap();
        assert_eq!(routing.heavy.len(), 9); // ROI + all 8 ROP
        assert_eq!(routing.light.len(), 7); // the RONI cells
    }

    #[test]
    fn routing_corner_gamma_enumerated() {
        let map = classify_regions(RoiPosition::new(1, 1), 4, 4).unwrap();
        assert_eq!(roni_neighbors_oracle(&map, (1, 1)), 5);
        assert_eq!(roni_neighbors_oracle(&map, (0, 1)), 2);
        assert_eq!(roni_neighbors_oracle(&map, (1, 0)), 2);
        let routing = route_attention(&map, 3).unwrap();
        let light_rop: Vec<_> = routing
            .light
            .iter()
            .copied()
            .filter(|&c| map.label(c.0, c.1) == Region::Rop)
            .collect();
        assert_eq!(light_rop, vec![(1, 1)]);
    }

    #[test]
    fn routing_partitions_and_majority_holds() {
        for h in 1..=4 {
            for w in 1..=4 {
                let map = classify_regions(RoiPosition::new(h, w), 4, 4).unwrap();
                let routing = route_attention(&map, DEFAULT_ROUTING_THRESHOLD).unwrap();
                assert_eq!(routing.heavy.len() + routing.light.len(), 16);
                // ROI heavy, RONI light.
                assert!(routing.heavy.contains(&(h - 1, w - 1)));
                for cell in map.cells_with(Region::Roni) {
                    assert!(routing.light.contains(&cell));
                }
                // Majority of ROP stays heavy.
                let rop = map.cells_with(Region::Rop);
                if !rop.is_empty() {
                    let heavy_rop = rop.iter().filter(|c| routing.heavy.contains(c)).count();
                    let light_rop = rop.len() - heavy_rop;
                    assert!(heavy_rop >= light_rop, "gamma ({h},{w})");
                }
            }
        }
    }

    #[test]
    fn feature_labels_counts_scale_with_resolution() {
        let map = classify_regions(RoiPosition::new(2, 2), 4, 4).unwrap();
        let labels = feature_labels(&map, 8, 8).unwrap();
        let roi = labels.iter().filter(|&&l| l == Region::Roi).count();
        let rop = labels.iter().filter(|&&l| l == Region::Rop).count();
        let roni = labels.iter().filter(|&&l| l == Region::Roni).count();
        assert_eq!((roi, rop, roni), (4, 32, 28));
    }

    #[test]
    fn feature_labels_identity_resolution() {
        let map = classify_regions(RoiPosition::new(3, 1), 4, 4).unwrap();
        let labels = feature_labels(&map, 4, 4).unwrap();
        assert_eq!(labels, map.labels().to_vec());
    }

    #[test]
    fn feature_labels_single_patch() {
        let map = classify_regions(RoiPosition::new(1, 1), 1, 1).unwrap();
        let labels = feature_labels(&map, 4, 4).unwrap();
        assert_eq!(labels.len(), 16);
        assert!(labels.iter().all(|&l| l == Region::Roi));
    }

    #[test]
    fn patch_rect_geometry() {
        let map = classify_regions(RoiPosition::new(2, 3), 4, 4).unwrap();
        let rect = patch_rect(&map, (1, 2), 256, 256).unwrap();
        assert_eq!(rect, (64, 128, 64, 64));
        assert!(patch_rect(&map, (0, 0), 250, 256).is_err());
    }
}
