//! Index-vector builders for tensor reorganisation.
//!
//! Every layout change in the model — patch embedding, patch merging,
//! window partitioning, attention-head splitting, routing the feature map
//! into heavy/light token streams — is expressed as a `gather` (and its
//! transpose `scatter`) over flat `(positions, channels)` storage.  The
//! builders here produce the flat index vectors those ops consume; the
//! autodiff layer then gets exact gradients for free.
//!
//! Conventions: feature maps are row-major over positions (`pos = y * w + x`)
//! with channels contiguous per position, so the flat offset of `(y, x, c)`
//! is `(y * w + x) * channels + c`.

use std::rc::Rc;

use crate::error::{Error, Result};

/// Gather indices that stack the given rows of an `(n, c)` matrix into a
/// `(rows.len(), c)` matrix.
pub fn row_gather(rows: &[usize], c: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(rows.len() * c);
    for &r in rows {
        for ch in 0..c {
            idx.push(r * c + ch);
        }
    }
    idx
}

/// Space-to-depth: `(h*w, c)` → `(h/f * w/f, f*f*c)`.
///
/// Each output position packs an `f × f` block; the packed channels are
/// ordered `(dy, dx, channel)`, matching the inverse [`depth_to_space`].
pub fn space_to_depth(h: usize, w: usize, c: usize, f: usize) -> Result<Vec<usize>> {
    if h % f != 0 || w % f != 0 {
        return Err(Error::domain(format!(
            "space-to-depth factor {f} does not divide {h}x{w}"
        )));
    }
    let (oh, ow) = (h / f, w / f);
    let mut idx = Vec::with_capacity(h * w * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for dy in 0..f {
                for dx in 0..f {
                    for ch in 0..c {
                        let y = oy * f + dy;
                        let x = ox * f + dx;
                        idx.push((y * w + x) * c + ch);
                    }
                }
            }
        }
    }
    Ok(idx)
}

/// Depth-to-space: `(h*w, f*f*c)` → `(h*f * w*f, c)`, the inverse of
/// [`space_to_depth`] run at the coarse resolution `h × w`.
pub fn depth_to_space(h: usize, w: usize, c: usize, f: usize) -> Vec<usize> {
    let fw = w * f;
    let packed = f * f * c;
    let mut idx = Vec::with_capacity(h * f * fw * c);
    for y in 0..h * f {
        for x in 0..fw {
            let (oy, dy) = (y / f, y % f);
            let (ox, dx) = (x / f, x % f);
            for ch in 0..c {
                idx.push((oy * w + ox) * packed + (dy * f + dx) * c + ch);
            }
        }
    }
    idx
}

/// Nearest-neighbour upsample: `(h*w, c)` → `(h*f * w*f, c)`.
pub fn upsample_nearest(h: usize, w: usize, c: usize, f: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(h * f * w * f * c);
    for y in 0..h * f {
        for x in 0..w * f {
            let src = (y / f) * w + x / f;
            for ch in 0..c {
                idx.push(src * c + ch);
            }
        }
    }
    idx
}

/// Token ordering for a set of grid patches at one feature resolution.
///
/// `positions[i]` is the flat feature position (row-major over the full
/// `r_h × r_w` map) of the `i`-th token.  Tokens are ordered patch by
/// patch (in the order given), and row-major inside each patch, so a
/// per-patch layer can process contiguous row ranges of the gathered
/// matrix.
#[derive(Debug, Clone)]
pub struct PatchLayout {
    /// Feature position of each token, in token order.
    pub positions: Vec<usize>,
    /// Patch height in feature cells.
    pub patch_h: usize,
    /// Patch width in feature cells.
    pub patch_w: usize,
    /// Number of patches covered.
    pub n_patches: usize,
}

impl PatchLayout {
    /// Tokens per patch.
    pub fn tokens_per_patch(&self) -> usize {
        self.patch_h * self.patch_w
    }

    /// Total token count.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// True when the layout covers no patches.
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Gather indices pulling the tokens out of an `(r_h*r_w, c)` map.
    pub fn gather(&self, c: usize) -> Rc<Vec<usize>> {
        Rc::new(row_gather(&self.positions, c))
    }
}

/// Builds the row-major-in-patch token layout for `patches` (0-based grid
/// cells) on an `r_h × r_w` feature map split into an `n_h × n_w` grid.
pub fn patch_layout(
    patches: &[(usize, usize)],
    r_h: usize,
    r_w: usize,
    n_h: usize,
    n_w: usize,
) -> Result<PatchLayout> {
    if n_h == 0 || n_w == 0 || r_h % n_h != 0 || r_w % n_w != 0 {
        return Err(Error::domain(format!(
            "grid {n_h}x{n_w} does not tile feature map {r_h}x{r_w}"
        )));
    }
    let (ph, pw) = (r_h / n_h, r_w / n_w);
    let mut positions = Vec::with_capacity(patches.len() * ph * pw);
    for &(pi, pj) in patches {
        if pi >= n_h || pj >= n_w {
            return Err(Error::domain(format!(
                "patch ({pi}, {pj}) outside {n_h}x{n_w} grid"
            )));
        }
        for dy in 0..ph {
            for dx in 0..pw {
                positions.push((pi * ph + dy) * r_w + pj * pw + dx);
            }
        }
    }
    Ok(PatchLayout { positions, patch_h: ph, patch_w: pw, n_patches: patches.len() })
}

/// Window partition of a set of patches.
///
/// Tokens are ordered patch-major, window-major (row-major over windows
/// inside a patch), then row-major inside each window, so consecutive
/// groups of `window²` rows of the gathered matrix form one attention
/// window.
#[derive(Debug, Clone)]
pub struct WindowLayout {
    /// Feature position of each token, in window order.
    pub positions: Vec<usize>,
    /// Window side length in feature cells.
    pub window: usize,
    /// Total number of windows across all patches.
    pub n_windows: usize,
}

impl WindowLayout {
    /// Tokens per window.
    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    /// Total token count.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// True when the layout covers no windows.
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Gather indices pulling the windowed tokens out of an
    /// `(r_h*r_w, c)` map.
    pub fn gather(&self, c: usize) -> Rc<Vec<usize>> {
        Rc::new(row_gather(&self.positions, c))
    }
}

/// Builds the window partition for `patches` with side `window`.
///
/// The window must tile each patch exactly; callers clamp the configured
/// window to the patch side first (`window_eff = min(window, patch side)`).
pub fn window_layout(
    patches: &[(usize, usize)],
    r_h: usize,
    r_w: usize,
    n_h: usize,
    n_w: usize,
    window: usize,
) -> Result<WindowLayout> {
    let base = patch_layout(patches, r_h, r_w, n_h, n_w)?;
    let (ph, pw) = (base.patch_h, base.patch_w);
    if window == 0 || ph % window != 0 || pw % window != 0 {
        return Err(Error::domain(format!(
            "window {window} does not tile patch {ph}x{pw}"
        )));
    }
    let (wy, wx) = (ph / window, pw / window);
    let mut positions = Vec::with_capacity(base.len());
    for &(pi, pj) in patches {
        let (y0, x0) = (pi * ph, pj * pw);
        for gy in 0..wy {
            for gx in 0..wx {
                for dy in 0..window {
                    for dx in 0..window {
                        let y = y0 + gy * window + dy;
                        let x = x0 + gx * window + dx;
                        positions.push(y * r_w + x);
                    }
                }
            }
        }
    }
    Ok(WindowLayout {
        positions,
        window,
        n_windows: patches.len() * wy * wx,
    })
}

/// Gather indices reshaping `(n_windows * n, heads * d)` window tokens
/// into per-head batches `(n_windows * heads, n, d)`.
pub fn split_heads(n_windows: usize, n: usize, heads: usize, d: usize) -> Vec<usize> {
    let c = heads * d;
    let mut idx = Vec::with_capacity(n_windows * heads * n * d);
    for wi in 0..n_windows {
        for h in 0..heads {
            for t in 0..n {
                for k in 0..d {
                    idx.push((wi * n + t) * c + h * d + k);
                }
            }
        }
    }
    idx
}

/// Gather indices producing the transposed per-head batches
/// `(n_windows * heads, d, n)` — the `Kᵀ` operand of the attention
/// score product.
pub fn split_heads_t(n_windows: usize, n: usize, heads: usize, d: usize) -> Vec<usize> {
    let c = heads * d;
    let mut idx = Vec::with_capacity(n_windows * heads * n * d);
    for wi in 0..n_windows {
        for h in 0..heads {
            for k in 0..d {
                for t in 0..n {
                    idx.push((wi * n + t) * c + h * d + k);
                }
            }
        }
    }
    idx
}

/// Gather indices merging per-head batches `(n_windows * heads, n, d)`
/// back into `(n_windows * n, heads * d)`; inverse of [`split_heads`].
pub fn merge_heads(n_windows: usize, n: usize, heads: usize, d: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(n_windows * heads * n * d);
    for wi in 0..n_windows {
        for t in 0..n {
            for h in 0..heads {
                for k in 0..d {
                    idx.push(((wi * heads + h) * n + t) * d + k);
                }
            }
        }
    }
    idx
}
