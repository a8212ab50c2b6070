//! Parameterised layers built from autodiff ops.
//!
//! Each layer registers its parameters in a [`ParamSet`] at construction
//! and replays them through a [`Binding`] at forward time, so the same
//! layer object serves training, evaluation, and checkpoint reload.

use std::rc::Rc;

use crate::autodiff::Tensor;
use crate::model::params::{Binding, Init, ParamId, ParamSet};
use crate::model::reorg::{merge_heads, split_heads, split_heads_t};

/// Fully connected layer: `y = x W + b` over the last axis of an
/// `(n, in_dim)` matrix.
#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    /// Input feature width.
    pub in_dim: usize,
    /// Output feature width.
    pub out_dim: usize,
}

impl Linear {
    /// Glorot-initialised linear layer.
    pub fn new(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = ps.register(
            &format!("{name}.w"),
            &[in_dim, out_dim],
            Init::Glorot { fan_in: in_dim, fan_out: out_dim },
        );
        let b = ps.register(&format!("{name}.b"), &[out_dim], Init::Zeros);
        Self { w, b, in_dim, out_dim }
    }

    /// Zero-initialised linear layer (residual output projections).
    pub fn new_zero(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = ps.register(&format!("{name}.w"), &[in_dim, out_dim], Init::Zeros);
        let b = ps.register(&format!("{name}.b"), &[out_dim], Init::Zeros);
        Self { w, b, in_dim, out_dim }
    }

    /// Applies the layer.
    pub fn forward<'t>(&self, bind: &Binding<'t>, x: Tensor<'t>) -> Tensor<'t> {
        x.matmul(bind.get(self.w)).add_rowvec(bind.get(self.b))
    }
}

/// Row-wise layer normalisation with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
    eps: f64,
}

/// Normalisation floor used by every layer norm in the model.
pub const LN_EPS: f64 = 1e-6;

impl LayerNorm {
    /// Layer norm over `dim` features.
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        let gamma = ps.register(&format!("{name}.g"), &[dim], Init::Ones);
        let beta = ps.register(&format!("{name}.b"), &[dim], Init::Zeros);
        Self { gamma, beta, eps: LN_EPS }
    }

    /// Applies the layer.
    pub fn forward<'t>(&self, bind: &Binding<'t>, x: Tensor<'t>) -> Tensor<'t> {
        x.layer_norm(bind.get(self.gamma), bind.get(self.beta), self.eps)
    }
}

/// Multi-head self-attention over fixed-size windows.
///
/// The input is a `(n_windows * n, c)` matrix whose rows are grouped into
/// windows of `n` tokens (the layout produced by
/// [`WindowLayout`](crate::model::reorg::WindowLayout)); attention never
/// crosses a window boundary.
#[derive(Debug, Clone)]
pub struct WindowAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    proj: Linear,
    /// Number of attention heads.
    pub heads: usize,
    /// Feature width (`heads * head_dim`).
    pub dim: usize,
}

impl WindowAttention {
    /// Attention layer over `dim` features with `heads` heads.
    ///
    /// # Panics
    ///
    /// Panics when `heads` does not divide `dim`; head width is a static
    /// architecture property.
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "heads {heads} must divide dim {dim}");
        Self {
            wq: Linear::new(ps, &format!("{name}.q"), dim, dim),
            wk: Linear::new(ps, &format!("{name}.k"), dim, dim),
            wv: Linear::new(ps, &format!("{name}.v"), dim, dim),
            proj: Linear::new(ps, &format!("{name}.proj"), dim, dim),
            heads,
            dim,
        }
    }

    /// Applies windowed attention to `(n_windows * n_tokens, dim)` rows.
    pub fn forward<'t>(
        &self,
        bind: &Binding<'t>,
        x: Tensor<'t>,
        n_windows: usize,
        n_tokens: usize,
    ) -> Tensor<'t> {
        let d = self.dim / self.heads;
        let q = self.wq.forward(bind, x);
        let k = self.wk.forward(bind, x);
        let v = self.wv.forward(bind, x);

        let batch = n_windows * self.heads;
        let qh = q.gather(
            Rc::new(split_heads(n_windows, n_tokens, self.heads, d)),
            &[batch, n_tokens, d],
        );
        let kt = k.gather(
            Rc::new(split_heads_t(n_windows, n_tokens, self.heads, d)),
            &[batch, d, n_tokens],
        );
        let vh = v.gather(
            Rc::new(split_heads(n_windows, n_tokens, self.heads, d)),
            &[batch, n_tokens, d],
        );

        let scores = qh.bmm(kt).mul_scalar(1.0 / (d as f64).sqrt());
        let attn = scores.softmax_last();
        let ctx = attn.bmm(vh);
        let merged = ctx.gather(
            Rc::new(merge_heads(n_windows, n_tokens, self.heads, d)),
            &[n_windows * n_tokens, self.dim],
        );
        self.proj.forward(bind, merged)
    }
}

/// Lightweight spatial gate for low-priority patches.
///
/// Pools channels to a single spatial map, runs one 3x3 convolution over
/// the patch, and rescales every channel of each position by the
/// resulting sigmoid gate.  Costs `O(c + 9)` multiplies per position
/// versus the attention path's `O(c² + n·c)`.
#[derive(Debug, Clone)]
pub struct SpatialGate {
    kernel: ParamId,
    bias: ParamId,
}

impl SpatialGate {
    /// Gate layer (parameters are channel-count independent).
    pub fn new(ps: &mut ParamSet, name: &str) -> Self {
        let kernel = ps.register(
            &format!("{name}.k"),
            &[1, 3, 3],
            Init::Glorot { fan_in: 9, fan_out: 9 },
        );
        let bias = ps.register(&format!("{name}.b"), &[1], Init::Zeros);
        Self { kernel, bias }
    }

    /// Applies the gate to one `(ph * pw, c)` patch.
    pub fn forward<'t>(
        &self,
        bind: &Binding<'t>,
        x: Tensor<'t>,
        ph: usize,
        pw: usize,
    ) -> Tensor<'t> {
        let pooled = x.mean_cols(); // (ph*pw, 1)
        let gate = pooled
            .dwconv3x3(bind.get(self.kernel), bind.get(self.bias), ph, pw)
            .sigmoid();
        x.mul_colvec(gate.reshape(&[ph * pw]))
    }
}

/// Squeeze-and-excitation style channel attention.
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    fc1: Linear,
    fc2: Linear,
}

/// Bottleneck reduction ratio for channel attention.
pub const CA_REDUCTION: usize = 4;

impl ChannelAttention {
    /// Channel attention over `dim` features.
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        let hidden = (dim / CA_REDUCTION).max(1);
        Self {
            fc1: Linear::new(ps, &format!("{name}.fc1"), dim, hidden),
            fc2: Linear::new(ps, &format!("{name}.fc2"), hidden, dim),
        }
    }

    /// Applies channel attention to `(n, dim)` rows.
    pub fn forward<'t>(&self, bind: &Binding<'t>, x: Tensor<'t>) -> Tensor<'t> {
        let dim = self.fc1.in_dim;
        let squeeze = x.mean_rows().reshape(&[1, dim]);
        let excite = self
            .fc2
            .forward(bind, self.fc1.forward(bind, squeeze).relu())
            .sigmoid()
            .reshape(&[dim]);
        x.mul_rowvec(excite)
    }
}

/// Depthwise 3x3 convolution layer over a spatial feature map.
#[derive(Debug, Clone)]
pub struct DwConv {
    kernel: ParamId,
    bias: ParamId,
}

impl DwConv {
    /// Depthwise conv over `dim` channels.
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        let kernel = ps.register(
            &format!("{name}.k"),
            &[dim, 3, 3],
            Init::Glorot { fan_in: 9, fan_out: 9 },
        );
        let bias = ps.register(&format!("{name}.b"), &[dim], Init::Zeros);
        Self { kernel, bias }
    }

    /// Applies the convolution to an `(h * w, c)` map.
    pub fn forward<'t>(
        &self,
        bind: &Binding<'t>,
        x: Tensor<'t>,
        h: usize,
        w: usize,
    ) -> Tensor<'t> {
        x.dwconv3x3(bind.get(self.kernel), bind.get(self.bias), h, w)
    }
}

/// Gated depthwise feed-forward network.
///
/// Two pointwise expansions feed parallel depthwise 3x3 convolutions; one
/// branch is passed through GELU and gates the other elementwise before a
/// zero-initialised projection back to `dim`, so the module starts as an
/// exact no-op inside its residual connection.
#[derive(Debug, Clone)]
pub struct Gdf {
    w1: Linear,
    w2: Linear,
    dw1: DwConv,
    dw2: DwConv,
    wout: Linear,
    hidden: usize,
}

/// Hidden-width expansion factor of the gated feed-forward network.
pub const GDF_EXPANSION: usize = 2;

impl Gdf {
    /// Feed-forward over `dim` features with hidden width
    /// `GDF_EXPANSION * dim`.
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        let hidden = GDF_EXPANSION * dim;
        Self {
            w1: Linear::new(ps, &format!("{name}.w1"), dim, hidden),
            w2: Linear::new(ps, &format!("{name}.w2"), dim, hidden),
            dw1: DwConv::new(ps, &format!("{name}.dw1"), hidden),
            dw2: DwConv::new(ps, &format!("{name}.dw2"), hidden),
            wout: Linear::new_zero(ps, &format!("{name}.out"), hidden, dim),
            hidden,
        }
    }

    /// Hidden feature width.
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Applies the network to an `(h * w, c)` map.
    pub fn forward<'t>(
        &self,
        bind: &Binding<'t>,
        x: Tensor<'t>,
        h: usize,
        w: usize,
    ) -> Tensor<'t> {
        let a = self.dw1.forward(bind, self.w1.forward(bind, x), h, w);
        let b = self.dw2.forward(bind, self.w2.forward(bind, x), h, w);
        self.wout.forward(bind, a.gelu().mul(b))
    }
}
