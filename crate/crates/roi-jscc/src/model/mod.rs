//! Neural codec: parameters, layers, the region-routed block, and the
//! encoder/decoder pairs.

pub mod block;
pub mod codec;
pub mod flops;
pub mod layers;
pub mod params;
pub mod pipeline;
pub mod reorg;

pub use block::{BlockGeometry, RoiBlock};
pub use codec::{
    sample_geometry, AblationFlags, Codec, ConvCodec, Decoder, Encoder, ModelConfig,
    SampleGeometry,
};
pub use params::{Binding, Init, ParamId, ParamSet};
pub use pipeline::{
    batch_loss, clamp_pixels, forward_sample, reconstruction_image, LinkSpec, Model, SampleRun,
};
