//! ROI-guided deep joint source-channel coding for wireless image
//! transmission, with a simulated AWGN channel and an evaluation harness.
//!
//! The crate is organized around the transmission pipeline:
//!
//! * [`geometry`] — region-of-interest classification on the patch grid,
//!   importance masks, and attention routing decisions;
//! * [`autodiff`] — a small `f64` reverse-mode tape the models are built on;
//! * [`channel`] — power normalization, AWGN, and SNR/CPP arithmetic;
//! * [`bandwidth`] — ROI-adaptive per-region channel dimensions, packing of
//!   feature matrices into complex symbol vectors, and symbol traces;
//! * [`metrics`] — region-weighted training loss and PSNR reporting;
//! * [`model`] — encoder/decoder networks and the differentiable
//!   end-to-end pipeline;
//! * [`data`] — image loading, cropping, and the procedural toy corpus;
//! * [`harness`] — training loop, checkpointing, evaluation grids, and
//!   ablation runs;
//! * [`render`] — PNG visualization panels and line plots.

pub mod autodiff;
pub mod bandwidth;
pub mod channel;
pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod render;
pub mod util;

pub use error::{Error, Result};
