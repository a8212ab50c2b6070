//! Experiment orchestration: run configuration, the Adam optimizer,
//! checkpointing, and the train / evaluate / ablate entry points the CLI
//! wraps.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod optim;
pub mod train;

pub use ablate::{ablate, AblationTable, VariantId, VariantOutcome};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{Cpp, RunConfig, Variant};
pub use evaluate::{evaluate, evaluate_model, CellSummary, EvalRequest, EvalTable};
pub use optim::{clip_global_norm, global_grad_norm, Adam, AdamConfig, AdamState};
pub use train::{train, train_with_options, TrainOptions, TrainReport};
