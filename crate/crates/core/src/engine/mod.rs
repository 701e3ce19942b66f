//! Unrolling, exact backpropagation through time, training and checkpoints.

mod checkpoint;
mod metrics;
mod model;
mod optim;
mod report;
mod train;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use metrics::{evaluate, Metrics};
pub use model::{Backward, ForwardPass, Init, Model, ModelConfig, Score, StepCache};
pub use optim::{clip_grad_norm, Clip, OptimizerConfig, OptimizerState, BASELINE_CLIP};
pub use report::{JsonlSink, NullSink, ReportSink, RunReport};
pub use train::{init_model, resume, shard, train, truncated_gradient, windows, LrDecay, TrainConfig};
