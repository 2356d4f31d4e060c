//! Regressors and training: multiple linear regression, dense networks with
//! LeakyReLU, dropout and batch normalisation, Adam with an optional cyclic
//! schedule, and checkpoint files.

mod checkpoint;
mod mlr;
mod nn;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, ModelKind, CHECKPOINT_MAGIC};
pub use mlr::MlrParams;
pub use nn::{mse_loss, Architecture, BatchNorm, Dense, DropoutMasks, ForwardCache, Mode, Network};
pub use optim::{cyclic_lr, Adam, AdamConfig, CyclicLr, LrSchedule, Reduction};
pub use train::{
    evaluate_mse, per_output_mse, predict_physical, to_physical, train, Callback, CallbackCurve, LearningCurves,
    ModelSpec, Regressor, TrainConfig, Trained,
};
