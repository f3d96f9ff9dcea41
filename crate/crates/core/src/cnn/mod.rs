//! Small residual 1-D CNN window classifier, trained from scratch.

pub mod io;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use io::{load_model, save_model, Provenance, MODEL_FORMAT};
pub use model::{argmax, batch_from_windows, Mode, Model, ModelConfig, N_CLASSES};
pub use optim::{adam_step, one_cycle_lr, AdamConfig, AdamState, OneCycleConfig};
pub use tensor::Tensor;
pub use train::{train, train_with_progress, EpochMetrics, TrainConfig, TrainOutcome};
