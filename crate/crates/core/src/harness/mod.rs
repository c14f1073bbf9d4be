//! Training loop, checkpoints, evaluation and montages.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod montage;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::TrainConfig;
pub use eval::{evaluate, infer, psnr, write_report, EvalReport};
pub use train::{load_dataset, train, train_on, StepLog, Trainer};
