//! Training harness: configuration, optimization loop, checkpointing,
//! evaluation, reporting and the component-ablation runner.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod optim;
pub mod report;
pub mod runner;

pub use ablate::{run_ablation_suite, AblationTable, ABLATION_ROWS};
pub use checkpoint::{AnyStore, Checkpoint};
pub use config::TrainConfig;
pub use eval::{score_predictions, MetricsReport, PredictionRecord};
pub use optim::AdamW;
pub use runner::{evaluate, train, TrainOutcome};
