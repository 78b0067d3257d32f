//! Training loops, the active-learning outer loop and experiment output.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod optim;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{
    parse_seeds, Ablation, Budget, DataConfig, DataSource, ExperimentConfig, Strategy, TrainConfig,
};
pub use experiment::{
    run_experiment, run_seed, select_from_scores, ExperimentRecord, SeedRun, SplitResult,
    SplitSummary,
};
pub use optim::{Adam, AdamConfig};
pub use train::{
    accuracy, argmax_rows, evaluate, fit_task, minimax_grads, minimax_step, task_model, train_mal,
    train_task, MalModels, MinimaxGrads, TrainLog,
};
