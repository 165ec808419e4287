//! Batching, training, evaluation and model comparison.

mod batch;
mod compare;
mod config;
mod trainer;

pub use batch::{assemble_batch, batch_sizes, make_batches, BatchStream};
pub use compare::{
    compare_models, prepare_comparison, repartition, CompareConfig, CompareData, CompareFailure, ComparisonReport,
    ComparisonRow,
};
pub use config::{ExperimentConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS};
pub use trainer::{
    build_for, check_channels, evaluate, model_spec, parse_predictions_csv, partition_rng, predictions_csv,
    recount_accuracy, run_experiment, train, EpochRecord, Evaluation, MetricsRecord, Prediction, TrainedRun,
    EVAL_BATCH_SIZE,
};
