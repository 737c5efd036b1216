//! Training loop, checkpoint selection, evaluation and the supervised baseline.

mod batch;
mod eval;
mod trainer;

pub use batch::{make_pair_batch, BatchItem};
pub use eval::{
    evaluate, evaluate_model, ConstantEstimator, Estimator, EvalConfig, EvalReport, FeatureError, GtEstimator,
    HrvErrors, ModelEstimator, WindowResult,
};
pub use trainer::{
    baseline_supervised_step, mean_ipr, prepare_records, select_model, supervised_loss, train, train_baseline,
    EpochRecord, StepRecord, TrainConfig, TrainLog, TrainOutput,
};
