//! Optimizers, losses, ranking metrics and the training loop.

mod fit;
mod metrics;
mod optim;

pub use fit::{
    batch_gradients, evaluate, fit, fit_on, metrics_csv, thread_pool, BatchGradients, EpochMetrics, EvalResult,
    FitOutput, MetricReport, SplitName, TrainData, CSV_HEADER, THREADS_ENV,
};
pub use metrics::{bce_loss, evaluate_scores, recall_mrr, xent_loss, RankOutcome, RankingConfig, RankingReport};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};

#[cfg(test)]
mod tests;
