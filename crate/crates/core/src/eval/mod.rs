//! Metric suite for counterfactual explanations.

mod metrics;
mod report;
mod select;

pub use metrics::{
    bias_rows, classifier_ground_truth_bias, confounding_metric, cosine_distance, embedding_frechet,
    frechet_from_moments, ground_truth_bias, identity_metrics, judge, judge_batch, judge_outputs, success_rate,
    BiasRow, ExplanationJudgment, GroupedPrediction, NuisanceFlip, SuccessSummary,
};
pub use report::{evaluate_items, EvalItem, MetricRow, MetricsReport};
pub use select::{select_eval_set, EvalSelection};
