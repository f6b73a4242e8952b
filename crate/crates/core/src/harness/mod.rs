//! Experiment orchestration behind the `dive` binary.

mod config;
mod pipeline;

pub use config::{EvalConfig, ExperimentConfig, OracleConfig, SweepGrid};
pub use pipeline::{
    eval_pool, eval_set, evaluate, explain, fisher_for, gen_data, read_sweep, report, row_key, sweep, sweep_means,
    sweep_point, train, worker_count, Models, Paths, Selector, SweepRow, TrainTarget, VaeVariant,
};
