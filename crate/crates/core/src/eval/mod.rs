//! Metrics, baselines, selector evaluation, λ sweeps and pathway trees.

pub mod metrics;
mod pathway;
mod report;
mod rl;

pub use metrics::{balanced_accuracy, bmae, weighted_f1};
pub use pathway::{PathwayEdge, PathwayNode, PathwayTree};
pub use report::{
    eval_full, eval_popwise_k, eval_random_k, eval_subset, k_subsets, render_table, report_from_traces,
    write_reports_jsonl, MetricsReport, Outcome, PopwiseResult, Summary,
};
pub use rl::{eval_rl, sweep_lambda, SelectorRun, SelectorSetup, SweepRow, SweepTable};

#[cfg(test)]
mod tests;
