//! Masked-token evaluation: log-perplexity, accuracy, representation stray
//! against a base model, λ sweeps, and report/curve emitters.
//!
//! Masks for repeat `r` come from `seeds[r]` alone, so every model scored
//! under one [`EvalConfig`] is compared on identical inputs.

mod curves;
mod metrics;
mod report;
mod sweep;

pub use curves::{curves_csv, curves_svg, Curve};
pub use metrics::{
    log_perplexity, mlm_accuracy, representation_stray, score_masked, score_repeats, EvalConfig, MaskedScores,
    Normalization,
};
pub use report::{evaluate_models, DatasetReport, EvalReport, ModelReport, ReportFormat};
pub use sweep::{parse_grid, sweep_lambda, SweepOutcome, SweepRow, SweepTable};
