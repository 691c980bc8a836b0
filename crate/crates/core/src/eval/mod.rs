//! Forecast scoring: point losses on volatility, Monte-Carlo CRPS on the full
//! predictive distribution, volatility-bucketed reports, Diebold-Mariano
//! comparisons and run-to-run robustness summaries.
//!
//! Realized volatility is `√RRV`. Returns and volatilities are scored in
//! percent unless [`EvalOptions::units`] says otherwise.

mod dm;
mod metrics;
mod report;
mod robust;

pub use dm::{dm_test, significance_stars, DmMatrix, MIN_DM_OBS};
pub use metrics::{crps_from_draws, crps_gaussian, crps_mc, mse_losses, mse_volatility, qlike, qlike_losses, stratified_draws};
pub use report::{
    bucket_by_volatility, percentile_ranks, score_paired, Cell, EvalOptions, EvalReport, GroupRow, Metric, PairedLosses,
    Realized,
};
pub use robust::{quantile_sorted, robustness_summary, write_robust_runs, write_robust_summary, RobustRun, RobustSummary};
