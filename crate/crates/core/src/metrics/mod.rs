//! Forecast verification: categorical scores at rain-rate thresholds,
//! continuous errors, fractions skill score, ROC analysis and the per-lead
//! time report.

mod categorical;
mod continuous;
mod fss;
mod report;
mod roc;

pub use categorical::{contingency, csi, far, Contingency};
pub use continuous::{mae, mse, pcc};
pub use fss::{fss, fss_window, neighborhood_counts, window_size};
pub use report::{
    aggregate_by_lead_time, frame_scores, mean_std, ForecastBundle, Metric, MetricsConfig, ReportRow,
    VerificationReport,
};
pub use roc::{auc, roc_curve, RocCurve, RocPoint, ROC_THRESHOLDS};

/// Pairwise (cascade) summation; the result depends only on the order of
/// `values`, not on how work is scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
