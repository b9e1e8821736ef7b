//! Accuracy assessment of height maps against reference heights.

mod metrics;
mod strata;
mod tables;

use std::fmt::Write as _;

pub use metrics::{build_eval_mask, compute_metrics, masked_pairs, metrics_from_pairs, MetricReport, OUTLIER_CAP};
pub use strata::{
    default_strata, strata_csv, stratified_metrics, validate_strata, Family, StrataRasters, StratumDef, StratumReport,
    ASPECT_MIN_SLOPE, STRATA_HEADER,
};
pub use tables::{density_scatter, density_scatter_csv, residual_bins, residual_bins_csv, DensityScatter, ResidualBin};

use crate::fmt_sig6;

pub const METRICS_HEADER: &str = "n,mbe,mae,rmse,maer,r2,fit_slope,fit_intercept,mean_vh";

/// One-row metrics table.
pub fn metrics_csv(m: &MetricReport) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    let _ = writeln!(
        s,
        "{},{},{},{},{},{},{},{},{}",
        m.n,
        fmt_sig6(m.mbe),
        fmt_sig6(m.mae),
        fmt_sig6(m.rmse),
        fmt_sig6(m.maer),
        fmt_sig6(m.r2),
        fmt_sig6(m.fit_slope),
        fmt_sig6(m.fit_intercept),
        fmt_sig6(m.mean_vh)
    );
    s
}
