//! Insight extraction on top of the clustered, decorrelated windows:
//! background periods, chi-square activity scores and multi-node rain.

mod chi2;
mod periods;
mod rain;

pub use chi2::{
    chi_square_cdf, chi_square_quantile, chi_square_scores, detect_activity, qq_points,
    ActivityScore, QqPoint,
};
pub use periods::{cluster_proxies, label_periods, period_runs, PeriodLabel, PeriodRun};
pub use rain::{
    apply_rain_override, estimate_rain, rain_marks, NodeMarks, RainInterval, RainParams,
};
