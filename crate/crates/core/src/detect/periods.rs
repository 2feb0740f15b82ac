use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::hcluster::ClusterAssignment;
use crate::histo::{intensity_proxy, window_duration, SensorWindow};
use crate::{Error, Result};

/// Background period classes, quietest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PeriodLabel {
    /// Quiet / night.
    #[serde(rename = "NP")]
    Np,
    /// Some outdoor activity.
    #[serde(rename = "AP")]
    Ap,
    /// Rush hour.
    #[serde(rename = "RP")]
    Rp,
}

impl PeriodLabel {
    pub const ALL: [PeriodLabel; 3] = [PeriodLabel::Np, PeriodLabel::Ap, PeriodLabel::Rp];

    pub fn as_str(self) -> &'static str {
        match self {
            PeriodLabel::Np => "NP",
            PeriodLabel::Ap => "AP",
            PeriodLabel::Rp => "RP",
        }
    }
}

impl fmt::Display for PeriodLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PeriodLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PeriodLabel::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown period '{s}'")))
    }
}

/// Mean window intensity proxy of each cluster, indexed by `label - 1`.
pub fn cluster_proxies(assignment: &ClusterAssignment, windows: &[SensorWindow]) -> Result<Vec<f64>> {
    if assignment.labels.len() != windows.len() {
        return Err(Error::Shape {
            expected: windows.len(),
            actual: assignment.labels.len(),
        });
    }
    let mut sum = vec![0.0; assignment.k];
    let mut count = vec![0usize; assignment.k];
    for (&label, w) in assignment.labels.iter().zip(windows) {
        sum[label - 1] += intensity_proxy(&w.histogram);
        count[label - 1] += 1;
    }
    Ok(sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect())
}

/// Rank the three clusters of a day by mean intensity: quietest is NP,
/// loudest is RP.
pub fn label_periods(assignment: &ClusterAssignment, windows: &[SensorWindow]) -> Result<Vec<PeriodLabel>> {
    if assignment.k != 3 {
        return Err(Error::config(format!(
            "period labelling needs exactly 3 clusters, got {}",
            assignment.k
        )));
    }
    let proxies = cluster_proxies(assignment, windows)?;
    if proxies.iter().any(|p| !p.is_finite()) {
        return Err(Error::config("a cluster has no windows"));
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| proxies[a].total_cmp(&proxies[b]));
    let tol = 1e-9 * proxies.iter().fold(1.0f64, |m, p| m.max(p.abs()));
    if proxies[order[1]] - proxies[order[0]] <= tol || proxies[order[2]] - proxies[order[1]] <= tol {
        return Err(Error::config(format!(
            "clusters are not separable by intensity (proxies {proxies:?})"
        )));
    }
    let mut period_of_cluster = [PeriodLabel::Np; 3];
    for (rank, &cluster) in order.iter().enumerate() {
        period_of_cluster[cluster] = PeriodLabel::ALL[rank];
    }
    Ok(assignment.labels.iter().map(|&l| period_of_cluster[l - 1]).collect())
}

/// A maximal block of consecutive windows sharing one period label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodRun {
    pub period: PeriodLabel,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

/// Collapse per-window labels into runs; a gap in the window sequence also
/// ends a run.
pub fn period_runs(starts: &[DateTime<Utc>], labels: &[PeriodLabel]) -> Vec<PeriodRun> {
    let mut runs: Vec<PeriodRun> = Vec::new();
    for (&start, &period) in starts.iter().zip(labels) {
        match runs.last_mut() {
            Some(run) if run.period == period && run.end == start => run.end = start + window_duration(),
            _ => runs.push(PeriodRun {
                period,
                start,
                end: start + window_duration(),
            }),
        }
    }
    runs
}
