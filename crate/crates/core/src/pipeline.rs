//! End-to-end detection over a set of windows: per node-day features,
//! clustering, period labels and chi-square scoring, then the cross-node rain
//! join and override.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detect::{
    apply_rain_override, chi_square_quantile, chi_square_scores, detect_activity, estimate_rain,
    label_periods, qq_points, rain_marks, ActivityScore, NodeMarks, PeriodLabel, QqPoint,
    RainInterval, RainParams,
};
use crate::hcluster::{cut, euclidean_distances, select_linkage, ClusterAssignment, Linkage};
use crate::histo::{SensorWindow, BIN_COUNT};
use crate::par::{self, Exec};
use crate::pca::{self, ScoreMatrix, DEGENERATE_EIGENVALUE};
use crate::wavelet::BasisMatrix;
use crate::{Error, Result};

/// Preprocessing variants compared in the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "raw")]
    Raw,
    #[serde(rename = "raw+WT")]
    RawWt,
    #[serde(rename = "raw+PCA")]
    RawPca,
    #[serde(rename = "raw+PCA+WT")]
    RawPcaWt,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Raw, Variant::RawWt, Variant::RawPca, Variant::RawPcaWt];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::RawWt => "raw+WT",
            Variant::RawPca => "raw+PCA",
            Variant::RawPcaWt => "raw+PCA+WT",
        }
    }

    pub fn uses_wavelet(self) -> bool {
        matches!(self, Variant::RawWt | Variant::RawPcaWt)
    }

    pub fn uses_pca(self) -> bool {
        matches!(self, Variant::RawPca | Variant::RawPcaWt)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::domain(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum BetaMode {
    /// `beta` is the chi-square quantile at this probability.
    Quantile(f64),
    /// `beta` used verbatim.
    Fixed(f64),
}

impl BetaMode {
    pub fn beta(self, dof: usize) -> Result<f64> {
        match self {
            BetaMode::Quantile(p) => chi_square_quantile(p, dof),
            BetaMode::Fixed(b) if b >= 0.0 && b.is_finite() => Ok(b),
            BetaMode::Fixed(b) => Err(Error::config(format!("beta {b} must be finite and >= 0"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub variant: Variant,
    pub k_clusters: usize,
    /// Upper bound for the retained component count.
    pub pca_k: usize,
    pub beta: BetaMode,
    pub rain: RainParams,
    pub linkages: Vec<Linkage>,
    /// Periods with fewer windows are scored against the whole day instead.
    pub min_period_windows: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            variant: Variant::RawPcaWt,
            k_clusters: 3,
            pca_k: 4,
            beta: BetaMode::Quantile(0.975),
            rain: RainParams::default(),
            linkages: Linkage::ALL.to_vec(),
            min_period_windows: 12,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_clusters != 3 {
            return Err(Error::config(format!(
                "k_clusters = {} but background periods need exactly 3",
                self.k_clusters
            )));
        }
        if self.pca_k == 0 || self.pca_k >= BIN_COUNT {
            return Err(Error::config(format!("pca_k = {} outside 1..5", self.pca_k)));
        }
        if self.linkages.is_empty() {
            return Err(Error::config("no linkage candidates"));
        }
        if let BetaMode::Quantile(p) = self.beta {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::config(format!("quantile {p} outside (0, 1)")));
            }
        }
        self.beta.beta(self.pca_k)?;
        self.rain.validate()
    }
}

/// Everything computed for one node-day.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDayResult {
    pub node_id: String,
    pub date: NaiveDate,
    pub window_starts: Vec<DateTime<Utc>>,
    pub linkage: Linkage,
    pub ccc: f64,
    pub clusters: Vec<usize>,
    pub periods: Vec<PeriodLabel>,
    pub beta: f64,
    pub dof: usize,
    /// After the rain override.
    pub activity: Vec<ActivityScore>,
    pub rain_marks: Vec<bool>,
    pub qq: Vec<(PeriodLabel, Vec<QqPoint>)>,
}

/// One output line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub ts: DateTime<Utc>,
    pub node_id: String,
    pub period: PeriodLabel,
    pub chi2: f64,
    /// 1 when the window is flagged as outdoor activity.
    pub active: u8,
    pub suppressed_by_rain: bool,
}

#[derive(Debug, Default)]
pub struct DetectionOutput {
    /// Sorted by node id, then date.
    pub days: Vec<NodeDayResult>,
    pub rain: BTreeMap<NaiveDate, Vec<RainInterval>>,
    /// Dates that had fewer than two reporting nodes.
    pub rain_skipped: Vec<NaiveDate>,
    pub failures: Vec<Error>,
}

impl DetectionOutput {
    pub fn records(&self) -> Vec<ResultRecord> {
        self.days
            .iter()
            .flat_map(|d| {
                d.activity.iter().zip(&d.periods).map(move |(a, &period)| ResultRecord {
                    ts: a.window_start,
                    node_id: d.node_id.clone(),
                    period,
                    chi2: a.chi2,
                    active: u8::from(a.active),
                    suppressed_by_rain: a.suppressed_by_rain,
                })
            })
            .collect()
    }

    pub fn rain_intervals(&self) -> Vec<RainInterval> {
        self.rain.values().flatten().copied().collect()
    }
}

/// Feature rows of a node-day for the given variant: bin fractions, moved to
/// wavelet coefficients when the variant asks for it.
pub fn features(windows: &[SensorWindow], variant: Variant, basis: &BasisMatrix) -> Result<DMatrix<f64>> {
    let mut rows = DMatrix::zeros(windows.len(), BIN_COUNT);
    for (i, w) in windows.iter().enumerate() {
        let h = w.histogram.normalized();
        let row = if variant.uses_wavelet() {
            basis.forward(&h)?
        } else {
            h.to_vec()
        };
        for (j, v) in row.into_iter().enumerate() {
            rows[(i, j)] = v;
        }
    }
    Ok(rows)
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Standardized scores of `target` rows against a reference set.
///
/// PCA variants divide the leading `k` PC scores by `sqrt(lambda)`. The other
/// variants z-score the `k` highest-variance feature columns independently,
/// so any correlation between bins is left in place.
fn standardized_scores(variant: Variant, reference: &DMatrix<f64>, target: &DMatrix<f64>, k: usize) -> Result<ScoreMatrix> {
    if variant.uses_pca() {
        let model = pca::fit_rows(reference)?;
        let scores = pca::project(&model, target)?;
        return pca::standardize(&model, &scores, k);
    }
    let (m, d) = reference.shape();
    if m < 2 {
        return Err(Error::InsufficientData { needed: 2, got: m });
    }
    let stats: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let col = reference.column(j);
            let mu = col.mean();
            let var = col.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (m - 1) as f64;
            (mu, var)
        })
        .collect();
    let mut by_var: Vec<usize> = (0..d).collect();
    by_var.sort_by(|&a, &b| stats[b].1.total_cmp(&stats[a].1).then(a.cmp(&b)));
    let mut cols: Vec<usize> = by_var.into_iter().take(k).collect();
    cols.sort_unstable();
    if let Some(pos) = cols.iter().position(|&c| stats[c].1 <= DEGENERATE_EIGENVALUE) {
        return Err(Error::DegenerateComponent(pos + 1));
    }
    let scores = DMatrix::from_fn(target.nrows(), cols.len(), |i, c| {
        let j = cols[c];
        (target[(i, j)] - stats[j].0) / stats[j].1.sqrt()
    });
    Ok(ScoreMatrix {
        scores,
        standardized: true,
    })
}

/// Cluster, label and score one node-day. `windows` must be sorted by time.
pub fn process_node_day(windows: &[SensorWindow], cfg: &DetectConfig, basis: &BasisMatrix) -> Result<NodeDayResult> {
    process_node_day_excluding(windows, cfg, basis, &[])
}

/// [`process_node_day`] with windows inside `rain` left out of clustering and
/// of every reference set. A held-out window takes the cluster and period of
/// the nearest kept window and is scored against that period.
pub fn process_node_day_excluding(
    windows: &[SensorWindow],
    cfg: &DetectConfig,
    basis: &BasisMatrix,
    rain: &[RainInterval],
) -> Result<NodeDayResult> {
    let first = windows.first().ok_or(Error::EmptyWindow)?;
    let node_id = first.node_id.clone();
    let date = first.window_start.date_naive();
    let k = cfg.pca_k;

    let mut kept: Vec<usize> = (0..windows.len())
        .filter(|&i| !rain.iter().any(|r| r.contains(windows[i].window_start)))
        .collect();
    if kept.len() < cfg.min_period_windows.max(cfg.k_clusters) {
        kept = (0..windows.len()).collect();
    }
    let kept_windows: Vec<SensorWindow> = kept.iter().map(|&i| windows[i].clone()).collect();

    let feats = features(windows, cfg.variant, basis)?;
    let kept_feats = select_rows(&feats, &kept);
    let cluster_feats = if cfg.variant.uses_pca() {
        let model = pca::fit_rows(&kept_feats)?;
        let kk = pca::select_k(&model, k);
        let scores = pca::project(&model, &kept_feats)?;
        pca::reconstruct(&model, &scores, kk)?
    } else {
        kept_feats.clone()
    };
    let dist = euclidean_distances(&to_rows(&cluster_feats))?;
    let choice = select_linkage(&dist, &cfg.linkages)?;
    let assignment = cut(&choice.dendrogram, cfg.k_clusters)?;
    let kept_periods = label_periods(&assignment, &kept_windows)?;

    let nearest: Vec<usize> = (0..windows.len())
        .map(|i| match kept.binary_search(&i) {
            Ok(pos) => pos,
            Err(pos) if pos == kept.len() => pos - 1,
            Err(0) => 0,
            Err(pos) => {
                if i - kept[pos - 1] <= kept[pos] - i {
                    pos - 1
                } else {
                    pos
                }
            }
        })
        .collect();
    let clusters: Vec<usize> = nearest.iter().map(|&p| assignment.labels[p]).collect();
    let periods: Vec<PeriodLabel> = nearest.iter().map(|&p| kept_periods[p]).collect();

    let beta = cfg.beta.beta(k)?;
    let mut chi2 = vec![0.0; windows.len()];
    let mut qq = Vec::new();
    for period in PeriodLabel::ALL {
        let targets: Vec<usize> = (0..windows.len()).filter(|&i| periods[i] == period).collect();
        if targets.is_empty() {
            continue;
        }
        let reference: Vec<usize> = kept.iter().copied().filter(|&i| periods[i] == period).collect();
        let target_rows = select_rows(&feats, &targets);
        let local = if reference.len() >= cfg.min_period_windows {
            standardized_scores(cfg.variant, &select_rows(&feats, &reference), &target_rows, k).ok()
        } else {
            None
        };
        let scores = match local {
            Some(s) => s,
            None => standardized_scores(cfg.variant, &kept_feats, &target_rows, k)?,
        };
        let values = chi_square_scores(&scores, k)?;
        for (&i, &v) in targets.iter().zip(&values) {
            chi2[i] = v;
        }
        if values.len() >= 2 {
            qq.push((period, qq_points(&values, k)?));
        }
    }

    let active = detect_activity(&chi2, beta);
    let activity = windows
        .iter()
        .zip(chi2.iter().zip(active))
        .map(|(w, (&c, a))| ActivityScore {
            window_start: w.window_start,
            chi2: c,
            active: a,
            suppressed_by_rain: false,
        })
        .collect();
    let full_assignment = ClusterAssignment {
        k: assignment.k,
        labels: clusters,
    };
    let marks = rain_marks(&full_assignment, windows, cfg.rain.min_proxy)?;

    Ok(NodeDayResult {
        node_id,
        date,
        window_starts: windows.iter().map(|w| w.window_start).collect(),
        linkage: choice.method,
        ccc: choice.ccc,
        clusters: full_assignment.labels,
        periods,
        beta,
        dof: k,
        activity,
        rain_marks: marks,
        qq,
    })
}

/// Group windows into node-days, sorted by node id, date and time.
pub fn group_node_days(windows: &[SensorWindow]) -> Vec<Vec<SensorWindow>> {
    let mut groups: BTreeMap<(&str, NaiveDate), Vec<SensorWindow>> = BTreeMap::new();
    for w in windows {
        groups
            .entry((w.node_id.as_str(), w.window_start.date_naive()))
            .or_default()
            .push(w.clone());
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort_by_key(|w| w.window_start);
            g.dedup_by_key(|w| w.window_start);
            g
        })
        .collect()
}

pub fn detect(windows: &[SensorWindow], cfg: &DetectConfig, exec: Exec) -> Result<DetectionOutput> {
    cfg.validate()?;
    let basis = BasisMatrix::new(BIN_COUNT)?;
    let groups = group_node_days(windows);
    let with_context = |g: &[SensorWindow], r: Result<NodeDayResult>| {
        r.map_err(|e| Error::NodeDay {
            node: g[0].node_id.clone(),
            date: g[0].window_start.date_naive(),
            source: Box::new(e),
        })
    };
    let results = par::map(exec, &groups, |g| with_context(g, process_node_day(g, cfg, &basis)));

    let mut out = DetectionOutput::default();
    let mut day_groups = Vec::new();
    for (gi, r) in results.into_iter().enumerate() {
        match r {
            Ok(day) => {
                out.days.push(day);
                day_groups.push(gi);
            }
            Err(e) => out.failures.push(e),
        }
    }

    let mut by_date: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for (i, d) in out.days.iter().enumerate() {
        by_date.entry(d.date).or_default().push(i);
    }
    let mut redo: Vec<(usize, Vec<RainInterval>)> = Vec::new();
    for (date, idx) in by_date {
        if idx.len() < 2 {
            out.rain_skipped.push(date);
            continue;
        }
        let marks: Vec<NodeMarks> = idx
            .iter()
            .map(|&i| {
                let d = &out.days[i];
                NodeMarks {
                    node_id: d.node_id.clone(),
                    marks: d.window_starts.iter().copied().zip(d.rain_marks.iter().copied()).collect(),
                }
            })
            .collect();
        let rain = estimate_rain(&marks, &cfg.rain)?;
        if !rain.is_empty() {
            redo.extend(idx.iter().map(|&i| (i, rain.clone())));
            out.rain.insert(date, rain);
        }
    }

    // Rain takes a cluster of its own and squeezes the background periods;
    // redo those node-days with the rain windows held out.
    let redone = par::map(exec, &redo, |(i, rain)| {
        let g = &groups[day_groups[*i]];
        with_context(g, process_node_day_excluding(g, cfg, &basis, rain))
    });
    for ((i, rain), r) in redo.iter().zip(redone) {
        let day = &mut out.days[*i];
        match r {
            Ok(mut again) => {
                again.rain_marks = std::mem::take(&mut day.rain_marks);
                *day = again;
            }
            Err(e) => out.failures.push(e),
        }
        day.activity = apply_rain_override(&day.activity, rain);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SynthConfig};
    use crate::histo::Histogram;

    #[test]
    fn variant_tags_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
        }
        assert!("raw+FFT".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DetectConfig::default().validate().is_ok());
        let bad = DetectConfig {
            k_clusters: 4,
            ..DetectConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = DetectConfig {
            pca_k: 5,
            ..DetectConfig::default()
        };
        assert!(bad.validate().is_err());
        let fixed = DetectConfig {
            beta: BetaMode::Fixed(0.43),
            ..DetectConfig::default()
        };
        assert_eq!(fixed.beta.beta(4).unwrap(), 0.43);
    }

    #[test]
    fn labels_follow_the_generator_profile() {
        let mut cfg = SynthConfig {
            node_count: 1,
            days: 1,
            ..SynthConfig::default()
        };
        cfg.bursts.per_node_per_day = 0;
        cfg.rain.count = 0;
        let ds = generate_synthetic(&cfg).unwrap();
        let basis = BasisMatrix::new(5).unwrap();
        let day = process_node_day(&ds.windows, &DetectConfig::default(), &basis).unwrap();
        let hits = day
            .periods
            .iter()
            .enumerate()
            .filter(|(slot, p)| **p == cfg.profile[slot / 12].period)
            .count();
        assert!(hits as f64 >= 0.9 * 288.0, "{hits} of 288");
    }

    #[test]
    fn rain_windows_are_held_out_of_periods() {
        let mut cfg = SynthConfig {
            node_count: 1,
            days: 1,
            ..SynthConfig::default()
        };
        cfg.bursts.per_node_per_day = 0;
        cfg.rain.count = 0;
        let mut windows = generate_synthetic(&cfg).unwrap().windows;
        // a loud block mid-morning, as rain would leave it
        for w in &mut windows[120..132] {
            w.histogram = Histogram([0, 0, 0, 100, 2900]);
        }
        let rain = [RainInterval {
            start: windows[120].window_start,
            end: windows[132].window_start,
            supporting_node_count: 2,
        }];
        let basis = BasisMatrix::new(5).unwrap();
        let day = process_node_day_excluding(&windows, &DetectConfig::default(), &basis, &rain).unwrap();
        let hits = day
            .periods
            .iter()
            .enumerate()
            .filter(|(slot, p)| **p == cfg.profile[slot / 12].period)
            .count();
        assert!(hits as f64 >= 0.9 * 288.0, "{hits} of 288");
        assert!(day.periods[120..132].iter().all(|&p| p == PeriodLabel::Ap));
    }

    #[test]
    fn failures_carry_node_day_context() {
        let ds = generate_synthetic(&SynthConfig {
            node_count: 2,
            days: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        // node 2 keeps only two windows: too few for three clusters
        let mut windows: Vec<_> = ds.windows.iter().filter(|w| w.node_id == "1").cloned().collect();
        windows.extend(ds.windows.iter().filter(|w| w.node_id == "2").take(2).cloned());
        let out = detect(&windows, &DetectConfig::default(), Exec::Sequential).unwrap();
        assert_eq!(out.days.len(), 1);
        assert_eq!(out.failures.len(), 1);
        assert!(out.failures[0].to_string().starts_with("node 2 on 2016-07-01"));
        assert_eq!(out.rain_skipped.len(), 1);
    }
}
