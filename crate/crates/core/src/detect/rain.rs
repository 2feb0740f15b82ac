use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use super::chi2::ActivityScore;
use super::periods::cluster_proxies;
use crate::hcluster::ClusterAssignment;
use crate::histo::{intensity_proxy, window_duration, SensorWindow};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RainParams {
    /// Fraction of reporting nodes that must be marked in a slot.
    pub quorum: f64,
    /// Shortest run kept as rain.
    pub min_duration_minutes: i64,
    /// A window only counts as rain-like when its own intensity proxy is at
    /// least this loud.
    pub min_proxy: f64,
}

impl Default for RainParams {
    fn default() -> Self {
        Self {
            quorum: 0.8,
            min_duration_minutes: 15,
            min_proxy: 50.0,
        }
    }
}

impl RainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.quorum > 0.0 && self.quorum <= 1.0) {
            return Err(Error::config(format!("rain quorum {} outside (0, 1]", self.quorum)));
        }
        if self.min_duration_minutes < 0 {
            return Err(Error::config("rain minimum duration must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RainInterval {
    pub start: DateTime<Utc>,
    /// Exclusive.
    pub end: DateTime<Utc>,
    pub supporting_node_count: usize,
}

impl RainInterval {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }
}

/// One node's rain marks for a day, keyed by window start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeMarks {
    pub node_id: String,
    pub marks: BTreeMap<DateTime<Utc>, bool>,
}

/// Mark windows that belong to the node's loudest daily cluster and are
/// themselves loud enough to be rain.
pub fn rain_marks(
    assignment: &ClusterAssignment,
    windows: &[SensorWindow],
    min_proxy: f64,
) -> Result<Vec<bool>> {
    let proxies = cluster_proxies(assignment, windows)?;
    let loudest = proxies
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i + 1);
    Ok(assignment
        .labels
        .iter()
        .zip(windows)
        .map(|(&l, w)| Some(l) == loudest && intensity_proxy(&w.histogram) >= min_proxy)
        .collect())
}

/// Rain intervals from co-located nodes.
///
/// A slot is a candidate when at least two nodes are marked and the marked
/// share of the nodes reporting in that slot reaches the quorum. Maximal runs
/// of consecutive candidate slots lasting at least the minimum duration
/// become intervals; shorter runs are dropped as impulse noise.
pub fn estimate_rain(nodes: &[NodeMarks], params: &RainParams) -> Result<Vec<RainInterval>> {
    params.validate()?;
    if nodes.len() < 2 {
        return Err(Error::InsufficientSensors(nodes.len()));
    }

    let mut slots: BTreeMap<DateTime<Utc>, (usize, Vec<usize>)> = BTreeMap::new();
    for (n, node) in nodes.iter().enumerate() {
        for (&t, &marked) in &node.marks {
            let entry = slots.entry(t).or_default();
            entry.0 += 1;
            if marked {
                entry.1.push(n);
            }
        }
    }

    let step = window_duration();
    let min_len = TimeDelta::minutes(params.min_duration_minutes);
    let mut out = Vec::new();
    let mut run: Option<(DateTime<Utc>, DateTime<Utc>, BTreeSet<usize>)> = None;
    let mut flush = |run: Option<(DateTime<Utc>, DateTime<Utc>, BTreeSet<usize>)>| {
        if let Some((start, end, support)) = run {
            if end - start >= min_len {
                out.push(RainInterval {
                    start,
                    end,
                    supporting_node_count: support.len(),
                });
            }
        }
    };
    for (&t, (reporting, marked)) in &slots {
        let candidate = marked.len() >= 2 && marked.len() as f64 >= params.quorum * *reporting as f64;
        if !candidate {
            flush(run.take());
            continue;
        }
        match &mut run {
            Some((_, end, support)) if *end == t => {
                *end = t + step;
                support.extend(marked.iter().copied());
            }
            _ => {
                flush(run.take());
                run = Some((t, t + step, marked.iter().copied().collect()));
            }
        }
    }
    flush(run);
    Ok(out)
}

/// Force windows inside rain intervals to inactive, keeping their score.
pub fn apply_rain_override(activity: &[ActivityScore], rain: &[RainInterval]) -> Vec<ActivityScore> {
    activity
        .iter()
        .map(|a| {
            if rain.iter().any(|r| r.contains(a.window_start)) {
                ActivityScore {
                    active: false,
                    suppressed_by_rain: true,
                    ..*a
                }
            } else {
                *a
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t(slot: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2016, 7, 28, 0, 0, 0).unwrap() + TimeDelta::minutes(5 * slot)
    }

    /// `nodes` nodes over 288 slots; `wet(node, slot)` decides the mark.
    fn marks(nodes: usize, wet: impl Fn(usize, i64) -> bool) -> Vec<NodeMarks> {
        (0..nodes)
            .map(|n| NodeMarks {
                node_id: n.to_string(),
                marks: (0..288).map(|s| (t(s), wet(n, s))).collect(),
            })
            .collect()
    }

    #[test]
    fn simultaneous_elevation_is_one_interval() {
        let nodes = marks(7, |_, s| (100..109).contains(&s));
        let rain = estimate_rain(&nodes, &RainParams::default()).unwrap();
        assert_eq!(rain.len(), 1);
        assert_eq!((rain[0].start, rain[0].end), (t(100), t(109)));
        assert_eq!(rain[0].supporting_node_count, 7);
    }

    #[test]
    fn single_node_never_rains() {
        let nodes = marks(7, |n, _| n == 3);
        assert!(estimate_rain(&nodes, &RainParams::default()).unwrap().is_empty());
    }

    #[test]
    fn quorum_arithmetic() {
        // 6 of 7 = 0.857 passes 0.8, 5 of 7 = 0.714 fails
        let six = marks(7, |n, s| n < 6 && (10..20).contains(&s));
        assert_eq!(estimate_rain(&six, &RainParams::default()).unwrap().len(), 1);
        let five = marks(7, |n, s| n < 5 && (10..20).contains(&s));
        assert!(estimate_rain(&five, &RainParams::default()).unwrap().is_empty());
    }

    #[test]
    fn short_runs_dropped_and_gaps_split() {
        let nodes = marks(7, |_, s| (10..12).contains(&s) || (50..53).contains(&s) || (60..70).contains(&s));
        let rain = estimate_rain(&nodes, &RainParams::default()).unwrap();
        assert_eq!(rain.len(), 2);
        assert_eq!((rain[0].start, rain[0].end), (t(50), t(53)));
        assert_eq!((rain[1].start, rain[1].end), (t(60), t(70)));
    }

    #[test]
    fn needs_two_sensors() {
        let nodes = marks(1, |_, _| true);
        assert!(matches!(estimate_rain(&nodes, &RainParams::default()), Err(Error::InsufficientSensors(1))));
    }

    #[test]
    fn override_boundaries() {
        let rain = [RainInterval {
            start: t(10),
            end: t(13),
            supporting_node_count: 7,
        }];
        let activity: Vec<ActivityScore> = (9..14)
            .map(|s| ActivityScore {
                window_start: t(s),
                chi2: 20.0,
                active: true,
                suppressed_by_rain: false,
            })
            .collect();
        let out = apply_rain_override(&activity, &rain);
        let suppressed: Vec<bool> = out.iter().map(|a| a.suppressed_by_rain).collect();
        assert_eq!(suppressed, vec![false, true, true, true, false]);
        assert!(out.iter().all(|a| a.chi2 == 20.0));
        assert!(out.iter().all(|a| a.active != a.suppressed_by_rain));
        assert_eq!(apply_rain_override(&activity, &[]), activity);
    }
}
