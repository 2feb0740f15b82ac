//! Comparison against ground truth at the point-of-interest level.
//!
//! "True detected" counts agreement in both senses (active/active and
//! quiet/quiet), so the three percentages always add up to 100.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::histo::{window_duration, SensorWindow};
use crate::par::{self, Exec};
use crate::pipeline::{detect, DetectConfig, ResultRecord, Variant};
use crate::synth::{GroundTruth, TruthLabel};
use crate::{Error, Result};

/// A PoI is active in a slot iff any node flags it.
pub fn aggregate_or(per_node: &[Vec<bool>]) -> Result<Vec<bool>> {
    let Some(first) = per_node.first() else {
        return Ok(Vec::new());
    };
    let len = first.len();
    if let Some((i, v)) = per_node.iter().enumerate().find(|(_, v)| v.len() != len) {
        return Err(Error::Misaligned(format!(
            "node {i} has {} slots, expected {len}",
            v.len()
        )));
    }
    Ok((0..len).map(|s| per_node.iter().any(|v| v[s])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionStats {
    pub true_detected_pct: f64,
    pub false_positive_pct: f64,
    pub false_negative_pct: f64,
    pub windows: usize,
}

pub fn confusion(predicted: &[bool], truth: &[bool]) -> Result<ConfusionStats> {
    if predicted.len() != truth.len() {
        return Err(Error::Misaligned(format!(
            "{} predictions for {} truth windows",
            predicted.len(),
            truth.len()
        )));
    }
    let n = predicted.len();
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let (mut agree, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => agree += 1,
        }
    }
    let pct = |c: usize| 100.0 * c as f64 / n as f64;
    Ok(ConfusionStats {
        true_detected_pct: pct(agree),
        false_positive_pct: pct(fp),
        false_negative_pct: pct(fneg),
        windows: n,
    })
}

/// Window-level truth from labelled activity intervals: a window counts as
/// active when at least half of it overlaps some interval.
pub fn windows_from_intervals(
    window_starts: &[DateTime<Utc>],
    intervals: &[(DateTime<Utc>, DateTime<Utc>)],
) -> Vec<bool> {
    let half = window_duration() / 2;
    window_starts
        .iter()
        .map(|&ws| {
            let we = ws + window_duration();
            let covered = intervals
                .iter()
                .map(|&(s, e)| {
                    let (lo, hi) = (s.max(ws), e.min(we));
                    if hi > lo {
                        hi - lo
                    } else {
                        chrono::TimeDelta::zero()
                    }
                })
                .fold(chrono::TimeDelta::zero(), |a, b| a + b);
            covered >= half
        })
        .collect()
}

/// Aligned PoI-level predictions and truth over every slot seen in either
/// input. Nodes without a record in a slot count as not flagging it.
pub fn poi_alignment(records: &[ResultRecord], truth: &GroundTruth) -> Result<(Vec<bool>, Vec<bool>)> {
    let slots: BTreeSet<DateTime<Utc>> = truth
        .records
        .iter()
        .map(|r| r.ts)
        .chain(records.iter().map(|r| r.ts))
        .collect();
    let index: BTreeMap<DateTime<Utc>, usize> = slots.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    let mut pred_nodes: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for r in records {
        let v = pred_nodes
            .entry(r.node_id.as_str())
            .or_insert_with(|| vec![false; slots.len()]);
        v[index[&r.ts]] |= r.active == 1;
    }
    let mut truth_nodes: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for r in &truth.records {
        let v = truth_nodes
            .entry(r.node_id.as_str())
            .or_insert_with(|| vec![false; slots.len()]);
        v[index[&r.ts]] |= r.label == TruthLabel::Activity;
    }
    let pred = aggregate_or(&pred_nodes.into_values().collect::<Vec<_>>())?;
    let truth = aggregate_or(&truth_nodes.into_values().collect::<Vec<_>>())?;
    let pad = |v: Vec<bool>| if v.is_empty() { vec![false; slots.len()] } else { v };
    Ok((pad(pred), pad(truth)))
}

pub fn evaluate_records(records: &[ResultRecord], truth: &GroundTruth) -> Result<ConfusionStats> {
    let (pred, truth) = poi_alignment(records, truth)?;
    confusion(&pred, &truth)
}

#[derive(Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub stats: Result<ConfusionStats>,
}

/// Run the full detection once per variant with an otherwise identical
/// configuration. A failing variant does not stop the others.
pub fn run_ablation(
    windows: &[SensorWindow],
    truth: &GroundTruth,
    variants: &[Variant],
    base: &DetectConfig,
    exec: Exec,
) -> Vec<AblationRow> {
    par::map(exec, variants, |&variant| {
        let cfg = DetectConfig {
            variant,
            ..base.clone()
        };
        let stats = detect(windows, &cfg, exec).and_then(|mut out| {
            if out.failures.is_empty() {
                evaluate_records(&out.records(), truth)
            } else {
                Err(out.failures.swap_remove(0))
            }
        });
        AblationRow { variant, stats }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::PeriodLabel;
    use crate::synth::TruthRecord;
    use chrono::{TimeDelta, TimeZone};
    use proptest::prelude::*;

    #[test]
    fn or_examples() {
        assert_eq!(aggregate_or(&[vec![false], vec![false], vec![true], vec![false]]).unwrap(), vec![true]);
        assert_eq!(aggregate_or(&[vec![false, false], vec![false, false]]).unwrap(), vec![false, false]);
        assert!(matches!(aggregate_or(&[vec![true], vec![true, false]]), Err(Error::Misaligned(_))));
    }

    #[test]
    fn confusion_examples() {
        let truth = [true, false, true, false];
        let perfect = confusion(&truth, &truth).unwrap();
        assert_eq!(
            (perfect.true_detected_pct, perfect.false_positive_pct, perfect.false_negative_pct),
            (100.0, 0.0, 0.0)
        );
        let inverted: Vec<bool> = truth.iter().map(|t| !t).collect();
        let s = confusion(&inverted, &truth).unwrap();
        assert_eq!((s.true_detected_pct, s.false_positive_pct, s.false_negative_pct), (0.0, 50.0, 50.0));
        assert!(confusion(&[true], &[true, false]).is_err());
    }

    #[test]
    fn interval_overlap_mapping() {
        let t0 = Utc.with_ymd_and_hms(2017, 7, 20, 14, 0, 0).unwrap();
        let starts: Vec<_> = (0..4).map(|i| t0 + TimeDelta::minutes(5 * i)).collect();
        // covers 2.5 min of window 0, all of window 1, 2 min of window 2
        let iv = [(t0 + TimeDelta::seconds(150), t0 + TimeDelta::minutes(12))];
        assert_eq!(windows_from_intervals(&starts, &iv), vec![true, true, false, false]);
    }

    #[test]
    fn poi_level_counting() {
        let t0 = Utc.with_ymd_and_hms(2016, 7, 1, 0, 0, 0).unwrap();
        let rec = |node: &str, slot: i64, active: u8| ResultRecord {
            ts: t0 + TimeDelta::minutes(5 * slot),
            node_id: node.into(),
            period: PeriodLabel::Np,
            chi2: 0.0,
            active,
            suppressed_by_rain: false,
        };
        let records = vec![rec("1", 0, 1), rec("2", 0, 0), rec("1", 1, 0), rec("2", 1, 0), rec("1", 2, 1), rec("2", 2, 0)];
        let truth = GroundTruth {
            records: [("1", 0, TruthLabel::Background), ("2", 0, TruthLabel::Activity), ("1", 1, TruthLabel::Activity), ("2", 1, TruthLabel::Rain), ("1", 2, TruthLabel::Background), ("2", 2, TruthLabel::Background)]
                .iter()
                .map(|&(n, s, label)| TruthRecord {
                    node_id: n.into(),
                    ts: t0 + TimeDelta::minutes(5 * s),
                    label,
                })
                .collect(),
        };
        // slots: (pred 1, truth 1) agree, (0, 1) false negative, (1, 0) false positive
        let s = evaluate_records(&records, &truth).unwrap();
        assert_eq!(s.windows, 3);
        assert!((s.true_detected_pct - 100.0 / 3.0).abs() < 1e-12);
        assert!((s.false_positive_pct - 100.0 / 3.0).abs() < 1e-12);
        assert!((s.false_negative_pct - 100.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn or_matches_column_any(flags in prop::collection::vec(prop::collection::vec(any::<bool>(), 20), 1..8)) {
            let got = aggregate_or(&flags).unwrap();
            for s in 0..20 {
                prop_assert_eq!(got[s], flags.iter().any(|v| v[s]));
            }
            // adding a node never clears a flag
            let mut more = flags.clone();
            more.push(vec![false; 20]);
            more.last_mut().unwrap()[3] = true;
            let wider = aggregate_or(&more).unwrap();
            prop_assert!(got.iter().zip(&wider).all(|(a, b)| !a || *b));
        }

        #[test]
        fn confusion_is_a_partition_and_permutation_invariant(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200),
            rot in 0usize..200,
        ) {
            let (p, t): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
            let s = confusion(&p, &t).unwrap();
            prop_assert!((s.true_detected_pct + s.false_positive_pct + s.false_negative_pct - 100.0).abs() < 1e-9);
            let mut shuffled = pairs.clone();
            shuffled.rotate_left(rot % pairs.len());
            shuffled.reverse();
            let (p2, t2): (Vec<bool>, Vec<bool>) = shuffled.into_iter().unzip();
            prop_assert_eq!(confusion(&p2, &t2).unwrap(), s);
        }
    }
}
