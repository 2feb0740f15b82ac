//! Line-delimited JSON and CSV formats.
//!
//! Window records and result records are one JSON object per line.
//! Timestamps are UTC ISO 8601 with a trailing `Z`
//! (`2016-07-16T14:05:00Z`, with milliseconds only when non-zero).

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::detect::RainInterval;
use crate::eval::{AblationRow, ConfusionStats};
use crate::histo::{Histogram, IntensitySample, SensorWindow, BIN_COUNT};
use crate::pipeline::{NodeDayResult, ResultRecord};
use crate::synth::{GroundTruth, TruthLabel, TruthRecord};
use crate::{Error, Result};

pub fn format_ts(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn parse_ts(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp '{s}': {e}"))
}

pub(crate) mod ts_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_ts(*ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        parse_ts(&s).map_err(serde::de::Error::custom)
    }
}

/// Serialized form of a [`SensorWindow`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub node_id: String,
    #[serde(with = "ts_serde")]
    pub ts: DateTime<Utc>,
    pub bins: Vec<u32>,
    pub complete: bool,
}

impl From<&SensorWindow> for WindowRecord {
    fn from(w: &SensorWindow) -> Self {
        Self {
            node_id: w.node_id.clone(),
            ts: w.window_start,
            bins: w.histogram.0.to_vec(),
            complete: w.complete,
        }
    }
}

impl WindowRecord {
    fn into_window(self, line: usize) -> Result<SensorWindow> {
        let bins: [u32; BIN_COUNT] = self.bins.as_slice().try_into().map_err(|_| Error::Schema {
            line,
            message: format!("expected {BIN_COUNT} bins, got {}", self.bins.len()),
        })?;
        SensorWindow::new(self.node_id, self.ts, Histogram(bins), self.complete).map_err(|e| Error::Schema {
            line,
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Default)]
pub struct ReadReport {
    pub windows: Vec<SensorWindow>,
    /// Rejected lines; always empty in strict mode.
    pub errors: Vec<Error>,
}

/// Parse window records, one per line; blank lines are skipped. Without
/// `strict`, bad lines are collected and the rest still parsed.
pub fn read_windows<R: BufRead>(reader: R, strict: bool) -> Result<ReadReport> {
    let mut report = ReadReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Io {
            path: format!("line {line_no}"),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<WindowRecord>(&line)
            .map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })
            .and_then(|r| r.into_window(line_no));
        match parsed {
            Ok(w) => report.windows.push(w),
            Err(e) if strict => return Err(e),
            Err(e) => report.errors.push(e),
        }
    }
    Ok(report)
}

fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: impl IntoIterator<Item = T>) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: "<output>".into(),
        source: e,
    }
}

pub fn write_windows<W: Write>(w: W, windows: &[SensorWindow]) -> Result<()> {
    write_jsonl(w, windows.iter().map(WindowRecord::from))
}

#[derive(Serialize, Deserialize)]
struct ResultLine {
    #[serde(with = "ts_serde")]
    ts: DateTime<Utc>,
    node_id: String,
    period: crate::detect::PeriodLabel,
    chi2: f64,
    active: u8,
    suppressed_by_rain: bool,
}

/// One JSON line per window: `ts, node_id, period, chi2, active,
/// suppressed_by_rain`.
pub fn write_results<W: Write>(w: W, records: &[ResultRecord]) -> Result<()> {
    write_jsonl(
        w,
        records.iter().map(|r| ResultLine {
            ts: r.ts,
            node_id: r.node_id.clone(),
            period: r.period,
            chi2: r.chi2,
            active: r.active,
            suppressed_by_rain: r.suppressed_by_rain,
        }),
    )
}

pub fn read_results<R: BufRead>(reader: R) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ResultLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ResultRecord {
            ts: r.ts,
            node_id: r.node_id,
            period: r.period,
            chi2: r.chi2,
            active: r.active,
            suppressed_by_rain: r.suppressed_by_rain,
        });
    }
    Ok(out)
}

/// `start,end,nodes`
pub fn write_rain_csv<W: Write>(w: W, rain: &[RainInterval]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["start", "end", "nodes"])?;
    for r in rain {
        csv.write_record([format_ts(r.start), format_ts(r.end), r.supporting_node_count.to_string()])?;
    }
    csv.flush().map_err(io_err)
}

/// `node_id,date,period,theoretical,empirical`
pub fn write_qq_csv<W: Write>(w: W, days: &[NodeDayResult]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["node_id", "date", "period", "theoretical", "empirical"])?;
    for d in days {
        for (period, points) in &d.qq {
            for p in points {
                csv.write_record([
                    d.node_id.clone(),
                    d.date.to_string(),
                    period.to_string(),
                    p.theoretical.to_string(),
                    p.empirical.to_string(),
                ])?;
            }
        }
    }
    csv.flush().map_err(io_err)
}

pub const CONFUSION_HEADER: [&str; 4] = ["variant", "true_detected_pct", "false_positive_pct", "false_negative_pct"];

pub fn write_confusion_csv<W: Write>(w: W, rows: &[(String, Option<ConfusionStats>)]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(CONFUSION_HEADER)?;
    for (tag, stats) in rows {
        let cells = match stats {
            Some(s) => [s.true_detected_pct, s.false_positive_pct, s.false_negative_pct].map(|v| format!("{v:.1}")),
            None => ["NaN".to_string(), "NaN".to_string(), "NaN".to_string()],
        };
        csv.write_record([tag.as_str(), &cells[0], &cells[1], &cells[2]])?;
    }
    csv.flush().map_err(io_err)
}

pub fn ablation_rows(rows: &[AblationRow]) -> Vec<(String, Option<ConfusionStats>)> {
    rows.iter()
        .map(|r| (r.variant.tag().to_string(), r.stats.as_ref().ok().copied()))
        .collect()
}

/// `ts,node_id,label`
pub fn write_truth_csv<W: Write>(w: W, truth: &GroundTruth) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["ts", "node_id", "label"])?;
    for r in &truth.records {
        csv.write_record([format_ts(r.ts), r.node_id.clone(), r.label.to_string()])?;
    }
    csv.flush().map_err(io_err)
}

fn csv_line(e: &csv::Error) -> usize {
    e.position().map(|p| p.line() as usize).unwrap_or(0)
}

pub fn read_truth_csv<R: Read>(r: R) -> Result<GroundTruth> {
    let mut csv = csv::Reader::from_reader(r);
    let mut records = Vec::new();
    for row in csv.records() {
        let row = row.map_err(|e| Error::Parse {
            line: csv_line(&e),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| {
            row.get(i).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing column {}", i + 1),
            })
        };
        let ts = parse_ts(field(0)?).map_err(|message| Error::Parse { line, message })?;
        let label: TruthLabel = field(2)?.parse().map_err(|e: Error| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        records.push(TruthRecord {
            node_id: field(1)?.to_string(),
            ts,
            label,
        });
    }
    Ok(GroundTruth { records })
}

/// Raw readings `ts,node_id,value`, grouped per node in input order.
pub fn read_raw_samples<R: Read>(r: R) -> Result<BTreeMap<String, Vec<IntensitySample>>> {
    let mut csv = csv::Reader::from_reader(r);
    let mut out: BTreeMap<String, Vec<IntensitySample>> = BTreeMap::new();
    for row in csv.records() {
        let row = row.map_err(|e| Error::Parse {
            line: csv_line(&e),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |message: String| Error::Parse { line, message };
        if row.len() != 3 {
            return Err(bad(format!("expected 3 columns, got {}", row.len())));
        }
        let ts = parse_ts(&row[0]).map_err(bad)?;
        let value: i64 = row[2]
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad value '{}': {e}", &row[2])))?;
        let sample = IntensitySample::new(value, ts).map_err(|e| bad(e.to_string()))?;
        out.entry(row[1].trim().to_string()).or_default().push(sample);
    }
    Ok(out)
}

pub fn write_raw_samples<W: Write>(w: W, node_id: &str, samples: &[IntensitySample]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["ts", "node_id", "value"])?;
    for s in samples {
        csv.write_record([format_ts(s.timestamp), node_id.to_string(), s.value.to_string()])?;
    }
    csv.flush().map_err(io_err)
}

/// Side-by-side rain reference: the lowest droplet-sensor reading per node
/// and window next to the estimated rain flag. Lower readings mean wetter.
pub fn write_rain_reference_csv<W: Write>(
    w: W,
    readings: &BTreeMap<String, Vec<IntensitySample>>,
    rain: &[RainInterval],
) -> Result<()> {
    let mut per_window: BTreeMap<(DateTime<Utc>, &str), u16> = BTreeMap::new();
    for (node, samples) in readings {
        for s in samples {
            let slot = crate::histo::align_to_window(s.timestamp);
            let e = per_window.entry((slot, node.as_str())).or_insert(s.value);
            *e = (*e).min(s.value);
        }
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["ts", "node_id", "sensor_min", "estimated_rain"])?;
    for ((ts, node), v) in per_window {
        let wet = rain.iter().any(|r| r.contains(ts));
        csv.write_record([format_ts(ts), node.to_string(), v.to_string(), u8::from(wet).to_string()])?;
    }
    csv.flush().map_err(io_err)
}
