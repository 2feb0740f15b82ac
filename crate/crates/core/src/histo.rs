//! Edge-side compression of raw intensity readings into 5-bin histograms.

use chrono::{DateTime, DurationRound, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const BIN_COUNT: usize = 5;
pub const MAX_INTENSITY: u16 = 1023;
/// 10 Hz for 5 minutes.
pub const SAMPLES_PER_WINDOW: u32 = 3000;
pub const WINDOW_SECONDS: i64 = 300;
pub const WINDOWS_PER_DAY: usize = 288;

/// Inclusive upper edges of bins 1..4; bin 5 is open-ended.
const UPPER_EDGES: [u16; BIN_COUNT - 1] = [6, 10, 20, 50];

pub fn window_duration() -> TimeDelta {
    TimeDelta::seconds(WINDOW_SECONDS)
}

/// One ADC reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntensitySample {
    pub value: u16,
    pub timestamp: DateTime<Utc>,
}

impl IntensitySample {
    pub fn new(value: i64, timestamp: DateTime<Utc>) -> Result<Self> {
        if !(0..=i64::from(MAX_INTENSITY)).contains(&value) {
            return Err(Error::IntensityOutOfRange(value));
        }
        Ok(Self {
            value: value as u16,
            timestamp,
        })
    }
}

/// Counts s_1..s_5 of a sound histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Histogram(pub [u32; BIN_COUNT]);

impl Histogram {
    pub fn bins(&self) -> &[u32; BIN_COUNT] {
        &self.0
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn as_f64(&self) -> [f64; BIN_COUNT] {
        self.0.map(f64::from)
    }

    /// Bin fractions; all zeros for an empty histogram.
    pub fn normalized(&self) -> [f64; BIN_COUNT] {
        let total = f64::from(self.total());
        if total == 0.0 {
            return [0.0; BIN_COUNT];
        }
        self.0.map(|c| f64::from(c) / total)
    }

    fn add(&mut self, value: u16) -> Result<()> {
        let bin = bin_sample(i64::from(value))?;
        self.0[bin - 1] += 1;
        Ok(())
    }
}

/// A node's histogram for one 5-minute, boundary-aligned window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorWindow {
    pub node_id: String,
    pub window_start: DateTime<Utc>,
    pub histogram: Histogram,
    pub complete: bool,
}

impl SensorWindow {
    /// Fails unless `window_start` sits on a 5-minute boundary.
    pub fn new(
        node_id: impl Into<String>,
        window_start: DateTime<Utc>,
        histogram: Histogram,
        complete: bool,
    ) -> Result<Self> {
        if align_to_window(window_start) != window_start {
            return Err(Error::domain(format!(
                "window start {window_start} is not aligned to a 5-minute boundary"
            )));
        }
        Ok(Self {
            node_id: node_id.into(),
            window_start,
            histogram,
            complete,
        })
    }
}

/// Floor a timestamp to its 5-minute window boundary.
pub fn align_to_window(ts: DateTime<Utc>) -> DateTime<Utc> {
    ts.duration_trunc(window_duration())
        .expect("5-minute truncation cannot overflow")
}

/// Map an intensity level to its 1-based bin index.
///
/// Upper edges are inclusive: `0..=6 → 1`, `7..=10 → 2`, `11..=20 → 3`,
/// `21..=50 → 4`, `51.. → 5`.
pub fn bin_sample(value: i64) -> Result<usize> {
    if !(0..=i64::from(MAX_INTENSITY)).contains(&value) {
        return Err(Error::IntensityOutOfRange(value));
    }
    let idx = UPPER_EDGES
        .iter()
        .position(|&edge| value <= i64::from(edge))
        .unwrap_or(BIN_COUNT - 1);
    Ok(idx + 1)
}

/// Histogram of raw intensity values.
pub fn histogram_of_values(values: &[u16]) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut h = Histogram::default();
    for &v in values {
        h.add(v)?;
    }
    Ok(h)
}

pub fn build_histogram(samples: &[IntensitySample]) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut h = Histogram::default();
    for s in samples {
        h.add(s.value)?;
    }
    Ok(h)
}

/// Split a time-ordered sample stream into 5-minute windows.
///
/// Only intervals that contain at least one sample produce a window; a
/// window is complete iff it saw exactly 3000 samples.
pub fn windowize(samples: &[IntensitySample], node_id: &str) -> Result<Vec<SensorWindow>> {
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].timestamp < pair[0].timestamp {
            return Err(Error::Unordered {
                index: i + 1,
                previous: pair[0].timestamp.to_rfc3339(),
                current: pair[1].timestamp.to_rfc3339(),
            });
        }
    }

    let mut out: Vec<SensorWindow> = Vec::new();
    let mut start = 0;
    while start < samples.len() {
        let window_start = align_to_window(samples[start].timestamp);
        let window_end = window_start + window_duration();
        let len = samples[start..]
            .iter()
            .take_while(|s| s.timestamp < window_end)
            .count();
        let chunk = &samples[start..start + len];
        let histogram = build_histogram(chunk)?;
        out.push(SensorWindow {
            node_id: node_id.to_string(),
            window_start,
            complete: histogram.total() == SAMPLES_PER_WINDOW,
            histogram,
        });
        start += len;
    }
    Ok(out)
}

/// Count-weighted mean of representative bin intensities, used to rank
/// clusters by loudness. Bin 5 is open-ended and represented by 100.
pub const BIN_MIDPOINTS: [f64; BIN_COUNT] = [3.0, 8.0, 15.0, 35.0, 100.0];

pub fn intensity_proxy(h: &Histogram) -> f64 {
    let total = f64::from(h.total());
    if total == 0.0 {
        return 0.0;
    }
    h.0.iter()
        .zip(BIN_MIDPOINTS)
        .map(|(&c, mid)| f64::from(c) * mid)
        .sum::<f64>()
        / total
}
