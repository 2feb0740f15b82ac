//! Seeded synthetic deployment: co-located nodes sampling ambient intensity
//! at 10 Hz, with a daily background profile, single-node activity bursts
//! and multi-node rain.
//!
//! Randomness comes from ChaCha8 streams addressed by `(seed, stream id)`:
//! one stream schedules events, and every node-day draws its samples from
//! its own stream. The output therefore depends only on the config, never on
//! how node-days are spread across threads.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, TimeDelta, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detect::PeriodLabel;
use crate::histo::{
    histogram_of_values, IntensitySample, SensorWindow, MAX_INTENSITY, SAMPLES_PER_WINDOW,
    WINDOWS_PER_DAY,
};
use crate::par::{self, Exec};
use crate::{Error, Result};

const SLOTS_PER_HOUR: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourProfile {
    /// Mean window intensity level.
    pub mean: f64,
    /// Window-to-window standard deviation of the level.
    pub std: f64,
    /// Background class this hour belongs to.
    pub period: PeriodLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstConfig {
    pub per_node_per_day: usize,
    /// Duration range in 5-minute windows, inclusive.
    pub min_windows: usize,
    pub max_windows: usize,
    /// Level increase in units of the hour's `std`.
    pub amplitude_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RainConfig {
    /// Segments over the whole run.
    pub count: usize,
    pub min_windows: usize,
    pub max_windows: usize,
    /// Absolute level increase.
    pub amplitude: f64,
    /// Share of nodes that hear a segment; rounded up to whole nodes.
    pub affected_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub node_count: usize,
    pub days: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
    /// 24 entries, one per UTC hour.
    pub profile: Vec<HourProfile>,
    /// Per-sample noise around the window level: a floor plus a share of
    /// the level, so louder windows are also more varied.
    pub sample_spread: f64,
    pub sample_spread_ratio: f64,
    /// Per-sample probability of a short loud transient (a door, a bird).
    pub transient_rate: f64,
    /// Mean extra level of a transient, exponentially distributed.
    pub transient_scale: f64,
    /// Share of the window-level variance common to all nodes of the
    /// deployment, in [0, 1]. Co-located nodes hear the same ambient.
    pub ambient_correlation: f64,
    pub bursts: BurstConfig,
    pub rain: RainConfig,
}

/// Seed of the shipped benchmark.
pub const BENCHMARK_SEED: u64 = 20160716;

/// Quiet until 06:00, active through the day with an evening rush from
/// 17:00 to 21:00, quiet again from 23:00. Hours of one period share a level.
pub fn default_profile() -> Vec<HourProfile> {
    use PeriodLabel::*;
    (0..24)
        .map(|h| match h {
            0..=5 | 23 => HourProfile { mean: 4.0, std: 0.6, period: Np },
            17..=20 => HourProfile { mean: 30.0, std: 3.0, period: Rp },
            _ => HourProfile { mean: 13.0, std: 1.5, period: Ap },
        })
        .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            node_count: 7,
            days: 14,
            seed: BENCHMARK_SEED,
            start_date: NaiveDate::from_ymd_opt(2016, 7, 1).expect("valid date"),
            profile: default_profile(),
            sample_spread: 2.0,
            sample_spread_ratio: 0.3,
            transient_rate: 0.003,
            transient_scale: 40.0,
            ambient_correlation: 0.9,
            bursts: BurstConfig {
                per_node_per_day: 2,
                min_windows: 3,
                max_windows: 9,
                amplitude_sigma: 3.0,
            },
            rain: RainConfig {
                count: 4,
                min_windows: 6,
                max_windows: 12,
                amplitude: 80.0,
                affected_fraction: 0.8,
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(msg.to_string()));
        if self.node_count == 0 || self.days == 0 {
            return bad("node_count and days must be positive");
        }
        if self.profile.len() != 24 {
            return bad("profile needs 24 hourly entries");
        }
        if self
            .profile
            .iter()
            .any(|h| !h.mean.is_finite() || !(h.std >= 0.0) || h.mean < 0.0)
        {
            return bad("profile means must be finite and non-negative, stds non-negative");
        }
        if !(self.sample_spread >= 0.0) || !(self.sample_spread_ratio >= 0.0) {
            return bad("sample_spread and sample_spread_ratio must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.transient_rate) || !(self.transient_scale >= 0.0) {
            return bad("transient_rate must lie in [0, 1] and transient_scale be non-negative");
        }
        if !(0.0..=1.0).contains(&self.ambient_correlation) {
            return bad("ambient_correlation must lie in [0, 1]");
        }
        let b = &self.bursts;
        if b.per_node_per_day > 0 && (b.min_windows == 0 || b.min_windows > b.max_windows || b.max_windows > WINDOWS_PER_DAY) {
            return bad("burst duration range must satisfy 1 <= min <= max <= 288");
        }
        if !b.amplitude_sigma.is_finite() {
            return bad("burst amplitude must be finite");
        }
        let r = &self.rain;
        if r.count > 0 && (r.min_windows == 0 || r.min_windows > r.max_windows || r.max_windows > WINDOWS_PER_DAY) {
            return bad("rain duration range must satisfy 1 <= min <= max <= 288");
        }
        if !(r.affected_fraction > 0.0 && r.affected_fraction <= 1.0) || !r.amplitude.is_finite() {
            return bad("rain affected_fraction must be in (0, 1] and amplitude finite");
        }
        Ok(())
    }

    pub fn node_id(&self, node: usize) -> String {
        (node + 1).to_string()
    }

    pub fn day_start(&self, day: usize) -> DateTime<Utc> {
        (self.start_date + TimeDelta::days(day as i64))
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
            .and_utc()
    }

    fn affected_nodes(&self) -> usize {
        ((self.rain.affected_fraction * self.node_count as f64).ceil() as usize).clamp(1, self.node_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthLabel {
    Background,
    Activity,
    Rain,
}

impl TruthLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TruthLabel::Background => "background",
            TruthLabel::Activity => "activity",
            TruthLabel::Rain => "rain",
        }
    }
}

impl fmt::Display for TruthLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TruthLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "background" => Ok(TruthLabel::Background),
            "activity" => Ok(TruthLabel::Activity),
            "rain" => Ok(TruthLabel::Rain),
            other => Err(Error::domain(format!("unknown truth label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub node_id: String,
    pub ts: DateTime<Utc>,
    pub label: TruthLabel,
}

/// Per-window labels, aligned 1:1 with the generated windows.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub records: Vec<TruthRecord>,
}

/// An injected event on a set of nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub day: usize,
    pub start_slot: usize,
    pub windows: usize,
    pub nodes: Vec<usize>,
}

impl Event {
    fn covers(&self, node: usize, day: usize, slot: usize) -> bool {
        self.day == day && (self.start_slot..self.start_slot + self.windows).contains(&slot) && self.nodes.contains(&node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule {
    pub bursts: Vec<Event>,
    pub rain: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub schedule: Schedule,
    /// Ordered by node, then time.
    pub windows: Vec<SensorWindow>,
    pub truth: GroundTruth,
}

impl SynthDataset {
    /// Ground-truth rain intervals (union over nodes), per segment.
    pub fn rain_truth(&self) -> Vec<(DateTime<Utc>, DateTime<Utc>)> {
        self.schedule
            .rain
            .iter()
            .map(|e| {
                let start = self.config.day_start(e.day) + TimeDelta::minutes(5 * e.start_slot as i64);
                (start, start + TimeDelta::minutes(5 * e.windows as i64))
            })
            .collect()
    }
}

const SCHEDULE_STREAM: u64 = u64::MAX;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn node_day_stream(seed: u64, node: usize, day: usize) -> ChaCha8Rng {
    stream(seed, ((node as u64) << 32) | day as u64)
}

/// Ambient stream shared by every node for one window: a level draw
/// followed by one draw per sample.
fn ambient_stream(seed: u64, day: usize, slot: usize) -> ChaCha8Rng {
    stream(seed, (u64::from(u32::MAX) << 32) | (day * WINDOWS_PER_DAY + slot) as u64)
}

/// Place rain segments first, then bursts. Rain segments on the same day keep
/// at least an hour apart; bursts on a node never overlap each other or rain
/// on that node.
pub fn schedule(config: &SynthConfig) -> Result<Schedule> {
    config.validate()?;
    let mut rng = stream(config.seed, SCHEDULE_STREAM);
    let mut out = Schedule::default();

    let affected = config.affected_nodes();
    let r = &config.rain;
    for _ in 0..r.count {
        let mut placed = false;
        for _attempt in 0..1000 {
            let windows = rng.random_range(r.min_windows..=r.max_windows);
            let day = rng.random_range(0..config.days);
            let start_slot = rng.random_range(0..=WINDOWS_PER_DAY - windows);
            let clash = out.rain.iter().any(|e| {
                e.day == day
                    && start_slot < e.start_slot + e.windows + SLOTS_PER_HOUR
                    && e.start_slot < start_slot + windows + SLOTS_PER_HOUR
            });
            if clash {
                continue;
            }
            let mut nodes: Vec<usize> = (0..config.node_count).collect();
            for i in (1..nodes.len()).rev() {
                nodes.swap(i, rng.random_range(0..=i));
            }
            nodes.truncate(affected);
            nodes.sort_unstable();
            out.rain.push(Event {
                day,
                start_slot,
                windows,
                nodes,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::config("could not place rain segments without overlap"));
        }
    }

    let b = &config.bursts;
    for day in 0..config.days {
        for node in 0..config.node_count {
            let mut placed = 0;
            let mut attempts = 0;
            while placed < b.per_node_per_day {
                attempts += 1;
                if attempts > 10_000 {
                    return Err(Error::config("could not place bursts without overlap"));
                }
                let windows = rng.random_range(b.min_windows..=b.max_windows);
                let start_slot = rng.random_range(0..=WINDOWS_PER_DAY - windows);
                let busy = |e: &Event| {
                    e.day == day
                        && e.nodes.contains(&node)
                        && start_slot < e.start_slot + e.windows + 1
                        && e.start_slot < start_slot + windows + 1
                };
                if out.bursts.iter().any(busy) || out.rain.iter().any(busy) {
                    continue;
                }
                out.bursts.push(Event {
                    day,
                    start_slot,
                    windows,
                    nodes: vec![node],
                });
                placed += 1;
            }
        }
    }
    Ok(out)
}

/// Raw 10 Hz readings for one node-day, 864 000 values from midnight.
pub fn node_day_samples(config: &SynthConfig, schedule: &Schedule, node: usize, day: usize) -> Vec<u16> {
    let mut rng = node_day_stream(config.seed, node, day);
    let per_window = SAMPLES_PER_WINDOW as usize;
    let mut out = Vec::with_capacity(WINDOWS_PER_DAY * per_window);
    let (shared, local) = (config.ambient_correlation.sqrt(), (1.0 - config.ambient_correlation).sqrt());
    for slot in 0..WINDOWS_PER_DAY {
        let hour = &config.profile[slot / SLOTS_PER_HOUR];
        let mut ambient = ambient_stream(config.seed, day, slot);
        let mix = |ambient: &mut ChaCha8Rng, own: &mut ChaCha8Rng| {
            let a: f64 = StandardNormal.sample(ambient);
            let o: f64 = StandardNormal.sample(own);
            shared * a + local * o
        };
        let z = mix(&mut ambient, &mut rng);
        let mut level = hour.mean + hour.std * z;
        if schedule.rain.iter().any(|e| e.covers(node, day, slot)) {
            level += config.rain.amplitude;
        }
        if schedule.bursts.iter().any(|e| e.covers(node, day, slot)) {
            level += config.bursts.amplitude_sigma * hour.std;
        }
        let spread = config.sample_spread + config.sample_spread_ratio * level.max(0.0);
        for _ in 0..per_window {
            let mut v = level + spread * mix(&mut ambient, &mut rng);
            if config.transient_rate > 0.0 && ambient.random::<f64>() < config.transient_rate {
                let e: f64 = Exp1.sample(&mut ambient);
                v += config.transient_scale * e;
            }
            let v = v.round();
            out.push(v.clamp(0.0, f64::from(MAX_INTENSITY)) as u16);
        }
    }
    out
}

/// Timestamped view of [`node_day_samples`].
pub fn node_day_stream_samples(
    config: &SynthConfig,
    schedule: &Schedule,
    node: usize,
    day: usize,
) -> Vec<IntensitySample> {
    let start = config.day_start(day);
    node_day_samples(config, schedule, node, day)
        .into_iter()
        .enumerate()
        .map(|(i, value)| IntensitySample {
            value,
            timestamp: start + TimeDelta::milliseconds(100 * i as i64),
        })
        .collect()
}

fn truth_label(schedule: &Schedule, node: usize, day: usize, slot: usize) -> TruthLabel {
    if schedule.rain.iter().any(|e| e.covers(node, day, slot)) {
        TruthLabel::Rain
    } else if schedule.bursts.iter().any(|e| e.covers(node, day, slot)) {
        TruthLabel::Activity
    } else {
        TruthLabel::Background
    }
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SynthDataset> {
    generate_synthetic_with(config, Exec::default())
}

pub fn generate_synthetic_with(config: &SynthConfig, exec: Exec) -> Result<SynthDataset> {
    let schedule = schedule(config)?;
    let per_window = SAMPLES_PER_WINDOW as usize;
    let tasks = config.node_count * config.days;
    let chunks: Vec<Result<(Vec<SensorWindow>, Vec<TruthRecord>)>> = par::map_range(exec, tasks, |t| {
        let (node, day) = (t / config.days, t % config.days);
        let node_id = config.node_id(node);
        let samples = node_day_samples(config, &schedule, node, day);
        let mut windows = Vec::with_capacity(WINDOWS_PER_DAY);
        let mut truth = Vec::with_capacity(WINDOWS_PER_DAY);
        for (slot, chunk) in samples.chunks(per_window).enumerate() {
            let window_start = config.day_start(day) + TimeDelta::minutes(5 * slot as i64);
            windows.push(SensorWindow {
                node_id: node_id.clone(),
                window_start,
                histogram: histogram_of_values(chunk)?,
                complete: true,
            });
            truth.push(TruthRecord {
                node_id: node_id.clone(),
                ts: window_start,
                label: truth_label(&schedule, node, day, slot),
            });
        }
        Ok((windows, truth))
    });
    let mut windows = Vec::with_capacity(tasks * WINDOWS_PER_DAY);
    let mut records = Vec::with_capacity(tasks * WINDOWS_PER_DAY);
    for chunk in chunks {
        let (w, t) = chunk?;
        windows.extend(w);
        records.extend(t);
    }
    Ok(SynthDataset {
        config: config.clone(),
        schedule,
        windows,
        truth: GroundTruth { records },
    })
}
