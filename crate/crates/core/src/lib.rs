//! Batch analytics for 5-bin ambient sound histograms.
//!
//! Raw 10 Hz intensity readings are compressed into 5-minute histograms
//! ([`histo`]), moved into an unbalanced Haar coefficient space
//! ([`wavelet`]), decorrelated per node-day ([`pca`]) and grouped by
//! agglomerative clustering ([`hcluster`]). The [`detect`] stage turns the
//! clusters into background periods, scores every window with a chi-square
//! statistic and estimates rain from co-located nodes. [`pipeline`] wires the
//! stages together for whole datasets, [`synth`] produces seeded benchmark
//! data and [`eval`] compares detections against ground truth.

pub mod detect;
pub mod error;
pub mod eval;
pub mod hcluster;
pub mod histo;
pub mod io;
mod linalg;
pub mod par;
pub mod pca;
pub mod pipeline;
pub mod synth;
pub mod wavelet;

pub use error::{Error, Result};
pub use histo::{Histogram, IntensitySample, SensorWindow, BIN_COUNT, SAMPLES_PER_WINDOW};
pub use pipeline::{DetectConfig, Variant};
