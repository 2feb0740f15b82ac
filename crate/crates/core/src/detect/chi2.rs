use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::pca::ScoreMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityScore {
    pub window_start: DateTime<Utc>,
    pub chi2: f64,
    pub active: bool,
    pub suppressed_by_rain: bool,
}

/// Sum of squared standardized scores over the first `k` components.
pub fn chi_square_scores(std_scores: &ScoreMatrix, k: usize) -> Result<Vec<f64>> {
    if !std_scores.standardized {
        return Err(Error::domain("chi-square scores need standardized PC scores"));
    }
    let cols = std_scores.scores.ncols();
    if k == 0 || k > cols {
        return Err(Error::domain(format!("k = {k} outside 1..={cols}")));
    }
    Ok(std_scores
        .scores
        .row_iter()
        .map(|r| r.iter().take(k).map(|z| z * z).sum())
        .collect())
}

/// `chi2 >= beta` marks a window as active.
pub fn detect_activity(scores: &[f64], beta: f64) -> Vec<bool> {
    scores.iter().map(|&c| c >= beta).collect()
}

pub fn chi_square_cdf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(dof as f64 / 2.0, x / 2.0)
}

fn chi_square_pdf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = dof as f64 / 2.0;
    ((a - 1.0) * x.ln() - x / 2.0 - a * std::f64::consts::LN_2 - statrs::function::gamma::ln_gamma(a)).exp()
}

/// Inverse CDF of the chi-square distribution with `dof` degrees of freedom.
///
/// Safeguarded Newton iteration from a Wilson-Hilferty start; the bracket is
/// kept so that a wild Newton step falls back to bisection.
pub fn chi_square_quantile(p: f64, dof: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    if dof == 0 {
        return Err(Error::domain("chi-square needs at least one degree of freedom"));
    }
    let k = dof as f64;

    let mut lo = 0.0f64;
    let mut hi = k.max(1.0);
    while chi_square_cdf(hi, dof) < p {
        lo = hi;
        hi *= 2.0;
    }

    let z = normal_quantile(p);
    let c = 2.0 / (9.0 * k);
    let mut x = (k * (1.0 - c + z * c.sqrt()).powi(3)).clamp(lo, hi);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }

    for _ in 0..200 {
        let f = chi_square_cdf(x, dof) - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = chi_square_pdf(x, dof);
        let mut next = if dens > 0.0 { x - f / dens } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Acklam-style rational approximation, only used to seed the iteration.
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < 0.02425 {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - 0.02425 {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub theoretical: f64,
    pub empirical: f64,
}

/// Sorted observations against chi-square quantiles at `(i - 0.5) / m`.
pub fn qq_points(values: &[f64], dof: usize) -> Result<Vec<QqPoint>> {
    if values.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: values.len(),
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, empirical)| {
            Ok(QqPoint {
                theoretical: chi_square_quantile((i as f64 + 0.5) / m, dof)?,
                empirical,
            })
        })
        .collect()
}
