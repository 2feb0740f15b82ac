//! Per node-day principal component analysis of coefficient vectors.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use crate::linalg::symmetric_eigen;
use crate::{Error, Result};

/// Eigenvalues at or below this are treated as zero when standardizing.
pub const DEGENERATE_EIGENVALUE: f64 = 1e-12;
pub const DEFAULT_MAX_K: usize = 4;

/// Up to 288 feature rows of one node-day, ordered by window slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DayMatrix {
    pub node_id: String,
    pub date: NaiveDate,
    /// Window slot (0..288) of every row.
    pub slots: Vec<usize>,
    /// One row per present window.
    pub rows: DMatrix<f64>,
}

impl DayMatrix {
    pub fn new(
        node_id: impl Into<String>,
        date: NaiveDate,
        slots: Vec<usize>,
        rows: DMatrix<f64>,
    ) -> Result<Self> {
        if slots.len() != rows.nrows() {
            return Err(Error::Shape {
                expected: rows.nrows(),
                actual: slots.len(),
            });
        }
        if rows.nrows() > crate::histo::WINDOWS_PER_DAY {
            return Err(Error::domain(format!("{} rows exceed one day", rows.nrows())));
        }
        Ok(Self {
            node_id: node_id.into(),
            date,
            slots,
            rows,
        })
    }

    /// Presence flag for each of the 288 slots.
    pub fn row_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; crate::histo::WINDOWS_PER_DAY];
        for &s in &self.slots {
            if let Some(m) = mask.get_mut(s) {
                *m = true;
            }
        }
        mask
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors as columns, in eigenvalue order.
    pub eigenvectors: DMatrix<f64>,
    pub k: usize,
    /// Rows used for fitting.
    pub n_rows: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Squared reconstruction error over the fitting rows when keeping `k`
    /// components: `(m - 1) * sum(lambda_{k+1..})`.
    pub fn projection_error(&self, k: usize) -> f64 {
        let tail: f64 = self.eigenvalues[k.min(self.dim())..]
            .iter()
            .map(|l| l.max(0.0))
            .sum();
        tail * (self.n_rows.saturating_sub(1)) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub scores: DMatrix<f64>,
    pub standardized: bool,
}

pub fn fit(day: &DayMatrix) -> Result<PcaModel> {
    fit_rows(&day.rows)
}

/// Fit on raw rows (one observation per row).
pub fn fit_rows(rows: &DMatrix<f64>) -> Result<PcaModel> {
    let (m, d) = rows.shape();
    if m < 2 {
        return Err(Error::InsufficientData { needed: 2, got: m });
    }
    if rows.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mean = DVector::from_fn(d, |j, _| rows.column(j).mean());
    let mut centered = rows.clone();
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let cov = (centered.transpose() * &centered) / (m - 1) as f64;
    let (eigenvalues, eigenvectors) = symmetric_eigen(&cov);
    let mut model = PcaModel {
        mean,
        eigenvalues,
        eigenvectors,
        k: d,
        n_rows: m,
    };
    model.k = select_k(&model, DEFAULT_MAX_K);
    Ok(model)
}

fn check_dim(model: &PcaModel, d: usize) -> Result<()> {
    if d != model.dim() {
        return Err(Error::Shape {
            expected: model.dim(),
            actual: d,
        });
    }
    Ok(())
}

/// `Z = E^T (row - mean)` for every row; all components are kept.
pub fn project(model: &PcaModel, rows: &DMatrix<f64>) -> Result<ScoreMatrix> {
    check_dim(model, rows.ncols())?;
    let mut centered = rows.clone();
    for j in 0..rows.ncols() {
        centered.column_mut(j).add_scalar_mut(-model.mean[j]);
    }
    Ok(ScoreMatrix {
        scores: centered * &model.eigenvectors,
        standardized: false,
    })
}

/// `mean + sum_{i <= k} z_i e_i` for every row.
pub fn reconstruct(model: &PcaModel, scores: &ScoreMatrix, k: usize) -> Result<DMatrix<f64>> {
    let d = model.dim();
    if k == 0 || k > d {
        return Err(Error::domain(format!("k = {k} outside 1..={d}")));
    }
    if scores.standardized {
        return Err(Error::domain("reconstruction needs raw scores"));
    }
    check_dim(model, scores.scores.ncols())?;
    let z = scores.scores.columns(0, k);
    let e = model.eigenvectors.columns(0, k);
    let mut out = z * e.transpose();
    for j in 0..d {
        out.column_mut(j).add_scalar_mut(model.mean[j]);
    }
    Ok(out)
}

/// Smallest `k <= max_k` whose projection error is minimal.
///
/// The error never increases with `k`, so this is `max_k` unless the tail
/// eigenvalues are already zero. `max_k` is clamped to `1..dim`.
pub fn select_k(model: &PcaModel, max_k: usize) -> usize {
    let d = model.dim();
    let max_k = max_k.min(d.saturating_sub(1)).max(1);
    let best = model.projection_error(max_k);
    let total: f64 = model.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let tol = 1e-12 * (total * (model.n_rows.saturating_sub(1)) as f64).max(1.0);
    (1..=max_k)
        .find(|&k| model.projection_error(k) - best <= tol)
        .unwrap_or(max_k)
}

/// Divide the first `k` score columns by `sqrt(lambda_i)`.
pub fn standardize(model: &PcaModel, scores: &ScoreMatrix, k: usize) -> Result<ScoreMatrix> {
    let d = model.dim();
    if k == 0 || k > d {
        return Err(Error::domain(format!("k = {k} outside 1..={d}")));
    }
    if scores.standardized {
        return Err(Error::domain("scores are already standardized"));
    }
    check_dim(model, scores.scores.ncols())?;
    if let Some(i) = (0..k).find(|&i| model.eigenvalues[i] <= DEGENERATE_EIGENVALUE) {
        return Err(Error::DegenerateComponent(i + 1));
    }
    let mut out = scores.scores.columns(0, k).into_owned();
    for i in 0..k {
        out.column_mut(i).scale_mut(1.0 / model.eigenvalues[i].sqrt());
    }
    Ok(ScoreMatrix {
        scores: out,
        standardized: true,
    })
}
