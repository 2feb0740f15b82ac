//! Agglomerative hierarchical clustering with cophenetic-correlation based
//! linkage selection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pairwise distances stored as the condensed upper triangle, row-major:
/// `(0,1), (0,2), .., (0,m-1), (1,2), ..`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    m: usize,
    condensed: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_condensed(m: usize, condensed: Vec<f64>) -> Result<Self> {
        let expected = m * m.saturating_sub(1) / 2;
        if condensed.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: condensed.len(),
            });
        }
        if condensed.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::domain("distances must be finite and non-negative"));
        }
        Ok(Self { m, condensed })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn condensed(&self) -> &[f64] {
        &self.condensed
    }

    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.m);
        i * (2 * self.m - i - 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.condensed[self.index(i, j)],
            std::cmp::Ordering::Greater => self.condensed[self.index(j, i)],
        }
    }
}

pub fn euclidean_distances<R: AsRef<[f64]>>(rows: &[R]) -> Result<DistanceMatrix> {
    let m = rows.len();
    if let Some(first) = rows.first() {
        let d = first.as_ref().len();
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::Shape {
                    expected: d,
                    actual: r.len(),
                });
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
    }
    let mut condensed = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        let a = rows[i].as_ref();
        for b in &rows[i + 1..] {
            let sq: f64 = a.iter().zip(b.as_ref()).map(|(x, y)| (x - y) * (x - y)).sum();
            condensed.push(sq.sqrt());
        }
    }
    Ok(DistanceMatrix { m, condensed })
}

/// Lance-Williams linkage rules. The declaration order is also the
/// tie-break order for [`select_linkage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    Average,
    Ward,
}

impl Linkage {
    pub const ALL: [Linkage; 4] = [Linkage::Single, Linkage::Complete, Linkage::Average, Linkage::Ward];

    pub fn as_str(self) -> &'static str {
        match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
            Linkage::Ward => "ward",
        }
    }

    /// Distance from cluster `x` to the union of `a` and `b`.
    fn update(self, d_ax: f64, d_bx: f64, d_ab: f64, n_a: f64, n_b: f64, n_x: f64) -> f64 {
        match self {
            Linkage::Single => d_ax.min(d_bx),
            Linkage::Complete => d_ax.max(d_bx),
            Linkage::Average => (n_a * d_ax + n_b * d_bx) / (n_a + n_b),
            Linkage::Ward => {
                let sq = ((n_a + n_x) * d_ax * d_ax + (n_b + n_x) * d_bx * d_bx - n_x * d_ab * d_ab)
                    / (n_a + n_b + n_x);
                sq.max(0.0).sqrt()
            }
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Linkage::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::domain(format!("unknown linkage '{s}'")))
    }
}

/// One agglomeration step. Ids below `m` are points; the cluster created by
/// step `s` gets id `m + s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub m: usize,
    pub method: Linkage,
    pub merges: Vec<Merge>,
}

/// Greedy agglomeration: each step merges the closest pair of clusters.
///
/// Active clusters are addressed by their smallest member index, and among
/// equally distant pairs the lexicographically smallest `(i, j)` is merged.
/// A per-row nearest-neighbour cache keeps the common case near `O(m^2)`.
pub fn linkage(dist: &DistanceMatrix, method: Linkage) -> Result<Dendrogram> {
    let m = dist.len();
    if m < 2 {
        return Err(Error::InsufficientData { needed: 2, got: m });
    }
    let mut d = vec![0.0f64; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let v = dist.get(i, j);
            d[i * m + j] = v;
            d[j * m + i] = v;
        }
    }
    let mut active = vec![true; m];
    let mut size = vec![1usize; m];
    let mut id: Vec<usize> = (0..m).collect();
    // nearest active neighbour j > i for every row
    let mut nn: Vec<Option<(f64, usize)>> = vec![None; m];

    let scan = |row: usize, d: &[f64], active: &[bool]| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in row + 1..m {
            if active[j] {
                let v = d[row * m + j];
                if best.is_none_or(|(b, _)| v < b) {
                    best = Some((v, j));
                }
            }
        }
        best
    };
    for i in 0..m {
        nn[i] = scan(i, &d, &active);
    }

    let mut merges = Vec::with_capacity(m - 1);
    for step in 0..m - 1 {
        let (a, (height, b)) = nn
            .iter()
            .enumerate()
            .filter(|(i, _)| active[*i])
            .filter_map(|(i, c)| c.map(|c| (i, c)))
            .fold(None::<(usize, (f64, usize))>, |best, cand| match best {
                Some((_, (bd, _))) if cand.1 .0 >= bd => best,
                _ => Some(cand),
            })
            .expect("at least two active clusters remain");

        let (na, nb) = (size[a] as f64, size[b] as f64);
        let (left, right) = (id[a].min(id[b]), id[a].max(id[b]));
        merges.push(Merge {
            left,
            right,
            height,
            size: size[a] + size[b],
        });

        active[b] = false;
        nn[b] = None;
        for x in 0..m {
            if !active[x] || x == a {
                continue;
            }
            let v = method.update(d[a * m + x], d[b * m + x], height, na, nb, size[x] as f64);
            d[a * m + x] = v;
            d[x * m + a] = v;
        }
        size[a] += size[b];
        id[a] = m + step;

        nn[a] = scan(a, &d, &active);
        for x in 0..m {
            if !active[x] || x == a {
                continue;
            }
            match nn[x] {
                Some((_, j)) if j == a || j == b => nn[x] = scan(x, &d, &active),
                Some((cur, j)) if x < a => {
                    let v = d[x * m + a];
                    if v < cur || (v == cur && a < j) {
                        nn[x] = Some((v, a));
                    }
                }
                _ => {}
            }
        }
    }
    Ok(Dendrogram { m, method, merges })
}

impl Dendrogram {
    /// Cophenetic distances in the same condensed layout as the input.
    pub fn cophenetic(&self) -> DistanceMatrix {
        let m = self.m;
        let mut members: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
        members.reserve(m.saturating_sub(1));
        let mut out = DistanceMatrix {
            m,
            condensed: vec![0.0; m * m.saturating_sub(1) / 2],
        };
        for merge in &self.merges {
            let left = std::mem::take(&mut members[merge.left]);
            let right = std::mem::take(&mut members[merge.right]);
            for &p in &left {
                for &q in &right {
                    let idx = out.index(p.min(q), p.max(q));
                    out.condensed[idx] = merge.height;
                }
            }
            let mut joined = left;
            joined.extend(right);
            members.push(joined);
        }
        out
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if !(sxx > 0.0) {
        return Err(Error::UndefinedCcc("original"));
    }
    if !(syy > 0.0) {
        return Err(Error::UndefinedCcc("cophenetic"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation between the input distances and the dendrogram's
/// cophenetic distances.
pub fn cophenetic_ccc(dendro: &Dendrogram, dist: &DistanceMatrix) -> Result<f64> {
    if dendro.m != dist.len() {
        return Err(Error::Shape {
            expected: dendro.m,
            actual: dist.len(),
        });
    }
    if dendro.m < 3 {
        // a single pair has no variance
        return Err(Error::UndefinedCcc("original"));
    }
    pearson(dist.condensed(), dendro.cophenetic().condensed())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkageChoice {
    pub method: Linkage,
    pub dendrogram: Dendrogram,
    pub ccc: f64,
}

/// Build every candidate and keep the one with the highest CCC. Equal CCCs
/// resolve to the earlier method in [`Linkage::ALL`] order.
pub fn select_linkage(dist: &DistanceMatrix, methods: &[Linkage]) -> Result<LinkageChoice> {
    if methods.is_empty() {
        return Err(Error::config("no linkage candidates"));
    }
    let mut ordered = methods.to_vec();
    ordered.sort();
    ordered.dedup();
    let mut best: Option<LinkageChoice> = None;
    let mut last_err = None;
    for method in ordered {
        let dendrogram = linkage(dist, method)?;
        match cophenetic_ccc(&dendrogram, dist) {
            Ok(ccc) => {
                if best.as_ref().is_none_or(|b| ccc > b.ccc + 1e-12) {
                    best = Some(LinkageChoice {
                        method,
                        dendrogram,
                        ccc,
                    });
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one candidate was tried"))
}

/// Per-point cluster labels in `1..=k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
}

impl ClusterAssignment {
    pub fn members(&self, label: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == label)
            .map(|(i, _)| i)
    }
}

/// Undo the last `k - 1` merges. Clusters are numbered by the order in which
/// their first member appears.
pub fn cut(dendro: &Dendrogram, k: usize) -> Result<ClusterAssignment> {
    let m = dendro.m;
    if k == 0 || k > m {
        return Err(Error::domain(format!("k = {k} outside 1..={m}")));
    }
    let mut parent: Vec<usize> = (0..2 * m).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (s, merge) in dendro.merges.iter().take(m - k).enumerate() {
        parent[merge.left] = m + s;
        parent[merge.right] = m + s;
    }
    let mut label_of_root = std::collections::HashMap::new();
    let labels = (0..m)
        .map(|p| {
            let root = find(&mut parent, p);
            let next = label_of_root.len() + 1;
            *label_of_root.entry(root).or_insert(next)
        })
        .collect();
    Ok(ClusterAssignment { k, labels })
}
