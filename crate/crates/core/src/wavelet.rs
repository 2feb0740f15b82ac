//! Unbalanced (non-dyadic) Haar basis over `n` histogram bins.
//!
//! The bins are split recursively into a left part of `ceil(m/2)` and a right
//! part of `floor(m/2)`. Every split contributes one detail vector that is
//! constant and positive on the left part, constant and negative on the right
//! part, and zero elsewhere. Together with the all-ones average vector they
//! form an orthogonal basis in which each vector has squared norm `n`, so
//! `B^T B = n I` and the inverse transform is just `B^T / n`.
//!
//! Detail vectors are ordered by a pre-order walk of the split tree (a split,
//! then everything inside its left part, then its right part). For `n = 5`
//! this is `{1,2,3}|{4,5}`, `{1,2}|{3}`, `{1}|{2}`, `{4}|{5}`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// One interval `T_{i,j}` of the split tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    /// Depth, 0 at the root.
    pub level: usize,
    /// 1-based position among the intervals at this level, left to right.
    pub index: usize,
    /// First member bin (0-based).
    pub start: usize,
    pub len: usize,
}

impl Interval {
    pub fn contains(&self, bin: usize) -> bool {
        (self.start..self.start + self.len).contains(&bin)
    }

    pub fn members(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// A split of a parent interval into its two children.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub parent: Interval,
    pub left: Interval,
    pub right: Interval,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionTree {
    n: usize,
    /// All intervals, level by level, left to right within a level.
    intervals: Vec<Interval>,
    /// Internal nodes in pre-order; one per detail vector.
    splits: Vec<Split>,
}

impl PartitionTree {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn level(&self, level: usize) -> impl Iterator<Item = &Interval> {
        self.intervals.iter().filter(move |t| t.level == level)
    }
}

pub fn build_partition(n: usize) -> Result<PartitionTree> {
    if n == 0 {
        return Err(Error::domain("partition needs at least one bin"));
    }

    fn walk(
        start: usize,
        len: usize,
        level: usize,
        per_level: &mut Vec<usize>,
        intervals: &mut Vec<Interval>,
        splits: &mut Vec<Split>,
    ) -> Interval {
        if per_level.len() <= level {
            per_level.push(0);
        }
        per_level[level] += 1;
        let node = Interval {
            level,
            index: per_level[level],
            start,
            len,
        };
        intervals.push(node);
        if len > 1 {
            let slot = splits.len();
            // placeholder keeps pre-order position while children are built
            splits.push(Split {
                parent: node,
                left: node,
                right: node,
            });
            let left_len = len.div_ceil(2);
            let left = walk(start, left_len, level + 1, per_level, intervals, splits);
            let right = walk(
                start + left_len,
                len - left_len,
                level + 1,
                per_level,
                intervals,
                splits,
            );
            splits[slot] = Split {
                parent: node,
                left,
                right,
            };
        }
        node
    }

    let mut per_level = Vec::new();
    let mut intervals = Vec::with_capacity(2 * n - 1);
    let mut splits = Vec::with_capacity(n - 1);
    walk(0, n, 0, &mut per_level, &mut intervals, &mut splits);
    // Depth-first indices are assigned left to right per level, so a stable
    // sort on level gives the level-by-level listing.
    intervals.sort_by_key(|t| (t.level, t.index));
    Ok(PartitionTree {
        n,
        intervals,
        splits,
    })
}

/// Basis vectors stored as the columns of an `n x n` matrix; column 0 is the
/// average vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    tree: PartitionTree,
    columns: DMatrix<f64>,
}

impl BasisMatrix {
    pub fn new(n: usize) -> Result<Self> {
        Ok(build_basis(&build_partition(n)?))
    }

    pub fn n(&self) -> usize {
        self.tree.n
    }

    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    /// Entry at (bin, basis vector).
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn vector(&self, k: usize) -> DVector<f64> {
        self.columns.column(k).into_owned()
    }

    /// `w = B^{-1} h = B^T h / n`.
    pub fn forward(&self, h: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if h.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: h.len(),
            });
        }
        let scale = 1.0 / n as f64;
        Ok((0..n)
            .map(|k| {
                self.columns
                    .column(k)
                    .iter()
                    .zip(h)
                    .map(|(b, x)| b * x)
                    .sum::<f64>()
                    * scale
            })
            .collect())
    }

    /// `h = B w`.
    pub fn inverse(&self, w: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if w.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: w.len(),
            });
        }
        Ok((0..n)
            .map(|m| {
                self.columns
                    .row(m)
                    .iter()
                    .zip(w)
                    .map(|(b, c)| b * c)
                    .sum()
            })
            .collect())
    }
}

pub fn build_basis(tree: &PartitionTree) -> BasisMatrix {
    let n = tree.n;
    let nf = n as f64;
    let mut columns = DMatrix::zeros(n, n);
    columns.column_mut(0).fill(1.0);
    for (k, split) in tree.splits.iter().enumerate() {
        let na = split.left.len as f64;
        let nb = split.right.len as f64;
        let pos = (nf * nb / (na * (na + nb))).sqrt();
        let neg = -(nf * na / (nb * (na + nb))).sqrt();
        for m in split.left.members() {
            columns[(m, k + 1)] = pos;
        }
        for m in split.right.members() {
            columns[(m, k + 1)] = neg;
        }
    }
    BasisMatrix {
        tree: tree.clone(),
        columns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sizes_by_level(tree: &PartitionTree) -> Vec<Vec<usize>> {
        let depth = tree.intervals().iter().map(|t| t.level).max().unwrap();
        (0..=depth)
            .map(|l| tree.level(l).map(|t| t.len).collect())
            .collect()
    }

    #[test]
    fn five_bin_tree() {
        let tree = build_partition(5).unwrap();
        assert_eq!(sizes_by_level(&tree), vec![vec![5], vec![3, 2], vec![2, 1, 1, 1], vec![1, 1]]);
        let t = |l: usize, j: usize| {
            let iv = tree.level(l).find(|t| t.index == j).unwrap();
            iv.members().collect::<Vec<_>>()
        };
        assert_eq!(t(0, 1), vec![0, 1, 2, 3, 4]);
        assert_eq!(t(1, 1), vec![0, 1, 2]);
        assert_eq!(t(1, 2), vec![3, 4]);
        assert_eq!(t(2, 1), vec![0, 1]);
        assert_eq!(t(2, 2), vec![2]);
        assert_eq!(tree.splits().len(), 4);
    }

    #[test]
    fn single_bin_and_dyadic_trees() {
        let one = build_partition(1).unwrap();
        assert_eq!(one.intervals().len(), 1);
        assert!(one.splits().is_empty());
        let four = build_partition(4).unwrap();
        assert_eq!(sizes_by_level(&four), vec![vec![4], vec![2, 2], vec![1, 1, 1, 1]]);
        assert!(build_partition(0).is_err());
    }

    #[test]
    fn splits_are_contiguous_and_ceil_left() {
        for n in 1..=40 {
            let tree = build_partition(n).unwrap();
            assert_eq!(tree.splits().len(), n - 1);
            for s in tree.splits() {
                assert_eq!(s.left.len, s.parent.len.div_ceil(2));
                assert_eq!(s.left.start, s.parent.start);
                assert_eq!(s.right.start, s.left.start + s.left.len);
                assert_eq!(s.left.len + s.right.len, s.parent.len);
            }
        }
    }

    #[test]
    fn two_bin_basis() {
        let b = BasisMatrix::new(2).unwrap();
        assert_eq!(b.vector(0).as_slice(), &[1.0, 1.0]);
        assert_abs_diff_eq!(b.vector(1).as_slice(), &[1.0, -1.0][..], epsilon = 1e-15);
    }

    #[test]
    fn five_bin_basis_matches_reference_values() {
        #[rustfmt::skip]
        let reference = [
            [1.0,  0.82,  0.91,  1.58,  0.00],
            [1.0,  0.82,  0.91, -1.58,  0.00],
            [1.0,  0.82, -1.82,  0.00,  0.00],
            [1.0, -1.22,  0.00,  0.00,  1.58],
            [1.0, -1.22,  0.00,  0.00, -1.58],
        ];
        let b = BasisMatrix::new(5).unwrap();
        for (m, row) in reference.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                // 1.826 prints as 1.82 in the published matrix (truncated).
                assert!((b.matrix()[(m, k)] - v).abs() <= 0.01, "({m},{k})");
            }
        }
    }

    #[test]
    fn gram_matrix_is_scaled_identity() {
        for n in 1..=64 {
            let b = BasisMatrix::new(n).unwrap();
            let gram = b.matrix().transpose() * b.matrix();
            let expected = DMatrix::<f64>::identity(n, n) * n as f64;
            assert!((gram - expected).abs().max() < 1e-9, "n = {n}");
        }
    }

    #[test]
    fn constant_histogram_has_no_detail() {
        let b = BasisMatrix::new(5).unwrap();
        let w = b.forward(&[7.0; 5]).unwrap();
        assert_abs_diff_eq!(w.as_slice(), &[7.0, 0.0, 0.0, 0.0, 0.0][..], epsilon = 1e-12);
        let h = b.inverse(&[7.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(h.as_slice(), &[7.0; 5][..], epsilon = 1e-12);
    }

    #[test]
    fn example_histogram_against_matrix_product() {
        let b = BasisMatrix::new(5).unwrap();
        let h = [1.0, 3.0, 2.0, 2.0, 2.0];
        let oracle = b.matrix().transpose() * DVector::from_row_slice(&h) / 5.0;
        let w = b.forward(&h).unwrap();
        assert_abs_diff_eq!(w.as_slice(), oracle.as_slice(), epsilon = 1e-12);
        assert_abs_diff_eq!(w[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn corner_histogram_roundtrip() {
        let b = BasisMatrix::new(5).unwrap();
        let h = [3000.0, 0.0, 0.0, 0.0, 0.0];
        let back = b.inverse(&b.forward(&h).unwrap()).unwrap();
        assert_abs_diff_eq!(back.as_slice(), &h[..], epsilon = 1e-9);
    }

    #[test]
    fn shape_errors() {
        let b = BasisMatrix::new(5).unwrap();
        assert!(matches!(b.forward(&[1.0; 4]), Err(Error::Shape { expected: 5, actual: 4 })));
        assert!(b.inverse(&[1.0; 6]).is_err());
    }

    #[test]
    fn perturbing_last_bin_is_local() {
        let b = BasisMatrix::new(5).unwrap();
        let h = [10.0, 20.0, 30.0, 40.0, 50.0];
        let mut g = h;
        g[4] += 13.0;
        let (wh, wg) = (b.forward(&h).unwrap(), b.forward(&g).unwrap());
        let changed: Vec<usize> = (0..5).filter(|&k| (wh[k] - wg[k]).abs() > 1e-12).collect();
        // average, the {1,2,3}|{4,5} split and the {4}|{5} split
        assert_eq!(changed, vec![0, 1, 4]);
    }

    proptest! {
        #[test]
        fn roundtrips_and_energy(n in 1usize..=16, seed in prop::collection::vec(-1e3f64..1e3, 16)) {
            let b = BasisMatrix::new(n).unwrap();
            let h = &seed[..n];
            let w = b.forward(h).unwrap();
            let back = b.inverse(&w).unwrap();
            for (x, y) in h.iter().zip(&back) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let w2 = b.forward(&b.inverse(h).unwrap()).unwrap();
            for (x, y) in h.iter().zip(&w2) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let hh: f64 = h.iter().map(|x| x * x).sum();
            let ww: f64 = w.iter().map(|x| x * x).sum();
            prop_assert!((hh - n as f64 * ww).abs() <= 1e-9 * hh.max(1.0));
        }

        #[test]
        fn detail_vectors_annihilate_constants(n in 2usize..=64) {
            let b = BasisMatrix::new(n).unwrap();
            for k in 1..n {
                prop_assert!(b.vector(k).sum().abs() < 1e-12);
            }
        }
    }
}
