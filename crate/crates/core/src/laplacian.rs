//! The Laplacian parameterization `P: R^{p(p-1)/2} -> R^{p x p}` and its adjoint.
//!
//! Edge `k` (1-based) addresses the strictly lower-triangular pair `(i, j)`,
//! `i > j`, enumerated column by column:
//!
//! ```text
//! k = i - j + (j - 1)(2p - j) / 2
//! ```
//!
//! The public index functions use this 1-based convention. Everything else in
//! the crate works with 0-based `k` and the pair list from [`edge_pairs`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of weights parameterizing a `p`-node Laplacian.
pub fn num_edges(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// 1-based edge index of the node pair `(i, j)`, `1 <= j < i <= p`.
pub fn edge_index(i: usize, j: usize, p: usize) -> Result<usize> {
    if !(1 <= j && j < i && i <= p) {
        return Err(Error::InvalidArgument(format!(
            "edge ({i}, {j}) is not a strictly lower pair for p = {p}"
        )));
    }
    Ok(i - j + (j - 1) * (2 * p - j) / 2)
}

/// Inverse of [`edge_index`]: the 1-based pair `(i, j)` with `i > j` for edge `k`.
pub fn edge_pair(k: usize, p: usize) -> Result<(usize, usize)> {
    let m = num_edges(p);
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!(
            "edge index {k} outside 1..={m} for p = {p}"
        )));
    }
    // Column j holds p - j entries; walk columns until k falls inside one.
    let mut start = 0;
    for j in 1..p {
        let len = p - j;
        if k <= start + len {
            return Ok((j + (k - start), j));
        }
        start += len;
    }
    unreachable!("k within range must land in a column")
}

/// 0-based `(i, j)` pairs, `i > j`, in edge-index order.
pub fn edge_pairs(p: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(num_edges(p));
    for j in 0..p {
        for i in (j + 1)..p {
            pairs.push((i, j));
        }
    }
    pairs
}

/// 0-based edge index of a 0-based pair; the order of `a` and `b` is irrelevant.
#[inline]
pub fn edge_index0(a: usize, b: usize, p: usize) -> usize {
    let (i, j) = if a > b { (a, b) } else { (b, a) };
    debug_assert!(i > j && i < p);
    (i - j - 1) + j * (2 * p - j - 1) / 2
}

/// Node count for a weight vector of length `m`, if `m` is triangular.
pub fn nodes_for_len(m: usize) -> Option<usize> {
    let p = ((1.0 + (1.0 + 8.0 * m as f64).sqrt()) / 2.0).round() as usize;
    (num_edges(p) == m && p >= 1).then_some(p)
}

fn check_len(w: &[f64], p: usize) -> Result<()> {
    if w.len() != num_edges(p) {
        return Err(Error::Dimension(format!(
            "weight vector has length {}, expected {} for p = {p}",
            w.len(),
            num_edges(p)
        )));
    }
    Ok(())
}

/// Dense `P(w)`: off-diagonals `-w_k`, diagonal the negated off-diagonal row sum.
pub fn apply_p(w: &[f64], p: usize) -> Result<DMatrix<f64>> {
    check_len(w, p)?;
    let mut out = DMatrix::zeros(p, p);
    let mut k = 0;
    for j in 0..p {
        for i in (j + 1)..p {
            let v = w[k];
            k += 1;
            if v != 0.0 {
                out[(i, j)] = -v;
                out[(j, i)] = -v;
                out[(i, i)] += v;
                out[(j, j)] += v;
            }
        }
    }
    Ok(out)
}

/// `[P*(Y)]_k = Y_ii + Y_jj - Y_ij - Y_ji`.
pub fn apply_p_adjoint(y: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !y.is_square() {
        return Err(Error::Dimension(format!(
            "adjoint needs a square matrix, got {}x{}",
            y.nrows(),
            y.ncols()
        )));
    }
    let p = y.nrows();
    let mut out = Vec::with_capacity(num_edges(p));
    for j in 0..p {
        let yjj = y[(j, j)];
        for i in (j + 1)..p {
            out.push(y[(i, i)] + yjj - y[(i, j)] - y[(j, i)]);
        }
    }
    Ok(out)
}

/// Weights of a Laplacian, `w_k = -L_ij`. Only the strict lower triangle is read.
pub fn weights_of(l: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !l.is_square() {
        return Err(Error::Dimension("Laplacian must be square".into()));
    }
    let p = l.nrows();
    let mut w = Vec::with_capacity(num_edges(p));
    for j in 0..p {
        for i in (j + 1)..p {
            w.push(-l[(i, j)]);
        }
    }
    Ok(w)
}

/// Euclidean projection onto `{x : x >= -w}`, i.e. `max(v, -w)` componentwise.
pub fn project_bound(v: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if v.len() != w.len() {
        return Err(Error::Dimension(format!(
            "projection of length {} onto bound of length {}",
            v.len(),
            w.len()
        )));
    }
    Ok(v.iter().zip(w).map(|(&vk, &wk)| vk.max(-wk)).collect())
}

/// `||P(w)||_F` without forming the matrix.
pub fn laplacian_norm(w: &[f64], p: usize) -> f64 {
    let mut degree = vec![0.0; p];
    let mut off = 0.0;
    let mut k = 0;
    for j in 0..p {
        for i in (j + 1)..p {
            let v = w[k];
            k += 1;
            degree[i] += v;
            degree[j] += v;
            off += v * v;
        }
    }
    (degree.iter().map(|d| d * d).sum::<f64>() + 2.0 * off).sqrt()
}

/// Which gradient test admits a zero weight into the free set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreeSetRule {
    /// `[S - Q]_ij > lambda`
    AsWritten,
    /// `|[S - Q]_ij| > lambda`
    Absolute,
    /// As-written, plus every zero weight whose full gradient
    /// `P*(S - Q)_k` is below `-2 lambda`, so no KKT-violating coordinate
    /// is ever locked.
    #[default]
    Augmented,
}

impl std::str::FromStr for FreeSetRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-written" => Ok(FreeSetRule::AsWritten),
            "absolute" => Ok(FreeSetRule::Absolute),
            "augmented" => Ok(FreeSetRule::Augmented),
            other => Err(Error::InvalidArgument(format!(
                "unknown free-set rule `{other}` (expected as-written, absolute or augmented)"
            ))),
        }
    }
}

/// Edge coordinates the inner solver may move; all others stay at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeSet {
    members: Vec<usize>,
    mask: Vec<bool>,
}

impl FreeSet {
    pub fn from_mask(mask: Vec<bool>) -> Self {
        let members = mask
            .iter()
            .enumerate()
            .filter_map(|(k, &m)| m.then_some(k))
            .collect();
        FreeSet { members, mask }
    }

    /// Every coordinate free.
    pub fn full(m: usize) -> Self {
        FreeSet::from_mask(vec![true; m])
    }

    /// Sorted 0-based members.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn contains(&self, k: usize) -> bool {
        self.mask.get(k).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Length of the underlying coordinate space.
    pub fn dim(&self) -> usize {
        self.mask.len()
    }
}

/// `Free(L) = {k : L_ij != 0 or [S - Q]_ij > lambda}` (or `|.| > lambda` under
/// [`FreeSetRule::Absolute`]); [`FreeSetRule::Augmented`] also admits zero
/// weights violating stationarity.
pub fn compute_free_set(
    l: &DMatrix<f64>,
    s: &DMatrix<f64>,
    q: &DMatrix<f64>,
    lambda: f64,
    rule: FreeSetRule,
) -> Result<FreeSet> {
    let p = l.nrows();
    for (name, m) in [("L", l), ("S", s), ("Q", q)] {
        if m.nrows() != p || m.ncols() != p {
            return Err(Error::Dimension(format!(
                "{name} is {}x{}, expected {p}x{p}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    let mut mask = Vec::with_capacity(num_edges(p));
    for j in 0..p {
        for i in (j + 1)..p {
            let g = s[(i, j)] - q[(i, j)];
            let admitted = match rule {
                FreeSetRule::AsWritten => g > lambda,
                FreeSetRule::Absolute => g.abs() > lambda,
                FreeSetRule::Augmented => {
                    let gw = s[(i, i)] - q[(i, i)] + s[(j, j)] - q[(j, j)] - 2.0 * g;
                    g > lambda || -gw > 2.0 * lambda
                }
            };
            mask.push(l[(i, j)] != 0.0 || admitted);
        }
    }
    Ok(FreeSet::from_mask(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn index_matches_three_node_example() {
        assert_eq!(edge_index(2, 1, 3).unwrap(), 1);
        assert_eq!(edge_index(3, 1, 3).unwrap(), 2);
        assert_eq!(edge_index(3, 2, 3).unwrap(), 3);
    }

    #[test]
    fn index_rejects_bad_pairs() {
        assert!(edge_index(1, 1, 3).is_err());
        assert!(edge_index(1, 2, 3).is_err());
        assert!(edge_index(4, 1, 3).is_err());
        assert!(edge_index(2, 0, 3).is_err());
        assert!(edge_pair(0, 3).is_err());
        assert!(edge_pair(4, 3).is_err());
    }

    #[test]
    fn enumeration_is_bijective_for_p6() {
        // Column-major walk of the strict lower triangle must give 1..=15 in order.
        let p = 6;
        let mut expected = 1;
        for j in 1..=p {
            for i in (j + 1)..=p {
                assert_eq!(edge_index(i, j, p).unwrap(), expected);
                assert_eq!(edge_pair(expected, p).unwrap(), (i, j));
                expected += 1;
            }
        }
        assert_eq!(expected - 1, 15);
    }

    #[test]
    fn zero_based_index_agrees_with_pairs() {
        let p = 9;
        for (k, &(i, j)) in edge_pairs(p).iter().enumerate() {
            assert_eq!(edge_index0(i, j, p), k);
            assert_eq!(edge_index0(j, i, p), k);
            assert_eq!(edge_index(i + 1, j + 1, p).unwrap(), k + 1);
        }
    }

    #[test]
    fn apply_p_three_node() {
        let l = apply_p(&[1.0, 2.0, 3.0], 3).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[3.0, -1.0, -2.0, -1.0, 4.0, -3.0, -2.0, -3.0, 5.0],
        );
        assert_eq!(l, expected);
        assert_eq!(apply_p(&[0.0; 3], 3).unwrap(), DMatrix::zeros(3, 3));
        assert!(apply_p(&[1.0, 2.0], 3).is_err());
        assert_eq!(weights_of(&l).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn adjoint_of_identity_is_two() {
        let a = apply_p_adjoint(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(a, vec![2.0; 3]);
        assert_eq!(apply_p_adjoint(&DMatrix::zeros(4, 4)).unwrap(), vec![0.0; 6]);
        assert!(apply_p_adjoint(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn adjointness_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = rng.random_range(2..=20);
            let w: Vec<f64> = (0..num_edges(p)).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut y = DMatrix::zeros(p, p);
            for i in 0..p {
                for j in 0..=i {
                    let v = rng.random_range(-1.0..1.0);
                    y[(i, j)] = v;
                    y[(j, i)] = v;
                }
            }
            let lhs = apply_p(&w, p).unwrap().dot(&y);
            let rhs: f64 = w
                .iter()
                .zip(apply_p_adjoint(&y).unwrap())
                .map(|(a, b)| a * b)
                .sum();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn projection_examples() {
        let out = project_bound(&[-3.0, 0.2], &[2.0, 1.0]).unwrap();
        assert_eq!(out, vec![-2.0, 0.2]);
        assert_eq!(project_bound(&out, &[2.0, 1.0]).unwrap(), out);
        assert!(project_bound(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn projection_is_nearest_feasible_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = 6;
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let proj = project_bound(&v, &w).unwrap();
            let d0: f64 = v.iter().zip(&proj).map(|(a, b)| (a - b).powi(2)).sum();
            for _ in 0..20 {
                let other: Vec<f64> = proj
                    .iter()
                    .zip(&w)
                    .map(|(&x, &wk)| (x + rng.random_range(-0.5..0.5)).max(-wk))
                    .collect();
                let d1: f64 = v.iter().zip(&other).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d1 >= d0 - 1e-12);
            }
        }
    }

    #[test]
    fn free_set_disjuncts() {
        let lambda = 0.3;
        let p = 3;
        let q = DMatrix::identity(p, p);
        // Nonzero weight is always free.
        let l = apply_p(&[1.0, 0.0, 0.0], p).unwrap();
        let fs = compute_free_set(&l, &q, &q, lambda, FreeSetRule::AsWritten).unwrap();
        assert!(fs.contains(0));
        assert_eq!(fs.len(), 1);

        // Zero weight with a large positive gradient entry.
        let l = DMatrix::zeros(p, p);
        let mut s = q.clone();
        s[(1, 0)] = 2.0 * lambda;
        s[(0, 1)] = 2.0 * lambda;
        let fs = compute_free_set(&l, &s, &q, lambda, FreeSetRule::AsWritten).unwrap();
        assert_eq!(fs.members(), &[0]);

        // S = Q and L = 0: nothing is free.
        let fs = compute_free_set(&l, &q, &q, lambda, FreeSetRule::AsWritten).unwrap();
        assert!(fs.is_empty());
    }

    #[test]
    fn free_set_rules_differ_on_negative_gradient() {
        let p = 2;
        let l = DMatrix::zeros(p, p);
        let q = DMatrix::identity(p, p);
        let mut s = q.clone();
        s[(1, 0)] = -1.0;
        s[(0, 1)] = -1.0;
        let a = compute_free_set(&l, &s, &q, 0.5, FreeSetRule::AsWritten).unwrap();
        let b = compute_free_set(&l, &s, &q, 0.5, FreeSetRule::Absolute).unwrap();
        assert!(a.is_empty());
        assert_eq!(b.members(), &[0]);
    }

    #[test]
    fn augmented_rule_uses_diagonal_terms() {
        // [S - Q]_01 = 0.1 is below lambda, but the diagonal pulls the
        // weight gradient to -0.3 - 0.3 - 0.2 = -0.8 < -2 lambda.
        let l = DMatrix::zeros(2, 2);
        let q = DMatrix::identity(2, 2);
        let s = DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.1, 0.7]);
        let a = compute_free_set(&l, &s, &q, 0.3, FreeSetRule::AsWritten).unwrap();
        let g = compute_free_set(&l, &s, &q, 0.3, FreeSetRule::Augmented).unwrap();
        assert!(a.is_empty());
        assert_eq!(g.members(), &[0]);
        assert_eq!("augmented".parse::<FreeSetRule>().unwrap(), FreeSetRule::Augmented);
        assert_eq!(FreeSetRule::default(), FreeSetRule::Augmented);
    }

    #[test]
    fn norm_matches_dense() {
        let w = [0.5, 0.0, 2.0, 1.0, 0.25, 3.0];
        let dense = apply_p(&w, 4).unwrap().norm();
        assert!((laplacian_norm(&w, 4) - dense).abs() < 1e-14);
    }

    #[test]
    fn triangular_lengths() {
        assert_eq!(nodes_for_len(1), Some(2));
        assert_eq!(nodes_for_len(4950), Some(100));
        assert_eq!(nodes_for_len(5), None);
    }
}
