//! Point clouds, projection axes and the one-dimensional Wasserstein cost.
//!
//! A [`Support`] is an `n x d` matrix stored row-major; row `k` is the
//! position of the `k`-th point. Every slice-based quantity in the crate is
//! built from three primitives defined here: projecting a support on a unit
//! axis, sorting the projections, and comparing two sorted sequences.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Row-distinctness tolerance used by [`Support::is_in_u`].
pub const DISTINCT_ROWS_TOL: f64 = 1e-9;

/// Tolerance on `R^T R = I` accepted by [`rotate`].
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// An `n x d` matrix of finite coordinates, one point per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

/// Gradients have the shape of the support they differentiate.
pub type GradientMatrix = Support;

impl Support {
    /// Builds a support from row-major data. Rejects empty shapes and
    /// non-finite entries.
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "support needs n >= 1 and d >= 1, got {n}x{d}"
            )));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(n, d, data)
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        assert!(n > 0 && d > 0, "support needs n >= 1 and d >= 1");
        Self {
            n,
            d,
            data: vec![0.0; n * d],
        }
    }

    /// Crate-internal constructor for data already known to be finite.
    pub(crate) fn from_raw(n: usize, d: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * d);
        Self { n, d, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.d..(k + 1) * self.d]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.d..(k + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable row-major entries; callers keep them finite.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Whether all rows are pairwise distinct, i.e. the support lies in the
    /// open set where the sliced energy is continuously differentiable.
    pub fn is_in_u(&self) -> bool {
        self.is_in_u_with(DISTINCT_ROWS_TOL)
    }

    pub fn is_in_u_with(&self, tol: f64) -> bool {
        for k in 0..self.n {
            for l in (k + 1)..self.n {
                if dist2(self.row(k), self.row(l)) <= tol * tol {
                    return false;
                }
            }
        }
        true
    }

    /// `max_k ||x_k||_2`.
    pub fn norm_inf2(&self) -> f64 {
        self.rows().map(norm2).fold(0.0, f64::max)
    }

    /// `max_k ||x_k - y_k||_2`.
    pub fn dist_inf2(&self, other: &Support) -> Result<f64> {
        check_same_shape(self, other)?;
        Ok(self
            .rows()
            .zip(other.rows())
            .map(|(a, b)| libm::sqrt(dist2(a, b)))
            .fold(0.0, f64::max))
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Row `k` of the result is row `perm[k]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: perm.len(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &k in perm {
            data.extend_from_slice(self.row(k));
        }
        Ok(Self::from_raw(self.n, self.d, data))
    }

    /// `self + scale * other`, entry-wise.
    pub fn axpy(&self, scale: f64, other: &Support) -> Result<Self> {
        check_same_shape(self, other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Support::new(self.n, self.d, data)
    }

    /// `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &Support, t: f64) -> Result<Self> {
        check_same_shape(self, other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        Support::new(self.n, self.d, data)
    }
}

pub(crate) fn check_same_shape(a: &Support, b: &Support) -> Result<()> {
    if a.n != b.n || a.d != b.d {
        return Err(Error::ShapeMismatch {
            left_n: a.n,
            left_d: a.d,
            right_n: b.n,
            right_d: b.d,
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `p` unit axes in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    d: usize,
    axes: Vec<f64>,
    seed: Option<u64>,
}

impl DirectionSet {
    /// Wraps explicit axes. Every row must have unit norm within `1e-12`.
    pub fn from_axes(d: usize, axes: Vec<f64>) -> Result<Self> {
        if d == 0 || axes.is_empty() || !axes.len().is_multiple_of(d) {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} axis coordinates cannot form unit vectors in dimension {d}",
                axes.len()
            )));
        }
        if let Some(index) = axes.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        for (i, axis) in axes.chunks_exact(d).enumerate() {
            let norm = norm2(axis);
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(alloc::format!(
                    "axis {i} has norm {norm}"
                )));
            }
        }
        Ok(Self {
            d,
            axes,
            seed: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut axes = Vec::with_capacity(rows.len() * d);
        for row in rows {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            axes.extend_from_slice(row);
        }
        Self::from_axes(d, axes)
    }

    /// The canonical basis `e_1, ..., e_d`.
    pub fn canonical(d: usize) -> Self {
        let mut axes = vec![0.0; d * d];
        for i in 0..d {
            axes[i * d + i] = 1.0;
        }
        Self {
            d,
            axes,
            seed: None,
        }
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.axes.len() / self.d
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    #[inline]
    pub fn axis(&self, i: usize) -> &[f64] {
        &self.axes[i * self.d..(i + 1) * self.d]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.axes.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.axes
    }
}

/// Draws a uniform unit vector by normalising a standard Gaussian vector.
/// Zero-norm draws are redrawn.
pub fn sample_axis<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        for x in out.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
        let norm = norm2(out);
        if norm > 0.0 && norm.is_finite() {
            for x in out.iter_mut() {
                *x /= norm;
            }
            return;
        }
    }
}

/// `p` i.i.d. uniform axes on the sphere `S^{d-1}`, deterministic in `seed`.
///
/// The stream is prefix-stable: the first `p` axes of `sample_sphere(d, q,
/// seed)` for `q >= p` are exactly `sample_sphere(d, p, seed)`.
pub fn sample_sphere(d: usize, p: usize, seed: u64) -> Result<DirectionSet> {
    if d == 0 || p == 0 {
        return Err(Error::InvalidArgument(alloc::format!(
            "sphere sampling needs d >= 1 and p >= 1, got d={d}, p={p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axes = vec![0.0; p * d];
    for axis in axes.chunks_exact_mut(d) {
        sample_axis(&mut rng, axis);
    }
    Ok(DirectionSet {
        d,
        axes,
        seed: Some(seed),
    })
}

/// Projections `theta^T y_k` of every row of `y`.
pub fn project(y: &Support, theta: &[f64]) -> Result<Vec<f64>> {
    if theta.len() != y.d {
        return Err(Error::DimensionMismatch {
            expected: y.d,
            got: theta.len(),
        });
    }
    let mut out = Vec::with_capacity(y.n);
    project_into(y, theta, &mut out);
    Ok(out)
}

pub(crate) fn project_into(y: &Support, theta: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(y.rows().map(|row| dot(row, theta)));
}

/// A stable ascending order: `order[r]` is the index of the `r`-th smallest
/// value, ties broken by ascending index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SortPermutation {
    order: Vec<usize>,
}

impl SortPermutation {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.order
    }

    /// `rank[k]` is the position of index `k` in the sorted order.
    pub fn ranks(&self) -> Vec<usize> {
        let mut rank = vec![0; self.order.len()];
        for (r, &k) in self.order.iter().enumerate() {
            rank[k] = r;
        }
        rank
    }
}

pub fn sort_permutation(values: &[f64]) -> SortPermutation {
    let mut order: Vec<usize> = (0..values.len()).collect();
    sort_indices(values, &mut order);
    SortPermutation { order }
}

#[inline]
pub(crate) fn sort_indices(values: &[f64], order: &mut [usize]) {
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
}

/// Squared 2-Wasserstein distance between the uniform measures on the
/// entries of `a` and `b`, computed by matching sorted values.
pub fn w2_1d_uniform(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty measures".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    Ok(sorted_cost(&sa, &sb))
}

#[inline]
pub(crate) fn sorted_cost(sa: &[f64], sb: &[f64]) -> f64 {
    let sum: f64 = sa.iter().zip(sb).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / sa.len() as f64
}

/// The slice loss `w_theta(Y)`: squared 1D Wasserstein distance between the
/// projections of `y` and `z` on `theta`.
pub fn w_theta(y: &Support, z: &Support, theta: &[f64]) -> Result<f64> {
    check_same_shape(y, z)?;
    let py = project(y, theta)?;
    let pz = project(z, theta)?;
    w2_1d_uniform(&py, &pz)
}

/// Applies the orthogonal map `r` (a `d x d` row-major matrix) to every row.
pub fn rotate(y: &Support, r: &[f64]) -> Result<Support> {
    let d = y.d;
    if r.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            got: r.len(),
        });
    }
    let mut deviation: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let rtr: f64 = (0..d).map(|k| r[k * d + i] * r[k * d + j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            deviation = deviation.max((rtr - target).abs());
        }
    }
    if !(deviation <= ORTHOGONALITY_TOL) {
        return Err(Error::NotOrthogonal { deviation });
    }
    let mut data = Vec::with_capacity(y.data.len());
    for row in y.rows() {
        for i in 0..d {
            data.push(dot(&r[i * d..(i + 1) * d], row));
        }
    }
    Support::new(y.n, d, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn brute_force_w2(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permutations(&mut perm, 0, &mut |p| {
            let c: f64 = (0..n).map(|k| (a[k] - b[p[k]]).powi(2)).sum();
            best = best.min(c);
        });
        best / n as f64
    }

    fn permutations(perm: &mut [usize], start: usize, f: &mut dyn FnMut(&[usize])) {
        if start == perm.len() {
            f(perm);
            return;
        }
        for i in start..perm.len() {
            perm.swap(start, i);
            permutations(perm, start + 1, f);
            perm.swap(start, i);
        }
    }

    #[test]
    fn sphere_in_one_dimension_is_plus_minus_one() {
        let dirs = sample_sphere(1, 4, 99).unwrap();
        for axis in dirs.iter() {
            assert!(axis[0] == 1.0 || axis[0] == -1.0);
        }
    }

    #[test]
    fn sphere_axes_are_unit() {
        let dirs = sample_sphere(3, 100, 7).unwrap();
        assert_eq!(dirs.p(), 100);
        assert_eq!(dirs.seed(), Some(7));
        for axis in dirs.iter() {
            assert!((norm2(axis) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sphere_covariance_is_isotropic() {
        let p = 100_000;
        let dirs = sample_sphere(2, p, 1).unwrap();
        let mut c = [0.0; 4];
        for t in dirs.iter() {
            c[0] += t[0] * t[0];
            c[1] += t[0] * t[1];
            c[3] += t[1] * t[1];
        }
        let (a, b, d) = (c[0] / p as f64 - 0.5, c[1] / p as f64, c[3] / p as f64 - 0.5);
        // spectral norm of the symmetric 2x2 deviation
        let op = ((a + d) / 2.0).abs() + (((a - d) / 2.0).powi(2) + b * b).sqrt();
        assert!(op < 0.02, "covariance deviation {op}");
    }

    #[test]
    fn sphere_is_reproducible_and_prefix_stable() {
        let a = sample_sphere(4, 50, 3).unwrap();
        let b = sample_sphere(4, 50, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_sphere(4, 80, 3).unwrap();
        assert_eq!(a.as_slice(), &c.as_slice()[..200]);
    }

    #[test]
    fn sphere_rejects_empty_requests() {
        assert!(sample_sphere(0, 3, 1).is_err());
        assert!(sample_sphere(3, 0, 1).is_err());
    }

    #[test]
    fn projection_examples() {
        let y = Support::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(project(&y, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let zero = Support::zeros(3, 2);
        assert_eq!(project(&zero, &[0.6, 0.8]).unwrap(), vec![0.0; 3]);
        let y = Support::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(project(&y, &[0.0, 1.0]).unwrap(), vec![2.0, 4.0]);
        assert!(matches!(
            project(&y, &[1.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sort_permutation_examples() {
        assert_eq!(sort_permutation(&[3.0, 1.0, 2.0]).order(), &[1, 2, 0]);
        assert_eq!(sort_permutation(&[0.0, 0.0]).order(), &[0, 1]);
        assert_eq!(sort_permutation(&[-1.0, 0.5, 2.0]).order(), &[0, 1, 2]);
        assert_eq!(sort_permutation(&[3.0, 1.0, 2.0]).ranks(), vec![2, 0, 1]);
    }

    #[test]
    fn w2_1d_examples() {
        assert_eq!(w2_1d_uniform(&[5.0, -2.0, 0.0], &[5.0, -2.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(w2_1d_uniform(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(brute_force_w2(&[0.0, 2.0], &[1.0, 3.0]), 1.0);
        assert_abs_diff_eq!(w2_1d_uniform(&[0.0, 0.0], &[-1.0, 1.0]).unwrap(), 1.0);
        assert!(w2_1d_uniform(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn w_theta_examples() {
        let y = Support::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let z = Support::from_rows(&[[1.0, 0.0], [3.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(w_theta(&y, &z, &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(w_theta(&y, &y, &[0.6, 0.8]).unwrap(), 0.0);

        let z = Support::from_rows(&[[0.0, -1.0], [0.0, 1.0]]).unwrap();
        for (a, b) in [(0.3, -4.0), (2.0, 2.0), (-1.0, 7.5)] {
            let y = Support::from_rows(&[[a, 0.0], [b, 0.0]]).unwrap();
            assert_abs_diff_eq!(w_theta(&y, &z, &[0.0, 1.0]).unwrap(), 1.0);
        }
        let bad = Support::zeros(3, 2);
        assert!(matches!(
            w_theta(&bad, &z, &[1.0, 0.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn rotate_examples() {
        let y = Support::from_rows(&[[1.0, 0.0], [0.3, -2.0]]).unwrap();
        assert_eq!(rotate(&y, &[1.0, 0.0, 0.0, 1.0]).unwrap(), y);
        let minus = [-1.0, 0.0, 0.0, -1.0];
        assert_eq!(rotate(&rotate(&y, &minus).unwrap(), &minus).unwrap(), y);
        let quarter = [0.0, -1.0, 1.0, 0.0];
        let e1 = Support::from_rows(&[[1.0, 0.0]]).unwrap();
        assert_eq!(rotate(&e1, &quarter).unwrap().row(0), &[0.0, 1.0]);
        assert!(matches!(
            rotate(&y, &[1.0, 1.0, 0.0, 1.0]),
            Err(Error::NotOrthogonal { .. })
        ));
    }

    #[test]
    fn distinct_rows_predicate() {
        let y = Support::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(y.is_in_u());
        let y = Support::from_rows(&[[0.0, 0.0], [1e-12, 0.0]]).unwrap();
        assert!(!y.is_in_u());
    }

    #[test]
    fn support_validation() {
        assert!(Support::new(0, 2, vec![]).is_err());
        assert!(Support::new(1, 2, vec![1.0]).is_err());
        assert!(matches!(
            Support::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(DirectionSet::from_axes(2, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn w2_matches_permutation_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=6 {
            for _ in 0..20 {
                let a: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let b: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let fast = w2_1d_uniform(&a, &b).unwrap();
                assert!((fast - brute_force_w2(&a, &b)).abs() <= 1e-12);
            }
        }
    }
}
