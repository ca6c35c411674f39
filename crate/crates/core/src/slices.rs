//! Per-slice matching with the target projections cached.
//!
//! Solvers evaluate the same target against many iterates, so the sorted
//! target projections are computed once per direction set.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{check_same_shape, dot, project_into, sort_indices, DirectionSet, Support};

pub(crate) fn check_dirs(y: &Support, dirs: &DirectionSet) -> Result<()> {
    if dirs.d() != y.d() {
        return Err(Error::DimensionMismatch {
            expected: y.d(),
            got: dirs.d(),
        });
    }
    Ok(())
}

/// Sorted projections of a fixed target on each axis of a direction set.
#[derive(Debug, Clone)]
pub(crate) struct ProjectedTarget {
    n: usize,
    /// `p x n`, slice `i` holds the ascending projections of the target.
    sorted: Vec<f64>,
}

impl ProjectedTarget {
    pub fn new(z: &Support, dirs: &DirectionSet) -> Result<Self> {
        check_dirs(z, dirs)?;
        let n = z.n();
        let p = dirs.p();
        let mut sorted = Vec::with_capacity(p * n);
        let mut proj = Vec::with_capacity(n);
        let mut idx: Vec<usize> = (0..n).collect();
        for theta in dirs.iter() {
            project_into(z, theta, &mut proj);
            idx.iter_mut().enumerate().for_each(|(k, v)| *v = k);
            sort_indices(&proj, &mut idx);
            sorted.extend(idx.iter().map(|&k| proj[k]));
        }
        Ok(Self { n, sorted })
    }

    #[inline]
    pub fn sorted(&self, i: usize) -> &[f64] {
        &self.sorted[i * self.n..(i + 1) * self.n]
    }
}

/// Reusable buffers for matching one slice of an iterate.
#[derive(Debug, Clone, Default)]
pub(crate) struct SliceScratch {
    pub proj: Vec<f64>,
    pub order: Vec<usize>,
}

impl SliceScratch {
    /// Projects `y` on `theta` and sorts; afterwards `self.order[r]` is the
    /// index of the `r`-th smallest projection. Returns the smallest gap
    /// between consecutive sorted projections.
    pub fn sort_slice(&mut self, y: &Support, theta: &[f64]) -> f64 {
        project_into(y, theta, &mut self.proj);
        self.order.clear();
        self.order.extend(0..y.n());
        sort_indices(&self.proj, &mut self.order);
        self.order
            .windows(2)
            .map(|w| self.proj[w[1]] - self.proj[w[0]])
            .fold(f64::INFINITY, f64::min)
    }

    /// Slice cost against sorted target projections, after [`sort_slice`].
    pub fn cost(&self, target_sorted: &[f64]) -> f64 {
        let sum: f64 = self
            .order
            .iter()
            .zip(target_sorted)
            .map(|(&k, t)| (self.proj[k] - t) * (self.proj[k] - t))
            .sum();
        sum / self.order.len() as f64
    }
}

/// Adds `weight * (2/n) theta theta^T (y_k - z_{m(k)})` to every row of
/// `grad`, using the matching implied by sorted projections. Returns the
/// slice cost.
pub(crate) fn accumulate_slice_gradient(
    y: &Support,
    theta: &[f64],
    target_sorted: &[f64],
    scratch: &mut SliceScratch,
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    scratch.sort_slice(y, theta);
    let n = y.n();
    let d = y.d();
    let scale = weight * 2.0 / n as f64;
    for (r, &k) in scratch.order.iter().enumerate() {
        let residual = scratch.proj[k] - target_sorted[r];
        let row = &mut grad[k * d..(k + 1) * d];
        for (g, t) in row.iter_mut().zip(theta) {
            *g += scale * residual * t;
        }
    }
    scratch.cost(target_sorted)
}

/// Sorted projections of `z` on a single axis, returned as
/// `(sorted values, order)`.
pub(crate) fn sorted_projection(z: &Support, theta: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let proj: Vec<f64> = z.rows().map(|row| dot(row, theta)).collect();
    let mut order: Vec<usize> = (0..z.n()).collect();
    sort_indices(&proj, &mut order);
    (order.iter().map(|&k| proj[k]).collect(), order)
}

pub(crate) fn check_pair(y: &Support, z: &Support, dirs: &DirectionSet) -> Result<()> {
    check_same_shape(y, z)?;
    check_dirs(y, dirs)
}
