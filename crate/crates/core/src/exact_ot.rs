//! Exact discrete optimal transport at reference scale.
//!
//! [`assignment_w2`] computes `W_2^2` between two uniform `n`-point measures
//! with a shortest-augmenting-path assignment solver in `O(n^3)`; it is the
//! error metric of the experiment harness. [`kantorovich_exact`] solves the
//! general-weight transport LP on small instances and always returns a dual
//! certificate.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{check_same_shape, dist2, Support};

/// Tolerance on `sum(w) = 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Largest `n * m` accepted by [`kantorovich_exact`].
pub const KANTOROVICH_SIZE_LIMIT: usize = 400;

/// Mass below which a supply, demand or flow counts as exhausted.
const MASS_EPS: f64 = 1e-15;

/// Minimum improvement for a relaxation; keeps rounding from closing
/// zero-cost residual cycles.
const RELAX_EPS: f64 = 1e-13;

/// `W_2^2` between uniform measures on the rows of `y` and `z`, with the
/// optimal assignment: `perm[k]` is the row of `z` matched to row `k` of `y`.
pub fn assignment_w2(y: &Support, z: &Support) -> Result<(f64, Vec<usize>)> {
    check_same_shape(y, z)?;
    let n = y.n();
    let cost = |k: usize, l: usize| dist2(y.row(k), z.row(l));
    let perm = solve_assignment(n, cost);
    let total: f64 = perm.iter().enumerate().map(|(k, &l)| cost(k, l)).sum();
    Ok((total / n as f64, perm))
}

/// Minimum-cost perfect matching on a dense `n x n` cost, by successive
/// shortest augmenting paths with row/column potentials (Jonker-Volgenant
/// style Hungarian method). Returns `perm[row] = col`.
pub fn solve_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based internally; column 0 is the virtual root of each search.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_slack = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        min_slack.iter_mut().for_each(|s| *s = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let slack = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    perm
}

/// A probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if let Some(i) = w.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidWeights(alloc::format!(
                "entry {i} is negative or non-finite"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidWeights(alloc::format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&x| x > 0.0)
    }
}

/// A dense non-negative `n x m` cost matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 || data.len() != n * m {
            return Err(Error::InvalidArgument(alloc::format!(
                "cost matrix {n} x {m} needs {} entries, got {}",
                n * m,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if data.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidArgument("costs must be non-negative".into()));
        }
        Ok(Self { n, m, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * m);
        for row in rows {
            if row.as_ref().len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.as_ref().len(),
                });
            }
            data.extend_from_slice(row.as_ref());
        }
        Self::new(rows.len(), m, data)
    }

    /// `C_{k,l} = ||y_k - z_l||^2`.
    pub fn squared_euclidean(y: &Support, z: &Support) -> Result<Self> {
        if y.d() != z.d() {
            return Err(Error::DimensionMismatch {
                expected: y.d(),
                got: z.d(),
            });
        }
        let data = y
            .rows()
            .flat_map(|yk| z.rows().map(move |zl| dist2(yk, zl)))
            .collect();
        Self::new(y.n(), z.n(), data)
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Largest absolute entry.
    pub fn norm_max(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &c| a.max(c.abs()))
    }

    pub fn norm_frobenius(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|c| c * c).sum())
    }
}

/// A coupling between two weight vectors, row-major `n x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl TransportPlan {
    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks_exact(self.m).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.m).map(|j| (0..self.n).map(|i| self.get(i, j)).sum()).collect()
    }
}

/// Optimal plan and dual potentials of a transport LP.
#[derive(Debug, Clone, PartialEq)]
pub struct KantorovichSolution {
    /// `<C, pi>`.
    pub cost: f64,
    pub plan: TransportPlan,
    pub dual_f: Vec<f64>,
    pub dual_g: Vec<f64>,
}

impl KantorovichSolution {
    /// `f^T alpha + g^T beta`.
    pub fn dual_value(&self, alpha: &WeightVector, beta: &WeightVector) -> f64 {
        let a: f64 = self.dual_f.iter().zip(alpha.as_slice()).map(|(f, w)| f * w).sum();
        let b: f64 = self.dual_g.iter().zip(beta.as_slice()).map(|(g, w)| g * w).sum();
        a + b
    }

    /// `|primal - dual|`.
    pub fn duality_gap(&self, alpha: &WeightVector, beta: &WeightVector) -> f64 {
        (self.cost - self.dual_value(alpha, beta)).abs()
    }

    /// `max_{i,j} (f_i + g_j - C_ij)^+`.
    pub fn dual_violation(&self, c: &CostMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, f) in self.dual_f.iter().enumerate() {
            for (j, g) in self.dual_g.iter().enumerate() {
                worst = worst.max(f + g - c.get(i, j));
            }
        }
        worst
    }
}

/// Exact optimum of `min <C, pi>` over couplings of `alpha` and `beta`.
///
/// Successive shortest paths on the residual bipartite network: every
/// augmentation exhausts a supply, a demand or a reverse edge, so the number
/// of augmentations is finite; they are capped defensively. Dual potentials
/// are read off as shortest-path distances in the final residual network,
/// which has no negative cycle at optimality.
pub fn kantorovich_exact(alpha: &WeightVector, beta: &WeightVector, c: &CostMatrix) -> Result<KantorovichSolution> {
    let (n, m) = (alpha.len(), beta.len());
    if c.rows() != n || c.cols() != m {
        return Err(Error::ShapeMismatch {
            left_n: n,
            left_d: m,
            right_n: c.rows(),
            right_d: c.cols(),
        });
    }
    if n * m > KANTOROVICH_SIZE_LIMIT {
        return Err(Error::TooLarge {
            size: (n * m) as u128,
            limit: KANTOROVICH_SIZE_LIMIT as u128,
        });
    }
    let mut supply = alpha.as_slice().to_vec();
    let mut demand = beta.as_slice().to_vec();
    let mut flow = vec![0.0; n * m];
    let nodes = n + m;
    let mut dist = vec![0.0; nodes];
    let mut pred = vec![usize::MAX; nodes];
    let max_augmentations = 4 * nodes * nodes + 16;
    let mut augmentations = 0;

    loop {
        if supply.iter().all(|&s| s <= MASS_EPS) || demand.iter().all(|&t| t <= MASS_EPS) {
            break;
        }
        if augmentations == max_augmentations {
            return Err(Error::PivotLimit {
                iterations: augmentations,
            });
        }
        augmentations += 1;

        // Multi-source Bellman-Ford from every supply node with mass left.
        for i in 0..n {
            dist[i] = if supply[i] > MASS_EPS { 0.0 } else { f64::INFINITY };
            pred[i] = usize::MAX;
        }
        for j in 0..m {
            dist[n + j] = f64::INFINITY;
            pred[n + j] = usize::MAX;
        }
        relax_residual(c, &flow, &mut dist, &mut pred, n, m);

        let sink = (0..m)
            .filter(|&j| demand[j] > MASS_EPS && dist[n + j].is_finite())
            .min_by(|&a, &b| dist[n + a].total_cmp(&dist[n + b]))
            .ok_or_else(|| Error::InvalidWeights("unbalanced supplies and demands".into()))?;

        // Trace the path back to its source and find the bottleneck.
        let mut bottleneck = demand[sink];
        let mut node = n + sink;
        let mut hops = 0;
        while pred[node] != usize::MAX {
            hops += 1;
            if hops > nodes {
                // Rounding produced a negative residual cycle.
                return Err(Error::PivotLimit {
                    iterations: augmentations,
                });
            }
            let prev = pred[node];
            if prev >= n {
                // reverse edge: demand node prev -> supply node node
                bottleneck = bottleneck.min(flow[node * m + (prev - n)]);
            }
            node = prev;
        }
        let source = node;
        bottleneck = bottleneck.min(supply[source]);

        let mut node = n + sink;
        while pred[node] != usize::MAX {
            let prev = pred[node];
            if prev < n {
                flow[prev * m + (node - n)] += bottleneck;
            } else {
                let e = node * m + (prev - n);
                flow[e] -= bottleneck;
                if flow[e] <= MASS_EPS {
                    flow[e] = 0.0;
                }
            }
            node = prev;
        }
        supply[source] -= bottleneck;
        demand[sink] -= bottleneck;
        if supply[source] <= MASS_EPS {
            supply[source] = 0.0;
        }
        if demand[sink] <= MASS_EPS {
            demand[sink] = 0.0;
        }
    }

    // Potentials: distances from a virtual root joined to every node at cost 0.
    dist.iter_mut().for_each(|x| *x = 0.0);
    relax_residual(c, &flow, &mut dist, &mut pred, n, m);
    let dual_f: Vec<f64> = dist[..n].iter().map(|&x| -x).collect();
    let dual_g: Vec<f64> = dist[n..].to_vec();

    let cost = flow.iter().zip(c.as_slice()).map(|(f, c)| f * c).sum();
    Ok(KantorovichSolution {
        cost,
        plan: TransportPlan { n, m, data: flow },
        dual_f,
        dual_g,
    })
}

/// Bellman-Ford over the residual network: forward edges `i -> j` at cost
/// `C_ij`, reverse edges `j -> i` at cost `-C_ij` where flow is positive.
fn relax_residual(c: &CostMatrix, flow: &[f64], dist: &mut [f64], pred: &mut [usize], n: usize, m: usize) {
    for _ in 0..n + m {
        let mut changed = false;
        for i in 0..n {
            for j in 0..m {
                let cij = c.get(i, j);
                if dist[i].is_finite() && dist[i] + cij < dist[n + j] - RELAX_EPS {
                    dist[n + j] = dist[i] + cij;
                    pred[n + j] = i;
                    changed = true;
                }
                if flow[i * m + j] > 0.0 && dist[n + j].is_finite() && dist[n + j] - cij < dist[i] - RELAX_EPS {
                    dist[i] = dist[n + j] - cij;
                    pred[i] = n + j;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Both sides of the transport-cost stability inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityGap {
    /// `|W(alpha, beta; C) - W(alpha2, beta2; C2)|`.
    pub lhs: f64,
    /// `||C - C2||_max + ||C||_max (||alpha - alpha2||_1 + ||beta - beta2||_1)`.
    pub rhs_inf: f64,
    /// `||C - C2||_F + ||C||_F (||alpha - alpha2||_2 + ||beta - beta2||_2)`.
    pub rhs_fro: f64,
}

pub fn stability_gap(
    alpha: &WeightVector,
    beta: &WeightVector,
    c: &CostMatrix,
    alpha2: &WeightVector,
    beta2: &WeightVector,
    c2: &CostMatrix,
) -> Result<StabilityGap> {
    if ![alpha, beta, alpha2, beta2].iter().all(|w| w.is_strictly_positive()) {
        return Err(Error::InvalidWeights("stability bound needs strictly positive weights".into()));
    }
    if c.rows() != c2.rows() || c.cols() != c2.cols() {
        return Err(Error::ShapeMismatch {
            left_n: c.rows(),
            left_d: c.cols(),
            right_n: c2.rows(),
            right_d: c2.cols(),
        });
    }
    let w1 = kantorovich_exact(alpha, beta, c)?.cost;
    let w2 = kantorovich_exact(alpha2, beta2, c2)?.cost;

    let diff = |a: &[f64], b: &[f64]| -> (f64, f64) {
        let l1 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
        let l2 = libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
        (l1, l2)
    };
    let (_, c_fro) = diff(c.as_slice(), c2.as_slice());
    let c_max = c
        .as_slice()
        .iter()
        .zip(c2.as_slice())
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let (a1, a2) = diff(alpha.as_slice(), alpha2.as_slice());
    let (b1, b2) = diff(beta.as_slice(), beta2.as_slice());
    Ok(StabilityGap {
        lhs: (w1 - w2).abs(),
        rhs_inf: c_max + c.norm_max() * (a1 + b1),
        rhs_fro: c_fro + c.norm_frobenius() * (a2 + b2),
    })
}
