//! Cell structure of `E_p`.
//!
//! For fixed axes `theta_1..theta_p`, a support `Y` determines one optimal
//! matching per slice; the tuple of matchings is its [`Configuration`]. On the
//! open cell of supports sharing a configuration `m`, `E_p` coincides with
//! the quadratic
//!
//! ```text
//! q_m(Y) = (1/n) sum_k y_k^T A y_k - sum_k a_k^T y_k + b,
//! A   = (1/p) sum_i theta_i theta_i^T,
//! a_k = (2/(pn)) sum_i theta_i theta_i^T z_{m_i(k)},
//! b   = (1/n) sum_k z_k^T A z_k,
//! ```
//!
//! and everywhere `E_p = min_m q_m`. A cell is stable when the minimiser of
//! its own quadratic lies inside it; stable cell minimisers are exactly the
//! critical points (and local optima) of `E_p`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::energy::energy_p;
use crate::error::{Error, Result};
use crate::geometry::{check_same_shape, dot, DirectionSet, Support};
use crate::linalg::{gram, min_eigenvalue, symmetric_eigenvalues, GramSolver};
use crate::slices::{check_dirs, check_pair, sorted_projection, SliceScratch};

/// Projected gap below which a slice is treated as tied (cell boundary).
pub const BOUNDARY_GAP: f64 = 1e-9;

/// Eigenvalue floor for inverting the direction Gram matrix `A`.
pub const GRAM_EIGEN_FLOOR: f64 = 1e-10;

/// Largest number of configurations `(n!)^p` the enumeration oracle visits.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// One matching per slice: `perm(i)[k]` is the target index matched to
/// source point `k` on axis `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    n: usize,
    perms: Vec<usize>,
    boundary: bool,
}

impl Configuration {
    pub fn from_perms<P: AsRef<[usize]>>(perms: &[P]) -> Result<Self> {
        let n = perms.first().map_or(0, |p| p.as_ref().len());
        if n == 0 {
            return Err(Error::InvalidArgument("configuration needs p >= 1 and n >= 1".into()));
        }
        let mut flat = Vec::with_capacity(n * perms.len());
        let mut seen = vec![false; n];
        for (i, perm) in perms.iter().enumerate() {
            let perm = perm.as_ref();
            if perm.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: perm.len(),
                });
            }
            seen.iter_mut().for_each(|s| *s = false);
            for &l in perm {
                if l >= n || seen[l] {
                    return Err(Error::InvalidArgument(alloc::format!(
                        "slice {i} is not a permutation of 0..{n}"
                    )));
                }
                seen[l] = true;
            }
            flat.extend_from_slice(perm);
        }
        Ok(Self {
            n,
            perms: flat,
            boundary: false,
        })
    }

    pub fn identity(n: usize, p: usize) -> Self {
        let mut perms = Vec::with_capacity(n * p);
        for _ in 0..p {
            perms.extend(0..n);
        }
        Self {
            n,
            perms,
            boundary: false,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.perms.len() / self.n
    }

    pub fn perm(&self, i: usize) -> &[usize] {
        &self.perms[i * self.n..(i + 1) * self.n]
    }

    pub fn perms(&self) -> impl ExactSizeIterator<Item = &[usize]> + '_ {
        self.perms.chunks_exact(self.n)
    }

    /// Set when some slice had projected ties, so the matching depends on
    /// the tie-breaking convention.
    pub fn boundary(&self) -> bool {
        self.boundary
    }

    /// Equality of the matchings, ignoring the boundary flag.
    pub fn same_matching(&self, other: &Configuration) -> bool {
        self.n == other.n && self.perms == other.perms
    }
}

/// The slice-wise optimal matchings of `y` onto `z`:
/// `m_i = sigma_Z ∘ sigma_Y^{-1}` with stable sorting permutations.
pub fn configuration_of(y: &Support, z: &Support, dirs: &DirectionSet) -> Result<Configuration> {
    check_pair(y, z, dirs)?;
    let n = y.n();
    let mut perms = vec![0; n * dirs.p()];
    let mut scratch = SliceScratch::default();
    let mut boundary = false;
    for (i, theta) in dirs.iter().enumerate() {
        let gap = scratch.sort_slice(y, theta);
        boundary |= gap < BOUNDARY_GAP;
        let (_, z_order) = sorted_projection(z, theta);
        let perm = &mut perms[i * n..(i + 1) * n];
        for (&k, &l) in scratch.order.iter().zip(&z_order) {
            perm[k] = l;
        }
    }
    Ok(Configuration { n, perms, boundary })
}

/// Coefficients of the cell quadratic `q_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellQuadratic {
    /// `A`, the `d x d` direction Gram matrix.
    pub gram: DMatrix<f64>,
    /// `a`, one row per point.
    pub linear: Support,
    /// `b`.
    pub constant: f64,
    pub config: Configuration,
}

fn check_config(m: &Configuration, z: &Support, dirs: &DirectionSet) -> Result<()> {
    check_dirs(z, dirs)?;
    if m.n() != z.n() {
        return Err(Error::DimensionMismatch {
            expected: z.n(),
            got: m.n(),
        });
    }
    if m.p() != dirs.p() {
        return Err(Error::DimensionMismatch {
            expected: dirs.p(),
            got: m.p(),
        });
    }
    Ok(())
}

pub fn quadratic_coeffs(m: &Configuration, z: &Support, dirs: &DirectionSet) -> Result<CellQuadratic> {
    check_config(m, z, dirs)?;
    let (n, d, p) = (z.n(), z.d(), dirs.p());
    let gram = gram(dirs);
    let scale = 2.0 / (p as f64 * n as f64);
    let mut linear = vec![0.0; n * d];
    for (i, theta) in dirs.iter().enumerate() {
        for (k, &l) in m.perm(i).iter().enumerate() {
            let s = scale * dot(theta, z.row(l));
            for (a, t) in linear[k * d..(k + 1) * d].iter_mut().zip(theta) {
                *a += s * t;
            }
        }
    }
    let constant = z.rows().map(|zk| quad_form(&gram, zk)).sum::<f64>() / n as f64;
    Ok(CellQuadratic {
        gram,
        linear: Support::new(n, d, linear)?,
        constant,
        config: m.clone(),
    })
}

fn quad_form(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for r in 0..d {
        for c in 0..d {
            s += x[r] * a[(r, c)] * x[c];
        }
    }
    s
}

/// `q_m(Y)` from its coefficients.
pub fn eval_quadratic(q: &CellQuadratic, y: &Support) -> Result<f64> {
    check_same_shape(y, &q.linear)?;
    let n = y.n() as f64;
    let quad: f64 = y.rows().map(|yk| quad_form(&q.gram, yk)).sum::<f64>() / n;
    let lin: f64 = y.rows().zip(q.linear.rows()).map(|(yk, ak)| dot(yk, ak)).sum();
    // q_m is a sum of squares; the expanded form can round slightly below 0.
    Ok((quad - lin + q.constant).max(0.0))
}

/// Gradient of `q_m` at `y`: row `k` is `(2/n) A y_k - a_k`.
pub fn quadratic_gradient(q: &CellQuadratic, y: &Support) -> Result<Support> {
    check_same_shape(y, &q.linear)?;
    let (n, d) = (y.n(), y.d());
    let mut g = vec![0.0; n * d];
    for k in 0..n {
        let yk = y.row(k);
        for r in 0..d {
            let ay: f64 = (0..d).map(|c| q.gram[(r, c)] * yk[c]).sum();
            g[k * d + r] = 2.0 / n as f64 * ay - q.linear.row(k)[r];
        }
    }
    Support::new(n, d, g)
}

/// The unique minimiser `y_k* = (n/2) A^{-1} a_k` of `q_m`. Fails when the
/// smallest eigenvalue of `A` is below [`GRAM_EIGEN_FLOOR`] (e.g. `p < d`).
pub fn minimize_quadratic(q: &CellQuadratic) -> Result<Support> {
    let solver = GramSolver::new(&q.gram, GRAM_EIGEN_FLOOR)?;
    let (n, d) = (q.linear.n(), q.linear.d());
    let mut out = q.linear.clone().into_vec();
    for row in out.chunks_exact_mut(d) {
        row.iter_mut().for_each(|x| *x *= n as f64 / 2.0);
        solver.solve_in_place(row);
    }
    Support::new(n, d, out)
}

/// Outcome of a cell stability test.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStability {
    /// The minimiser of the cell quadratic lies in the cell's interior.
    pub stable: bool,
    /// The minimiser sits on a projected tie, so membership is indeterminate.
    pub boundary: bool,
    pub minimizer: Support,
    /// `E_p` at the minimiser.
    pub energy: f64,
}

pub fn is_stable_cell(m: &Configuration, z: &Support, dirs: &DirectionSet) -> Result<CellStability> {
    let q = quadratic_coeffs(m, z, dirs)?;
    let minimizer = minimize_quadratic(&q)?;
    let own = configuration_of(&minimizer, z, dirs)?;
    let energy = energy_p(&minimizer, z, dirs)?;
    Ok(CellStability {
        stable: !own.boundary && own.same_matching(m),
        boundary: own.boundary,
        minimizer,
        energy,
    })
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for l in 0..used.len() {
            if !used[l] {
                used[l] = true;
                cur.push(l);
                rec(cur, used, out);
                cur.pop();
                used[l] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

fn enumeration_size(n: usize, p: usize) -> Result<u128> {
    let too_large = || Error::TooLarge {
        size: u128::MAX,
        limit: ENUMERATION_LIMIT,
    };
    let mut fact: u128 = 1;
    for k in 2..=n as u128 {
        fact = fact.checked_mul(k).ok_or_else(too_large)?;
    }
    let mut size: u128 = 1;
    for _ in 0..p {
        size = size.checked_mul(fact).ok_or_else(too_large)?;
        if size > ENUMERATION_LIMIT {
            return Err(Error::TooLarge {
                size,
                limit: ENUMERATION_LIMIT,
            });
        }
    }
    Ok(size)
}

/// Calls `visit` on every configuration in `S_n^p` (guarded by
/// [`ENUMERATION_LIMIT`]).
pub fn for_each_configuration(
    n: usize,
    p: usize,
    mut visit: impl FnMut(&Configuration) -> Result<()>,
) -> Result<()> {
    enumeration_size(n, p)?;
    let perms = all_permutations(n);
    let mut idx = vec![0usize; p];
    let mut config = Configuration::identity(n, p);
    loop {
        for (i, &j) in idx.iter().enumerate() {
            config.perms[i * n..(i + 1) * n].copy_from_slice(&perms[j]);
        }
        visit(&config)?;
        // odometer increment
        let mut i = 0;
        loop {
            if i == p {
                return Ok(());
            }
            idx[i] += 1;
            if idx[i] < perms.len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// `min over all m in S_n^p of q_m(Y)`, by exhaustive enumeration.
pub fn brute_force_energy(y: &Support, z: &Support, dirs: &DirectionSet) -> Result<f64> {
    check_pair(y, z, dirs)?;
    let mut best = f64::INFINITY;
    for_each_configuration(y.n(), dirs.p(), |m| {
        let q = quadratic_coeffs(m, z, dirs)?;
        best = best.min(eval_quadratic(&q, y)?);
        Ok(())
    })?;
    Ok(best)
}

/// Stability report for every configuration in `S_n^p`.
pub fn enumerate_cells(z: &Support, dirs: &DirectionSet) -> Result<Vec<(Configuration, CellStability)>> {
    check_dirs(z, dirs)?;
    let mut out = Vec::new();
    for_each_configuration(z.n(), dirs.p(), |m| {
        let report = is_stable_cell(m, z, dirs)?;
        out.push((m.clone(), report));
        Ok(())
    })?;
    Ok(out)
}

/// Monte-Carlo estimate of the fixed-point map with per-entry standard
/// errors.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiEstimate {
    pub psi: Support,
    pub std_error: Support,
    pub p_psi: usize,
}

impl PsiEstimate {
    /// `max_k ||std_error_k||_2`, the Monte-Carlo error scale of the estimate
    /// in the `||.||_{inf,2}` norm.
    pub fn error_scale(&self) -> f64 {
        self.std_error.norm_inf2()
    }
}

/// `Psi_hat(Y)`, row `k` equal to `(d/p) sum_i theta_i theta_i^T z_{m_i(k)}`
/// over the given axes.
pub fn psi_with_dirs(y: &Support, z: &Support, dirs: &DirectionSet) -> Result<PsiEstimate> {
    check_pair(y, z, dirs)?;
    if !y.is_in_u() {
        return Err(Error::CoincidentRows);
    }
    let (n, d, p) = (y.n(), y.d(), dirs.p());
    // Welford accumulation of the per-direction contributions d theta (theta^T z_{m(k)}).
    let mut mean = vec![0.0; n * d];
    let mut m2 = vec![0.0; n * d];
    let mut scratch = SliceScratch::default();
    for (i, theta) in dirs.iter().enumerate() {
        scratch.sort_slice(y, theta);
        let (zs, _) = sorted_projection(z, theta);
        let count = (i + 1) as f64;
        for (r, &k) in scratch.order.iter().enumerate() {
            let s = d as f64 * zs[r];
            for (c, &t) in theta.iter().enumerate().take(d) {
                let x = s * t;
                let idx = k * d + c;
                let delta = x - mean[idx];
                mean[idx] += delta / count;
                m2[idx] += delta * (x - mean[idx]);
            }
        }
    }
    let se = if p > 1 {
        m2.iter()
            .map(|v| libm::sqrt(v / (p - 1) as f64 / p as f64))
            .collect()
    } else {
        vec![0.0; n * d]
    };
    Ok(PsiEstimate {
        psi: Support::new(n, d, mean)?,
        std_error: Support::new(n, d, se)?,
        p_psi: p,
    })
}

/// [`psi_with_dirs`] with `p_psi` fresh axes drawn from `seed`.
pub fn psi_estimate_with_error(y: &Support, z: &Support, p_psi: usize, seed: u64) -> Result<PsiEstimate> {
    check_same_shape(y, z)?;
    if p_psi == 0 {
        return Err(Error::InvalidArgument("p_psi must be positive".into()));
    }
    if !y.is_in_u() {
        return Err(Error::CoincidentRows);
    }
    let dirs = crate::geometry::sample_sphere(y.d(), p_psi, seed)?;
    psi_with_dirs(y, z, &dirs)
}

pub fn psi_estimate(y: &Support, z: &Support, p_psi: usize, seed: u64) -> Result<Support> {
    Ok(psi_estimate_with_error(y, z, p_psi, seed)?.psi)
}

/// `||Y - Psi_hat(Y)||_{inf,2}`.
pub fn fixed_point_residual(y: &Support, z: &Support, p_psi: usize, seed: u64) -> Result<f64> {
    let psi = psi_estimate(y, z, p_psi, seed)?;
    y.dist_inf2(&psi)
}

/// The blocks `S_hat_{k,l} = (d/p) sum_{i : m_i(k) = l} theta_i theta_i^T`,
/// returned row-major in `(k, l)`.
pub fn conditional_covariances(y: &Support, z: &Support, dirs: &DirectionSet) -> Result<Vec<DMatrix<f64>>> {
    let m = configuration_of(y, z, dirs)?;
    let (n, d, p) = (y.n(), y.d(), dirs.p());
    let mut blocks = vec![DMatrix::zeros(d, d); n * n];
    let scale = d as f64 / p as f64;
    for (i, theta) in dirs.iter().enumerate() {
        for (k, &l) in m.perm(i).iter().enumerate() {
            let b = &mut blocks[k * n + l];
            for r in 0..d {
                for c in 0..d {
                    b[(r, c)] += scale * theta[r] * theta[c];
                }
            }
        }
    }
    Ok(blocks)
}

/// The direction Gram matrix `A = (1/p) sum_i theta_i theta_i^T`.
pub fn direction_gram(dirs: &DirectionSet) -> DMatrix<f64> {
    gram(dirs)
}

/// Smallest eigenvalue of a symmetric matrix (symmetrised first).
pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    min_eigenvalue(m)
}

/// All eigenvalues of a symmetric matrix (symmetrised first), ascending
/// order not guaranteed.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    symmetric_eigenvalues(m).iter().copied().collect()
}

/// The three sufficient-sample-size terms guaranteeing
/// `||Y_p - Psi(Y_p)||_{inf,2} <= eps` with probability at least `1 - eta`:
/// `4096 d^3 n c^3 ln(3 d n^2 / eta) / eps^3`,
/// `697 d^2 n^2 c^2 ln(3 d / eta) / eps^2` and
/// `8 d^2 n^2 c^2 ln(6 n^2 / eta) / eps^2`, with `c = max_l ||z_l||_2`.
pub fn required_p_terms(eps: f64, eta: f64, n: usize, d: usize, cz_bar: f64) -> Result<[f64; 3]> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be positive".into()));
    }
    if !(cz_bar > 0.0) || !cz_bar.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!(
            "target radius must be positive, got {cz_bar}"
        )));
    }
    let (nf, df) = (n as f64, d as f64);
    let eps_max = 4.0 / 3.0 * nf * cz_bar;
    if !(eps > 0.0 && eps <= eps_max) {
        return Err(Error::InvalidArgument(alloc::format!(
            "eps must lie in (0, {eps_max}], got {eps}"
        )));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "eta must lie in (0, 1), got {eta}"
        )));
    }
    let c = cz_bar;
    Ok([
        4096.0 * df * df * df * nf * c * c * c * libm::log(3.0 * df * nf * nf / eta) / (eps * eps * eps),
        697.0 * df * df * nf * nf * c * c * libm::log(3.0 * df / eta) / (eps * eps),
        8.0 * df * df * nf * nf * c * c * libm::log(6.0 * nf * nf / eta) / (eps * eps),
    ])
}

/// Ceiling of the largest of [`required_p_terms`].
pub fn required_p(eps: f64, eta: f64, n: usize, d: usize, cz_bar: f64) -> Result<u64> {
    let terms = required_p_terms(eps, eta, n, d, cz_bar)?;
    let bound = libm::ceil(terms.iter().copied().fold(0.0, f64::max));
    if bound >= u64::MAX as f64 {
        return Err(Error::TooLarge {
            size: u128::MAX,
            limit: u64::MAX as u128,
        });
    }
    Ok(bound as u64)
}

/// `R_{k,l} = #{i : m_i(k) = l} / p`, a bistochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchCountMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl MatchCountMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.entries[k * self.n + l]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.chunks_exact(self.n).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|l| (0..self.n).map(|k| self.get(k, l)).sum())
            .collect()
    }
}

pub fn match_counts(m: &Configuration) -> MatchCountMatrix {
    let n = m.n();
    let mut counts = vec![0usize; n * n];
    for perm in m.perms() {
        for (k, &l) in perm.iter().enumerate() {
            counts[k * n + l] += 1;
        }
    }
    let p = m.p() as f64;
    MatchCountMatrix {
        n,
        entries: counts.into_iter().map(|c| c as f64 / p).collect(),
    }
}
