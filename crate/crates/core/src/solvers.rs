//! Minimisers of the sliced energy.
//!
//! * [`bcd_run`]: block-coordinate descent on `E_p`. For the current iterate
//!   it computes the slice-wise matchings, then jumps to the minimiser of the
//!   resulting cell quadratic, `y_k <- A^{-1} (1/p) sum_i theta_i theta_i^T
//!   z_{m_i(k)}`. `E_p` never increases along the way.
//! * [`sgd_run`]: stochastic gradient descent on `E` (fresh axes every step)
//!   or `E_p` (axes drawn from a fixed set), with optional mini-batches,
//!   additive Gaussian noise and decreasing step sizes.
//!
//! Both generalise to barycentres `sum_j lambda_j SW_2^2(Y, Z_j)`; the plain
//! runs are the one-target case.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cells::{BOUNDARY_GAP, GRAM_EIGEN_FLOOR};
use crate::energy::{energy_p, min_projected_gap};
use crate::error::{Error, Result};
use crate::exact_ot::{assignment_w2, WeightVector};
use crate::geometry::{check_same_shape, sample_axis, sample_sphere, DirectionSet, Support};
use crate::linalg::{gram, GramSolver};
use crate::slices::{accumulate_slice_gradient, check_dirs, sorted_projection, ProjectedTarget, SliceScratch};

/// `||Y||_{inf,2}` above which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Seed offset for the fixed probe axes used to monitor `E` during SGD.
const PROBE_SEED_OFFSET: u64 = 0x005e_ed0f_9e37_79b9;

/// One recorded step of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: usize,
    /// The objective at `Y^(t)` (see the run's documentation).
    pub energy: f64,
    /// `W_2^2(Y^(t), Z) / d`, averaged over targets with their weights.
    pub w2_over_d: f64,
    /// `||Y^(t) - Y^(t-1)||_{inf,2}`, 0 at `t = 0`.
    pub step: f64,
    /// `alpha^(t) * a`, the standard deviation of the injected noise.
    pub noise_level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    /// `(t, Y^(t))` at the recording stride.
    pub iterates: Vec<(usize, Support)>,
    pub terminal: Support,
    /// Matching of the terminal support onto the (first) target along the
    /// last axis used.
    pub terminal_assignment: Vec<usize>,
    /// The consecutive-iterate test fired (or the target error was reached).
    pub converged: bool,
    /// Number of updates performed.
    pub iters: usize,
    /// Some slice of the terminal support had a projected tie.
    pub boundary: bool,
    /// Largest `||Y^(t)||_{inf,2}` seen, to monitor boundedness.
    pub max_norm: f64,
    /// First `t` with `w2_over_d` below the requested target, if any.
    pub first_hit: Option<usize>,
}

impl Trajectory {
    pub fn energy_series(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.energy).collect()
    }

    pub fn w2_series(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.w2_over_d).collect()
    }

    pub fn final_w2_over_d(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.w2_over_d)
    }
}

/// Targets and weights of `sum_j lambda_j SW_2^2(Y, Z_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterProblem {
    targets: Vec<Support>,
    lambdas: WeightVector,
}

impl BarycenterProblem {
    pub fn new(targets: Vec<Support>, lambdas: WeightVector) -> Result<Self> {
        let first = targets
            .first()
            .ok_or_else(|| Error::InvalidArgument("barycentre needs at least one target".into()))?;
        for z in &targets[1..] {
            check_same_shape(first, z)?;
        }
        if lambdas.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: targets.len(),
                got: lambdas.len(),
            });
        }
        Ok(Self { targets, lambdas })
    }

    pub fn single(z: Support) -> Self {
        Self {
            targets: vec![z],
            lambdas: WeightVector::new(vec![1.0]).expect("unit weight"),
        }
    }

    pub fn targets(&self) -> &[Support] {
        &self.targets
    }

    pub fn lambdas(&self) -> &[f64] {
        self.lambdas.as_slice()
    }

    fn n(&self) -> usize {
        self.targets[0].n()
    }

    fn d(&self) -> usize {
        self.targets[0].d()
    }

    fn w2_over_d(&self, y: &Support) -> Result<f64> {
        let mut s = 0.0;
        for (z, &l) in self.targets.iter().zip(self.lambdas()) {
            if l != 0.0 {
                s += l * assignment_w2(y, z)?.0;
            }
        }
        Ok(s / self.d() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdConfig {
    pub max_iters: usize,
    /// Stop once `||Y^(t) - Y^(t-1)||_{inf,2} < tol`.
    pub tol: f64,
    pub record_every: usize,
}

impl Default for BcdConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            tol: 1e-5,
            record_every: 1,
        }
    }
}

impl BcdConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.record_every == 0 {
            return Err(Error::InvalidArgument("max_iters and record_every must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Block-coordinate descent on `E_p` for the axes `dirs`, from `y0`.
///
/// Every iteration is recorded in `points` (`energy` is `E_p(Y^(t))`);
/// `record_every` only strides the stored iterates.
pub fn bcd_run(z: &Support, dirs: &DirectionSet, y0: &Support, cfg: &BcdConfig) -> Result<Trajectory> {
    barycenter_bcd_run(&BarycenterProblem::single(z.clone()), dirs, y0, cfg)
}

/// Block-coordinate descent on `sum_j lambda_j E_p(Y, Z_j)`: the position
/// update becomes `y_k <- A^{-1} sum_j lambda_j (1/p) sum_i theta_i
/// theta_i^T z^(j)_{m_ij(k)}`.
pub fn barycenter_bcd_run(
    prob: &BarycenterProblem,
    dirs: &DirectionSet,
    y0: &Support,
    cfg: &BcdConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_same_shape(y0, &prob.targets[0])?;
    check_dirs(y0, dirs)?;
    let (n, d, p) = (prob.n(), prob.d(), dirs.p());
    let solver = GramSolver::new(&gram(dirs), GRAM_EIGEN_FLOOR)?;
    let projected: Vec<ProjectedTarget> = prob
        .targets
        .iter()
        .map(|z| ProjectedTarget::new(z, dirs))
        .collect::<Result<_>>()?;
    let mut scratch = SliceScratch::default();
    let mut rhs = vec![0.0; n * d];

    // One matching pass: E_p at `y` and the right-hand side of the update.
    let mut sweep = |y: &Support, rhs: &mut [f64]| -> f64 {
        rhs.iter_mut().for_each(|r| *r = 0.0);
        let mut energy = 0.0;
        for (pt, &lambda) in projected.iter().zip(prob.lambdas()) {
            if lambda == 0.0 {
                continue;
            }
            for (i, theta) in dirs.iter().enumerate() {
                scratch.sort_slice(y, theta);
                let zs = pt.sorted(i);
                energy += lambda * scratch.cost(zs) / p as f64;
                for (r, &k) in scratch.order.iter().enumerate() {
                    let s = lambda * zs[r] / p as f64;
                    for (v, t) in rhs[k * d..(k + 1) * d].iter_mut().zip(theta) {
                        *v += s * t;
                    }
                }
            }
        }
        energy
    };

    let mut y = y0.clone();
    let mut energy = sweep(&y, &mut rhs);
    let mut traj = Trajectory {
        points: vec![TrajectoryPoint {
            t: 0,
            energy,
            w2_over_d: prob.w2_over_d(&y)?,
            step: 0.0,
            noise_level: 0.0,
        }],
        iterates: vec![(0, y.clone())],
        terminal: y.clone(),
        terminal_assignment: Vec::new(),
        converged: false,
        iters: 0,
        boundary: false,
        max_norm: y.norm_inf2(),
        first_hit: None,
    };

    for t in 1..=cfg.max_iters {
        let mut next = rhs.clone();
        for row in next.chunks_exact_mut(d) {
            solver.solve_in_place(row);
        }
        if let Some(index) = next.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let next = Support::from_raw(n, d, next);
        let step = next.dist_inf2(&y)?;
        y = next;
        energy = sweep(&y, &mut rhs);
        traj.iters = t;
        traj.max_norm = traj.max_norm.max(y.norm_inf2());
        traj.converged = step < cfg.tol;
        let last = traj.converged || t == cfg.max_iters;
        traj.points.push(TrajectoryPoint {
            t,
            energy,
            w2_over_d: prob.w2_over_d(&y)?,
            step,
            noise_level: 0.0,
        });
        if last || t % cfg.record_every == 0 {
            traj.iterates.push((t, y.clone()));
        }
        if traj.converged {
            break;
        }
    }
    finish(&mut traj, y, prob, dirs.axis(dirs.p() - 1), Some(dirs))?;
    Ok(traj)
}

/// Terminal bookkeeping shared by the solvers.
/// The boundary flag looks at every axis of `dirs` when given, otherwise at
/// the last axis only.
fn finish(
    traj: &mut Trajectory,
    y: Support,
    prob: &BarycenterProblem,
    last_axis: &[f64],
    dirs: Option<&DirectionSet>,
) -> Result<()> {
    let mut scratch = SliceScratch::default();
    let (_, z_order) = sorted_projection(&prob.targets[0], last_axis);
    let last_gap = scratch.sort_slice(&y, last_axis);
    let mut assignment = vec![0; y.n()];
    for (&k, &l) in scratch.order.iter().zip(&z_order) {
        assignment[k] = l;
    }
    traj.terminal_assignment = assignment;
    let gap = match dirs {
        Some(dirs) => min_projected_gap(&y, dirs)?,
        None => last_gap,
    };
    traj.boundary = gap < BOUNDARY_GAP;
    traj.terminal = y;
    Ok(())
}

/// Step-size sequence of SGD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `initial / (1 + t)^exponent`; summable squares and divergent sum need
    /// `exponent` in `(1/2, 1]`.
    Decreasing { initial: f64, exponent: f64 },
}

impl StepSchedule {
    /// The default decreasing schedule `alpha_0 / (1 + t)^0.75`.
    pub fn decreasing(initial: f64) -> Self {
        StepSchedule::Decreasing {
            initial,
            exponent: 0.75,
        }
    }

    #[inline]
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant(alpha) => alpha,
            StepSchedule::Decreasing { initial, exponent } => initial / libm::pow(1.0 + t as f64, exponent),
        }
    }

    fn initial(&self) -> f64 {
        self.at(0)
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant(alpha) => alpha > 0.0 && alpha.is_finite(),
            StepSchedule::Decreasing { initial, exponent } => {
                initial > 0.0 && initial.is_finite() && exponent > 0.5 && exponent <= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid step schedule {self:?}")))
        }
    }
}

/// Where SGD draws its axes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DirectionSource {
    /// Fresh uniform axes every step: SGD on `E`.
    Sphere,
    /// Uniform picks from a fixed set: SGD on `E_p`.
    Fixed(DirectionSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub schedule: StepSchedule,
    /// `a`: the noise added at step `t` is `alpha^(t) a eps`, `eps` standard
    /// Gaussian.
    pub noise: f64,
    pub batch: usize,
    pub directions: DirectionSource,
    /// Stop once `||Y^(t+1) - Y^(t)||_{inf,2} < conv_threshold`; a negative
    /// value disables the test and always runs `max_iters` steps.
    pub conv_threshold: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub record_every: usize,
    /// `energy` is `E_p` over this many fixed probe axes (drawn from a seed
    /// derived from `seed`). With 0 probes it is the mean slice loss of the
    /// batch that produced the step, and NaN at `t = 0`.
    pub energy_probes: usize,
    /// Stop at the first recorded step with `w2_over_d` below this value.
    /// Checked at every step, which costs one assignment per step.
    pub target_w2: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            schedule: StepSchedule::Constant(1.0),
            noise: 0.0,
            batch: 1,
            directions: DirectionSource::Sphere,
            conv_threshold: -1.0,
            max_iters: 1000,
            seed: 0,
            record_every: 1,
            energy_probes: 64,
            target_w2: None,
        }
    }
}

impl SgdConfig {
    /// Advisory messages about the step size for `n` points: constant steps
    /// at or above `n/2` over-shoot the slice-wise contraction, and at or
    /// above `n` runs are expected to diverge.
    pub fn warnings(&self, n: usize) -> Vec<String> {
        let mut out = Vec::new();
        if let StepSchedule::Constant(alpha) = self.schedule {
            let half = n as f64 / 2.0;
            if alpha >= n as f64 {
                out.push(format!("step {alpha} >= n = {n}: the run is likely to diverge"));
            } else if alpha >= half {
                out.push(format!("step {alpha} >= n/2 = {half}: outside the contracting range"));
            }
        }
        out
    }

    fn validate(&self, d: usize) -> Result<()> {
        self.schedule.validate()?;
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {}", self.noise)));
        }
        if self.batch == 0 || self.max_iters == 0 || self.record_every == 0 {
            return Err(Error::InvalidArgument(
                "batch, max_iters and record_every must be >= 1".into(),
            ));
        }
        if let DirectionSource::Fixed(dirs) = &self.directions {
            if dirs.d() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: dirs.d(),
                });
            }
        }
        Ok(())
    }
}

/// `Y - alpha * grad + alpha * a * eps` with `eps` standard Gaussian drawn
/// from `rng` (nothing is drawn when `a = 0`).
pub fn noised_step<R: Rng + ?Sized>(y: &Support, grad: &Support, alpha: f64, noise: f64, rng: &mut R) -> Result<Support> {
    check_same_shape(y, grad)?;
    let scale = alpha * noise;
    let data = y
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(yv, g)| {
            let eps: f64 = if noise > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            yv - alpha * g + scale * eps
        })
        .collect();
    Support::new(y.n(), y.d(), data)
}

/// Mean over the axes of `sum_j lambda_j grad w_theta(Y, Z_j)`, together
/// with the mean weighted slice loss.
pub fn batch_gradient(y: &Support, prob: &BarycenterProblem, axes: &DirectionSet) -> Result<(Support, f64)> {
    check_same_shape(y, &prob.targets[0])?;
    check_dirs(y, axes)?;
    let mut grad = vec![0.0; y.n() * y.d()];
    let mut scratch = SliceScratch::default();
    let weight = 1.0 / axes.p() as f64;
    let mut loss = 0.0;
    for theta in axes.iter() {
        for (z, &lambda) in prob.targets.iter().zip(prob.lambdas()) {
            if lambda == 0.0 {
                continue;
            }
            let (zs, _) = sorted_projection(z, theta);
            loss += lambda * weight * accumulate_slice_gradient(y, theta, &zs, &mut scratch, lambda * weight, &mut grad);
        }
    }
    Ok((Support::from_raw(y.n(), y.d(), grad), loss))
}

/// SGD on `SW_2^2(., Z)` from `y0`.
pub fn sgd_run(z: &Support, cfg: &SgdConfig, y0: &Support) -> Result<Trajectory> {
    barycenter_run(&BarycenterProblem::single(z.clone()), cfg, y0)
}

/// SGD on `sum_j lambda_j SW_2^2(., Z_j)` from `y0`.
///
/// Per step: draw `batch` axes, average the weighted slice gradients, take a
/// (noised) step. Fails with [`Error::Diverged`] when the iterate leaves the
/// ball of radius [`DIVERGENCE_NORM`].
pub fn barycenter_run(prob: &BarycenterProblem, cfg: &SgdConfig, y0: &Support) -> Result<Trajectory> {
    let (n, d) = (prob.n(), prob.d());
    check_same_shape(y0, &prob.targets[0])?;
    cfg.validate(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let probes = if cfg.energy_probes > 0 {
        Some(sample_sphere(d, cfg.energy_probes, cfg.seed.wrapping_add(PROBE_SEED_OFFSET))?)
    } else {
        None
    };
    let probe_energy = |y: &Support| -> Result<f64> {
        let dirs = probes.as_ref().expect("probes present");
        let mut e = 0.0;
        for (z, &lambda) in prob.targets.iter().zip(prob.lambdas()) {
            if lambda != 0.0 {
                e += lambda * energy_p(y, z, dirs)?;
            }
        }
        Ok(e)
    };
    let fixed_targets: Option<Vec<ProjectedTarget>> = match &cfg.directions {
        DirectionSource::Fixed(dirs) => Some(
            prob.targets
                .iter()
                .map(|z| ProjectedTarget::new(z, dirs))
                .collect::<Result<_>>()?,
        ),
        DirectionSource::Sphere => None,
    };

    let fixed_dirs = match &cfg.directions {
        DirectionSource::Fixed(dirs) => Some(dirs),
        DirectionSource::Sphere => None,
    };

    let mut y = y0.clone();
    let mut grad = vec![0.0; n * d];
    let mut axis = vec![0.0; d];
    let mut z_sorted = Vec::with_capacity(n);
    let mut scratch = SliceScratch::default();
    let mut z_scratch = SliceScratch::default();
    let weight = 1.0 / cfg.batch as f64;

    let initial_w2 = prob.w2_over_d(&y)?;
    let mut traj = Trajectory {
        points: vec![TrajectoryPoint {
            t: 0,
            energy: match probes {
                Some(_) => probe_energy(&y)?,
                None => f64::NAN,
            },
            w2_over_d: initial_w2,
            step: 0.0,
            noise_level: 0.0,
        }],
        iterates: vec![(0, y.clone())],
        terminal: y.clone(),
        terminal_assignment: Vec::new(),
        converged: false,
        iters: 0,
        boundary: false,
        max_norm: y.norm_inf2(),
        first_hit: None,
    };
    if let Some(target) = cfg.target_w2 {
        if initial_w2 < target {
            traj.first_hit = Some(0);
            traj.converged = true;
            finish(&mut traj, y, prob, &first_axis(d), fixed_dirs)?;
            return Ok(traj);
        }
    }

    for t in 0..cfg.max_iters {
        let alpha = cfg.schedule.at(t);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            match (&cfg.directions, &fixed_targets) {
                (DirectionSource::Fixed(dirs), Some(pts)) => {
                    let i = rng.random_range(0..dirs.p());
                    axis.copy_from_slice(dirs.axis(i));
                    for (pt, &lambda) in pts.iter().zip(prob.lambdas()) {
                        if lambda != 0.0 {
                            loss += lambda
                                * weight
                                * accumulate_slice_gradient(&y, &axis, pt.sorted(i), &mut scratch, lambda * weight, &mut grad);
                        }
                    }
                }
                _ => {
                    sample_axis(&mut rng, &mut axis);
                    for (z, &lambda) in prob.targets.iter().zip(prob.lambdas()) {
                        if lambda != 0.0 {
                            z_scratch.sort_slice(z, &axis);
                            z_sorted.clear();
                            z_sorted.extend(z_scratch.order.iter().map(|&l| z_scratch.proj[l]));
                            loss += lambda
                                * weight
                                * accumulate_slice_gradient(&y, &axis, &z_sorted, &mut scratch, lambda * weight, &mut grad);
                        }
                    }
                }
            }
        }
        let g = Support::from_raw(n, d, core::mem::take(&mut grad));
        let next = noised_step(&y, &g, alpha, cfg.noise, &mut rng)?;
        grad = g.into_vec();
        let step = next.dist_inf2(&y)?;
        y = next;
        let norm = y.norm_inf2();
        traj.max_norm = traj.max_norm.max(norm);
        traj.iters = t + 1;
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Diverged {
                iteration: t + 1,
                norm,
                step: cfg.schedule.initial(),
            });
        }
        traj.converged = cfg.conv_threshold >= 0.0 && step < cfg.conv_threshold;
        let mut hit = false;
        let mut w2 = None;
        if let Some(target) = cfg.target_w2 {
            let v = prob.w2_over_d(&y)?;
            hit = v < target;
            w2 = Some(v);
            if hit {
                traj.first_hit = Some(t + 1);
                traj.converged = true;
            }
        }
        let last = traj.converged || hit || t + 1 == cfg.max_iters;
        if last || (t + 1) % cfg.record_every == 0 {
            let energy = match probes {
                Some(_) => probe_energy(&y)?,
                None => loss,
            };
            traj.points.push(TrajectoryPoint {
                t: t + 1,
                energy,
                w2_over_d: match w2 {
                    Some(v) => v,
                    None => prob.w2_over_d(&y)?,
                },
                step,
                noise_level: alpha * cfg.noise,
            });
            traj.iterates.push((t + 1, y.clone()));
        }
        if last {
            break;
        }
    }
    finish(&mut traj, y, prob, &axis, fixed_dirs)?;
    Ok(traj)
}

fn first_axis(d: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[0] = 1.0;
    e
}
