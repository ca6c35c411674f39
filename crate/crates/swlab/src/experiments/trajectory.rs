//! Iterate paths of BCD and SGD in the plane.

use swlab_core::cells::{configuration_of, is_stable_cell};
use swlab_core::geometry::sample_sphere;
use swlab_core::solvers::{bcd_run, sgd_run, BcdConfig, DirectionSource, SgdConfig, StepSchedule, Trajectory};
use swlab_core::{DirectionSet, Error as CoreError, Support};

use super::spec::list_or;
use super::{
    derive_seed, make_target, par_map, stream, trial_seed, uniform_start, Dataset, ExperimentSpec, Report, Schedule,
    Solver, Start, Summary,
};
use crate::error::{Error, Result};
use crate::table::{Table, Value};

/// Distance under which a terminal point counts as its cell's minimizer.
const MINIMIZER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
struct Job {
    alpha: f64,
    noise: f64,
    p: Option<usize>,
    trial: usize,
    seed: u64,
}

impl Job {
    fn key_values(&self, solver: Solver) -> Vec<Value> {
        let solver = match solver {
            Solver::Bcd => "bcd",
            Solver::Sgd => "sgd",
        };
        vec![solver.into(), self.alpha.into(), self.noise.into(), self.p.into(), self.trial.into()]
    }
}

struct Run {
    traj: Trajectory,
    stable_cell: Option<bool>,
}

/// The terminal point is the minimizer of a stable cell of `E_p`.
fn stable_cell(traj: &Trajectory, z: &Support, dirs: &DirectionSet) -> Option<bool> {
    let m = configuration_of(&traj.terminal, z, dirs).ok()?;
    let cell = is_stable_cell(&m, z, dirs).ok()?;
    Some(cell.stable && traj.terminal.dist_inf2(&cell.minimizer).ok()? < MINIMIZER_TOL)
}

pub(super) fn run(spec: &ExperimentSpec) -> Result<Report> {
    let dataset = spec.dataset.unwrap_or(Dataset::Spiral);
    let solver = spec.solver.unwrap_or(Solver::Sgd);
    let n = list_or(&spec.n, &[if dataset == Dataset::Sym2d { 2 } else { 10 }])[0];
    let d = list_or(&spec.d, &[2])[0];
    if dataset != Dataset::Gaussian && d != 2 {
        return Err(Error::Spec(format!("the {dataset:?} dataset lives in the plane, got d = {d}")));
    }
    let z = make_target(dataset, n, d, derive_seed(spec.base_seed, stream::TARGET))?;
    // One starting point shared by every realisation.
    let y0 = match spec.start.unwrap_or(Start::Uniform) {
        Start::Uniform => uniform_start(z.n(), z.d(), derive_seed(spec.base_seed, stream::START))?,
        Start::Target => z.clone(),
    };
    let trials = spec.trials_or(1);
    let max_iters = spec.max_iters.unwrap_or(1000);
    let record_every = spec.record_every.unwrap_or(1);
    let (alphas, ps): (Vec<f64>, Vec<Option<usize>>) = match solver {
        Solver::Bcd => (vec![0.0], list_or(&spec.p, &[z.n()]).into_iter().map(Some).collect()),
        Solver::Sgd => (
            list_or(&spec.alpha, &[1.0]),
            if spec.p.is_empty() {
                vec![None]
            } else {
                spec.p.iter().map(|&p| Some(p)).collect()
            },
        ),
    };
    let noises = match solver {
        Solver::Bcd => vec![0.0],
        Solver::Sgd => list_or(&spec.noise, &[0.0]),
    };
    let mut jobs = Vec::new();
    for &alpha in &alphas {
        for &noise in &noises {
            for &p in &ps {
                for trial in 0..trials {
                    jobs.push(Job {
                        alpha,
                        noise,
                        p,
                        trial,
                        seed: trial_seed(spec, trial),
                    });
                }
            }
        }
    }

    let results = par_map(&jobs, |job| -> Result<std::result::Result<Run, CoreError>> {
        let dirs = match job.p {
            Some(p) => Some(sample_sphere(z.d(), p, derive_seed(job.seed, stream::AXES))?),
            None => None,
        };
        let traj = match solver {
            Solver::Bcd => {
                let cfg = BcdConfig {
                    max_iters,
                    tol: spec.tol.unwrap_or(1e-5),
                    record_every,
                };
                bcd_run(&z, dirs.as_ref().expect("bcd axes"), &y0, &cfg)
            }
            Solver::Sgd => {
                let cfg = SgdConfig {
                    schedule: match spec.schedule.unwrap_or(Schedule::Constant) {
                        Schedule::Constant => StepSchedule::Constant(job.alpha),
                        Schedule::Decreasing => StepSchedule::decreasing(job.alpha),
                    },
                    noise: job.noise,
                    directions: dirs.clone().map_or(DirectionSource::Sphere, DirectionSource::Fixed),
                    max_iters,
                    record_every,
                    seed: derive_seed(job.seed, stream::SOLVER),
                    conv_threshold: spec.tol.unwrap_or(-1.0),
                    ..SgdConfig::default()
                };
                sgd_run(&z, &cfg, &y0)
            }
        };
        Ok(traj.map(|traj| {
            let stable = dirs.as_ref().and_then(|dirs| stable_cell(&traj, &z, dirs));
            Run {
                traj,
                stable_cell: stable,
            }
        }))
    });

    let key_cols = ["solver", "alpha", "noise", "p", "trial"];
    let mut trials_cols = key_cols.to_vec();
    trials_cols.extend([
        "seed", "iters", "converged", "diverged", "final_w2_over_d", "final_energy", "path_length", "stable_cell",
        "error",
    ]);
    let mut points_cols = key_cols.to_vec();
    points_cols.extend(["t", "energy", "w2_over_d", "step", "noise_level"]);
    let mut path_cols = key_cols.to_vec();
    path_cols.extend(["t", "k"]);
    let coord_names: Vec<String> = (0..z.d()).map(|c| format!("x{c}")).collect();
    path_cols.extend(coord_names.iter().map(String::as_str));

    let mut trials_table = Table::new("trials", &trials_cols);
    let mut points = Table::new("points", &points_cols);
    let mut paths = Table::new("paths", &path_cols);
    let mut plots = Vec::new();

    for (job, res) in jobs.iter().zip(results) {
        let mut row = job.key_values(solver);
        row.push(job.seed.into());
        match res? {
            Ok(Run { traj, stable_cell }) => {
                let path_length: f64 = traj
                    .iterates
                    .windows(2)
                    .map(|w| w[1].1.dist_inf2(&w[0].1).unwrap_or(f64::NAN))
                    .sum();
                row.extend([
                    traj.iters.into(),
                    traj.converged.into(),
                    false.into(),
                    traj.final_w2_over_d().into(),
                    traj.points.last().map_or(f64::NAN, |pt| pt.energy).into(),
                    path_length.into(),
                    stable_cell.into(),
                    Value::Missing,
                ]);
                for pt in &traj.points {
                    let mut r = job.key_values(solver);
                    r.extend([
                        pt.t.into(),
                        pt.energy.into(),
                        pt.w2_over_d.into(),
                        pt.step.into(),
                        pt.noise_level.into(),
                    ]);
                    points.push(r);
                }
                for (t, y) in &traj.iterates {
                    for k in 0..y.n() {
                        let mut r = job.key_values(solver);
                        r.extend([(*t).into(), k.into()]);
                        r.extend(y.row(k).iter().map(|&x| Value::from(x)));
                        paths.push(r);
                    }
                }
                if spec.plot && job.trial == 0 && z.d() == 2 {
                    let tracks: Vec<Vec<(f64, f64)>> = (0..z.n())
                        .map(|k| traj.iterates.iter().map(|(_, y)| (y.row(k)[0], y.row(k)[1])).collect())
                        .collect();
                    let targets: Vec<(f64, f64)> = z.rows().map(|r| (r[0], r[1])).collect();
                    let title = format!(
                        "{solver:?} alpha={} a={} p={}",
                        job.alpha,
                        job.noise,
                        job.p.map_or("fresh".to_owned(), |p| p.to_string())
                    );
                    plots.push((
                        format!("paths_{}.svg", plots.len()),
                        crate::plot::path_plot(&title, &tracks, &targets),
                    ));
                }
            }
            Err(CoreError::Diverged { iteration, .. }) => {
                row.extend([iteration.into(), false.into(), true.into()]);
                row.extend([Value::Missing, Value::Missing, Value::Missing, Value::Missing, Value::Missing]);
            }
            Err(e) => {
                row.extend([Value::Missing, false.into(), false.into(), Value::Missing, Value::Missing]);
                row.extend([Value::Missing, Value::Missing, e.to_string().into()]);
            }
        }
        trials_table.push(row);
    }

    let summary = Summary::of(
        &trials_table,
        &["solver", "alpha", "noise", "p"],
        &["final_w2_over_d", "path_length", "iters"],
    );
    let mut notes = vec![format!(
        "trajectory: {solver:?} on the {dataset:?} target with n={}, d={}; all realisations start from the same support",
        z.n(),
        z.d()
    )];
    if solver == Solver::Sgd {
        for &alpha in &alphas {
            let cfg = SgdConfig {
                schedule: StepSchedule::Constant(alpha),
                ..SgdConfig::default()
            };
            if spec.schedule.unwrap_or(Schedule::Constant) == Schedule::Constant {
                notes.extend(cfg.warnings(z.n()).into_iter().map(|w| format!("alpha={alpha}: {w}")));
            }
        }
    }
    Ok(Report {
        tables: vec![trials_table, points, paths],
        summaries: vec![summary],
        notes,
        plots,
    })
}
