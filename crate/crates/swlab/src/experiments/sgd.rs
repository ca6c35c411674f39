//! SGD sweeps: error curves over step size, noise and batch size, and the
//! growth of the iteration count with the dimension.

use std::collections::BTreeMap;

use swlab_core::geometry::sample_sphere;
use swlab_core::solvers::{sgd_run, DirectionSource, SgdConfig, StepSchedule, Trajectory};
use swlab_core::Error as CoreError;

use super::spec::list_or;
use super::{
    derive_seed, make_target, par_map, stream, trial_seed, uniform_start, Dataset, ExperimentSpec, Report, Schedule,
    Summary, DEFAULT_THRESHOLD,
};
use crate::error::Result;
use crate::stats::{linear_fit, median, quantile};
use crate::table::{Table, Value};

#[derive(Debug, Clone, Copy)]
struct Job {
    n: usize,
    d: usize,
    alpha: f64,
    noise: f64,
    batch: usize,
    /// Fixed axis count, or fresh axes every step.
    p: Option<usize>,
    trial: usize,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct GridPoint {
    n: usize,
    d: usize,
    alpha: f64,
    noise: f64,
    batch: usize,
    p: Option<usize>,
}

impl Job {
    fn grid(&self) -> GridPoint {
        GridPoint {
            n: self.n,
            d: self.d,
            alpha: self.alpha,
            noise: self.noise,
            batch: self.batch,
            p: self.p,
        }
    }

    fn key_values(&self) -> Vec<Value> {
        vec![
            self.n.into(),
            self.d.into(),
            self.alpha.into(),
            self.noise.into(),
            self.batch.into(),
            self.p.into(),
        ]
    }
}

const KEYS: [&str; 6] = ["n", "d", "alpha", "noise", "batch", "p"];

/// Step sizes default to `n / 2` for every `n`.
fn jobs(spec: &ExperimentSpec, n: &[usize], d: &[usize], trials: usize) -> Vec<Job> {
    let noise = list_or(&spec.noise, &[0.0]);
    let batch = list_or(&spec.batch, &[1]);
    let p: Vec<Option<usize>> = if spec.p.is_empty() {
        vec![None]
    } else {
        spec.p.iter().map(|&p| Some(p)).collect()
    };
    let mut out = Vec::new();
    for &n in n {
        let alpha = list_or(&spec.alpha, &[n as f64 / 2.0]);
        for &d in d {
            for &alpha in &alpha {
                for &noise in &noise {
                    for &batch in &batch {
                        for &p in &p {
                            for trial in 0..trials {
                                out.push(Job {
                                    n,
                                    d,
                                    alpha,
                                    noise,
                                    batch,
                                    p,
                                    trial,
                                    seed: trial_seed(spec, trial),
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn config(spec: &ExperimentSpec, job: &Job, max_iters: usize, record_every: usize) -> Result<SgdConfig> {
    let schedule = match spec.schedule.unwrap_or(Schedule::Constant) {
        Schedule::Constant => StepSchedule::Constant(job.alpha),
        Schedule::Decreasing => StepSchedule::decreasing(job.alpha),
    };
    let directions = match job.p {
        Some(p) => DirectionSource::Fixed(sample_sphere(job.d, p, derive_seed(job.seed, stream::AXES))?),
        None => DirectionSource::Sphere,
    };
    Ok(SgdConfig {
        schedule,
        noise: job.noise,
        batch: job.batch,
        directions,
        conv_threshold: -1.0,
        max_iters,
        seed: derive_seed(job.seed, stream::SOLVER),
        record_every,
        ..SgdConfig::default()
    })
}

/// The outer error is a setup failure; the inner one a failed run.
fn run_job(spec: &ExperimentSpec, job: &Job, cfg: &SgdConfig) -> Result<std::result::Result<Trajectory, CoreError>> {
    let dataset = spec.dataset.unwrap_or(Dataset::Gaussian);
    let z = make_target(dataset, job.n, job.d, derive_seed(job.seed, stream::TARGET))?;
    let y0 = uniform_start(z.n(), z.d(), derive_seed(job.seed, stream::START))?;
    Ok(sgd_run(&z, cfg, &y0))
}

fn warnings(spec: &ExperimentSpec, jobs: &[Job], max_iters: usize) -> Result<Vec<String>> {
    let mut notes = Vec::new();
    for job in jobs.iter().filter(|j| j.trial == 0) {
        for w in config(spec, job, max_iters, 1)?.warnings(job.n) {
            let note = format!("n={} alpha={}: {w}", job.n, job.alpha);
            if !notes.contains(&note) {
                notes.push(note);
            }
        }
    }
    Ok(notes)
}

/// `sgd-error`: error curves, plateau level and divergence per grid point.
pub(super) fn run_error(spec: &ExperimentSpec) -> Result<Report> {
    let n = list_or(&spec.n, &[10]);
    let d = list_or(&spec.d, &[5]);
    let trials = spec.trials_or(10);
    let max_iters = spec.max_iters.unwrap_or(10_000);
    let record_every = spec.record_every.unwrap_or((max_iters / 1000).max(1));
    let threshold = spec.threshold.unwrap_or(1e-3);
    let jobs = jobs(spec, &n, &d, trials);

    let results = par_map(&jobs, |job| -> Result<std::result::Result<Trajectory, CoreError>> {
        let cfg = config(spec, job, max_iters, record_every)?;
        run_job(spec, job, &cfg)
    });

    let mut columns: Vec<&str> = KEYS.to_vec();
    columns.extend([
        "trial", "seed", "max_iters", "iters", "diverged", "final_w2_over_d", "plateau", "min_w2_over_d", "hit",
        "first_hit", "max_norm", "error",
    ]);
    let mut table = Table::new("trials", &columns);
    // Per grid point: t -> W2^2/d of every finished trial.
    let mut curves: Vec<(GridPoint, BTreeMap<usize, Vec<f64>>)> = Vec::new();

    for (job, res) in jobs.iter().zip(results) {
        let mut row = job.key_values();
        row.extend([job.trial.into(), job.seed.into(), max_iters.into()]);
        match res? {
            Ok(traj) => {
                let w2 = traj.w2_series();
                let decile_start = (max_iters as f64 * 0.9) as usize;
                let tail: Vec<f64> = traj
                    .points
                    .iter()
                    .filter(|pt| pt.t >= decile_start)
                    .map(|pt| pt.w2_over_d)
                    .collect();
                let plateau = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
                let min = w2.iter().copied().fold(f64::INFINITY, f64::min);
                let first_hit = traj.points.iter().find(|pt| pt.w2_over_d < threshold).map(|pt| pt.t);
                row.extend([
                    traj.iters.into(),
                    false.into(),
                    traj.final_w2_over_d().into(),
                    plateau.into(),
                    min.into(),
                    first_hit.is_some().into(),
                    first_hit.into(),
                    traj.max_norm.into(),
                    Value::Missing,
                ]);
                let grid = job.grid();
                let idx = match curves.iter().position(|(g, _)| *g == grid) {
                    Some(i) => i,
                    None => {
                        curves.push((grid, BTreeMap::new()));
                        curves.len() - 1
                    }
                };
                for pt in &traj.points {
                    curves[idx].1.entry(pt.t).or_default().push(pt.w2_over_d);
                }
            }
            Err(CoreError::Diverged { iteration, norm, .. }) => row.extend([
                iteration.into(),
                true.into(),
                Value::Missing,
                Value::Missing,
                Value::Missing,
                false.into(),
                Value::Missing,
                norm.into(),
                Value::Missing,
            ]),
            Err(e) => row.extend([
                Value::Missing,
                false.into(),
                Value::Missing,
                Value::Missing,
                Value::Missing,
                false.into(),
                Value::Missing,
                Value::Missing,
                e.to_string().into(),
            ]),
        }
        table.push(row);
    }

    let mut curve_cols: Vec<&str> = KEYS.to_vec();
    curve_cols.extend(["t", "runs", "w2_q30", "w2_q50", "w2_q70"]);
    let mut curve_table = Table::new("curves", &curve_cols);
    let mut series = Vec::new();
    for (grid, by_t) in &curves {
        let mut median_curve = Vec::new();
        for (&t, values) in by_t {
            let key = Job {
                n: grid.n,
                d: grid.d,
                alpha: grid.alpha,
                noise: grid.noise,
                batch: grid.batch,
                p: grid.p,
                trial: 0,
                seed: 0,
            }
            .key_values();
            let mut row = key;
            row.extend([
                t.into(),
                values.len().into(),
                quantile(values, 0.3).into(),
                quantile(values, 0.5).into(),
                quantile(values, 0.7).into(),
            ]);
            curve_table.push(row);
            median_curve.push(((t + 1) as f64, median(values)));
        }
        series.push((
            format!("alpha={} a={} batch={}", grid.alpha, grid.noise, grid.batch),
            median_curve,
        ));
    }

    let summary = Summary::of(
        &table,
        &KEYS,
        &["final_w2_over_d", "plateau", "hit", "first_hit", "diverged"],
    );
    let mut notes = vec![format!(
        "sgd-error: plateau is the mean W2^2/d over the last decile of iterations; hit means W2^2/d < {threshold:e} at some recorded step (every {record_every} iterations)"
    )];
    notes.extend(warnings(spec, &jobs, max_iters)?);
    let (plateau, hit, div) = (
        summary.table.column("plateau_q50").expect("plateau"),
        summary.table.column("hit_mean").expect("hit"),
        summary.table.column("diverged_mean").expect("diverged"),
    );
    for row in &summary.table.rows {
        notes.push(format!(
            "n={} d={} alpha={} a={} batch={}: median plateau {}, hit fraction {:.2}, diverged fraction {:.2}",
            row[0], row[1], row[2], row[3], row[4], row[plateau], row[hit].as_f64(), row[div].as_f64()
        ));
    }

    let mut plots = Vec::new();
    if spec.plot {
        plots.push((
            "curves.svg".to_owned(),
            crate::plot::line_plot("median W2^2/d", "iteration + 1", "W2^2/d", &series, true, true),
        ));
    }
    Ok(Report {
        tables: vec![table, curve_table],
        summaries: vec![summary],
        notes,
        plots,
    })
}

/// `scaling`: iterations until `W_2^2/d` first drops below the threshold,
/// and the log-log slope of their median against `d`.
pub(super) fn run_scaling(spec: &ExperimentSpec) -> Result<Report> {
    let n = list_or(&spec.n, &[10]);
    let d = list_or(&spec.d, &[4, 8, 16]);
    let trials = spec.trials_or(5);
    let max_iters = spec.max_iters.unwrap_or(100_000);
    let threshold = spec.threshold.unwrap_or(DEFAULT_THRESHOLD);
    let jobs = jobs(spec, &n, &d, trials);

    let results = par_map(&jobs, |job| -> Result<std::result::Result<Trajectory, CoreError>> {
        let mut cfg = config(spec, job, max_iters, max_iters)?;
        cfg.target_w2 = Some(threshold);
        // The energy trace is not used here.
        cfg.energy_probes = 0;
        run_job(spec, job, &cfg)
    });

    let mut columns: Vec<&str> = KEYS.to_vec();
    columns.extend(["trial", "seed", "converged", "diverged", "iterations", "error"]);
    let mut table = Table::new("trials", &columns);
    for (job, res) in jobs.iter().zip(results) {
        let mut row = job.key_values();
        row.extend([job.trial.into(), job.seed.into()]);
        match res? {
            Ok(traj) => row.extend([
                traj.first_hit.is_some().into(),
                false.into(),
                traj.first_hit.into(),
                Value::Missing,
            ]),
            Err(CoreError::Diverged { .. }) => {
                row.extend([false.into(), true.into(), Value::Missing, Value::Missing])
            }
            Err(e) => row.extend([false.into(), false.into(), Value::Missing, e.to_string().into()]),
        }
        table.push(row);
    }
    let summary = Summary::of(&table, &KEYS, &["iterations", "converged"]);

    // One fit per grid point other than d.
    let mut fit = Table::new(
        "fit",
        &["n", "alpha", "noise", "batch", "p", "dims", "slope", "intercept"],
    );
    let mut notes = vec![format!(
        "scaling: iterations until W2^2/d < {threshold:e} (at most {max_iters}); slope of log(median iterations) against log d over dimensions with at least one converged trial"
    )];
    notes.extend(warnings(spec, &jobs, max_iters)?);
    let it = summary.table.column("iterations_q50").expect("iterations");
    type Group = (Vec<String>, Vec<(f64, f64)>);
    let mut groups: Vec<Group> = Vec::new();
    for row in &summary.table.rows {
        let key: Vec<String> = [0, 2, 3, 4, 5].iter().map(|&c| row[c].to_string()).collect();
        let point = (row[1].as_f64(), row[it].as_f64());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, pts)) => pts.push(point),
            None => groups.push((key, vec![point])),
        }
    }
    let mut series = Vec::new();
    for (key, pts) in groups {
        let usable: Vec<(f64, f64)> = pts.iter().copied().filter(|(_, y)| y.is_finite() && *y > 0.0).collect();
        let lx: Vec<f64> = usable.iter().map(|(x, _)| x.ln()).collect();
        let ly: Vec<f64> = usable.iter().map(|(_, y)| y.ln()).collect();
        let (slope, intercept) = linear_fit(&lx, &ly).map_or((None, None), |(s, i)| (Some(s), Some(i)));
        notes.push(format!(
            "n={} alpha={}: fitted exponent {} over {} dimensions",
            key[0],
            key[1],
            slope.map_or("n/a".to_owned(), |s| format!("{s:.3}")),
            usable.len()
        ));
        let mut row: Vec<Value> = key.iter().map(|k| Value::Text(k.clone())).collect();
        row.extend([usable.len().into(), slope.into(), intercept.into()]);
        fit.push(row);
        series.push((format!("n={} alpha={}", key[0], key[1]), usable));
    }

    let mut plots = Vec::new();
    if spec.plot {
        plots.push((
            "scaling.svg".to_owned(),
            crate::plot::line_plot("median iterations to threshold", "d", "iterations", &series, true, true),
        ));
    }
    Ok(Report {
        tables: vec![table, fit],
        summaries: vec![summary],
        notes,
        plots,
    })
}
