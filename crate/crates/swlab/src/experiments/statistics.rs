//! Monte-Carlo behaviour of `E_p` in the symmetric planar case, where `E`
//! has a closed form.

use swlab_core::energy::{closed_form_e_sym2d, slice_values, sym2d_support, sym2d_target};
use swlab_core::geometry::sample_sphere;

use super::spec::list_or;
use super::{derive_seed, par_map, stream, trial_seed, ExperimentSpec, Report, Summary};
use crate::error::{Error, Result};
use crate::stats::{ks_normal, mean, median, variance};
use crate::table::{Table, Value};

/// Half-width of the square grid of the uniform-convergence sweep.
const GRID_RADIUS: f64 = 2.0;

fn grid(points: usize) -> Vec<(f64, f64)> {
    let coord = |i: usize| -GRID_RADIUS + 2.0 * GRID_RADIUS * i as f64 / (points - 1) as f64;
    (0..points)
        .flat_map(|i| (0..points).map(move |j| (coord(i), coord(j))))
        .collect()
}

/// `uniform-convergence`: along one ladder of nested axis sets per trial,
/// the sup over the grid of `|E_p - E|`.
pub(super) fn run_uniform(spec: &ExperimentSpec) -> Result<Report> {
    let mut ladder = list_or(&spec.p, &(4..=16).map(|k| 1usize << k).collect::<Vec<_>>());
    ladder.sort_unstable();
    ladder.dedup();
    let p_max = *ladder.last().expect("non-empty ladder");
    let trials = spec.trials_or(50);
    let points = grid(spec.grid_points.unwrap_or(5));
    let z = sym2d_target();
    let exact: Vec<f64> = points.iter().map(|&(u, v)| closed_form_e_sym2d(u, v)).collect();
    let supports = points
        .iter()
        .map(|&(u, v)| sym2d_support(u, v))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let trial_ids: Vec<usize> = (0..trials).collect();
    let results = par_map(&trial_ids, |&trial| -> Result<Vec<(f64, f64)>> {
        let dirs = sample_sphere(2, p_max, derive_seed(trial_seed(spec, trial), stream::AXES))?;
        let mut sums = vec![0.0; points.len()];
        let mut slices = Vec::with_capacity(points.len());
        for y in &supports {
            slices.push(slice_values(y, &z, &dirs)?);
        }
        let mut out = Vec::with_capacity(ladder.len());
        let mut done = 0;
        for &p in &ladder {
            for (sum, values) in sums.iter_mut().zip(&slices) {
                *sum += values[done..p].iter().sum::<f64>();
            }
            done = p;
            let mut sup: f64 = 0.0;
            let mut at_target: f64 = 0.0;
            for (sum, &e) in sums.iter().zip(&exact) {
                let err = (sum / p as f64 - e).abs();
                sup = sup.max(err);
                if e == 0.0 {
                    at_target = at_target.max(err);
                }
            }
            out.push((sup, at_target));
        }
        Ok(out)
    });

    let has_target = exact.contains(&0.0);
    let mut table = Table::new(
        "trials",
        &["p", "trial", "seed", "grid_points", "sup_error", "sqrt_p_sup_error", "target_error"],
    );
    for (trial, res) in results.into_iter().enumerate() {
        for (&p, (sup, at_target)) in ladder.iter().zip(res?) {
            table.push(vec![
                p.into(),
                trial.into(),
                trial_seed(spec, trial).into(),
                points.len().into(),
                sup.into(),
                ((p as f64).sqrt() * sup).into(),
                if has_target { at_target.into() } else { Value::Missing },
            ]);
        }
    }
    let summary = Summary::of(&table, &["p"], &["sup_error", "sqrt_p_sup_error", "target_error"]);
    let mut notes = vec![format!(
        "uniform-convergence: {} supports (y, -y) on a grid over [-{GRID_RADIUS}, {GRID_RADIUS}]^2 against the target (0, -1), (0, 1); each trial is one nested ladder of up to {p_max} axes",
        points.len()
    )];
    let q50 = summary.table.column("sqrt_p_sup_error_q50").expect("column");
    let sup50 = summary.table.column("sup_error_q50").expect("column");
    for row in &summary.table.rows {
        notes.push(format!(
            "p={}: median sup error {}, median sqrt(p) sup error {}",
            row[0], row[sup50], row[q50]
        ));
    }
    let mut plots = Vec::new();
    if spec.plot {
        let series = vec![(
            "median sup error".to_owned(),
            summary.table.rows.iter().map(|r| (r[0].as_f64(), r[sup50].as_f64())).collect(),
        )];
        plots.push((
            "uniform.svg".to_owned(),
            crate::plot::line_plot("sup |E_p - E|", "p", "error", &series, true, true),
        ));
    }
    Ok(Report {
        tables: vec![table],
        summaries: vec![summary],
        notes,
        plots,
    })
}

/// `clt`: `sqrt(p) (E_p - E)` over independent axis sets at a fixed
/// support, its variance against a large-sample variance of single slice
/// values, and a normality test.
pub(super) fn run_clt(spec: &ExperimentSpec) -> Result<Report> {
    let ps = list_or(&spec.p, &[512]);
    let resamples = spec.resamples.or(spec.trials).unwrap_or(2000);
    let oracle_samples = spec.oracle_samples.unwrap_or(1_000_000);
    let [u, v] = spec.point.unwrap_or([1.0, 1.0]);
    let y = sym2d_support(u, v)?;
    let z = sym2d_target();
    let exact = closed_form_e_sym2d(u, v);
    if ps.iter().any(|&p| p < 2) {
        return Err(Error::Spec("clt needs p >= 2".into()));
    }

    let oracle_dirs = sample_sphere(2, oracle_samples, derive_seed(spec.base_seed, stream::ORACLE))?;
    let oracle_var = variance(&slice_values(&y, &z, &oracle_dirs)?);

    let jobs: Vec<(usize, usize)> = ps
        .iter()
        .flat_map(|&p| (0..resamples).map(move |r| (p, r)))
        .collect();
    let values = par_map(&jobs, |&(p, r)| -> Result<f64> {
        let dirs = sample_sphere(2, p, derive_seed(trial_seed(spec, r), stream::AXES))?;
        Ok(mean(&slice_values(&y, &z, &dirs)?))
    });

    let mut table = Table::new("trials", &["p", "u", "v", "resample", "seed", "energy_p", "sqrt_p_dev"]);
    for (&(p, r), e) in jobs.iter().zip(values) {
        let e = e?;
        table.push(vec![
            p.into(),
            u.into(),
            v.into(),
            r.into(),
            trial_seed(spec, r).into(),
            e.into(),
            ((p as f64).sqrt() * (e - exact)).into(),
        ]);
    }

    let mut stats = Table::new(
        "stats",
        &[
            "p", "u", "v", "resamples", "exact", "mean_dev", "sample_var", "oracle_var", "oracle_samples", "rel_err",
            "ks_stat", "ks_pvalue",
        ],
    );
    let mut notes = vec![format!(
        "clt: support (y, -y) with y = ({u}, {v}); E = {exact}; oracle variance from {oracle_samples} slice values"
    )];
    for &p in &ps {
        let devs = table.filter("p", p as f64).floats("sqrt_p_dev");
        let sample_var = variance(&devs);
        let rel = (sample_var - oracle_var).abs() / oracle_var;
        let (ks, pvalue) = ks_normal(&devs);
        notes.push(format!(
            "p={p}: sample variance {sample_var:.6e}, oracle {oracle_var:.6e}, relative error {rel:.4}, KS p-value {pvalue:.4}, median deviation {:.4e}",
            median(&devs)
        ));
        stats.push(vec![
            p.into(),
            u.into(),
            v.into(),
            resamples.into(),
            exact.into(),
            mean(&devs).into(),
            sample_var.into(),
            oracle_var.into(),
            oracle_samples.into(),
            rel.into(),
            ks.into(),
            pvalue.into(),
        ]);
    }
    let summary = Summary::of(&table, &["p"], &["sqrt_p_dev"]);
    Ok(Report {
        tables: vec![table, stats],
        summaries: vec![summary],
        notes,
        plots: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_the_square_and_the_target() {
        let g = grid(5);
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], (-2.0, -2.0));
        assert_eq!(g[24], (2.0, 2.0));
        assert!(g.contains(&(0.0, 1.0)) && g.contains(&(0.0, -1.0)));
        assert_eq!(closed_form_e_sym2d(0.0, 1.0), 0.0);
    }
}
