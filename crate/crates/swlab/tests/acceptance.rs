//! End-to-end acceptance checks. Each check prints one `PASS`/`FAIL` line
//! with the measured quantities and its wall time; the process fails if any
//! check fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use swlab::experiments::{self, ExperimentKind, ExperimentSpec};
use swlab_core::cells::{brute_force_energy, configuration_of, is_stable_cell};
use swlab_core::energy::{
    closed_form_e_sym2d, energy_mc, energy_p, grad_energy_p, lipschitz_bound, min_projected_gap, sym2d_support,
    sym2d_target,
};
use swlab_core::exact_ot::{kantorovich_exact, stability_gap, CostMatrix, WeightVector};
use swlab_core::solvers::{bcd_run, BcdConfig};
use swlab_core::{sample_sphere, w_theta, Support};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Support {
    Support::new(n, d, (0..n * d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> WeightVector {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    WeightVector::new(w.iter().map(|x| x / s).collect()).unwrap()
}

fn run_spec(spec: &ExperimentSpec) -> experiments::Report {
    experiments::run(spec).expect("experiment runs")
}

fn summary_value(report: &experiments::Report, column: &str, key: &str, value: f64) -> f64 {
    let summary = report.table("trials-summary").expect("summary table");
    summary.filter(key, value).floats(column)[0]
}

fn oracle_agreement() -> Outcome {
    let z = sym2d_target();
    let coords = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for (i, &u) in coords.iter().enumerate() {
        for (j, &v) in coords.iter().enumerate() {
            let y = sym2d_support(u, v).unwrap();
            let est = energy_mc(&y, &z, 200_000, (i * 5 + j) as u64).unwrap();
            let err = (est.value - closed_form_e_sym2d(u, v)).abs();
            let z_score = if est.std_error > 0.0 { err / est.std_error } else if err == 0.0 { 0.0 } else { f64::INFINITY };
            worst = worst.max(z_score);
            failures += usize::from(z_score > 3.0);
        }
    }
    outcome(failures == 0, format!("25 grid points, worst |error|/std_error {worst:.2}, {failures} above 3"))
}

fn min_of_quadratics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let d = 2 + i % 2;
        let y = gaussian(&mut rng, 3, d, 1.0);
        let z = gaussian(&mut rng, 3, d, 1.0);
        let dirs = sample_sphere(d, 3, rng.random()).unwrap();
        let direct = energy_p(&y, &z, &dirs).unwrap();
        let brute = brute_force_energy(&y, &z, &dirs).unwrap();
        worst = worst.max((direct - brute).abs());
    }
    outcome(worst <= 1e-12, format!("50 instances, max |energy_p - brute force| {worst:.2e}"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d, p, h) = (4, 3, 10, 1e-6);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 50 {
        let y = gaussian(&mut rng, n, d, 1.0);
        let z = gaussian(&mut rng, n, d, 1.0);
        let dirs = sample_sphere(d, p, rng.random()).unwrap();
        if min_projected_gap(&y, &dirs).unwrap() <= 1e-3 {
            continue;
        }
        checked += 1;
        let g = grad_energy_p(&y, &z, &dirs).unwrap();
        let mut diff2 = 0.0;
        for idx in 0..n * d {
            let mut plus = y.clone();
            plus.as_mut_slice()[idx] += h;
            let mut minus = y.clone();
            minus.as_mut_slice()[idx] -= h;
            let fd = (energy_p(&plus, &z, &dirs).unwrap() - energy_p(&minus, &z, &dirs).unwrap()) / (2.0 * h);
            diff2 += (fd - g.as_slice()[idx]).powi(2);
        }
        let rel = diff2.sqrt() / g.frobenius_sq().sqrt().max(1e-300);
        worst = worst.max(rel);
    }
    outcome(worst <= 1e-5, format!("50 cell-interior points, max relative error {worst:.2e}"))
}

fn stability_lemma() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_inf, mut worst_fro, mut worst_gap) = (f64::INFINITY, f64::INFINITY, 0.0f64);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=5);
        let cost = |rng: &mut ChaCha8Rng| {
            CostMatrix::new(n, m, (0..n * m).map(|_| rng.random_range(0.0..10.0)).collect()).unwrap()
        };
        let (c, c2) = (cost(&mut rng), cost(&mut rng));
        let (a, b, a2, b2) = (weights(&mut rng, n), weights(&mut rng, m), weights(&mut rng, n), weights(&mut rng, m));
        for (x, y, cc) in [(&a, &b, &c), (&a2, &b2, &c2)] {
            let sol = kantorovich_exact(x, y, cc).unwrap();
            worst_gap = worst_gap.max(sol.duality_gap(x, y).abs()).max(sol.dual_violation(cc));
        }
        let gap = stability_gap(&a, &b, &c, &a2, &b2, &c2).unwrap();
        worst_inf = worst_inf.min(gap.rhs_inf - gap.lhs);
        worst_fro = worst_fro.min(gap.rhs_fro - gap.lhs);
    }
    outcome(
        worst_inf >= -1e-9 && worst_fro >= -1e-9 && worst_gap <= 1e-8,
        format!(
            "10^4 instances, min slack {worst_inf:.3e} (max-norm form), {worst_fro:.3e} (Frobenius form), max dual gap {worst_gap:.2e}"
        ),
    )
}

fn semi_concavity_and_lipschitz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_concave = f64::INFINITY;
    let mut worst_lip = f64::INFINITY;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=6);
        let d = rng.random_range(1..=4);
        let z = gaussian(&mut rng, n, d, 1.0);
        let dirs = sample_sphere(d, rng.random_range(1..=8), rng.random()).unwrap();
        let g = |y: &Support| energy_p(y, &z, &dirs).unwrap() - y.frobenius_sq() / n as f64;
        let (y1, y2) = (gaussian(&mut rng, n, d, 2.0), gaussian(&mut rng, n, d, 2.0));
        let lambda: f64 = rng.random();
        let mid = y2.lerp(&y1, lambda).unwrap();
        worst_concave = worst_concave.min(g(&mid) - lambda * g(&y1) - (1.0 - lambda) * g(&y2));

        let x = gaussian(&mut rng, n, d, 2.0);
        let r: f64 = rng.random_range(0.01..3.0);
        let in_ball = |rng: &mut ChaCha8Rng| {
            let mut y = x.clone();
            for k in 0..n {
                let step: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = step.iter().map(|s| s * s).sum::<f64>().sqrt().max(1e-300);
                let radius = r * rng.random::<f64>();
                for (v, s) in y.row_mut(k).iter_mut().zip(&step) {
                    *v += radius * s / norm;
                }
            }
            y
        };
        let (ya, yb) = (in_ball(&mut rng), in_ball(&mut rng));
        let theta = dirs.axis(0);
        let kappa = lipschitz_bound(&x, &z, r).unwrap();
        let lhs = (w_theta(&ya, &z, theta).unwrap() - w_theta(&yb, &z, theta).unwrap()).abs();
        worst_lip = worst_lip.min(kappa * ya.dist_inf2(&yb).unwrap() - lhs);
    }
    outcome(
        worst_concave >= -1e-9 && worst_lip >= -1e-9,
        format!("10^4 samples each, min concavity slack {worst_concave:.3e}, min Lipschitz slack {worst_lip:.3e}"),
    )
}

fn bcd_monotone_and_stable() -> Outcome {
    let (mut increases, mut unstable, mut checked) = (0, 0, 0);
    let mut worst_rise: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let z = gaussian(&mut rng, 5, 3, 1.0);
        let y0 = Support::new(5, 3, (0..15).map(|_| rng.random::<f64>()).collect()).unwrap();
        let dirs = sample_sphere(3, 64, rng.random()).unwrap();
        let traj = bcd_run(&z, &dirs, &y0, &BcdConfig::default()).unwrap();
        for w in traj.points.windows(2) {
            let rise = w[1].energy - w[0].energy;
            if rise > 1e-12 * w[0].energy.max(1.0) {
                increases += 1;
            }
            worst_rise = worst_rise.max(rise);
        }
        if traj.converged && !traj.boundary {
            checked += 1;
            let m = configuration_of(&traj.terminal, &z, &dirs).unwrap();
            if !is_stable_cell(&m, &z, &dirs).unwrap().stable {
                unstable += 1;
            }
        }
    }
    outcome(
        increases == 0 && unstable == 0,
        format!(
            "100 runs, {increases} energy increases (largest {worst_rise:.2e}), {checked} converged interior terminals, {unstable} unstable"
        ),
    )
}

fn bcd_phase() -> Outcome {
    let mut spec = ExperimentSpec::new(ExperimentKind::BcdPhase);
    spec.n = vec![10];
    spec.d = vec![10];
    spec.p = vec![30, 2000];
    spec.trials = Some(20);
    let report = run_spec(&spec);
    let low = summary_value(&report, "hit_mean", "p", 30.0);
    let high = summary_value(&report, "hit_mean", "p", 2000.0);
    outcome(
        low <= 0.2 && high >= 0.8,
        format!("convergence fraction {low:.2} at p=30, {high:.2} at p=2000"),
    )
}

fn sgd_convergence() -> Outcome {
    let mut spec = ExperimentSpec::new(ExperimentKind::SgdError);
    spec.n = vec![10];
    spec.d = vec![5];
    spec.alpha = vec![5.0];
    spec.noise = vec![0.0];
    spec.trials = Some(10);
    spec.max_iters = Some(100_000);
    spec.threshold = Some(1e-3);
    let report = run_spec(&spec);
    let trials = report.table("trials").unwrap();
    let hits = trials.floats("hit").iter().filter(|&&h| h == 1.0).count();
    let first = trials.floats("first_hit");
    let slowest = first.iter().copied().filter(|x| x.is_finite()).fold(0.0, f64::max);
    outcome(hits >= 8, format!("{hits}/10 trials reach W2^2/d < 1e-3, slowest by iteration {slowest}"))
}

fn noise_plateau() -> Outcome {
    let mut spec = ExperimentSpec::new(ExperimentKind::SgdError);
    spec.n = vec![10];
    spec.d = vec![5];
    spec.alpha = vec![5.0];
    spec.noise = vec![1e-4, 1e-3, 1e-2];
    spec.trials = Some(5);
    let report = run_spec(&spec);
    let plateaus: Vec<f64> = spec
        .noise
        .iter()
        .map(|&a| summary_value(&report, "plateau_q50", "noise", a))
        .collect();
    let increasing = plateaus.windows(2).all(|w| w[0] < w[1]);
    outcome(
        increasing,
        format!("median plateaus {:.3e}, {:.3e}, {:.3e}", plateaus[0], plateaus[1], plateaus[2]),
    )
}

fn fixed_point_decay() -> Outcome {
    let mut spec = ExperimentSpec::new(ExperimentKind::FixedPoint);
    spec.n = vec![5];
    spec.d = vec![3];
    spec.p = vec![64, 4096];
    spec.trials = Some(10);
    spec.p_psi = Some(100_000);
    let report = run_spec(&spec);
    let small = summary_value(&report, "residual_q50", "p", 64.0);
    let large = summary_value(&report, "residual_q50", "p", 4096.0);
    let cv_small = summary_value(&report, "residual_cv_q50", "p", 64.0);
    let cv_large = summary_value(&report, "residual_cv_q50", "p", 4096.0);
    let trials = report.table("trials").unwrap();
    let at_target = |p: f64| trials.filter("p", p).floats("at_target").iter().filter(|&&x| x == 1.0).count();
    outcome(
        large < 0.5 * small,
        format!(
            "median residual {small:.4e} at p=64, {large:.4e} at p=4096 (ratio {:.3}); {} and {} of 10 runs end at the target; control-variate medians {cv_small:.2e} and {cv_large:.2e}",
            large / small,
            at_target(64.0),
            at_target(4096.0)
        ),
    )
}

fn clt() -> Outcome {
    let mut spec = ExperimentSpec::new(ExperimentKind::Clt);
    spec.p = vec![512];
    spec.resamples = Some(2000);
    spec.oracle_samples = Some(1_000_000);
    spec.point = Some([1.0, 1.0]);
    let report = run_spec(&spec);
    let stats = report.table("stats").unwrap();
    let rel = stats.floats("rel_err")[0];
    let pvalue = stats.floats("ks_pvalue")[0];
    outcome(
        rel <= 0.15 && pvalue >= 0.01,
        format!("variance relative error {rel:.4}, KS p-value {pvalue:.4}"),
    )
}

fn scaling() -> Outcome {
    let mut spec = ExperimentSpec::new(ExperimentKind::Scaling);
    spec.n = vec![10];
    spec.d = vec![4, 8, 16];
    spec.trials = Some(5);
    let report = run_spec(&spec);
    let fit = report.table("fit").unwrap();
    let slope = fit.floats("slope")[0];
    let medians: Vec<f64> = [4.0, 8.0, 16.0]
        .iter()
        .map(|&d| summary_value(&report, "iterations_q50", "d", d))
        .collect();
    outcome(
        (0.8..=1.8).contains(&slope),
        format!(
            "fitted exponent {slope:.3} from median iterations {:?} at d = 4, 8, 16",
            medians
        ),
    )
}

/// Runs `swlab` with `args --out <out>` and returns what it wrote: every
/// CSV file when `out` is a directory, otherwise the single output file.
fn cli_outputs(args: &[&str], out: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let status = Command::new(env!("CARGO_BIN_EXE_swlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("SWLAB_THREADS", threads)
        .output()
        .expect("swlab starts");
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
    if !out.is_dir() {
        return vec![("output".to_owned(), std::fs::read(out).unwrap())];
    }
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    // Inputs for the single-run commands.
    let z = sample_target(root);
    let cost = root.join("cost.csv");
    std::fs::write(&cost, "0,1,2\n2,0,1\n1,2,0.5\n").unwrap();

    let z = z.to_str().unwrap().to_owned();
    let cost = cost.to_str().unwrap().to_owned();
    let commands: Vec<Vec<&str>> = vec![
        vec!["trajectory", "--seed", "3", "--max-iters", "200", "--trials", "2"],
        vec!["trajectory", "--solver", "bcd", "--dataset", "sym2d", "--p", "3", "--seed", "3", "--trials", "3"],
        vec!["bcd-phase", "--n", "5", "--d", "3", "--p", "8,64", "--trials", "4", "--seed", "9"],
        vec!["cv-proba", "--n", "5", "--d", "3", "--p", "8,64", "--trials", "4", "--seed", "9"],
        vec!["sgd-error", "--n", "5", "--d", "3", "--noise", "0,0.01", "--trials", "3", "--max-iters", "2000", "--seed", "1"],
        vec!["uniform-convergence", "--p", "16,64,256", "--trials", "4", "--seed", "2"],
        vec!["clt", "--p", "64", "--resamples", "200", "--oracle-samples", "10000", "--seed", "2"],
        vec!["fixed-point", "--p", "32,128", "--trials", "3", "--p-psi", "2000", "--seed", "4"],
        vec!["scaling", "--d", "2,4", "--trials", "3", "--threshold", "1e-3", "--max-iters", "20000", "--seed", "5"],
        vec!["bcd", "--z", &z, "--p", "16", "--seed", "7"],
        vec!["sgd", "--z", &z, "--alpha", "1", "--noise", "0.01", "--max-iters", "300", "--seed", "7"],
        vec!["cells", "--z", &z, "--p", "2", "--seed", "7"],
        vec!["energy", "--y", &z, "--z", &z, "--p", "100", "--seed", "7"],
        vec!["kantorovich", "--cost", &cost],
    ];
    let mut mismatched = Vec::new();
    for (i, args) in commands.iter().enumerate() {
        let name = |run: usize| {
            match args[0] {
                "bcd" | "sgd" | "cells" => root.join(format!("cmd{i}_{run}.csv")),
                "energy" | "kantorovich" => root.join(format!("cmd{i}_{run}.json")),
                _ => root.join(format!("cmd{i}_{run}")),
            }
        };
        let first = cli_outputs(args, &name(0), "1");
        let second = cli_outputs(args, &name(1), "3");
        if first.is_empty() || first != second {
            mismatched.push(args[0]);
        }
    }
    outcome(
        mismatched.is_empty(),
        format!(
            "{} commands run twice (1 and 3 worker threads); differing outputs: {:?}",
            commands.len(),
            mismatched
        ),
    )
}

fn sample_target(root: &Path) -> std::path::PathBuf {
    let z = experiments::make_target(experiments::Dataset::Gaussian, 4, 2, 11).unwrap();
    let path = root.join("z.csv");
    swlab::io::write_support(&path, &z).unwrap();
    path
}

fn main() {
    type Check = (&'static str, fn() -> Outcome, u64);
    let checks: [Check; 13] = [
        ("2D oracle agreement", oracle_agreement, 30),
        ("min-of-quadratics exactness", min_of_quadratics, 5),
        ("gradient correctness", gradient_check, 5),
        ("transport cost stability", stability_lemma, 60),
        ("semi-concavity and Lipschitz bound", semi_concavity_and_lipschitz, 30),
        ("BCD monotone with stable terminals", bcd_monotone_and_stable, 60),
        ("BCD phase transition", bcd_phase, 600),
        ("SGD convergence", sgd_convergence, 600),
        ("noise plateau ordering", noise_plateau, 600),
        ("fixed-point residual decay", fixed_point_decay, 600),
        ("CLT marginal", clt, 300),
        ("scaling trend", scaling, 900),
        ("determinism", determinism, 600),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let pass = result.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {}: {name} — {} [{:.1} s of {budget} s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
