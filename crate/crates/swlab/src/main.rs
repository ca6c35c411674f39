use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;
use swlab::experiments::{
    self, Dataset, ExperimentKind, ExperimentSpec, OutputFormat, Schedule, Solver, Start,
};
use swlab::io;
use swlab_core::cells::enumerate_cells;
use swlab_core::energy::{energy_mc, energy_p, EnergyEstimate};
use swlab_core::exact_ot::{assignment_w2, kantorovich_exact, CostMatrix, WeightVector};
use swlab_core::solvers::{bcd_run, sgd_run, BcdConfig, DirectionSource, SgdConfig, StepSchedule};
use swlab_core::{sample_sphere, DirectionSet, Support};

/// Sliced-Wasserstein energies, their critical points and the solvers that
/// find them.
#[derive(Debug, Parser)]
#[command(name = "swlab", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Iterate paths of BCD or SGD on a planar target.
    Trajectory(ExperimentArgs),
    /// BCD convergence against the number of axes, one target per dimension.
    BcdPhase(ExperimentArgs),
    /// BCD convergence probability with a fresh target per trial.
    CvProba(ExperimentArgs),
    /// SGD error curves over step sizes, noise levels and batch sizes.
    SgdError(ExperimentArgs),
    /// Uniform convergence of E_p over a grid of planar supports.
    UniformConvergence(ExperimentArgs),
    /// Fluctuations of E_p around E at a fixed planar support.
    Clt(ExperimentArgs),
    /// Fixed-point residual of BCD terminal points.
    FixedPoint(ExperimentArgs),
    /// SGD iterations to convergence against the dimension.
    Scaling(ExperimentArgs),
    /// Run the experiment described by a spec file.
    Run {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// E_p of a support against a target.
    Energy(EnergyArgs),
    /// Exact W_2^2 between two uniform clouds and the optimal assignment.
    W2 {
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        z: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact optimal transport between weighted discrete measures.
    Kantorovich {
        /// Cost matrix, header-less CSV.
        #[arg(long)]
        cost: PathBuf,
        /// Source weights (uniform when omitted).
        #[arg(long)]
        a: Option<PathBuf>,
        /// Target weights (uniform when omitted).
        #[arg(long)]
        b: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate the cells of E_p and their stability.
    Cells {
        #[arg(long)]
        z: PathBuf,
        #[command(flatten)]
        axes: AxesArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One block-coordinate descent run.
    Bcd {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// One stochastic gradient descent run.
    Sgd {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, value_enum, default_value = "constant")]
        schedule: Schedule,
        /// Stop once W_2^2/d drops below this value.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

/// Flags shared by the experiment commands. Explicit flags override the
/// values of `--spec`.
#[derive(Debug, Args, Default)]
struct ExperimentArgs {
    /// Spec file (.json or .toml).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    d: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    p: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    noise: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    batch: Vec<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    dataset: Option<Dataset>,
    #[arg(long, value_enum)]
    start: Option<Start>,
    #[arg(long, value_enum)]
    solver: Option<Solver>,
    #[arg(long, value_enum)]
    schedule: Option<Schedule>,
    #[arg(long)]
    p_psi: Option<usize>,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    oracle_samples: Option<usize>,
    /// `u,v` of the planar support (y, -y).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    point: Vec<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Output directory (default `results/<experiment>`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
    /// Recompute the summaries from the written trial rows.
    #[arg(long)]
    audit: bool,
}

impl ExperimentArgs {
    fn into_spec(self, kind: ExperimentKind) -> Result<ExperimentSpec> {
        let mut spec = match &self.spec {
            Some(path) => {
                let spec = ExperimentSpec::from_file(path)?;
                if spec.kind != kind {
                    bail!("{} describes a {} experiment, not {}", path.display(), spec.kind.name(), kind.name());
                }
                spec
            }
            None => ExperimentSpec::new(kind),
        };
        let lists = [
            (&mut spec.n, self.n),
            (&mut spec.d, self.d),
            (&mut spec.p, self.p),
            (&mut spec.batch, self.batch),
        ];
        for (slot, value) in lists {
            if !value.is_empty() {
                *slot = value;
            }
        }
        if !self.alpha.is_empty() {
            spec.alpha = self.alpha;
        }
        if !self.noise.is_empty() {
            spec.noise = self.noise;
        }
        if let [u, v] = self.point[..] {
            spec.point = Some([u, v]);
        }
        macro_rules! take {
            ($($field:ident),*) => {$(
                if self.$field.is_some() {
                    spec.$field = self.$field;
                }
            )*};
        }
        take!(
            trials,
            max_iters,
            tol,
            threshold,
            dataset,
            start,
            solver,
            schedule,
            p_psi,
            resamples,
            oracle_samples,
            grid_points,
            record_every,
            out
        );
        if let Some(seed) = self.seed {
            spec.base_seed = seed;
        }
        if let Some(format) = self.format {
            spec.format = format;
        }
        spec.plot |= self.plot;
        spec.audit |= self.audit;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
struct AxesArgs {
    /// Axes as a support file with one unit row per axis.
    #[arg(long, conflicts_with = "p")]
    axes: Option<PathBuf>,
    /// Number of uniform axes to draw.
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl AxesArgs {
    fn load(&self, d: usize) -> Result<Option<DirectionSet>> {
        Ok(match (&self.axes, self.p) {
            (Some(path), _) => {
                let rows = io::read_support(path)?;
                Some(DirectionSet::from_axes(rows.d(), rows.into_vec()).with_context(|| path.display().to_string())?)
            }
            (None, Some(p)) => Some(sample_sphere(d, p, self.seed)?),
            (None, None) => None,
        })
    }
}

#[derive(Debug, Args)]
struct EnergyArgs {
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    z: PathBuf,
    #[command(flatten)]
    axes: AxesArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    z: PathBuf,
    /// Starting support (uniform on [0, 1] from the seed when omitted).
    #[arg(long)]
    y0: Option<PathBuf>,
    #[command(flatten)]
    axes: AxesArgs,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// Trajectory CSV; a `.json` sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<(Support, Support, Option<DirectionSet>)> {
        let z = io::read_support(&self.z)?;
        let y0 = match &self.y0 {
            Some(path) => io::read_support(path)?,
            None => experiments::uniform_start(z.n(), z.d(), self.axes.seed.wrapping_add(1))?,
        };
        let dirs = self.axes.load(z.d())?;
        Ok((z, y0, dirs))
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run_experiment(spec: ExperimentSpec) -> Result<()> {
    let out = spec
        .out
        .clone()
        .unwrap_or_else(|| Path::new("results").join(spec.kind.name()));
    info!("running {} into {}", spec.kind.name(), out.display());
    let report = experiments::run(&spec)?;
    let written = experiments::write_report(&spec, &report, &out)?;
    for note in &report.notes {
        println!("{note}");
    }
    for path in written {
        info!("wrote {}", path.display());
    }
    if spec.audit {
        println!("audit: summaries match the trial rows");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let kind_args = |kind: ExperimentKind, args: ExperimentArgs| run_experiment(args.into_spec(kind)?);
    match cli.command {
        Command::Trajectory(a) => kind_args(ExperimentKind::Trajectory, a),
        Command::BcdPhase(a) => kind_args(ExperimentKind::BcdPhase, a),
        Command::CvProba(a) => kind_args(ExperimentKind::CvProba, a),
        Command::SgdError(a) => kind_args(ExperimentKind::SgdError, a),
        Command::UniformConvergence(a) => kind_args(ExperimentKind::UniformConvergence, a),
        Command::Clt(a) => kind_args(ExperimentKind::Clt, a),
        Command::FixedPoint(a) => kind_args(ExperimentKind::FixedPoint, a),
        Command::Scaling(a) => kind_args(ExperimentKind::Scaling, a),
        Command::Run { spec, out } => {
            let mut spec = ExperimentSpec::from_file(&spec)?;
            if out.is_some() {
                spec.out = out;
            }
            run_experiment(spec)
        }
        Command::Energy(args) => {
            let y = io::read_support(&args.y)?;
            let z = io::read_support(&args.z)?;
            let estimate = match args.axes.load(z.d())? {
                Some(dirs) if args.axes.axes.is_some() => EnergyEstimate {
                    value: energy_p(&y, &z, &dirs)?,
                    std_error: f64::NAN,
                    p_used: dirs.p(),
                    seed: args.axes.seed,
                },
                Some(dirs) => energy_mc(&y, &z, dirs.p(), args.axes.seed)?,
                None => bail!("give --p or --axes"),
            };
            match &args.out {
                Some(path) => io::write_energy(path, &estimate)?,
                None => print_json(&io::energy_to_json(&estimate))?,
            }
            Ok(())
        }
        Command::W2 { y, z, out } => {
            let (y, z) = (io::read_support(&y)?, io::read_support(&z)?);
            let (cost, perm) = assignment_w2(&y, &z)?;
            let value = json!({ "w2": cost, "w2_over_d": cost / y.d() as f64, "assignment": perm });
            match out {
                Some(path) => io::write_json_value(&path, &value)?,
                None => print_json(&value)?,
            }
            Ok(())
        }
        Command::Kantorovich { cost, a, b, out } => {
            let c: CostMatrix = io::read_cost(&cost)?;
            let a = match a {
                Some(path) => io::read_weights(&path)?,
                None => WeightVector::uniform(c.rows())?,
            };
            let b = match b {
                Some(path) => io::read_weights(&path)?,
                None => WeightVector::uniform(c.cols())?,
            };
            let solution = kantorovich_exact(&a, &b, &c)?;
            match out {
                Some(path) => io::write_transport(&path, &solution)?,
                None => print_json(&io::transport_to_json(&solution))?,
            }
            Ok(())
        }
        Command::Cells { z, axes, out } => {
            let z = io::read_support(&z)?;
            let Some(dirs) = axes.load(z.d())? else {
                bail!("give --p or --axes");
            };
            let cells = enumerate_cells(&z, &dirs)?;
            match out {
                Some(path) => io::write_cell_report(io::create(&path)?, &cells)
                    .with_context(|| path.display().to_string())?,
                None => io::write_cell_report(std::io::stdout().lock(), &cells)?,
            }
            Ok(())
        }
        Command::Bcd { run, tol } => {
            let (z, y0, dirs) = run.load()?;
            let Some(dirs) = dirs else {
                bail!("bcd needs --p or --axes");
            };
            let cfg = BcdConfig {
                max_iters: run.max_iters,
                tol,
                record_every: run.record_every,
            };
            let traj = bcd_run(&z, &dirs, &y0, &cfg)?;
            let config = json!({ "solver": "bcd", "p": dirs.p(), "seed": run.axes.seed, "tol": tol, "max_iters": run.max_iters });
            finish_run(&run, &traj, config)
        }
        Command::Sgd {
            run,
            alpha,
            noise,
            batch,
            schedule,
            threshold,
        } => {
            let (z, y0, dirs) = run.load()?;
            let cfg = SgdConfig {
                schedule: match schedule {
                    Schedule::Constant => StepSchedule::Constant(alpha),
                    Schedule::Decreasing => StepSchedule::decreasing(alpha),
                },
                noise,
                batch,
                directions: dirs.map_or(DirectionSource::Sphere, DirectionSource::Fixed),
                max_iters: run.max_iters,
                record_every: run.record_every,
                seed: run.axes.seed,
                target_w2: threshold,
                ..SgdConfig::default()
            };
            for w in cfg.warnings(z.n()) {
                warn!("{w}");
            }
            let traj = sgd_run(&z, &cfg, &y0)?;
            let config = json!({
                "solver": "sgd", "alpha": alpha, "noise": noise, "batch": batch,
                "p": run.axes.p, "seed": run.axes.seed, "max_iters": run.max_iters,
            });
            finish_run(&run, &traj, config)
        }
    }
}

fn finish_run(run: &RunArgs, traj: &swlab_core::solvers::Trajectory, config: serde_json::Value) -> Result<()> {
    match &run.out {
        Some(path) => {
            io::write_trajectory(path, traj, config)?;
        }
        None => io::write_trajectory_csv(std::io::stdout().lock(), traj)?,
    }
    println!(
        "iters {} converged {} final W2^2/d {:e}",
        traj.iters,
        traj.converged,
        traj.final_w2_over_d()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    experiments::init_thread_pool();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
