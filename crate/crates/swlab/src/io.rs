//! File formats.
//!
//! * Supports: CSV with header `x0,...,x{d-1}` and one point per row, or JSON
//!   `{"n": .., "d": .., "points": [[..], ..]}`; chosen by file extension.
//! * Weight vectors: CSV with a single `weight` column.
//! * Cost matrices: header-less CSV, one matrix row per line.
//! * Transport results: JSON `{"cost", "plan", "dual_f", "dual_g"}`.
//! * Configurations: JSON arrays of permutations.
//! * Cell reports: CSV `config_id,stable,energy_at_min,boundary_flag`.
//! * Trajectories: CSV `t,energy,w2_over_d,step,noise_level` plus a JSON
//!   sidecar with the configuration and terminal state.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swlab_core::cells::{CellStability, Configuration};
use swlab_core::energy::EnergyEstimate;
use swlab_core::exact_ot::{CostMatrix, KantorovichSolution, WeightVector};
use swlab_core::solvers::Trajectory;
use swlab_core::Support;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Ok(Format::Csv),
            Some(e) if e.eq_ignore_ascii_case("json") => Ok(Format::Json),
            _ => Err(Error::format(path, "expected a .csv or .json file")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SupportJson {
    n: usize,
    d: usize,
    points: Vec<Vec<f64>>,
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(std::io::BufReader::new(open(path)?)).map_err(|e| Error::json(path, e))
}

pub fn read_support(path: &Path) -> Result<Support> {
    match Format::from_path(path)? {
        Format::Json => {
            let s: SupportJson = read_json(path)?;
            if s.points.len() != s.n || s.points.iter().any(|p| p.len() != s.d) {
                return Err(Error::format(path, format!("points do not form a {} x {} array", s.n, s.d)));
            }
            Ok(Support::from_rows(&s.points)?)
        }
        Format::Csv => {
            let mut reader = csv::Reader::from_reader(open(path)?);
            let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
            for (c, h) in headers.iter().enumerate() {
                if h.trim() != format!("x{c}") {
                    return Err(Error::format(path, format!("column {c} should be named x{c}, found {h:?}")));
                }
            }
            let d = headers.len();
            let mut data = Vec::new();
            let mut n = 0;
            for record in reader.records() {
                let record = record.map_err(|e| Error::csv(path, e))?;
                for field in record.iter() {
                    data.push(parse_f64(path, field)?);
                }
                n += 1;
            }
            Ok(Support::new(n, d, data)?)
        }
    }
}

pub fn write_support(path: &Path, y: &Support) -> Result<()> {
    match Format::from_path(path)? {
        Format::Json => write_json(
            path,
            &SupportJson {
                n: y.n(),
                d: y.d(),
                points: y.rows().map(<[f64]>::to_vec).collect(),
            },
        ),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(create(path)?);
            w.write_record((0..y.d()).map(|c| format!("x{c}")))
                .map_err(|e| Error::csv(path, e))?;
            for row in y.rows() {
                w.write_record(row.iter().map(f64::to_string))
                    .map_err(|e| Error::csv(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

fn parse_f64(path: &Path, field: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::format(path, format!("not a number: {field:?}")))
}

#[derive(Serialize, Deserialize)]
struct EnergyJson {
    value: f64,
    std_error: f64,
    p_used: usize,
    seed: u64,
}

pub fn write_energy(path: &Path, e: &EnergyEstimate) -> Result<()> {
    write_json(
        path,
        &EnergyJson {
            value: e.value,
            std_error: e.std_error,
            p_used: e.p_used,
            seed: e.seed,
        },
    )
}

pub fn energy_to_json(e: &EnergyEstimate) -> serde_json::Value {
    serde_json::json!({
        "value": e.value,
        "std_error": e.std_error,
        "p_used": e.p_used,
        "seed": e.seed,
    })
}

pub fn read_weights(path: &Path) -> Result<WeightVector> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.len() != 1 || headers[0].trim() != "weight" {
        return Err(Error::format(path, "expected a single `weight` column"));
    }
    let mut w = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        w.push(parse_f64(path, &record[0])?);
    }
    Ok(WeightVector::new(w)?)
}

pub fn write_weights(path: &Path, w: &WeightVector) -> Result<()> {
    let mut out = csv::Writer::from_writer(create(path)?);
    out.write_record(["weight"]).map_err(|e| Error::csv(path, e))?;
    for x in w.as_slice() {
        out.write_record([x.to_string()]).map_err(|e| Error::csv(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_cost(path: &Path) -> Result<CostMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        rows.push(record.iter().map(|f| parse_f64(path, f)).collect::<Result<_>>()?);
    }
    Ok(CostMatrix::from_rows(&rows)?)
}

pub fn write_cost(path: &Path, c: &CostMatrix) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    for i in 0..c.rows() {
        out.write_record((0..c.cols()).map(|j| c.get(i, j).to_string()))
            .map_err(|e| Error::csv(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn transport_to_json(sol: &KantorovichSolution) -> serde_json::Value {
    let plan: Vec<&[f64]> = (0..sol.plan.rows()).map(|i| sol.plan.row(i)).collect();
    serde_json::json!({
        "cost": sol.cost,
        "plan": plan,
        "dual_f": sol.dual_f,
        "dual_g": sol.dual_g,
    })
}

pub fn write_transport(path: &Path, sol: &KantorovichSolution) -> Result<()> {
    write_json(path, &transport_to_json(sol))
}

pub fn configuration_to_json(m: &Configuration) -> serde_json::Value {
    serde_json::Value::from(m.perms().map(<[usize]>::to_vec).collect::<Vec<_>>())
}

pub fn read_configuration(path: &Path) -> Result<Configuration> {
    let perms: Vec<Vec<usize>> = read_json(path)?;
    Ok(Configuration::from_perms(&perms)?)
}

pub fn write_configuration(path: &Path, m: &Configuration) -> Result<()> {
    write_json(path, &configuration_to_json(m))
}

/// Cell report rows, `config_id` being the enumeration index.
pub fn write_cell_report<W: Write>(out: W, cells: &[(Configuration, CellStability)]) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["config_id", "stable", "energy_at_min", "boundary_flag"])?;
    for (id, (_, report)) in cells.iter().enumerate() {
        w.write_record([
            id.to_string(),
            report.stable.to_string(),
            report.energy.to_string(),
            report.boundary.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_csv<W: Write>(out: W, traj: &Trajectory) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "energy", "w2_over_d", "step", "noise_level"])?;
    for p in &traj.points {
        w.write_record([
            p.t.to_string(),
            p.energy.to_string(),
            p.w2_over_d.to_string(),
            p.step.to_string(),
            p.noise_level.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Terminal state and run configuration, written next to a trajectory CSV.
pub fn trajectory_sidecar(traj: &Trajectory, config: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "config": config,
        "iters": traj.iters,
        "converged": traj.converged,
        "boundary": traj.boundary,
        "max_norm": traj.max_norm,
        "first_hit": traj.first_hit,
        "final_w2_over_d": traj.final_w2_over_d(),
        "terminal": traj.terminal.rows().map(<[f64]>::to_vec).collect::<Vec<_>>(),
        "terminal_assignment": traj.terminal_assignment,
    })
}

/// Writes `<path>` (CSV) and `<path>.json` (sidecar).
pub fn write_trajectory(path: &Path, traj: &Trajectory, config: serde_json::Value) -> Result<PathBuf> {
    write_trajectory_csv(create(path)?, traj).map_err(|e| Error::csv(path, e))?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".json");
    let sidecar = PathBuf::from(sidecar);
    write_json(&sidecar, &trajectory_sidecar(traj, config))?;
    Ok(sidecar)
}

pub fn write_json_value(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_json(path, value)
}
