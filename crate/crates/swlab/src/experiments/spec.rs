use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Iterate paths of BCD or SGD runs in the plane.
    Trajectory,
    /// BCD convergence against the number of axes, one target per dimension.
    BcdPhase,
    /// BCD convergence probability, a fresh target per trial.
    CvProba,
    /// SGD error curves over step sizes, noise levels and batch sizes.
    SgdError,
    /// Sup-error of `E_p` over a grid of supports along a doubling ladder.
    UniformConvergence,
    /// Fluctuations of `E_p` around `E` at a fixed support.
    Clt,
    /// Fixed-point residual of BCD terminal points against `p`.
    FixedPoint,
    /// SGD iterations to convergence against the dimension.
    Scaling,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Trajectory => "trajectory",
            ExperimentKind::BcdPhase => "bcd-phase",
            ExperimentKind::CvProba => "cv-proba",
            ExperimentKind::SgdError => "sgd-error",
            ExperimentKind::UniformConvergence => "uniform-convergence",
            ExperimentKind::Clt => "clt",
            ExperimentKind::FixedPoint => "fixed-point",
            ExperimentKind::Scaling => "scaling",
        }
    }
}

/// Target point clouds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    /// Independent standard Gaussian entries.
    Gaussian,
    /// `z_k = (2k/n)(cos(2k pi/n), sin(2k pi/n))`, `k = 1..n`, in the plane.
    Spiral,
    /// The two points `(0, -1)` and `(0, 1)`.
    Sym2d,
}

/// Initial supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Start {
    /// Independent uniform entries on `[0, 1]`.
    Uniform,
    /// The target itself.
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Bcd,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    /// `alpha / (1 + t)^0.75`.
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// A parameter sweep. Grid lists left empty take per-experiment defaults;
/// every other optional field likewise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub d: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub noise: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batch: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    /// Consecutive-iterate stopping tolerance of BCD.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Convergence threshold on `W_2^2 / d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Dataset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Start>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<Solver>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    /// Fresh axes for each fixed-point map estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_psi: Option<usize>,
    /// Independent `E_p` draws per axis count (CLT).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resamples: Option<usize>,
    /// Slice values used for the variance oracle (CLT).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_samples: Option<usize>,
    /// `(u, v)` of the symmetric two-point support `(y, -y)`, `y = (u, v)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 2]>,
    /// Points per axis of the square grid over `[-2, 2]^2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    /// Recompute summaries from the written trial rows and compare.
    #[serde(default)]
    pub audit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub plot: bool,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            n: Vec::new(),
            d: Vec::new(),
            p: Vec::new(),
            alpha: Vec::new(),
            noise: Vec::new(),
            batch: Vec::new(),
            trials: None,
            max_iters: None,
            tol: None,
            threshold: None,
            base_seed: 0,
            dataset: None,
            start: None,
            solver: None,
            schedule: None,
            p_psi: None,
            resamples: None,
            oracle_samples: None,
            point: None,
            grid_points: None,
            record_every: None,
            audit: false,
            out: None,
            format: OutputFormat::Csv,
            plot: false,
        }
    }

    /// Loads a spec from `.json` or `.toml`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::json(path, e))?,
            Some("toml") => toml::from_str(&text).map_err(|source| Error::Toml {
                path: path.to_owned(),
                source,
            })?,
            _ => return Err(Error::format(path, "experiment specs are .json or .toml files")),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Spec(what.to_owned()));
        if self.trials == Some(0) {
            return bad("trials must be >= 1");
        }
        if self.n.contains(&0) || self.d.contains(&0) || self.p.contains(&0) || self.batch.contains(&0) {
            return bad("n, d, p and batch entries must be >= 1");
        }
        if self.alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return bad("step sizes must be positive");
        }
        if self.noise.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("noise levels must be >= 0");
        }
        if self.max_iters == Some(0) || self.record_every == Some(0) {
            return bad("max_iters and record_every must be >= 1");
        }
        if self.tol.is_some_and(|t| !(t > 0.0)) || self.threshold.is_some_and(|t| !(t > 0.0)) {
            return bad("tol and threshold must be positive");
        }
        if self.p_psi == Some(0) || self.resamples == Some(0) || self.oracle_samples == Some(0) {
            return bad("p_psi, resamples and oracle_samples must be >= 1");
        }
        if self.grid_points.is_some_and(|g| g < 2) {
            return bad("grid_points must be >= 2");
        }
        if self.point.is_some_and(|p| p.iter().any(|x| !x.is_finite())) {
            return bad("point must be finite");
        }
        Ok(())
    }

    pub(crate) fn trials_or(&self, default: usize) -> usize {
        self.trials.unwrap_or(default)
    }
}

pub(crate) fn list_or<T: Clone>(values: &[T], default: &[T]) -> Vec<T> {
    if values.is_empty() {
        default.to_vec()
    } else {
        values.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("s.toml");
        std::fs::write(
            &toml_path,
            "kind = \"bcd-phase\"\nn = [10]\nd = [10]\np = [30, 2000]\ntrials = 20\nbase_seed = 7\n",
        )
        .unwrap();
        let spec = ExperimentSpec::from_file(&toml_path).unwrap();
        assert_eq!(spec.kind, ExperimentKind::BcdPhase);
        assert_eq!(spec.p, vec![30, 2000]);
        assert_eq!(spec.trials, Some(20));

        let json_path = dir.path().join("s.json");
        std::fs::write(&json_path, serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(ExperimentSpec::from_file(&json_path).unwrap(), spec);
    }

    #[test]
    fn rejects_bad_specs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, r#"{"kind": "clt", "trials": 0}"#).unwrap();
        assert!(matches!(ExperimentSpec::from_file(&path), Err(Error::Spec(_))));
        std::fs::write(&path, r#"{"kind": "clt", "bogus": 1}"#).unwrap();
        assert!(ExperimentSpec::from_file(&path).is_err());
        std::fs::write(&path, r#"{"kind": "nope"}"#).unwrap();
        assert!(ExperimentSpec::from_file(&path).is_err());
    }
}
