//! Argument definitions. Every numeric option may also come from the JSON
//! file given by `--config`; flags win over the file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use fdr_core::AffineKind;

#[derive(Debug, Parser)]
#[command(
    name = "fdr",
    version,
    about = "Finite-dimensional realizations of HJM models"
)]
pub struct Cli {
    /// Directory for reports and CSV outputs.
    #[arg(long, global = true, env = "FDR_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the Riccati equation on a grid; writes x,Lambda,B.
    RiccatiSolve(RiccatiArgs),
    /// Fit a Hull–White extended Vasicek or CIR realization to a curve.
    Calibrate(CalibrateArgs),
    /// Monte Carlo ensemble of a calibrated realization.
    Simulate(SimulateArgs),
    /// Decompose a curve against the singular set.
    CheckSingular(CheckSingularArgs),
    /// First-bracket involutivity check for a volatility structure.
    LieCheck(LieCheckArgs),
    /// Fit the Svensson family to a curve.
    SvenssonFit(SvenssonFitArgs),
    /// Simulate the consistent Svensson factor dynamics.
    SvenssonSim(SvenssonSimArgs),
    /// Pathwise gap between the HJM Euler scheme and the realization.
    Equivalence(EquivalenceArgs),
    /// Distance to the singular set along HJM Euler paths started on it.
    Invariance(InvarianceArgs),
    /// Rank diagnostic for a list of functionals.
    RankA3(RankArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Hwv,
    Hwcir,
}

impl From<ModelKind> for AffineKind {
    fn from(k: ModelKind) -> Self {
        match k {
            ModelKind::Hwv => AffineKind::Hwv,
            ModelKind::Hwcir => AffineKind::Hwcir,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Exact,
    Euler,
}

/// Loads `path` as JSON into `T`.
pub fn load_config<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// Loads a command config, rejecting keys outside `allowed`.
fn load_checked<T: for<'de> Deserialize<'de>>(path: &Path, allowed: &[&str]) -> anyhow::Result<T> {
    let raw: serde_json::Value = load_config(path)?;
    let obj = raw
        .as_object()
        .ok_or_else(|| anyhow::anyhow!("{}: expected a JSON object", path.display()))?;
    if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        anyhow::bail!(
            "{}: unknown key '{k}' (expected one of {})",
            path.display(),
            allowed.join(", ")
        );
    }
    serde_json::from_value(raw).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// Generates `merge_config`, filling unset flags from `--config`.
macro_rules! mergeable {
    ($t:ty; $($f:ident),* $(,)?) => {
        impl $t {
            pub fn merge_config(mut self) -> anyhow::Result<Self> {
                if let Some(path) = self.config.take() {
                    let file: Self = load_checked(&path, &[$(stringify!($f)),*])?;
                    $( if self.$f.is_none() { self.$f = file.$f; } )*
                }
                Ok(self)
            }
        }
    };
    ($t:ty; $($f:ident),* ; grid) => {
        impl $t {
            pub fn merge_config(mut self) -> anyhow::Result<Self> {
                if let Some(path) = self.config.take() {
                    let file: Self = load_checked(&path, &[$(stringify!($f),)* "x_max", "pad", "n_points"])?;
                    $( if self.$f.is_none() { self.$f = file.$f; } )*
                    self.grid.merge(file.grid);
                }
                Ok(self)
            }
        }
    };
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridArgs {
    #[arg(long)]
    pub x_max: Option<f64>,
    #[arg(long)]
    pub pad: Option<f64>,
    #[arg(long)]
    pub n_points: Option<usize>,
}

impl GridArgs {
    pub fn merge(&mut self, other: GridArgs) {
        self.x_max = self.x_max.or(other.x_max);
        self.pad = self.pad.or(other.pad);
        self.n_points = self.n_points.or(other.n_points);
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct RiccatiArgs {
    /// Quadratic coefficient.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<f64>,
    /// Linear coefficient.
    #[arg(long, allow_hyphen_values = true)]
    pub b: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda0: Option<f64>,
    /// Tolerance on the closed-form error, or on the finite-difference
    /// residual when no closed form applies.
    #[arg(long)]
    pub tol: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
mergeable!(RiccatiArgs; a, b, lambda0, tol; grid);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// CSV curve `x,rate` covering the padded grid.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Pad of the curve file in years.
    #[arg(long)]
    pub pad: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Artifact file name inside the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
mergeable!(CalibrateArgs; model, curve, beta, rho, pad, horizon, dt, epsilon, out);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// Artifact written by `calibrate`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub scheme: Option<Scheme>,
    /// Also write every factor path.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dump_paths: Option<bool>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
mergeable!(SimulateArgs; model, paths, dt, horizon, seed, scheme, dump_paths);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSingularArgs {
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub pad: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
mergeable!(CheckSingularArgs; curve, model, beta, rho, pad);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LieCheckArgs {
    /// JSON model spec with a `volatility` entry.
    #[arg(long)]
    pub vol: Option<PathBuf>,
    /// Directory of CSV curves; the built-in scan curves when absent.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    /// Report file; `lie-check.json` in the output directory by default.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub pad: Option<f64>,
    /// Relative Fréchet step for the brackets.
    #[arg(long)]
    pub eps_fd: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
mergeable!(LieCheckArgs; vol, curves, report, pad, eps_fd);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvenssonFitArgs {
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub pad: Option<f64>,
    /// Six comma-separated starting values `z1,…,z6`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub init: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
mergeable!(SvenssonFitArgs; curve, pad, init);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct SvenssonSimArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Four comma-separated coordinates `Z1,…,Z4`, `Z4 ≥ 0`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub z0: Option<Vec<f64>>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Steps between curve snapshots of the first path.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
mergeable!(SvenssonSimArgs; alpha, z0, dt, horizon, seed, paths, snapshot_every; grid);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivalenceArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Strictly decreasing comma-separated steps.
    #[arg(long, value_delimiter = ',')]
    pub dts: Option<Vec<f64>>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Initial curve; flat 3% on the standard grid when absent.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub pad: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
mergeable!(EquivalenceArgs; model, beta, rho, dts, horizon, paths, seed, epsilon, curve, pad);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct InvarianceArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Start curve `A(b) + c·Λ'`.
    #[arg(long, allow_hyphen_values = true)]
    pub b: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub c: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Flat level of an off-Σ negative control run.
    #[arg(long)]
    pub control_level: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
mergeable!(InvarianceArgs; model, beta, rho, b, c, dt, horizon, paths, seed, epsilon, control_level; grid);

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankArgs {
    /// Comma-separated functionals: `point:x`, `yield:x`.
    #[arg(long, value_delimiter = ',')]
    pub ell: Option<Vec<String>>,
    /// Derivative order `q`.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub probe_dim: Option<usize>,
    /// Pass only when the rank equals this value.
    #[arg(long)]
    pub expect_rank: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
mergeable!(RankArgs; ell, q, probe_dim, expect_rank);
