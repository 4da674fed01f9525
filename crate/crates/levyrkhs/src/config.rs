//! Run configuration: a single JSON file per run.
//!
//! Relative input paths are resolved against the directory of the config
//! file, so a config and its inputs can be moved together. The output
//! directory is taken relative to the working directory.

use std::fmt;
use std::path::{Path, PathBuf};

use levyrkhs_core::assembly::SplitPolicy;
use levyrkhs_core::ensemble::{EnsembleConfig, Grid, KdeConfig};
use levyrkhs_core::fpe::{FpeConfig, InitialCondition, TimeDifference};
use levyrkhs_core::hyperselect::{BilevelConfig, Method, PenaltyNorm};
use levyrkhs_core::model::{DriftSpec, JumpLaw, LevyDensitySpec, ProblemDomain};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    FpeGenerate,
    EnsembleGenerate,
    Assemble,
    Estimate,
    ConvergenceStudy,
    NormComparison,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::FpeGenerate => "fpe-generate",
            Experiment::EnsembleGenerate => "ensemble-generate",
            Experiment::Assemble => "assemble",
            Experiment::Estimate => "estimate",
            Experiment::ConvergenceStudy => "convergence-study",
            Experiment::NormComparison => "norm-comparison",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_r0")]
    pub r0: f64,
    /// Observation mesh.
    #[serde(default = "default_dx")]
    pub dx: f64,
    #[serde(default = "default_drift")]
    pub drift: DriftSpec,
    /// True jump density, used for the reported errors and by the generators.
    #[serde(default = "default_levy")]
    pub levy: LevyDensitySpec,
    /// Diffusion coefficient in the regression target; defaults to 1 for
    /// Fokker–Planck data and 0 for ensemble data.
    #[serde(default)]
    pub sigma: Option<f64>,
}

fn default_half_width() -> f64 {
    5.0
}
fn default_r0() -> f64 {
    2.0
}
fn default_dx() -> f64 {
    0.01
}
fn default_drift() -> DriftSpec {
    DriftSpec::Linear { slope: -0.5 }
}
fn default_levy() -> LevyDensitySpec {
    LevyDensitySpec::GaussianDecay
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            half_width: default_half_width(),
            r0: default_r0(),
            dx: default_dx(),
            drift: default_drift(),
            levy: default_levy(),
            sigma: None,
        }
    }
}

impl ModelConfig {
    pub fn domain(&self) -> levyrkhs_core::Result<ProblemDomain> {
        ProblemDomain::new(self.half_width, self.r0, self.dx)
    }
}

/// Where the density data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Fpe {
        solver_dx: f64,
        solver_dt: f64,
        #[serde(default = "default_horizon")]
        horizon: f64,
        #[serde(default = "default_snapshots")]
        n_snapshots: usize,
        #[serde(default)]
        initial_condition: InitialCondition,
        #[serde(default)]
        time_difference: TimeDifference,
    },
    Ensemble {
        n_paths: usize,
        dt: f64,
        horizon: f64,
        #[serde(default)]
        x0: f64,
        #[serde(default = "default_bandwidth_constant")]
        bandwidth_constant: f64,
        #[serde(default = "default_window")]
        window: usize,
        #[serde(default = "default_order")]
        order: usize,
        /// Also write the raw paths as binary f64.
        #[serde(default)]
        write_samples: bool,
    },
    /// A dataset CSV written by a generate run; the JSON sidecar sits next to it.
    Dataset { path: PathBuf },
    /// An assembled system directory.
    System { path: PathBuf },
}

fn default_horizon() -> f64 {
    1.0
}
fn default_snapshots() -> usize {
    30
}
fn default_bandwidth_constant() -> f64 {
    0.5
}
fn default_window() -> usize {
    11
}
fn default_order() -> usize {
    3
}

impl DataConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            DataConfig::Fpe { .. } => "fpe",
            DataConfig::Ensemble { .. } => "ensemble",
            DataConfig::Dataset { .. } => "dataset",
            DataConfig::System { .. } => "system",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGrid {
    /// log10 of the smallest λ.
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid {
            lo: -12.0,
            hi: 2.0,
            n: 141,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitConfig {
    #[default]
    Interleave,
    Leading {
        n_train: usize,
    },
}

impl From<SplitConfig> for SplitPolicy {
    fn from(s: SplitConfig) -> Self {
        match s {
            SplitConfig::Interleave => SplitPolicy::Interleave,
            SplitConfig::Leading { n_train } => SplitPolicy::Leading { n_train },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    pub outdir: PathBuf,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_norm")]
    pub norm: PenaltyNorm,
    #[serde(default)]
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub bilevel: BilevelConfig,
    #[serde(default)]
    pub lambda_grid: LambdaGrid,
    #[serde(default)]
    pub split: SplitConfig,
    /// Observation meshes for the convergence study.
    #[serde(default = "default_meshes")]
    pub meshes: Vec<f64>,
}

fn default_method() -> Method {
    Method::Bilevel
}
fn default_norm() -> PenaltyNorm {
    PenaltyNorm::Rkhs
}
fn default_meshes() -> Vec<f64> {
    vec![0.01, 0.02, 0.025, 0.05]
}

/// A config error pointing at a line (and column, when known) of the file.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: usize,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.column {
            Some(c) => write!(
                f,
                "{}:{}:{}: {}",
                self.path.display(),
                self.line,
                c,
                self.message
            ),
            None => write!(f, "{}:{}: {}", self.path.display(), self.line, self.message),
        }
    }
}

/// Line of the value at `keys` (a path of object keys), or of the deepest
/// prefix present in the text. Falls back to line 1.
fn locate(text: &str, keys: &[&str]) -> usize {
    let mut from = 0;
    let mut found = None;
    for key in keys {
        let needle = format!("\"{key}\"");
        let mut search = from;
        let mut hit = None;
        while let Some(off) = text[search..].find(&needle) {
            let at = search + off;
            let rest = text[at + needle.len()..].trim_start();
            if rest.starts_with(':') {
                hit = Some(at);
                break;
            }
            search = at + needle.len();
        }
        match hit {
            Some(at) => {
                found = Some(at);
                from = at + needle.len();
            }
            None => break,
        }
    }
    found.map_or(1, |at| text[..at].matches('\n').count() + 1)
}

/// A parsed config together with its source, for error reporting.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub path: PathBuf,
    pub base_dir: PathBuf,
    text: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: 0,
            column: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(path, text)
    }

    pub fn parse(path: &Path, text: String) -> Result<LoadedConfig, ConfigError> {
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: e.line(),
            column: Some(e.column()),
            message: e
                .to_string()
                .split(" at line ")
                .next()
                .unwrap_or_default()
                .to_string(),
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = LoadedConfig {
            config,
            path: path.to_path_buf(),
            base_dir,
            text,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn error(&self, keys: &[&str], message: impl fmt::Display) -> ConfigError {
        ConfigError {
            path: self.path.clone(),
            line: locate(&self.text, keys),
            column: None,
            message: message.to_string(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        let domain = c.model.domain().map_err(|e| self.error(&["model"], e))?;
        if let Some(s) = c.model.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(self.error(&["model", "sigma"], "sigma must be a nonnegative number"));
            }
        }
        c.bilevel
            .validate()
            .map_err(|e| self.error(&["bilevel"], e))?;
        let g = c.lambda_grid;
        if g.n == 0 || !(g.lo.is_finite() && g.hi.is_finite()) || (g.n > 1 && g.hi <= g.lo) {
            return Err(self.error(&["lambda_grid"], "lambda_grid needs n >= 1 and lo < hi"));
        }
        if let SplitConfig::Leading { n_train } = c.split {
            if n_train == 0 {
                return Err(self.error(&["split", "n_train"], "n_train must be positive"));
            }
        }

        match &c.data {
            DataConfig::Fpe { solver_dx, .. } => {
                // A convergence study observes on `meshes`, not on `model.dx`.
                let observed = if c.experiment == Experiment::ConvergenceStudy {
                    ProblemDomain::new(c.model.half_width, c.model.r0, *solver_dx)
                        .map_err(|e| self.error(&["data", "solver_dx"], e))?
                } else {
                    domain
                };
                self.fpe_config(observed)
                    .map_err(|e| self.error(&["data"], e))?;
            }
            DataConfig::Ensemble { .. } => {
                let (ens, kde) = self
                    .ensemble_config()
                    .map_err(|e| self.error(&["data"], e))?;
                ens.validate().map_err(|e| self.error(&["data"], e))?;
                kde.validate().map_err(|e| self.error(&["data"], e))?;
            }
            DataConfig::Dataset { path } => {
                let p = self.resolve(path);
                if !p.is_file() {
                    return Err(self.error(
                        &["data", "path"],
                        format!("dataset {} does not exist", p.display()),
                    ));
                }
                let sidecar = p.with_extension("json");
                if !sidecar.is_file() {
                    return Err(self.error(
                        &["data", "path"],
                        format!("dataset sidecar {} does not exist", sidecar.display()),
                    ));
                }
            }
            DataConfig::System { path } => {
                let p = self.resolve(path);
                if !p.join("system.json").is_file() {
                    return Err(self.error(
                        &["data", "path"],
                        format!("{} is not a system directory", p.display()),
                    ));
                }
            }
        }

        let allowed: &[&str] = match c.experiment {
            Experiment::FpeGenerate => &["fpe"],
            Experiment::EnsembleGenerate => &["ensemble"],
            Experiment::Assemble => &["fpe", "ensemble", "dataset"],
            Experiment::Estimate | Experiment::NormComparison => {
                &["fpe", "ensemble", "dataset", "system"]
            }
            Experiment::ConvergenceStudy => &["fpe"],
        };
        if !allowed.contains(&c.data.kind()) {
            return Err(self.error(
                &["data", "kind"],
                format!(
                    "experiment {} cannot use {} data (expected one of: {})",
                    c.experiment.name(),
                    c.data.kind(),
                    allowed.join(", ")
                ),
            ));
        }

        if c.experiment == Experiment::ConvergenceStudy {
            if c.meshes.len() < 2 {
                return Err(self.error(&["meshes"], "convergence study needs at least two meshes"));
            }
            if let DataConfig::Fpe { solver_dx, .. } = &c.data {
                for &dx in &c.meshes {
                    let domain = ProblemDomain::new(c.model.half_width, c.model.r0, dx)
                        .map_err(|e| self.error(&["meshes"], e))?;
                    let stride = dx / solver_dx;
                    if !(stride >= 1.0 && (stride - stride.round()).abs() < 1e-9) {
                        return Err(self.error(
                            &["meshes"],
                            format!(
                                "mesh {dx} is not a multiple of the solver spacing {solver_dx}"
                            ),
                        ));
                    }
                    domain.validate().map_err(|e| self.error(&["meshes"], e))?;
                }
            }
        }
        Ok(())
    }

    /// FPE generator config observed on `domain`.
    pub fn fpe_config(&self, domain: ProblemDomain) -> levyrkhs_core::Result<FpeConfig> {
        let DataConfig::Fpe {
            solver_dx,
            solver_dt,
            horizon,
            n_snapshots,
            initial_condition,
            time_difference,
        } = &self.config.data
        else {
            return Err(levyrkhs_core::Error::Config(
                "data source is not a Fokker-Planck generator".into(),
            ));
        };
        let cfg = FpeConfig {
            domain,
            solver_dx: *solver_dx,
            solver_dt: *solver_dt,
            horizon: *horizon,
            n_snapshots: *n_snapshots,
            initial_condition: initial_condition.clone(),
            time_difference: *time_difference,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ensemble_config(&self) -> levyrkhs_core::Result<(EnsembleConfig, KdeConfig)> {
        let DataConfig::Ensemble {
            n_paths,
            dt,
            horizon,
            x0,
            bandwidth_constant,
            window,
            order,
            ..
        } = &self.config.data
        else {
            return Err(levyrkhs_core::Error::Config(
                "data source is not an ensemble".into(),
            ));
        };
        let m = &self.config.model;
        let ens = EnsembleConfig {
            n_paths: *n_paths,
            dt: *dt,
            horizon: *horizon,
            seed: self.config.seed,
            jump: JumpLaw::for_density(&m.levy)?,
            drift: m.drift.clone(),
            x0: *x0,
        };
        let kde = KdeConfig {
            bandwidth_constant: *bandwidth_constant,
            grid: Grid::symmetric(m.half_width, m.dx),
            window: *window,
            order: *order,
        };
        Ok((ens, kde))
    }
}
