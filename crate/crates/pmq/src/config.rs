//! Run configuration (TOML).
//!
//! ```toml
//! task = "price"                # used by `pmq run`: quantize | price | compare-mc | calibrate
//! grid_file = "out/grid.pmq"    # optional input grid for `price`
//!
//! [model.heston]                # or [model.gbm], [model.sabr]
//! s0 = 100.0
//! v0 = 0.09
//! kappa = 2.0
//! theta = 0.09
//! sigma = 0.6
//! r = 0.05
//! rho = -0.3
//!
//! [schedule]
//! horizon = 1.0
//! steps = 12
//! codewords = [30, 15]
//! schemes = ["euler", "wo2"]
//!
//! [optimizer]                   # optional, every field defaulted
//! grad_tol = 1e-9
//!
//! [[options]]
//! kind = "european-put"         # european-call | up-and-out-put | bermudan-put
//! strike = [90.0, 100.0, 110.0] # one value or a list; each value is one row
//! barrier = 120.0               # up-and-out only; one value or a list
//! maturity_step = 12            # defaults to the last step
//! dates = [3, 6, 9, 12]         # monitoring or exercise steps, default all
//!
//! [mc]                          # compare-mc only
//! paths = 100000
//! steps_per_year = 120
//! seed = 1
//! antithetic = false
//!
//! [calibration]
//! model = "sabr"                # or "heston"
//! quotes = "quotes.csv"
//! spot = 100.0
//! rate = 0.1
//! moneyness = 0.3               # keep strikes within 30% of spot
//! init = [0.48, 1.0, 0.48, -0.36]
//! lower = [0.0, 0.0, 0.0, -1.0] # optional box, default per model
//! upper = [inf, 1.0, inf, 1.0]
//! [calibration.grid]
//! codewords = [30, 15]
//! schemes = ["euler", "wo2"]
//! [calibration.budget]
//! max_evals = 1000
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.
//! SABR accepts either the forward `f0` or the spot `s0`, which is carried
//! to the schedule horizon at rate `r`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pmq_core::calibration::{Bounds, CalibBudget, CalibModel, GridSettings};
use pmq_core::oracles::McConfig;
use pmq_core::pricing::OptionKind;
use pmq_core::quantize::OptimizerConfig;
use pmq_core::sde::{BuiltinModel, Gbm, Heston, Sabr, Schedule, Scheme, SdeModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Quantize,
    Price,
    CompareMc,
    Calibrate,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Quantize => "quantize",
            Task::Price => "price",
            Task::CompareMc => "compare-mc",
            Task::Calibrate => "calibrate",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub grid_file: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    pub schedule: Option<ScheduleConfig>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub options: Vec<OptionConfig>,
    #[serde(default)]
    pub mc: McConfig,
    pub calibration: Option<CalibrationConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Gbm(Gbm),
    Heston(Heston),
    Sabr(SabrConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SabrConfig {
    pub f0: Option<f64>,
    pub s0: Option<f64>,
    pub y0: f64,
    pub beta: f64,
    pub nu: f64,
    pub rho: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub horizon: f64,
    pub steps: usize,
    pub codewords: Vec<usize>,
    pub schemes: Vec<Scheme>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![*x],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionConfig {
    pub id: Option<String>,
    pub kind: OptionKind,
    pub strike: OneOrMany,
    pub barrier: Option<OneOrMany>,
    pub maturity_step: Option<usize>,
    #[serde(default)]
    pub dates: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub model: CalibModel,
    pub quotes: PathBuf,
    pub spot: f64,
    pub rate: f64,
    #[serde(default = "default_moneyness")]
    pub moneyness: f64,
    pub init: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub grid: GridSettings,
    #[serde(default)]
    pub budget: CalibBudget,
}

fn default_moneyness() -> f64 {
    0.3
}

impl CalibrationConfig {
    pub fn bounds(&self) -> Bounds {
        let d = self.model.default_bounds();
        Bounds::new(self.lower.clone().unwrap_or(d.lo), self.upper.clone().unwrap_or(d.hi))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

/// A config with its file location.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub path: PathBuf,
    pub base: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

pub fn load(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let config = parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, path: path.to_path_buf(), base })
}

impl FromStr for RunConfig {
    type Err = toml::de::Error;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        toml::from_str(s)
    }
}

pub fn parse(text: &str) -> std::result::Result<RunConfig, toml::de::Error> {
    text.parse()
}

fn config_err(section: &str, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("[{section}]: {msg}"))
}

impl ModelConfig {
    /// The model, with SABR spot carried to `horizon`.
    pub fn build(&self, horizon: f64) -> Result<BuiltinModel> {
        let m = match self {
            ModelConfig::Gbm(g) => BuiltinModel::Gbm(g.clone()),
            ModelConfig::Heston(h) => BuiltinModel::Heston(*h),
            ModelConfig::Sabr(s) => {
                let m = match (s.f0, s.s0) {
                    (Some(f0), None) => Sabr::new(f0, s.y0, s.beta, s.nu, s.rho, s.r),
                    (None, Some(s0)) => Sabr::from_spot(s0, horizon, s.y0, s.beta, s.nu, s.rho, s.r),
                    _ => return Err(config_err("model.sabr", "give exactly one of f0 and s0")),
                };
                BuiltinModel::Sabr(m.map_err(|e| config_err("model.sabr", e))?)
            }
        };
        m.validate().map_err(|e| config_err(&format!("model.{}", m.name()), e))?;
        Ok(m)
    }
}

impl ScheduleConfig {
    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.horizon, self.steps, self.codewords.clone()).map_err(|e| config_err("schedule", e))
    }
}

/// Model, schedule and schemes needed to build a grid.
#[derive(Debug, Clone)]
pub struct BuildPlan {
    pub model: BuiltinModel,
    pub schedule: Schedule,
    pub schemes: Vec<Scheme>,
    pub optimizer: OptimizerConfig,
}

impl RunConfig {
    pub fn build_plan(&self) -> Result<BuildPlan> {
        let model = self.model.as_ref().ok_or_else(|| CliError::Config("missing [model] section".into()))?;
        let sched = self.schedule.as_ref().ok_or_else(|| CliError::Config("missing [schedule] section".into()))?;
        let schedule = sched.schedule()?;
        let model = model.build(schedule.horizon)?;
        if sched.schemes.len() != model.dim() || sched.codewords.len() != model.dim() {
            return Err(config_err(
                "schedule",
                format!(
                    "model {} has {} coordinates; codewords and schemes need one entry each",
                    model.name(),
                    model.dim()
                ),
            ));
        }
        self.optimizer.validate().map_err(|e| config_err("optimizer", e))?;
        Ok(BuildPlan { model, schedule, schemes: sched.schemes.clone(), optimizer: self.optimizer })
    }

    /// Model only; the horizon comes from the schedule when present.
    pub fn model_for(&self, horizon: f64) -> Result<Option<BuiltinModel>> {
        self.model.as_ref().map(|m| m.build(horizon)).transpose()
    }
}
