//! Experiment configuration: a TOML document with one table per concern.
//!
//! ```toml
//! [experiment]
//! name = "demo"
//! pipeline = "sweep"        # stage | sweep | flex
//! seed = 0
//! alphas = [0.2, 0.5]
//!
//! [grid]
//! omega = [0.0, 0.3, 0.0, 0.3]
//! resolution = 512
//! margin = 0.21
//!
//! [problem]
//! k = 2
//! source = "wavy"           # constant | wavy | scalar | preset
//!
//! [stage]
//! l = [0.1]
//! lambda = [40.0, 80.0, 160.0]
//! ```
//!
//! Omitted keys take the defaults of the corresponding structs.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vkflex::step::Profile;
use vkflex::{Grid2, Rect};

use crate::presets;

pub const MIN_RESOLUTION: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Stage,
    Sweep,
    Flex,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.2, 0.5]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// `[x_min, x_max, y_min, y_max]`.
    pub omega: [f64; 4],
    pub resolution: usize,
    #[serde(default)]
    pub margin: f64,
}

impl GridSection {
    pub fn grid(&self) -> Result<Grid2> {
        let [x0, x1, y0, y1] = self.omega;
        Grid2::new(Rect::new(x0, x1, y0, y1), self.margin, self.resolution)
            .context("building the computational grid")
    }
}

/// Right-hand side of the Monge-Ampère form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalarF {
    Zero,
    One,
    /// `sin(pi x^) sin(pi y^)` in coordinates normalised to the grid box.
    Sine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// `v = w = 0`, `A = constant`.
    Constant,
    /// Smooth `v`, `w = 0`, `A = half_gram(v) + deficit_scale * D(x)`.
    Wavy,
    /// `v = w = 0`, `A = f_to_A(f, c_pad)`.
    Scalar,
    /// The problem table of the preset named by `preset`.
    Preset,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub k: usize,
    pub source: Source,
    /// `(a11, a12, a22)`.
    #[serde(default = "default_constant")]
    pub constant: [f64; 3],
    #[serde(default = "default_deficit_scale")]
    pub deficit_scale: f64,
    #[serde(default = "default_f")]
    pub f: ScalarF,
    #[serde(default = "default_c_pad")]
    pub c_pad: f64,
    #[serde(default)]
    pub preset: Option<String>,
}

fn default_constant() -> [f64; 3] {
    [0.2, 0.0, 0.2]
}
fn default_deficit_scale() -> f64 {
    0.1
}
fn default_f() -> ScalarF {
    ScalarF::One
}
fn default_c_pad() -> f64 {
    0.2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    /// Mollification scales; the sweep runs their product with `lambda`.
    pub l: Vec<f64>,
    pub lambda: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_trim")]
    pub trim: usize,
    #[serde(default = "default_profile")]
    pub profile: Profile,
}

fn default_gamma() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    1.0
}
fn default_r0() -> f64 {
    2.0
}
fn default_trim() -> usize {
    4
}
fn default_profile() -> Profile {
    Profile::GridConsistent
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Practical,
    Analytic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexSection {
    pub epsilon: f64,
    pub alpha: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    /// Constant of the double-exponential schedule.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_l0")]
    pub l0: f64,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_l_ratio")]
    pub l_ratio: f64,
    #[serde(default = "default_lambda_ratio")]
    pub lambda_ratio: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub first_step_lambda: Option<f64>,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_trim")]
    pub trim: usize,
}

fn default_iterations() -> usize {
    4
}
fn default_schedule() -> ScheduleKind {
    ScheduleKind::Practical
}
fn default_c() -> f64 {
    2.0
}
fn default_l0() -> f64 {
    0.03
}
fn default_lambda0() -> f64 {
    60.0
}
fn default_l_ratio() -> f64 {
    0.5
}
fn default_lambda_ratio() -> f64 {
    4.0
}
fn default_rho() -> f64 {
    0.1
}

/// Expectations checked after a run; any violated one makes the run fail.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectSection {
    pub deficit_slope: Option<f64>,
    pub hessian_slope: Option<f64>,
    #[serde(default = "default_slope_tolerance")]
    pub slope_tolerance: f64,
    /// Upper bound on final over initial deficit.
    pub deficit_ratio: Option<f64>,
    /// `|v~ - v|_0 <= epsilon` and `|w~ - w|_0 <= epsilon`.
    #[serde(default)]
    pub close: bool,
    #[serde(default)]
    pub monotone: bool,
    /// Weak Monge-Ampère residual at most `ma_factor * VK + ma_offset`.
    pub ma_factor: Option<f64>,
    #[serde(default = "default_ma_offset")]
    pub ma_offset: f64,
}

fn default_slope_tolerance() -> f64 {
    0.25
}
fn default_ma_offset() -> f64 {
    1e-4
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub grid: GridSection,
    pub problem: ProblemSection,
    #[serde(default)]
    pub stage: Option<StageSection>,
    #[serde(default)]
    pub flex: Option<FlexSection>,
    #[serde(default)]
    pub expect: ExpectSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        let text = presets::get(name).with_context(|| {
            format!("unknown preset {name:?}; known: {}", presets::NAMES.join(", "))
        })?;
        Self::from_toml(text).with_context(|| format!("preset {name}"))
    }

    pub fn stage(&self) -> Result<&StageSection> {
        self.stage.as_ref().context("configuration has no [stage] table")
    }

    pub fn flex(&self) -> Result<&FlexSection> {
        self.flex.as_ref().context("configuration has no [flex] table")
    }

    /// Replaces a `preset` problem source by the problem table it names.
    pub fn resolve_problem(&mut self) -> Result<()> {
        if self.problem.source != Source::Preset {
            return Ok(());
        }
        let name = self
            .problem
            .preset
            .clone()
            .context("problem source \"preset\" needs a preset name")?;
        let other = Self::from_preset(&name)?;
        if other.problem.source == Source::Preset {
            bail!("preset {name} refers to another preset");
        }
        self.problem = other.problem;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if self.grid.resolution < MIN_RESOLUTION {
            bail!(
                "grid resolution {} below the minimum {MIN_RESOLUTION}",
                self.grid.resolution
            );
        }
        let [x0, x1, y0, y1] = self.grid.omega;
        if !(x1 > x0 && y1 > y0) || self.grid.margin < 0.0 {
            bail!("degenerate domain {:?} or negative margin", self.grid.omega);
        }
        if self.problem.k == 0 {
            bail!("codimension k must be at least 1");
        }
        if e.alphas.is_empty() {
            bail!("alpha list is empty");
        }
        if let Some(a) = e.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            bail!("alpha {a} outside (0, 1)");
        }
        if self.problem.source == Source::Scalar && !(self.problem.c_pad > 0.0) {
            bail!("c_pad must be positive");
        }
        if self.problem.source == Source::Preset && self.problem.preset.is_none() {
            bail!("problem source \"preset\" needs a preset name");
        }
        if let Some(s) = &self.stage {
            if s.l.is_empty() || s.lambda.is_empty() {
                bail!("stage sweep grids must be nonempty");
            }
            if s.l.iter().chain(&s.lambda).any(|x| !(*x > 0.0)) {
                bail!("stage scales and frequencies must be positive");
            }
        }
        if let Some(f) = &self.flex {
            if !(f.epsilon > 0.0 && f.epsilon < 1.0) {
                bail!("epsilon {} outside (0, 1)", f.epsilon);
            }
            if !(f.alpha > 0.0 && f.alpha < 1.0) {
                bail!("alpha {} outside (0, 1)", f.alpha);
            }
            if f.iterations == 0 {
                bail!("flex needs at least one iteration");
            }
        }
        match e.pipeline {
            Pipeline::Stage | Pipeline::Sweep if self.stage.is_none() => {
                bail!("pipeline {:?} needs a [stage] table", e.pipeline)
            }
            Pipeline::Flex if self.flex.is_none() => bail!("pipeline flex needs a [flex] table"),
            _ => Ok(()),
        }
    }
}
