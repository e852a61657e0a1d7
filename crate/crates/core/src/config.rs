//! Run configuration: a TOML file with explicit keys, overridable from the
//! command line, validated as a whole at load time.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::StrategyChoice;
use crate::denoiser::{Condition, LabeledMixture};
use crate::error::{Error, Result};
use crate::guidance::{DisturbanceStrategy, GuidanceScale, SamplingMode, DEFAULT_GAMMA};
use crate::latent::Latent;
use crate::sampler::ActivationRule;
use crate::schedule::ScheduleParams;
use crate::seed::chain_rng;

pub const CONFIG_VERSION: u32 = 1;

/// Disturbance times above this draw a warning, never an error.
pub const RECOMMENDED_MAX_START: usize = 400;

/// Number and seed of the grey dataset points; `reference = { sample = k }`
/// indexes into this same draw.
pub const DATASET_POINTS: usize = 400;
pub const DATASET_SEED: u64 = 0;

const TWO_CLASS: &str = include_str!("../data/two_class.toml");
const RING4: &str = include_str!("../data/ring4.toml");

/// How the reference latent is chosen for image-guided runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSpec {
    /// Index into the mixture's component means, in file order.
    Mode(usize),
    /// Index into the fixed dataset draw.
    Sample(usize),
    Inline(Vec<f64>),
}

impl ReferenceSpec {
    /// `mode:K`, `sample:K`, or a comma-separated vector.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |why: String| Error::config("ref", why);
        if let Some(k) = s.strip_prefix("mode:") {
            return k
                .trim()
                .parse()
                .map(ReferenceSpec::Mode)
                .map_err(|e| bad(format!("`{s}`: {e}")));
        }
        if let Some(k) = s.strip_prefix("sample:") {
            return k
                .trim()
                .parse()
                .map(ReferenceSpec::Sample)
                .map_err(|e| bad(format!("`{s}`: {e}")));
        }
        s.split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(ReferenceSpec::Inline)
            .map_err(|e| {
                bad(format!(
                    "`{s}` is not mode:K, sample:K or a comma-separated vector ({e})"
                ))
            })
    }
}

/// What the Image-D null branch sees in a cartoonize run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullInputChoice {
    #[default]
    Reference,
    Isomorphic,
    Irrelevant,
}

/// Axes of a sweep. Missing axes take the single value from the run config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<usize>>,
    /// Number of chains per cell; seeds expand from the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub steps: usize,
    /// Only read by `sweep`; `sample` and `cartoonize` fix their own mode.
    pub mode: SamplingMode,
    pub strategy: StrategyChoice,
    pub b: usize,
    pub s: usize,
    pub gamma: f64,
    pub prompt_class: u32,
    /// A path, or `bundled:two_class` / `bundled:ring4`.
    pub dataset: String,
    /// Master seed; chain seeds expand from it.
    pub seed: u64,
    pub chains: usize,
    pub output: String,
    pub activation: ActivationRule,
    pub null_input: NullInputChoice,
    /// Isomorphic perturbation norm as a fraction of `|x_ref|`.
    pub iso_fraction: f64,
    pub schedule: ScheduleParams,
    pub reference: ReferenceSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxes>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            steps: 100,
            mode: SamplingMode::FreeGeneration,
            strategy: StrategyChoice::BackD,
            b: 300,
            s: 300,
            gamma: DEFAULT_GAMMA,
            prompt_class: 0,
            dataset: "bundled:two_class".into(),
            seed: 0,
            chains: 1,
            output: "out".into(),
            activation: ActivationRule::AtOrBelow,
            null_input: NullInputChoice::Reference,
            iso_fraction: 1.0,
            schedule: ScheduleParams::default(),
            reference: ReferenceSpec::Mode(0),
            sweep: None,
        }
    }
}

/// Command-line overrides, applied on top of the file before validation.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub gamma: Option<f64>,
    pub b: Option<usize>,
    pub s: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub strategy: Option<StrategyChoice>,
    pub prompt_class: Option<u32>,
    pub reference: Option<ReferenceSpec>,
    pub dataset: Option<String>,
    pub output: Option<String>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<config>".into(),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates `path`. A relative dataset path is resolved
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { reason, .. } => Error::Parse {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })?;
        if !cfg.dataset.starts_with("bundled:") && Path::new(&cfg.dataset).is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset = dir.join(&cfg.dataset).display().to_string();
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &o.$field {
                    self.$field = v.clone();
                }
            };
        }
        set!(gamma);
        set!(b);
        set!(s);
        set!(steps);
        set!(seed);
        set!(strategy);
        set!(prompt_class);
        set!(reference);
        set!(dataset);
        set!(output);
    }

    /// Every check that needs no dataset. Returns warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!("{} is not supported, expected {CONFIG_VERSION}", self.version),
            ));
        }
        let schedule = self
            .schedule
            .build()
            .map_err(|e| Error::config("schedule", e.to_string()))?;
        let grid = schedule
            .grid(self.steps)
            .map_err(|e| Error::config("steps", e.to_string()))?;
        GuidanceScale::new(self.gamma).map_err(|e| Error::config("gamma", e.to_string()))?;
        if self.seed > i64::MAX as u64 {
            return Err(Error::config(
                "seed",
                format!("{} exceeds {}", self.seed, i64::MAX),
            ));
        }
        if self.chains == 0 {
            return Err(Error::config("chains", "must be at least 1"));
        }
        if !(self.iso_fraction.is_finite() && self.iso_fraction >= 0.0) {
            return Err(Error::config(
                "iso_fraction",
                format!("{} must be finite and >= 0", self.iso_fraction),
            ));
        }
        if let ReferenceSpec::Inline(v) = &self.reference {
            Latent::new(v.clone()).map_err(|e| Error::config("reference", e.to_string()))?;
        }
        match self.strategy {
            StrategyChoice::None => {}
            StrategyChoice::BackD => DisturbanceStrategy::BackD {
                rollback: self.b,
                start: self.s,
            }
            .validate(&grid, 1)?,
            StrategyChoice::ImageD => DisturbanceStrategy::ImageD {
                reference: Latent::zeros(1),
                start: self.s,
            }
            .validate(&grid, 1)?,
            StrategyChoice::Baseline if self.s == 0 => {}
            StrategyChoice::Baseline => DisturbanceStrategy::ImageD {
                reference: Latent::zeros(1),
                start: self.s,
            }
            .validate(&grid, 1)?,
        }
        if let Some(sw) = &self.sweep {
            let empty = |field: &str, n: Option<usize>| -> Result<()> {
                if n == Some(0) {
                    return Err(Error::config(field, "axis must not be empty"));
                }
                Ok(())
            };
            empty("sweep.b", sw.b.as_ref().map(Vec::len))?;
            empty("sweep.s", sw.s.as_ref().map(Vec::len))?;
            empty("sweep.gamma", sw.gamma.as_ref().map(Vec::len))?;
            empty("sweep.steps", sw.steps.as_ref().map(Vec::len))?;
            if sw.seeds == Some(0) {
                return Err(Error::config("sweep.seeds", "must be at least 1"));
            }
            if let Some(g) = sw.gamma.iter().flatten().find(|g| !(g.is_finite() && **g >= 0.0)) {
                return Err(Error::config(
                    "sweep.gamma",
                    format!("{g} must be finite and >= 0"),
                ));
            }
        }
        let mut warnings = Vec::new();
        if self.strategy != StrategyChoice::None && self.s > RECOMMENDED_MAX_START {
            warnings.push(format!(
                "s = {} exceeds {RECOMMENDED_MAX_START}; disturbance times above {RECOMMENDED_MAX_START} tend to lose the reference",
                self.s
            ));
        }
        Ok(warnings)
    }

    pub fn prompt(&self) -> Condition {
        Condition::Class(self.prompt_class)
    }

    pub fn load_dataset(&self) -> Result<LabeledMixture> {
        let mix = match self.dataset.as_str() {
            "bundled:two_class" => LabeledMixture::from_toml_str(TWO_CLASS)?,
            "bundled:ring4" => LabeledMixture::from_toml_str(RING4)?,
            other if other.starts_with("bundled:") => {
                return Err(Error::config(
                    "dataset",
                    format!("`{other}` is not a bundled dataset"),
                ))
            }
            path => LabeledMixture::load(path).map_err(|e| match e {
                Error::Io { .. } => Error::config("dataset", e.to_string()),
                e => e,
            })?,
        };
        mix.check_condition(self.prompt())
            .map_err(|e| Error::config("prompt_class", e.to_string()))?;
        Ok(mix)
    }

    pub fn resolve_reference(&self, mix: &LabeledMixture) -> Result<Latent> {
        match &self.reference {
            ReferenceSpec::Mode(k) => {
                let modes = mix.modes();
                modes.get(*k).map(|(_, m)| m.clone()).ok_or_else(|| {
                    Error::config(
                        "reference",
                        format!("mode {k} out of range, dataset has {}", modes.len()),
                    )
                })
            }
            ReferenceSpec::Sample(k) => {
                let pts = dataset_points(mix)?;
                pts.get(*k).cloned().ok_or_else(|| {
                    Error::config(
                        "reference",
                        format!("sample {k} out of range, dataset draw has {}", pts.len()),
                    )
                })
            }
            ReferenceSpec::Inline(v) => {
                let x = Latent::new(v.clone()).map_err(|e| Error::config("reference", e.to_string()))?;
                x.ensure_dim(mix.dimension)
                    .map_err(|e| Error::config("reference", e.to_string()))?;
                Ok(x)
            }
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(&self.output)
    }
}

/// The fixed dataset draw used for plots and `reference = { sample = k }`.
pub fn dataset_points(mix: &LabeledMixture) -> Result<Vec<Latent>> {
    mix.sample(Condition::Null, DATASET_POINTS, &mut chain_rng(DATASET_SEED))
}
