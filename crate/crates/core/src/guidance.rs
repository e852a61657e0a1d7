//! Classifier-free guidance and the null-branch disturbance.
//!
//! Plain guidance evaluates both branches on the same noisy latent `x_t`.
//! A disturbance keeps the text branch on `x_t` but feeds a different latent
//! `x_sigma` to the null branch:
//!
//! ```text
//! eps* = eps(x_sigma | null) + gamma * (eps(x_t | p) - eps(x_sigma | null))
//! ```
//!
//! Back-D uses a noisier latent `x_{t+b}`; Image-D uses the clean reference.

use serde::{Deserialize, Serialize};

use crate::denoiser::{Condition, Denoiser};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::sampler::Trajectory;
use crate::schedule::{DdimGrid, NoiseSchedule};

pub const DEFAULT_GAMMA: f64 = 7.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GuidanceScale(f64);

impl GuidanceScale {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::config(
                "gamma",
                format!("must be finite and >= 0, got {gamma}"),
            ));
        }
        Ok(GuidanceScale(gamma))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for GuidanceScale {
    fn default() -> Self {
        GuidanceScale(DEFAULT_GAMMA)
    }
}

/// `eps_null + gamma * (eps_text - eps_null)`.
///
/// Evaluated as `gamma * eps_text + (1 - gamma) * eps_null`, which returns
/// each branch unchanged at `gamma = 1` and `gamma = 0`.
pub fn cfg_combine(eps_text: &Latent, eps_null: &Latent, gamma: f64) -> Result<Latent> {
    eps_text.lincomb(gamma, eps_null, 1.0 - gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    FreeGeneration,
    ImageGuided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceStrategy {
    None,
    /// Rollback: the null branch sees the latent `rollback` steps noisier.
    BackD {
        rollback: usize,
        start: usize,
    },
    /// The null branch sees `reference` itself, with no noise.
    ImageD {
        reference: Latent,
        start: usize,
    },
}

impl DisturbanceStrategy {
    /// Disturbance time `s`, if any.
    pub fn start(&self) -> Option<usize> {
        match self {
            DisturbanceStrategy::None => None,
            DisturbanceStrategy::BackD { start, .. } | DisturbanceStrategy::ImageD { start, .. } => {
                Some(*start)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DisturbanceStrategy::None => "none",
            DisturbanceStrategy::BackD { .. } => "backd",
            DisturbanceStrategy::ImageD { .. } => "imaged",
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, DisturbanceStrategy::None)
    }

    /// Range and stride-alignment checks against a concrete grid.
    pub fn validate(&self, grid: &DdimGrid, dim: usize) -> Result<()> {
        let t_max = grid.train_steps();
        let stride = grid.stride();
        let check = |field: &str, v: usize| -> Result<()> {
            if v == 0 || v >= t_max {
                return Err(Error::config(field, format!("{v} must lie in (0, {t_max})")));
            }
            if !v.is_multiple_of(stride) {
                return Err(Error::config(
                    field,
                    format!("{v} is not a multiple of the grid stride {stride}"),
                ));
            }
            Ok(())
        };
        match self {
            DisturbanceStrategy::None => Ok(()),
            DisturbanceStrategy::BackD { rollback, start } => {
                check("b", *rollback)?;
                check("s", *start)
            }
            DisturbanceStrategy::ImageD { reference, start } => {
                check("s", *start)?;
                reference
                    .ensure_dim(dim)
                    .map_err(|e| Error::config("ref", e.to_string()))?;
                reference
                    .ensure_finite("reference")
                    .map_err(|e| Error::config("ref", e.to_string()))
            }
        }
    }
}

/// Where the null-branch latent of a step came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", content = "t", rename_all = "snake_case")]
pub enum SigmaSource {
    SameAsText,
    FromTrajectory(usize),
    ForwardNoised(usize),
    CleanReference,
}

impl SigmaSource {
    pub fn label(&self) -> String {
        match self {
            SigmaSource::SameAsText => "same_as_text".into(),
            SigmaSource::FromTrajectory(t) => format!("trajectory@{t}"),
            SigmaSource::ForwardNoised(t) => format!("forward_noised@{t}"),
            SigmaSource::CleanReference => "clean_reference".into(),
        }
    }
}

/// Everything [`select_sigma`] may need at one step.
pub struct SigmaContext<'a> {
    pub t: usize,
    pub x_t: &'a Latent,
    /// Whether the activation rule switches the disturbance on at `t`.
    pub active: bool,
    pub mode: SamplingMode,
    pub trajectory: &'a Trajectory,
    pub schedule: &'a NoiseSchedule,
    pub grid: &'a DdimGrid,
    /// Clean source image in image-guided mode.
    pub source: Option<&'a Latent>,
    /// The noise used to create the initial `x_s` in image-guided mode.
    pub cached_eps: Option<&'a Latent>,
}

pub fn select_sigma(strategy: &DisturbanceStrategy, ctx: &SigmaContext<'_>) -> Result<(Latent, SigmaSource)> {
    if !ctx.active {
        return Ok((ctx.x_t.clone(), SigmaSource::SameAsText));
    }
    match strategy {
        DisturbanceStrategy::None => Ok((ctx.x_t.clone(), SigmaSource::SameAsText)),
        DisturbanceStrategy::BackD { rollback, .. } => match ctx.mode {
            SamplingMode::FreeGeneration => {
                let at = (ctx.t + rollback).min(ctx.grid.top());
                let x = ctx.trajectory.get(at).ok_or(Error::TrajectoryMiss(at))?;
                Ok((x.clone(), SigmaSource::FromTrajectory(at)))
            }
            SamplingMode::ImageGuided => {
                let eps = ctx.cached_eps.ok_or(Error::MissingCachedNoise)?;
                let source = ctx.source.ok_or_else(|| {
                    Error::Strategy("image-guided back-disturbance without a source image".into())
                })?;
                let at = (ctx.t + rollback).min(ctx.schedule.train_steps());
                let x = ctx.schedule.forward_noise(source, at, eps)?;
                Ok((x, SigmaSource::ForwardNoised(at)))
            }
        },
        DisturbanceStrategy::ImageD { reference, .. } => Ok((reference.clone(), SigmaSource::CleanReference)),
    }
}

/// Guided noise with the null branch evaluated on `x_sigma`. Both branches
/// receive the current `t`, including when `x_sigma` is a clean image.
pub fn disturbed_epsilon(
    denoiser: &dyn Denoiser,
    x_t: &Latent,
    x_sigma: &Latent,
    prompt: Condition,
    gamma: f64,
    t: usize,
) -> Result<Latent> {
    let text = denoiser.epsilon(x_t, prompt, t)?;
    let null = denoiser.epsilon(x_sigma, Condition::Null, t)?;
    cfg_combine(&text, &null, gamma)
}
