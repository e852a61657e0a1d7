//! Deterministic DDIM integration with optional null-branch disturbance.
//!
//! Free generation starts from a standard-normal latent at the top of the
//! grid; image-guided runs forward-noise a reference to `s` and descend from
//! there. Every executed update produces one [`StepRow`].

use serde::{Deserialize, Serialize};

use crate::denoiser::{Condition, Denoiser};
use crate::error::{Error, Result};
use crate::guidance::{
    cfg_combine, select_sigma, DisturbanceStrategy, GuidanceScale, SamplingMode, SigmaContext, SigmaSource,
};
use crate::latent::Latent;
use crate::schedule::{DdimGrid, NoiseSchedule};
use crate::seed::chain_rng;

/// One deterministic DDIM update from level `t` to `t_prev`:
///
/// ```text
/// x_prev = sqrt(ab_prev) * (x_t - sqrt(1 - ab_t) * eps) / sqrt(ab_t) + sqrt(1 - ab_prev) * eps
/// ```
pub fn ddim_step(
    schedule: &NoiseSchedule,
    x_t: &Latent,
    eps: &Latent,
    t: usize,
    t_prev: usize,
) -> Result<Latent> {
    if t <= t_prev {
        return Err(Error::Strategy(format!(
            "ddim step must descend, got t={t} -> t_prev={t_prev}"
        )));
    }
    eps.ensure_dim(x_t.dim())?;
    let ab = schedule.alpha_bar(t)?;
    let ab_prev = schedule.alpha_bar(t_prev)?;
    let (sab, s1) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (sab_prev, s1_prev) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let out = Latent(
        x_t.as_slice()
            .iter()
            .zip(eps.as_slice())
            .map(|(x, e)| sab_prev * ((x - s1 * e) / sab) + s1_prev * e)
            .collect(),
    );
    out.ensure_finite("ddim step")?;
    Ok(out)
}

/// Latents visited by one descent, a contiguous run of grid timesteps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    stride: usize,
    entries: Vec<(usize, Latent)>,
}

impl Trajectory {
    pub fn new(stride: usize) -> Self {
        Trajectory {
            stride,
            entries: Vec::new(),
        }
    }

    /// Appends the latent at `t`, which must sit one stride below the last key.
    pub fn push(&mut self, t: usize, x: Latent) -> Result<()> {
        if let Some((last, _)) = self.entries.last() {
            if last.checked_sub(self.stride) != Some(t) {
                return Err(Error::Strategy(format!(
                    "trajectory key {t} does not follow {last} with stride {}",
                    self.stride
                )));
            }
        } else if !t.is_multiple_of(self.stride) {
            return Err(Error::OffGrid {
                t,
                stride: self.stride,
            });
        }
        self.entries.push((t, x));
        Ok(())
    }

    pub fn get(&self, t: usize) -> Option<&Latent> {
        let (first, _) = self.entries.first()?;
        if t > *first || !(first - t).is_multiple_of(self.stride) {
            return None;
        }
        self.entries.get((first - t) / self.stride).map(|(_, x)| x)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Latent)> {
        self.entries.iter().map(|(t, x)| (*t, x))
    }

    pub fn timesteps(&self) -> Vec<usize> {
        self.entries.iter().map(|(t, _)| *t).collect()
    }
}

/// When a free-generation disturbance switches on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationRule {
    /// Active for `t <= s`.
    #[default]
    AtOrBelow,
    /// Active for `t < s`.
    Below,
}

impl ActivationRule {
    pub fn is_active(self, t: usize, start: usize) -> bool {
        match self {
            ActivationRule::AtOrBelow => t <= start,
            ActivationRule::Below => t < start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: usize,
    pub t_prev: usize,
    pub sigma_source: SigmaSource,
    /// `|eps*_cfg - eps_cfg|`.
    pub deviation_norm: f64,
    /// `|eps(x_sigma | null) - eps(x_t | null)|`.
    pub null_branch_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub train_steps: usize,
    pub beta_first: f64,
    pub beta_last: f64,
    pub grid_steps: usize,
    pub stride: usize,
    pub strategy: DisturbanceStrategy,
    pub gamma: f64,
    pub seed: u64,
    pub prompt: Condition,
    pub mode: SamplingMode,
    pub activation: ActivationRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Latent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunSnapshot,
    pub steps: Vec<StepRow>,
    pub final_sample: Latent,
    /// Same seed, no disturbance.
    pub baseline_final: Latent,
}

impl RunRecord {
    pub fn executed_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn displacement(&self) -> f64 {
        self.final_sample.distance(&self.baseline_final)
    }

    pub fn mean_deviation(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|r| r.deviation_norm).sum::<f64>() / self.steps.len() as f64
    }

    pub fn max_deviation(&self) -> f64 {
        self.steps.iter().map(|r| r.deviation_norm).fold(0.0, f64::max)
    }

    pub fn gap_stats(&self) -> (f64, f64) {
        if self.steps.is_empty() {
            return (0.0, 0.0);
        }
        let mean = self.steps.iter().map(|r| r.null_branch_gap).sum::<f64>() / self.steps.len() as f64;
        let max = self.steps.iter().map(|r| r.null_branch_gap).fold(0.0, f64::max);
        (mean, max)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub sample: Latent,
    pub record: RunRecord,
    pub trajectory: Trajectory,
}

/// Picks the null-branch latent for each step of a chain.
pub trait SigmaSelector {
    fn select(&self, ctx: &SigmaContext<'_>) -> Result<(Latent, SigmaSource)>;
}

impl SigmaSelector for DisturbanceStrategy {
    fn select(&self, ctx: &SigmaContext<'_>) -> Result<(Latent, SigmaSource)> {
        select_sigma(self, ctx)
    }
}

/// Result of a single descent, before baseline bookkeeping.
#[derive(Debug, Clone)]
pub struct Chain {
    pub sample: Latent,
    pub steps: Vec<StepRow>,
    pub trajectory: Trajectory,
}

/// Starting point and disturbance window of a descent.
pub struct ChainSpec<'a> {
    pub from: usize,
    pub x_start: Latent,
    pub mode: SamplingMode,
    /// Disturbance gate: `None` means active at every step.
    pub start: Option<usize>,
    pub source: Option<&'a Latent>,
    pub cached_eps: Option<&'a Latent>,
}

#[derive(Clone, Copy)]
pub struct Sampler<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub grid: &'a DdimGrid,
    pub prompt: Condition,
    pub gamma: GuidanceScale,
    pub activation: ActivationRule,
}

impl<'a> Sampler<'a> {
    pub fn new(
        denoiser: &'a dyn Denoiser,
        schedule: &'a NoiseSchedule,
        grid: &'a DdimGrid,
        prompt: Condition,
        gamma: GuidanceScale,
    ) -> Self {
        Sampler {
            denoiser,
            schedule,
            grid,
            prompt,
            gamma,
            activation: ActivationRule::default(),
        }
    }

    pub fn with_activation(mut self, rule: ActivationRule) -> Self {
        self.activation = rule;
        self
    }

    fn snapshot(
        &self,
        strategy: &DisturbanceStrategy,
        seed: u64,
        mode: SamplingMode,
        reference: Option<&Latent>,
    ) -> RunSnapshot {
        RunSnapshot {
            train_steps: self.schedule.train_steps(),
            beta_first: self.schedule.betas()[0],
            beta_last: *self.schedule.betas().last().unwrap(),
            grid_steps: self.grid.steps(),
            stride: self.grid.stride(),
            strategy: strategy.clone(),
            gamma: self.gamma.value(),
            seed,
            prompt: self.prompt,
            mode,
            activation: self.activation,
            reference: reference.cloned(),
        }
    }

    /// Runs one descent from `spec.from` to 0.
    pub fn run_chain(&self, spec: ChainSpec<'_>, selector: &dyn SigmaSelector) -> Result<Chain> {
        let gamma = self.gamma.value();
        spec.x_start.ensure_dim(self.denoiser.dimension())?;
        let mut x = spec.x_start;
        let mut trajectory = Trajectory::new(self.grid.stride());
        trajectory.push(spec.from, x.clone())?;
        let mut steps = Vec::with_capacity(self.grid.updates_from(spec.from)?);

        for &t in self.grid.descent_from(spec.from)? {
            let Some(t_prev) = self.grid.next_below(t) else {
                break;
            };
            let active = match spec.start {
                None => true,
                Some(s) => self.activation.is_active(t, s),
            };
            let ctx = SigmaContext {
                t,
                x_t: &x,
                active,
                mode: spec.mode,
                trajectory: &trajectory,
                schedule: self.schedule,
                grid: self.grid,
                source: spec.source,
                cached_eps: spec.cached_eps,
            };
            let (x_sigma, sigma_source) = selector.select(&ctx)?;

            let eps_text = self.denoiser.epsilon(&x, self.prompt, t)?;
            let eps_null_sigma = self.denoiser.epsilon(&x_sigma, Condition::Null, t)?;
            let eps = cfg_combine(&eps_text, &eps_null_sigma, gamma)?;

            let (deviation_norm, null_branch_gap) = if sigma_source == SigmaSource::SameAsText {
                (0.0, 0.0)
            } else {
                let eps_null = self.denoiser.epsilon(&x, Condition::Null, t)?;
                let plain = cfg_combine(&eps_text, &eps_null, gamma)?;
                (eps.distance(&plain), eps_null_sigma.distance(&eps_null))
            };

            x = ddim_step(self.schedule, &x, &eps, t, t_prev)?;
            trajectory.push(t_prev, x.clone())?;
            steps.push(StepRow {
                t,
                t_prev,
                sigma_source,
                deviation_norm,
                null_branch_gap,
            });
        }

        Ok(Chain {
            sample: x,
            steps,
            trajectory,
        })
    }

    /// Free generation with Back-D (or no disturbance).
    pub fn sample_free(&self, strategy: &DisturbanceStrategy, seed: u64) -> Result<RunOutcome> {
        if matches!(strategy, DisturbanceStrategy::ImageD { .. }) {
            return Err(Error::Strategy(
                "image disturbance needs a reference image; use cartoonize".into(),
            ));
        }
        strategy.validate(self.grid, self.denoiser.dimension())?;

        let mut rng = chain_rng(seed);
        let x_top = Latent::standard_normal(self.denoiser.dimension(), &mut rng);
        let spec = |x: Latent| ChainSpec {
            from: self.grid.top(),
            x_start: x,
            mode: SamplingMode::FreeGeneration,
            start: strategy.start(),
            source: None,
            cached_eps: None,
        };
        let chain = self.run_chain(spec(x_top.clone()), strategy)?;
        let baseline_final = if strategy.is_none() {
            chain.sample.clone()
        } else {
            self.run_chain(spec(x_top), &DisturbanceStrategy::None)?.sample
        };

        Ok(self.finish(
            chain,
            baseline_final,
            strategy,
            seed,
            SamplingMode::FreeGeneration,
            None,
        ))
    }

    /// Image cartoonization: noise `x_ref` to `s`, then descend with the
    /// disturbance applied at every step.
    pub fn cartoonize(
        &self,
        strategy: &DisturbanceStrategy,
        x_ref: &Latent,
        seed: u64,
    ) -> Result<RunOutcome> {
        let start = strategy.start().ok_or_else(|| {
            Error::Strategy("cartoonize needs backd or imaged; plain img2img is the baseline mode".into())
        })?;
        strategy.validate(self.grid, self.denoiser.dimension())?;
        x_ref.ensure_dim(self.denoiser.dimension())?;

        let eps = Latent::standard_normal(self.denoiser.dimension(), &mut chain_rng(seed));
        let x_s = self.schedule.forward_noise(x_ref, start, &eps)?;
        let chain = self.run_chain(
            ChainSpec {
                from: start,
                x_start: x_s.clone(),
                mode: SamplingMode::ImageGuided,
                start: None,
                source: Some(x_ref),
                cached_eps: Some(&eps),
            },
            strategy,
        )?;
        let baseline = self.run_chain(
            ChainSpec {
                from: start,
                x_start: x_s,
                mode: SamplingMode::ImageGuided,
                start: None,
                source: Some(x_ref),
                cached_eps: Some(&eps),
            },
            &DisturbanceStrategy::None,
        )?;
        Ok(self.finish(
            chain,
            baseline.sample,
            strategy,
            seed,
            SamplingMode::ImageGuided,
            Some(x_ref),
        ))
    }

    /// Plain img2img: noise to `start` and run undisturbed guidance.
    /// `start = 0` returns `x_ref` unchanged.
    pub fn img2img(&self, start: usize, x_ref: &Latent, seed: u64) -> Result<RunOutcome> {
        if start >= self.schedule.train_steps() || !self.grid.contains(start) {
            return Err(Error::config(
                "s",
                format!(
                    "{start} must be a grid timestep below {} (stride {})",
                    self.schedule.train_steps(),
                    self.grid.stride()
                ),
            ));
        }
        x_ref.ensure_dim(self.denoiser.dimension())?;
        let eps = Latent::standard_normal(self.denoiser.dimension(), &mut chain_rng(seed));
        let x_s = self.schedule.forward_noise(x_ref, start, &eps)?;
        let chain = self.run_chain(
            ChainSpec {
                from: start,
                x_start: x_s,
                mode: SamplingMode::ImageGuided,
                start: None,
                source: Some(x_ref),
                cached_eps: Some(&eps),
            },
            &DisturbanceStrategy::None,
        )?;
        let baseline = chain.sample.clone();
        Ok(self.finish(
            chain,
            baseline,
            &DisturbanceStrategy::None,
            seed,
            SamplingMode::ImageGuided,
            Some(x_ref),
        ))
    }

    fn finish(
        &self,
        chain: Chain,
        baseline_final: Latent,
        strategy: &DisturbanceStrategy,
        seed: u64,
        mode: SamplingMode,
        reference: Option<&Latent>,
    ) -> RunOutcome {
        RunOutcome {
            sample: chain.sample.clone(),
            record: RunRecord {
                config: self.snapshot(strategy, seed, mode, reference),
                steps: chain.steps,
                final_sample: chain.sample,
                baseline_final,
            },
            trajectory: chain.trajectory,
        }
    }
}
