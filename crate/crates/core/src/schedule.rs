//! Discrete variance schedule, cumulative signal retention and the DDIM
//! timestep grid.
//!
//! `alpha_bars` carries one extra leading entry: `alpha_bars[0] == 1` is the
//! clean-data level, and `alpha_bars[t] = prod_{i <= t} (1 - beta_i)` for
//! `t in 1..=T`. A DDIM step that lands on `t_prev = 0` therefore emits the
//! predicted clean sample with no special casing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;

/// Parameters of a linear beta schedule, as they appear in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.train_steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear interpolation of `train_steps` betas from `beta_start` to
    /// `beta_end` inclusive.
    pub fn linear(train_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if train_steps < 2 {
            return Err(Error::Schedule(format!(
                "need at least 2 training timesteps, got {train_steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Schedule(format!(
                "betas must satisfy 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let last = (train_steps - 1) as f64;
        let betas = (0..train_steps)
            .map(|i| beta_start + (beta_end - beta_start) * (i as f64 / last))
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::Schedule(format!(
                "need at least 2 betas, got {}",
                betas.len()
            )));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Schedule(format!("beta[{i}] = {b} not in (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::Schedule("alpha_bar underflowed to zero".into()));
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    /// Number of training timesteps `T`.
    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    /// `betas[i]` is the variance added going from level `i` to `i + 1`.
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Length `T + 1`, starting at exactly 1.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha_bars[t])
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t > self.train_steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                min: 0,
                max: self.train_steps(),
            });
        }
        Ok(())
    }

    /// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
    pub fn forward_noise(&self, x0: &Latent, t: usize, eps: &Latent) -> Result<Latent> {
        eps.ensure_dim(x0.dim())?;
        let ab = self.alpha_bar(t)?;
        if t == 0 {
            return Ok(x0.clone());
        }
        x0.lincomb(ab.sqrt(), eps, (1.0 - ab).sqrt())
    }

    pub fn grid(&self, steps: usize) -> Result<DdimGrid> {
        DdimGrid::new(self.train_steps(), steps)
    }
}

/// Uniform DDIM subsequence `[T - stride, ..., stride, 0]`.
///
/// Sampling states live on these timesteps; a step moves from `t` to
/// `t - stride`, so a descent from the top executes `steps - 1` updates and a
/// descent from an interior `s` executes `s / stride`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdimGrid {
    train_steps: usize,
    stride: usize,
    timesteps: Vec<usize>,
}

impl DdimGrid {
    pub fn new(train_steps: usize, steps: usize) -> Result<Self> {
        if steps == 0 || steps > train_steps || !train_steps.is_multiple_of(steps) {
            return Err(Error::GridMismatch { train_steps, steps });
        }
        let stride = train_steps / steps;
        let timesteps = (0..steps).rev().map(|i| i * stride).collect();
        Ok(DdimGrid {
            train_steps,
            stride,
            timesteps,
        })
    }

    pub fn steps(&self) -> usize {
        self.timesteps.len()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn train_steps(&self) -> usize {
        self.train_steps
    }

    /// Strictly descending, ending in 0.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// Largest grid timestep; free generation starts from pure noise here.
    pub fn top(&self) -> usize {
        self.timesteps[0]
    }

    pub fn contains(&self, t: usize) -> bool {
        t.is_multiple_of(self.stride) && t <= self.top()
    }

    pub fn ensure_on_grid(&self, t: usize) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::OffGrid {
                t,
                stride: self.stride,
            })
        }
    }

    /// Timestep following `t` in a descent, `None` at 0.
    pub fn next_below(&self, t: usize) -> Option<usize> {
        t.checked_sub(self.stride)
    }

    /// Grid timesteps from `from` (inclusive) down to 0.
    pub fn descent_from(&self, from: usize) -> Result<&[usize]> {
        self.ensure_on_grid(from)?;
        let idx = (self.top() - from) / self.stride;
        Ok(&self.timesteps[idx..])
    }

    /// Number of DDIM updates executed when a descent starts at `from`.
    pub fn updates_from(&self, from: usize) -> Result<usize> {
        self.ensure_on_grid(from)?;
        Ok(from / self.stride)
    }
}
