//! Classifier-free guidance with disturbed null-branch inputs, on a mixture
//! model whose score is known exactly.

pub mod analysis;
pub mod bundle;
pub mod cli;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod guidance;
pub mod latent;
pub mod sampler;
pub mod schedule;
pub mod seed;
pub mod svg;

pub use denoiser::{Condition, Denoiser, GmmDenoiser, LabeledMixture};
pub use error::{Error, Result};
pub use guidance::{DisturbanceStrategy, GuidanceScale, SamplingMode};
pub use latent::Latent;
pub use sampler::{ActivationRule, RunOutcome, RunRecord, Sampler};
pub use schedule::{DdimGrid, NoiseSchedule, ScheduleParams};
