//! Sweeps and studies that turn run records into tables.
//!
//! Nothing here asserts a perceptual conclusion. The tables carry proxies
//! (log-likelihood under the prompt class, displacement from the same-seed
//! baseline, pairwise spread) and leave interpretation to the reader.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{log_density, Condition, GmmDenoiser, LabeledMixture};
use crate::error::{Error, Result};
use crate::guidance::{DisturbanceStrategy, GuidanceScale, SamplingMode};
use crate::latent::Latent;
use crate::sampler::{ActivationRule, RunOutcome, Sampler};
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::seed::{chain_rng, SeedSequence};

/// 17 significant digits, enough to reload an `f64` bit for bit.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_latent(x: &Latent) -> String {
    x.as_slice()
        .iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Which sampler entry point a run or cell uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyChoice {
    /// Free generation without disturbance.
    None,
    BackD,
    ImageD,
    /// Plain img2img: forward-noise the reference, undisturbed guidance.
    Baseline,
}

impl StrategyChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(StrategyChoice::None),
            "backd" => Ok(StrategyChoice::BackD),
            "imaged" => Ok(StrategyChoice::ImageD),
            "baseline" => Ok(StrategyChoice::Baseline),
            other => Err(Error::config(
                "strategy",
                format!("`{other}` is not one of none|backd|imaged|baseline"),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyChoice::None => "none",
            StrategyChoice::BackD => "backd",
            StrategyChoice::ImageD => "imaged",
            StrategyChoice::Baseline => "baseline",
        }
    }
}

/// Settings shared by every run of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub schedule: ScheduleParams,
    pub steps: usize,
    pub gamma: f64,
    pub prompt: Condition,
    pub activation: ActivationRule,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            schedule: ScheduleParams::default(),
            steps: 100,
            gamma: crate::guidance::DEFAULT_GAMMA,
            prompt: Condition::Class(0),
            activation: ActivationRule::default(),
        }
    }
}

/// A denoiser plus schedule built once and shared by every cell.
pub struct Lab {
    pub mixture: LabeledMixture,
    pub schedule: NoiseSchedule,
    pub denoiser: GmmDenoiser,
}

impl Lab {
    pub fn new(mixture: LabeledMixture, schedule: ScheduleParams) -> Result<Self> {
        let schedule = schedule.build()?;
        Ok(Lab {
            denoiser: GmmDenoiser::new(mixture.clone(), schedule.clone()),
            mixture,
            schedule,
        })
    }

    /// One run described by `choice`. `x_ref` is required for image-guided
    /// choices. `rollback` is ignored by Image-D and the baselines.
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        &self,
        settings: &RunSettings,
        choice: StrategyChoice,
        rollback: usize,
        start: usize,
        x_ref: Option<&Latent>,
        null_reference: Option<&Latent>,
        seed: u64,
    ) -> Result<RunOutcome> {
        self.mixture.check_condition(settings.prompt)?;
        let grid = self.schedule.grid(settings.steps)?;
        let sampler = Sampler::new(
            &self.denoiser,
            &self.schedule,
            &grid,
            settings.prompt,
            GuidanceScale::new(settings.gamma)?,
        )
        .with_activation(settings.activation);
        let need_ref =
            || x_ref.ok_or_else(|| Error::config("ref", "image-guided runs need a reference latent"));
        match choice {
            StrategyChoice::None => sampler.sample_free(&DisturbanceStrategy::None, seed),
            StrategyChoice::BackD => {
                let strategy = DisturbanceStrategy::BackD { rollback, start };
                match x_ref {
                    Some(r) => sampler.cartoonize(&strategy, r, seed),
                    None => sampler.sample_free(&strategy, seed),
                }
            }
            StrategyChoice::ImageD => {
                let r = need_ref()?;
                let reference = null_reference.unwrap_or(r).clone();
                sampler.cartoonize(&DisturbanceStrategy::ImageD { reference, start }, r, seed)
            }
            StrategyChoice::Baseline => sampler.img2img(start, need_ref()?, seed),
        }
    }

    pub fn log_likelihood(&self, x: &Latent, prompt: Condition) -> Result<f64> {
        log_density(&self.mixture, &self.schedule, x, prompt, 0)
    }

    fn nearest_in_prompt(&self, x: &Latent, prompt: Condition) -> Result<f64> {
        match prompt {
            Condition::Class(c) => self.mixture.nearest_mode_in_class(x, c),
            Condition::Null => Ok(self.mixture.nearest_mode(x).1),
        }
    }
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

pub const DEFAULT_CELL_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub mode: SamplingMode,
    /// Strategy applied in cells where both `b` and `s` are non-zero
    /// (`backd` or `imaged`).
    pub strategy: StrategyChoice,
    /// Rollback values; 0 stands for "no disturbance".
    pub rollback: Vec<usize>,
    /// Disturbance times; 0 stands for "no disturbance" in free generation.
    pub start: Vec<usize>,
    pub gamma: Vec<f64>,
    pub steps: Vec<usize>,
    pub seeds: Vec<u64>,
    pub prompt: Condition,
    pub schedule: ScheduleParams,
    #[serde(default)]
    pub activation: ActivationRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Latent>,
    /// Upper bound on `cells * seeds`.
    pub cap: usize,
}

impl SweepSpec {
    /// Free-generation Back-D sweep with paper-style defaults on the other axes.
    pub fn free_generation(prompt: Condition) -> Self {
        SweepSpec {
            mode: SamplingMode::FreeGeneration,
            strategy: StrategyChoice::BackD,
            rollback: vec![300],
            start: vec![300],
            gamma: vec![crate::guidance::DEFAULT_GAMMA],
            steps: vec![100],
            seeds: vec![0],
            prompt,
            schedule: ScheduleParams::default(),
            activation: ActivationRule::default(),
            reference: None,
            cap: DEFAULT_CELL_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub steps: usize,
    pub gamma: f64,
    pub strategy: StrategyChoice,
    pub rollback: usize,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub cell: SweepCell,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub seed: u64,
    pub executed_steps: usize,
    pub final_sample: Latent,
    pub mean_deviation: f64,
    pub max_deviation: f64,
    pub displacement: f64,
    pub log_likelihood: f64,
    pub nearest_mode_distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SkippedCell>,
}

pub const SWEEP_COLUMNS: &[&str] = &[
    "steps",
    "gamma",
    "strategy",
    "b",
    "s",
    "seed",
    "executed_steps",
    "final_sample",
    "mean_deviation",
    "max_deviation",
    "displacement",
    "log_likelihood",
    "nearest_mode_distance",
];
pub const SWEEP_FORMAT: &str = "#format=sweep-table/1";

impl SweepTable {
    /// Rows grouped by `key`, averaging the log-likelihood.
    pub fn mean_log_likelihood_by<K: PartialEq + Clone>(
        &self,
        key: impl Fn(&SweepRow) -> K,
    ) -> Vec<(K, f64)> {
        let mut groups: Vec<(K, f64, usize)> = Vec::new();
        for row in &self.rows {
            let k = key(row);
            match groups.iter_mut().find(|(g, _, _)| *g == k) {
                Some(g) => {
                    g.1 += row.log_likelihood;
                    g.2 += 1;
                }
                None => groups.push((k, row.log_likelihood, 1)),
            }
        }
        groups.into_iter().map(|(k, s, n)| (k, s / n as f64)).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = w;
        writeln!(w, "{SWEEP_FORMAT}").map_err(|e| Error::io("<sweep csv>", e))?;
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Analysis(format!("csv: {e}"));
        out.write_record(SWEEP_COLUMNS).map_err(csv_err)?;
        for r in &self.rows {
            out.write_record([
                r.cell.steps.to_string(),
                fmt_f64(r.cell.gamma),
                r.cell.strategy.name().to_string(),
                r.cell.rollback.to_string(),
                r.cell.start.to_string(),
                r.seed.to_string(),
                r.executed_steps.to_string(),
                fmt_latent(&r.final_sample),
                fmt_f64(r.mean_deviation),
                fmt_f64(r.max_deviation),
                fmt_f64(r.displacement),
                fmt_f64(r.log_likelihood),
                fmt_f64(r.nearest_mode_distance),
            ])
            .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<sweep csv>", e))?;
        Ok(())
    }

    pub fn write_skipped_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Analysis(format!("csv: {e}"));
        out.write_record(["steps", "gamma", "strategy", "b", "s", "reason"])
            .map_err(csv_err)?;
        for s in &self.skipped {
            out.write_record([
                s.cell.steps.to_string(),
                fmt_f64(s.cell.gamma),
                s.cell.strategy.name().to_string(),
                s.cell.rollback.to_string(),
                s.cell.start.to_string(),
                s.reason.clone(),
            ])
            .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<skipped csv>", e))?;
        Ok(())
    }
}

/// Expands the axes into cells. Cells without an active disturbance collapse
/// to one baseline cell per remaining key.
pub fn expand_cells(spec: &SweepSpec) -> Vec<SweepCell> {
    let mut cells: Vec<SweepCell> = Vec::new();
    let mut push = |c: SweepCell| {
        if !cells.contains(&c) {
            cells.push(c);
        }
    };
    for &steps in &spec.steps {
        for &gamma in &spec.gamma {
            for &rollback in &spec.rollback {
                for &start in &spec.start {
                    let cell = match (spec.mode, spec.strategy) {
                        (SamplingMode::FreeGeneration, _) if rollback == 0 || start == 0 => SweepCell {
                            steps,
                            gamma,
                            strategy: StrategyChoice::None,
                            rollback: 0,
                            start: 0,
                        },
                        (SamplingMode::FreeGeneration, strategy) => SweepCell {
                            steps,
                            gamma,
                            strategy,
                            rollback,
                            start,
                        },
                        (SamplingMode::ImageGuided, StrategyChoice::ImageD) if start > 0 => SweepCell {
                            steps,
                            gamma,
                            strategy: StrategyChoice::ImageD,
                            rollback: 0,
                            start,
                        },
                        (SamplingMode::ImageGuided, StrategyChoice::BackD) if start > 0 && rollback > 0 => {
                            SweepCell {
                                steps,
                                gamma,
                                strategy: StrategyChoice::BackD,
                                rollback,
                                start,
                            }
                        }
                        (SamplingMode::ImageGuided, _) => SweepCell {
                            steps,
                            gamma,
                            strategy: StrategyChoice::Baseline,
                            rollback: 0,
                            start,
                        },
                    };
                    push(cell);
                }
            }
        }
    }
    cells
}

fn cell_problem(cell: &SweepCell, train_steps: usize) -> Option<String> {
    if cell.steps == 0 || !train_steps.is_multiple_of(cell.steps) {
        return Some(format!("{} steps do not divide {train_steps}", cell.steps));
    }
    let stride = train_steps / cell.steps;
    for (name, v) in [("b", cell.rollback), ("s", cell.start)] {
        if v % stride != 0 {
            return Some(format!("{name}={v} is not a multiple of stride {stride}"));
        }
        if v >= train_steps {
            return Some(format!("{name}={v} must be below {train_steps}"));
        }
    }
    if !(cell.gamma.is_finite() && cell.gamma >= 0.0) {
        return Some(format!("gamma={} must be finite and >= 0", cell.gamma));
    }
    None
}

pub fn run_sweep(lab: &Lab, spec: &SweepSpec) -> Result<SweepTable> {
    if spec.seeds.is_empty() {
        return Err(Error::config("seeds", "sweep needs at least one seed"));
    }
    if spec.mode == SamplingMode::ImageGuided && spec.reference.is_none() {
        return Err(Error::config(
            "ref",
            "image-guided sweeps need a reference latent",
        ));
    }
    if lab.schedule != spec.schedule.build()? {
        return Err(Error::config(
            "schedule",
            "sweep schedule differs from the lab schedule",
        ));
    }
    let cells = expand_cells(spec);
    let total = cells.len() * spec.seeds.len();
    if total > spec.cap {
        return Err(Error::SweepCap {
            cells: total,
            cap: spec.cap,
        });
    }

    let mut skipped = Vec::new();
    let mut valid = Vec::new();
    for cell in cells {
        match cell_problem(&cell, lab.schedule.train_steps()) {
            Some(reason) => skipped.push(SkippedCell { cell, reason }),
            None => valid.push(cell),
        }
    }

    let jobs: Vec<(&SweepCell, u64)> = valid
        .iter()
        .flat_map(|c| spec.seeds.iter().map(move |s| (c, *s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|(cell, seed)| {
            let settings = RunSettings {
                schedule: spec.schedule,
                steps: cell.steps,
                gamma: cell.gamma,
                prompt: spec.prompt,
                activation: spec.activation,
            };
            let out = lab.run(
                &settings,
                cell.strategy,
                cell.rollback,
                cell.start,
                spec.reference.as_ref(),
                None,
                *seed,
            )?;
            Ok(SweepRow {
                cell: (*cell).clone(),
                seed: *seed,
                executed_steps: out.record.executed_steps(),
                mean_deviation: out.record.mean_deviation(),
                max_deviation: out.record.max_deviation(),
                displacement: out.record.displacement(),
                log_likelihood: lab.log_likelihood(&out.sample, spec.prompt)?,
                nearest_mode_distance: lab.nearest_in_prompt(&out.sample, spec.prompt)?,
                final_sample: out.sample,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { rows, skipped })
}

// ---------------------------------------------------------------------------
// Correlation study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationSetting {
    Irrelevant,
    Isomorphic,
    RolledBack,
    Reference,
}

impl CorrelationSetting {
    pub const ALL: [CorrelationSetting; 4] = [
        CorrelationSetting::Irrelevant,
        CorrelationSetting::Isomorphic,
        CorrelationSetting::RolledBack,
        CorrelationSetting::Reference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorrelationSetting::Irrelevant => "irrelevant",
            CorrelationSetting::Isomorphic => "isomorphic",
            CorrelationSetting::RolledBack => "rolled_back",
            CorrelationSetting::Reference => "reference",
        }
    }
}

/// Distribution the irrelevant null input is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IrrelevantSource {
    /// A sample of the class whose nearest mode lies farthest from `x_ref`.
    OtherClass,
    /// Standard normal, independent of the data.
    StandardNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationConfig {
    pub settings: RunSettings,
    pub start: usize,
    pub rollback: usize,
    /// Timestep at which the input proxy is reported; defaults to `s / 2`
    /// rounded down onto the grid.
    pub probe_t: Option<usize>,
    /// Norm of the isomorphic perturbation as a fraction of `|x_ref|`.
    pub iso_fraction: f64,
    pub irrelevant: IrrelevantSource,
    pub seeds: Vec<u64>,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig {
            settings: RunSettings::default(),
            start: 300,
            rollback: 150,
            probe_t: None,
            iso_fraction: 1.0,
            irrelevant: IrrelevantSource::OtherClass,
            seeds: SeedSequence::new(0).chains(8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub setting: CorrelationSetting,
    pub seed: u64,
    pub probe_t: usize,
    /// Expected cosine between the null input at `probe_t` and `x_ref`.
    pub proxy: f64,
    /// Cosine between the latent actually fed to the null branch and `x_ref`.
    pub realized_cosine: f64,
    pub gap_mean: f64,
    pub gap_max: f64,
    pub displacement: f64,
    pub log_likelihood: f64,
    /// Isomorphic perturbation norm, or the irrelevant input's source.
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub rows: Vec<CorrelationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub setting: CorrelationSetting,
    pub runs: usize,
    pub proxy_mean: f64,
    pub gap_mean: f64,
    pub displacement_mean: f64,
    pub log_likelihood_mean: f64,
}

impl CorrelationTable {
    pub fn for_seed(&self, seed: u64) -> Vec<&CorrelationRow> {
        self.rows.iter().filter(|r| r.seed == seed).collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = Vec::new();
        for r in &self.rows {
            if !s.contains(&r.seed) {
                s.push(r.seed);
            }
        }
        s
    }

    /// Whether `proxy` strictly increases irrelevant < isomorphic <
    /// rolled-back < reference for `seed`.
    pub fn proxy_ordered(&self, seed: u64) -> bool {
        let rows = self.for_seed(seed);
        let get = |s| rows.iter().find(|r| r.setting == s).map(|r| r.proxy);
        let vals: Option<Vec<f64>> = CorrelationSetting::ALL.iter().map(|s| get(*s)).collect();
        match vals {
            Some(v) => v.windows(2).all(|w| w[0] < w[1]),
            None => false,
        }
    }

    pub fn summary(&self) -> Vec<CorrelationSummary> {
        CorrelationSetting::ALL
            .iter()
            .map(|&setting| {
                let rows: Vec<&CorrelationRow> = self.rows.iter().filter(|r| r.setting == setting).collect();
                let n = rows.len().max(1) as f64;
                let mean = |f: fn(&CorrelationRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
                CorrelationSummary {
                    setting,
                    runs: rows.len(),
                    proxy_mean: mean(|r| r.proxy),
                    gap_mean: mean(|r| r.gap_mean),
                    displacement_mean: mean(|r| r.displacement),
                    log_likelihood_mean: mean(|r| r.log_likelihood),
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Analysis(format!("csv: {e}"));
        out.write_record([
            "setting",
            "seed",
            "probe_t",
            "proxy",
            "realized_cosine",
            "gap_mean",
            "gap_max",
            "displacement",
            "log_likelihood",
            "note",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            out.write_record([
                r.setting.name().to_string(),
                r.seed.to_string(),
                r.probe_t.to_string(),
                fmt_f64(r.proxy),
                fmt_f64(r.realized_cosine),
                fmt_f64(r.gap_mean),
                fmt_f64(r.gap_max),
                fmt_f64(r.displacement),
                fmt_f64(r.log_likelihood),
                r.note.clone(),
            ])
            .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<correlation csv>", e))?;
        Ok(())
    }
}

/// A null input described by its clean content, signal coefficient and
/// per-coordinate noise variance: `x = signal * content + sqrt(noise_var) * eps`.
#[derive(Debug, Clone)]
pub struct NullInput {
    pub content: Latent,
    pub signal: f64,
    pub noise_var: f64,
}

impl NullInput {
    pub fn clean(content: Latent) -> Self {
        NullInput {
            content,
            signal: 1.0,
            noise_var: 0.0,
        }
    }

    /// Cosine with `x_ref` after replacing the noise terms by their
    /// expectations (`E[eps . v] = 0`, `E|eps|^2 = d`). Clean inputs get
    /// the plain cosine.
    pub fn expected_cosine(&self, x_ref: &Latent) -> f64 {
        let d = self.content.dim() as f64;
        let num = self.signal * self.content.dot(x_ref);
        let energy = self.signal * self.signal * self.content.dot(&self.content) + self.noise_var * d;
        let denom = energy.sqrt() * x_ref.norm();
        if denom == 0.0 {
            0.0
        } else {
            num / denom
        }
    }
}

/// Input proxy for the null branch of an image-guided run at `probe_t`.
///
/// Without disturbance the null branch sees `x_ref` noised to `probe_t`; Back-D
/// sees it noised to `min(probe_t + b, T)`; Image-D sees its clean reference.
pub fn strategy_proxy(
    schedule: &NoiseSchedule,
    strategy: &DisturbanceStrategy,
    x_ref: &Latent,
    probe_t: usize,
) -> Result<f64> {
    let noised = |level: usize| -> Result<NullInput> {
        let ab = schedule.alpha_bar(level)?;
        Ok(NullInput {
            content: x_ref.clone(),
            signal: ab.sqrt(),
            noise_var: 1.0 - ab,
        })
    };
    let input = match strategy {
        DisturbanceStrategy::None => noised(probe_t)?,
        DisturbanceStrategy::BackD { rollback, .. } => {
            noised((probe_t + rollback).min(schedule.train_steps()))?
        }
        DisturbanceStrategy::ImageD { reference, .. } => NullInput::clean(reference.clone()),
    };
    input.content.ensure_dim(x_ref.dim())?;
    Ok(input.expected_cosine(x_ref))
}

/// Default probe time: `s / 2` rounded down onto a grid of the given stride.
pub fn default_probe_t(start: usize, stride: usize) -> usize {
    (start / 2) / stride * stride
}

/// `x_ref` plus a perturbation of norm `fraction * |x_ref|` orthogonal to it.
///
/// The direction rotates each coordinate pair by 90 degrees, a fixed smooth
/// map that keeps the perturbation orthogonal in any dimension; a trailing
/// odd coordinate is left unperturbed.
pub fn isomorphic_input(x_ref: &Latent, fraction: f64) -> Result<Latent> {
    let v = x_ref.as_slice();
    let mut dir = vec![0.0; v.len()];
    for i in (0..v.len().saturating_sub(1)).step_by(2) {
        dir[i] = -v[i + 1];
        dir[i + 1] = v[i];
    }
    let dir = Latent(dir);
    let n = dir.norm();
    if n == 0.0 {
        return Err(Error::Analysis(
            "reference has no energy in any coordinate pair; cannot build an orthogonal perturbation".into(),
        ));
    }
    x_ref.lincomb(1.0, &dir, fraction * x_ref.norm() / n)
}

/// The irrelevant null input for one seed, with a label naming its source.
pub fn irrelevant_input(
    lab: &Lab,
    x_ref: &Latent,
    source: IrrelevantSource,
    seed: u64,
) -> Result<(Latent, String)> {
    let mut rng = chain_rng(SeedSequence::new(seed).chain(1));
    match source {
        IrrelevantSource::StandardNormal => Ok((
            Latent::standard_normal(x_ref.dim(), &mut rng),
            "standard_normal".into(),
        )),
        IrrelevantSource::OtherClass => {
            let own = lab.mixture.nearest_mode(x_ref).0;
            let mut other = None;
            let mut best = f64::NEG_INFINITY;
            for l in lab.mixture.labels().filter(|l| *l != own) {
                let d = lab.mixture.nearest_mode_in_class(x_ref, l)?;
                if d > best {
                    best = d;
                    other = Some(l);
                }
            }
            let other =
                other.ok_or_else(|| Error::Analysis("irrelevant input needs a second class".into()))?;
            let x = lab
                .mixture
                .sample(Condition::Class(other), 1, &mut rng)?
                .remove(0);
            Ok((x, format!("class:{other}")))
        }
    }
}

/// Runs image cartoonization with each of the four null-input settings on
/// shared seeds and reports input and output statistics per run.
pub fn correlation_experiment(
    lab: &Lab,
    x_ref: &Latent,
    cfg: &CorrelationConfig,
) -> Result<CorrelationTable> {
    let grid = lab.schedule.grid(cfg.settings.steps)?;
    let probe_t = match cfg.probe_t {
        Some(t) => {
            grid.ensure_on_grid(t)?;
            t
        }
        None => default_probe_t(cfg.start, grid.stride()),
    };
    if probe_t == 0 || probe_t > cfg.start {
        return Err(Error::config(
            "probe_t",
            format!("{probe_t} must lie in (0, s={}]", cfg.start),
        ));
    }
    let x_iso = isomorphic_input(x_ref, cfg.iso_fraction)?;
    let rolled_t = (probe_t + cfg.rollback).min(lab.schedule.train_steps());

    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (x_irr, irr_note) = irrelevant_input(lab, x_ref, cfg.irrelevant, seed)?;
            let eps = Latent::standard_normal(x_ref.dim(), &mut chain_rng(seed));
            let mut rows = Vec::with_capacity(4);
            for setting in CorrelationSetting::ALL {
                let (strategy, used, note, out) = match setting {
                    CorrelationSetting::Irrelevant => (
                        DisturbanceStrategy::ImageD {
                            reference: x_irr.clone(),
                            start: cfg.start,
                        },
                        x_irr.clone(),
                        irr_note.clone(),
                        lab.run(
                            &cfg.settings,
                            StrategyChoice::ImageD,
                            0,
                            cfg.start,
                            Some(x_ref),
                            Some(&x_irr),
                            seed,
                        )?,
                    ),
                    CorrelationSetting::Isomorphic => (
                        DisturbanceStrategy::ImageD {
                            reference: x_iso.clone(),
                            start: cfg.start,
                        },
                        x_iso.clone(),
                        format!("perturbation_norm={}", fmt_f64(x_iso.distance(x_ref))),
                        lab.run(
                            &cfg.settings,
                            StrategyChoice::ImageD,
                            0,
                            cfg.start,
                            Some(x_ref),
                            Some(&x_iso),
                            seed,
                        )?,
                    ),
                    CorrelationSetting::RolledBack => (
                        DisturbanceStrategy::BackD {
                            rollback: cfg.rollback,
                            start: cfg.start,
                        },
                        lab.schedule.forward_noise(x_ref, rolled_t, &eps)?,
                        format!("t+b={rolled_t}"),
                        lab.run(
                            &cfg.settings,
                            StrategyChoice::BackD,
                            cfg.rollback,
                            cfg.start,
                            Some(x_ref),
                            None,
                            seed,
                        )?,
                    ),
                    CorrelationSetting::Reference => (
                        DisturbanceStrategy::ImageD {
                            reference: x_ref.clone(),
                            start: cfg.start,
                        },
                        x_ref.clone(),
                        String::new(),
                        lab.run(
                            &cfg.settings,
                            StrategyChoice::ImageD,
                            0,
                            cfg.start,
                            Some(x_ref),
                            None,
                            seed,
                        )?,
                    ),
                };
                let (gap_mean, gap_max) = out.record.gap_stats();
                rows.push(CorrelationRow {
                    setting,
                    seed,
                    probe_t,
                    proxy: strategy_proxy(&lab.schedule, &strategy, x_ref, probe_t)?,
                    realized_cosine: used.cosine(x_ref),
                    gap_mean,
                    gap_max,
                    displacement: out.record.displacement(),
                    log_likelihood: lab.log_likelihood(&out.sample, cfg.settings.prompt)?,
                    note,
                });
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationTable {
        rows: per_seed.into_iter().flatten().collect(),
    })
}

// ---------------------------------------------------------------------------
// Diversity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityConfig {
    pub settings: RunSettings,
    pub start: usize,
    pub rollback: usize,
    pub strategies: Vec<StrategyChoice>,
    pub master_seed: u64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            settings: RunSettings::default(),
            start: 300,
            rollback: 300,
            strategies: vec![
                StrategyChoice::Baseline,
                StrategyChoice::BackD,
                StrategyChoice::ImageD,
            ],
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub strategy: StrategyChoice,
    pub seeds: usize,
    pub mean_pairwise_distance: f64,
}

pub fn mean_pairwise_distance(samples: &[Latent]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::config(
            "n_seeds",
            "pairwise distance needs at least 2 samples",
        ));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            sum += a.distance(b);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Spread of final samples across `n_seeds` chains, per strategy.
pub fn diversity_report(
    lab: &Lab,
    x_ref: &Latent,
    n_seeds: usize,
    cfg: &DiversityConfig,
) -> Result<Vec<DiversityRow>> {
    if n_seeds < 2 {
        return Err(Error::config(
            "n_seeds",
            format!("need at least 2 seeds, got {n_seeds}"),
        ));
    }
    let seeds = SeedSequence::new(cfg.master_seed).chains(n_seeds);
    cfg.strategies
        .iter()
        .map(|&strategy| {
            if strategy == StrategyChoice::None {
                return Err(Error::config(
                    "strategies",
                    "diversity compares image-guided strategies",
                ));
            }
            let samples = seeds
                .par_iter()
                .map(|&seed| {
                    lab.run(
                        &cfg.settings,
                        strategy,
                        cfg.rollback,
                        cfg.start,
                        Some(x_ref),
                        None,
                        seed,
                    )
                    .map(|o| o.sample)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DiversityRow {
                strategy,
                seeds: n_seeds,
                mean_pairwise_distance: mean_pairwise_distance(&samples)?,
            })
        })
        .collect()
}

pub fn write_diversity_csv<W: Write>(rows: &[DiversityRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Analysis(format!("csv: {e}"));
    out.write_record(["strategy", "seeds", "mean_pairwise_distance"])
        .map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.strategy.name().to_string(),
            r.seeds.to_string(),
            fmt_f64(r.mean_pairwise_distance),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("<diversity csv>", e))?;
    Ok(())
}
