//! The four commands behind the `nulltext` binary. Each validates its config,
//! computes everything (chains in parallel), then writes one bundle through a
//! single [`BundleWriter`].

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::analysis::{
    default_probe_t, fmt_f64, fmt_latent, irrelevant_input, isomorphic_input, mean_pairwise_distance,
    run_sweep, strategy_proxy, IrrelevantSource, Lab, RunSettings, StrategyChoice, SweepSpec,
    DEFAULT_CELL_CAP,
};
use crate::bundle::{ArtifactBundle, BundleWriter};
use crate::config::{dataset_points, NullInputChoice, RunConfig};
use crate::denoiser::LabeledMixture;
use crate::error::{Error, Result};
use crate::guidance::SamplingMode;
use crate::latent::Latent;
use crate::sampler::{RunOutcome, RunRecord};
use crate::seed::SeedSequence;
use crate::svg::{render_svg, PlotLayers};

pub const CONFIG_ECHO: &str = "config.toml";
pub const RECORDS: &str = "record.json";
pub const STEPS_CSV: &str = "steps.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const LOG: &str = "log.txt";
pub const PLOT: &str = "plot.svg";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SKIPPED_CSV: &str = "skipped.csv";
pub const CELLS_CSV: &str = "cells.csv";
pub const ANALYSIS_CSV: &str = "analysis.csv";

/// Trajectories are drawn only for small runs.
const MAX_PLOTTED_PATHS: usize = 16;

#[derive(Debug)]
pub struct CommandOutput {
    pub bundle: ArtifactBundle,
    pub log: Vec<String>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Analysis(format!("csv: {e}"))
}

fn settings(cfg: &RunConfig) -> RunSettings {
    RunSettings {
        schedule: cfg.schedule,
        steps: cfg.steps,
        gamma: cfg.gamma,
        prompt: cfg.prompt(),
        activation: cfg.activation,
    }
}

fn undisturbed(choice: StrategyChoice) -> bool {
    matches!(choice, StrategyChoice::None | StrategyChoice::Baseline)
}

fn write_run_bundle(
    cfg: &RunConfig,
    command: &str,
    lab: &Lab,
    seeds: &[u64],
    outcomes: &[RunOutcome],
    mut log: Vec<String>,
) -> Result<CommandOutput> {
    let mut w = BundleWriter::create(cfg.output_dir())?;
    w.write(CONFIG_ECHO, cfg.to_toml_string()?.as_bytes())?;
    let records: Vec<&RunRecord> = outcomes.iter().map(|o| &o.record).collect();
    w.write_json(RECORDS, &records)?;

    w.write_with(STEPS_CSV, |buf| {
        let mut out = csv::Writer::from_writer(buf);
        out.write_record([
            "chain",
            "t",
            "t_prev",
            "sigma_source",
            "deviation_norm",
            "null_branch_gap",
        ])
        .map_err(csv_err)?;
        for (i, r) in records.iter().enumerate() {
            for s in &r.steps {
                out.write_record([
                    i.to_string(),
                    s.t.to_string(),
                    s.t_prev.to_string(),
                    s.sigma_source.label(),
                    fmt_f64(s.deviation_norm),
                    fmt_f64(s.null_branch_gap),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush().map_err(|e| Error::io(STEPS_CSV, e))
    })?;

    let disturbed = !undisturbed(cfg.strategy);
    w.write_with(SUMMARY_CSV, |buf| {
        let mut out = csv::Writer::from_writer(buf);
        let mut header = vec![
            "chain",
            "seed",
            "executed_steps",
            "final_sample",
            "log_likelihood",
            "nearest_mode_distance",
        ];
        if disturbed {
            header.extend(["mean_deviation", "max_deviation", "displacement"]);
        }
        out.write_record(&header).map_err(csv_err)?;
        for (i, (o, seed)) in outcomes.iter().zip(seeds).enumerate() {
            let mut row = vec![
                i.to_string(),
                seed.to_string(),
                o.record.executed_steps().to_string(),
                fmt_latent(&o.sample),
                fmt_f64(lab.log_likelihood(&o.sample, cfg.prompt())?),
                fmt_f64(lab.mixture.nearest_mode_in_class(&o.sample, cfg.prompt_class)?),
            ];
            if disturbed {
                row.extend([
                    fmt_f64(o.record.mean_deviation()),
                    fmt_f64(o.record.max_deviation()),
                    fmt_f64(o.record.displacement()),
                ]);
            }
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io(SUMMARY_CSV, e))
    })?;

    if lab.mixture.dimension == 2 {
        let points = dataset_points(&lab.mixture)?;
        let samples: Vec<Latent> = outcomes.iter().map(|o| o.sample.clone()).collect();
        let trajectories = if outcomes.len() <= MAX_PLOTTED_PATHS {
            outcomes
                .iter()
                .map(|o| o.trajectory.iter().map(|(_, x)| x.clone()).collect())
                .collect()
        } else {
            Vec::new()
        };
        let layers = PlotLayers {
            dataset_points: &points,
            samples: &samples,
            trajectories,
            title: format!(
                "{command} {} gamma={} class={}",
                cfg.strategy.name(),
                cfg.gamma,
                cfg.prompt_class
            ),
        };
        w.write(PLOT, render_svg(&lab.mixture, &layers)?.as_bytes())?;
    } else {
        log.push(format!("no plot: data is {}-D", lab.mixture.dimension));
    }

    w.write(LOG, (log.join("\n") + "\n").as_bytes())?;
    Ok(CommandOutput {
        bundle: w.finish(command)?,
        log,
    })
}

fn prepare(cfg: &RunConfig) -> Result<(Lab, Vec<String>)> {
    let warnings = cfg.validate()?;
    let mix = cfg.load_dataset()?;
    let lab = Lab::new(mix, cfg.schedule)?;
    Ok((
        lab,
        warnings.into_iter().map(|w| format!("warning: {w}")).collect(),
    ))
}

/// Free generation from pure noise, optionally with Back-D.
pub fn cmd_sample(cfg: &RunConfig) -> Result<CommandOutput> {
    if !matches!(cfg.strategy, StrategyChoice::None | StrategyChoice::BackD) {
        return Err(Error::config(
            "strategy",
            format!(
                "sample supports none|backd, got {}; image-guided strategies belong to cartoonize",
                cfg.strategy.name()
            ),
        ));
    }
    let (lab, mut log) = prepare(cfg)?;
    let seeds = SeedSequence::new(cfg.seed).chains(cfg.chains);
    let run = settings(cfg);
    let outcomes = seeds
        .par_iter()
        .map(|&seed| lab.run(&run, cfg.strategy, cfg.b, cfg.s, None, None, seed))
        .collect::<Result<Vec<_>>>()?;
    log.push(format!(
        "sample strategy={} b={} s={} gamma={} steps={} chains={}",
        cfg.strategy.name(),
        cfg.b,
        cfg.s,
        cfg.gamma,
        cfg.steps,
        cfg.chains
    ));
    for (i, o) in outcomes.iter().enumerate() {
        log.push(format!("chain {i}: executed {} steps", o.record.executed_steps()));
    }
    write_run_bundle(cfg, "sample", &lab, &seeds, &outcomes, log)
}

/// Image-guided generation from a forward-noised reference.
pub fn cmd_cartoonize(cfg: &RunConfig) -> Result<CommandOutput> {
    if cfg.strategy == StrategyChoice::None {
        return Err(Error::config(
            "strategy",
            "cartoonize needs backd, imaged or baseline; none is plain img2img, use baseline",
        ));
    }
    let (lab, mut log) = prepare(cfg)?;
    let x_ref = cfg.resolve_reference(&lab.mixture)?;
    let seeds = SeedSequence::new(cfg.seed).chains(cfg.chains);
    let run = settings(cfg);
    let iso = match (cfg.strategy, cfg.null_input) {
        (StrategyChoice::ImageD, NullInputChoice::Isomorphic) => {
            Some(isomorphic_input(&x_ref, cfg.iso_fraction)?)
        }
        _ => None,
    };
    let outcomes = seeds
        .par_iter()
        .map(|&seed| {
            let null_ref = match (cfg.strategy, cfg.null_input) {
                (StrategyChoice::ImageD, NullInputChoice::Irrelevant) => {
                    Some(irrelevant_input(&lab, &x_ref, IrrelevantSource::OtherClass, seed)?.0)
                }
                _ => iso.clone(),
            };
            lab.run(
                &run,
                cfg.strategy,
                cfg.b,
                cfg.s,
                Some(&x_ref),
                null_ref.as_ref(),
                seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    log.push(format!(
        "cartoonize strategy={} null_input={:?} b={} s={} gamma={} steps={} chains={} ref={}",
        cfg.strategy.name(),
        cfg.null_input,
        cfg.b,
        cfg.s,
        cfg.gamma,
        cfg.steps,
        cfg.chains,
        fmt_latent(&x_ref)
    ));
    for (i, o) in outcomes.iter().enumerate() {
        log.push(format!(
            "chain {i}: executed {} steps from s={}",
            o.record.executed_steps(),
            cfg.s
        ));
    }
    write_run_bundle(cfg, "cartoonize", &lab, &seeds, &outcomes, log)
}

/// Grid of runs over the `[sweep]` axes.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<CommandOutput> {
    let (lab, mut log) = prepare(cfg)?;
    let axes = cfg.sweep.clone().unwrap_or_default();
    let strategy = match (cfg.mode, cfg.strategy) {
        (_, StrategyChoice::None) | (SamplingMode::ImageGuided, StrategyChoice::Baseline) => {
            StrategyChoice::BackD
        }
        (SamplingMode::FreeGeneration, s @ (StrategyChoice::ImageD | StrategyChoice::Baseline)) => {
            return Err(Error::config(
                "strategy",
                format!("{} needs mode = \"image_guided\"", s.name()),
            ))
        }
        (_, s) => s,
    };
    let mut rollback = axes.b.unwrap_or_else(|| vec![cfg.b]);
    if undisturbed(cfg.strategy) {
        rollback = vec![0];
    }
    let reference = match cfg.mode {
        SamplingMode::ImageGuided => Some(cfg.resolve_reference(&lab.mixture)?),
        SamplingMode::FreeGeneration => None,
    };
    let spec = SweepSpec {
        mode: cfg.mode,
        strategy,
        rollback,
        start: axes.s.unwrap_or_else(|| vec![cfg.s]),
        gamma: axes.gamma.unwrap_or_else(|| vec![cfg.gamma]),
        steps: axes.steps.unwrap_or_else(|| vec![cfg.steps]),
        seeds: SeedSequence::new(cfg.seed).chains(axes.seeds.unwrap_or(cfg.chains)),
        prompt: cfg.prompt(),
        schedule: cfg.schedule,
        activation: cfg.activation,
        reference,
        cap: axes.cap.unwrap_or(DEFAULT_CELL_CAP),
    };
    let table = run_sweep(&lab, &spec)?;
    log.push(format!(
        "sweep mode={:?} strategy={} rows={} skipped={}",
        cfg.mode,
        strategy.name(),
        table.rows.len(),
        table.skipped.len()
    ));
    for s in &table.skipped {
        log.push(format!(
            "skipped steps={} gamma={} b={} s={}: {}",
            s.cell.steps, s.cell.gamma, s.cell.rollback, s.cell.start, s.reason
        ));
    }

    let mut w = BundleWriter::create(cfg.output_dir())?;
    w.write(CONFIG_ECHO, cfg.to_toml_string()?.as_bytes())?;
    w.write_with(SWEEP_CSV, |buf| table.write_csv(buf))?;
    w.write_with(SKIPPED_CSV, |buf| table.write_skipped_csv(buf))?;
    w.write_with(CELLS_CSV, |buf| {
        let mut out = csv::Writer::from_writer(buf);
        out.write_record([
            "steps",
            "gamma",
            "strategy",
            "b",
            "s",
            "runs",
            "mean_log_likelihood",
            "mean_displacement",
            "mean_deviation",
            "mean_nearest_mode_distance",
        ])
        .map_err(csv_err)?;
        let mut i = 0;
        while i < table.rows.len() {
            let cell = &table.rows[i].cell;
            let group: Vec<_> = table.rows[i..].iter().take_while(|r| &r.cell == cell).collect();
            let n = group.len() as f64;
            let mean = |f: fn(&crate::analysis::SweepRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            out.write_record([
                cell.steps.to_string(),
                fmt_f64(cell.gamma),
                cell.strategy.name().to_string(),
                cell.rollback.to_string(),
                cell.start.to_string(),
                group.len().to_string(),
                fmt_f64(mean(|r| r.log_likelihood)),
                fmt_f64(mean(|r| r.displacement)),
                fmt_f64(mean(|r| r.mean_deviation)),
                fmt_f64(mean(|r| r.nearest_mode_distance)),
            ])
            .map_err(csv_err)?;
            i += group.len();
        }
        out.flush().map_err(|e| Error::io(CELLS_CSV, e))
    })?;
    if lab.mixture.dimension == 2 {
        let points = dataset_points(&lab.mixture)?;
        let samples: Vec<Latent> = table.rows.iter().map(|r| r.final_sample.clone()).collect();
        let layers = PlotLayers {
            dataset_points: &points,
            samples: &samples,
            trajectories: Vec::new(),
            title: format!("sweep {} ({} runs)", strategy.name(), samples.len()),
        };
        w.write(PLOT, render_svg(&lab.mixture, &layers)?.as_bytes())?;
    }
    w.write(LOG, (log.join("\n") + "\n").as_bytes())?;
    Ok(CommandOutput {
        bundle: w.finish("sweep")?,
        log,
    })
}

/// One row of `analyze` output, describing one input bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleSummary {
    pub bundle: String,
    pub command: String,
    pub strategy: String,
    /// Null-branch input: none, rolled_back, reference, isomorphic, irrelevant.
    pub setting: String,
    pub chains: usize,
    /// Mean input proxy at `s / 2`; image-guided bundles only.
    pub proxy: Option<f64>,
    pub gap_mean: f64,
    pub displacement_mean: f64,
    pub log_likelihood_mean: f64,
    /// Spread of final samples; bundles with at least two chains only.
    pub mean_pairwise_distance: Option<f64>,
}

pub fn summarize_bundle(dir: &Path) -> Result<BundleSummary> {
    let bundle = ArtifactBundle::open(dir)?;
    let bad = bundle.verify()?;
    if !bad.is_empty() {
        return Err(Error::Analysis(format!(
            "{}: hash mismatch in {}",
            dir.display(),
            bad.join(", ")
        )));
    }
    let cfg = RunConfig::from_toml_str(&bundle.read_to_string(CONFIG_ECHO)?)?;
    let records: Vec<RunRecord> =
        serde_json::from_str(&bundle.read_to_string(RECORDS)?).map_err(|e| Error::Parse {
            path: bundle.path(RECORDS).display().to_string(),
            reason: e.to_string(),
        })?;
    if records.is_empty() {
        return Err(Error::Analysis(format!(
            "{}: bundle holds no runs",
            dir.display()
        )));
    }
    let mix: LabeledMixture = cfg.load_dataset()?;
    let lab = Lab::new(mix, cfg.schedule)?;
    let n = records.len() as f64;
    let image_guided = records[0].config.mode == SamplingMode::ImageGuided;
    let setting = match (cfg.strategy, image_guided) {
        (StrategyChoice::BackD, true) => "rolled_back".to_string(),
        (StrategyChoice::BackD, false) => "backd_free".to_string(),
        (StrategyChoice::ImageD, _) => match cfg.null_input {
            NullInputChoice::Reference => "reference",
            NullInputChoice::Isomorphic => "isomorphic",
            NullInputChoice::Irrelevant => "irrelevant",
        }
        .to_string(),
        _ => "none".to_string(),
    };
    let proxy = if image_guided {
        let mut sum = 0.0;
        for r in &records {
            let x_ref = r.config.reference.as_ref().ok_or_else(|| {
                Error::Analysis(format!("{}: image-guided record has no reference", dir.display()))
            })?;
            let probe_t = default_probe_t(cfg.s, r.config.stride).max(r.config.stride);
            sum += strategy_proxy(&lab.schedule, &r.config.strategy, x_ref, probe_t)?;
        }
        Some(sum / n)
    } else {
        None
    };
    let mut ll = 0.0;
    for r in &records {
        ll += lab.log_likelihood(&r.final_sample, cfg.prompt())?;
    }
    let finals: Vec<Latent> = records.iter().map(|r| r.final_sample.clone()).collect();
    Ok(BundleSummary {
        bundle: dir.display().to_string(),
        command: bundle.manifest.command.clone(),
        strategy: cfg.strategy.name().to_string(),
        setting,
        chains: records.len(),
        proxy,
        gap_mean: records.iter().map(|r| r.gap_stats().0).sum::<f64>() / n,
        displacement_mean: records.iter().map(|r| r.displacement()).sum::<f64>() / n,
        log_likelihood_mean: ll / n,
        mean_pairwise_distance: if finals.len() >= 2 {
            Some(mean_pairwise_distance(&finals)?)
        } else {
            None
        },
    })
}

/// Reads run bundles and writes one summary row per bundle.
pub fn cmd_analyze(bundles: &[PathBuf], out: &Path) -> Result<CommandOutput> {
    if bundles.is_empty() {
        return Err(Error::config(
            "bundles",
            "analyze needs at least one bundle directory",
        ));
    }
    let rows = bundles
        .iter()
        .map(|b| summarize_bundle(b))
        .collect::<Result<Vec<_>>>()?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut w = BundleWriter::create(out)?;
    w.write_with(ANALYSIS_CSV, |buf| {
        let mut out = csv::Writer::from_writer(buf);
        out.write_record([
            "bundle",
            "command",
            "strategy",
            "setting",
            "chains",
            "proxy",
            "gap_mean",
            "displacement_mean",
            "log_likelihood_mean",
            "mean_pairwise_distance",
        ])
        .map_err(csv_err)?;
        for r in &rows {
            out.write_record([
                r.bundle.clone(),
                r.command.clone(),
                r.strategy.clone(),
                r.setting.clone(),
                r.chains.to_string(),
                opt(r.proxy),
                fmt_f64(r.gap_mean),
                fmt_f64(r.displacement_mean),
                fmt_f64(r.log_likelihood_mean),
                opt(r.mean_pairwise_distance),
            ])
            .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io(ANALYSIS_CSV, e))
    })?;
    let log = vec![format!("analyzed {} bundles", rows.len())];
    let mut text = Vec::new();
    for l in &log {
        writeln!(text, "{l}").map_err(|e| Error::io(LOG, e))?;
    }
    w.write(LOG, &text)?;
    Ok(CommandOutput {
        bundle: w.finish("analyze")?,
        log,
    })
}

pub fn read_analysis_rows(bundle: &ArtifactBundle) -> Result<Vec<csv::StringRecord>> {
    let text = bundle.read_to_string(ANALYSIS_CSV)?;
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(csv_err)
}
