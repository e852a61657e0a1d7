//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails or runs over its time budget.

mod common;

use std::time::{Duration, Instant};

use common::{reference_loop, three_class, trajectory_mismatch, two_class_lab, Echo};
use nulltext::analysis::{
    correlation_experiment, expand_cells, CorrelationConfig, Lab, RunSettings, StrategyChoice, SweepSpec,
};
use nulltext::cli::{cmd_cartoonize, cmd_sample, cmd_sweep, CommandOutput};
use nulltext::config::{RunConfig, SweepAxes};
use nulltext::denoiser::{finite_difference_epsilon, gmm_epsilon, ClassMixture, Component};
use nulltext::guidance::{cfg_combine, SigmaSource};
use nulltext::sampler::{ddim_step, ChainSpec};
use nulltext::seed::{chain_rng, SeedSequence};
use nulltext::{
    Condition, DisturbanceStrategy, GmmDenoiser, GuidanceScale, LabeledMixture, Latent, Sampler,
    SamplingMode, ScheduleParams,
};
use rand::Rng;
use rayon::prelude::*;

const ALGEBRA_CASES: usize = 10_000;
const COMBINE_TOL: f64 = 1e-12;
const POSTERIOR_TOL: f64 = 1e-9;
const DEVIATION_TOL: f64 = 1e-9;
const ORACLE_TOL: f64 = 1e-4;
const ORACLE_H: f64 = 1e-3;
/// Accepted band for the error ratio when h halves (exactly 4 for a
/// second-order scheme).
const HALVING_BAND: (f64, f64) = (3.5, 4.5);
const CONVERGENCE_TOL: f64 = 1e-2;
const INERT_SEEDS: usize = 32;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn algebra() -> Outcome {
    let sched = ScheduleParams::default().build().unwrap();
    let mut rng = chain_rng(1);
    let (mut worst_combine, mut worst_posterior, mut exact_failures) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..ALGEBRA_CASES {
        let dim = rng.gen_range(1..=8);
        let text = Latent::standard_normal(dim, &mut rng).scale(2.0);
        let null = Latent::standard_normal(dim, &mut rng).scale(2.0);
        let gamma = rng.gen_range(0.0..20.0);
        if !cfg_combine(&text, &null, 0.0).unwrap().bit_eq(&null)
            || !cfg_combine(&text, &null, 1.0).unwrap().bit_eq(&text)
        {
            exact_failures += 1;
        }
        let lhs = cfg_combine(&text, &null, gamma).unwrap().sub(&null).unwrap();
        let rhs = text.sub(&null).unwrap().scale(gamma);
        worst_combine = worst_combine.max(lhs.distance(&rhs) / (1.0 + rhs.norm()));

        let x0 = Latent::standard_normal(dim, &mut rng);
        let eps = Latent::standard_normal(dim, &mut rng);
        let t = rng.gen_range(1..=1000);
        let t_prev = rng.gen_range(0..t);
        let x_t = sched.forward_noise(&x0, t, &eps).unwrap();
        let got = ddim_step(&sched, &x_t, &eps, t, t_prev).unwrap();
        let want = sched.forward_noise(&x0, t_prev, &eps).unwrap();
        worst_posterior = worst_posterior.max(got.distance(&want) / (1.0 + want.norm()));
    }
    check(
        exact_failures == 0 && worst_combine <= COMBINE_TOL && worst_posterior <= POSTERIOR_TOL,
        format!(
            "{ALGEBRA_CASES} cases, gamma 0/1 mismatches {exact_failures}, collinearity {worst_combine:.1e} (tol {COMBINE_TOL:e}), posterior {worst_posterior:.1e} (tol {POSTERIOR_TOL:e})"
        ),
    )
}

fn inertness() -> Outcome {
    let lab = two_class_lab();
    let grid = lab.schedule.grid(100).unwrap();
    let sampler = Sampler::new(
        &lab.denoiser,
        &lab.schedule,
        &grid,
        Condition::Class(1),
        GuidanceScale::new(1.0).unwrap(),
    );
    let x_ref = Latent::new(vec![-2.0, 0.8]).unwrap();
    let backd = DisturbanceStrategy::BackD {
        rollback: 300,
        start: 300,
    };
    let imaged = DisturbanceStrategy::ImageD {
        reference: x_ref.clone(),
        start: 300,
    };
    let seeds = SeedSequence::new(2).chains(INERT_SEEDS);
    let bad: usize = seeds
        .par_iter()
        .map(|&seed| {
            let free = sampler.sample_free(&backd, seed).unwrap();
            let plain = sampler.sample_free(&DisturbanceStrategy::None, seed).unwrap();
            let img = sampler.img2img(300, &x_ref, seed).unwrap();
            let a = sampler.cartoonize(&imaged, &x_ref, seed).unwrap();
            let b = sampler.cartoonize(&backd, &x_ref, seed).unwrap();
            [
                free.sample.bit_eq(&plain.sample),
                a.sample.bit_eq(&img.sample),
                b.sample.bit_eq(&img.sample),
            ]
            .iter()
            .filter(|ok| !**ok)
            .count()
        })
        .sum();
    check(
        bad == 0,
        format!("{INERT_SEEDS} seeds x 3 strategy/mode pairs, {bad} mismatches"),
    )
}

fn degenerate() -> Outcome {
    let lab = two_class_lab();
    let x_ref = Latent::new(vec![-2.0, 0.8]).unwrap();
    let mut runs = 0;
    let mut failures = Vec::new();
    for (steps, gamma) in [(100, 7.5), (50, 3.0), (20, 0.0), (10, 12.0)] {
        let grid = lab.schedule.grid(steps).unwrap();
        let sampler = Sampler::new(
            &lab.denoiser,
            &lab.schedule,
            &grid,
            Condition::Class(0),
            GuidanceScale::new(gamma).unwrap(),
        );
        for seed in SeedSequence::new(steps as u64).chains(4) {
            let x_top = Latent::standard_normal(2, &mut chain_rng(seed));
            let want = reference_loop(
                &lab.denoiser,
                &lab.schedule,
                &grid,
                Condition::Class(0),
                gamma,
                &x_top,
                grid.top(),
            );
            let free = sampler.sample_free(&DisturbanceStrategy::None, seed).unwrap();
            let echo = sampler
                .run_chain(
                    ChainSpec {
                        from: grid.top(),
                        x_start: x_top.clone(),
                        mode: SamplingMode::FreeGeneration,
                        start: None,
                        source: None,
                        cached_eps: None,
                    },
                    &Echo,
                )
                .unwrap();
            let eps = Latent::standard_normal(2, &mut chain_rng(seed));
            let x_s = lab.schedule.forward_noise(&x_ref, 300, &eps).unwrap();
            let want_img = reference_loop(
                &lab.denoiser,
                &lab.schedule,
                &grid,
                Condition::Class(0),
                gamma,
                &x_s,
                300,
            );
            let img = sampler.img2img(300, &x_ref, seed).unwrap();
            for (name, got, want) in [
                ("none", &free.trajectory, &want),
                ("echo", &echo.trajectory, &want),
                ("img2img", &img.trajectory, &want_img),
            ] {
                runs += 1;
                if let Some(t) = trajectory_mismatch(got, want) {
                    failures.push(format!("{name} N={steps} seed={seed} t={t}"));
                }
            }
        }
    }
    check(
        failures.is_empty(),
        format!("{runs} runs step-for-step against the longhand loop; mismatches: {failures:?}"),
    )
}

fn deviation_identity() -> Outcome {
    let lab = two_class_lab();
    let x_ref = Latent::new(vec![-2.0, 0.8]).unwrap();
    let gammas = vec![0.0, 2.0, 7.5, 12.0, 20.0];
    let free = SweepSpec {
        rollback: vec![100, 200, 300, 400, 500],
        start: vec![200, 300],
        gamma: gammas.clone(),
        steps: vec![50],
        ..SweepSpec::free_generation(Condition::Class(1))
    };
    let image_d = SweepSpec {
        mode: SamplingMode::ImageGuided,
        strategy: StrategyChoice::ImageD,
        start: vec![100, 200, 300, 400, 500],
        ..free.clone()
    };
    let image_b = SweepSpec {
        mode: SamplingMode::ImageGuided,
        rollback: vec![100, 300, 500, 700, 900],
        start: vec![300],
        ..free.clone()
    };
    let mut jobs = Vec::new();
    for (spec, reference) in [(&free, None), (&image_d, Some(&x_ref)), (&image_b, Some(&x_ref))] {
        for cell in expand_cells(spec) {
            jobs.push((cell, reference));
        }
    }
    let results: Vec<(usize, f64)> = jobs
        .par_iter()
        .map(|(cell, reference)| {
            let settings = RunSettings {
                steps: cell.steps,
                gamma: cell.gamma,
                prompt: Condition::Class(1),
                ..RunSettings::default()
            };
            let out = lab
                .run(
                    &settings,
                    cell.strategy,
                    cell.rollback,
                    cell.start,
                    *reference,
                    None,
                    11,
                )
                .unwrap();
            let worst = out
                .record
                .steps
                .iter()
                .map(|s| {
                    let want = (1.0 - cell.gamma).abs() * s.null_branch_gap;
                    (s.deviation_norm - want).abs() / (1.0 + want)
                })
                .fold(0.0, f64::max);
            (out.record.steps.len(), worst)
        })
        .collect();
    let steps: usize = results.iter().map(|r| r.0).sum();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    check(
        jobs.len() == 100 && worst <= DEVIATION_TOL,
        format!(
            "{} cells, {steps} steps, worst {worst:.1e} (tol {DEVIATION_TOL:e})",
            jobs.len()
        ),
    )
}

fn oracle() -> Outcome {
    let mix = three_class(3);
    let sched = ScheduleParams::default().build().unwrap();
    let mut rng = chain_rng(2024);
    let conds = [
        Condition::Class(0),
        Condition::Class(1),
        Condition::Class(4),
        Condition::Null,
    ];
    let draws: Vec<(Latent, Condition, usize)> = (0..1000)
        .map(|_| {
            let c = conds[rng.gen_range(0..4)];
            let t = rng.gen_range(1..=1000);
            let x0 = mix.sample(c, 1, &mut rng).unwrap().remove(0);
            let eps = Latent::standard_normal(3, &mut rng);
            (sched.forward_noise(&x0, t, &eps).unwrap(), c, t)
        })
        .collect();
    let rel = |x: &Latent, c, t, h| {
        let exact = gmm_epsilon(&mix, &sched, x, c, t).unwrap();
        finite_difference_epsilon(&mix, &sched, x, c, t, h)
            .unwrap()
            .distance(&exact)
            / exact.norm().max(1e-6)
    };
    let worst = draws
        .iter()
        .map(|(x, c, t)| rel(x, *c, *t, ORACLE_H))
        .fold(0.0, f64::max);
    let mut ratios: Vec<f64> = draws
        .iter()
        .filter_map(|(x, c, t)| {
            let (a, b) = (rel(x, *c, *t, 2e-2), rel(x, *c, *t, 1e-2));
            (b > 1e-8).then_some(a / b)
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let median = ratios.get(ratios.len() / 2).copied().unwrap_or(f64::NAN);
    check(
        worst <= ORACLE_TOL && ratios.len() >= 50 && (HALVING_BAND.0..=HALVING_BAND.1).contains(&median),
        format!(
            "1000 draws, max rel err {worst:.1e} at h={ORACLE_H:e} (tol {ORACLE_TOL:e}); median halving ratio {median:.3} over {} points",
            ratios.len()
        ),
    )
}

fn step_count() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        strategy: StrategyChoice::ImageD,
        output: dir.path().join("c").display().to_string(),
        ..RunConfig::default()
    };
    let out = cmd_cartoonize(&cfg).map_err(|e| e.to_string())?;
    let log = out.bundle.read_to_string(nulltext::cli::LOG).unwrap();
    let logged = log.contains("executed 30 steps from s=300");
    let b_err = RunConfig::from_toml_str("b = 305")
        .err()
        .map(|e| e.to_string())
        .unwrap_or_default();
    let s_err = RunConfig::from_toml_str("s = 295\nstrategy = \"imaged\"")
        .err()
        .map(|e| e.to_string())
        .unwrap_or_default();
    check(
        logged && b_err.contains("`b`") && b_err.contains("stride 10") && s_err.contains("`s`"),
        format!(
            "T=1000 N=100 s=300 log: {:?}; b=305 -> {b_err:?}; s=295 -> {s_err:?}",
            log.lines().nth(1).unwrap_or("")
        ),
    )
}

fn activation() -> Outcome {
    let lab = two_class_lab();
    let grid = lab.schedule.grid(100).unwrap();
    let sampler = Sampler::new(
        &lab.denoiser,
        &lab.schedule,
        &grid,
        Condition::Class(0),
        GuidanceScale::new(7.5).unwrap(),
    );
    let s = 300;
    let mut problems = Vec::new();
    for seed in SeedSequence::new(3).chains(8) {
        let d = sampler
            .sample_free(
                &DisturbanceStrategy::BackD {
                    rollback: 300,
                    start: s,
                },
                seed,
            )
            .unwrap();
        let base = sampler.sample_free(&DisturbanceStrategy::None, seed).unwrap();
        for (t, x) in d.trajectory.iter().filter(|(t, _)| *t > s) {
            if !base.trajectory.get(t).is_some_and(|b| b.bit_eq(x)) {
                problems.push(format!("seed {seed}: prefix differs at t={t}"));
            }
        }
        let moved = sampler
            .sample_free(
                &DisturbanceStrategy::BackD {
                    rollback: 300,
                    start: s + grid.stride(),
                },
                seed,
            )
            .unwrap();
        let flips: Vec<usize> = d
            .record
            .steps
            .iter()
            .zip(&moved.record.steps)
            .filter(|(a, b)| a.sigma_source != b.sigma_source)
            .map(|(a, _)| a.t)
            .collect();
        if flips != [s + grid.stride()] {
            problems.push(format!("seed {seed}: flips at {flips:?}"));
        }
        if d.record
            .steps
            .iter()
            .any(|r| (r.t > s) != (r.sigma_source == SigmaSource::SameAsText))
        {
            problems.push(format!("seed {seed}: gate disagrees with t <= s"));
        }
    }
    check(
        problems.is_empty(),
        format!("8 seeds, s=300 vs s=310; problems: {problems:?}"),
    )
}

fn convergence() -> Outcome {
    let mu = vec![0.7, -1.3, 2.1];
    let mix = LabeledMixture::new(
        3,
        vec![1.0],
        vec![ClassMixture {
            label: 0,
            components: vec![Component {
                weight: 1.0,
                mean: mu.clone(),
                variances: vec![1e-10; 3],
            }],
        }],
    )
    .unwrap();
    let sched = ScheduleParams::default().build().unwrap();
    let den = GmmDenoiser::new(mix, sched.clone());
    let target = Latent::new(mu).unwrap();
    let (coarse, fine) = (sched.grid(100).unwrap(), sched.grid(1000).unwrap());
    let mut worst = 0.0f64;
    for seed in SeedSequence::new(8).chains(8) {
        let run = |grid| {
            Sampler::new(
                &den,
                &sched,
                grid,
                Condition::Class(0),
                GuidanceScale::new(7.5).unwrap(),
            )
            .sample_free(&DisturbanceStrategy::None, seed)
            .unwrap()
            .sample
        };
        let (a, b) = (run(&coarse), run(&fine));
        worst = worst
            .max(a.distance(&target))
            .max(b.distance(&target))
            .max(a.distance(&b));
    }
    check(
        worst < CONVERGENCE_TOL,
        format!(
            "8 seeds, worst distance among N=100, N=1000 and the mode {worst:.1e} (tol {CONVERGENCE_TOL:e})"
        ),
    )
}

fn input_ordering() -> Outcome {
    let lab: Lab = two_class_lab();
    let x_ref = Latent::new(vec![-2.0, 0.8]).unwrap();
    let mut cfg = CorrelationConfig::default();
    cfg.settings.prompt = Condition::Class(1);
    let table = correlation_experiment(&lab, &x_ref, &cfg).map_err(|e| e.to_string())?;
    let seeds = table.seeds();
    let ordered = seeds.iter().filter(|s| table.proxy_ordered(**s)).count();
    let means: Vec<String> = table
        .summary()
        .iter()
        .map(|s| format!("{}={:.4}", s.setting.name(), s.proxy_mean))
        .collect();
    check(
        seeds.len() == 8 && ordered == 8,
        format!(
            "{ordered}/{} seeds ordered at t={}; {}",
            seeds.len(),
            table.rows[0].probe_t,
            means.join(" ")
        ),
    )
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bundle").display().to_string();
    let sample = RunConfig {
        chains: 4,
        output: out.clone(),
        ..RunConfig::default()
    };
    let carto = RunConfig {
        chains: 4,
        strategy: StrategyChoice::ImageD,
        prompt_class: 1,
        output: out.clone(),
        ..RunConfig::default()
    };
    let sweep = RunConfig {
        mode: SamplingMode::ImageGuided,
        prompt_class: 1,
        output: out.clone(),
        sweep: Some(SweepAxes {
            gamma: Some(vec![2.0, 4.0, 8.0, 12.0]),
            seeds: Some(4),
            ..SweepAxes::default()
        }),
        ..RunConfig::default()
    };
    type Cmd = fn(&RunConfig) -> nulltext::Result<CommandOutput>;
    let mut files = 0;
    for (name, cfg, cmd) in [
        ("sample", &sample, cmd_sample as Cmd),
        ("cartoonize", &carto, cmd_cartoonize as Cmd),
        ("sweep", &sweep, cmd_sweep as Cmd),
    ] {
        let first = cmd(cfg).map_err(|e| e.to_string())?.bundle.manifest.hashes();
        std::fs::remove_dir_all(&out).unwrap();
        let second = cmd(cfg).map_err(|e| e.to_string())?.bundle;
        std::fs::remove_dir_all(&out).unwrap();
        if first != second.manifest.hashes() {
            return Err(format!("{name}: manifest hashes differ between runs"));
        }
        files += first.len();
    }
    Ok(format!(
        "sample, cartoonize and sweep bundles rerun; {files} file hashes identical"
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (
            1,
            "guidance algebra and DDIM posterior consistency",
            Duration::from_secs(5),
            algebra,
        ),
        (
            2,
            "disturbance inert at gamma = 1",
            Duration::from_secs(30),
            inertness,
        ),
        (
            3,
            "degenerate runs match a longhand loop",
            Duration::from_secs(30),
            degenerate,
        ),
        (
            4,
            "deviation identity across a 100-cell sweep",
            Duration::from_secs(120),
            deviation_identity,
        ),
        (
            5,
            "closed-form noise vs finite-difference oracle",
            Duration::from_secs(30),
            oracle,
        ),
        (
            6,
            "step count k = s*N/T and grid alignment",
            Duration::from_secs(5),
            step_count,
        ),
        (7, "activation boundary", Duration::from_secs(30), activation),
        (8, "delta-data convergence", Duration::from_secs(10), convergence),
        (
            9,
            "null-input proxy ordering",
            Duration::from_secs(60),
            input_ordering,
        ),
        (
            10,
            "bundle reproducibility",
            Duration::from_secs(60),
            reproducibility,
        ),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget")),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {id:>2} {name}: {detail} [{:.2}s / {}s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
