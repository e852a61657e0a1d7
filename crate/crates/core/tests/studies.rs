mod common;

use common::{three_class, two_class_lab};
use nulltext::analysis::{
    correlation_experiment, diversity_report, run_sweep, CorrelationConfig, CorrelationSetting,
    DiversityConfig, IrrelevantSource, Lab, RunSettings, StrategyChoice, SweepSpec,
};
use nulltext::seed::SeedSequence;
use nulltext::{Condition, Latent, SamplingMode, ScheduleParams};

fn class_rate(lab: &Lab, choice: StrategyChoice, x_ref: &Latent, prompt: u32) -> f64 {
    let settings = RunSettings {
        prompt: Condition::Class(prompt),
        ..RunSettings::default()
    };
    let seeds = SeedSequence::new(0).chains(200);
    let hits = seeds
        .iter()
        .filter(|&&seed| {
            let out = lab
                .run(&settings, choice, 300, 300, Some(x_ref), None, seed)
                .unwrap();
            lab.mixture.nearest_mode(&out.sample).0 == prompt
        })
        .count();
    hits as f64 / seeds.len() as f64
}

#[test]
fn cartoonize_lands_in_prompt_class() {
    let lab = two_class_lab();
    // Reference from the other class, then from the prompt class itself.
    for x_ref in [[-2.0, 0.8], [2.0, -0.8]] {
        let x_ref = Latent::new(x_ref.to_vec()).unwrap();
        let baseline = class_rate(&lab, StrategyChoice::Baseline, &x_ref, 1);
        assert!(baseline >= 0.95, "baseline rate {baseline}");
        let rate = class_rate(&lab, StrategyChoice::ImageD, &x_ref, 1);
        assert!(rate >= 0.95, "image disturbance rate {rate}");
    }
}

#[test]
fn few_steps_lower_likelihood() {
    let lab = two_class_lab();
    let spec = SweepSpec {
        steps: vec![20, 50, 60, 100],
        seeds: SeedSequence::new(3).chains(32),
        ..SweepSpec::free_generation(Condition::Class(0))
    };
    let table = run_sweep(&lab, &spec).unwrap();
    assert_eq!(table.skipped.len(), 1);
    assert_eq!(table.skipped[0].cell.steps, 60);
    let means = table.mean_log_likelihood_by(|r| r.cell.steps);
    let at = |n| means.iter().find(|(k, _)| *k == n).unwrap().1;
    // Frozen from the first run (-12.06 at N=100, -74.35 at N=20).
    assert!(at(100) - at(20) >= 30.0, "N=100 {} vs N=20 {}", at(100), at(20));
}

#[test]
fn sweep_rows_reload_bit_for_bit_and_ignore_thread_count() {
    let lab = two_class_lab();
    let spec = SweepSpec {
        mode: SamplingMode::ImageGuided,
        gamma: vec![2.0, 4.0, 8.0, 12.0],
        seeds: SeedSequence::new(4).chains(4),
        reference: Some(Latent::new(vec![-2.0, 0.8]).unwrap()),
        ..SweepSpec::free_generation(Condition::Class(1))
    };
    let table = run_sweep(&lab, &spec).unwrap();
    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_sweep(&lab, &spec).unwrap());
    assert_eq!(table, serial);

    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(nulltext::analysis::SWEEP_FORMAT));
    let body = lines.collect::<Vec<_>>().join("\n");
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr.headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        nulltext::analysis::SWEEP_COLUMNS
    );
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for (rec, row) in rdr.records().zip(&table.rows) {
        let rec = rec.unwrap();
        assert_eq!(
            rec[col("log_likelihood")].parse::<f64>().unwrap().to_bits(),
            row.log_likelihood.to_bits()
        );
        let fin: Vec<f64> = rec[col("final_sample")]
            .split(' ')
            .map(|v| v.parse().unwrap())
            .collect();
        assert!(Latent::new(fin).unwrap().bit_eq(&row.final_sample));
    }
}

#[test]
fn correlation_inputs_are_ordered_on_both_datasets() {
    for dataset in ["bundled:two_class", "bundled:ring4"] {
        let cfg = nulltext::config::RunConfig {
            dataset: dataset.into(),
            ..Default::default()
        };
        let mix = cfg.load_dataset().unwrap();
        let lab = Lab::new(mix.clone(), ScheduleParams::default()).unwrap();
        for (label, x_ref) in mix.modes() {
            let mut corr = CorrelationConfig::default();
            corr.settings.prompt = Condition::Class(if label == 0 { 1 } else { 0 });
            let table = correlation_experiment(&lab, &x_ref, &corr).unwrap();
            assert_eq!(table.rows.len(), 32);
            for seed in table.seeds() {
                assert!(
                    table.proxy_ordered(seed),
                    "{dataset} mode {:?} seed {seed}",
                    x_ref.as_slice()
                );
            }
            assert_eq!(table.summary().len(), 4);
        }
    }
}

#[test]
fn irrelevant_inputs_decorrelate_in_high_dimension() {
    let mix = three_class(64);
    let lab = Lab::new(mix.clone(), ScheduleParams::default()).unwrap();
    let x_ref = mix.modes()[0].1.clone();
    let corr = CorrelationConfig {
        irrelevant: IrrelevantSource::StandardNormal,
        ..steps_override()
    };
    let table = correlation_experiment(&lab, &x_ref, &corr).unwrap();
    let cos: Vec<f64> = table
        .rows
        .iter()
        .filter(|r| r.setting == CorrelationSetting::Irrelevant)
        .map(|r| r.realized_cosine.abs())
        .collect();
    assert_eq!(cos.len(), 8);
    let mean = cos.iter().sum::<f64>() / 8.0;
    assert!(mean <= 0.2, "mean |cos| {mean}");
}

fn steps_override() -> CorrelationConfig {
    let mut c = CorrelationConfig::default();
    c.settings.steps = 50;
    c.rollback = 100;
    c.settings.prompt = Condition::Class(1);
    c
}

#[test]
fn diversity_numbers_are_frozen() {
    let lab = two_class_lab();
    let x_ref = Latent::new(vec![-2.0, 0.8]).unwrap();
    let mut cfg = DiversityConfig::default();
    cfg.settings.prompt = Condition::Class(1);
    let rows = diversity_report(&lab, &x_ref, 32, &cfg).unwrap();
    let frozen = [
        (StrategyChoice::Baseline, 8.063733347616003e-1),
        (StrategyChoice::BackD, 1.2341769966674259e0),
        (StrategyChoice::ImageD, 1.0358601877538697e-6),
    ];
    assert_eq!(rows.len(), 3);
    for (row, (strategy, value)) in rows.iter().zip(frozen) {
        assert_eq!(row.strategy, strategy);
        assert!(
            (row.mean_pairwise_distance - value).abs() <= 1e-9 * value,
            "{strategy:?}: {}",
            row.mean_pairwise_distance
        );
    }
}
