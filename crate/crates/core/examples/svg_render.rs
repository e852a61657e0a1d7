//! Scatter of the ring dataset with a few Back-D trajectories.
//!
//!     cargo run --release --example svg_render

use nulltext::analysis::{Lab, RunSettings, StrategyChoice};
use nulltext::config::{dataset_points, RunConfig};
use nulltext::seed::SeedSequence;
use nulltext::svg::{render_svg, PlotLayers};
use nulltext::{Condition, Latent, ScheduleParams};

fn main() -> nulltext::Result<()> {
    let cfg = RunConfig {
        dataset: "bundled:ring4".into(),
        ..RunConfig::default()
    };
    let mix = cfg.load_dataset()?;
    let lab = Lab::new(mix.clone(), ScheduleParams::default())?;
    let settings = RunSettings {
        prompt: Condition::Class(2),
        ..RunSettings::default()
    };
    let mut samples = Vec::new();
    let mut paths = Vec::new();
    for seed in SeedSequence::new(5).chains(6) {
        let out = lab.run(&settings, StrategyChoice::BackD, 300, 300, None, None, seed)?;
        paths.push(
            out.trajectory
                .iter()
                .map(|(_, x)| x.clone())
                .collect::<Vec<Latent>>(),
        );
        samples.push(out.sample);
    }
    let points = dataset_points(&mix)?;
    let svg = render_svg(
        &mix,
        &PlotLayers {
            dataset_points: &points,
            samples: &samples,
            trajectories: paths,
            title: "ring4, class 2, backd b=300 s=300".into(),
        },
    )?;
    std::fs::create_dir_all("out/examples").map_err(|e| nulltext::Error::Io {
        path: "out/examples".into(),
        source: e,
    })?;
    std::fs::write("out/examples/ring4.svg", svg).map_err(|e| nulltext::Error::Io {
        path: "out/examples/ring4.svg".into(),
        source: e,
    })?;
    println!("wrote out/examples/ring4.svg");
    Ok(())
}
