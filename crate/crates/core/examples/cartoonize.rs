//! Image-guided runs from a class-0 reference toward class 1, comparing plain
//! img2img with both disturbance strategies. Writes a bundle per strategy.
//!
//!     cargo run --release --example cartoonize

use nulltext::analysis::StrategyChoice;
use nulltext::cli::cmd_cartoonize;
use nulltext::config::{ReferenceSpec, RunConfig};

fn main() -> nulltext::Result<()> {
    for strategy in [
        StrategyChoice::Baseline,
        StrategyChoice::BackD,
        StrategyChoice::ImageD,
    ] {
        let cfg = RunConfig {
            strategy,
            prompt_class: 1,
            reference: ReferenceSpec::Mode(0),
            chains: 8,
            output: format!("out/examples/cartoonize/{}", strategy.name()),
            ..RunConfig::default()
        };
        let out = cmd_cartoonize(&cfg)?;
        println!(
            "{:<9} {}  ({})",
            strategy.name(),
            out.bundle.dir.display(),
            out.log[1]
        );
    }
    Ok(())
}
