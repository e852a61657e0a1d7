//! Free generation with and without Back-D on the two-class dataset.
//!
//!     cargo run --release --example free_generation

use nulltext::analysis::{Lab, RunSettings, StrategyChoice};
use nulltext::config::RunConfig;
use nulltext::seed::SeedSequence;
use nulltext::{Condition, ScheduleParams};

fn main() -> nulltext::Result<()> {
    let mix = RunConfig::default().load_dataset()?;
    let lab = Lab::new(mix, ScheduleParams::default())?;
    let settings = RunSettings {
        prompt: Condition::Class(1),
        ..RunSettings::default()
    };
    println!("seed                 strategy  final                      log p(x|c)  displacement");
    for seed in SeedSequence::new(7).chains(4) {
        for choice in [StrategyChoice::None, StrategyChoice::BackD] {
            let out = lab.run(&settings, choice, 300, 300, None, None, seed)?;
            println!(
                "{seed:<20} {:<9} [{:>9.5}, {:>9.5}]  {:>10.4}  {:.4}",
                choice.name(),
                out.sample[0],
                out.sample[1],
                lab.log_likelihood(&out.sample, settings.prompt)?,
                out.record.displacement()
            );
        }
    }
    Ok(())
}
