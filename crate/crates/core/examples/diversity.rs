//! Spread of final samples across 32 seeds for each image-guided strategy.
//!
//!     cargo run --release --example diversity

use nulltext::analysis::{diversity_report, write_diversity_csv, DiversityConfig, Lab};
use nulltext::config::RunConfig;
use nulltext::Condition;

fn main() -> nulltext::Result<()> {
    let cfg = RunConfig::default();
    let mix = cfg.load_dataset()?;
    let x_ref = cfg.resolve_reference(&mix)?;
    let lab = Lab::new(mix, cfg.schedule)?;
    let mut div = DiversityConfig::default();
    div.settings.prompt = Condition::Class(1);
    let rows = diversity_report(&lab, &x_ref, 32, &div)?;
    write_diversity_csv(&rows, std::io::stdout().lock())
}
