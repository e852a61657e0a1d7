//! Four null-branch inputs of decreasing relevance to the reference, run on
//! shared seeds. Prints the per-setting means, then the full table as CSV.
//!
//!     cargo run --release --example correlation

use nulltext::analysis::{correlation_experiment, CorrelationConfig, Lab};
use nulltext::config::RunConfig;
use nulltext::Condition;

fn main() -> nulltext::Result<()> {
    let cfg = RunConfig::default();
    let mix = cfg.load_dataset()?;
    let x_ref = cfg.resolve_reference(&mix)?;
    let lab = Lab::new(mix, cfg.schedule)?;
    let mut corr = CorrelationConfig::default();
    corr.settings.prompt = Condition::Class(1);
    let table = correlation_experiment(&lab, &x_ref, &corr)?;
    println!("setting       proxy    gap      displacement  log p(x|c)");
    for s in table.summary() {
        println!(
            "{:<12} {:>7.4} {:>8.4} {:>13.4} {:>11.4}",
            s.setting.name(),
            s.proxy_mean,
            s.gap_mean,
            s.displacement_mean,
            s.log_likelihood_mean
        );
    }
    let ordered = table.seeds().iter().filter(|s| table.proxy_ordered(**s)).count();
    println!(
        "input ordering holds for {ordered}/{} seeds\n",
        table.seeds().len()
    );
    table.write_csv(std::io::stdout().lock())
}
