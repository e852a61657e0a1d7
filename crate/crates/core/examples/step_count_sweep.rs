//! Free-generation Back-D across DDIM step counts. 60 does not divide 1000,
//! so that cell is reported as skipped rather than silently dropped.
//!
//!     cargo run --release --example step_count_sweep

use nulltext::analysis::{run_sweep, Lab, SweepSpec};
use nulltext::config::RunConfig;
use nulltext::seed::SeedSequence;
use nulltext::Condition;

fn main() -> nulltext::Result<()> {
    let cfg = RunConfig::default();
    let lab = Lab::new(cfg.load_dataset()?, cfg.schedule)?;
    let spec = SweepSpec {
        steps: vec![20, 50, 60, 100],
        seeds: SeedSequence::new(3).chains(32),
        ..SweepSpec::free_generation(Condition::Class(0))
    };
    let table = run_sweep(&lab, &spec)?;
    println!("steps  mean log p(x|c)");
    for (n, ll) in table.mean_log_likelihood_by(|r| r.cell.steps) {
        println!("{n:>5}  {ll:>15.4}");
    }
    for s in &table.skipped {
        println!("skipped N={}: {}", s.cell.steps, s.reason);
    }
    Ok(())
}
