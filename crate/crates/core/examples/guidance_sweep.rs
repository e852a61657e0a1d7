//! Guidance-scale sweep for image-guided Back-D. Regime boundaries are left
//! to the reader; the table reports likelihood and displacement per gamma.
//!
//!     cargo run --release --example guidance_sweep

use nulltext::analysis::{run_sweep, Lab, StrategyChoice, SweepSpec};
use nulltext::config::RunConfig;
use nulltext::guidance::SamplingMode;
use nulltext::seed::SeedSequence;
use nulltext::Condition;

fn main() -> nulltext::Result<()> {
    let cfg = RunConfig::default();
    let mix = cfg.load_dataset()?;
    let x_ref = cfg.resolve_reference(&mix)?;
    let lab = Lab::new(mix, cfg.schedule)?;
    let spec = SweepSpec {
        mode: SamplingMode::ImageGuided,
        strategy: StrategyChoice::BackD,
        gamma: vec![1.0, 2.0, 4.0, 8.0, 12.0],
        seeds: SeedSequence::new(1).chains(16),
        reference: Some(x_ref),
        ..SweepSpec::free_generation(Condition::Class(1))
    };
    let table = run_sweep(&lab, &spec)?;
    let disp = table
        .rows
        .iter()
        .fold(Vec::<(f64, f64, usize)>::new(), |mut acc, r| {
            match acc.iter_mut().find(|a| a.0 == r.cell.gamma) {
                Some(a) => {
                    a.1 += r.displacement;
                    a.2 += 1;
                }
                None => acc.push((r.cell.gamma, r.displacement, 1)),
            }
            acc
        });
    println!("gamma  mean log p(x|c)  mean displacement");
    for ((g, ll), (_, d, n)) in table.mean_log_likelihood_by(|r| r.cell.gamma).iter().zip(&disp) {
        println!("{g:>5}  {ll:>15.4}  {:>17.4}", d / *n as f64);
    }
    table.write_csv(std::io::stdout().lock())
}
