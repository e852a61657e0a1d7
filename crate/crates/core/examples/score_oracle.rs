//! Closed-form mixture noise prediction against central differences of the
//! diffused log-density, at two step sizes.
//!
//!     cargo run --release --example score_oracle

use nulltext::config::RunConfig;
use nulltext::denoiser::{finite_difference_epsilon, gmm_epsilon};
use nulltext::seed::chain_rng;
use nulltext::{Condition, Latent, ScheduleParams};

fn main() -> nulltext::Result<()> {
    let mix = RunConfig::default().load_dataset()?;
    let sched = ScheduleParams::default().build()?;
    let mut rng = chain_rng(11);
    println!("  t  condition  |eps|      rel err h=1e-2  rel err h=5e-3");
    for t in [1, 10, 100, 500, 999] {
        for c in [Condition::Class(0), Condition::Class(1), Condition::Null] {
            let x = Latent::standard_normal(2, &mut rng).scale(2.0);
            let exact = gmm_epsilon(&mix, &sched, &x, c, t)?;
            let rel = |h: f64| -> nulltext::Result<f64> {
                let fd = finite_difference_epsilon(&mix, &sched, &x, c, t, h)?;
                Ok(fd.distance(&exact) / exact.norm().max(1e-6))
            };
            println!(
                "{t:>3}  {:<9}  {:>8.5}  {:>14.3e}  {:>14.3e}",
                c.to_string(),
                exact.norm(),
                rel(1e-2)?,
                rel(5e-3)?
            );
        }
    }
    Ok(())
}
