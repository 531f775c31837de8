//! Self-triggered output feedback on the four-tank plant: one closed loop
//! and the inter-trigger times it chose.

use ddstc::config::ExperimentConfig;
use ddstc::sim::metrics;

fn main() -> ddstc::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/four_tank.toml").as_ref())?;
    let sys = cfg.validate()?;
    let data = cfg.collect(&sys)?;
    let ctrl = cfg.build_controller(&sys, &data)?;
    let run = cfg.run_with(&sys, &ctrl, cfg.seed)?;

    print!("{}", metrics(&run).to_key_values());
    let audits = &run.log.audits;
    let worst = audits
        .iter()
        .filter_map(|a| a.realized.map(|r| r / a.bound))
        .fold(0.0, f64::max);
    println!("largest realized/bound ratio of the prediction error: {worst:.3}");
    Ok(())
}
