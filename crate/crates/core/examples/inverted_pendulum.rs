//! State feedback on the linearized inverted pendulum for two thresholds.

use ddstc::config::ExperimentConfig;
use ddstc::sim::metrics;

fn main() -> ddstc::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/inverted_pendulum.toml").as_ref())?;
    let sys = cfg.validate()?;
    let data = cfg.collect(&sys)?;
    let base = cfg.build_controller(&sys, &data)?;
    for sigma in [0.27, 0.3] {
        let s = metrics(&cfg.run_with(&sys, &base.with_sigma(sigma)?, cfg.seed)?);
        println!(
            "sigma = {sigma}: {} samples, |x_T|_inf = {:.3e}, envelope violations {}",
            s.packets, s.terminal_state_inf, s.audit_violations
        );
    }
    Ok(())
}
