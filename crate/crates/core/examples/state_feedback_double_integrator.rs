//! Self-triggered state feedback on the double integrator from (3, -2).

use ddstc::config::ExperimentConfig;
use ddstc::linalg::inf_norm;
use ddstc::sim::metrics;

fn main() -> ddstc::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/double_integrator.toml").as_ref())?;
    let sys = cfg.validate()?;
    let data = cfg.collect(&sys)?;
    let ctrl = cfg.build_controller(&sys, &data)?;
    let run = cfg.run_with(&sys, &ctrl, cfg.seed)?;

    for (t, tau) in run.log.trigger_times.iter().zip(&run.log.inter_trigger).take(20) {
        println!("t = {t:>3}  tau = {tau}  |x|_inf = {:.3e}", inf_norm(&run.states.column(*t).into_owned()));
    }
    print!("{}", metrics(&run).to_key_values());
    Ok(())
}
