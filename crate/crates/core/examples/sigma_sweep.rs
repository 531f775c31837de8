//! Mean number of transmissions against the threshold sigma, over a few
//! noise seeds, using the same sweep as the `sweep` subcommand.

use ddstc::cli::{cmd_sweep, sweep_means};
use ddstc::config::ExperimentConfig;

fn main() -> ddstc::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/four_tank.toml").as_ref())?;
    let out = std::env::temp_dir().join("ddstc-sigma-sweep");
    let rows = cmd_sweep(&cfg, &[0.7, 0.8, 0.88, 0.95], 5, &out)?;
    println!("{:>6} {:>6} {:>14}", "sigma", "runs", "mean packets");
    for m in sweep_means(&rows) {
        println!("{:>6} {:>6} {:>14.2}", m.sigma, m.runs, m.mean_packets);
    }
    println!("cells written to {}", out.display());
    Ok(())
}
