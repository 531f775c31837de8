//! A single data-driven MPC solve for the four-tank plant, starting from
//! measurements taken at rest.

use ddstc::config::ExperimentConfig;
use ddstc::ddmpc::{MpcData, solve_mpc};
use nalgebra::DVector;

fn main() -> ddstc::Result<()> {
    let cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/four_tank.toml").as_ref())?;
    let sys = cfg.validate()?;
    let data = cfg.collect(&sys)?;
    let mpc = cfg.mpc_config(&sys)?;
    let term = cfg.terminal(&sys, &mpc)?;

    let zeros = vec![DVector::zeros(2); mpc.eta];
    let sol = solve_mpc(&mpc, &MpcData::new(&data, &mpc)?, &zeros, &zeros, &term)?;
    println!("optimal cost {:.4}, slack norm {:.2e}", sol.cost, sol.h.norm());
    for i in 0..mpc.horizon as isize {
        let (u, y) = (sol.u(i), sol.y(i));
        println!("{i:>2}  u = ({:.3}, {:.3})  y = ({:.3}, {:.3})", u[0], u[1], y[0], y[1]);
    }
    Ok(())
}
