//! Data-based growth constants against the model-based values they bound.

use ddstc::model::four_tank;
use ddstc::trajectory::{DataKind, collect_offline_data, generate_pe_input, hankel};
use ddstc::trigger_output::estimate_rho_bounds;
use nalgebra::DVector;

fn main() -> ddstc::Result<()> {
    let sys = four_tank();
    let (l, eta) = (11, sys.observability_index()?);
    let u = generate_pe_input(2, 800, l + eta + sys.state_dim(), 1)?;
    let data = collect_offline_data(&sys, &u, &DVector::zeros(4), DataKind::OutputFeedback)?;
    let rho = estimate_rho_bounds(&hankel(&data.inputs, l + eta)?, &hankel(&data.outputs, l + eta)?, eta, l)?;
    println!("{:>3} {:>12} {:>12}", "i", "from data", "from model");
    for i in 1..l {
        println!("{i:>3} {:>12.6} {:>12.6}", rho.get(i), sys.rho_oracle(i, eta)?);
    }
    Ok(())
}
