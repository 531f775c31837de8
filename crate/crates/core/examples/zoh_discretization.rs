//! Sample the double integrator and the inverted pendulum with a zero-order
//! hold and print the discrete matrices.

use ddstc::linalg::spectral_radius;
use ddstc::model::{discretize_zoh, double_integrator_continuous, inverted_pendulum_continuous};

fn main() -> ddstc::Result<()> {
    let (ac, bc) = double_integrator_continuous();
    let (a, b) = discretize_zoh(&ac, &bc, 0.1)?;
    println!("double integrator, dt = 0.1\nA = {a}B = {b}");

    let (ac, bc) = inverted_pendulum_continuous(1.0, 10.0, 3.0, 10.0);
    let (a, b) = discretize_zoh(&ac, &bc, 0.1)?;
    println!("inverted pendulum, dt = 0.1\nA = {a}B = {b}");
    println!("spectral radius {:.4} (open-loop unstable)", spectral_radius(&a));
    Ok(())
}
