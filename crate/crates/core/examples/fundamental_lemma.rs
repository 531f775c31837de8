//! One persistently exciting experiment on the four-tank plant spans every
//! trajectory of length L: a fresh trajectory is recovered from the Hankel
//! matrices by least squares.

use ddstc::linalg::{numerical_rank, pinv};
use ddstc::model::four_tank;
use ddstc::trajectory::{DataKind, collect_offline_data, generate_pe_input, hankel, stacked_window};
use nalgebra::{DMatrix, DVector};

fn main() -> ddstc::Result<()> {
    let sys = four_tank();
    let (l, n) = (11, sys.state_dim());
    let u = generate_pe_input(2, 300, l + n, 1)?;
    let data = collect_offline_data(&sys, &u, &DVector::zeros(n), DataKind::OutputFeedback)?;
    let hu = hankel(&data.inputs, l)?;
    let hy = hankel(&data.outputs, l)?;
    println!(
        "input Hankel of order {}: rank {} of {}",
        l + n,
        numerical_rank(&hankel(&data.inputs, l + n)?.matrix),
        2 * (l + n)
    );

    let fresh_u = generate_pe_input(2, l, 1, 99)?;
    let (fresh_y, _) = sys.simulate(&DVector::from_vec(vec![0.4, 0.3, 0.2, 0.1]), &fresh_u)?;
    let target = DVector::from_iterator(
        4 * l,
        stacked_window(&fresh_u, 0, l - 1)?.iter().chain(stacked_window(&fresh_y, 0, l - 1)?.iter()).copied(),
    );
    let stacked = DMatrix::from_fn(4 * l, hu.ncols(), |i, j| {
        if i < 2 * l { hu.matrix[(i, j)] } else { hy.matrix[(i - 2 * l, j)] }
    });
    let g = pinv(&stacked) * &target;
    println!("residual of the recovered trajectory: {:.3e}", (&stacked * g - &target).norm());
    Ok(())
}
