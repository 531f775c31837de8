#![allow(dead_code)]

use ddstc::ddmpc::MpcConfig;
use ddstc::linalg::spectral_radius;
use ddstc::model::LtiSystem;
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Stable, controllable and observable plant with `n_x <= 4`,
/// `n_u, n_y <= 2` and spectral radius in `[0.3, 0.95]`.
pub fn random_system(rng: &mut ChaCha8Rng) -> LtiSystem {
    loop {
        let n = rng.random_range(1..=4usize);
        let m = rng.random_range(1..=2usize);
        let p = rng.random_range(1..=2usize);
        let a = gaussian(rng, n, n);
        let rad = spectral_radius(&a);
        if rad < 1e-3 {
            continue;
        }
        let target = rng.random_range(0.3..0.95);
        let a = a * (target / rad);
        let d = if rng.random_range(0.0..1.0) < 0.3 { gaussian(rng, p, m) * 0.5 } else { DMatrix::zeros(p, m) };
        let sys = LtiSystem::new(a, gaussian(rng, n, m), gaussian(rng, p, n), d).unwrap();
        if sys.is_controllable() && sys.is_observable() {
            return sys;
        }
    }
}

/// Regularization scaled as in the four-tank setting, with an `nbar` that
/// can be made small without touching the weights.
pub fn mpc_config(sys: &LtiSystem, horizon: usize, eta: usize, nbar: f64, box_bound: f64) -> MpcConfig {
    let (m, p) = (sys.input_dim(), sys.output_dim());
    MpcConfig {
        horizon,
        eta,
        q: DMatrix::identity(p, p),
        r: DMatrix::identity(m, m) * 0.1,
        lambda_g: 1e-6 / 0.0015,
        lambda_h: 500.0 * 0.0015,
        noise_bound: nbar,
        u_min: DVector::from_element(m, -box_bound),
        u_max: DVector::from_element(m, box_bound),
        u_eq: DVector::zeros(m),
        y_eq: DVector::zeros(p),
    }
}

pub fn four_tank_config(nbar: f64) -> MpcConfig {
    MpcConfig {
        horizon: 11,
        eta: 2,
        q: DMatrix::identity(2, 2),
        r: DMatrix::identity(2, 2) * 8e-3,
        lambda_g: 1e-6 / nbar,
        lambda_h: 500.0 * nbar,
        noise_bound: nbar,
        u_min: DVector::from_element(2, -2.0),
        u_max: DVector::from_element(2, 2.0),
        u_eq: DVector::from_element(2, 1.0),
        y_eq: DVector::from_vec(vec![0.65, 0.77]),
    }
}
