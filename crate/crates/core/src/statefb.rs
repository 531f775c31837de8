//! Self-triggered state feedback with a zero-order-hold gain.
//!
//! At a trigger the controller receives a noisy state `zeta`, holds
//! `u = K zeta` until the next trigger and predicts the worst-case state
//! trajectory consistent with the data and the noise bound. The next trigger
//! is the first step at which the predicted deviation may exceed a fraction
//! of the current state norm.

use nalgebra::{DMatrix, DVector};

use crate::ddmpc::row_space_basis;
use crate::error::{Error, Result, dim_err};
use crate::linalg::{inf_norm, lqr_gain, solve_dare, spectral_radius};
use crate::model::LtiSystem;
use crate::optim::{BallConstraint, EllipticSection};
use crate::trajectory::HankelMatrix;
use crate::trigger_output::{RhoBounds, estimate_rho_bounds};

#[derive(Debug, Clone, PartialEq)]
pub struct StateFbConfig {
    pub gain: DMatrix<f64>,
    pub horizon: usize,
    pub sigma: f64,
    pub noise_bound: f64,
    pub kappa: f64,
    pub mu: f64,
}

impl StateFbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::Config(format!("horizon must be >= 2, got {}", self.horizon)));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::Config(format!("sigma must lie in (0, 1), got {}", self.sigma)));
        }
        if !(self.kappa > 0.0 && self.mu > 0.0) {
            return Err(Error::Config("kappa and mu must be positive".into()));
        }
        if !(self.noise_bound >= 0.0) || !self.noise_bound.is_finite() {
            return Err(Error::Config("noise bound must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Discrete LQR gain with `u = K x`; fails unless `A + B K` is Schur stable.
pub fn state_gain_oracle(sys: &LtiSystem, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sys.is_controllable() {
        return Err(Error::NotControllable);
    }
    let p = solve_dare(&sys.a, &sys.b, q, r, None)?;
    let k = lqr_gain(&sys.a, &sys.b, &p, r, None)?;
    let rad = spectral_radius(&(&sys.a + &sys.b * &k));
    if rad >= 1.0 {
        return Err(Error::NumericalFailure(format!("closed loop not stable (spectral radius {rad})")));
    }
    Ok(k)
}

/// Per-step worst cases of the predicted trajectory under the held input.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCasePrediction {
    /// `e_tau = max |zeta - x_tau|_inf` for `tau = 1..L-1` (index `tau - 1`).
    pub envelope: Vec<f64>,
    /// `max |x_tau|_inf` for `tau = 1..L-1`.
    pub step_norms: Vec<f64>,
    /// Bound on `|h|_inf`.
    pub h_bound: f64,
}

impl WorstCasePrediction {
    pub fn envelope(&self, tau: usize) -> f64 {
        self.envelope[tau - 1]
    }

    /// `sum_(i=1)^tau max |x_i|_inf`.
    pub fn sum_norm_bound(&self, tau: usize) -> f64 {
        self.step_norms[..tau].iter().sum()
    }

    pub fn max_tau(&self) -> usize {
        self.envelope.len()
    }
}

/// Precomputed data for [`worst_case_prediction`].
#[derive(Debug, Clone)]
pub struct StatePredictor {
    /// Input and state Hankel matrices of depth `L`, reduced to the row space.
    hu: DMatrix<f64>,
    hx: DMatrix<f64>,
    n_u: usize,
    n_x: usize,
    horizon: usize,
}

impl StatePredictor {
    pub fn new(hu: &HankelMatrix, hx: &HankelMatrix) -> Result<Self> {
        if hu.depth != hx.depth || hu.ncols() != hx.ncols() {
            return dim_err("input and state Hankel matrices do not match");
        }
        if hu.depth < 2 {
            return Err(Error::InvalidArgument("horizon must be >= 2".into()));
        }
        let stacked = DMatrix::from_fn(hu.matrix.nrows() + hx.matrix.nrows(), hu.ncols(), |i, j| {
            if i < hu.matrix.nrows() { hu.matrix[(i, j)] } else { hx.matrix[(i - hu.matrix.nrows(), j)] }
        });
        let basis = row_space_basis(&stacked);
        Ok(Self {
            hu: &hu.matrix * &basis,
            hx: &hx.matrix * &basis,
            n_u: hu.signal_dim,
            n_x: hx.signal_dim,
            horizon: hu.depth,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Maximizes `+-(x_tau)_k` over `{(g, h) : H_u g = 1 (x) K zeta,
    /// H_x,0 g + h = zeta, |h| <= nbar}` for every step and coordinate.
    ///
    /// The sum of infinity norms over the horizon is not concave, so it is
    /// bounded by the sum of the per-step maxima.
    pub fn predict(&self, zeta: &DVector<f64>, gain: &DMatrix<f64>, noise_bound: f64) -> Result<WorstCasePrediction> {
        let (m, n, l) = (self.n_u, self.n_x, self.horizon);
        if zeta.len() != n || gain.nrows() != m || gain.ncols() != n {
            return dim_err("state or gain has the wrong size");
        }
        let k = self.hu.ncols();
        let u = gain * zeta;
        let nv = k + n;
        let rows = l * m + n;
        let mut eq = DMatrix::zeros(rows, nv);
        eq.view_mut((0, 0), (l * m, k)).copy_from(&self.hu);
        eq.view_mut((l * m, 0), (n, k)).copy_from(&self.hx.rows(0, n));
        eq.view_mut((l * m, k), (n, n)).fill_with_identity();
        let mut rhs = DVector::zeros(rows);
        for i in 0..l {
            rhs.rows_mut(i * m, m).copy_from(&u);
        }
        rhs.rows_mut(l * m, n).copy_from(zeta);
        let mut s = DMatrix::zeros(n, nv);
        s.view_mut((0, k), (n, n)).fill_with_identity();
        let ball = BallConstraint { s, center: DVector::zeros(n), radius: noise_bound };
        let set = EllipticSection::new(&eq, &rhs, &ball)?;

        let mut envelope = Vec::with_capacity(l - 1);
        let mut step_norms = Vec::with_capacity(l - 1);
        for tau in 1..l {
            let mut e: f64 = 0.0;
            let mut s: f64 = 0.0;
            for c in 0..n {
                let mut obj = DVector::zeros(nv);
                obj.rows_mut(0, k).copy_from(&self.hx.row(tau * n + c).transpose());
                let (hi, _) = set.maximize(&obj)?;
                let (neg_lo, _) = set.maximize(&(-obj))?;
                let lo = -neg_lo;
                e = e.max(zeta[c] - lo).max(hi - zeta[c]);
                s = s.max(hi.abs()).max(lo.abs());
            }
            envelope.push(e);
            step_norms.push(s);
        }
        Ok(WorstCasePrediction { envelope, step_norms, h_bound: noise_bound })
    }
}

/// One-shot wrapper around [`StatePredictor`].
pub fn worst_case_prediction(
    hu: &HankelMatrix,
    hx: &HankelMatrix,
    zeta: &DVector<f64>,
    cfg: &StateFbConfig,
) -> Result<WorstCasePrediction> {
    if hu.depth != cfg.horizon {
        return dim_err("Hankel depth must equal the horizon");
    }
    StatePredictor::new(hu, hx)?.predict(zeta, &cfg.gain, cfg.noise_bound)
}

/// `phi = e_tau + rho_tau (nbar + |h|_inf) + nbar`, with `|h|_inf <= nbar`.
pub fn trigger_function_phi(pred: &WorstCasePrediction, rho_tau: f64, noise_bound: f64, tau: usize) -> f64 {
    pred.envelope(tau) + rho_tau * (noise_bound + pred.h_bound) + noise_bound
}

/// Growth bounds with `C = I`: `J'_tau >= ||A^(tau+1)||` from Hankel
/// matrices of depth `L + 1`.
pub fn rho_bounds_state(hu: &HankelMatrix, hx: &HankelMatrix, horizon: usize) -> Result<RhoBounds> {
    estimate_rho_bounds(hu, hx, 1, horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SfDecision {
    pub tau: usize,
    /// `tau` chosen by the threshold alone.
    pub tau_phi: usize,
    /// The L2-like condition shortened the interval.
    pub l2_limited: bool,
}

/// Smallest `tau` with `phi(tau) > sigma |zeta|_inf`, else `L - 1`; then
/// shortened until `kappa sum |x_i| <= mu tau nbar` holds (floor 1).
pub fn next_trigger_time_sf(pred: &WorstCasePrediction, rho: &RhoBounds, zeta: &DVector<f64>, cfg: &StateFbConfig) -> SfDecision {
    let lmax = pred.max_tau().min(cfg.horizon - 1);
    let level = cfg.sigma * inf_norm(zeta);
    let tau_phi = (1..=lmax)
        .find(|&tau| trigger_function_phi(pred, rho.get(tau), cfg.noise_bound, tau) > level)
        .unwrap_or(lmax);
    let l2_ok = |tau: usize| cfg.kappa * pred.sum_norm_bound(tau) <= cfg.mu * tau as f64 * cfg.noise_bound;
    let mut tau = tau_phi;
    while tau > 1 && !l2_ok(tau) {
        tau -= 1;
    }
    SfDecision { tau, tau_phi, l2_limited: tau < tau_phi }
}
