//! Self-triggering for the output-feedback MPC: data-based growth bounds,
//! the prediction-error bound and the next inter-trigger time.

use nalgebra::{DMatrix, DVector};

use crate::ddmpc::{MpcConfig, MpcSolution, TerminalIngredients, row_space_basis};
use crate::error::{Error, Result, dim_err};
use crate::linalg::{numerical_rank, singular_values, sym_eig_extremes};
use crate::optim::{Constraints, SolveStatus, maximize_linear};
use crate::trajectory::HankelMatrix;

/// Upper bounds `J'_i >= ||C A^(i+eta) Theta^+||_2` for `i = 1..L-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoBounds {
    values: Vec<f64>,
}

impl RhoBounds {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("bounds must be nonnegative and nonempty".into()));
        }
        Ok(Self { values })
    }

    /// `J'_i`; indices past the last stored bound clamp to it.
    pub fn get(&self, i: usize) -> f64 {
        assert!(i >= 1, "bounds are indexed from 1");
        self.values[(i - 1).min(self.values.len() - 1)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Solves, for each `i`, the linear programs
/// `max +-(y_(i+eta))_k` over data trajectories with zero inputs on
/// `0..i+eta` and `|y_[0, eta-1]|_inf <= 1`, and returns
/// `J'_i = sqrt(n_y) * max`.
///
/// The `sqrt(n_y)` factor turns the infinity-norm maximum into an upper bound
/// on the spectral norm of `C A^(i+eta) Theta^+`.
pub fn estimate_rho_bounds(hu: &HankelMatrix, hy: &HankelMatrix, eta: usize, horizon: usize) -> Result<RhoBounds> {
    if hu.depth != horizon + eta || hy.depth != horizon + eta {
        return dim_err("Hankel depth must be L + eta");
    }
    if horizon < 2 || eta == 0 {
        return Err(Error::InvalidArgument("need L >= 2 and eta >= 1".into()));
    }
    let (m, p) = (hu.signal_dim, hy.signal_dim);
    // Components of g outside the row space change nothing below.
    let stacked = DMatrix::from_fn(hu.matrix.nrows() + hy.matrix.nrows(), hu.ncols(), |i, j| {
        if i < hu.matrix.nrows() { hu.matrix[(i, j)] } else { hy.matrix[(i - hu.matrix.nrows(), j)] }
    });
    let basis = row_space_basis(&stacked);
    let k = basis.ncols();
    let mut values = Vec::with_capacity(horizon - 1);
    for i in 1..horizon {
        let lag = i + eta;
        // Variables: (beta, w) with w = y_[0, eta-1] boxed to [-1, 1].
        let hu_lead = hu.blocks(0, lag + 1) * &basis;
        let hy_win = hy.blocks(0, eta) * &basis;
        let hy_lag = hy.block(lag) * &basis;
        let nw = eta * p;
        let n = k + nw;
        let mut eq = DMatrix::zeros((lag + 1) * m + nw, n);
        eq.view_mut((0, 0), ((lag + 1) * m, k)).copy_from(&hu_lead);
        eq.view_mut(((lag + 1) * m, 0), (nw, k)).copy_from(&hy_win);
        for j in 0..nw {
            eq[((lag + 1) * m + j, k + j)] = -1.0;
        }
        let mut cons = Constraints::free(n);
        cons.eq_matrix = eq;
        cons.eq_rhs = DVector::zeros((lag + 1) * m + nw);
        for j in 0..nw {
            cons.lower[k + j] = -1.0;
            cons.upper[k + j] = 1.0;
        }
        let mut best: f64 = 0.0;
        for c in 0..p {
            for sign in [1.0, -1.0] {
                let mut obj = DVector::zeros(n);
                obj.rows_mut(0, k).copy_from(&(hy_lag.row(c).transpose() * sign));
                let res = maximize_linear(&obj, &cons)?;
                match res.status {
                    SolveStatus::Optimal => best = best.max(res.objective),
                    SolveStatus::Unbounded => return Err(Error::Unbounded),
                    SolveStatus::Infeasible => return Err(Error::Infeasible),
                    SolveStatus::NumericalFailure => {
                        return Err(Error::NumericalFailure(format!("growth bound LP for i = {i}")));
                    }
                }
            }
        }
        values.push((p as f64).sqrt() * best.max(0.0));
    }
    RhoBounds::new(values)
}

/// `(sqrt(eta) nbar + |h_[-eta,-1]|) sqrt(sum_(i=tau)^(tau+eta-1) J'_i^2) + |h_[tau-eta, tau-1]|`.
pub fn prediction_error_bound(sol: &MpcSolution, tau: usize, rho: &RhoBounds, noise_bound: f64, eta: usize) -> Result<f64> {
    let l = sol.horizon();
    if tau < 1 || tau > l.saturating_sub(1) {
        return Err(Error::InvalidArgument(format!("tau = {tau} outside 1..{}", l.saturating_sub(1))));
    }
    let eta_i = eta as isize;
    let past = sol.h_norm(-eta_i, -1);
    let growth: f64 = (tau..tau + eta).map(|i| rho.get(i).powi(2)).sum::<f64>().sqrt();
    let window = sol.h_norm(tau as isize - eta_i, tau as isize - 1);
    Ok(((eta as f64).sqrt() * noise_bound + past) * growth + window)
}

/// How the recursive-feasibility threshold compares radii with eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RadiusRule {
    /// `r / lmax(P_r)`.
    #[default]
    Literal,
    /// `r / sqrt(lmax(P_r))`, the scaling that makes both sides radii.
    Sqrt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerParams {
    pub sigma: f64,
    pub r: f64,
    pub eps: f64,
    /// `|H_uxi^+|` = 1 / smallest singular value.
    pub huxi_pinv_norm: f64,
    pub lambda_max_q: f64,
    pub lambda_max_pr: f64,
    pub lambda_min_r: f64,
    pub radius_rule: RadiusRule,
}

/// Stacks the input Hankel matrix of depth `L + eta` with the extended
/// states `xi^p` at each window start and precomputes the constants of the
/// trigger rule.
///
/// The input part of `xi^p` repeats the first `eta` input blocks, so only
/// the `L` later input blocks are stacked on top of it; the literal stacking
/// is never full row rank.
pub fn precompute_trigger_params(
    hu: &HankelMatrix,
    hy: &HankelMatrix,
    cfg: &MpcConfig,
    term: &TerminalIngredients,
    sigma: f64,
    radius_rule: RadiusRule,
) -> Result<TriggerParams> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::Config(format!("sigma must lie in (0, 1), got {sigma}")));
    }
    if !term.radius_compatible(&cfg.r, cfg.horizon) {
        return Err(Error::Config("terminal radii violate the compatibility condition".into()));
    }
    let eta = cfg.eta;
    if hu.depth != cfg.horizon + eta || hy.depth < eta || hu.ncols() != hy.ncols() {
        return dim_err("Hankel matrices do not match the horizon");
    }
    let huxi = huxi_matrix(hu, hy, eta);
    let rank = numerical_rank(&huxi);
    if rank < huxi.nrows() {
        return Err(Error::RankDeficient(format!(
            "H_uxi has rank {rank} < {} rows",
            huxi.nrows()
        )));
    }
    let sv = singular_values(&huxi);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(TriggerParams {
        sigma,
        r: term.r,
        eps: term.eps,
        huxi_pinv_norm: 1.0 / smin,
        lambda_max_q: sym_eig_extremes(&cfg.q).1,
        lambda_max_pr: sym_eig_extremes(&term.p_r).1,
        lambda_min_r: sym_eig_extremes(&cfg.r).0,
        radius_rule,
    })
}

/// `[H_u blocks eta..L+eta-1; H_u blocks 0..eta-1; H_y blocks 0..eta-1]`.
pub fn huxi_matrix(hu: &HankelMatrix, hy: &HankelMatrix, eta: usize) -> DMatrix<f64> {
    let l = hu.depth - eta;
    let future = hu.blocks(eta, l);
    let past_u = hu.blocks(0, eta);
    let past_y = hy.blocks(0, eta);
    let rows = future.nrows() + past_u.nrows() + past_y.nrows();
    let mut m = DMatrix::zeros(rows, hu.ncols());
    m.view_mut((0, 0), (future.nrows(), hu.ncols())).copy_from(&future);
    m.view_mut((future.nrows(), 0), (past_u.nrows(), hu.ncols())).copy_from(&past_u);
    m.view_mut((future.nrows() + past_u.nrows(), 0), (past_y.nrows(), hu.ncols()))
        .copy_from(&past_y);
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriggerDecision {
    pub tau: usize,
    /// Largest prefix-admissible `tau` for the feasibility condition.
    pub tau_hat: Option<usize>,
    /// Largest `tau` meeting the decrease condition.
    pub tau_check: Option<usize>,
    /// One of the two sets was empty and the floor `tau = 1` applied.
    pub threshold_violated: bool,
}

fn dev(sol: &MpcSolution, k: usize, xi_e: &DVector<f64>) -> f64 {
    (&sol.xi_pred[k] - xi_e).norm()
}

/// Both sides of the recursive-feasibility test at `tau`: `(bound, threshold)`.
pub fn feasibility_sides(
    sol: &MpcSolution,
    tau: usize,
    params: &TriggerParams,
    rho: &RhoBounds,
    cfg: &MpcConfig,
) -> Result<(f64, f64)> {
    let bound = prediction_error_bound(sol, tau, rho, cfg.noise_bound, cfg.eta)?;
    let radius = match params.radius_rule {
        RadiusRule::Literal => params.r / params.lambda_max_pr,
        RadiusRule::Sqrt => params.r / params.lambda_max_pr.sqrt(),
    };
    Ok((bound, radius - dev(sol, tau, &cfg.xi_eq())))
}

/// Both sides of the decrease test at `tau`: `(lhs, rhs)`.
pub fn decrease_sides(sol: &MpcSolution, tau: usize, params: &TriggerParams, rho: &RhoBounds, cfg: &MpcConfig) -> (f64, f64) {
    let eta = cfg.eta;
    let nbar = cfg.noise_bound;
    let xi_e = cfg.xi_eq();
    let reg = cfg.lambda_g * nbar * params.huxi_pinv_norm.powi(2) * (1.0 + params.lambda_max_pr / params.lambda_min_r);
    let coef_a = 2.0 * (params.lambda_max_q + 2.0 * params.lambda_max_pr + reg);
    let coef_b = 2.0 * (params.lambda_max_pr + reg);
    let h_past2 = sol.h_norm(-(eta as isize), -1).powi(2);
    let growth: f64 = (0..tau).map(|i| rho.get(i + eta).powi(2)).sum();
    let h_pred2: f64 = (0..tau as isize).map(|i| sol.h_norm(i, i).powi(2)).sum();
    let lhs = coef_a * ((eta as f64 * nbar * nbar + h_past2) * growth + h_pred2)
        + cfg.lambda_h * eta as f64 * nbar * nbar
        + params.eps * params.eps
        + coef_b * dev(sol, tau, &xi_e).powi(2);
    let rhs = params.sigma * (0..tau).map(|i| dev(sol, i, &xi_e).powi(2)).sum::<f64>();
    (lhs, rhs)
}

/// `tau = max(1, min(tau_hat, tau_check, L - 1))` by enumeration over `1..L-1`.
pub fn next_trigger_time(sol: &MpcSolution, params: &TriggerParams, rho: &RhoBounds, cfg: &MpcConfig) -> Result<TriggerDecision> {
    let lmax = cfg.horizon - 1;
    let mut tau_hat = None;
    for tau in 1..=lmax {
        let (bound, threshold) = feasibility_sides(sol, tau, params, rho, cfg)?;
        if bound <= threshold {
            tau_hat = Some(tau);
        } else {
            break;
        }
    }
    let tau_check = (1..=lmax).rev().find(|&tau| {
        let (lhs, rhs) = decrease_sides(sol, tau, params, rho, cfg);
        lhs <= rhs
    });
    let tau = match (tau_hat, tau_check) {
        (Some(a), Some(b)) => a.min(b).min(lmax).max(1),
        _ => 1,
    };
    Ok(TriggerDecision { tau, tau_hat, tau_check, threshold_violated: tau_hat.is_none() || tau_check.is_none() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddmpc::{MpcData, TerminalDesign, solve_mpc, terminal_ingredients_oracle};
    use crate::model::{LtiSystem, four_tank};
    use crate::trajectory::{DataKind, collect_offline_data, generate_pe_input, hankel};
    use approx::assert_relative_eq;

    fn hankels(sys: &LtiSystem, n: usize, depth: usize, seed: u64) -> (HankelMatrix, HankelMatrix) {
        let order = depth + sys.state_dim();
        let u = generate_pe_input(sys.input_dim(), n, order, seed).unwrap();
        let d = collect_offline_data(sys, &u, &DVector::zeros(sys.state_dim()), DataKind::OutputFeedback).unwrap();
        (hankel(&d.inputs, depth).unwrap(), hankel(&d.outputs, depth).unwrap())
    }

    fn scalar(a: f64) -> LtiSystem {
        LtiSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn scalar_plant_bounds_are_exact_powers() {
        let sys = scalar(0.5);
        let (hu, hy) = hankels(&sys, 60, 6, 1);
        let rho = estimate_rho_bounds(&hu, &hy, 1, 5).unwrap();
        for i in 1..5 {
            let exact = 0.5f64.powi(i as i32 + 1);
            assert!(rho.get(i) >= exact - 1e-9);
            assert_relative_eq!(rho.get(i), exact, epsilon = 1e-7);
            assert_relative_eq!(rho.get(i), sys.rho_oracle(i, 1).unwrap(), epsilon = 1e-7);
        }
        assert!(rho.values().windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn deadbeat_plant_bounds_vanish() {
        let sys = scalar(0.0);
        let (hu, hy) = hankels(&sys, 60, 6, 2);
        let rho = estimate_rho_bounds(&hu, &hy, 1, 5).unwrap();
        assert!(rho.values().iter().all(|v| v.abs() < 1e-7));
    }

    #[test]
    fn four_tank_bounds_dominate_oracle() {
        let sys = four_tank();
        let (hu, hy) = hankels(&sys, 400, 13, 3);
        let rho = estimate_rho_bounds(&hu, &hy, 2, 11).unwrap();
        for i in 1..11 {
            let exact = sys.rho_oracle(i, 2).unwrap();
            assert!(rho.get(i) >= exact * (1.0 - 1e-6), "i={i}: {} < {exact}", rho.get(i));
        }
    }

    #[test]
    fn bounds_clamp_past_the_horizon() {
        let rho = RhoBounds::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(rho.get(3), 3.0);
        assert_eq!(rho.get(7), 3.0);
    }

    fn solution_with(h: DMatrix<f64>, eta: usize, l: usize) -> MpcSolution {
        let steps = l + eta;
        MpcSolution {
            u_pred: DMatrix::zeros(1, steps),
            y_pred: DMatrix::zeros(1, steps),
            h,
            g: DVector::zeros(1),
            xi_pred: vec![DVector::zeros(2 * eta); l + 1],
            cost: 0.0,
            eta,
            primal_residual: 0.0,
        }
    }

    #[test]
    fn error_bound_closed_forms() {
        let rho = RhoBounds::new(vec![1.5, 2.0, 2.5, 3.0]).unwrap();
        let sol = solution_with(DMatrix::zeros(1, 7), 2, 5);
        assert_eq!(prediction_error_bound(&sol, 2, &rho, 0.0, 2).unwrap(), 0.0);
        let nbar = 0.0015;
        let b = prediction_error_bound(&sol, 2, &rho, nbar, 2).unwrap();
        assert_relative_eq!(b, 2f64.sqrt() * nbar * (2.0f64.powi(2) + 2.5f64.powi(2)).sqrt(), epsilon = 1e-15);
        // Slack terms enter through the past and the window norms.
        let mut h = DMatrix::zeros(1, 7);
        h[(0, 0)] = 0.3; // h_-2
        h[(0, 3)] = 0.4; // h_1
        let sol = solution_with(h, 2, 5);
        let b = prediction_error_bound(&sol, 2, &rho, 0.0, 2).unwrap();
        assert_relative_eq!(b, 0.3 * (4.0f64 + 6.25).sqrt() + 0.4, epsilon = 1e-15);
        assert!(prediction_error_bound(&sol, 0, &rho, 0.0, 2).is_err());
        assert!(prediction_error_bound(&sol, 5, &rho, 0.0, 2).is_err());
    }

    fn params(sigma: f64, r: f64, eps: f64) -> TriggerParams {
        TriggerParams {
            sigma,
            r,
            eps,
            huxi_pinv_norm: 1.0,
            lambda_max_q: 1.0,
            lambda_max_pr: 1.0,
            lambda_min_r: 1.0,
            radius_rule: RadiusRule::Literal,
        }
    }

    fn toy_cfg(l: usize) -> MpcConfig {
        MpcConfig {
            horizon: l,
            eta: 1,
            q: DMatrix::identity(1, 1),
            r: DMatrix::identity(1, 1),
            lambda_g: 1e-9,
            lambda_h: 1e-9,
            noise_bound: 1e-9,
            u_min: DVector::from_element(1, -1.0),
            u_max: DVector::from_element(1, 1.0),
            u_eq: DVector::zeros(1),
            y_eq: DVector::zeros(1),
        }
    }

    #[test]
    fn violated_threshold_floors_at_one() {
        let cfg = toy_cfg(6);
        let mut sol = solution_with(DMatrix::from_element(1, 7, 1.0), 1, 6);
        sol.xi_pred = vec![DVector::from_element(2, 0.1); 7];
        let rho = RhoBounds::new(vec![1.0; 5]).unwrap();
        let d = next_trigger_time(&sol, &params(0.5, 0.01, 0.01), &rho, &cfg).unwrap();
        assert_eq!(d.tau, 1);
        assert_eq!(d.tau_hat, None);
        assert!(d.threshold_violated);
    }

    #[test]
    fn satisfied_conditions_hit_the_horizon_cap() {
        let cfg = toy_cfg(6);
        let mut sol = solution_with(DMatrix::zeros(1, 7), 1, 6);
        // Large early deviations, nothing at the end of the horizon.
        sol.xi_pred = (0..7).map(|k| DVector::from_element(2, if k < 1 { 10.0 } else { 0.0 })).collect();
        let rho = RhoBounds::new(vec![0.5; 5]).unwrap();
        let d = next_trigger_time(&sol, &params(0.5, 100.0, 0.0), &rho, &cfg).unwrap();
        assert_eq!(d.tau, 5);
        assert!(!d.threshold_violated);
    }

    #[test]
    fn enumerated_check_time_is_the_brute_force_sup() {
        let cfg = toy_cfg(8);
        let mut sol = solution_with(DMatrix::zeros(1, 9), 1, 8);
        sol.xi_pred = (0..9).map(|k| DVector::from_element(2, 2.0 * 0.6f64.powi(k))).collect();
        let rho = RhoBounds::new(vec![0.9; 7]).unwrap();
        let p = params(0.8, 100.0, 0.01);
        let d = next_trigger_time(&sol, &p, &rho, &cfg).unwrap();
        let brute = (1..8).filter(|&t| {
            let (l, r) = decrease_sides(&sol, t, &p, &rho, &cfg);
            l <= r
        }).max();
        assert_eq!(d.tau_check, brute);
        assert!(d.tau >= 1 && d.tau <= 7);
    }

    #[test]
    fn four_tank_params_are_finite_and_match_svd() {
        let sys = four_tank();
        let nbar = 0.0015;
        let cfg = MpcConfig {
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
        };
        let (hu, hy) = hankels(&sys, 400, 13, 4);
        let term = terminal_ingredients_oracle(&sys.extended(2).unwrap(), &cfg, TerminalDesign::default()).unwrap();
        let p = precompute_trigger_params(&hu, &hy, &cfg, &term, 0.88, RadiusRule::Literal).unwrap();
        assert_eq!(p.lambda_max_q, 1.0);
        assert_relative_eq!(p.lambda_min_r, 8e-3, epsilon = 1e-15);
        let huxi = huxi_matrix(&hu, &hy, 2);
        let pinv = crate::linalg::pinv(&huxi);
        assert_relative_eq!(p.huxi_pinv_norm, crate::linalg::spectral_norm(&pinv), epsilon = 1e-8 * p.huxi_pinv_norm);
        assert!(p.huxi_pinv_norm.is_finite());

        let rho = estimate_rho_bounds(&hu, &hy, 2, 11).unwrap();
        let data = MpcData::from_hankels(hu, hy).unwrap();
        let past_u = vec![DVector::zeros(2); 2];
        let past_y = vec![DVector::zeros(2); 2];
        let sol = solve_mpc(&cfg, &data, &past_u, &past_y, &term).unwrap();
        let d = next_trigger_time(&sol, &p, &rho, &cfg).unwrap();
        assert!((1..=10).contains(&d.tau));
    }

    #[test]
    fn rejects_sigma_outside_unit_interval() {
        let sys = four_tank();
        let (hu, hy) = hankels(&sys, 300, 13, 5);
        let cfg = MpcConfig { horizon: 11, eta: 2, ..toy_cfg(11) };
        let cfg = MpcConfig { q: DMatrix::identity(2, 2), r: DMatrix::identity(2, 2), u_min: DVector::from_element(2, -1.0), u_max: DVector::from_element(2, 1.0), u_eq: DVector::zeros(2), y_eq: DVector::zeros(2), ..cfg };
        let term = terminal_ingredients_oracle(&sys.extended(2).unwrap(), &cfg, TerminalDesign::default()).unwrap();
        assert!(precompute_trigger_params(&hu, &hy, &cfg, &term, 1.0, RadiusRule::Literal).is_err());
        assert!(precompute_trigger_params(&hu, &hy, &cfg, &term, 0.0, RadiusRule::Literal).is_err());
    }
}
