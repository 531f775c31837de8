mod common;

use ddstc::ddmpc::{MpcData, TerminalDesign, solve_mpc, terminal_ingredients_oracle};
use ddstc::linalg::{numerical_rank, pinv, spectral_norm};
use ddstc::model::{LtiSystem, discretize_zoh};
use ddstc::optim::{BallConstraint, Constraints, ConvexProgram, DEFAULT_TOL, Sense, SolveStatus, solve};
use ddstc::trajectory::{
    DataKind, TrajectoryData, collect_offline_data, generate_pe_input, hankel, min_pe_length, stacked_window,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::RngExt;

fn col(m: DMatrix<f64>) -> DVector<f64> {
    m.column(0).into_owned()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn simulate_step_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = common::rng(seed);
        let sys = common::random_system(&mut rng);
        let (n, m) = (sys.state_dim(), sys.input_dim());
        let (x1, x2) = (col(common::gaussian(&mut rng, n, 1)), col(common::gaussian(&mut rng, n, 1)));
        let (u1, u2) = (col(common::gaussian(&mut rng, m, 1)), col(common::gaussian(&mut rng, m, 1)));
        let (f1, g1) = sys.simulate_step(&x1, &u1).unwrap();
        let (f2, g2) = sys.simulate_step(&x2, &u2).unwrap();
        let (f, g) = sys.simulate_step(&(&x1 * alpha + &x2 * beta), &(&u1 * alpha + &u2 * beta)).unwrap();
        let scale = 1.0 + f.norm() + g.norm();
        prop_assert!((f - (f1 * alpha + f2 * beta)).norm() <= 1e-12 * scale);
        prop_assert!((g - (g1 * alpha + g2 * beta)).norm() <= 1e-12 * scale);
    }

    #[test]
    fn observability_index_is_minimal(seed in any::<u64>()) {
        let sys = common::random_system(&mut common::rng(seed));
        let n = sys.state_dim();
        let eta = sys.observability_index().unwrap();
        prop_assert!(numerical_rank(&sys.observability_matrix(eta)) >= n);
        if eta > 1 {
            prop_assert!(numerical_rank(&sys.observability_matrix(eta - 1)) < n);
        }
    }

    #[test]
    fn zoh_is_a_semigroup(seed in any::<u64>(), dt1 in 0.01f64..0.5, dt2 in 0.01f64..0.5) {
        let mut rng = common::rng(seed);
        let n = rng.random_range(1..=4usize);
        let ac = common::gaussian(&mut rng, n, n);
        let bc = common::gaussian(&mut rng, n, 1);
        let (a1, _) = discretize_zoh(&ac, &bc, dt1).unwrap();
        let (a2, _) = discretize_zoh(&ac, &bc, dt2).unwrap();
        let (a12, _) = discretize_zoh(&ac, &bc, dt1 + dt2).unwrap();
        prop_assert!((&a1 * &a2 - &a12).amax() <= 1e-9 * (1.0 + a12.amax()));
    }

    #[test]
    fn rho_oracle_is_submultiplicative(seed in any::<u64>(), i in 1usize..12) {
        let sys = common::random_system(&mut common::rng(seed));
        let eta = sys.observability_index().unwrap();
        let rho = sys.rho_oracle(i, eta).unwrap();
        let bound = spectral_norm(&sys.c)
            * spectral_norm(&sys.a).powi((i + eta) as i32)
            * spectral_norm(&pinv(&sys.observability_matrix(eta)));
        prop_assert!(rho <= bound * (1.0 + 1e-10) + 1e-14);
    }

    #[test]
    fn hankel_columns_are_stacked_windows(n in 1usize..4, len in 2usize..40, depth in 1usize..6, seed in any::<u64>()) {
        prop_assume!(depth <= len);
        let seq = common::gaussian(&mut common::rng(seed), n, len);
        let h = hankel(&seq, depth).unwrap();
        prop_assert_eq!(h.ncols(), len - depth + 1);
        for j in 0..h.ncols() {
            let w = stacked_window(&seq, j, j + depth - 1).unwrap();
            prop_assert_eq!(h.matrix.column(j).into_owned(), w);
        }
    }

    #[test]
    fn hankel_combinations_are_plant_trajectories(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let sys = common::random_system(&mut rng);
        let (n, m) = (sys.state_dim(), sys.input_dim());
        let l = n + 2;
        let order = l + n;
        let u = generate_pe_input(m, 2 * min_pe_length(m, order) + 5, order, seed).unwrap();
        let x0 = col(common::gaussian(&mut rng, n, 1));
        let data = collect_offline_data(&sys, &u, &x0, DataKind::OutputFeedback).unwrap();
        let hu = hankel(&data.inputs, l).unwrap().matrix;
        let hy = hankel(&data.outputs, l).unwrap().matrix;
        let g = col(common::gaussian(&mut rng, hu.ncols(), 1));
        let (ub, yb) = (&hu * &g, &hy * &g);
        // Some initial state must explain the output of the combined input.
        let obs = sys.observability_matrix(l);
        let free = &yb - sys.toeplitz(l) * &ub;
        let x_fit = pinv(&obs) * &free;
        let resid = (&obs * x_fit - &free).norm();
        prop_assert!(resid <= 1e-8 * (1.0 + ub.norm() + yb.norm()));
    }

    #[test]
    fn qp_solutions_are_deterministic_scale_invariant_and_dual_tight(seed in any::<u64>(), lambda in 0.1f64..20.0, with_ball in any::<bool>()) {
        let mut rng = common::rng(seed);
        let n = rng.random_range(1..=6usize);
        let f_half = common::gaussian(&mut rng, n, n);
        let h = &f_half * f_half.transpose() + DMatrix::identity(n, n) * 0.1;
        let f = col(common::gaussian(&mut rng, n, 1)) * 3.0;
        let mut cons = Constraints::free(n);
        cons.lower = DVector::from_element(n, -1.0);
        cons.upper = DVector::from_element(n, 1.0);
        if with_ball {
            cons.ball = Some(BallConstraint { s: DMatrix::identity(n, n), center: DVector::zeros(n), radius: 0.8 });
        }
        let prog = ConvexProgram { hessian: h.clone(), linear: f.clone(), offset: 0.0, constraints: cons.clone(), sense: Sense::Minimize };
        let a = solve(&prog, DEFAULT_TOL).unwrap();
        let b = solve(&prog, DEFAULT_TOL).unwrap();
        prop_assert_eq!(a.status, SolveStatus::Optimal, "iters {} gap {:e} n {}", a.iterations, a.gap, n);
        prop_assert_eq!(a.status, b.status);
        prop_assert!((&a.x - &b.x).amax() <= 1e-12);
        let tol = 1e-6 * (1.0 + a.objective.abs());
        prop_assert!(a.objective <= a.dual_objective + tol && a.dual_objective <= a.objective + tol);
        let scaled = ConvexProgram { hessian: h * lambda, linear: f * lambda, ..prog };
        let c = solve(&scaled, DEFAULT_TOL).unwrap();
        prop_assert!((&a.x - &c.x).amax() <= 1e-6, "diff {:e} a={} c={}", (&a.x - &c.x).amax(), a.x, c.x);
    }
}

/// Data, past window and model for one MPC instance in deviation coordinates.
struct ShiftCase {
    sys: LtiSystem,
    data: TrajectoryData,
    u_past: Vec<DVector<f64>>,
    y_past: Vec<DVector<f64>>,
    eta: usize,
    horizon: usize,
}

fn shift_case(seed: u64) -> ShiftCase {
    let mut rng = common::rng(seed);
    let sys = common::random_system(&mut rng);
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let eta = sys.observability_index().unwrap();
    let horizon = eta + n + 2;
    let order = horizon + n + eta;
    let u = generate_pe_input(m, 2 * min_pe_length(m, order) + 20, order, seed).unwrap();
    let data = collect_offline_data(&sys, &u, &DVector::zeros(n), DataKind::OutputFeedback).unwrap();
    let mut x = col(common::gaussian(&mut rng, n, 1)) * 0.5;
    let (mut u_past, mut y_past) = (Vec::new(), Vec::new());
    for _ in 0..eta {
        let u = col(common::gaussian(&mut rng, m, 1)) * 0.5;
        let (xn, y) = sys.simulate_step(&x, &u).unwrap();
        u_past.push(u);
        y_past.push(y);
        x = xn;
    }
    ShiftCase { sys, data, u_past, y_past, eta, horizon }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn equilibrium_shift_commutes_with_the_mpc(seed in any::<u64>()) {
        let case = shift_case(seed);
        let sys = &case.sys;
        let m = sys.input_dim();
        let mut rng = common::rng(seed ^ 0x5eed);
        let ue = col(common::gaussian(&mut rng, m, 1));
        let ye = sys.dc_gain().unwrap() * &ue;

        // Exact measurements: the slack is pinned, so the g representation
        // of a trajectory does not enter the cost.
        let cfg0 = common::mpc_config(sys, case.horizon, case.eta, 0.0, 50.0);
        let mut cfg1 = cfg0.clone();
        cfg1.u_eq = ue.clone();
        cfg1.y_eq = ye.clone();
        cfg1.u_min = &cfg0.u_min + &ue;
        cfg1.u_max = &cfg0.u_max + &ue;
        let term = terminal_ingredients_oracle(&sys.extended(case.eta).unwrap(), &cfg0, TerminalDesign::default()).unwrap();

        let n_data = case.data.len();
        let shifted = TrajectoryData::new(
            &case.data.inputs + &ue * DMatrix::from_element(1, n_data, 1.0),
            &case.data.outputs + &ye * DMatrix::from_element(1, n_data, 1.0),
            DataKind::OutputFeedback,
        )
        .unwrap();
        let up1: Vec<_> = case.u_past.iter().map(|u| u + &ue).collect();
        let yp1: Vec<_> = case.y_past.iter().map(|y| y + &ye).collect();

        let s0 = solve_mpc(&cfg0, &MpcData::new(&case.data, &cfg0).unwrap(), &case.u_past, &case.y_past, &term).unwrap();
        let s1 = solve_mpc(&cfg1, &MpcData::new(&shifted, &cfg1).unwrap(), &up1, &yp1, &term).unwrap();
        let scale = 1.0 + s0.u_pred.amax() + s0.y_pred.amax() + ue.amax() + ye.amax();
        for i in 0..case.horizon as isize {
            prop_assert!((s1.u(i) - &ue - s0.u(i)).amax() <= 1e-8 * scale, "u mismatch at {}", i);
            prop_assert!((s1.y(i) - &ye - s0.y(i)).amax() <= 1e-8 * scale, "y mismatch at {}", i);
        }
        prop_assert!((s1.cost - s0.cost).abs() <= 1e-6 * (1.0 + s0.cost.abs()));
    }

    #[test]
    fn exact_measurements_give_exact_open_loop_predictions(seed in any::<u64>()) {
        let case = shift_case(seed);
        let sys = &case.sys;
        let cfg = common::mpc_config(sys, case.horizon, case.eta, 0.0, 50.0);
        let term = terminal_ingredients_oracle(&sys.extended(case.eta).unwrap(), &cfg, TerminalDesign::default()).unwrap();
        let sol = solve_mpc(&cfg, &MpcData::new(&case.data, &cfg).unwrap(), &case.u_past, &case.y_past, &term).unwrap();
        prop_assert!(sol.h.amax() <= 1e-4 * (1.0 + sol.y_pred.amax()));
        // Rebuild the current state from the past window and replay.
        let obs = sys.observability_matrix(case.eta);
        let mut u_win = DVector::zeros(case.eta * sys.input_dim());
        let mut y_win = DVector::zeros(case.eta * sys.output_dim());
        for j in 0..case.eta {
            u_win.rows_mut(j * sys.input_dim(), sys.input_dim()).copy_from(&case.u_past[j]);
            y_win.rows_mut(j * sys.output_dim(), sys.output_dim()).copy_from(&case.y_past[j]);
        }
        let x_start = pinv(&obs) * (y_win - sys.toeplitz(case.eta) * &u_win);
        let mut x = x_start;
        for j in 0..case.eta {
            x = sys.simulate_step(&x, &case.u_past[j]).unwrap().0;
        }
        for i in 0..case.horizon as isize {
            let (xn, y) = sys.simulate_step(&x, &sol.u(i)).unwrap();
            prop_assert!((y - sol.y(i)).amax() <= 1e-4);
            x = xn;
        }
    }
}
