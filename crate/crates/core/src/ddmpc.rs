//! Data-driven MPC with output slack, regularization and a terminal ball.
//!
//! At a trigger time the controller solves
//!
//! ```text
//! min  sum_{i<L} |u_i - u_e|_R^2 + |y_i - y_e|_Q^2 + (lambda_h / nbar)|h|^2
//!      + lambda_g nbar |g|^2 + |xi_L - xi_e|_P^2
//! s.t. [u; y + h] = [H_u; H_y] g,   past window pinned to the last eta
//!      inputs / measurements,  |P^(1/2)(xi_L - xi_e)| <= eps,  u_i in U
//! ```
//!
//! over `z = (g, h, u, y)` with time indices `-eta..L-1`. With `nbar = 0`
//! the slack is fixed to zero and `g` is unpenalized.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result, dim_err};
use crate::linalg::{lqr_gain, rank_tolerance, solve_dare, sqrtm_psd, sym_eig_extremes};
use crate::model::{ExtendedState, ExtendedSystem};
use crate::optim::{BallConstraint, Constraints, ConvexProgram, DEFAULT_TOL, Sense, SolveStatus, solve};
use crate::trajectory::{DataKind, HankelMatrix, TrajectoryData, hankel};

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Prediction horizon `L`.
    pub horizon: usize,
    /// Observability index (or an upper bound).
    pub eta: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub lambda_g: f64,
    pub lambda_h: f64,
    /// Euclidean bound on the measurement noise; zero means exact measurements.
    pub noise_bound: f64,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub u_eq: DVector<f64>,
    pub y_eq: DVector<f64>,
}

fn is_symmetric_pd(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax()) && sym_eig_extremes(m).0 > 0.0
}

impl MpcConfig {
    pub fn n_u(&self) -> usize {
        self.r.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.q.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta == 0 || self.horizon < self.eta + 1 {
            return Err(Error::Config(format!(
                "horizon L = {} must be at least eta + 1 = {}",
                self.horizon,
                self.eta + 1
            )));
        }
        if !is_symmetric_pd(&self.q) || !is_symmetric_pd(&self.r) {
            return Err(Error::Config("Q and R must be symmetric positive definite".into()));
        }
        for (name, v) in [("lambda_g", self.lambda_g), ("lambda_h", self.lambda_h)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_bound >= 0.0) || !self.noise_bound.is_finite() {
            return Err(Error::Config(format!("noise bound must be nonnegative, got {}", self.noise_bound)));
        }
        let m = self.n_u();
        if self.u_min.len() != m || self.u_max.len() != m || self.u_eq.len() != m || self.y_eq.len() != self.n_y() {
            return Err(Error::Config("bounds/equilibrium do not match the weight dimensions".into()));
        }
        for k in 0..m {
            if !(self.u_min[k] <= self.u_eq[k] && self.u_eq[k] <= self.u_max[k]) {
                return Err(Error::Config(format!("equilibrium input {k} lies outside the input box")));
            }
        }
        Ok(())
    }

    /// The extended state of the setpoint pair.
    pub fn xi_eq(&self) -> DVector<f64> {
        ExtendedState::equilibrium(&self.u_eq, &self.y_eq, self.eta).vector
    }

    pub fn xi_dim(&self) -> usize {
        self.eta * (self.n_u() + self.n_y())
    }
}

/// Terminal weight/gain/radius and the enlarged set used by the trigger rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalIngredients {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub eps: f64,
    pub p_r: DMatrix<f64>,
    pub k_r: DMatrix<f64>,
    pub r: f64,
}

impl TerminalIngredients {
    /// `(lmax(P_r)/lmin(P)) (1 - lmin(K_r'RK_r)/lmax(P_r))^L r^2 <= eps^2 <= r^2`.
    pub fn radius_compatible(&self, rw: &DMatrix<f64>, horizon: usize) -> bool {
        let (_, pr_max) = sym_eig_extremes(&self.p_r);
        let (p_min, _) = sym_eig_extremes(&self.p);
        let (krk_min, _) = sym_eig_extremes(&(self.k_r.transpose() * rw * &self.k_r));
        let factor = (1.0 - krk_min.max(0.0) / pr_max).max(0.0).powi(horizon as i32);
        let lhs = pr_max / p_min * factor * self.r * self.r;
        let tol = 1e-9 * (1.0 + self.r * self.r);
        lhs <= self.eps * self.eps + tol && self.eps <= self.r * (1.0 + 1e-12)
    }
}

/// Hankel matrices of depth `L + eta` built from the offline data.
#[derive(Debug, Clone)]
pub struct MpcData {
    pub hu: HankelMatrix,
    pub hy: HankelMatrix,
    /// Orthonormal basis `V` of the row space of `[H_u; H_y]`.
    pub row_basis: DMatrix<f64>,
    pub hu_reduced: DMatrix<f64>,
    pub hy_reduced: DMatrix<f64>,
}

impl MpcData {
    pub fn new(data: &TrajectoryData, cfg: &MpcConfig) -> Result<Self> {
        if data.kind != DataKind::OutputFeedback {
            return Err(Error::InvalidArgument("MPC needs input/output data".into()));
        }
        if data.input_dim() != cfg.n_u() || data.output_dim() != cfg.n_y() {
            return dim_err("data channels do not match the controller weights");
        }
        let depth = cfg.horizon + cfg.eta;
        Self::from_hankels(hankel(&data.inputs, depth)?, hankel(&data.outputs, depth)?)
    }

    pub fn from_hankels(hu: HankelMatrix, hy: HankelMatrix) -> Result<Self> {
        if hu.ncols() != hy.ncols() {
            return dim_err("Hankel matrices have different column counts");
        }
        let stacked = DMatrix::from_fn(hu.matrix.nrows() + hy.matrix.nrows(), hu.ncols(), |i, j| {
            if i < hu.matrix.nrows() { hu.matrix[(i, j)] } else { hy.matrix[(i - hu.matrix.nrows(), j)] }
        });
        let row_basis = row_space_basis(&stacked);
        let hu_reduced = &hu.matrix * &row_basis;
        let hy_reduced = &hy.matrix * &row_basis;
        Ok(Self { hu, hy, row_basis, hu_reduced, hy_reduced })
    }

    pub fn columns(&self) -> usize {
        self.hu.ncols()
    }
}

pub(crate) fn row_space_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    // Work on the Gram matrix side: M' = V S U', so V spans the row space.
    let svd = m.transpose().svd(true, false);
    let u = svd.u.expect("requested");
    let smax = svd.singular_values.amax();
    let tol = rank_tolerance(m.nrows(), m.ncols(), smax);
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&k| smax > 0.0 && svd.singular_values[k] > tol).collect();
    DMatrix::from_fn(m.ncols(), keep.len(), |i, j| u[(i, keep[j])])
}

/// Index bookkeeping for the decision vector `z = (g, h, u, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MpcLayout {
    pub n_g: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub eta: usize,
    pub horizon: usize,
}

impl MpcLayout {
    fn steps(&self) -> usize {
        self.horizon + self.eta
    }

    pub fn n_vars(&self) -> usize {
        self.n_g + self.steps() * (self.n_u + 2 * self.n_y)
    }

    pub fn g(&self) -> usize {
        0
    }

    /// Start of `h_i`, `i` in `-eta..L-1`.
    pub fn h(&self, i: isize) -> usize {
        self.n_g + self.pos(i) * self.n_y
    }

    pub fn u(&self, i: isize) -> usize {
        self.n_g + self.steps() * self.n_y + self.pos(i) * self.n_u
    }

    pub fn y(&self, i: isize) -> usize {
        self.n_g + self.steps() * (self.n_y + self.n_u) + self.pos(i) * self.n_y
    }

    fn pos(&self, i: isize) -> usize {
        let p = i + self.eta as isize;
        debug_assert!(p >= 0 && (p as usize) < self.steps());
        p as usize
    }

    /// Selection matrix picking `xi_k = [u_(k-eta..k-1); y_(k-eta..k-1)]` from `z`.
    pub fn xi_selector(&self, k: usize) -> DMatrix<f64> {
        let (m, p, eta) = (self.n_u, self.n_y, self.eta);
        let mut s = DMatrix::zeros(eta * (m + p), self.n_vars());
        for j in 0..eta {
            let i = k as isize - eta as isize + j as isize;
            for c in 0..m {
                s[(j * m + c, self.u(i) + c)] = 1.0;
            }
            for c in 0..p {
                s[(eta * m + j * p + c, self.y(i) + c)] = 1.0;
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub program: ConvexProgram,
    pub layout: MpcLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// Columns are `u_i`, `i = -eta..L-1`.
    pub u_pred: DMatrix<f64>,
    pub y_pred: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// `xi_k`, `k = 0..L`.
    pub xi_pred: Vec<DVector<f64>>,
    pub cost: f64,
    pub eta: usize,
    pub primal_residual: f64,
}

impl MpcSolution {
    pub fn horizon(&self) -> usize {
        self.u_pred.ncols() - self.eta
    }

    /// `u_i` for `i >= -eta`.
    pub fn u(&self, i: isize) -> DVector<f64> {
        self.u_pred.column((i + self.eta as isize) as usize).into_owned()
    }

    pub fn y(&self, i: isize) -> DVector<f64> {
        self.y_pred.column((i + self.eta as isize) as usize).into_owned()
    }

    /// Euclidean norm of the stacked slack `h_a..=h_b`.
    pub fn h_norm(&self, a: isize, b: isize) -> f64 {
        (a..=b)
            .map(|i| self.h.column((i + self.eta as isize) as usize).norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

fn check_past(cfg: &MpcConfig, u_past: &[DVector<f64>], zeta_past: &[DVector<f64>]) -> Result<()> {
    if u_past.len() != cfg.eta || zeta_past.len() != cfg.eta {
        return dim_err(format!("need {} past samples, got {} inputs and {} outputs", cfg.eta, u_past.len(), zeta_past.len()));
    }
    if u_past.iter().any(|u| u.len() != cfg.n_u()) || zeta_past.iter().any(|y| y.len() != cfg.n_y()) {
        return dim_err("past samples have the wrong dimension");
    }
    Ok(())
}

/// Assembles the MPC program for the current past window, with one
/// coefficient per Hankel column.
pub fn build_problem(
    cfg: &MpcConfig,
    data: &MpcData,
    u_past: &[DVector<f64>],
    zeta_past: &[DVector<f64>],
    term: &TerminalIngredients,
) -> Result<MpcProblem> {
    check_inputs(cfg, data, u_past, zeta_past, term)?;
    assemble(cfg, &data.hu.matrix, &data.hy.matrix, u_past, zeta_past, term)
}

/// Same program with `g` restricted to the row space of `[H_u; H_y]`,
/// `g = V beta`. Since `g` enters only through `|g|^2` and `H g`, the optimum
/// always lies in that subspace, so both programs have the same minimizer in
/// `(u, y, h)` and the same optimal cost.
pub fn build_condensed_problem(
    cfg: &MpcConfig,
    data: &MpcData,
    u_past: &[DVector<f64>],
    zeta_past: &[DVector<f64>],
    term: &TerminalIngredients,
) -> Result<MpcProblem> {
    check_inputs(cfg, data, u_past, zeta_past, term)?;
    assemble(cfg, &data.hu_reduced, &data.hy_reduced, u_past, zeta_past, term)
}

fn check_inputs(
    cfg: &MpcConfig,
    data: &MpcData,
    u_past: &[DVector<f64>],
    zeta_past: &[DVector<f64>],
    term: &TerminalIngredients,
) -> Result<()> {
    cfg.validate()?;
    check_past(cfg, u_past, zeta_past)?;
    let depth = cfg.horizon + cfg.eta;
    if data.hu.depth != depth || data.hy.depth != depth {
        return dim_err(format!("Hankel depth must be L + eta = {depth}"));
    }
    if data.hu.signal_dim != cfg.n_u() || data.hy.signal_dim != cfg.n_y() {
        return dim_err("Hankel signal dimensions do not match the weights");
    }
    let nxi = cfg.xi_dim();
    if term.p.shape() != (nxi, nxi) {
        return dim_err("terminal weight has the wrong size");
    }
    Ok(())
}

fn assemble(
    cfg: &MpcConfig,
    gu: &DMatrix<f64>,
    gy: &DMatrix<f64>,
    u_past: &[DVector<f64>],
    zeta_past: &[DVector<f64>],
    term: &TerminalIngredients,
) -> Result<MpcProblem> {
    let (m, p, eta, l) = (cfg.n_u(), cfg.n_y(), cfg.eta, cfg.horizon);
    let depth = l + eta;
    let lay = MpcLayout { n_g: gu.ncols(), n_u: m, n_y: p, eta, horizon: l };
    let n = lay.n_vars();
    let steps = depth;

    let mut hess = DMatrix::zeros(n, n);
    let mut lin = DVector::zeros(n);
    let mut offset = 0.0;
    for i in 0..lay.n_g {
        hess[(i, i)] = 2.0 * cfg.lambda_g * cfg.noise_bound;
    }
    // A zero noise bound pins the slack to zero instead of weighting it.
    let noise_free = cfg.noise_bound == 0.0;
    if !noise_free {
        let wh = 2.0 * cfg.lambda_h / cfg.noise_bound;
        for i in 0..steps * p {
            hess[(lay.h(-(eta as isize)) + i, lay.h(-(eta as isize)) + i)] = wh;
        }
    }
    for i in 0..l as isize {
        let (ui, yi) = (lay.u(i), lay.y(i));
        let mut blk = hess.view_mut((ui, ui), (m, m));
        blk += &cfg.r * 2.0;
        let mut blk = hess.view_mut((yi, yi), (p, p));
        blk += &cfg.q * 2.0;
        let mut seg = lin.rows_mut(ui, m);
        seg -= &cfg.r * &cfg.u_eq * 2.0;
        let mut seg = lin.rows_mut(yi, p);
        seg -= &cfg.q * &cfg.y_eq * 2.0;
        offset += cfg.u_eq.dot(&(&cfg.r * &cfg.u_eq)) + cfg.y_eq.dot(&(&cfg.q * &cfg.y_eq));
    }
    let sel = lay.xi_selector(l);
    let xi_e = cfg.xi_eq();
    hess += sel.transpose() * &term.p * &sel * 2.0;
    lin -= sel.transpose() * (&term.p * &xi_e) * 2.0;
    offset += xi_e.dot(&(&term.p * &xi_e));

    // Equalities: H_u g - u = 0, H_y g - y - h = 0, past inputs/outputs pinned.
    let n_eq = steps * (m + p) + eta * (m + p) + if noise_free { steps * p } else { 0 };
    let mut a = DMatrix::zeros(n_eq, n);
    let mut b = DVector::zeros(n_eq);
    a.view_mut((0, 0), (steps * m, lay.n_g)).copy_from(gu);
    a.view_mut((steps * m, 0), (steps * p, lay.n_g)).copy_from(gy);
    let u0 = lay.u(-(eta as isize));
    let y0 = lay.y(-(eta as isize));
    let h0 = lay.h(-(eta as isize));
    for i in 0..steps * m {
        a[(i, u0 + i)] = -1.0;
    }
    for i in 0..steps * p {
        a[(steps * m + i, y0 + i)] = -1.0;
        a[(steps * m + i, h0 + i)] = -1.0;
    }
    let mut row = steps * (m + p);
    for j in 0..eta {
        for c in 0..m {
            a[(row, u0 + j * m + c)] = 1.0;
            b[row] = u_past[j][c];
            row += 1;
        }
    }
    for j in 0..eta {
        for c in 0..p {
            a[(row, y0 + j * p + c)] = 1.0;
            b[row] = zeta_past[j][c];
            row += 1;
        }
    }
    if noise_free {
        for i in 0..steps * p {
            a[(row, h0 + i)] = 1.0;
            row += 1;
        }
    }

    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n, f64::INFINITY);
    for i in 0..l as isize {
        lower.rows_mut(lay.u(i), m).copy_from(&cfg.u_min);
        upper.rows_mut(lay.u(i), m).copy_from(&cfg.u_max);
    }
    let p_half = sqrtm_psd(&term.p);
    let ball = BallConstraint { s: &p_half * &sel, center: &p_half * &xi_e, radius: term.eps };

    Ok(MpcProblem {
        program: ConvexProgram {
            hessian: hess,
            linear: lin,
            offset,
            constraints: Constraints { eq_matrix: a, eq_rhs: b, lower, upper, ball: Some(ball) },
            sense: Sense::Minimize,
        },
        layout: lay,
    })
}

/// Unpacks a decision vector into predicted trajectories.
pub fn unpack_solution(lay: &MpcLayout, z: &DVector<f64>, cost: f64, primal_residual: f64) -> MpcSolution {
    let steps = lay.steps();
    let first = -(lay.eta as isize);
    let u_pred = DMatrix::from_column_slice(lay.n_u, steps, z.rows(lay.u(first), steps * lay.n_u).as_slice());
    let y_pred = DMatrix::from_column_slice(lay.n_y, steps, z.rows(lay.y(first), steps * lay.n_y).as_slice());
    let h = DMatrix::from_column_slice(lay.n_y, steps, z.rows(lay.h(first), steps * lay.n_y).as_slice());
    let xi_pred = (0..=lay.horizon).map(|k| lay.xi_selector(k) * z).collect();
    MpcSolution {
        u_pred,
        y_pred,
        h,
        g: z.rows(lay.g(), lay.n_g).into_owned(),
        xi_pred,
        cost,
        eta: lay.eta,
        primal_residual,
    }
}

/// Builds and solves the MPC program (condensed form).
pub fn solve_mpc(
    cfg: &MpcConfig,
    data: &MpcData,
    u_past: &[DVector<f64>],
    zeta_past: &[DVector<f64>],
    term: &TerminalIngredients,
) -> Result<MpcSolution> {
    let prob = build_condensed_problem(cfg, data, u_past, zeta_past, term)?;
    let res = solve(&prob.program, DEFAULT_TOL)?;
    match res.status {
        SolveStatus::Optimal => {
            let mut sol = unpack_solution(&prob.layout, &res.x, res.objective, res.primal_residual);
            sol.g = &data.row_basis * &sol.g;
            Ok(sol)
        }
        SolveStatus::Infeasible => Err(Error::Infeasible),
        SolveStatus::Unbounded => Err(Error::Unbounded),
        SolveStatus::NumericalFailure => Err(Error::NumericalFailure(format!(
            "MPC solve stopped after {} iterations",
            res.iterations
        ))),
    }
}

/// Options for the model-based terminal-ingredient oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalDesign {
    /// `delta` in the state weight `C'QC + delta I` of the terminal LQR.
    pub state_weight: f64,
}

impl Default for TerminalDesign {
    fn default() -> Self {
        Self { state_weight: 1.0 }
    }
}

/// Terminal ingredients from an LQR design on the extended system.
///
/// `K` is the LQR gain for stage cost `|C xi + D u|_Q^2 + delta |xi|^2 + |u|_R^2`
/// and `P_r` its Riccati matrix, which satisfies the decrease condition with a
/// margin of `delta |xi|^2`. The enlarged radius `r` is the largest radius for
/// which `Xi_r` keeps the stored inputs and `u_e + K_r (xi - xi_e)` inside the
/// input box; for a single linear constraint `c'(xi - xi_e) <= m` on the
/// ellipsoid `|xi - xi_e|_P <= r` the exact limit is `m / sqrt(c' P^{-1} c)`.
/// `P = kappa(P_r) P_r` shrinks the terminal set so that `eps = r` meets the
/// radius compatibility condition.
pub fn terminal_ingredients_oracle(ext: &ExtendedSystem, cfg: &MpcConfig, design: TerminalDesign) -> Result<TerminalIngredients> {
    cfg.validate()?;
    if ext.n_u != cfg.n_u() || ext.n_y != cfg.n_y() || ext.eta != cfg.eta {
        return dim_err("extended system does not match the controller");
    }
    let nxi = ext.dim();
    let qx = ext.c.transpose() * &cfg.q * &ext.c + DMatrix::identity(nxi, nxi) * design.state_weight;
    let rx = &cfg.r + ext.d.transpose() * &cfg.q * &ext.d;
    let sx = ext.c.transpose() * &cfg.q * &ext.d;
    let p0 = solve_dare(&ext.a, &ext.b, &qx, &rx, Some(&sx))?;
    let k = lqr_gain(&ext.a, &ext.b, &p0, &rx, Some(&sx))?;
    let p0_inv = p0
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("terminal Riccati matrix is singular".into()))?;
    let r = admissible_radius(&p0_inv, &k, ext, cfg);
    let (lmin, lmax) = sym_eig_extremes(&p0);
    let p = &p0 * (lmax / lmin);
    Ok(TerminalIngredients { p, k: k.clone(), eps: r, p_r: p0, k_r: k, r })
}

fn admissible_radius(p_inv: &DMatrix<f64>, k: &DMatrix<f64>, ext: &ExtendedSystem, cfg: &MpcConfig) -> f64 {
    let nxi = ext.dim();
    let m = ext.n_u;
    let mut rows: Vec<(DVector<f64>, usize)> = Vec::new();
    for j in ext.input_rows() {
        let mut c = DVector::zeros(nxi);
        c[j] = 1.0;
        rows.push((c, j % m));
    }
    for c in 0..m {
        rows.push((k.row(c).transpose(), c));
    }
    rows.iter()
        .map(|(c, comp)| {
            let margin = (cfg.u_max[*comp] - cfg.u_eq[*comp]).min(cfg.u_eq[*comp] - cfg.u_min[*comp]);
            let scale = c.dot(&(p_inv * c)).sqrt();
            if scale > 0.0 { margin / scale } else { f64::INFINITY }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Outcome of [`check_terminal_assumption`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalCheck {
    pub passed: bool,
    /// Smallest slack over all samples and conditions (negative on failure).
    pub worst_margin: f64,
}

/// Evaluates the decrease condition, input admissibility and invariance of
/// `Xi_eps` at each sample offset `xi - xi_e`.
pub fn check_terminal_assumption(
    term: &TerminalIngredients,
    ext: &ExtendedSystem,
    cfg: &MpcConfig,
    samples: &[DVector<f64>],
) -> TerminalCheck {
    let acl = &ext.a + &ext.b * &term.k;
    let ccl = &ext.c + &ext.d * &term.k;
    let mut worst = f64::INFINITY;
    let tol = 1e-9;
    for d in samples {
        let next = &acl * d;
        let u = &term.k * d;
        let y = &ccl * d;
        let vd = d.dot(&(&term.p * d));
        let decrease = vd - u.dot(&(&cfg.r * &u)) - y.dot(&(&cfg.q * &y)) - next.dot(&(&term.p * &next));
        worst = worst.min(decrease / (1.0 + vd));
        let next_norm = next.dot(&(&term.p * &next)).max(0.0).sqrt();
        worst = worst.min(term.eps - next_norm);
        let u_abs = &cfg.u_eq + &u;
        for c in 0..cfg.n_u() {
            worst = worst.min(cfg.u_max[c] - u_abs[c]).min(u_abs[c] - cfg.u_min[c]);
        }
        for j in ext.input_rows() {
            let c = j % cfg.n_u();
            let v = cfg.u_eq[c] + d[j];
            worst = worst.min(cfg.u_max[c] - v).min(v - cfg.u_min[c]);
        }
    }
    if samples.is_empty() {
        worst = 0.0;
    }
    TerminalCheck { passed: worst >= -tol, worst_margin: worst }
}

/// Points on the boundary of `Xi_eps` along the given directions.
pub fn terminal_boundary_samples(term: &TerminalIngredients, directions: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let p_half_inv = sqrtm_psd(&term.p).try_inverse().expect("terminal weight is positive definite");
    directions
        .iter()
        .filter(|v| v.norm() > 0.0)
        .map(|v| &p_half_inv * (v / v.norm()) * term.eps)
        .collect()
}

/// `count` seeded Gaussian directions in `dim` dimensions, for use with
/// [`terminal_boundary_samples`].
pub fn sphere_directions(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng))).collect()
}
