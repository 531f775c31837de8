//! Convex quadratic / second-order-cone programs.
//!
//! A [`ConvexProgram`] is `min 1/2 z'Hz + f'z + offset` subject to linear
//! equalities, box bounds and at most one Euclidean ball `||S z - c|| <= r`.
//! Problems are handed to the Clarabel interior-point solver, which also
//! returns infeasibility certificates; minimizers are then refined on their
//! active set when the KKT conditions allow it.
//!
//! [`EllipticSection`] covers the special case "equalities plus one ball, no
//! bounds" in closed form; it is used where many linear objectives are
//! maximized over the same set.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result, dim_err};
use crate::linalg::{null_space, pinv, rank_tolerance};

/// Default solver tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;
const MAX_ITER: u32 = 200;

/// `||S z - center|| <= radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallConstraint {
    pub s: DMatrix<f64>,
    pub center: DVector<f64>,
    pub radius: f64,
}

/// Feasible set shared by all program types.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    /// Per-variable bounds; use infinities for free variables.
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub ball: Option<BallConstraint>,
}

impl Constraints {
    /// No constraints on `n` variables.
    pub fn free(n: usize) -> Self {
        Self {
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
            ball: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.upper.len() != n {
            return dim_err("bound vectors differ in length");
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return dim_err(format!(
                "equality matrix {}x{} does not fit {} variables and {} right-hand sides",
                self.eq_matrix.nrows(),
                self.eq_matrix.ncols(),
                n,
                self.eq_rhs.len()
            ));
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] || self.lower[i].is_nan() || self.upper[i].is_nan() {
                return Err(Error::InvalidArgument(format!("bounds of variable {i} are inconsistent")));
            }
        }
        if let Some(b) = &self.ball {
            if b.s.ncols() != n || b.s.nrows() != b.center.len() {
                return dim_err("ball matrix does not fit the variables");
            }
            if !(b.radius >= 0.0) {
                return Err(Error::InvalidArgument("ball radius must be nonnegative".into()));
            }
        }
        if self.eq_matrix.iter().chain(self.eq_rhs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("equality data must be finite".into()));
        }
        Ok(())
    }

    /// Largest violation of any constraint at `z`.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        if self.eq_matrix.nrows() > 0 {
            v = v.max((&self.eq_matrix * z - &self.eq_rhs).amax());
        }
        for i in 0..z.len() {
            v = v.max(self.lower[i] - z[i]).max(z[i] - self.upper[i]);
        }
        if let Some(b) = &self.ball {
            v = v.max((&b.s * z - &b.center).norm() - b.radius);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    /// Maximize `f'z`; the quadratic term must be zero.
    MaximizeLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexProgram {
    /// Positive semidefinite quadratic term.
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// Constant added to the reported objective.
    pub offset: f64,
    pub constraints: Constraints,
    pub sense: Sense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    /// Objective in the program's own sense, including the offset.
    pub objective: f64,
    /// Largest constraint violation at `x`.
    pub primal_residual: f64,
    /// Dual objective in the program's own sense, including the offset.
    pub dual_objective: f64,
    /// Relative primal/dual objective gap reported by the solver.
    pub gap: f64,
    pub iterations: u32,
    /// The interior-point point was replaced by an active-set refinement.
    pub polished: bool,
}

fn csc_from_dense(m: &DMatrix<f64>, upper_only: bool) -> CscMatrix<f64> {
    let (r, c) = m.shape();
    let mut colptr = Vec::with_capacity(c + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..c {
        let last = if upper_only { (j + 1).min(r) } else { r };
        for i in 0..last {
            let v = m[(i, j)];
            if v != 0.0 {
                rowval.push(i);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(r, c, colptr, rowval, nzval)
}

/// Solves `prog` to tolerance `tol`.
///
/// Validation problems (shapes, non-PSD Hessian in maximize mode) are
/// returned as errors; solver outcomes are reported through the status.
pub fn solve(prog: &ConvexProgram, tol: f64) -> Result<SolveResult> {
    let cons = &prog.constraints;
    cons.validate()?;
    let n = cons.dim();
    if prog.hessian.shape() != (n, n) || prog.linear.len() != n {
        return dim_err("objective does not match the number of variables");
    }
    if prog.sense == Sense::MaximizeLinear && prog.hessian.iter().any(|&v| v != 0.0) {
        return Err(Error::InvalidArgument("maximize-linear programs must have a zero Hessian".into()));
    }
    let sign: f64 = match prog.sense {
        Sense::Minimize => 1.0,
        Sense::MaximizeLinear => -1.0,
    };

    // Rows of A z + s = b grouped by cone: equalities, bounds, ball.
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut cones = Vec::new();
    let push_dense = |rows: &mut Vec<(Vec<(usize, f64)>, f64)>, row: DVector<f64>, b: f64| {
        let entries = row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect();
        rows.push((entries, b));
    };
    let mut n_eq = cons.eq_matrix.nrows();
    for i in 0..cons.eq_matrix.nrows() {
        push_dense(&mut rows, cons.eq_matrix.row(i).transpose(), cons.eq_rhs[i]);
    }
    let degenerate_ball = cons.ball.as_ref().is_some_and(|b| b.radius == 0.0);
    if let Some(b) = cons.ball.as_ref().filter(|_| degenerate_ball) {
        // A zero-radius ball has no interior; pin S z = c instead.
        for i in 0..b.s.nrows() {
            push_dense(&mut rows, b.s.row(i).transpose(), b.center[i]);
        }
        n_eq += b.s.nrows();
    }
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }
    let mut n_box = 0;
    for i in 0..n {
        if cons.upper[i].is_finite() {
            rows.push((vec![(i, 1.0)], cons.upper[i]));
            n_box += 1;
        }
        if cons.lower[i].is_finite() {
            rows.push((vec![(i, -1.0)], -cons.lower[i]));
            n_box += 1;
        }
    }
    if n_box > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_box));
    }
    if let Some(b) = cons.ball.as_ref().filter(|_| !degenerate_ball) {
        rows.push((vec![], b.radius));
        for i in 0..b.s.nrows() {
            push_dense(&mut rows, -b.s.row(i).transpose(), -b.center[i]);
        }
        cones.push(SupportedConeT::SecondOrderConeT(1 + b.s.nrows()));
    }

    let m = rows.len();
    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut bvec = Vec::with_capacity(m);
    for (i, (entries, b)) in rows.into_iter().enumerate() {
        for (j, v) in entries {
            trip.push((i, j, v));
        }
        bvec.push(b);
    }
    trip.sort_by_key(|&(i, j, _)| (j, i));
    let mut colptr = vec![0usize; n + 1];
    for &(_, j, _) in &trip {
        colptr[j + 1] += 1;
    }
    for j in 0..n {
        colptr[j + 1] += colptr[j];
    }
    let a = CscMatrix::new(
        m,
        n,
        colptr,
        trip.iter().map(|t| t.0).collect(),
        trip.iter().map(|t| t.2).collect(),
    );
    // Normalize quadratic objectives so that the argmin does not depend on
    // their scale; linear programs are passed through unchanged.
    let scale = match prog.hessian.amax() {
        0.0 => 1.0,
        h => h.max(prog.linear.amax()),
    };
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let p = csc_from_dense(&(&prog.hessian * (sign.max(0.0) / scale)), true);
    let q: Vec<f64> = prog.linear.iter().map(|v| sign * v / scale).collect();

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(MAX_ITER)
        .tol_gap_abs(tol)
        .tol_gap_rel(tol)
        .tol_feas(tol)
        .build()
        .map_err(|e| Error::NumericalFailure(format!("{e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &bvec, &cones, settings)
        .map_err(|e| Error::NumericalFailure(format!("{e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    };
    let mut x = DVector::from_column_slice(&sol.x);
    let objective = |z: &DVector<f64>| 0.5 * z.dot(&(&prog.hessian * z)) + prog.linear.dot(z) + prog.offset;
    let mut polished = false;
    if status == SolveStatus::Optimal
        && prog.sense == Sense::Minimize
        && let Some(z) = polish(prog, &x, tol)
    {
        let (before, after) = (objective(&x), objective(&z));
        if after <= before + tol * (1.0 + before.abs()) {
            x = z;
            polished = true;
        }
    }
    let obj = objective(&x);
    let gap = (sol.obj_val - sol.obj_val_dual).abs() * scale / (1.0 + (sol.obj_val * scale).abs());
    Ok(SolveResult {
        status,
        primal_residual: if status == SolveStatus::Optimal { cons.max_violation(&x) } else { f64::INFINITY },
        x,
        objective: obj,
        dual_objective: sign * scale * sol.obj_val_dual + prog.offset,
        gap,
        iterations: sol.iterations,
        polished,
    })
}

/// Active-set refinement of an interior-point minimizer.
///
/// Bounds that `x` sits on are fixed, the remaining equality-constrained QP
/// is solved through its KKT system, and the result is kept only if it is
/// feasible (ball included) and the bound multipliers have the right sign,
/// which makes it a global minimizer.
fn polish(prog: &ConvexProgram, x: &DVector<f64>, tol: f64) -> Option<DVector<f64>> {
    let cons = &prog.constraints;
    let n = x.len();
    let near = |z: f64, b: f64| (z - b).abs() <= 1e-6 * (1.0 + b.abs());
    let mut rows: Vec<(DVector<f64>, f64)> = (0..cons.eq_matrix.nrows())
        .map(|i| (cons.eq_matrix.row(i).transpose(), cons.eq_rhs[i]))
        .collect();
    if let Some(b) = cons.ball.as_ref().filter(|b| b.radius == 0.0) {
        rows.extend((0..b.s.nrows()).map(|i| (b.s.row(i).transpose(), b.center[i])));
    }
    let n_fixed_eq = rows.len();
    // (variable, is upper bound)
    let mut active = Vec::new();
    for i in 0..n {
        let (lo, hi) = (cons.lower[i], cons.upper[i]);
        let at = if lo.is_finite() && near(x[i], lo) {
            Some((lo, false))
        } else if hi.is_finite() && near(x[i], hi) {
            Some((hi, true))
        } else {
            None
        };
        if let Some((b, upper)) = at {
            rows.push((DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 }), b));
            active.push(upper);
        }
    }
    let k = rows.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prog.hessian);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&prog.linear));
    for (j, (row, b)) in rows.iter().enumerate() {
        kkt.view_mut((n + j, 0), (1, n)).copy_from(&row.transpose());
        kkt.view_mut((0, n + j), (n, 1)).copy_from(row);
        rhs[n + j] = *b;
    }
    let sol = kkt.clone().lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) || (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
        return None;
    }
    let z = sol.rows(0, n).into_owned();
    if cons.max_violation(&z) > tol {
        return None;
    }
    // Stationarity reads H z + f + C' mu = 0: a lower bound needs mu <= 0,
    // an upper bound mu >= 0.
    let mu_tol = 1e-7 * (1.0 + prog.linear.amax() + (&prog.hessian * &z).amax());
    for (j, upper) in active.iter().enumerate() {
        let mu = sol[n + n_fixed_eq + j];
        if (*upper && mu < -mu_tol) || (!*upper && mu > mu_tol) {
            return None;
        }
    }
    Some(z)
}

/// `max c'z` over `cons`.
pub fn maximize_linear(c: &DVector<f64>, cons: &Constraints) -> Result<SolveResult> {
    let n = cons.dim();
    solve(
        &ConvexProgram {
            hessian: DMatrix::zeros(n, n),
            linear: c.clone(),
            offset: 0.0,
            constraints: cons.clone(),
            sense: Sense::MaximizeLinear,
        },
        DEFAULT_TOL,
    )
}

/// `{z : E z = e, ||S z - c|| <= r}` in reduced coordinates, for closed-form
/// support-function evaluation.
#[derive(Debug, Clone)]
pub struct EllipticSection {
    z0: DVector<f64>,
    basis: DMatrix<f64>,
    /// `S N = U diag(sv) V'` restricted to the nonzero singular values;
    /// `U` itself is only needed to project the center.
    sv: DVector<f64>,
    v: DMatrix<f64>,
    offset: DVector<f64>,
    /// Radius left for the reduced ball once the unreachable part of the
    /// center is accounted for.
    slack: f64,
}

impl EllipticSection {
    pub fn new(eq_matrix: &DMatrix<f64>, eq_rhs: &DVector<f64>, ball: &BallConstraint) -> Result<Self> {
        let n = eq_matrix.ncols();
        if ball.s.ncols() != n || eq_matrix.nrows() != eq_rhs.len() || ball.s.nrows() != ball.center.len() {
            return dim_err("elliptic section data do not match");
        }
        let z0 = pinv(eq_matrix) * eq_rhs;
        let scale = 1.0 + eq_rhs.amax();
        if (eq_matrix * &z0 - eq_rhs).amax() > 1e-8 * scale {
            return Err(Error::Infeasible);
        }
        let basis = null_space(eq_matrix);
        let m = &ball.s * &basis;
        let d = &ball.s * &z0 - &ball.center;
        let (u, sv, v) = if m.ncols() == 0 || m.nrows() == 0 {
            (DMatrix::zeros(m.nrows(), 0), DVector::zeros(0), DMatrix::zeros(m.ncols(), 0))
        } else {
            let svd = m.clone().svd(true, true);
            let smax = svd.singular_values.amax();
            let tol = rank_tolerance(m.nrows(), m.ncols(), smax);
            let keep: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&k| svd.singular_values[k] > tol && smax > 0.0)
                .collect();
            let uu = svd.u.unwrap();
            let vt = svd.v_t.unwrap();
            let mut u = DMatrix::zeros(m.nrows(), keep.len());
            let mut v = DMatrix::zeros(m.ncols(), keep.len());
            let mut sv = DVector::zeros(keep.len());
            for (j, &k) in keep.iter().enumerate() {
                u.set_column(j, &uu.column(k));
                v.set_column(j, &vt.row(k).transpose());
                sv[j] = svd.singular_values[k];
            }
            (u, sv, v)
        };
        let proj = u.transpose() * &d;
        let perp2 = (d.norm_squared() - proj.norm_squared()).max(0.0);
        let r2 = ball.radius * ball.radius - perp2;
        if r2 < -1e-12 * (1.0 + ball.radius * ball.radius) {
            return Err(Error::Infeasible);
        }
        Ok(Self { z0, basis, sv, v, offset: proj, slack: r2.max(0.0).sqrt() })
    }

    /// `max c'z` over the set, with the maximizer.
    pub fn maximize(&self, c: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let q = self.basis.transpose() * c;
        let qv = self.v.transpose() * &q;
        let resid = (&q - &self.v * &qv).norm();
        if resid > 1e-9 * (1.0 + c.norm()) {
            return Err(Error::Unbounded);
        }
        // w = V a, with b = diag(sv) a + offset on the ball of radius `slack`.
        let weights = qv.component_div(&self.sv);
        let wn = weights.norm();
        let b = if wn > 0.0 { &weights * (self.slack / wn) } else { DVector::zeros(weights.len()) };
        let a = (&b - &self.offset).component_div(&self.sv);
        let z = &self.z0 + &self.basis * (&self.v * a);
        Ok((c.dot(&z), z))
    }
}
