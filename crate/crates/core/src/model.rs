//! Discrete-time LTI plants and the model-based quantities used as test
//! oracles: observability, the extended (input/output window) state and the
//! exact growth constants `||C A^(i+eta) Theta^+||`.
//!
//! The controllers never read the matrices of an [`LtiSystem`]; they only see
//! recorded trajectories. Everything model-based here exists to simulate the
//! plant and to check the data-driven code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result, dim_err};
use crate::linalg::{matrix_power, numerical_rank, pinv, spectral_norm};

/// `x+ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return dim_err(format!("A must be square, got {}x{}", n, a.ncols()));
        }
        if b.nrows() != n {
            return dim_err(format!("B has {} rows, expected {n}", b.nrows()));
        }
        if c.ncols() != n {
            return dim_err(format!("C has {} columns, expected {n}", c.ncols()));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return dim_err(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            ));
        }
        let all = [&a, &b, &c, &d];
        if all.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("system matrices must be finite".into()));
        }
        Ok(Self { a, b, c, d })
    }

    /// Full-state measurement (`C = I`, `D = 0`).
    pub fn with_state_output(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        Self::new(a, b, DMatrix::identity(n, n), DMatrix::zeros(n, m))
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// One step: returns `(x+, y)`.
    pub fn simulate_step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if x.len() != self.state_dim() || u.len() != self.input_dim() {
            return dim_err(format!(
                "state/input of length {}/{}, expected {}/{}",
                x.len(),
                u.len(),
                self.state_dim(),
                self.input_dim()
            ));
        }
        Ok((&self.a * x + &self.b * u, &self.c * x + &self.d * u))
    }

    /// Simulates from `x0` under the input columns of `u`; returns the output
    /// columns and the final state.
    pub fn simulate(&self, x0: &DVector<f64>, u: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let mut x = x0.clone();
        let mut y = DMatrix::zeros(self.output_dim(), u.ncols());
        for t in 0..u.ncols() {
            let (xn, yt) = self.simulate_step(&x, &u.column(t).into_owned())?;
            y.set_column(t, &yt);
            x = xn;
        }
        Ok((y, x))
    }

    /// `[C; CA; ...; CA^(k-1)]`.
    pub fn observability_matrix(&self, k: usize) -> DMatrix<f64> {
        let (p, n) = (self.output_dim(), self.state_dim());
        let mut out = DMatrix::zeros(p * k, n);
        let mut blk = self.c.clone();
        for i in 0..k {
            out.view_mut((i * p, 0), (p, n)).copy_from(&blk);
            blk = &blk * &self.a;
        }
        out
    }

    /// `[B, AB, ..., A^(k-1) B]`.
    pub fn controllability_matrix(&self, k: usize) -> DMatrix<f64> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut out = DMatrix::zeros(n, m * k);
        let mut blk = self.b.clone();
        for i in 0..k {
            out.view_mut((0, i * m), (n, m)).copy_from(&blk);
            blk = &self.a * &blk;
        }
        out
    }

    pub fn is_observable(&self) -> bool {
        numerical_rank(&self.observability_matrix(self.state_dim())) == self.state_dim()
    }

    pub fn is_controllable(&self) -> bool {
        numerical_rank(&self.controllability_matrix(self.state_dim())) == self.state_dim()
    }

    /// Smallest `eta` with `rank Theta_eta = n`.
    pub fn observability_index(&self) -> Result<usize> {
        let n = self.state_dim();
        (1..=n)
            .find(|&k| numerical_rank(&self.observability_matrix(k)) == n)
            .ok_or(Error::NotObservable)
    }

    /// Block lower-triangular Toeplitz matrix of Markov parameters mapping the
    /// input window `u_[0, k-1]` to the forced part of `y_[0, k-1]`.
    pub fn toeplitz(&self, k: usize) -> DMatrix<f64> {
        let (p, m) = (self.output_dim(), self.input_dim());
        let mut out = DMatrix::zeros(p * k, m * k);
        for i in 0..k {
            out.view_mut((i * p, i * m), (p, m)).copy_from(&self.d);
            for j in 0..i {
                let blk = &self.c * matrix_power(&self.a, i - j - 1) * &self.b;
                out.view_mut((i * p, j * m), (p, m)).copy_from(&blk);
            }
        }
        out
    }

    /// Exact growth constant `||C A^(i+eta) Theta_eta^+||_2`.
    pub fn rho_oracle(&self, i: usize, eta: usize) -> Result<f64> {
        if eta == 0 {
            return Err(Error::InvalidArgument("eta must be positive".into()));
        }
        let theta = self.observability_matrix(eta);
        if numerical_rank(&theta) < self.state_dim() {
            return Err(Error::NotObservable);
        }
        let m = &self.c * matrix_power(&self.a, i + eta) * pinv(&theta);
        Ok(spectral_norm(&m))
    }

    /// Realization of the same input/output behaviour on the extended state.
    pub fn extended(&self, eta: usize) -> Result<ExtendedSystem> {
        ExtendedSystem::from_system(self, eta)
    }

    /// Steady-state gain `C (I - A)^{-1} B + D`.
    pub fn dc_gain(&self) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let inv = (DMatrix::identity(n, n) - &self.a)
            .try_inverse()
            .ok_or_else(|| Error::RankDeficient("I - A is singular".into()))?;
        Ok(&self.c * inv * &self.b + &self.d)
    }
}

/// Zero-order-hold discretization of `xdot = Ac x + Bc u` with sample time `dt`.
///
/// Uses the block exponential `exp([[Ac, Bc], [0, 0]] dt)`; the matrix
/// exponential is nalgebra's scaling-and-squaring Padé implementation.
pub fn discretize_zoh(ac: &DMatrix<f64>, bc: &DMatrix<f64>, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("sample time must be positive, got {dt}")));
    }
    let n = ac.nrows();
    if ac.ncols() != n || bc.nrows() != n {
        return dim_err("Ac must be square and match the rows of Bc");
    }
    let m = bc.ncols();
    let mut blk = DMatrix::zeros(n + m, n + m);
    blk.view_mut((0, 0), (n, n)).copy_from(&(ac * dt));
    blk.view_mut((0, n), (n, m)).copy_from(&(bc * dt));
    let e = blk.exp();
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned()))
}

/// Extended state `xi_t = [u_(t-eta), ..., u_(t-1), y_(t-eta), ..., y_(t-1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedState {
    pub vector: DVector<f64>,
    pub eta: usize,
    pub n_u: usize,
    pub n_y: usize,
}

impl ExtendedState {
    pub fn input_window(&self) -> DVector<f64> {
        self.vector.rows(0, self.eta * self.n_u).into_owned()
    }

    pub fn output_window(&self) -> DVector<f64> {
        self.vector.rows(self.eta * self.n_u, self.eta * self.n_y).into_owned()
    }

    /// The extended state of the constant pair `(u_e, y_e)`.
    pub fn equilibrium(u_e: &DVector<f64>, y_e: &DVector<f64>, eta: usize) -> Self {
        let us: Vec<_> = (0..eta).map(|_| u_e.clone()).collect();
        let ys: Vec<_> = (0..eta).map(|_| y_e.clone()).collect();
        extended_state(&us, &ys).expect("windows of equal length")
    }
}

/// Stacks the last `eta` inputs and outputs into an extended state.
pub fn extended_state(u_window: &[DVector<f64>], y_window: &[DVector<f64>]) -> Result<ExtendedState> {
    let eta = u_window.len();
    if eta == 0 || y_window.len() != eta {
        return dim_err(format!(
            "windows must have equal positive length, got {} and {}",
            eta,
            y_window.len()
        ));
    }
    let n_u = u_window[0].len();
    let n_y = y_window[0].len();
    if u_window.iter().any(|u| u.len() != n_u) || y_window.iter().any(|y| y.len() != n_y) {
        return dim_err("window entries must share one dimension");
    }
    let mut v = DVector::zeros(eta * (n_u + n_y));
    for (i, u) in u_window.iter().enumerate() {
        v.rows_mut(i * n_u, n_u).copy_from(u);
    }
    for (i, y) in y_window.iter().enumerate() {
        v.rows_mut(eta * n_u + i * n_y, n_y).copy_from(y);
    }
    Ok(ExtendedState { vector: v, eta, n_u, n_y })
}

/// `xi+ = At xi + Bt u`, `y = Ct xi + Dt u` on the extended state.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub eta: usize,
    pub n_u: usize,
    pub n_y: usize,
}

impl ExtendedSystem {
    fn from_system(sys: &LtiSystem, eta: usize) -> Result<Self> {
        let (n, m, p) = (sys.state_dim(), sys.input_dim(), sys.output_dim());
        if eta == 0 {
            return Err(Error::InvalidArgument("eta must be positive".into()));
        }
        let theta = sys.observability_matrix(eta);
        if numerical_rank(&theta) < n {
            return Err(Error::NotObservable);
        }
        let theta_pinv = pinv(&theta);
        let a_eta = matrix_power(&sys.a, eta);
        // x_t = A^eta Theta^+ y_w + (R_eta - A^eta Theta^+ T) u_w
        let mut r_eta = DMatrix::zeros(n, eta * m);
        for j in 0..eta {
            let blk = matrix_power(&sys.a, eta - 1 - j) * &sys.b;
            r_eta.view_mut((0, j * m), (n, m)).copy_from(&blk);
        }
        let to_x_y = &a_eta * &theta_pinv;
        let to_x_u = &r_eta - &to_x_y * sys.toeplitz(eta);
        let nu_w = eta * m;
        let ny_w = eta * p;
        let dim = nu_w + ny_w;
        let mut c_ext = DMatrix::zeros(p, dim);
        c_ext.view_mut((0, 0), (p, nu_w)).copy_from(&(&sys.c * &to_x_u));
        c_ext.view_mut((0, nu_w), (p, ny_w)).copy_from(&(&sys.c * &to_x_y));

        let mut a_ext = DMatrix::zeros(dim, dim);
        let mut b_ext = DMatrix::zeros(dim, m);
        for j in 0..eta - 1 {
            for k in 0..m {
                a_ext[(j * m + k, (j + 1) * m + k)] = 1.0;
            }
            for k in 0..p {
                a_ext[(nu_w + j * p + k, nu_w + (j + 1) * p + k)] = 1.0;
            }
        }
        for k in 0..m {
            b_ext[((eta - 1) * m + k, k)] = 1.0;
        }
        a_ext
            .view_mut((nu_w + (eta - 1) * p, 0), (p, dim))
            .copy_from(&c_ext);
        b_ext.view_mut((nu_w + (eta - 1) * p, 0), (p, m)).copy_from(&sys.d);
        Ok(Self { a: a_ext, b: b_ext, c: c_ext, d: sys.d.clone(), eta, n_u: m, n_y: p })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn step(&self, xi: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.a * xi + &self.b * u, &self.c * xi + &self.d * u)
    }

    /// Rows of the extended state that hold past inputs.
    pub fn input_rows(&self) -> std::ops::Range<usize> {
        0..self.eta * self.n_u
    }
}

/// Four-tank benchmark, linearized and sampled (two inputs, two outputs).
pub fn four_tank() -> LtiSystem {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.927, 0.0, 0.041, 0.0, //
            0.0, 0.918, 0.0, 0.033, //
            0.0, 0.0, 0.924, 0.0, //
            0.0, 0.0, 0.0, 0.937,
        ],
    );
    let b = DMatrix::from_row_slice(4, 2, &[0.017, 0.001, 0.001, 0.023, 0.0, 0.061, 0.072, 0.0]);
    let c = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    LtiSystem::new(a, b, c, DMatrix::zeros(2, 2)).expect("four-tank matrices are consistent")
}

/// Continuous-time double integrator with friction.
pub fn double_integrator_continuous() -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -0.1]),
        DMatrix::from_row_slice(2, 1, &[0.0, 0.1]),
    )
}

/// Continuous-time inverted pendulum on a cart, linearized at the upright position.
pub fn inverted_pendulum_continuous(m1: f64, m2: f64, ell: f64, g: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, -m1 * g / m2, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, g / ell, 0.0,
            ],
        ),
        DMatrix::from_row_slice(4, 1, &[0.0, 1.0 / m2, 0.0, -1.0 / (m2 * ell)]),
    )
}
