//! TOML experiment configuration and its resolution into plants,
//! controllers and closed-loop runs.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ddmpc::{MpcConfig, TerminalCheck, TerminalDesign, TerminalIngredients, check_terminal_assumption, terminal_boundary_samples, terminal_ingredients_oracle};
use crate::error::{Error, Result};
use crate::model::{LtiSystem, discretize_zoh, double_integrator_continuous, four_tank, inverted_pendulum_continuous};
use crate::sim::{
    NoiseDistribution, NoiseModel, OutputFeedbackController, RunResult, StateFeedbackController, run_output_feedback,
    run_state_feedback,
};
use crate::statefb::{StateFbConfig, state_gain_oracle};
use crate::trajectory::{DataKind, TrajectoryData, collect_offline_data, generate_pe_input};
use crate::trigger_output::RadiusRule;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Noise seed.
    pub seed: u64,
    /// Closed-loop length `T`.
    pub steps: usize,
    /// Initial state; zero when omitted. For output feedback this is the
    /// state at the start of the `eta`-step pre-roll.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub plant: PlantSpec,
    pub data: DataSpec,
    pub noise: NoiseSpec,
    pub controller: ControllerSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantSpec {
    FourTank,
    DoubleIntegrator { dt: f64 },
    InvertedPendulum { dt: f64, m1: f64, m2: f64, ell: f64, g: f64 },
    Discrete { a: Rows, b: Rows, c: Rows, d: Rows },
    Continuous { a: Rows, b: Rows, c: Rows, d: Rows, dt: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Number of offline samples `N`.
    pub length: usize,
    pub seed: u64,
    /// Defaults to `L + n_x + eta` (output feedback) or `L + n_x + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe_order: Option<usize>,
    /// Load offline data from this CSV instead of generating it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    UniformBall,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Euclidean bound `nbar`, also used by the controller.
    pub bound: f64,
    #[serde(default)]
    pub distribution: NoiseKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControllerSpec {
    OutputFeedback(Box<OutputFeedbackSpec>),
    StateFeedback(StateFeedbackSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusRuleSpec {
    #[default]
    Literal,
    Sqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalSpec {
    Oracle { state_weight: f64 },
    Given { p: Rows, k: Rows, eps: f64, p_r: Rows, k_r: Rows, r: f64 },
}

impl Default for TerminalSpec {
    fn default() -> Self {
        TerminalSpec::Oracle { state_weight: TerminalDesign::default().state_weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputFeedbackSpec {
    pub horizon: usize,
    /// Observability index; computed from the plant when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<usize>,
    pub q: Rows,
    pub r: Rows,
    /// The products `lambda_g * nbar` and `lambda_h / nbar`.
    pub lambda_g_nbar: f64,
    pub lambda_h_over_nbar: f64,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub u_eq: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub sigma: f64,
    #[serde(default)]
    pub radius_rule: RadiusRuleSpec,
    #[serde(default)]
    pub terminal: TerminalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFeedbackSpec {
    pub horizon: usize,
    pub sigma: f64,
    pub kappa: f64,
    pub mu: f64,
    /// Explicit gain `K` (`u = K x`); otherwise LQR with `lqr_q`, `lqr_r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lqr_q: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lqr_r: Option<Rows>,
}

fn matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Config(format!("{name}: rows have different lengths")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name}: entries must be finite")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Offline-built controller of either kind.
#[derive(Debug, Clone)]
pub enum Controller {
    Output(Box<OutputFeedbackController>),
    State(Box<StateFeedbackController>),
}

impl Controller {
    pub fn sigma(&self) -> f64 {
        match self {
            Controller::Output(c) => c.params.sigma,
            Controller::State(c) => c.cfg.sigma,
        }
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        match self {
            Controller::Output(c) => Ok(Controller::Output(Box::new(c.with_sigma(sigma)?))),
            Controller::State(c) => {
                let mut c = (**c).clone();
                c.cfg.sigma = sigma;
                c.cfg.validate()?;
                Ok(Controller::State(Box::new(c)))
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config; a relative `data.file` is resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(file), Some(dir)) = (cfg.data.file.as_mut(), path.parent())
            && file.is_relative()
        {
            *file = dir.join(&*file);
        }
        Ok(cfg)
    }

    /// The resolved config as `#`-free text, for echoing into output files.
    pub fn echo(&self) -> String {
        self.to_toml_string().unwrap_or_default()
    }

    pub fn plant(&self) -> Result<LtiSystem> {
        let discrete = |ac: DMatrix<f64>, bc: DMatrix<f64>, dt: f64| -> Result<LtiSystem> {
            if !(dt > 0.0) {
                return Err(Error::Config(format!("sampling period must be positive, got {dt}")));
            }
            let (a, b) = discretize_zoh(&ac, &bc, dt)?;
            LtiSystem::with_state_output(a, b)
        };
        let sys = match &self.plant {
            PlantSpec::FourTank => four_tank(),
            PlantSpec::DoubleIntegrator { dt } => {
                let (ac, bc) = double_integrator_continuous();
                discrete(ac, bc, *dt)?
            }
            PlantSpec::InvertedPendulum { dt, m1, m2, ell, g } => {
                let (ac, bc) = inverted_pendulum_continuous(*m1, *m2, *ell, *g);
                discrete(ac, bc, *dt)?
            }
            PlantSpec::Discrete { a, b, c, d } => {
                LtiSystem::new(matrix("a", a)?, matrix("b", b)?, matrix("c", c)?, matrix("d", d)?)?
            }
            PlantSpec::Continuous { a, b, c, d, dt } => {
                if !(*dt > 0.0) {
                    return Err(Error::Config(format!("sampling period must be positive, got {dt}")));
                }
                let (ad, bd) = discretize_zoh(&matrix("a", a)?, &matrix("b", b)?, *dt)?;
                LtiSystem::new(ad, bd, matrix("c", c)?, matrix("d", d)?)?
            }
        };
        Ok(sys)
    }

    pub fn initial_state(&self, sys: &LtiSystem) -> Result<DVector<f64>> {
        match &self.x0 {
            None => Ok(DVector::zeros(sys.state_dim())),
            Some(v) if v.len() == sys.state_dim() => Ok(vector(v)),
            Some(v) => Err(Error::Config(format!("x0 has {} entries, plant has {} states", v.len(), sys.state_dim()))),
        }
    }

    pub fn data_kind(&self) -> DataKind {
        match self.controller {
            ControllerSpec::OutputFeedback(_) => DataKind::OutputFeedback,
            ControllerSpec::StateFeedback(_) => DataKind::StateFeedback,
        }
    }

    pub fn eta(&self, sys: &LtiSystem) -> Result<usize> {
        match &self.controller {
            ControllerSpec::OutputFeedback(s) => match s.eta {
                Some(e) if e >= 1 => Ok(e),
                Some(_) => Err(Error::Config("eta must be >= 1".into())),
                None => sys.observability_index(),
            },
            ControllerSpec::StateFeedback(_) => Ok(1),
        }
    }

    pub fn pe_order(&self, sys: &LtiSystem) -> Result<usize> {
        let n = sys.state_dim();
        let default = match &self.controller {
            ControllerSpec::OutputFeedback(s) => s.horizon + n + self.eta(sys)?,
            ControllerSpec::StateFeedback(s) => s.horizon + n + 1,
        };
        match self.data.pe_order {
            Some(o) if o < default => Err(Error::Config(format!("pe_order must be at least {default}, got {o}"))),
            Some(o) => Ok(o),
            None => Ok(default),
        }
    }

    /// Generates the offline experiment from `x = 0`, or loads `data.file`.
    pub fn collect(&self, sys: &LtiSystem) -> Result<TrajectoryData> {
        if let Some(file) = &self.data.file {
            return TrajectoryData::load_csv(file);
        }
        let order = self.pe_order(sys)?;
        let u = generate_pe_input(sys.input_dim(), self.data.length, order, self.data.seed)?;
        collect_offline_data(sys, &u, &DVector::zeros(sys.state_dim()), self.data_kind())
    }

    pub fn noise_model(&self, seed: u64) -> NoiseModel {
        let distribution = match self.noise.distribution {
            NoiseKind::UniformBall => NoiseDistribution::UniformBall,
            NoiseKind::Zero => NoiseDistribution::Zero,
        };
        NoiseModel { bound: self.noise.bound, distribution, seed }
    }

    pub fn mpc_config(&self, sys: &LtiSystem) -> Result<MpcConfig> {
        let ControllerSpec::OutputFeedback(s) = &self.controller else {
            return Err(Error::Config("not an output-feedback controller".into()));
        };
        let nbar = self.noise.bound;
        if !(nbar > 0.0) {
            return Err(Error::Config("output feedback needs a positive noise bound".into()));
        }
        let cfg = MpcConfig {
            horizon: s.horizon,
            eta: self.eta(sys)?,
            q: matrix("q", &s.q)?,
            r: matrix("r", &s.r)?,
            lambda_g: s.lambda_g_nbar / nbar,
            lambda_h: s.lambda_h_over_nbar * nbar,
            noise_bound: nbar,
            u_min: vector(&s.u_min),
            u_max: vector(&s.u_max),
            u_eq: vector(&s.u_eq),
            y_eq: vector(&s.y_eq),
        };
        cfg.validate().map_err(config_err)?;
        if cfg.n_u() != sys.input_dim() || cfg.n_y() != sys.output_dim() {
            return Err(Error::Config("controller weights do not match the plant dimensions".into()));
        }
        Ok(cfg)
    }

    /// Terminal ingredients from the model oracle, or the given ones after
    /// a sampled check of the decrease and invariance conditions.
    pub fn terminal(&self, sys: &LtiSystem, cfg: &MpcConfig) -> Result<TerminalIngredients> {
        let ControllerSpec::OutputFeedback(s) = &self.controller else {
            return Err(Error::Config("not an output-feedback controller".into()));
        };
        let ext = sys.extended(cfg.eta)?;
        match &s.terminal {
            TerminalSpec::Oracle { state_weight } => {
                terminal_ingredients_oracle(&ext, cfg, TerminalDesign { state_weight: *state_weight })
            }
            TerminalSpec::Given { p, k, eps, p_r, k_r, r } => {
                let term = TerminalIngredients {
                    p: matrix("terminal.p", p)?,
                    k: matrix("terminal.k", k)?,
                    eps: *eps,
                    p_r: matrix("terminal.p_r", p_r)?,
                    k_r: matrix("terminal.k_r", k_r)?,
                    r: *r,
                };
                let dirs = crate::ddmpc::sphere_directions(ext.dim(), 500, self.data.seed);
                let TerminalCheck { passed, worst_margin } =
                    check_terminal_assumption(&term, &ext, cfg, &terminal_boundary_samples(&term, &dirs));
                if !passed {
                    return Err(Error::Config(format!("given terminal ingredients fail the check (margin {worst_margin:e})")));
                }
                Ok(term)
            }
        }
    }

    pub fn state_config(&self, sys: &LtiSystem) -> Result<StateFbConfig> {
        let ControllerSpec::StateFeedback(s) = &self.controller else {
            return Err(Error::Config("not a state-feedback controller".into()));
        };
        let n = sys.state_dim();
        if sys.output_dim() != n || (&sys.c - DMatrix::identity(n, n)).amax() > 0.0 {
            return Err(Error::Config("state feedback needs C = I".into()));
        }
        let gain = match &s.gain {
            Some(k) => matrix("gain", k)?,
            None => {
                let q = s.lqr_q.as_ref().map(|q| matrix("lqr_q", q)).transpose()?.unwrap_or_else(|| DMatrix::identity(n, n));
                let r = s
                    .lqr_r
                    .as_ref()
                    .map(|r| matrix("lqr_r", r))
                    .transpose()?
                    .unwrap_or_else(|| DMatrix::identity(sys.input_dim(), sys.input_dim()));
                state_gain_oracle(sys, &q, &r)?
            }
        };
        if gain.nrows() != sys.input_dim() || gain.ncols() != n {
            return Err(Error::Config("gain does not match the plant dimensions".into()));
        }
        let cfg = StateFbConfig {
            gain,
            horizon: s.horizon,
            sigma: s.sigma,
            noise_bound: self.noise.bound,
            kappa: s.kappa,
            mu: s.mu,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks that need no data: dimensions, horizon, PE order
    /// and data length, terminal radii.
    pub fn validate(&self) -> Result<LtiSystem> {
        let sys = self.plant().map_err(config_err)?;
        self.initial_state(&sys)?;
        if !(self.noise.bound >= 0.0 && self.noise.bound.is_finite()) {
            return Err(Error::Config("noise bound must be finite and nonnegative".into()));
        }
        let order = self.pe_order(&sys).map_err(config_err)?;
        if self.data.file.is_none() {
            let required = crate::trajectory::min_pe_length(sys.input_dim(), order);
            if self.data.length < required {
                return Err(Error::DataTooShort { required, got: self.data.length });
            }
        }
        match &self.controller {
            ControllerSpec::OutputFeedback(s) => {
                let cfg = self.mpc_config(&sys)?;
                let term = self.terminal(&sys, &cfg).map_err(config_err)?;
                if !term.radius_compatible(&cfg.r, cfg.horizon) {
                    return Err(Error::Config("terminal radii violate the compatibility condition".into()));
                }
                if !(s.sigma > 0.0 && s.sigma < 1.0) {
                    return Err(Error::Config(format!("sigma must lie in (0, 1), got {}", s.sigma)));
                }
            }
            ControllerSpec::StateFeedback(_) => {
                self.state_config(&sys).map_err(config_err)?;
            }
        }
        Ok(sys)
    }

    pub fn build_controller(&self, sys: &LtiSystem, data: &TrajectoryData) -> Result<Controller> {
        if data.input_dim() != sys.input_dim() || data.output_dim() != sys.output_dim() {
            return Err(Error::Config("offline data do not match the plant dimensions".into()));
        }
        match &self.controller {
            ControllerSpec::OutputFeedback(s) => {
                let cfg = self.mpc_config(sys)?;
                let term = self.terminal(sys, &cfg)?;
                let rule = match s.radius_rule {
                    RadiusRuleSpec::Literal => RadiusRule::Literal,
                    RadiusRuleSpec::Sqrt => RadiusRule::Sqrt,
                };
                Ok(Controller::Output(Box::new(OutputFeedbackController::new(data, cfg, term, s.sigma, rule)?)))
            }
            ControllerSpec::StateFeedback(_) => {
                let cfg = self.state_config(sys)?;
                Ok(Controller::State(Box::new(StateFeedbackController::new(data, cfg)?)))
            }
        }
    }

    pub fn run_with(&self, sys: &LtiSystem, ctrl: &Controller, seed: u64) -> Result<RunResult> {
        let x0 = self.initial_state(sys)?;
        let noise = self.noise_model(seed);
        match ctrl {
            Controller::Output(c) => run_output_feedback(sys, c, &noise, &x0, self.steps),
            Controller::State(c) => run_state_feedback(sys, c, &noise, &x0, self.steps),
        }
    }

    /// Replaces `gain` by the resolved LQR gain, so that the echo is
    /// self-contained.
    pub fn with_resolved_gain(&self, sys: &LtiSystem) -> Result<Self> {
        let mut out = self.clone();
        if let ControllerSpec::StateFeedback(s) = &mut out.controller
            && s.gain.is_none()
        {
            s.gain = Some(to_rows(&self.state_config(sys)?.gain));
        }
        Ok(out)
    }
}
