//! Closed-loop simulation of both self-triggered schemes.
//!
//! The plant runs every step; the network adds bounded noise to every
//! measurement, but the controller only sees the measurements delivered at
//! trigger times.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rand::RngExt;

use crate::ddmpc::{MpcConfig, MpcData, MpcSolution, TerminalIngredients, solve_mpc};
use crate::error::{Error, Result};
use crate::linalg::inf_norm;
use crate::model::LtiSystem;
use crate::statefb::{StateFbConfig, StatePredictor, next_trigger_time_sf, rho_bounds_state, trigger_function_phi};
use crate::trajectory::{DataKind, TrajectoryData, hankel};
use crate::trigger_output::{
    RadiusRule, RhoBounds, TriggerDecision, TriggerParams, estimate_rho_bounds, next_trigger_time,
    precompute_trigger_params, prediction_error_bound,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseDistribution {
    #[default]
    UniformBall,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Euclidean bound `nbar`.
    pub bound: f64,
    pub distribution: NoiseDistribution,
    pub seed: u64,
}

impl NoiseModel {
    pub fn uniform(bound: f64, seed: u64) -> Self {
        Self { bound, distribution: NoiseDistribution::UniformBall, seed }
    }

    pub fn zero() -> Self {
        Self { bound: 0.0, distribution: NoiseDistribution::Zero, seed: 0 }
    }

    pub fn source(&self) -> NoiseSource {
        NoiseSource { model: *self, rng: ChaCha8Rng::seed_from_u64(self.seed) }
    }
}

/// Seeded stream of noise vectors.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    model: NoiseModel,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    /// Uniform sample from the ball of radius `nbar` in `dim` dimensions.
    pub fn sample(&mut self, dim: usize) -> DVector<f64> {
        if self.model.distribution == NoiseDistribution::Zero || self.model.bound == 0.0 || dim == 0 {
            return DVector::zeros(dim);
        }
        let dir = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut self.rng));
        let norm: f64 = dir.norm();
        let u: f64 = self.rng.random_range(0.0..1.0);
        let radius = self.model.bound * u.powf(1.0 / dim as f64);
        let v = dir * (radius / norm);
        let n = v.norm();
        if n > self.model.bound { v * (self.model.bound / n) } else { v }
    }
}

/// Lemma-style audit of one trigger: the bound computed at `t` and the
/// error observed once `t + tau` is reached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Audit {
    pub t: usize,
    pub tau: usize,
    pub bound: f64,
    pub realized: Option<f64>,
}

impl Audit {
    pub fn violated(&self) -> bool {
        self.realized.is_some_and(|r| r > self.bound * (1.0 + 1e-9) + 1e-12)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub trigger_times: Vec<usize>,
    pub inter_trigger: Vec<usize>,
    pub packets_sent: usize,
    pub measurements_sent: usize,
    /// Optimal MPC cost per trigger (NaN for the state-feedback loop).
    pub costs: Vec<f64>,
    pub audits: Vec<Audit>,
    /// A trigger set was empty and the floor `tau = 1` was used.
    pub threshold_violated: Vec<bool>,
    /// Trigger times at which the optimization failed.
    pub failures: Vec<usize>,
}

impl EventLog {
    /// Records a trigger at `t`; a packet carries `min(eta, t - t_prev)` new
    /// measurements, `eta` for the first.
    pub fn record_trigger(&mut self, t: usize, eta: usize) {
        let fresh = match self.trigger_times.last() {
            Some(&prev) => eta.min(t - prev),
            None => eta,
        };
        self.trigger_times.push(t);
        self.packets_sent += 1;
        self.measurements_sent += fresh;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// `x_0..x_T`.
    pub states: DMatrix<f64>,
    /// `u_0..u_(T-1)`.
    pub inputs: DMatrix<f64>,
    /// Noise-free outputs `y_0..y_(T-1)`.
    pub outputs: DMatrix<f64>,
    /// Outputs as seen through the network.
    pub measured: DMatrix<f64>,
    pub triggered: Vec<bool>,
    pub log: EventLog,
    /// Output at `T` under the last applied input.
    pub final_output: DVector<f64>,
    pub reference: DVector<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub steps: usize,
    pub packets: usize,
    pub measurements: usize,
    pub mean_inter_trigger: f64,
    pub terminal_error: f64,
    pub terminal_state_inf: f64,
    pub audit_violations: usize,
    pub threshold_violations: usize,
    pub failures: usize,
    pub seed: u64,
}

impl Summary {
    pub fn feasibility_violated(&self) -> bool {
        self.failures > 0
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "steps={}", self.steps);
        let _ = writeln!(s, "packets={}", self.packets);
        let _ = writeln!(s, "measurements={}", self.measurements);
        let _ = writeln!(s, "mean_inter_trigger={}", self.mean_inter_trigger);
        let _ = writeln!(s, "terminal_error={}", self.terminal_error);
        let _ = writeln!(s, "terminal_state_inf={}", self.terminal_state_inf);
        let _ = writeln!(s, "audit_violations={}", self.audit_violations);
        let _ = writeln!(s, "threshold_violations={}", self.threshold_violations);
        let _ = writeln!(s, "failures={}", self.failures);
        let _ = writeln!(s, "feasibility_violated={}", self.feasibility_violated());
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }
}

pub fn metrics(run: &RunResult) -> Summary {
    let log = &run.log;
    let mean_inter_trigger = if log.inter_trigger.is_empty() {
        0.0
    } else {
        log.inter_trigger.iter().sum::<usize>() as f64 / log.inter_trigger.len() as f64
    };
    let x_t = run.states.column(run.states.ncols() - 1).into_owned();
    Summary {
        steps: run.inputs.ncols(),
        packets: log.packets_sent,
        measurements: log.measurements_sent,
        mean_inter_trigger,
        terminal_error: (&run.final_output - &run.reference).norm(),
        terminal_state_inf: inf_norm(&x_t),
        audit_violations: log.audits.iter().filter(|a| a.violated()).count(),
        threshold_violations: log.threshold_violated.iter().filter(|v| **v).count(),
        failures: log.failures.len(),
        seed: run.seed,
    }
}

impl RunResult {
    /// Trajectory CSV (`t,u..,y..,triggered`) followed by `#` lines with
    /// `extra` (config echo) and the seed.
    pub fn write_csv<W: Write>(&self, mut w: W, extra: &str) -> Result<()> {
        let (m, p) = (self.inputs.nrows(), self.outputs.nrows());
        let mut header = vec!["t".to_string()];
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend((0..p).map(|i| format!("y{i}")));
        header.push("triggered".into());
        writeln!(w, "{}", header.join(","))?;
        for t in 0..self.inputs.ncols() {
            let mut row = vec![t.to_string()];
            row.extend(self.inputs.column(t).iter().map(|v| format!("{v:e}")));
            row.extend(self.outputs.column(t).iter().map(|v| format!("{v:e}")));
            row.push(u8::from(self.triggered[t]).to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        for line in extra.lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "# seed={}", self.seed)?;
        Ok(())
    }

    /// One line per trigger: `t,tau,cost,bound,realized,threshold_violated`,
    /// then the same `#` trailer as [`RunResult::write_csv`].
    pub fn write_audit<W: Write>(&self, mut w: W, extra: &str) -> Result<()> {
        writeln!(w, "t,tau,cost,bound,realized,threshold_violated")?;
        for (k, a) in self.log.audits.iter().enumerate() {
            let realized = a.realized.map(|r| format!("{r:e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{},{:e},{:e},{},{}",
                a.t,
                a.tau,
                self.log.costs.get(k).copied().unwrap_or(f64::NAN),
                a.bound,
                realized,
                u8::from(self.log.threshold_violated.get(k).copied().unwrap_or(false))
            )?;
        }
        for line in extra.lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "# seed={}", self.seed)?;
        Ok(())
    }

    /// Writes `trajectory.csv`, `audit.csv` and `summary.txt` into `dir`.
    pub fn save(&self, dir: &Path, config_echo: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("trajectory.csv"))?), config_echo)?;
        self.write_audit(std::io::BufWriter::new(std::fs::File::create(dir.join("audit.csv"))?), config_echo)?;
        let mut summary = metrics(self).to_key_values();
        for line in config_echo.lines() {
            summary.push_str("# ");
            summary.push_str(line);
            summary.push('\n');
        }
        std::fs::write(dir.join("summary.txt"), summary)?;
        Ok(())
    }
}

/// Everything the output-feedback controller computes offline.
#[derive(Debug, Clone)]
pub struct OutputFeedbackController {
    pub cfg: MpcConfig,
    pub data: MpcData,
    pub term: TerminalIngredients,
    pub params: TriggerParams,
    pub rho: RhoBounds,
}

impl OutputFeedbackController {
    pub fn new(
        data: &TrajectoryData,
        cfg: MpcConfig,
        term: TerminalIngredients,
        sigma: f64,
        radius_rule: RadiusRule,
    ) -> Result<Self> {
        cfg.validate()?;
        let depth = cfg.horizon + cfg.eta;
        let hu = hankel(&data.inputs, depth)?;
        let hy = hankel(&data.outputs, depth)?;
        let rho = estimate_rho_bounds(&hu, &hy, cfg.eta, cfg.horizon)?;
        let params = precompute_trigger_params(&hu, &hy, &cfg, &term, sigma, radius_rule)?;
        let data = MpcData::from_hankels(hu, hy)?;
        Ok(Self { cfg, data, term, params, rho })
    }

    /// Same offline data with a different threshold.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::Config(format!("sigma must lie in (0, 1), got {sigma}")));
        }
        let mut c = self.clone();
        c.params.sigma = sigma;
        Ok(c)
    }

    pub fn decide(&self, u_past: &[DVector<f64>], zeta_past: &[DVector<f64>]) -> Result<(MpcSolution, TriggerDecision)> {
        let sol = solve_mpc(&self.cfg, &self.data, u_past, zeta_past, &self.term)?;
        let d = next_trigger_time(&sol, &self.params, &self.rho, &self.cfg)?;
        Ok((sol, d))
    }
}

fn stacked_xi(u: &[DVector<f64>], y: &[DVector<f64>]) -> DVector<f64> {
    let parts: Vec<&DVector<f64>> = u.iter().chain(y.iter()).collect();
    let n: usize = parts.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(n);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.len()).copy_from(p);
        r += p.len();
    }
    out
}

/// Runs the self-triggered output-feedback loop for `steps` steps.
///
/// The plant starts from `x0` and free-runs for `eta` steps under `u_eq` so
/// that the first packet exists; time 0 is the end of that pre-roll.
pub fn run_output_feedback(
    sys: &LtiSystem,
    ctrl: &OutputFeedbackController,
    noise: &NoiseModel,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<RunResult> {
    let cfg = &ctrl.cfg;
    let eta = cfg.eta;
    let (m, p) = (sys.input_dim(), sys.output_dim());
    if m != cfg.n_u() || p != cfg.n_y() || x0.len() != sys.state_dim() {
        return Err(Error::Dimension("plant and controller do not match".into()));
    }
    let mut src = noise.source();
    // Histories include the pre-roll; index k corresponds to time k - eta.
    let mut u_hist: Vec<DVector<f64>> = Vec::with_capacity(steps + eta);
    let mut y_hist: Vec<DVector<f64>> = Vec::with_capacity(steps + eta);
    let mut z_hist: Vec<DVector<f64>> = Vec::with_capacity(steps + eta);
    let mut x = x0.clone();
    for _ in 0..eta {
        let (xn, y) = sys.simulate_step(&x, &cfg.u_eq)?;
        z_hist.push(&y + src.sample(p));
        y_hist.push(y);
        u_hist.push(cfg.u_eq.clone());
        x = xn;
    }
    let mut states = DMatrix::zeros(sys.state_dim(), steps + 1);
    states.set_column(0, &x);
    let mut triggered = vec![false; steps];
    let mut log = EventLog::default();
    // Pending audits: (index into log.audits, predicted xi at t + tau).
    let mut pending: Vec<(usize, DVector<f64>)> = Vec::new();
    let mut last_u = cfg.u_eq.clone();

    let mut t = 0;
    loop {
        log.record_trigger(t, eta);
        if t < steps {
            triggered[t] = true;
        }
        let u_past = &u_hist[t..t + eta];
        let z_past = &z_hist[t..t + eta];
        let (plan, tau) = match ctrl.decide(u_past, z_past) {
            Ok((sol, d)) => {
                let bound = prediction_error_bound(&sol, d.tau, &ctrl.rho, cfg.noise_bound, eta)?;
                log.audits.push(Audit { t, tau: d.tau, bound, realized: None });
                log.costs.push(sol.cost);
                log.threshold_violated.push(d.threshold_violated);
                pending.push((log.audits.len() - 1, sol.xi_pred[d.tau].clone()));
                let plan: Vec<DVector<f64>> = (0..d.tau).map(|i| sol.u(i as isize)).collect();
                (plan, d.tau)
            }
            Err(Error::Infeasible | Error::Unbounded | Error::NumericalFailure(_)) => {
                log.failures.push(t);
                log.audits.push(Audit { t, tau: 1, bound: f64::NAN, realized: None });
                log.costs.push(f64::NAN);
                log.threshold_violated.push(true);
                (vec![cfg.u_eq.clone()], 1)
            }
            Err(e) => return Err(e),
        };
        log.inter_trigger.push(tau);
        for u in plan.iter().take(steps.saturating_sub(t)) {
            let (xn, y) = sys.simulate_step(&x, u)?;
            z_hist.push(&y + src.sample(p));
            y_hist.push(y);
            u_hist.push(u.clone());
            x = xn;
            let k = u_hist.len() - eta;
            states.set_column(k, &x);
            last_u = u.clone();
        }
        let next = t + tau;
        // The true extended state at `next` is known once `next - 1` ran.
        pending.retain(|(idx, xi_bar)| {
            let a = log.audits[*idx];
            let at = a.t + a.tau;
            if at > steps {
                return false;
            }
            if at <= u_hist.len() - eta {
                let xi = stacked_xi(&u_hist[at..at + eta], &y_hist[at..at + eta]);
                log.audits[*idx].realized = Some((&xi - xi_bar).norm());
                return false;
            }
            true
        });
        t = next;
        if t >= steps {
            break;
        }
    }
    let columns = |hist: &[DVector<f64>], rows: usize| {
        if hist.is_empty() { DMatrix::zeros(rows, 0) } else { DMatrix::from_columns(hist) }
    };
    let inputs = columns(&u_hist[eta..], m);
    let outputs = columns(&y_hist[eta..], p);
    let measured = columns(&z_hist[eta..], p);
    let final_output = &sys.c * &x + &sys.d * &last_u;
    Ok(RunResult {
        states,
        inputs,
        outputs,
        measured,
        triggered,
        log,
        final_output,
        reference: cfg.y_eq.clone(),
        seed: noise.seed,
    })
}

/// Offline data of the state-feedback controller.
#[derive(Debug, Clone)]
pub struct StateFeedbackController {
    pub cfg: StateFbConfig,
    pub predictor: StatePredictor,
    pub rho: RhoBounds,
}

impl StateFeedbackController {
    pub fn new(data: &TrajectoryData, cfg: StateFbConfig) -> Result<Self> {
        cfg.validate()?;
        if data.kind != DataKind::StateFeedback {
            return Err(Error::Config("state feedback needs state measurements".into()));
        }
        let l = cfg.horizon;
        let predictor = StatePredictor::new(&hankel(&data.inputs, l)?, &hankel(&data.outputs, l)?)?;
        let rho = rho_bounds_state(&hankel(&data.inputs, l + 1)?, &hankel(&data.outputs, l + 1)?, l)?;
        Ok(Self { cfg, predictor, rho })
    }
}

/// Runs the self-triggered state-feedback loop. Each trigger delivers one
/// noisy state sample.
pub fn run_state_feedback(
    sys: &LtiSystem,
    ctrl: &StateFeedbackController,
    noise: &NoiseModel,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<RunResult> {
    let cfg = &ctrl.cfg;
    let n = sys.state_dim();
    if x0.len() != n || cfg.gain.ncols() != n || cfg.gain.nrows() != sys.input_dim() {
        return Err(Error::Dimension("plant and gain do not match".into()));
    }
    let mut src = noise.source();
    let mut x = x0.clone();
    let mut states = DMatrix::zeros(n, steps + 1);
    states.set_column(0, &x);
    let mut inputs = DMatrix::zeros(sys.input_dim(), steps);
    let mut outputs = DMatrix::zeros(sys.output_dim(), steps);
    let mut measured = DMatrix::zeros(sys.output_dim(), steps);
    let mut triggered = vec![false; steps];
    let mut log = EventLog::default();
    let mut last_u = DVector::zeros(sys.input_dim());
    // Noise is drawn every step so the stream does not depend on triggers.
    let mut noises: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
    let mut t = 0;
    loop {
        while noises.len() <= t {
            noises.push(src.sample(n));
        }
        let zeta = &x + &noises[t];
        log.record_trigger(t, 1);
        if t < steps {
            triggered[t] = true;
        }
        let u = &cfg.gain * &zeta;
        let mut pending = None;
        let tau = match ctrl.predictor.predict(&zeta, &cfg.gain, cfg.noise_bound) {
            Ok(pred) => {
                let d = next_trigger_time_sf(&pred, &ctrl.rho, &zeta, cfg);
                let bound = trigger_function_phi(&pred, ctrl.rho.get(d.tau), cfg.noise_bound, d.tau);
                log.audits.push(Audit { t, tau: d.tau, bound, realized: None });
                log.threshold_violated.push(d.l2_limited);
                pending = Some((log.audits.len() - 1, zeta.clone()));
                d.tau
            }
            Err(Error::Infeasible | Error::Unbounded | Error::NumericalFailure(_)) => {
                log.failures.push(t);
                log.audits.push(Audit { t, tau: 1, bound: f64::NAN, realized: None });
                log.threshold_violated.push(true);
                1
            }
            Err(e) => return Err(e),
        };
        log.costs.push(f64::NAN);
        log.inter_trigger.push(tau);
        let end = (t + tau).min(steps);
        for k in t..end {
            let (xn, y) = sys.simulate_step(&x, &u)?;
            while noises.len() <= k {
                noises.push(src.sample(n));
            }
            inputs.set_column(k, &u);
            outputs.set_column(k, &y);
            measured.set_column(k, &(&y + &noises[k]));
            x = xn;
            states.set_column(k + 1, &x);
            last_u = u.clone();
        }
        if let Some((idx, z)) = pending.take()
            && t + tau <= steps
        {
            let realized = inf_norm(&(&z - states.column(t + tau)));
            log.audits[idx].realized = Some(realized);
        }
        t += tau;
        if t >= steps {
            break;
        }
    }
    let final_output = &sys.c * &x + &sys.d * &last_u;
    Ok(RunResult {
        states,
        inputs,
        outputs,
        measured,
        triggered,
        log,
        final_output,
        reference: DVector::zeros(sys.output_dim()),
        seed: noise.seed,
    })
}
