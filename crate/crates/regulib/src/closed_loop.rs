//! Full closed-loop assembly and simulation.
//!
//! A [`Scenario`] bundles a plant, an exosystem, immersion data, regulator
//! parameters, and initial conditions. [`assemble_closed_loop`] turns it into
//! one autonomous vector field over the stacked state
//! `[rho | w | z | e | xi | theta_hat | X]`; [`simulate`] integrates that
//! field and reports metrics. The regulator zero dynamics (error output held
//! at zero, stabilizer replaced by its feedthrough structure) live in
//! [`assemble_regulator_zero_dynamics`] and drive the Lyapunov and limit-set
//! diagnostics in the analysis module.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use crate::linalg::Vector;
use crate::model::{AugmentedPoint, Exosystem, ImmersionData, ModelError, PlantNormalForm};
use crate::ode::{integrate_with_guard, OdeError, Trajectory, VectorField};
use crate::reduction::{reduce_plant, tilde_e, ReductionError, ReductionParams};
use crate::regulator::{
    beta, check_deadzone_floor, m_of, regulator_rhs, RegulatorError, RegulatorParams,
    RegulatorState,
};

#[derive(Debug)]
pub enum ClosedLoopError {
    Model(ModelError),
    Regulator(RegulatorError),
    Reduction(ReductionError),
    Ode(OdeError),
    BadInitialCondition { what: String },
    BadSetting { what: String },
    MissingReduction { r: usize },
    UnexpectedReduction,
}

impl fmt::Display for ClosedLoopError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClosedLoopError::Model(e) => write!(f, "model error: {e}"),
            ClosedLoopError::Regulator(e) => write!(f, "regulator error: {e}"),
            ClosedLoopError::Reduction(e) => write!(f, "reduction error: {e}"),
            ClosedLoopError::Ode(e) => write!(f, "integration error: {e}"),
            ClosedLoopError::BadInitialCondition { what } => {
                write!(f, "bad initial condition: {what}")
            }
            ClosedLoopError::BadSetting { what } => write!(f, "bad setting: {what}"),
            ClosedLoopError::MissingReduction { r } => {
                write!(f, "plant has relative degree {r}; chain reduction parameters are required")
            }
            ClosedLoopError::UnexpectedReduction => {
                write!(f, "reduction parameters given for a relative-degree-one plant")
            }
        }
    }
}

impl std::error::Error for ClosedLoopError {}

impl From<ModelError> for ClosedLoopError {
    fn from(e: ModelError) -> Self {
        ClosedLoopError::Model(e)
    }
}

impl From<RegulatorError> for ClosedLoopError {
    fn from(e: RegulatorError) -> Self {
        ClosedLoopError::Regulator(e)
    }
}

impl From<ReductionError> for ClosedLoopError {
    fn from(e: ReductionError) -> Self {
        ClosedLoopError::Reduction(e)
    }
}

impl From<OdeError> for ClosedLoopError {
    fn from(e: OdeError) -> Self {
        ClosedLoopError::Ode(e)
    }
}

/// Block offsets of the stacked closed-loop state
/// `[rho | w | z | e | xi | theta_hat | X]`, X stored column-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub p: usize,
    pub s_dim: usize,
    pub n: usize,
    pub r: usize,
    pub d: usize,
    pub q_dim: usize,
}

impl StateLayout {
    pub fn rho(&self) -> Range<usize> {
        0..self.p
    }

    pub fn w(&self) -> Range<usize> {
        let s = self.p;
        s..s + self.s_dim
    }

    pub fn z(&self) -> Range<usize> {
        let s = self.p + self.s_dim;
        s..s + self.n
    }

    pub fn e(&self) -> Range<usize> {
        let s = self.p + self.s_dim + self.n;
        s..s + self.r
    }

    pub fn xi(&self) -> Range<usize> {
        let s = self.p + self.s_dim + self.n + self.r;
        s..s + self.d
    }

    pub fn theta_hat(&self) -> Range<usize> {
        let s = self.p + self.s_dim + self.n + self.r + self.d;
        s..s + self.q_dim
    }

    pub fn x_mat(&self) -> Range<usize> {
        let s = self.p + self.s_dim + self.n + self.r + self.d + self.q_dim;
        s..s + (self.d - 1) * self.q_dim
    }

    /// Contiguous regulator block `[xi | theta_hat | X]`.
    pub fn regulator(&self) -> Range<usize> {
        self.xi().start..self.x_mat().end
    }

    pub fn total(&self) -> usize {
        self.x_mat().end
    }

    /// Non-empty blocks in state order, for metric and CSV labeling.
    pub fn block_ranges(&self) -> Vec<(&'static str, Range<usize>)> {
        let all = [
            ("rho", self.rho()),
            ("w", self.w()),
            ("z", self.z()),
            ("e", self.e()),
            ("xi", self.xi()),
            ("theta_hat", self.theta_hat()),
            ("X", self.x_mat()),
        ];
        all.into_iter().filter(|(_, r)| !r.is_empty()).collect()
    }

    /// One label per state component, 1-based within each block; the X block
    /// is indexed flat in storage (column-major) order.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.total());
        for (name, range) in self.block_ranges() {
            for i in 1..=range.len() {
                out.push(format!("{name}_{i}"));
            }
        }
        out
    }
}

/// Gains the escalation probe may adjust.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainKnob {
    /// Stabilizing output feedback k in v = -k e.
    FeedbackK,
    /// Observer eigenvalue lambda in K = A b + lambda b.
    Lambda,
    /// Chain gain g of the relative-degree reduction.
    ChainG,
}

impl GainKnob {
    pub fn parse(s: &str) -> Option<GainKnob> {
        match s {
            "k" => Some(GainKnob::FeedbackK),
            "lambda" => Some(GainKnob::Lambda),
            "g" => Some(GainKnob::ChainG),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            GainKnob::FeedbackK => "k",
            GainKnob::Lambda => "lambda",
            GainKnob::ChainG => "g",
        }
    }
}

/// A complete simulation setup: models, gains, initial conditions, grid.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub plant: Arc<PlantNormalForm>,
    pub exo: Arc<Exosystem>,
    pub im: Arc<ImmersionData>,
    pub reg: RegulatorParams,
    /// Required when the plant has relative degree above one.
    pub reduction: Option<ReductionParams>,
    pub rho: Vec<f64>,
    pub w0: Vec<f64>,
    pub z0: Vec<f64>,
    pub e0: Vec<f64>,
    pub xi0: Vec<f64>,
    pub theta_hat0: Vec<f64>,
    /// Initial filter matrix, flattened column-major, length (d-1)*q_dim.
    pub x0: Vec<f64>,
    pub t_horizon: f64,
    pub h: f64,
    pub seed: u64,
    /// Regulation threshold on the terminal error sup.
    pub tol_e: f64,
    /// Fraction of the horizon used as the terminal window.
    pub terminal_window: f64,
    pub divergence_bound: f64,
    /// Replaces v = -k x with v = +k x; a deliberately destabilized loop.
    pub flip_v_sign: bool,
}

impl Scenario {
    pub fn layout(&self) -> StateLayout {
        StateLayout {
            p: self.exo.p,
            s_dim: self.exo.s_dim,
            n: self.plant.n,
            r: self.plant.r,
            d: self.reg.d,
            q_dim: self.reg.q_dim,
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.layout().total());
        x.extend_from_slice(&self.rho);
        x.extend_from_slice(&self.w0);
        x.extend_from_slice(&self.z0);
        x.extend_from_slice(&self.e0);
        x.extend_from_slice(&self.xi0);
        x.extend_from_slice(&self.theta_hat0);
        x.extend_from_slice(&self.x0);
        x
    }

    pub fn validate(&self) -> Result<(), ClosedLoopError> {
        self.exo.validate()?;
        self.plant.validate()?;
        let lay = self.layout();

        let dims: [(&str, usize, usize); 7] = [
            ("rho", self.rho.len(), lay.p),
            ("w0", self.w0.len(), lay.s_dim),
            ("z0", self.z0.len(), lay.n),
            ("e0", self.e0.len(), lay.r),
            ("xi0", self.xi0.len(), lay.d),
            ("theta_hat0", self.theta_hat0.len(), lay.q_dim),
            ("x0", self.x0.len(), (lay.d - 1) * lay.q_dim),
        ];
        for (what, got, expected) in dims {
            if got != expected {
                return Err(ClosedLoopError::BadInitialCondition {
                    what: format!("{what} has length {got}, expected {expected}"),
                });
            }
        }
        if self.im.d != self.reg.d || self.im.q_dim != self.reg.q_dim {
            return Err(ClosedLoopError::BadSetting {
                what: format!(
                    "immersion dims ({}, {}) do not match regulator dims ({}, {})",
                    self.im.d, self.im.q_dim, self.reg.d, self.reg.q_dim
                ),
            });
        }

        let finite = self
            .initial_state()
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(ClosedLoopError::BadInitialCondition {
                what: "non-finite component".to_string(),
            });
        }
        if !self.exo.rho_in_box(&self.rho) {
            return Err(ClosedLoopError::BadInitialCondition {
                what: format!("rho {:?} outside the parameter box", self.rho),
            });
        }
        if !self.exo.w0_set.contains(&self.w0) {
            return Err(ClosedLoopError::BadInitialCondition {
                what: format!("w0 {:?} outside the initial oscillator set", self.w0),
            });
        }
        if lay.n > 0 && !self.plant.z0_set.contains(&self.z0) {
            return Err(ClosedLoopError::BadInitialCondition {
                what: format!("z0 {:?} outside the initial inner-state set", self.z0),
            });
        }
        for (i, &ei) in self.e0.iter().enumerate() {
            if ei.abs() > self.plant.e0_bound + 1e-12 {
                return Err(ClosedLoopError::BadInitialCondition {
                    what: format!(
                        "e0[{i}] = {ei} exceeds the initial error bound {}",
                        self.plant.e0_bound
                    ),
                });
            }
        }

        match (self.plant.r, &self.reduction) {
            (1, Some(_)) => return Err(ClosedLoopError::UnexpectedReduction),
            (r, None) if r > 1 => return Err(ClosedLoopError::MissingReduction { r }),
            (r, Some(p)) if r > 1 => {
                p.validate()?;
                if p.r() != r {
                    return Err(ClosedLoopError::BadSetting {
                        what: format!(
                            "reduction parameters target relative degree {}, plant has {r}",
                            p.r()
                        ),
                    });
                }
            }
            _ => {}
        }

        for (what, v, lo) in [
            ("step h", self.h, 0.0),
            ("horizon", self.t_horizon, 0.0),
            ("tol_e", self.tol_e, 0.0),
            ("divergence bound", self.divergence_bound, 0.0),
        ] {
            if !(v > lo) || !v.is_finite() {
                return Err(ClosedLoopError::BadSetting {
                    what: format!("{what} must be positive and finite, got {v}"),
                });
            }
        }
        if !(self.terminal_window > 0.0 && self.terminal_window < 1.0) {
            return Err(ClosedLoopError::BadSetting {
                what: format!("terminal window must sit in (0, 1), got {}", self.terminal_window),
            });
        }
        check_deadzone_floor(&self.reg, &self.im, &self.exo.param_box)?;
        Ok(())
    }

    /// Current value of an adjustable gain; `None` when the knob does not
    /// exist on this scenario (chain gain without a reduction).
    pub fn gain(&self, knob: GainKnob) -> Option<f64> {
        match knob {
            GainKnob::FeedbackK => Some(self.reg.k),
            GainKnob::Lambda => Some(self.reg.lambda),
            GainKnob::ChainG => self.reduction.as_ref().map(|p| p.g),
        }
    }

    /// Copy of the scenario with one gain replaced; the affected parameter
    /// set is rebuilt so its derived matrices and validity checks rerun.
    pub fn with_gain(&self, knob: GainKnob, value: f64) -> Result<Scenario, ClosedLoopError> {
        let mut out = self.clone();
        match knob {
            GainKnob::FeedbackK => {
                out.reg = RegulatorParams::new(
                    self.reg.b.clone(),
                    self.reg.lambda,
                    value,
                    self.reg.ell,
                    self.reg.q_dim,
                )?;
            }
            GainKnob::Lambda => {
                out.reg = RegulatorParams::new(
                    self.reg.b.clone(),
                    value,
                    self.reg.k,
                    self.reg.ell,
                    self.reg.q_dim,
                )?;
            }
            GainKnob::ChainG => {
                let params = self.reduction.as_ref().ok_or(ClosedLoopError::BadSetting {
                    what: "chain gain requires an active reduction".to_string(),
                })?;
                out.reduction = Some(ReductionParams::new(params.a.clone(), value)?);
            }
        }
        Ok(out)
    }

    /// Scenario whose plant is the relative-degree-one rewrite of this one,
    /// with matching initial conditions. Trajectories of the two correspond
    /// exactly under [`Scenario::map_to_reduced_state`].
    pub fn reduced_equivalent(&self) -> Result<Scenario, ClosedLoopError> {
        let params = self
            .reduction
            .as_ref()
            .ok_or(ClosedLoopError::MissingReduction { r: self.plant.r })?;
        let red = reduce_plant(&self.plant, params)?;
        let r = self.plant.r;
        let n = self.plant.n;
        let im0 = self.im.clone();
        let im_ext = Arc::new(self.im.with_tau(move |rho, w, zt| {
            let pt = AugmentedPoint {
                rho: rho.to_vec(),
                w: w.to_vec(),
                z: zt[..n].to_vec(),
            };
            im0.tau_at(&pt).as_slice().to_vec()
        }));
        let mut z0 = self.z0.clone();
        z0.extend_from_slice(&self.e0[..r - 1]);
        let e0 = vec![tilde_e(params, &self.e0)?];
        let mut out = self.clone();
        out.name = format!("{}-reduced", self.name);
        out.plant = red.plant.clone();
        out.im = im_ext;
        out.reduction = None;
        out.z0 = z0;
        out.e0 = e0;
        Ok(out)
    }

    /// Maps a stacked state of this scenario onto the state layout of
    /// [`Scenario::reduced_equivalent`]: the first r-1 error coordinates move
    /// into the inner-state block and the error block collapses to the
    /// filtered error.
    pub fn map_to_reduced_state(&self, state: &[f64]) -> Result<Vec<f64>, ClosedLoopError> {
        let params = self
            .reduction
            .as_ref()
            .ok_or(ClosedLoopError::MissingReduction { r: self.plant.r })?;
        let lay = self.layout();
        if state.len() != lay.total() {
            return Err(ClosedLoopError::BadSetting {
                what: format!("state has length {}, layout wants {}", state.len(), lay.total()),
            });
        }
        let e = &state[lay.e()];
        let mut out = Vec::with_capacity(state.len());
        out.extend_from_slice(&state[lay.rho()]);
        out.extend_from_slice(&state[lay.w()]);
        out.extend_from_slice(&state[lay.z()]);
        out.extend_from_slice(&e[..lay.r - 1]);
        out.push(tilde_e(params, e)?);
        out.extend_from_slice(&state[lay.regulator()]);
        Ok(out)
    }

    /// Degree-one view of the scenario: the plant the regulator equations act
    /// on directly (the reduced plant when r > 1, with the steady-state map
    /// extended to ignore the absorbed error chain).
    pub fn analysis_model(&self) -> Result<AnalysisModel, ClosedLoopError> {
        if self.plant.r == 1 {
            return Ok(AnalysisModel {
                plant: self.plant.clone(),
                exo: self.exo.clone(),
                im: self.im.clone(),
                reg: self.reg.clone(),
            });
        }
        let reduced = self.reduced_equivalent()?;
        Ok(AnalysisModel {
            plant: reduced.plant,
            exo: reduced.exo,
            im: reduced.im,
            reg: reduced.reg,
        })
    }
}

/// The models and gains the regulator zero dynamics and the attractor
/// analyses operate on; always relative degree one.
pub struct AnalysisModel {
    pub plant: Arc<PlantNormalForm>,
    pub exo: Arc<Exosystem>,
    pub im: Arc<ImmersionData>,
    pub reg: RegulatorParams,
}

/// One autonomous field over `[rho | w | z | e | xi | theta_hat | X]`.
///
/// The measured output fed back to the stabilizer is e_1 for a
/// relative-degree-one plant and the filtered error otherwise; the regulator
/// sees the plant only through v.
pub fn assemble_closed_loop(sc: &Scenario) -> Result<VectorField, ClosedLoopError> {
    sc.validate()?;
    let lay = sc.layout();
    let plant = sc.plant.clone();
    let exo = sc.exo.clone();
    let im = sc.im.clone();
    let reg = sc.reg.clone();
    let red = sc.reduction.clone();
    let v_gain = if sc.flip_v_sign { reg.k } else { -reg.k };

    Ok(VectorField::new(lay.total(), move |_t, x, dx| {
        let rho = &x[lay.rho()];
        let w = &x[lay.w()];
        let z = &x[lay.z()];
        let e = &x[lay.e()];

        for i in lay.rho() {
            dx[i] = 0.0;
        }
        let wdot = (exo.s)(rho, w);
        dx[lay.w()].copy_from_slice(&wdot);
        if lay.n > 0 {
            let drift = (plant.f0)(rho, w, z);
            let gain = (plant.f1)(rho, w, z, e[0]);
            for (i, slot) in lay.z().enumerate() {
                dx[slot] = drift[i] + gain[i] * e[0];
            }
        }

        let x_meas = match &red {
            None => e[0],
            Some(p) => tilde_e(p, e).unwrap_or(f64::NAN),
        };
        let v = v_gain * x_meas;
        let state = RegulatorState::from_flat(&x[lay.regulator()], lay.d, lay.q_dim);
        let u = state.xi[0] + v;

        let e_start = lay.e().start;
        for i in 0..lay.r - 1 {
            dx[e_start + i] = e[i + 1];
        }
        dx[e_start + lay.r - 1] = (plant.q)(rho, w, z, e) + u;

        match regulator_rhs(&state, v, &reg, &im) {
            Ok(dot) => dot.write_flat(&mut dx[lay.regulator()]),
            Err(_) => dx[lay.regulator()].fill(f64::NAN),
        }
    }))
}

/// Divergence stamp: first grid time at which the state sup norm crossed the
/// scenario bound.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DivergenceInfo {
    pub t: f64,
    pub sup_norm: f64,
}

/// Scalar summaries of one run, all recomputable from the trajectory.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Metrics {
    /// Sup of the max-norm per labeled block over the whole run.
    pub sup_norm: BTreeMap<String, f64>,
    /// Sup of |e|_inf over the terminal window.
    pub terminal_e_sup: f64,
    /// First grid time from which |e|_inf stays at or below tol_e.
    pub settle_time: Option<f64>,
    /// |theta_hat(T) - theta(rho)|_2 at the final sample.
    pub theta_err_terminal: f64,
    /// Total time (left-endpoint rule) the dead zone was active.
    pub deadzone_active_time: f64,
    /// No divergence and terminal error within tol_e.
    pub regulated: bool,
}

pub struct SimResult {
    pub trajectory: Trajectory,
    pub layout: StateLayout,
    pub metrics: Metrics,
    pub diverged: Option<DivergenceInfo>,
}

/// Integrates the closed loop over [0, T] on the fixed grid. A guard breach
/// ends the run early and is reported in the result, not as an error.
pub fn simulate(sc: &Scenario) -> Result<SimResult, ClosedLoopError> {
    let field = assemble_closed_loop(sc)?;
    let x0 = sc.initial_state();
    let (trajectory, breach) =
        integrate_with_guard(&field, &x0, 0.0, sc.t_horizon, sc.h, sc.divergence_bound)?;
    let layout = sc.layout();
    let diverged = breach.map(|b| DivergenceInfo { t: b.t, sup_norm: b.sup_norm });
    let metrics = compute_metrics(&trajectory, &layout, sc, diverged.is_some());
    Ok(SimResult { trajectory, layout, metrics, diverged })
}

/// Recomputes all scalar metrics from a stored trajectory.
pub fn compute_metrics(
    traj: &Trajectory,
    lay: &StateLayout,
    sc: &Scenario,
    diverged: bool,
) -> Metrics {
    let mut sup_norm = BTreeMap::new();
    for (name, range) in lay.block_ranges() {
        let mut sup = 0.0_f64;
        for state in &traj.states {
            for &v in &state[range.clone()] {
                if v.abs() > sup {
                    sup = v.abs();
                }
            }
        }
        sup_norm.insert(name.to_string(), sup);
    }

    let e_range = lay.e();
    let e_sup_at = |state: &[f64]| -> f64 {
        state[e_range.clone()].iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    };

    let t_first = *traj.times.first().unwrap_or(&0.0);
    let t_last = *traj.times.last().unwrap_or(&0.0);
    let t_cut = t_last - sc.terminal_window * (t_last - t_first);
    let mut terminal_e_sup = 0.0_f64;
    for (i, state) in traj.states.iter().enumerate() {
        if traj.times[i] >= t_cut - 1e-12 {
            terminal_e_sup = terminal_e_sup.max(e_sup_at(state));
        }
    }

    // Last excursion above tol_e decides the settling stamp.
    let mut settle_time = None;
    if !traj.states.is_empty() {
        let mut last_bad = None;
        for (i, state) in traj.states.iter().enumerate() {
            if e_sup_at(state) > sc.tol_e {
                last_bad = Some(i);
            }
        }
        settle_time = match last_bad {
            None => Some(traj.times[0]),
            Some(i) if i + 1 < traj.len() => Some(traj.times[i + 1]),
            Some(_) => None,
        };
    }

    let theta_true = sc.im.theta_at(&sc.rho);
    let theta_err_terminal = match traj.states.last() {
        Some(state) => {
            let th = &state[lay.theta_hat()];
            th.iter()
                .zip(theta_true.iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        }
        None => f64::NAN,
    };

    let th_range = lay.theta_hat();
    let mut active_samples = 0usize;
    for state in traj.states.iter().take(traj.len().saturating_sub(1)) {
        if state[th_range.clone()].iter().any(|&v| v.abs() > sc.reg.ell) {
            active_samples += 1;
        }
    }
    let deadzone_active_time = active_samples as f64 * sc.h;

    let regulated = !diverged && terminal_e_sup <= sc.tol_e;
    Metrics {
        sup_norm,
        terminal_e_sup,
        settle_time,
        theta_err_terminal,
        deadzone_active_time,
        regulated,
    }
}

/// Observer-error and parameter-error coordinates of one stacked state.
///
/// With x the measured output (e_1, or the filtered error under an active
/// reduction): theta_tilde = theta_hat - theta(rho) - beta x and
/// eta = xi - M(X)(theta_hat - theta(rho)) - K x.
pub fn diagnostic_at(state: &[f64], lay: &StateLayout, sc: &Scenario) -> (Vec<f64>, Vec<f64>) {
    let e = &state[lay.e()];
    let x_meas = match &sc.reduction {
        None => e[0],
        Some(p) => tilde_e(p, e).expect("layout guarantees the error block length"),
    };
    let reg_state = RegulatorState::from_flat(&state[lay.regulator()], lay.d, lay.q_dim);
    let theta_true = sc.im.theta_at(&sc.rho);
    let dtheta = &reg_state.theta_hat - &theta_true;
    let bta = beta(&reg_state.x_mat, reg_state.xi[0], &sc.im);
    let theta_tilde = &dtheta - &bta * x_meas;
    let eta = &reg_state.xi - m_of(&reg_state.x_mat) * &dtheta - &sc.reg.k_gain * x_meas;
    (eta.as_slice().to_vec(), theta_tilde.as_slice().to_vec())
}

/// Per-sample diagnostic coordinates of a whole run.
pub struct DiagnosticTrack {
    pub times: Vec<f64>,
    pub eta: Vec<Vec<f64>>,
    pub theta_tilde: Vec<Vec<f64>>,
}

pub fn diagnostic_coordinates(sim: &SimResult, sc: &Scenario) -> DiagnosticTrack {
    let mut eta = Vec::with_capacity(sim.trajectory.len());
    let mut theta_tilde = Vec::with_capacity(sim.trajectory.len());
    for state in &sim.trajectory.states {
        let (h, t) = diagnostic_at(state, &sim.layout, sc);
        eta.push(h);
        theta_tilde.push(t);
    }
    DiagnosticTrack { times: sim.trajectory.times.clone(), eta, theta_tilde }
}

/// Block offsets of the regulator zero-dynamics state
/// `[rho | w | z | eta | theta_tilde | X]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroDynLayout {
    pub p: usize,
    pub s_dim: usize,
    pub n: usize,
    pub d: usize,
    pub q_dim: usize,
}

impl ZeroDynLayout {
    pub fn rho(&self) -> Range<usize> {
        0..self.p
    }

    pub fn w(&self) -> Range<usize> {
        let s = self.p;
        s..s + self.s_dim
    }

    pub fn z(&self) -> Range<usize> {
        let s = self.p + self.s_dim;
        s..s + self.n
    }

    pub fn eta(&self) -> Range<usize> {
        let s = self.p + self.s_dim + self.n;
        s..s + self.d
    }

    pub fn theta_tilde(&self) -> Range<usize> {
        let s = self.p + self.s_dim + self.n + self.d;
        s..s + self.q_dim
    }

    pub fn x_mat(&self) -> Range<usize> {
        let s = self.p + self.s_dim + self.n + self.d + self.q_dim;
        s..s + (self.d - 1) * self.q_dim
    }

    pub fn total(&self) -> usize {
        self.x_mat().end
    }

    pub fn pack(
        &self,
        rho: &[f64],
        w: &[f64],
        z: &[f64],
        eta: &[f64],
        theta_tilde: &[f64],
        x_flat: &[f64],
    ) -> Vec<f64> {
        assert_eq!(rho.len(), self.p);
        assert_eq!(w.len(), self.s_dim);
        assert_eq!(z.len(), self.n);
        assert_eq!(eta.len(), self.d);
        assert_eq!(theta_tilde.len(), self.q_dim);
        assert_eq!(x_flat.len(), (self.d - 1) * self.q_dim);
        let mut out = Vec::with_capacity(self.total());
        out.extend_from_slice(rho);
        out.extend_from_slice(w);
        out.extend_from_slice(z);
        out.extend_from_slice(eta);
        out.extend_from_slice(theta_tilde);
        out.extend_from_slice(x_flat);
        out
    }
}

/// Regulator zero dynamics: the closed loop restricted to error output zero,
/// written in observer-error coordinates.
///
/// Blocks, with y = eta_1, q0 = q(rho, w, z, 0), and beta at (X, y):
/// rho frozen; w and z follow the exogenous flow; eta' = A eta - K (q0 + y)
/// + b (beta . theta_tilde) + phi(y) + Omega(y) theta(rho);
/// theta_tilde' = -beta (q0 + y) - dzv(theta_tilde + theta(rho));
/// X' = F X + G Omega(y).
pub fn assemble_regulator_zero_dynamics(
    model: &AnalysisModel,
) -> Result<(VectorField, ZeroDynLayout), ClosedLoopError> {
    if model.plant.r != 1 {
        return Err(ClosedLoopError::BadSetting {
            what: format!(
                "zero dynamics need a relative-degree-one plant, got r = {}",
                model.plant.r
            ),
        });
    }
    if model.im.d != model.reg.d || model.im.q_dim != model.reg.q_dim {
        return Err(ClosedLoopError::BadSetting {
            what: "immersion dims do not match regulator dims".to_string(),
        });
    }
    let lay = ZeroDynLayout {
        p: model.exo.p,
        s_dim: model.exo.s_dim,
        n: model.plant.n,
        d: model.reg.d,
        q_dim: model.reg.q_dim,
    };
    let plant = model.plant.clone();
    let exo = model.exo.clone();
    let im = model.im.clone();
    let reg = model.reg.clone();
    let a = crate::linalg::shift_matrix(reg.d);
    let b_vec = Vector::from_column_slice(&reg.b);

    Ok((
        VectorField::new(lay.total(), move |_t, x, dx| {
            let rho = &x[lay.rho()];
            let w = &x[lay.w()];
            let z = &x[lay.z()];
            let eta = Vector::from_column_slice(&x[lay.eta()]);
            let tt = Vector::from_column_slice(&x[lay.theta_tilde()]);
            let x_mat = crate::linalg::Matrix::from_column_slice(
                reg.d - 1,
                reg.q_dim,
                &x[lay.x_mat()],
            );

            for i in lay.rho() {
                dx[i] = 0.0;
            }
            dx[lay.w()].copy_from_slice(&(exo.s)(rho, w));
            if lay.n > 0 {
                dx[lay.z()].copy_from_slice(&(plant.f0)(rho, w, z));
            }

            let y = eta[0];
            let q0 = (plant.q)(rho, w, z, &[0.0]);
            let inner = q0 + y;
            let theta = im.theta_at(rho);
            let bta = beta(&x_mat, y, &im);
            let dz = crate::regulator::deadzone_vec(&(&tt + &theta), reg.ell);

            let eta_dot = &a * &eta - &reg.k_gain * inner
                + &b_vec * bta.dot(&tt)
                + im.phi(y)
                + im.omega(y) * &theta;
            let tt_dot = -&bta * inner - dz;
            let x_dot = &reg.f_mat * &x_mat + &reg.g_mat * im.omega(y);

            dx[lay.eta()].copy_from_slice(eta_dot.as_slice());
            dx[lay.theta_tilde()].copy_from_slice(tt_dot.as_slice());
            dx[lay.x_mat()].copy_from_slice(x_dot.as_slice());
        }),
        lay,
    ))
}
