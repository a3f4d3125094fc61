//! Analyses of the closed loop's limit structure: the steady-state filter
//! map, graph invariance, persistence of excitation, a Lyapunov monitor for
//! the regulator zero dynamics, limit-set distances, exponential-decay fits,
//! and the gain-escalation probe.

use std::fmt;

use crate::closed_loop::{
    AnalysisModel, ClosedLoopError, DivergenceInfo, GainKnob, Scenario, SimResult,
    ZeroDynLayout, diagnostic_at, simulate,
};
use crate::linalg::{complex_eigenvalues, eig_min_symmetric, expm, solve_lyapunov, LinalgError,
    Matrix, Vector};
use crate::model::{immersion_residual, zero_dynamics_field, AugmentedPoint, ModelError};
use crate::ode::{integrate, integrate_with_guard, OdeError, Trajectory, VectorField};

/// Truncation target for the steady-state filter integral.
pub const SIGMA_TAIL_TARGET: f64 = 1e-10;
/// Sup-norm ceiling for the backward flow inside sigma_map.
pub const SIGMA_EXCURSION_BOUND: f64 = 1e9;
/// Excitation threshold per unit of window length.
pub const PE_THRESHOLD_RATE: f64 = 1e-6;
/// Immersion-residual level above which a start counts as off-attractor.
pub const ATTRACTOR_RESIDUAL_TOL: f64 = 1e-6;
/// Late-growth tolerance of the escalation probe: the state sup over the
/// second half of the horizon may exceed the first-half sup by one percent.
pub const LATE_GROWTH_LIMIT: f64 = 1.01;

#[derive(Debug)]
pub enum AnalysisError {
    Linalg(LinalgError),
    Model(ModelError),
    ClosedLoop(ClosedLoopError),
    Ode(OdeError),
    NotEnoughSamples { got: usize, need: usize },
    BadParameter { what: String },
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::Linalg(e) => write!(f, "linear algebra error: {e}"),
            AnalysisError::Model(e) => write!(f, "model error: {e}"),
            AnalysisError::ClosedLoop(e) => write!(f, "closed-loop error: {e}"),
            AnalysisError::Ode(e) => write!(f, "integration error: {e}"),
            AnalysisError::NotEnoughSamples { got, need } => {
                write!(f, "not enough samples: got {got}, need {need}")
            }
            AnalysisError::BadParameter { what } => write!(f, "bad parameter: {what}"),
        }
    }
}

impl std::error::Error for AnalysisError {}

impl From<LinalgError> for AnalysisError {
    fn from(e: LinalgError) -> Self {
        AnalysisError::Linalg(e)
    }
}

impl From<ModelError> for AnalysisError {
    fn from(e: ModelError) -> Self {
        AnalysisError::Model(e)
    }
}

impl From<ClosedLoopError> for AnalysisError {
    fn from(e: ClosedLoopError) -> Self {
        AnalysisError::ClosedLoop(e)
    }
}

impl From<OdeError> for AnalysisError {
    fn from(e: OdeError) -> Self {
        AnalysisError::Ode(e)
    }
}

/// Steady-state filter value at one augmented point, with truncation data.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaOutcome {
    /// (d-1) x q_dim matrix: the filter state the attractor carries.
    pub sigma: Matrix,
    /// Backward horizon actually integrated.
    pub t_sigma: f64,
    /// Bound on the dropped tail; infinite when the backward flow was cut off.
    pub tail_bound: f64,
    /// Largest state sup norm seen along the backward flow.
    pub excursion_sup: f64,
    /// The backward flow left the excursion bound; quadrature was truncated.
    pub truncated: bool,
}

// Decay margin of the filter block: smallest |Re| over eigenvalues of F.
fn filter_decay_margin(f_mat: &Matrix) -> Result<f64, AnalysisError> {
    let eigs = complex_eigenvalues(f_mat)?;
    let mu = eigs.iter().map(|l| -l.re).fold(f64::INFINITY, f64::min);
    if !(mu > 0.0) {
        return Err(AnalysisError::BadParameter {
            what: format!("filter matrix is not a contraction, margin {mu}"),
        });
    }
    Ok(mu)
}

// Frobenius bound on Omega over its clamped argument range.
fn omega_sup(model: &AnalysisModel) -> f64 {
    let lim = model.im.y_max + 0.5;
    let mut sup = 0.0_f64;
    for i in 0..=200 {
        let y = -lim + i as f64 * (2.0 * lim / 200.0);
        sup = sup.max(model.im.omega(y).norm());
    }
    sup
}

// Coefficient and margin of the tail bound coeff * exp(-mu t) / mu.
fn sigma_tail_data(model: &AnalysisModel) -> Result<(f64, f64), AnalysisError> {
    let mu = filter_decay_margin(&model.reg.f_mat)?;
    let coeff = model.reg.g_mat.norm() * omega_sup(model);
    Ok((coeff, mu))
}

/// Steady-state filter map: the unique bounded solution of the filter
/// equation along the backward flow through `pt`, evaluated by trapezoid
/// quadrature of `e^{F u} G Omega(tau_1)` over the backward trajectory.
///
/// The default horizon makes the truncation tail at most [`SIGMA_TAIL_TARGET`].
/// A backward flow that leaves [`SIGMA_EXCURSION_BOUND`] (possible off the
/// attractor) truncates the quadrature; the result is still returned, flagged,
/// with an infinite tail bound.
pub fn sigma_map(
    model: &AnalysisModel,
    pt: &AugmentedPoint,
    h: f64,
    t_sigma: Option<f64>,
) -> Result<SigmaOutcome, AnalysisError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(AnalysisError::BadParameter { what: format!("step must be positive, got {h}") });
    }
    let (coeff, mu) = sigma_tail_data(model)?;
    let horizon = match t_sigma {
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(t) => {
            return Err(AnalysisError::BadParameter {
                what: format!("backward horizon must be positive, got {t}"),
            })
        }
        None => {
            if coeff > 0.0 {
                ((coeff / (mu * SIGMA_TAIL_TARGET)).ln() / mu).max(1.0)
            } else {
                1.0
            }
        }
    };

    let forward = zero_dynamics_field(&model.plant, &model.exo);
    let backward = VectorField::new(
        model.exo.p + model.exo.s_dim + model.plant.n,
        move |_t, x, dx| {
            forward.eval(0.0, x, dx);
            for v in dx.iter_mut() {
                *v = -*v;
            }
        },
    );
    let (traj, breach) =
        integrate_with_guard(&backward, &pt.flatten(), 0.0, horizon, h, SIGMA_EXCURSION_BOUND)?;

    let m = model.reg.d - 1;
    let q = model.reg.q_dim;
    let step_decay = expm(&(&model.reg.f_mat * h));
    let mut weight = Matrix::identity(m, m);
    let mut sigma = Matrix::zeros(m, q);
    let last = traj.len() - 1;
    let mut excursion_sup = 0.0_f64;
    for (k, state) in traj.states.iter().enumerate() {
        excursion_sup =
            excursion_sup.max(state.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs())));
        let pt_k = AugmentedPoint::unflatten(state, model.exo.p, model.exo.s_dim, model.plant.n);
        let y = model.im.tau_at(&pt_k)[0];
        let integrand = &weight * &model.reg.g_mat * model.im.omega(y);
        let w = if k == 0 || k == last { 0.5 } else { 1.0 };
        sigma += integrand * (w * h);
        if k != last {
            weight *= &step_decay;
        }
    }

    let truncated = breach.is_some();
    let t_used = last as f64 * h;
    let tail_bound = if truncated {
        f64::INFINITY
    } else {
        coeff * (-mu * t_used).exp() / mu
    };
    Ok(SigmaOutcome { sigma, t_sigma: t_used, tail_bound, excursion_sup, truncated })
}

// Field over [rho | w | z | X_1 .. X_copies]: the zero dynamics carrying
// one or more filter copies driven by the same output.
fn graph_flow_field(model: &AnalysisModel, copies: usize) -> VectorField {
    let zd = zero_dynamics_field(&model.plant, &model.exo);
    let p = model.exo.p;
    let s_dim = model.exo.s_dim;
    let n = model.plant.n;
    let dim_z = p + s_dim + n;
    let m = model.reg.d - 1;
    let q = model.reg.q_dim;
    let im = model.im.clone();
    let f_mat = model.reg.f_mat.clone();
    let g_mat = model.reg.g_mat.clone();
    VectorField::new(dim_z + copies * m * q, move |_t, x, dx| {
        zd.eval(0.0, &x[..dim_z], &mut dx[..dim_z]);
        let pt = AugmentedPoint::unflatten(&x[..dim_z], p, s_dim, n);
        let y = im.tau_at(&pt)[0];
        let forcing = &g_mat * im.omega(y);
        for c in 0..copies {
            let lo = dim_z + c * m * q;
            let block = Matrix::from_column_slice(m, q, &x[lo..lo + m * q]);
            let dot = &f_mat * block + &forcing;
            dx[lo..lo + m * q].copy_from_slice(dot.as_slice());
        }
    })
}

/// Invariance check of the steady-state filter graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInvarianceReport {
    /// Max deviation of the filter state from the graph when started on it.
    pub max_deviation: f64,
    /// Max deviation of a perturbed start from the explicit contraction
    /// formula: offset entries decay through e^{F t}.
    pub max_formula_deviation: f64,
    /// Tail bound of the sigma evaluations entering the check.
    pub sigma_tail_bound: f64,
    pub checks: usize,
}

const GRAPH_CHECKS: usize = 101;
const GRAPH_PERTURBATION: f64 = 1.0;

/// Integrates the zero dynamics with two filter copies: one started on the
/// graph (stays there), one offset by one in every entry (closes onto the
/// graph along e^{F t}). Deviations are measured against independently
/// quadratured sigma values at spot-check times.
pub fn verify_graph_invariance(
    model: &AnalysisModel,
    pt: &AugmentedPoint,
    t: f64,
    h: f64,
) -> Result<GraphInvarianceReport, AnalysisError> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(AnalysisError::BadParameter { what: format!("horizon must be positive, got {t}") });
    }
    let base = sigma_map(model, pt, h, None)?;
    let m = model.reg.d - 1;
    let q = model.reg.q_dim;
    let dim_z = model.exo.p + model.exo.s_dim + model.plant.n;

    let mut x0 = pt.flatten();
    x0.extend_from_slice(base.sigma.as_slice());
    for &v in base.sigma.as_slice() {
        x0.push(v + GRAPH_PERTURBATION);
    }
    let field = graph_flow_field(model, 2);
    let traj = integrate(&field, &x0, 0.0, t, h)?;

    let last = traj.len() - 1;
    let mut max_deviation = 0.0_f64;
    let mut max_formula_deviation = 0.0_f64;
    let mut sigma_tail_bound = base.tail_bound;
    let mut checks = 0usize;
    let mut prev_idx = usize::MAX;
    for j in 0..GRAPH_CHECKS {
        let idx = (j as f64 / (GRAPH_CHECKS - 1) as f64 * last as f64).round() as usize;
        if idx == prev_idx {
            continue;
        }
        prev_idx = idx;
        let state = &traj.states[idx];
        let pt_j = AugmentedPoint::unflatten(&state[..dim_z], model.exo.p, model.exo.s_dim,
            model.plant.n);
        let here = sigma_map(model, &pt_j, h, None)?;
        sigma_tail_bound = sigma_tail_bound.max(here.tail_bound);

        let on_graph = Matrix::from_column_slice(m, q, &state[dim_z..dim_z + m * q]);
        max_deviation = max_deviation.max((&on_graph - &here.sigma).abs().max());

        let offset = Matrix::from_column_slice(m, q, &state[dim_z + m * q..]);
        let decay = expm(&(&model.reg.f_mat * traj.times[idx]));
        let ones = Matrix::from_element(m, q, GRAPH_PERTURBATION);
        let predicted = &decay * ones + &here.sigma;
        max_formula_deviation = max_formula_deviation.max((&offset - &predicted).abs().max());
        checks += 1;
    }

    Ok(GraphInvarianceReport { max_deviation, max_formula_deviation, sigma_tail_bound, checks })
}

/// Excitation test along the attractor through `pt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PEReport {
    pub window: (f64, f64),
    pub gram: Matrix,
    pub min_eig: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Integrates the regressor along the attractor trajectory and forms the
/// windowed Gram matrix by trapezoid quadrature. The regressor is the first
/// filter row plus the first Omega row, with the filter started on the
/// steady-state graph; pass requires the smallest eigenvalue to clear
/// [`PE_THRESHOLD_RATE`] per unit window.
pub fn pe_gram(
    model: &AnalysisModel,
    pt: &AugmentedPoint,
    window: f64,
    h: f64,
) -> Result<PEReport, AnalysisError> {
    if !(window > 0.0) || !window.is_finite() {
        return Err(AnalysisError::BadParameter {
            what: format!("window must be positive, got {window}"),
        });
    }
    let base = sigma_map(model, pt, h, None)?;
    let m = model.reg.d - 1;
    let q = model.reg.q_dim;
    let dim_z = model.exo.p + model.exo.s_dim + model.plant.n;

    let mut x0 = pt.flatten();
    x0.extend_from_slice(base.sigma.as_slice());
    let field = graph_flow_field(model, 1);
    let traj = integrate(&field, &x0, 0.0, window, h)?;

    let last = traj.len() - 1;
    let mut gram = Matrix::zeros(q, q);
    for (k, state) in traj.states.iter().enumerate() {
        let pt_k = AugmentedPoint::unflatten(&state[..dim_z], model.exo.p, model.exo.s_dim,
            model.plant.n);
        let y = model.im.tau_at(&pt_k)[0];
        let om = model.im.omega(y);
        let mut phi = Vector::zeros(q);
        for j in 0..q {
            phi[j] = state[dim_z + j * m] + om[(0, j)];
        }
        let w = if k == 0 || k == last { 0.5 } else { 1.0 };
        gram += &phi * phi.transpose() * (w * h);
    }
    gram = (&gram + gram.transpose()) * 0.5;

    let t_end = *traj.times.last().expect("trajectory has at least one sample");
    let min_eig = eig_min_symmetric(&gram)?;
    let threshold = PE_THRESHOLD_RATE * t_end;
    Ok(PEReport { window: (0.0, t_end), gram, min_eig, threshold, pass: min_eig > threshold })
}

/// Lyapunov samples along a regulator zero-dynamics trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    pub times: Vec<f64>,
    pub v: Vec<f64>,
    /// Max over consecutive samples of V(t+h) - V(t).
    pub max_increment: f64,
    /// Immersion residual at the initial augmented point.
    pub initial_residual: f64,
    /// Monotonicity is only claimed on the attractor; set when the start has
    /// a residual above [`ATTRACTOR_RESIDUAL_TOL`].
    pub off_attractor: bool,
}

/// Evaluates V = chi_1^2 + zeta' P zeta + |theta_tilde|^2 along a
/// zero-dynamics run, with chi the observer error relative to the
/// steady-state generator, zeta its filtered tail, and P the Lyapunov
/// solution for the filter matrix.
pub fn lyapunov_monitor(
    traj: &Trajectory,
    lay: &ZeroDynLayout,
    model: &AnalysisModel,
) -> Result<LyapunovReport, AnalysisError> {
    if traj.is_empty() {
        return Err(AnalysisError::NotEnoughSamples { got: 0, need: 1 });
    }
    let p_mat = solve_lyapunov(&model.reg.f_mat)?;
    let d = model.reg.d;
    let b_hat = Vector::from_fn(d - 1, |i, _| -model.reg.b[i + 1]);

    let first = AugmentedPoint {
        rho: traj.states[0][lay.rho()].to_vec(),
        w: traj.states[0][lay.w()].to_vec(),
        z: traj.states[0][lay.z()].to_vec(),
    };
    let (res_ode, res_out) =
        immersion_residual(&model.im, &model.plant, &model.exo, &first, 1e-5)?;
    let initial_residual = res_ode
        .iter()
        .fold(res_out.abs(), |acc, &v| acc.max(v.abs()));
    let off_attractor = initial_residual > ATTRACTOR_RESIDUAL_TOL;

    let mut v_vals = Vec::with_capacity(traj.len());
    for state in &traj.states {
        let pt = AugmentedPoint {
            rho: state[lay.rho()].to_vec(),
            w: state[lay.w()].to_vec(),
            z: state[lay.z()].to_vec(),
        };
        let tau = model.im.tau_at(&pt);
        let eta = Vector::from_column_slice(&state[lay.eta()]);
        let chi = eta - tau;
        let chi1 = chi[0];
        let zeta = Vector::from_fn(d - 1, |i, _| b_hat[i] * chi1 + chi[i + 1]);
        let tt = &state[lay.theta_tilde()];
        let v = chi1 * chi1
            + (zeta.transpose() * &p_mat * &zeta)[(0, 0)]
            + tt.iter().map(|&x| x * x).sum::<f64>();
        v_vals.push(v);
    }

    let max_increment = v_vals
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LyapunovReport {
        times: traj.times.clone(),
        v: v_vals,
        max_increment,
        initial_residual,
        off_attractor,
    })
}

/// Distances of the run's diagnostic coordinates to the steady-state graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTrack {
    pub times: Vec<f64>,
    pub dist: Vec<f64>,
}

/// Euclidean distance of (eta, theta_tilde, X) to the graph point
/// (tau(z), 0, sigma(z)) anchored at the simulator's known augmented state,
/// evaluated on at most `max_samples` evenly spaced samples (sigma costs one
/// backward quadrature per sample).
pub fn limit_set_distance(
    sim: &SimResult,
    sc: &Scenario,
    max_samples: usize,
) -> Result<DistanceTrack, AnalysisError> {
    if max_samples < 2 {
        return Err(AnalysisError::BadParameter {
            what: format!("need at least 2 samples, got {max_samples}"),
        });
    }
    let model = sc.analysis_model()?;
    let lay = sim.layout;
    let len = sim.trajectory.len();
    if len == 0 {
        return Err(AnalysisError::NotEnoughSamples { got: 0, need: 1 });
    }

    let count = max_samples.min(len);
    let mut times = Vec::with_capacity(count);
    let mut dist = Vec::with_capacity(count);
    let mut prev_idx = usize::MAX;
    for j in 0..count {
        let idx = if count == 1 {
            0
        } else {
            (j as f64 / (count - 1) as f64 * (len - 1) as f64).round() as usize
        };
        if idx == prev_idx {
            continue;
        }
        prev_idx = idx;
        let state = &sim.trajectory.states[idx];
        let (eta, tt) = diagnostic_at(state, &lay, sc);

        // The degree-one inner state absorbs the leading error chain.
        let mut z_red = state[lay.z()].to_vec();
        let e = &state[lay.e()];
        z_red.extend_from_slice(&e[..lay.r - 1]);
        let pt = AugmentedPoint {
            rho: state[lay.rho()].to_vec(),
            w: state[lay.w()].to_vec(),
            z: z_red,
        };

        let tau = model.im.tau_at(&pt);
        let sigma = sigma_map(&model, &pt, sc.h, None)?.sigma;
        let x_here = &state[lay.x_mat()];

        let mut acc = 0.0_f64;
        for i in 0..eta.len() {
            let dv = eta[i] - tau[i];
            acc += dv * dv;
        }
        for &v in &tt {
            acc += v * v;
        }
        for (a, b) in x_here.iter().zip(sigma.as_slice().iter()) {
            let dv = a - b;
            acc += dv * dv;
        }
        times.push(sim.trajectory.times[idx]);
        dist.push(acc.sqrt());
    }
    Ok(DistanceTrack { times, dist })
}

/// Log-linear fit of a distance tail.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    /// Decay rate: distances shrink like prefactor * exp(-rate * t).
    pub rate: f64,
    /// Fitted line extrapolated to t = 0.
    pub prefactor: f64,
    /// Root-mean-square log residual of the fit window.
    pub rmse: f64,
    pub samples_used: usize,
}

/// Least squares on (t, log distance) after dropping the leading
/// `skip_fraction` of the time span; distances are clamped at 1e-14 so a
/// converged tail cannot produce infinities.
pub fn fit_exponential_decay(
    times: &[f64],
    dist: &[f64],
    skip_fraction: f64,
) -> Result<DecayFit, AnalysisError> {
    if times.len() != dist.len() {
        return Err(AnalysisError::BadParameter {
            what: format!("length mismatch: {} times, {} distances", times.len(), dist.len()),
        });
    }
    if !(0.0..1.0).contains(&skip_fraction) {
        return Err(AnalysisError::BadParameter {
            what: format!("skip fraction must sit in [0, 1), got {skip_fraction}"),
        });
    }
    if times.is_empty() {
        return Err(AnalysisError::NotEnoughSamples { got: 0, need: 10 });
    }
    let t0 = times[0];
    let t_end = *times.last().expect("nonempty");
    let cut = t0 + skip_fraction * (t_end - t0);

    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (&t, &d) in times.iter().zip(dist.iter()) {
        if t >= cut - 1e-12 {
            ts.push(t);
            ys.push(d.max(1e-14).ln());
        }
    }
    if ts.len() < 10 {
        return Err(AnalysisError::NotEnoughSamples { got: ts.len(), need: 10 });
    }

    let nf = ts.len() as f64;
    let mean_t = ts.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (&t, &y) in ts.iter().zip(ys.iter()) {
        cov += (t - mean_t) * (y - mean_y);
        var += (t - mean_t) * (t - mean_t);
    }
    if var <= 0.0 {
        return Err(AnalysisError::BadParameter {
            what: "fit window has no time spread".to_string(),
        });
    }
    let slope = cov / var;
    let intercept = mean_y - slope * mean_t;
    let mut sq = 0.0;
    for (&t, &y) in ts.iter().zip(ys.iter()) {
        let r = y - (intercept + slope * t);
        sq += r * r;
    }
    Ok(DecayFit {
        rate: -slope,
        prefactor: intercept.exp(),
        rmse: (sq / nf).sqrt(),
        samples_used: ts.len(),
    })
}

/// One rung of the escalation ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrial {
    pub gain: f64,
    pub regulated: bool,
    pub diverged: Option<DivergenceInfo>,
    pub terminal_e_sup: f64,
    /// State sup over the second half of the horizon relative to the first.
    pub late_growth_ratio: f64,
    pub pass: bool,
}

/// Escalation result: the trial ladder up to the first passing gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub knob: GainKnob,
    pub floor: f64,
    pub max_doublings: usize,
    pub trials: Vec<ProbeTrial>,
    pub passing_gain: Option<f64>,
    pub exhausted: bool,
    /// Divergence stamp of the last diverging trial, if any.
    pub last_divergence_time: Option<f64>,
}

fn probe_threads() -> usize {
    if let Ok(raw) = std::env::var("REGULIB_THREADS") {
        if let Ok(v) = raw.trim().parse::<usize>() {
            return v.clamp(1, 16);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}

fn probe_trial(template: &Scenario, knob: GainKnob, gain: f64) -> Result<ProbeTrial, AnalysisError> {
    let sc = template.with_gain(knob, gain)?;
    let sim = simulate(&sc)?;

    let times = &sim.trajectory.times;
    let t_mid = 0.5 * (times[0] + times[times.len() - 1]);
    let mut sup_early = 0.0_f64;
    let mut sup_late = 0.0_f64;
    for (i, state) in sim.trajectory.states.iter().enumerate() {
        let s = state.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
        if times[i] <= t_mid {
            sup_early = sup_early.max(s);
        }
        if times[i] >= t_mid {
            sup_late = sup_late.max(s);
        }
    }
    let late_growth_ratio = if sup_early > 0.0 {
        sup_late / sup_early
    } else if sup_late > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };

    let pass =
        sim.metrics.regulated && sim.diverged.is_none() && late_growth_ratio <= LATE_GROWTH_LIMIT;
    Ok(ProbeTrial {
        gain,
        regulated: sim.metrics.regulated,
        diverged: sim.diverged,
        terminal_e_sup: sim.metrics.terminal_e_sup,
        late_growth_ratio,
        pass,
    })
}

/// Doubles a gain from `floor` until the closed loop is bounded and
/// regulating, or the ladder is exhausted. Each trial is an independent
/// restart of the template scenario. Rungs past the first passing gain are
/// never reported, so the report does not depend on how many trials ran
/// speculatively in parallel (`REGULIB_THREADS` caps the workers).
pub fn small_gain_probe(
    template: &Scenario,
    knob: GainKnob,
    floor: f64,
    max_doublings: usize,
) -> Result<ProbeReport, AnalysisError> {
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(AnalysisError::BadParameter {
            what: format!("floor must be positive, got {floor}"),
        });
    }
    if max_doublings < 1 {
        return Err(AnalysisError::BadParameter {
            what: "need at least one doubling".to_string(),
        });
    }
    if template.gain(knob).is_none() {
        return Err(AnalysisError::BadParameter {
            what: format!("gain {} does not exist on this scenario", knob.as_str()),
        });
    }

    let gains: Vec<f64> = (0..=max_doublings).map(|i| floor * (1u64 << i) as f64).collect();
    let workers = probe_threads().min(gains.len());
    let mut trials: Vec<ProbeTrial> = Vec::new();
    let mut found = false;

    let mut next = 0usize;
    while next < gains.len() && !found {
        let chunk_end = (next + workers).min(gains.len());
        let chunk = &gains[next..chunk_end];
        let results: Vec<Result<ProbeTrial, AnalysisError>> = if workers == 1 {
            chunk.iter().map(|&g| probe_trial(template, knob, g)).collect()
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&g| scope.spawn(move || probe_trial(template, knob, g)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("probe worker panicked")).collect()
            })
        };
        for res in results {
            let trial = res?;
            let pass = trial.pass;
            trials.push(trial);
            if pass {
                found = true;
                break;
            }
        }
        next = chunk_end;
    }

    let passing_gain = trials.iter().find(|t| t.pass).map(|t| t.gain);
    let last_divergence_time =
        trials.iter().rev().find_map(|t| t.diverged.as_ref().map(|d| d.t));
    Ok(ProbeReport {
        knob,
        floor,
        max_doublings,
        trials,
        passing_gain,
        exhausted: passing_gain.is_none(),
        last_divergence_time,
    })
}
