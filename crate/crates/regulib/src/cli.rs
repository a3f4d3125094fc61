//! Command-line front end: scenario configs with overrides, simulation runs
//! emitting CSV and JSON, the gain-escalation probe, and the structural
//! check suite. Outputs are byte-deterministic for a fixed config and
//! tool version.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

use crate::analysis::{
    fit_exponential_decay, limit_set_distance, pe_gram, sigma_map, small_gain_probe,
    verify_graph_invariance, AnalysisError, GraphInvarianceReport, LyapunovReport, PEReport,
    ProbeReport, lyapunov_monitor,
};
use crate::closed_loop::{
    assemble_regulator_zero_dynamics, simulate, ClosedLoopError, GainKnob, Scenario, SimResult,
};
use crate::model::{attractor_sample_bounded, immersion_residual, AugmentedPoint};
use crate::ode::integrate;
use crate::reduction::ReductionParams;
use crate::regulator::{verify_mato_transform, RegulatorParams};
use crate::scenarios;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_EXHAUSTED: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

/// Window for the attractor-anchored analyses (excitation, graph).
const ANALYSIS_WINDOW: f64 = 20.0;
/// Horizon of the Lyapunov monitor run.
const LYAPUNOV_HORIZON: f64 = 100.0;
/// Samples kept by the limit-set distance track.
const DISTANCE_SAMPLES: usize = 200;
/// Leading fraction dropped by the decay fit.
const DECAY_SKIP: f64 = 0.3;
/// Burn-in horizon for attractor sampling in the check suite.
const VERIFY_BURN_IN: f64 = 30.0;
const MATO_TRIALS: usize = 50;
const MATO_TOL: f64 = 1e-12;
const IMMERSION_SAMPLES: usize = 100;
const IMMERSION_FD_STEP: f64 = 1e-5;
const IMMERSION_TOL: f64 = 1e-6;
const GRAPH_TOL: f64 = 1e-6;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Io(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ClosedLoopError> for CliError {
    fn from(e: ClosedLoopError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// One flat config document. The file, each `--set` fragment, and the
/// dedicated flags all deserialize into this shape and overlay each other
/// in that order; unknown keys are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: Option<String>,
    pub out: Option<String>,
    pub analyses: Option<Vec<String>>,
    pub k: Option<f64>,
    pub lambda: Option<f64>,
    pub ell: Option<f64>,
    pub b: Option<Vec<f64>>,
    pub g: Option<f64>,
    pub a: Option<Vec<f64>>,
    pub rho: Option<Vec<f64>>,
    pub w0: Option<Vec<f64>>,
    pub z0: Option<Vec<f64>>,
    pub e0: Option<Vec<f64>>,
    pub xi0: Option<Vec<f64>>,
    pub theta_hat0: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub t_horizon: Option<f64>,
    pub h: Option<f64>,
    pub seed: Option<u64>,
    pub tol_e: Option<f64>,
    pub terminal_window: Option<f64>,
    pub divergence_bound: Option<f64>,
    pub flip_v_sign: Option<bool>,
}

macro_rules! overlay_fields {
    ($dst:expr, $src:expr, $($field:ident),+ $(,)?) => {
        $(if $src.$field.is_some() { $dst.$field = $src.$field; })+
    };
}

/// Parses one override document and overlays it onto `base`.
pub fn overlay_fragment(base: &RunConfig, text: &str) -> Result<RunConfig, CliError> {
    let frag: RunConfig = toml::from_str(text)
        .map_err(|e| CliError::Config(format!("override {text:?}: {e}")))?;
    let mut cfg = base.clone();
    cfg.overlay(frag);
    Ok(cfg)
}

impl RunConfig {
    /// Later documents win field by field.
    pub fn overlay(&mut self, other: RunConfig) {
        overlay_fields!(
            self, other, scenario, out, analyses, k, lambda, ell, b, g, a, rho, w0, z0, e0,
            xi0, theta_hat0, x0, t_horizon, h, seed, tol_e, terminal_window, divergence_bound,
            flip_v_sign,
        );
    }
}

#[derive(Parser, Debug)]
#[command(name = "regulib", version, about = "Adaptive regulator synthesis, simulation, and structural checks")]
pub struct CliArgs {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a scenario; writes trajectory.csv and summary.json.
    Run {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Double one gain from a floor until the loop settles; writes probe.json.
    Probe {
        /// Gain to escalate: k, lambda, or g.
        knob: String,
        /// Starting value; defaults per knob (k 0.01, lambda 1, g 2).
        #[arg(long)]
        floor: Option<f64>,
        /// Ladder length cap.
        #[arg(long, default_value_t = 11)]
        max_doublings: usize,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the structural check suite; writes verify.json.
    Verify {
        #[command(flatten)]
        common: CommonOpts,
    },
}

#[derive(Args, Debug)]
pub struct CommonOpts {
    /// Scenario key from the built-in registry.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Config file (TOML); flags and --set fragments override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Inline override, e.g. --set k=2.0 (repeatable, later wins).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory for result files (default: current directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated analyses: pe, graph, limit_set, decay, lyapunov.
    #[arg(long, value_delimiter = ',')]
    pub analyses: Option<Vec<String>>,
}

/// Entry point behind the binary: parses argv, dispatches, maps errors to
/// the config exit code with a message on stderr.
pub fn main() -> i32 {
    let args = CliArgs::parse();
    match dispatch(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

pub fn dispatch(args: CliArgs) -> Result<i32, CliError> {
    match args.cmd {
        Command::Run { common } => cmd_run(&merged_config(&common)?),
        Command::Probe { knob, floor, max_doublings, common } => {
            cmd_probe(&merged_config(&common)?, &knob, floor, max_doublings)
        }
        Command::Verify { common } => cmd_verify(&merged_config(&common)?),
    }
}

/// Overlay order: config file, then each --set fragment, then dedicated flags.
pub fn merged_config(common: &CommonOpts) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        let file_cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        cfg.overlay(file_cfg);
    }
    for frag in &common.set {
        let frag_cfg: RunConfig = toml::from_str(frag)
            .map_err(|e| CliError::Config(format!("--set {frag}: {e}")))?;
        cfg.overlay(frag_cfg);
    }
    if common.scenario.is_some() {
        cfg.scenario = common.scenario.clone();
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.display().to_string());
    }
    if common.analyses.is_some() {
        cfg.analyses = common.analyses.clone();
    }
    Ok(cfg)
}

/// Resolves the registry key and applies overrides; the result is validated,
/// so a non-Hurwitz filter polynomial or an out-of-set initial condition
/// surfaces here as a config error.
pub fn build_scenario(cfg: &RunConfig) -> Result<Scenario, CliError> {
    let name = cfg.scenario.as_deref().ok_or_else(|| {
        CliError::Config("no scenario selected; pass --scenario or set it in the config".into())
    })?;
    let named = scenarios::by_name(name).ok_or_else(|| {
        let known: Vec<&str> = scenarios::registry().iter().map(|s| s.name).collect();
        CliError::Config(format!("unknown scenario {name:?}; known: {}", known.join(", ")))
    })?;
    let mut sc = named.build();

    if cfg.k.is_some() || cfg.lambda.is_some() || cfg.ell.is_some() || cfg.b.is_some() {
        let b = cfg.b.clone().unwrap_or_else(|| sc.reg.b.clone());
        let lambda = cfg.lambda.unwrap_or(sc.reg.lambda);
        let k = cfg.k.unwrap_or(sc.reg.k);
        let ell = cfg.ell.unwrap_or(sc.reg.ell);
        sc.reg = RegulatorParams::new(b, lambda, k, ell, sc.reg.q_dim)
            .map_err(|e| CliError::Config(format!("regulator override: {e}")))?;
    }
    if cfg.g.is_some() || cfg.a.is_some() {
        let current = sc.reduction.as_ref().ok_or_else(|| {
            CliError::Config(format!(
                "scenario {name} has no error-chain reduction; g and a do not apply"
            ))
        })?;
        let a = cfg.a.clone().unwrap_or_else(|| current.a.clone());
        let g = cfg.g.unwrap_or(current.g);
        sc.reduction = Some(
            ReductionParams::new(a, g)
                .map_err(|e| CliError::Config(format!("reduction override: {e}")))?,
        );
    }
    if let Some(v) = &cfg.rho {
        sc.rho = v.clone();
    }
    if let Some(v) = &cfg.w0 {
        sc.w0 = v.clone();
    }
    if let Some(v) = &cfg.z0 {
        sc.z0 = v.clone();
    }
    if let Some(v) = &cfg.e0 {
        sc.e0 = v.clone();
    }
    if let Some(v) = &cfg.xi0 {
        sc.xi0 = v.clone();
    }
    if let Some(v) = &cfg.theta_hat0 {
        sc.theta_hat0 = v.clone();
    }
    if let Some(v) = &cfg.x0 {
        sc.x0 = v.clone();
    }
    if let Some(v) = cfg.t_horizon {
        sc.t_horizon = v;
    }
    if let Some(v) = cfg.h {
        sc.h = v;
    }
    if let Some(v) = cfg.seed {
        sc.seed = v;
    }
    if let Some(v) = cfg.tol_e {
        sc.tol_e = v;
    }
    if let Some(v) = cfg.terminal_window {
        sc.terminal_window = v;
    }
    if let Some(v) = cfg.divergence_bound {
        sc.divergence_bound = v;
    }
    if let Some(v) = cfg.flip_v_sign {
        sc.flip_v_sign = v;
    }

    sc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(sc)
}

/// Report blocks a completed run can attach to its summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisKind {
    Pe,
    Graph,
    LimitSet,
    Decay,
    Lyapunov,
}

/// Name list to analysis kinds, deduplicated, order preserved.
pub fn parse_analyses(list: &[String]) -> Result<Vec<AnalysisKind>, CliError> {
    let mut out = Vec::new();
    for raw in list {
        let kind = match raw.trim() {
            "pe" => AnalysisKind::Pe,
            "graph" => AnalysisKind::Graph,
            "limit_set" => AnalysisKind::LimitSet,
            "decay" => AnalysisKind::Decay,
            "lyapunov" => AnalysisKind::Lyapunov,
            other => {
                return Err(CliError::Config(format!(
                    "unknown analysis {other:?}; known: pe, graph, limit_set, decay, lyapunov"
                )))
            }
        };
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    Ok(out)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(cfg.out.clone().unwrap_or_else(|| ".".to_string()))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn json_text(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json serialization cannot fail");
    s.push('\n');
    s
}

/// Effective parameters after defaults and overrides; a run is reproducible
/// from this echo alone.
pub fn parameter_echo(sc: &Scenario) -> serde_json::Value {
    json!({
        "rho": sc.rho,
        "w0": sc.w0,
        "z0": sc.z0,
        "e0": sc.e0,
        "xi0": sc.xi0,
        "theta_hat0": sc.theta_hat0,
        "x0": sc.x0,
        "t_horizon": sc.t_horizon,
        "h": sc.h,
        "seed": sc.seed,
        "tol_e": sc.tol_e,
        "terminal_window": sc.terminal_window,
        "divergence_bound": sc.divergence_bound,
        "flip_v_sign": sc.flip_v_sign,
        "k": sc.reg.k,
        "lambda": sc.reg.lambda,
        "ell": sc.reg.ell,
        "b": sc.reg.b,
        "d": sc.reg.d,
        "q_dim": sc.reg.q_dim,
        "reduction": sc.reduction.as_ref().map(|r| json!({ "a": r.a, "g": r.g })),
    })
}

fn write_trajectory_csv(path: &Path, sim: &SimResult) -> Result<(), CliError> {
    let labels = sim.layout.labels();
    let mut buf = String::with_capacity((sim.trajectory.len() + 1) * (labels.len() + 1) * 26);
    buf.push('t');
    for label in &labels {
        buf.push(',');
        buf.push_str(label);
    }
    buf.push('\n');
    for (t, state) in sim.trajectory.times.iter().zip(&sim.trajectory.states) {
        write!(buf, "{t:.16e}").expect("string write");
        for v in state {
            write!(buf, ",{v:.16e}").expect("string write");
        }
        buf.push('\n');
    }
    write_text(path, &buf)
}

/// Augmented point the attractor analyses anchor at: the run's terminal
/// exogenous and inner state, with the leading error chain folded into the
/// inner state when the plant was reduced.
fn terminal_anchor(sim: &SimResult) -> AugmentedPoint {
    let lay = sim.layout;
    let last = sim.trajectory.last_state();
    let mut z = last[lay.z()].to_vec();
    z.extend_from_slice(&last[lay.e()][..lay.r - 1]);
    AugmentedPoint { rho: last[lay.rho()].to_vec(), w: last[lay.w()].to_vec(), z }
}

fn pe_json(report: &PEReport) -> serde_json::Value {
    let gram: Vec<Vec<f64>> = (0..report.gram.nrows())
        .map(|i| (0..report.gram.ncols()).map(|j| report.gram[(i, j)]).collect())
        .collect();
    json!({
        "window": [report.window.0, report.window.1],
        "gram": gram,
        "min_eig": report.min_eig,
        "threshold": report.threshold,
        "pass": report.pass,
    })
}

fn graph_json(report: &GraphInvarianceReport) -> serde_json::Value {
    json!({
        "max_deviation": report.max_deviation,
        "max_formula_deviation": report.max_formula_deviation,
        "sigma_tail_bound": report.sigma_tail_bound,
        "checks": report.checks,
    })
}

fn lyapunov_json(report: &LyapunovReport) -> serde_json::Value {
    json!({
        "max_increment": report.max_increment,
        "initial_residual": report.initial_residual,
        "off_attractor": report.off_attractor,
        "v_first": report.v.first().copied(),
        "v_last": report.v.last().copied(),
        "samples": report.v.len(),
    })
}

fn probe_json(report: &ProbeReport) -> serde_json::Value {
    let trials: Vec<serde_json::Value> = report
        .trials
        .iter()
        .map(|t| {
            json!({
                "gain": t.gain,
                "regulated": t.regulated,
                "diverged": t.diverged.as_ref().map(|d| json!({ "t": d.t, "sup_norm": d.sup_norm })),
                "terminal_e_sup": t.terminal_e_sup,
                "late_growth_ratio": t.late_growth_ratio,
                "pass": t.pass,
            })
        })
        .collect();
    json!({
        "knob": report.knob.as_str(),
        "floor": report.floor,
        "max_doublings": report.max_doublings,
        "trials": trials,
        "passing_gain": report.passing_gain,
        "exhausted": report.exhausted,
        "last_divergence_time": report.last_divergence_time,
    })
}

/// Lyapunov monitor run: the regulator zero dynamics started on the
/// attractor anchor with a standard kick (first observer-error component
/// 0.1, parameter error 0.5 in every component, filter on the graph).
fn run_lyapunov(sc: &Scenario, anchor: &AugmentedPoint) -> Result<LyapunovReport, CliError> {
    let model = sc.analysis_model()?;
    let (field, lay) = assemble_regulator_zero_dynamics(&model)?;
    let tau = model.im.tau_at(anchor);
    let mut eta: Vec<f64> = tau.as_slice().to_vec();
    eta[0] += 0.1;
    let sigma = sigma_map(&model, anchor, sc.h, None)?;
    let tt = vec![0.5; model.reg.q_dim];
    let x0 = lay.pack(&anchor.rho, &anchor.w, &anchor.z, &eta, &tt, sigma.sigma.as_slice());
    let traj = integrate(&field, &x0, 0.0, LYAPUNOV_HORIZON, sc.h)
        .map_err(|e| CliError::Config(format!("lyapunov monitor run: {e}")))?;
    Ok(lyapunov_monitor(&traj, &lay, &model)?)
}

/// Builds the requested report blocks, anchored at the run's terminal state.
pub fn run_analyses(
    sim: &SimResult,
    sc: &Scenario,
    kinds: &[AnalysisKind],
) -> Result<serde_json::Value, CliError> {
    let mut out = serde_json::Map::new();
    if kinds.is_empty() {
        return Ok(serde_json::Value::Object(out));
    }
    let anchor = terminal_anchor(sim);
    let model = sc.analysis_model()?;

    if kinds.contains(&AnalysisKind::Pe) {
        let report = pe_gram(&model, &anchor, ANALYSIS_WINDOW, sc.h)?;
        out.insert("pe".to_string(), pe_json(&report));
    }
    if kinds.contains(&AnalysisKind::Graph) {
        let report = verify_graph_invariance(&model, &anchor, ANALYSIS_WINDOW, sc.h)?;
        out.insert("graph".to_string(), graph_json(&report));
    }
    let want_track = kinds.contains(&AnalysisKind::LimitSet) || kinds.contains(&AnalysisKind::Decay);
    if want_track {
        let track = limit_set_distance(sim, sc, DISTANCE_SAMPLES)?;
        if kinds.contains(&AnalysisKind::LimitSet) {
            out.insert(
                "limit_set".to_string(),
                json!({ "times": track.times, "dist": track.dist }),
            );
        }
        if kinds.contains(&AnalysisKind::Decay) {
            let fit = fit_exponential_decay(&track.times, &track.dist, DECAY_SKIP)?;
            out.insert(
                "decay".to_string(),
                json!({
                    "rate": fit.rate,
                    "prefactor": fit.prefactor,
                    "rmse": fit.rmse,
                    "samples_used": fit.samples_used,
                    "skip_fraction": DECAY_SKIP,
                }),
            );
        }
    }
    if kinds.contains(&AnalysisKind::Lyapunov) {
        let report = run_lyapunov(sc, &anchor)?;
        out.insert("lyapunov".to_string(), lyapunov_json(&report));
    }
    Ok(serde_json::Value::Object(out))
}

/// Simulates and writes trajectory.csv plus summary.json. Exit 0 means the
/// run completed; whether it regulated is data in the summary. A guard
/// breach still writes the truncated trajectory, then exits with the
/// divergence code.
pub fn cmd_run(cfg: &RunConfig) -> Result<i32, CliError> {
    let sc = build_scenario(cfg)?;
    let kinds = parse_analyses(cfg.analyses.as_deref().unwrap_or(&[]))?;
    let dir = out_dir(cfg);
    ensure_dir(&dir)?;

    let sim = simulate(&sc).map_err(|e| CliError::Config(format!("simulation: {e}")))?;
    write_trajectory_csv(&dir.join("trajectory.csv"), &sim)?;

    let analyses = if sim.diverged.is_some() {
        // Attractor anchors mean nothing on a blown-up run.
        serde_json::Value::Object(serde_json::Map::new())
    } else {
        run_analyses(&sim, &sc, &kinds)?
    };
    let summary = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": sc.name,
        "parameters": parameter_echo(&sc),
        "metrics": serde_json::to_value(&sim.metrics).expect("metrics serialize"),
        "diverged": serde_json::to_value(&sim.diverged).expect("divergence serialize"),
        "analyses": analyses,
    });
    write_text(&dir.join("summary.json"), &json_text(&summary))?;

    Ok(if sim.diverged.is_some() { EXIT_DIVERGED } else { EXIT_OK })
}

fn default_floor(knob: GainKnob) -> f64 {
    match knob {
        GainKnob::FeedbackK => 0.01,
        GainKnob::Lambda => 1.0,
        GainKnob::ChainG => 2.0,
    }
}

/// Escalation document plus its exhausted flag; an absent floor selects the
/// knob default.
pub fn probe_document(
    sc: &Scenario,
    knob_name: &str,
    floor: Option<f64>,
    max_doublings: usize,
) -> Result<(serde_json::Value, bool), CliError> {
    let knob = GainKnob::parse(knob_name).ok_or_else(|| {
        CliError::Config(format!("unknown gain {knob_name:?}; known: k, lambda, g"))
    })?;
    let floor = floor.unwrap_or_else(|| default_floor(knob));
    let report = small_gain_probe(sc, knob, floor, max_doublings)?;
    let doc = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": sc.name,
        "parameters": parameter_echo(sc),
        "probe": probe_json(&report),
    });
    Ok((doc, report.exhausted))
}

/// Escalates one gain and writes probe.json; exits with the exhausted code
/// when no rung of the ladder settles the loop.
pub fn cmd_probe(
    cfg: &RunConfig,
    knob_name: &str,
    floor: Option<f64>,
    max_doublings: usize,
) -> Result<i32, CliError> {
    let sc = build_scenario(cfg)?;
    let dir = out_dir(cfg);
    ensure_dir(&dir)?;

    let (doc, exhausted) = probe_document(&sc, knob_name, floor, max_doublings)?;
    write_text(&dir.join("probe.json"), &json_text(&doc))?;

    Ok(if exhausted { EXIT_EXHAUSTED } else { EXIT_OK })
}

// Random admissible regulator gains for the transform identity check:
// distinct stable filter roots and a positive leading gain.
fn random_mato_params(
    rng: &mut ChaCha8Rng,
    template: &RegulatorParams,
) -> Result<RegulatorParams, CliError> {
    for _ in 0..1000 {
        let roots: Vec<f64> =
            (0..template.d - 1).map(|_| rng.gen_range(-6.0..-0.5)).collect();
        let lambda = rng.gen_range(0.5..8.0);
        if let Ok(p) =
            RegulatorParams::from_roots(&roots, lambda, 1.0, template.ell, template.q_dim)
        {
            return Ok(p);
        }
    }
    Err(CliError::Config("could not draw distinct stable filter roots".into()))
}

/// Structural check suite: transform identities on random gains, immersion
/// residuals on attractor samples, excitation, and graph invariance. Returns
/// the report document and whether every check passed.
pub fn verify_document(sc: &Scenario) -> Result<(serde_json::Value, bool), CliError> {
    let model = sc.analysis_model()?;

    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed.wrapping_add(0x4d41544f));
    let mut mato_max = 0.0_f64;
    let mut mato_pass = true;
    for _ in 0..MATO_TRIALS {
        let params = random_mato_params(&mut rng, &model.reg)?;
        let report = verify_mato_transform(&params);
        mato_max = mato_max.max(report.max_dev);
        mato_pass &= report.pass;
    }

    let samples = attractor_sample_bounded(
        &model.plant,
        &model.exo,
        IMMERSION_SAMPLES,
        VERIFY_BURN_IN,
        sc.h,
        sc.seed,
        sc.divergence_bound,
    )
    .map_err(|e| CliError::Config(format!("attractor sampling: {e}")))?;
    let mut res_ode_max = 0.0_f64;
    let mut res_out_max = 0.0_f64;
    for pt in &samples {
        let (res_ode, res_out) =
            immersion_residual(&model.im, &model.plant, &model.exo, pt, IMMERSION_FD_STEP)
                .map_err(|e| CliError::Config(format!("immersion residual: {e}")))?;
        res_ode_max = res_ode.iter().fold(res_ode_max, |acc, &v| acc.max(v.abs()));
        res_out_max = res_out_max.max(res_out.abs());
    }
    let immersion_pass = res_ode_max <= IMMERSION_TOL && res_out_max <= IMMERSION_TOL;

    let anchor = samples.first().cloned().ok_or_else(|| {
        CliError::Config("attractor sampling produced no points".into())
    })?;
    let pe = pe_gram(&model, &anchor, ANALYSIS_WINDOW, sc.h)?;
    let graph = verify_graph_invariance(&model, &anchor, ANALYSIS_WINDOW, sc.h)?;
    let graph_pass =
        graph.max_deviation <= GRAPH_TOL && graph.max_formula_deviation <= GRAPH_TOL;

    let mut failed: Vec<&str> = Vec::new();
    if !mato_pass {
        failed.push("mato");
    }
    if !immersion_pass {
        failed.push("immersion");
    }
    if !pe.pass {
        failed.push("pe");
    }
    if !graph_pass {
        failed.push("graph");
    }
    let pass = failed.is_empty();

    let doc = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": sc.name,
        "parameters": parameter_echo(sc),
        "checks": {
            "mato": {
                "trials": MATO_TRIALS,
                "max_deviation": mato_max,
                "tolerance": MATO_TOL,
                "pass": mato_pass,
            },
            "immersion": {
                "samples": samples.len(),
                "fd_step": IMMERSION_FD_STEP,
                "max_residual_ode": res_ode_max,
                "max_residual_out": res_out_max,
                "tolerance": IMMERSION_TOL,
                "pass": immersion_pass,
            },
            "pe": pe_json(&pe),
            "graph": {
                "max_deviation": graph.max_deviation,
                "max_formula_deviation": graph.max_formula_deviation,
                "sigma_tail_bound": graph.sigma_tail_bound,
                "checks": graph.checks,
                "tolerance": GRAPH_TOL,
                "pass": graph_pass,
            },
        },
        "pass": pass,
        "failed": failed,
    });
    Ok((doc, pass))
}

/// Runs the check suite and writes verify.json; exits with the verification
/// code when any check fails.
pub fn cmd_verify(cfg: &RunConfig) -> Result<i32, CliError> {
    let sc = build_scenario(cfg)?;
    let dir = out_dir(cfg);
    ensure_dir(&dir)?;

    let (doc, pass) = verify_document(&sc)?;
    write_text(&dir.join("verify.json"), &json_text(&doc))?;

    if pass {
        Ok(EXIT_OK)
    } else {
        let failed: Vec<&str> = doc["failed"]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_str()).collect())
            .unwrap_or_default();
        eprintln!("verification failed: {}", failed.join(", "));
        Ok(EXIT_VERIFY)
    }
}
