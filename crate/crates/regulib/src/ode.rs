//! Fixed-step RK4 integration on a uniform time grid.
//!
//! The integrator is deliberately minimal: classical RK4, no adaptivity, no
//! dense output. Step count is fixed up front from the horizon so the grid is
//! exactly `t0 + k*h` with no floating-point accumulation, and two runs with
//! identical inputs produce byte-identical trajectories.

/// Right-hand side of an autonomous-in-form ODE `dx/dt = f(t, x)`.
///
/// The closure writes the derivative into `out`; `out.len() == dim`.
pub struct VectorField {
    pub dim: usize,
    pub f: Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>,
}

impl VectorField {
    pub fn new(dim: usize, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        VectorField { dim, f: Box::new(f) }
    }

    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        (self.f)(t, x, out)
    }
}

/// Sampled solution: `states[k]` is the state at `times[k]`, flattened row-major.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub dim: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }

    /// Largest |x_i| over the whole trajectory for one state component.
    pub fn sup_abs_component(&self, idx: usize) -> f64 {
        self.states.iter().map(|s| s[idx].abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeError {
    BadStep { h: f64 },
    BadHorizon { t0: f64, t1: f64 },
    DimensionMismatch { expected: usize, got: usize },
    /// The vector field returned NaN or infinity.
    NonFiniteRhs { t: f64, component: usize },
}

impl std::fmt::Display for OdeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OdeError::BadStep { h } => write!(f, "step size must be positive and finite, got {h}"),
            OdeError::BadHorizon { t0, t1 } => {
                write!(f, "horizon must satisfy t1 > t0, got t0={t0}, t1={t1}")
            }
            OdeError::DimensionMismatch { expected, got } => {
                write!(f, "initial state has {got} components, field expects {expected}")
            }
            OdeError::NonFiniteRhs { t, component } => {
                write!(f, "vector field produced a non-finite value at t={t}, component {component}")
            }
        }
    }
}

impl std::error::Error for OdeError {}

/// One classical RK4 step from `(t, x)` with step `h`; writes the result into `next`.
pub fn rk4_step(field: &VectorField, t: f64, x: &[f64], h: f64, next: &mut [f64]) {
    let d = field.dim;
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];

    field.eval(t, x, &mut k1);
    for i in 0..d {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    field.eval(t + 0.5 * h, &tmp, &mut k2);
    for i in 0..d {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    field.eval(t + 0.5 * h, &tmp, &mut k3);
    for i in 0..d {
        tmp[i] = x[i] + h * k3[i];
    }
    field.eval(t + h, &tmp, &mut k4);
    for i in 0..d {
        next[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn step_count(t0: f64, t1: f64, h: f64) -> usize {
    // Small negative fuzz so t1 = t0 + n*h (up to rounding) gives exactly n steps.
    ((t1 - t0) / h - 1e-9).ceil().max(1.0) as usize
}

/// Integrates over `[t0, t1]`, sampling every step.
///
/// The grid is `t0 + k*h` for `k = 0..=n` with `n = ceil((t1-t0)/h)`, so the
/// last stamp is at least `t1 - h`. Fails fast if the field goes non-finite.
pub fn integrate(
    field: &VectorField,
    x0: &[f64],
    t0: f64,
    t1: f64,
    h: f64,
) -> Result<Trajectory, OdeError> {
    integrate_with_guard(field, x0, t0, t1, h, f64::INFINITY).map(|(traj, breach)| {
        debug_assert!(breach.is_none());
        traj
    })
}

/// Where and how a trajectory first exceeded the divergence bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardBreach {
    pub t: f64,
    pub sup_norm: f64,
}

/// Like [`integrate`] but stops early once `max_i |x_i|` exceeds `bound`.
///
/// Returns the trajectory up to and including the breaching state, plus the
/// breach record. A non-finite state also counts as a breach rather than an
/// error, so callers can inspect the blow-up prefix.
pub fn integrate_with_guard(
    field: &VectorField,
    x0: &[f64],
    t0: f64,
    t1: f64,
    h: f64,
    bound: f64,
) -> Result<(Trajectory, Option<GuardBreach>), OdeError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(OdeError::BadStep { h });
    }
    if !(t1 > t0) {
        return Err(OdeError::BadHorizon { t0, t1 });
    }
    if x0.len() != field.dim {
        return Err(OdeError::DimensionMismatch { expected: field.dim, got: x0.len() });
    }
    let n = step_count(t0, t1, h);
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(t0);
    states.push(x0.to_vec());

    let sup = |x: &[f64]| x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if sup(x0) > bound {
        return Ok((
            Trajectory { times, states, dim: field.dim },
            Some(GuardBreach { t: t0, sup_norm: sup(x0) }),
        ));
    }

    let mut x = x0.to_vec();
    let mut next = vec![0.0; field.dim];
    for k in 0..n {
        let t = t0 + k as f64 * h;
        rk4_step(field, t, &x, h, &mut next);
        let t_next = t0 + (k + 1) as f64 * h;
        if let Some(bad) = next.iter().position(|v| !v.is_finite()) {
            if bound.is_finite() {
                // Under a guard a non-finite state is a blow-up observation,
                // not an integration failure; keep the prefix inspectable.
                times.push(t_next);
                states.push(next.clone());
                let breach = GuardBreach { t: t_next, sup_norm: f64::INFINITY };
                return Ok((Trajectory { times, states, dim: field.dim }, Some(breach)));
            }
            return Err(OdeError::NonFiniteRhs { t: t_next, component: bad });
        }
        let s = sup(&next);
        if s > bound {
            times.push(t_next);
            states.push(next.clone());
            let breach = GuardBreach { t: t_next, sup_norm: s };
            return Ok((Trajectory { times, states, dim: field.dim }, Some(breach)));
        }
        times.push(t_next);
        states.push(next.clone());
        x.copy_from_slice(&next);
    }
    Ok((Trajectory { times, states, dim: field.dim }, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn decay() -> VectorField {
        VectorField::new(1, |_t, x, out| out[0] = -x[0])
    }

    #[test]
    fn grid_is_uniform_and_covers_horizon() {
        let traj = integrate(&decay(), &[1.0], 0.0, 1.0, 0.1).unwrap();
        assert_eq!(traj.len(), 11);
        for (k, &t) in traj.times.iter().enumerate() {
            assert_relative_eq!(t, 0.1 * k as f64, epsilon = 1e-15);
        }
        assert!(*traj.times.last().unwrap() >= 1.0 - 0.1);
    }

    #[test]
    fn non_divisible_horizon_rounds_up() {
        // 0.95 / 0.1 -> 10 steps, last stamp 1.0 >= 0.95 - 0.1.
        let traj = integrate(&decay(), &[1.0], 0.0, 0.95, 0.1).unwrap();
        assert_eq!(traj.len(), 11);
        assert_relative_eq!(*traj.times.last().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_exponential_oracle() {
        let traj = integrate(&decay(), &[1.0], 0.0, 2.0, 1e-3).unwrap();
        let last = traj.last_state()[0];
        assert_relative_eq!(last, (-2.0f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let field = VectorField::new(2, |_t, x, out| {
            out[0] = x[1];
            out[1] = -x[0];
        });
        // Step chosen commensurate with the period: the grid rounds the final
        // stamp up to a whole number of steps, so an incommensurate step would
        // probe the solution slightly past one period.
        let period = 2.0 * std::f64::consts::PI;
        let traj = integrate(&field, &[1.0, 0.0], 0.0, period, period / 6283.0).unwrap();
        let last = traj.last_state();
        assert_relative_eq!(last[0], 1.0, epsilon = 1e-9);
        assert!(last[1].abs() < 1e-9);
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Error ratio between h and h/2 should be ~16 for a smooth field.
        let field = VectorField::new(1, |t, x, out| out[0] = x[0] * t.cos());
        let exact = |t: f64| (t.sin()).exp();
        let run = |h: f64| {
            let traj = integrate(&field, &[1.0], 0.0, 1.0, h).unwrap();
            (traj.last_state()[0] - exact(1.0)).abs()
        };
        let ratio = run(0.02) / run(0.01);
        assert!(
            (14.0..=18.0).contains(&ratio),
            "expected ~16x error reduction per halving, got {ratio}"
        );
    }

    #[test]
    fn deterministic_bytes() {
        let a = integrate(&decay(), &[1.0], 0.0, 1.0, 1e-3).unwrap();
        let b = integrate(&decay(), &[1.0], 0.0, 1.0, 1e-3).unwrap();
        for (x, y) in a.states.iter().zip(b.states.iter()) {
            assert_eq!(x[0].to_bits(), y[0].to_bits());
        }
    }

    #[test]
    fn guard_catches_finite_time_blowup() {
        // dx/dt = x^2 from x0=1 blows up at t=1.
        let field = VectorField::new(1, |_t, x, out| out[0] = x[0] * x[0]);
        let (traj, breach) = integrate_with_guard(&field, &[1.0], 0.0, 2.0, 1e-4, 1e6).unwrap();
        let breach = breach.expect("guard must trip");
        assert!(breach.t < 1.1, "breach at t={}", breach.t);
        assert!(breach.sup_norm > 1e6);
        assert_relative_eq!(*traj.times.last().unwrap(), breach.t, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            integrate(&decay(), &[1.0], 0.0, 1.0, 0.0),
            Err(OdeError::BadStep { .. })
        ));
        assert!(matches!(
            integrate(&decay(), &[1.0], 1.0, 1.0, 0.1),
            Err(OdeError::BadHorizon { .. })
        ));
        assert!(matches!(
            integrate(&decay(), &[1.0, 2.0], 0.0, 1.0, 0.1),
            Err(OdeError::DimensionMismatch { .. })
        ));
    }
}
