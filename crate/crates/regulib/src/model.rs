//! Plant, exosystem, and internal-model immersion data.
//!
//! The plant family has a normal form with relative degree `r`:
//! `zdot = f0(rho,w,z) + f1(rho,w,z,e1)*e1`, a chain `edot_i = e_{i+1}`,
//! `edot_r = q(rho,w,z,e) + u`, driven by an autonomous exosystem
//! `wdot = s(rho,w)` with constant unknown parameter `rho` in a box.
//! The immersion data embeds the steady-state input generator into an
//! observer canonical form `taudot = A tau + phi(C tau) + Omega(C tau) theta`
//! with `theta` depending only on `rho`.
//!
//! Model objects are immutable and shared through `Arc`, so assembled vector
//! fields own everything they capture and stay `'static`.

use crate::linalg::{shift_matrix, Matrix, Vector};
use crate::ode::{integrate_with_guard, VectorField};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Default sup-norm bound above which a trajectory counts as divergent.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    Dimension { what: &'static str, expected: usize, got: usize },
    NonFinite { what: &'static str },
    /// Zero dynamics escaped the divergence bound; names the offending start.
    AttractorDivergence { initial: Vec<f64>, t: f64, sup_norm: f64 },
    Integration(String),
}

impl std::fmt::Display for ModelError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelError::Dimension { what, expected, got } => {
                write!(f, "{what}: expected length {expected}, got {got}")
            }
            ModelError::NonFinite { what } => write!(f, "{what} produced a non-finite value"),
            ModelError::AttractorDivergence { initial, t, sup_norm } => write!(
                f,
                "zero dynamics diverged (sup norm {sup_norm:.3e} at t={t}) from initial point \
                 {initial:?}; boundedness assumption violated"
            ),
            ModelError::Integration(msg) => write!(f, "integration failed: {msg}"),
        }
    }
}

impl std::error::Error for ModelError {}

/// Compact set described behaviorally: draw points, test membership.
///
/// Geometry is never needed beyond initial-condition ranges, so a sampler
/// plus a predicate is the whole representation.
#[derive(Clone)]
pub struct CompactSet {
    pub dim: usize,
    sample_fn: Arc<dyn Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync>,
    contains_fn: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
}

impl CompactSet {
    /// Axis-aligned box given per-component closed intervals.
    pub fn box_set(bounds: Vec<(f64, f64)>) -> Self {
        assert!(!bounds.is_empty(), "box needs at least one interval");
        for &(lo, hi) in &bounds {
            assert!(lo.is_finite() && hi.is_finite() && lo <= hi, "bad interval [{lo}, {hi}]");
        }
        let b2 = bounds.clone();
        CompactSet {
            dim: bounds.len(),
            sample_fn: Arc::new(move |rng| {
                bounds
                    .iter()
                    .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
                    .collect()
            }),
            contains_fn: Arc::new(move |x| {
                x.len() == b2.len()
                    && x.iter()
                        .zip(b2.iter())
                        .all(|(&v, &(lo, hi))| v >= lo - 1e-12 && v <= hi + 1e-12)
            }),
        }
    }

    /// Planar annulus r_min <= |w| <= r_max, sampled uniformly in area.
    pub fn annulus2(r_min: f64, r_max: f64) -> Self {
        assert!(0.0 <= r_min && r_min <= r_max && r_max.is_finite());
        CompactSet {
            dim: 2,
            sample_fn: Arc::new(move |rng| {
                let u: f64 = rng.gen_range(0.0..1.0);
                let r = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                vec![r * phi.cos(), r * phi.sin()]
            }),
            contains_fn: Arc::new(move |x| {
                if x.len() != 2 {
                    return false;
                }
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                r >= r_min - 1e-12 && r <= r_max + 1e-12
            }),
        }
    }

    /// Cartesian product: samples and tests the two factors independently.
    pub fn product(a: &CompactSet, b: &CompactSet) -> Self {
        let (sa, sb) = (a.sample_fn.clone(), b.sample_fn.clone());
        let (ca, cb) = (a.contains_fn.clone(), b.contains_fn.clone());
        let (da, db) = (a.dim, b.dim);
        CompactSet {
            dim: da + db,
            sample_fn: Arc::new(move |rng| {
                let mut v = sa(rng);
                v.extend(sb(rng));
                v
            }),
            contains_fn: Arc::new(move |x| {
                x.len() == da + db && ca(&x[..da]) && cb(&x[da..])
            }),
        }
    }

    /// Singleton set.
    pub fn point(p: Vec<f64>) -> Self {
        let p2 = p.clone();
        CompactSet {
            dim: p.len(),
            sample_fn: Arc::new(move |_| p.clone()),
            contains_fn: Arc::new(move |x| {
                x.len() == p2.len() && x.iter().zip(p2.iter()).all(|(a, b)| (a - b).abs() <= 1e-9)
            }),
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let s = (self.sample_fn)(rng);
        debug_assert_eq!(s.len(), self.dim);
        s
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (self.contains_fn)(x)
    }
}

/// Autonomous disturbance/reference generator `wdot = s(rho, w)`, `rhodot = 0`.
pub struct Exosystem {
    /// Dimension of the constant parameter rho.
    pub p: usize,
    /// Dimension of the oscillator state w.
    pub s_dim: usize,
    pub s: Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>,
    /// Closed interval per rho component; the parameter is known only up to this box.
    pub param_box: Vec<(f64, f64)>,
    pub w0_set: CompactSet,
}

impl Exosystem {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.param_box.len() != self.p {
            return Err(ModelError::Dimension {
                what: "param_box",
                expected: self.p,
                got: self.param_box.len(),
            });
        }
        if self.w0_set.dim != self.s_dim {
            return Err(ModelError::Dimension {
                what: "w0_set",
                expected: self.s_dim,
                got: self.w0_set.dim,
            });
        }
        let rho_mid: Vec<f64> = self.param_box.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
        let probe = (self.s)(&rho_mid, &vec![0.0; self.s_dim]);
        if probe.len() != self.s_dim {
            return Err(ModelError::Dimension {
                what: "s output",
                expected: self.s_dim,
                got: probe.len(),
            });
        }
        Ok(())
    }

    pub fn rho_in_box(&self, rho: &[f64]) -> bool {
        rho.len() == self.p
            && rho
                .iter()
                .zip(self.param_box.iter())
                .all(|(&v, &(lo, hi))| v >= lo - 1e-12 && v <= hi + 1e-12)
    }

    /// Midpoint of the parameter box.
    pub fn rho_nominal(&self) -> Vec<f64> {
        self.param_box.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect()
    }
}

/// Plant in normal form with relative degree `r` and inner state `z`.
pub struct PlantNormalForm {
    pub n: usize,
    pub r: usize,
    pub f0: Arc<dyn Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync>,
    pub f1: Arc<dyn Fn(&[f64], &[f64], &[f64], f64) -> Vec<f64> + Send + Sync>,
    /// Drift on the last error derivative: edot_r = q(rho, w, z, e) + u.
    pub q: Arc<dyn Fn(&[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync>,
    pub z0_set: CompactSet,
    /// Half-width of the initial error box: |e_i(0)| <= e0_bound.
    pub e0_bound: f64,
}

impl PlantNormalForm {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.r < 1 {
            return Err(ModelError::Dimension { what: "relative degree", expected: 1, got: self.r });
        }
        if self.n > 0 && self.z0_set.dim != self.n {
            return Err(ModelError::Dimension {
                what: "z0_set",
                expected: self.n,
                got: self.z0_set.dim,
            });
        }
        Ok(())
    }
}

/// Internal-model immersion data with the canonical pair (A, C) fixed to the
/// upper shift and the first-coordinate selector.
///
/// `phi` and `Omega` are made globally Lipschitz by smoothly clamping their
/// scalar argument to `[-y_max, y_max]`; the closed loop only ever needs them
/// on a compact output range, and the clamp prevents transient blow-up.
pub struct ImmersionData {
    pub d: usize,
    pub q_dim: usize,
    pub y_max: f64,
    pub tau: Arc<dyn Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync>,
    pub theta: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    phi_raw: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
    omega_raw: Arc<dyn Fn(f64) -> Matrix + Send + Sync>,
}

impl ImmersionData {
    pub fn new(
        d: usize,
        q_dim: usize,
        y_max: f64,
        tau: impl Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        theta: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        phi: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        omega: impl Fn(f64) -> Matrix + Send + Sync + 'static,
    ) -> Result<Self, ModelError> {
        assert!(d >= 1 && q_dim >= 1, "immersion dims must be positive");
        assert!(y_max > 0.0, "y_max must be positive");
        let probe_phi = phi(0.0);
        if probe_phi.len() != d {
            return Err(ModelError::Dimension {
                what: "phi output",
                expected: d,
                got: probe_phi.len(),
            });
        }
        let probe_om = omega(0.0);
        if probe_om.nrows() != d || probe_om.ncols() != q_dim {
            return Err(ModelError::Dimension {
                what: "Omega output rows",
                expected: d,
                got: probe_om.nrows(),
            });
        }
        Ok(ImmersionData {
            d,
            q_dim,
            y_max,
            tau: Arc::new(tau),
            theta: Arc::new(theta),
            phi_raw: Arc::new(phi),
            omega_raw: Arc::new(omega),
        })
    }

    /// C^1 saturation: identity on [-y_max, y_max], constant at
    /// +-(y_max + 1/2) outside [-(y_max+1), y_max+1], quadratic blend between.
    pub fn clamp_arg(&self, y: f64) -> f64 {
        let m = self.y_max;
        let a = y.abs();
        let v = if a <= m {
            a
        } else if a <= m + 1.0 {
            let s = a - m;
            m + s - 0.5 * s * s
        } else {
            m + 0.5
        };
        v.copysign(y)
    }

    pub fn phi(&self, y: f64) -> Vector {
        Vector::from_vec((self.phi_raw)(self.clamp_arg(y)))
    }

    pub fn omega(&self, y: f64) -> Matrix {
        (self.omega_raw)(self.clamp_arg(y))
    }

    pub fn tau_at(&self, pt: &AugmentedPoint) -> Vector {
        Vector::from_vec((self.tau)(&pt.rho, &pt.w, &pt.z))
    }

    pub fn theta_at(&self, rho: &[f64]) -> Vector {
        Vector::from_vec((self.theta)(rho))
    }

    /// The canonical d x d nilpotent upper shift.
    pub fn a_matrix(&self) -> Matrix {
        shift_matrix(self.d)
    }

    /// Same immersion with `tau` replaced; everything else is shared.
    ///
    /// Used when a plant is rewritten with extra inner states that the
    /// steady-state generator does not depend on.
    pub fn with_tau(
        &self,
        tau: impl Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> ImmersionData {
        ImmersionData {
            d: self.d,
            q_dim: self.q_dim,
            y_max: self.y_max,
            tau: Arc::new(tau),
            theta: self.theta.clone(),
            phi_raw: self.phi_raw.clone(),
            omega_raw: self.omega_raw.clone(),
        }
    }
}

/// Largest |theta(rho)|_inf over the parameter box, estimated on a uniform
/// grid that includes all box vertices. Sets the dead-zone floor.
pub fn theta_sup_box(im: &ImmersionData, param_box: &[(f64, f64)], grid_per_dim: usize) -> f64 {
    assert!(grid_per_dim >= 2, "grid must include both endpoints");
    let p = param_box.len();
    let mut idx = vec![0usize; p];
    let mut best: f64 = 0.0;
    loop {
        let rho: Vec<f64> = idx
            .iter()
            .zip(param_box.iter())
            .map(|(&i, &(lo, hi))| lo + (hi - lo) * i as f64 / (grid_per_dim - 1) as f64)
            .collect();
        let th = im.theta_at(&rho);
        best = best.max(th.iter().map(|v| v.abs()).fold(0.0, f64::max));
        let mut carry = true;
        for slot in idx.iter_mut() {
            if carry {
                *slot += 1;
                if *slot == grid_per_dim {
                    *slot = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break;
        }
    }
    best
}

/// A point of the augmented state (rho, w, z) that the zero dynamics evolve.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPoint {
    pub rho: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
}

impl AugmentedPoint {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.rho.len() + self.w.len() + self.z.len());
        v.extend_from_slice(&self.rho);
        v.extend_from_slice(&self.w);
        v.extend_from_slice(&self.z);
        v
    }

    pub fn unflatten(x: &[f64], p: usize, s_dim: usize, n: usize) -> Self {
        debug_assert_eq!(x.len(), p + s_dim + n);
        AugmentedPoint {
            rho: x[..p].to_vec(),
            w: x[p..p + s_dim].to_vec(),
            z: x[p + s_dim..].to_vec(),
        }
    }
}

/// The input holding e identically zero along the zero dynamics:
/// c(rho, w, z) = -q(rho, w, z, 0).
pub fn friend_control(plant: &PlantNormalForm, pt: &AugmentedPoint) -> Result<f64, ModelError> {
    let e0 = vec![0.0; plant.r];
    let qv = (plant.q)(&pt.rho, &pt.w, &pt.z, &e0);
    if !qv.is_finite() {
        return Err(ModelError::NonFinite { what: "q" });
    }
    Ok(-qv)
}

/// Augmented zero dynamics: rhodot = 0, wdot = s(rho, w), zdot = f0(rho, w, z)
/// over the flattened state [rho | w | z].
///
/// The rho block is written as literal zeros, so integration preserves rho
/// bit-exactly.
pub fn zero_dynamics_field(plant: &Arc<PlantNormalForm>, exo: &Arc<Exosystem>) -> VectorField {
    let p = exo.p;
    let s_dim = exo.s_dim;
    let n = plant.n;
    let s = exo.s.clone();
    let f0 = plant.f0.clone();
    VectorField::new(p + s_dim + n, move |_t, x, out| {
        let rho = &x[..p];
        let w = &x[p..p + s_dim];
        let z = &x[p + s_dim..];
        out[..p].fill(0.0);
        out[p..p + s_dim].copy_from_slice(&s(rho, w));
        out[p + s_dim..].copy_from_slice(&f0(rho, w, z));
    })
}

/// Residuals of the immersion identities at one augmented point.
///
/// `res_ode` compares the flow derivative of `tau` (central finite difference
/// of `tau` along the zero-dynamics flow, time step `fd_step`) against
/// `A tau + phi(C tau) + Omega(C tau) theta(rho)`. `res_out` is
/// `c(pt) - C tau(pt)`. Both vanish on the steady-state attractor.
pub fn immersion_residual(
    im: &ImmersionData,
    plant: &Arc<PlantNormalForm>,
    exo: &Arc<Exosystem>,
    pt: &AugmentedPoint,
    fd_step: f64,
) -> Result<(Vector, f64), ModelError> {
    assert!(fd_step > 0.0, "finite-difference step must be positive");
    let field = zero_dynamics_field(plant, exo);
    let x0 = pt.flatten();
    let mut fwd = vec![0.0; x0.len()];
    let mut bwd = vec![0.0; x0.len()];
    crate::ode::rk4_step(&field, 0.0, &x0, fd_step, &mut fwd);
    crate::ode::rk4_step(&field, 0.0, &x0, -fd_step, &mut bwd);
    let pt_f = AugmentedPoint::unflatten(&fwd, exo.p, exo.s_dim, plant.n);
    let pt_b = AugmentedPoint::unflatten(&bwd, exo.p, exo.s_dim, plant.n);

    let tau0 = im.tau_at(pt);
    if tau0.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { what: "tau" });
    }
    let tau_f = im.tau_at(&pt_f);
    let tau_b = im.tau_at(&pt_b);
    let dtau = (tau_f - tau_b) / (2.0 * fd_step);

    let y = tau0[0];
    let rhs = im.a_matrix() * &tau0 + im.phi(y) + im.omega(y) * im.theta_at(&pt.rho);
    let res_ode = dtau - rhs;

    let c = friend_control(plant, pt)?;
    let res_out = c - tau0[0];
    Ok((res_ode, res_out))
}

/// Integrates the zero dynamics from `n_init` sampled starts for `t_burn`
/// and returns the endpoints as approximate attractor samples.
///
/// rho is drawn uniformly from the parameter box, w from `W0`, z from `Z0`.
/// Divergence past `bound` is an assumption violation, reported with the
/// offending initial point.
pub fn attractor_sample_bounded(
    plant: &Arc<PlantNormalForm>,
    exo: &Arc<Exosystem>,
    n_init: usize,
    t_burn: f64,
    h: f64,
    seed: u64,
    bound: f64,
) -> Result<Vec<AugmentedPoint>, ModelError> {
    assert!(t_burn > 0.0, "burn-in horizon must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = zero_dynamics_field(plant, exo);
    let mut out = Vec::with_capacity(n_init);
    for _ in 0..n_init {
        let rho: Vec<f64> = exo
            .param_box
            .iter()
            .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
            .collect();
        let w0 = exo.w0_set.sample(&mut rng);
        let z0 = if plant.n > 0 { plant.z0_set.sample(&mut rng) } else { Vec::new() };
        let pt = AugmentedPoint { rho, w: w0, z: z0 };
        let x0 = pt.flatten();
        let (traj, breach) = integrate_with_guard(&field, &x0, 0.0, t_burn, h, bound)
            .map_err(|e| ModelError::Integration(e.to_string()))?;
        if let Some(b) = breach {
            return Err(ModelError::AttractorDivergence {
                initial: x0,
                t: b.t,
                sup_norm: b.sup_norm,
            });
        }
        out.push(AugmentedPoint::unflatten(traj.last_state(), exo.p, exo.s_dim, plant.n));
    }
    Ok(out)
}

/// [`attractor_sample_bounded`] with the default divergence bound.
pub fn attractor_sample(
    plant: &Arc<PlantNormalForm>,
    exo: &Arc<Exosystem>,
    n_init: usize,
    t_burn: f64,
    h: f64,
    seed: u64,
) -> Result<Vec<AugmentedPoint>, ModelError> {
    attractor_sample_bounded(plant, exo, n_init, t_burn, h, seed, DIVERGENCE_BOUND)
}
