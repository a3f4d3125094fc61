//! Adaptive internal-model regulator synthesis.
//!
//! The controller is `u = xi_1 + v` with internal model
//! `xidot = A xi + phi(xi_1) + Omega(xi_1) theta_hat + H(X, xi_1) v - M(X) dzv(theta_hat)`,
//! adaptation `theta_hat_dot = beta(X, xi_1) v - dzv(theta_hat)`, and filter
//! `Xdot = F X + G Omega(xi_1)`. The design data is a vector `b` (with
//! `b_1 = 1`) whose associated polynomial places the filter poles, an observer
//! rate `lambda`, a feedback gain `k`, and a dead-zone amplitude `ell` that
//! must dominate the true parameter range.

use crate::linalg::{companion_roots, shift_matrix, Matrix, Vector, HURWITZ_TOL};
use crate::model::ImmersionData;

#[derive(Debug, Clone, PartialEq)]
pub enum RegulatorError {
    LeadingCoefficient { b1: f64 },
    DimensionTooSmall { d: usize },
    /// Filter polynomial root in the closed right half plane.
    RootNotStable { re: f64, im: f64 },
    /// Two filter roots closer than the distinctness tolerance.
    RootsTooClose { gap: f64 },
    BadLambda { lambda: f64 },
    BadFeedbackGain { k: f64 },
    BadDeadzone { ell: f64 },
    /// Dead zone does not dominate the parameter range.
    DeadzoneFloorTooLow { ell: f64, theta_max: f64 },
    Shape { what: &'static str },
}

impl std::fmt::Display for RegulatorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegulatorError::LeadingCoefficient { b1 } => {
                write!(f, "b must start with 1, got {b1}")
            }
            RegulatorError::DimensionTooSmall { d } => {
                write!(f, "internal model dimension must be at least 2, got {d}")
            }
            RegulatorError::RootNotStable { re, im } => {
                write!(f, "filter root {re}+{im}i is not strictly stable")
            }
            RegulatorError::RootsTooClose { gap } => {
                write!(f, "filter roots are {gap:.3e} apart, need distinct roots (gap > 1e-6)")
            }
            RegulatorError::BadLambda { lambda } => {
                write!(f, "observer rate lambda must be positive, got {lambda}")
            }
            RegulatorError::BadFeedbackGain { k } => {
                write!(f, "feedback gain must be non-negative and finite, got {k}")
            }
            RegulatorError::BadDeadzone { ell } => {
                write!(f, "dead-zone amplitude must be positive, got {ell}")
            }
            RegulatorError::DeadzoneFloorTooLow { ell, theta_max } => write!(
                f,
                "dead-zone amplitude {ell} must exceed the parameter range bound {theta_max}"
            ),
            RegulatorError::Shape { what } => write!(f, "inconsistent shape: {what}"),
        }
    }
}

impl std::error::Error for RegulatorError {}

/// Synthesis data plus the derived matrices F, G, K.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorParams {
    /// col(1, b_2..b_d); the filter polynomial reads off b_2..b_d.
    pub b: Vec<f64>,
    pub lambda: f64,
    pub k: f64,
    pub ell: f64,
    pub d: usize,
    pub q_dim: usize,
    pub f_mat: Matrix,
    pub g_mat: Matrix,
    pub k_gain: Vector,
}

impl RegulatorParams {
    pub fn new(
        b: Vec<f64>,
        lambda: f64,
        k: f64,
        ell: f64,
        q_dim: usize,
    ) -> Result<Self, RegulatorError> {
        let d = b.len();
        if d < 2 {
            return Err(RegulatorError::DimensionTooSmall { d });
        }
        if (b[0] - 1.0).abs() > 1e-12 {
            return Err(RegulatorError::LeadingCoefficient { b1: b[0] });
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(RegulatorError::BadLambda { lambda });
        }
        if !(k >= 0.0) || !k.is_finite() {
            return Err(RegulatorError::BadFeedbackGain { k });
        }
        if !(ell > 0.0) || !ell.is_finite() {
            return Err(RegulatorError::BadDeadzone { ell });
        }
        if q_dim < 1 {
            return Err(RegulatorError::Shape { what: "q_dim must be at least 1" });
        }
        check_filter_roots(&b)?;
        let (f_mat, g_mat) = build_fg(&b)?;
        let k_gain = gain_k(&b, lambda)?;
        Ok(RegulatorParams { b, lambda, k, ell, d, q_dim, f_mat, g_mat, k_gain })
    }

    /// Builds `b` from desired filter poles (all distinct, strictly stable).
    pub fn from_roots(
        roots: &[f64],
        lambda: f64,
        k: f64,
        ell: f64,
        q_dim: usize,
    ) -> Result<Self, RegulatorError> {
        Self::new(b_from_roots(roots), lambda, k, ell, q_dim)
    }

    /// Default pole pattern -1, -2, .., -(d-1).
    pub fn default_b(d: usize) -> Vec<f64> {
        assert!(d >= 2);
        let roots: Vec<f64> = (1..d).map(|i| -(i as f64)).collect();
        b_from_roots(&roots)
    }
}

/// Expands the filter polynomial with the given roots into col(1, b_2..b_d).
pub fn b_from_roots(roots: &[f64]) -> Vec<f64> {
    // Ascending coefficients [p_0 .. p_{m-1}, 1] map to b = (1, p_{m-1}, .., p_0).
    let poly = crate::linalg::poly_from_roots(roots);
    let m = roots.len();
    let mut b = Vec::with_capacity(m + 1);
    b.push(1.0);
    for i in (0..m).rev() {
        b.push(poly[i]);
    }
    b
}

/// Ascending coefficients of the filter polynomial
/// `p(l) = l^{d-1} + b_2 l^{d-2} + .. + b_d`.
fn filter_poly(b: &[f64]) -> Vec<f64> {
    let d = b.len();
    let mut coeffs = Vec::with_capacity(d);
    for i in (1..d).rev() {
        coeffs.push(b[i]);
    }
    coeffs.push(1.0);
    coeffs
}

fn check_filter_roots(b: &[f64]) -> Result<(), RegulatorError> {
    let roots = companion_roots(&filter_poly(b));
    for root in &roots {
        if root.re >= HURWITZ_TOL {
            return Err(RegulatorError::RootNotStable { re: root.re, im: root.im });
        }
    }
    for i in 0..roots.len() {
        for j in i + 1..roots.len() {
            let gap = (roots[i] - roots[j]).norm();
            if gap <= 1e-6 {
                return Err(RegulatorError::RootsTooClose { gap });
            }
        }
    }
    Ok(())
}

/// Filter matrices: F has first column (-b_2..-b_d) and a superdiagonal of
/// ones; G is F's first column followed by the identity.
pub fn build_fg(b: &[f64]) -> Result<(Matrix, Matrix), RegulatorError> {
    let d = b.len();
    if d < 2 {
        return Err(RegulatorError::DimensionTooSmall { d });
    }
    check_filter_roots(b)?;
    let m = d - 1;
    let mut f = Matrix::zeros(m, m);
    let mut g = Matrix::zeros(m, d);
    for i in 0..m {
        f[(i, 0)] = -b[i + 1];
        g[(i, 0)] = -b[i + 1];
        if i + 1 < m {
            f[(i, i + 1)] = 1.0;
        }
        g[(i, i + 1)] = 1.0;
    }
    Ok((f, g))
}

/// Observer injection gain K = A b + lambda b.
pub fn gain_k(b: &[f64], lambda: f64) -> Result<Vector, RegulatorError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(RegulatorError::BadLambda { lambda });
    }
    let d = b.len();
    let mut k = Vector::zeros(d);
    for i in 0..d {
        let shifted = if i + 1 < d { b[i + 1] } else { 0.0 };
        k[i] = shifted + lambda * b[i];
    }
    Ok(k)
}

/// Controller state: internal model xi, parameter estimate, filter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorState {
    pub xi: Vector,
    pub theta_hat: Vector,
    /// (d-1) x q_dim filter state, stored column-major when flattened.
    pub x_mat: Matrix,
}

impl RegulatorState {
    pub fn zeros(d: usize, q_dim: usize) -> Self {
        RegulatorState {
            xi: Vector::zeros(d),
            theta_hat: Vector::zeros(q_dim),
            x_mat: Matrix::zeros(d - 1, q_dim),
        }
    }

    pub fn flat_len(d: usize, q_dim: usize) -> usize {
        d + q_dim + (d - 1) * q_dim
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        let d = self.xi.len();
        let q = self.theta_hat.len();
        out[..d].copy_from_slice(self.xi.as_slice());
        out[d..d + q].copy_from_slice(self.theta_hat.as_slice());
        out[d + q..].copy_from_slice(self.x_mat.as_slice());
    }

    pub fn from_flat(x: &[f64], d: usize, q_dim: usize) -> Self {
        debug_assert_eq!(x.len(), Self::flat_len(d, q_dim));
        RegulatorState {
            xi: Vector::from_column_slice(&x[..d]),
            theta_hat: Vector::from_column_slice(&x[d..d + q_dim]),
            x_mat: Matrix::from_column_slice(d - 1, q_dim, &x[d + q_dim..]),
        }
    }
}

/// M(X) = col(0, X): zero first row over the filter state.
pub fn m_of(x_mat: &Matrix) -> Matrix {
    let (m, q) = (x_mat.nrows(), x_mat.ncols());
    let mut out = Matrix::zeros(m + 1, q);
    out.view_mut((1, 0), (m, q)).copy_from(x_mat);
    out
}

/// Regressor beta: beta^T = (C A) M(X) + C Omega(xi_1), i.e. the first row of
/// X plus the first row of Omega.
pub fn beta(x_mat: &Matrix, xi1: f64, im: &ImmersionData) -> Vector {
    let om = im.omega(xi1);
    let q = x_mat.ncols();
    let mut out = Vector::zeros(q);
    for j in 0..q {
        out[j] = x_mat[(0, j)] + om[(0, j)];
    }
    out
}

/// Feedthrough gain H = M(X) beta + K.
pub fn big_h(x_mat: &Matrix, xi1: f64, params: &RegulatorParams, im: &ImmersionData) -> Vector {
    m_of(x_mat) * beta(x_mat, xi1, im) + &params.k_gain
}

/// C^1 dead zone: zero on [-ell, ell], identity beyond ell+1 in magnitude,
/// cubic Hermite blend in between. Odd and monotone non-decreasing.
pub fn deadzone_scalar(x: f64, ell: f64) -> f64 {
    debug_assert!(ell > 0.0);
    let a = x.abs();
    let v = if a <= ell {
        0.0
    } else if a >= ell + 1.0 {
        a
    } else {
        let s = a - ell;
        (3.0 * s * s - 2.0 * s * s * s) * (ell + 1.0) + s * s * s - s * s
    };
    v.copysign(x)
}

/// Componentwise dead zone.
pub fn deadzone_vec(v: &Vector, ell: f64) -> Vector {
    v.map(|x| deadzone_scalar(x, ell))
}

/// Smallest inner product `theta_tilde . dzv(theta_tilde + theta)` over random
/// samples with `|theta|_inf <= ell`. Non-negative by construction; this
/// measures how close to zero the sampled minimum gets.
pub fn deadzone_positivity_min(ell: f64, q_dim: usize, samples: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut min = f64::INFINITY;
    for _ in 0..samples {
        let tt = Vector::from_fn(q_dim, |_, _| rng.gen_range(-3.0 * (ell + 1.0)..3.0 * (ell + 1.0)));
        let th = Vector::from_fn(q_dim, |_, _| rng.gen_range(-ell..ell));
        let dz = deadzone_vec(&(&tt + &th), ell);
        min = min.min(tt.dot(&dz));
    }
    min
}

/// Measured coercivity floor: minimum of `2 theta_tilde . dzv(theta_tilde +
/// theta) / |theta_tilde|^2` over samples with `|theta_tilde| >= delta`,
/// `delta = sqrt(q)(2 ell + 1) + 0.1`.
pub fn deadzone_coercivity_floor(ell: f64, q_dim: usize, samples: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let delta = (q_dim as f64).sqrt() * (2.0 * ell + 1.0) + 0.1;
    let mut floor = f64::INFINITY;
    for _ in 0..samples {
        let dir = Vector::from_fn(q_dim, |_, _| rng.gen_range(-1.0..1.0));
        let norm = dir.norm();
        if norm < 1e-9 {
            continue;
        }
        let radius = delta * rng.gen_range(1.0..3.0);
        let tt = dir * (radius / norm);
        let th = Vector::from_fn(q_dim, |_, _| rng.gen_range(-ell..ell));
        let dz = deadzone_vec(&(&tt + &th), ell);
        floor = floor.min(2.0 * tt.dot(&dz) / tt.norm_squared());
    }
    floor
}

/// Time derivative of the controller state given the stabilizing input v.
///
/// The measured output never enters directly: it acts only through v,
/// computed upstream, so the controller cannot peek at plant internals.
pub fn regulator_rhs(
    state: &RegulatorState,
    v: f64,
    params: &RegulatorParams,
    im: &ImmersionData,
) -> Result<RegulatorState, RegulatorError> {
    let d = params.d;
    if state.xi.len() != d
        || state.theta_hat.len() != params.q_dim
        || state.x_mat.nrows() != d - 1
        || state.x_mat.ncols() != params.q_dim
    {
        return Err(RegulatorError::Shape { what: "state blocks do not match params dims" });
    }
    let xi1 = state.xi[0];
    let om = im.omega(xi1);
    let phi = im.phi(xi1);
    if om.iter().any(|v| !v.is_finite()) || phi.iter().any(|v| !v.is_finite()) {
        return Err(RegulatorError::Shape { what: "phi/Omega produced non-finite values" });
    }
    let dz = deadzone_vec(&state.theta_hat, params.ell);
    let mm = m_of(&state.x_mat);
    let bta = beta(&state.x_mat, xi1, im);
    let h = &mm * &bta + &params.k_gain;

    let a = shift_matrix(d);
    let xi_dot = &a * &state.xi + phi + &om * &state.theta_hat + &h * v - &mm * &dz;
    let theta_dot = &bta * v - &dz;
    let x_dot = &params.f_mat * &state.x_mat + &params.g_mat * &om;
    Ok(RegulatorState { xi: xi_dot, theta_hat: theta_dot, x_mat: x_dot })
}

/// Control decomposition: v = -k e, u = xi_1 + v.
pub fn control_output(state: &RegulatorState, e: f64, params: &RegulatorParams) -> (f64, f64) {
    let v = -params.k * e;
    (state.xi[0] + v, v)
}

/// Deviations of the three similarity identities tying (A - K C) to the
/// filter matrices through the unit lower-triangular transform T.
#[derive(Debug, Clone, PartialEq)]
pub struct MatoReport {
    pub dev_similarity: f64,
    pub dev_tb: f64,
    pub dev_ct: f64,
    pub max_dev: f64,
    pub pass: bool,
}

/// Checks T (A - K C) T^{-1} = [[-lambda, c_hat], [0, F]], T b = e_1, and
/// C T^{-1} = C, with T = [[1, 0], [b_hat, I]], b_hat = -(b_2..b_d).
///
/// T^{-1} is written down exactly (unit lower-triangular with the sign of
/// b_hat flipped); no numeric inversion enters the check.
pub fn verify_mato_transform(params: &RegulatorParams) -> MatoReport {
    let d = params.d;
    let a = shift_matrix(d);
    let mut t = Matrix::identity(d, d);
    let mut t_inv = Matrix::identity(d, d);
    for i in 1..d {
        t[(i, 0)] = -params.b[i];
        t_inv[(i, 0)] = params.b[i];
    }

    // A - K C subtracts K from the first column only.
    let mut akc = a;
    for i in 0..d {
        akc[(i, 0)] -= params.k_gain[i];
    }

    let lhs = &t * akc * &t_inv;
    let mut rhs = Matrix::zeros(d, d);
    rhs[(0, 0)] = -params.lambda;
    if d >= 2 {
        rhs[(0, 1)] = 1.0;
    }
    for i in 0..d - 1 {
        for j in 0..d - 1 {
            rhs[(i + 1, j + 1)] = params.f_mat[(i, j)];
        }
    }
    let dev_similarity = (lhs - rhs).abs().max();

    let tb = &t * Vector::from_column_slice(&params.b);
    let mut e1 = Vector::zeros(d);
    e1[0] = 1.0;
    let dev_tb = (tb - e1).abs().max();

    let mut ct = Vector::zeros(d);
    for j in 0..d {
        ct[j] = t_inv[(0, j)];
    }
    let mut c = Vector::zeros(d);
    c[0] = 1.0;
    let dev_ct = (ct - c).abs().max();

    let max_dev = dev_similarity.max(dev_tb).max(dev_ct);
    MatoReport { dev_similarity, dev_tb, dev_ct, max_dev, pass: max_dev <= 1e-12 }
}

/// Enforces the dead-zone rule `ell > max |theta(rho)|_inf` over the box.
pub fn check_deadzone_floor(
    params: &RegulatorParams,
    im: &ImmersionData,
    param_box: &[(f64, f64)],
) -> Result<(), RegulatorError> {
    let theta_max = crate::model::theta_sup_box(im, param_box, 11);
    if params.ell <= theta_max {
        return Err(RegulatorError::DeadzoneFloorTooLow { ell: params.ell, theta_max });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn harmonic_immersion() -> ImmersionData {
        ImmersionData::new(
            2,
            1,
            10.0,
            |rho, w, _z| vec![w[0], rho[0] * w[1]],
            |rho| vec![rho[0] * rho[0]],
            |_y| vec![0.0, 0.0],
            |y| Matrix::from_column_slice(2, 1, &[0.0, -y]),
        )
        .unwrap()
    }

    fn canonical_params() -> RegulatorParams {
        RegulatorParams::new(vec![1.0, 2.0], 5.0, 20.0, 1.5, 1).unwrap()
    }

    #[test]
    fn fg_shapes_d2() {
        let (f, g) = build_fg(&[1.0, 2.0]).unwrap();
        assert_eq!((f.nrows(), f.ncols()), (1, 1));
        assert_eq!(f[(0, 0)], -2.0);
        assert_eq!((g.nrows(), g.ncols()), (1, 2));
        assert_eq!((g[(0, 0)], g[(0, 1)]), (-2.0, 1.0));
    }

    #[test]
    fn fg_shapes_d3() {
        let (f, g) = build_fg(&[1.0, 3.0, 2.0]).unwrap();
        assert_eq!(f, Matrix::from_row_slice(2, 2, &[-3.0, 1.0, -2.0, 0.0]));
        assert_eq!(g, Matrix::from_row_slice(2, 3, &[-3.0, 1.0, 0.0, -2.0, 0.0, 1.0]));
    }

    #[test]
    fn f_eigenvalues_match_filter_roots() {
        let (f, _) = build_fg(&[1.0, 3.0, 2.0]).unwrap();
        let eigs = crate::linalg::complex_eigenvalues(&f).unwrap();
        assert_relative_eq!(eigs[0].re, -2.0, epsilon = 1e-8);
        assert_relative_eq!(eigs[1].re, -1.0, epsilon = 1e-8);
        assert!(eigs.iter().all(|e| e.im.abs() < 1e-8));
    }

    #[test]
    fn b_from_roots_round_trip() {
        assert_eq!(b_from_roots(&[-2.0]), vec![1.0, 2.0]);
        assert_eq!(b_from_roots(&[-1.0, -2.0]), vec![1.0, 3.0, 2.0]);
    }

    #[test]
    fn gain_k_examples() {
        let k = gain_k(&[1.0, 2.0], 5.0).unwrap();
        assert_eq!(k.as_slice(), &[7.0, 10.0]);
        let k = gain_k(&[1.0, 0.0, 0.0], 3.0).unwrap();
        assert_eq!(k.as_slice(), &[3.0, 0.0, 0.0]);
        let k = gain_k(&[1.0, 3.0, 2.0], 1.0).unwrap();
        assert_eq!(k.as_slice(), &[4.0, 5.0, 2.0]);
    }

    #[test]
    fn gain_k_linear_in_lambda() {
        let b = [1.0, 3.0, 2.0];
        let k1 = gain_k(&b, 7.0).unwrap();
        let k2 = gain_k(&b, 2.0).unwrap();
        let diff = k1 - k2;
        for (i, &bi) in b.iter().enumerate() {
            assert_relative_eq!(diff[i], 5.0 * bi, epsilon = 1e-12);
        }
    }

    #[test]
    fn params_validation_rejects_bad_inputs() {
        assert!(matches!(
            RegulatorParams::new(vec![2.0, 2.0], 5.0, 20.0, 1.5, 1),
            Err(RegulatorError::LeadingCoefficient { .. })
        ));
        assert!(matches!(
            RegulatorParams::new(vec![1.0, -2.0], 5.0, 20.0, 1.5, 1),
            Err(RegulatorError::RootNotStable { .. })
        ));
        // roots at -1, -1: repeated
        assert!(matches!(
            RegulatorParams::new(vec![1.0, 2.0, 1.0], 5.0, 20.0, 1.5, 1),
            Err(RegulatorError::RootsTooClose { .. })
        ));
        assert!(matches!(
            RegulatorParams::new(vec![1.0, 2.0], 0.0, 20.0, 1.5, 1),
            Err(RegulatorError::BadLambda { .. })
        ));
        assert!(matches!(
            RegulatorParams::new(vec![1.0, 2.0], 5.0, -1.0, 1.5, 1),
            Err(RegulatorError::BadFeedbackGain { .. })
        ));
        assert!(matches!(
            RegulatorParams::new(vec![1.0, 2.0], 5.0, 20.0, 0.0, 1),
            Err(RegulatorError::BadDeadzone { .. })
        ));
        assert!(RegulatorParams::new(vec![1.0, 2.0], 5.0, 0.0, 1.5, 1).is_ok());
    }

    #[test]
    fn beta_canonical_is_filter_state() {
        let im = harmonic_immersion();
        let x = Matrix::from_element(1, 1, 0.4);
        let b = beta(&x, 0.7, &im);
        assert_eq!(b.len(), 1);
        assert_relative_eq!(b[0], 0.4, epsilon = 1e-15);
        let b0 = beta(&Matrix::zeros(1, 1), 0.0, &im);
        assert_eq!(b0[0], 0.0);
    }

    #[test]
    fn beta_d3_picks_first_filter_row() {
        let im = ImmersionData::new(
            3,
            1,
            10.0,
            |_, _, _| vec![0.0; 3],
            |_| vec![0.0],
            |_| vec![0.0; 3],
            |y| Matrix::from_column_slice(3, 1, &[0.0, 0.0, -y]),
        )
        .unwrap();
        let x = Matrix::from_column_slice(2, 1, &[0.3, -0.9]);
        let b = beta(&x, 1.0, &im);
        assert_relative_eq!(b[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn big_h_composition() {
        let im = harmonic_immersion();
        let params = canonical_params();
        let x = Matrix::from_element(1, 1, 0.4);
        let h = big_h(&x, 0.0, &params, &im);
        assert_relative_eq!(h[0], 7.0, epsilon = 1e-15);
        assert_relative_eq!(h[1], 10.16, epsilon = 1e-12);
        let h0 = big_h(&Matrix::zeros(1, 1), 0.0, &params, &im);
        assert_eq!(h0.as_slice(), params.k_gain.as_slice());
    }

    #[test]
    fn deadzone_plateaus_and_blend() {
        assert_eq!(deadzone_scalar(1.0, 1.5), 0.0);
        assert_eq!(deadzone_scalar(-1.5, 1.5), 0.0);
        assert_eq!(deadzone_scalar(3.0, 1.5), 3.0);
        assert_eq!(deadzone_scalar(-4.0, 1.5), -4.0);
        assert_relative_eq!(deadzone_scalar(2.0, 1.5), 1.125, epsilon = 1e-15);
        assert_relative_eq!(deadzone_scalar(-2.0, 1.5), -1.125, epsilon = 1e-15);
    }

    #[test]
    fn deadzone_is_odd_monotone_c1() {
        let ell = 1.5;
        let mut prev = deadzone_scalar(-4.0, ell);
        let mut x = -4.0;
        while x <= 4.0 {
            let v = deadzone_scalar(x, ell);
            assert_relative_eq!(deadzone_scalar(-x, ell), -v, epsilon = 1e-14);
            assert!(v >= prev - 1e-14, "not monotone at {x}");
            if v != 0.0 {
                assert_eq!(v.signum(), x.signum());
            }
            prev = v;
            x += 1e-3;
        }
        // C1 at the seams: finite-difference slope continuous.
        for seam in [ell, ell + 1.0] {
            let left = (deadzone_scalar(seam - 1e-7, ell) - deadzone_scalar(seam - 2e-7, ell)) / 1e-7;
            let right = (deadzone_scalar(seam + 2e-7, ell) - deadzone_scalar(seam + 1e-7, ell)) / 1e-7;
            assert_relative_eq!(left, right, epsilon = 1e-5);
        }
    }

    #[test]
    fn deadzone_vec_componentwise() {
        let v = Vector::from_column_slice(&[0.5, -3.0]);
        let out = deadzone_vec(&v, 1.5);
        assert_eq!(out.as_slice(), &[0.0, -3.0]);
        let z = deadzone_vec(&Vector::zeros(2), 1.5);
        assert_eq!(z.as_slice(), &[0.0, 0.0]);
        let two = deadzone_vec(&Vector::from_column_slice(&[2.0, 2.0]), 1.5);
        assert_relative_eq!(two[0], 1.125, epsilon = 1e-15);
        assert_relative_eq!(two[1], 1.125, epsilon = 1e-15);
    }

    #[test]
    fn deadzone_positivity_and_coercivity() {
        let min = deadzone_positivity_min(1.5, 2, 1000, 4);
        assert!(min >= -1e-12, "positivity violated: {min}");
        let floor = deadzone_coercivity_floor(1.5, 2, 1000, 5);
        assert!(floor > 0.0, "coercivity floor {floor} not positive");
    }

    #[test]
    fn rhs_zero_state_is_zero() {
        let im = harmonic_immersion();
        let params = canonical_params();
        let s = RegulatorState::zeros(2, 1);
        let ds = regulator_rhs(&s, 0.0, &params, &im).unwrap();
        assert_eq!(ds.xi.as_slice(), &[0.0, 0.0]);
        assert_eq!(ds.theta_hat.as_slice(), &[0.0]);
        assert_eq!(ds.x_mat.as_slice(), &[0.0]);
    }

    #[test]
    fn rhs_substitution_case() {
        let im = harmonic_immersion();
        let params = canonical_params();
        let s = RegulatorState {
            xi: Vector::from_column_slice(&[1.0, 0.0]),
            theta_hat: Vector::from_element(1, 1.0),
            x_mat: Matrix::zeros(1, 1),
        };
        let ds = regulator_rhs(&s, 0.0, &params, &im).unwrap();
        assert_eq!(ds.xi.as_slice(), &[0.0, -1.0]);
        assert_eq!(ds.theta_hat.as_slice(), &[0.0]);
        assert_relative_eq!(ds.x_mat[(0, 0)], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn rhs_leakage_outside_deadzone() {
        let im = harmonic_immersion();
        let params = canonical_params();
        let s = RegulatorState {
            xi: Vector::zeros(2),
            theta_hat: Vector::from_element(1, 3.0),
            x_mat: Matrix::zeros(1, 1),
        };
        let ds = regulator_rhs(&s, 0.0, &params, &im).unwrap();
        assert_relative_eq!(ds.theta_hat[0], -3.0, epsilon = 1e-15);
    }

    #[test]
    fn control_output_affine() {
        let params = canonical_params();
        let mut s = RegulatorState::zeros(2, 1);
        assert_eq!(control_output(&s, 0.0, &params), (0.0, 0.0));
        s.xi[0] = 2.0;
        let params10 = RegulatorParams::new(vec![1.0, 2.0], 5.0, 10.0, 1.5, 1).unwrap();
        let (u, v) = control_output(&s, 0.1, &params10);
        assert_relative_eq!(v, -1.0, epsilon = 1e-15);
        assert_relative_eq!(u, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn mato_identities_worked_case() {
        let params = canonical_params();
        let rep = verify_mato_transform(&params);
        assert!(rep.pass, "deviations {rep:?}");
        assert!(rep.max_dev <= 1e-12);
    }

    #[test]
    fn mato_identities_d4() {
        let params = RegulatorParams::from_roots(&[-1.0, -2.5, -4.0], 3.0, 1.0, 1.0, 2).unwrap();
        let rep = verify_mato_transform(&params);
        assert!(rep.pass, "deviations {rep:?}");
    }

    #[test]
    fn state_flattening_round_trip() {
        let s = RegulatorState {
            xi: Vector::from_column_slice(&[1.0, 2.0, 3.0]),
            theta_hat: Vector::from_column_slice(&[4.0, 5.0]),
            x_mat: Matrix::from_column_slice(2, 2, &[6.0, 7.0, 8.0, 9.0]),
        };
        let mut flat = vec![0.0; RegulatorState::flat_len(3, 2)];
        s.write_flat(&mut flat);
        let back = RegulatorState::from_flat(&flat, 3, 2);
        assert_eq!(s, back);
    }

    #[test]
    fn deadzone_floor_rule() {
        let im = harmonic_immersion();
        let params = canonical_params();
        assert!(check_deadzone_floor(&params, &im, &[(0.8, 1.2)]).is_ok());
        let tight = RegulatorParams::new(vec![1.0, 2.0], 5.0, 20.0, 1.2, 1).unwrap();
        assert!(matches!(
            check_deadzone_floor(&tight, &im, &[(0.8, 1.2)]),
            Err(RegulatorError::DeadzoneFloorTooLow { .. })
        ));
    }
}
