//! Small dense linear-algebra helpers shared across the toolkit.
//!
//! Everything here operates on heap-allocated `f64` matrices of modest size
//! (internal-model dimensions, so rarely above 10x10). Determinism matters
//! more than speed: identical inputs must produce identical bytes.

use nalgebra::Complex;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

/// Real-part threshold below which an eigenvalue counts as stable.
pub const HURWITZ_TOL: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum LinalgError {
    NotSquare { rows: usize, cols: usize },
    /// An eigenvalue with real part at or above the stability threshold.
    NotHurwitz { re: f64, im: f64 },
    NotSymmetric { max_asymmetry: f64 },
    SingularSystem,
    /// The assembled solution failed its residual postcondition.
    ResidualTooLarge { residual: f64, limit: f64 },
}

impl std::fmt::Display for LinalgError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinalgError::NotSquare { rows, cols } => {
                write!(f, "matrix is {rows}x{cols}, expected square")
            }
            LinalgError::NotHurwitz { re, im } => {
                write!(f, "matrix is not Hurwitz: eigenvalue {re}+{im}i has real part >= -1e-10")
            }
            LinalgError::NotSymmetric { max_asymmetry } => {
                write!(f, "matrix is not symmetric: max |S - S^T| entry = {max_asymmetry}")
            }
            LinalgError::SingularSystem => write!(f, "linear system is singular"),
            LinalgError::ResidualTooLarge { residual, limit } => {
                write!(f, "solution residual {residual} exceeds {limit}")
            }
        }
    }
}

impl std::error::Error for LinalgError {}

/// d x d nilpotent upper-shift: ones on the superdiagonal, zeros elsewhere.
pub fn shift_matrix(d: usize) -> Matrix {
    let mut a = Matrix::zeros(d, d);
    for i in 0..d.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    a
}

/// Monic polynomial coefficients from its roots, ascending order.
///
/// `poly_from_roots(&[-1.0, -2.0])` gives `[2, 3, 1]` for l^2 + 3l + 2.
pub fn poly_from_roots(roots: &[f64]) -> Vec<f64> {
    let mut coeffs = vec![1.0];
    for &r in roots {
        // multiply by (l - r)
        let mut next = vec![0.0; coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i] -= r * c;
            next[i + 1] += c;
        }
        coeffs = next;
    }
    coeffs
}

/// Roots of a monic polynomial given ascending coefficients
/// `[c0, c1, .., c_{n-1}, 1]`, via companion-matrix eigenvalues.
pub fn companion_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let n = coeffs.len() - 1;
    assert!(n >= 1, "polynomial must have degree >= 1");
    assert!(
        (coeffs[n] - 1.0).abs() < 1e-12,
        "polynomial must be monic, leading coefficient is {}",
        coeffs[n]
    );
    let mut comp = Matrix::zeros(n, n);
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        comp[(i, n - 1)] = -coeffs[i];
    }
    // Companion of p: subdiagonal ones, last column -c0..-c_{n-1}.
    let mut eigs: Vec<Complex<f64>> = comp.complex_eigenvalues().iter().cloned().collect();
    eigs.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    eigs
}

/// All eigenvalues of a square real matrix, sorted by (re, im).
pub fn complex_eigenvalues(m: &Matrix) -> Result<Vec<Complex<f64>>, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    let mut eigs: Vec<Complex<f64>> = m.complex_eigenvalues().iter().cloned().collect();
    eigs.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    Ok(eigs)
}

/// Checks every eigenvalue has real part < -1e-10; reports the worst offender.
pub fn check_hurwitz(m: &Matrix) -> Result<(), LinalgError> {
    let eigs = complex_eigenvalues(m)?;
    if let Some(bad) = eigs.iter().filter(|e| e.re >= HURWITZ_TOL).max_by(|a, b| {
        a.re.partial_cmp(&b.re).unwrap()
    }) {
        return Err(LinalgError::NotHurwitz { re: bad.re, im: bad.im });
    }
    Ok(())
}

/// Solves P*F + F^T*P = -I for symmetric positive definite P.
///
/// The Sylvester structure is flattened through the Kronecker identity
/// vec(A X B) = (B^T (x) A) vec(X) and solved densely by LU. The result is
/// symmetrized and must satisfy the residual bound max|PF + F^T P + I| <= 1e-12.
pub fn solve_lyapunov(f: &Matrix) -> Result<Matrix, LinalgError> {
    check_hurwitz(f)?;
    let n = f.nrows();
    let eye = Matrix::identity(n, n);
    // vec(P F) = (F^T (x) I) vec(P); vec(F^T P) = (I (x) F^T) vec(P)
    let sys = f.transpose().kronecker(&eye) + eye.kronecker(&f.transpose());
    let rhs = Vector::from_column_slice((-&eye).as_slice());
    let sol = sys.lu().solve(&rhs).ok_or(LinalgError::SingularSystem)?;
    let p_raw = Matrix::from_column_slice(n, n, sol.as_slice());
    let p = (&p_raw + p_raw.transpose()) * 0.5;
    let residual = (&p * f + f.transpose() * &p + &eye).abs().max();
    if residual > 1e-12 {
        return Err(LinalgError::ResidualTooLarge { residual, limit: 1e-12 });
    }
    Ok(p)
}

/// Smallest eigenvalue of a symmetric matrix (asymmetry tolerance 1e-10).
pub fn eig_min_symmetric(s: &Matrix) -> Result<f64, LinalgError> {
    if s.nrows() != s.ncols() {
        return Err(LinalgError::NotSquare { rows: s.nrows(), cols: s.ncols() });
    }
    let max_asymmetry = (s - s.transpose()).abs().max();
    if max_asymmetry > 1e-10 {
        return Err(LinalgError::NotSymmetric { max_asymmetry });
    }
    let sym = (s + s.transpose()) * 0.5;
    let eigs = sym.symmetric_eigenvalues();
    Ok(eigs.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Matrix exponential by scaling-and-squaring with a [6/6] Pade approximant.
///
/// Accurate to ~1e-14 for the small, moderately scaled matrices used here.
pub fn expm(m: &Matrix) -> Matrix {
    assert_eq!(m.nrows(), m.ncols(), "expm needs a square matrix");
    let n = m.nrows();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    let norm = m.abs().max() * n as f64;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil().max(0.0) as u32 } else { 0 };
    let a = m / f64::powi(2.0, s as i32);

    // [6/6] Pade: N(a)/D(a) with N = sum c_k a^k, D = sum c_k (-a)^k.
    const C: [f64; 7] = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665_280.0,
    ];
    let eye = Matrix::identity(n, n);
    let mut num = &eye * C[0];
    let mut den = &eye * C[0];
    let mut pow = eye.clone();
    for (k, &ck) in C.iter().enumerate().skip(1) {
        pow = &pow * &a;
        num += &pow * ck;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        den += &pow * (ck * sign);
    }
    let mut result = den.lu().solve(&num).expect("Pade denominator is invertible");
    for _ in 0..s {
        result = &result * &result;
    }
    result
}
