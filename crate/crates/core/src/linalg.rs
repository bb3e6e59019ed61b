//! Dense complex linear algebra used throughout the crate.
//!
//! Operators on a `d`-dimensional Hilbert space are stored as `d x d`
//! [`ComplexMatrix`] values. Superoperators act on operators flattened by
//! **column stacking**: `vec(X)[i + d*j] = X[(i, j)]`. With this convention
//! `vec(A X B) = (B^T ⊗ A) vec(X)`, which is what [`sandwich`] builds. Row
//! stacking would transpose every superoperator matrix, so nothing else in
//! the crate may assume a different ordering.

use nalgebra::{DMatrix, DVector, Dyn, LU, SVD};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

/// Reciprocal condition numbers above this are treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Minimum ratio between the two smallest singular values for a null space
/// to count as one-dimensional.
pub const NULLSPACE_GAP: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is singular or ill-conditioned (condition estimate {condition:.3e})")]
    Singular { condition: f64 },
    #[error(
        "null space is not one-dimensional: smallest singular values {smallest:.3e} and {second:.3e}"
    )]
    DegenerateNullSpace { smallest: f64, second: f64 },
    #[error("root bracket expansion exceeded t_max = {t_max:.3e} (f = {value:.6e}, target = {target:.6e})")]
    BracketExceeded { t_max: f64, value: f64, target: f64 },
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `|i><j|` on a `dim`-dimensional space.
pub fn ket_bra(dim: usize, i: usize, j: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(dim, dim);
    m[(i, j)] = C64::new(1.0, 0.0);
    m
}

pub fn max_abs(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_finite(a: &ComplexMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Relative Hermiticity check: `max|A - A†| <= tol * max|A|`.
pub fn is_hermitian(a: &ComplexMatrix, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = max_abs(a);
    max_abs(&(a - a.adjoint())) <= tol * scale.max(f64::MIN_POSITIVE)
}

/// Induced 1-norm (maximum absolute column sum).
pub fn norm1(a: &ComplexMatrix) -> f64 {
    a.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn trace(a: &ComplexMatrix) -> C64 {
    a.diagonal().iter().sum()
}

fn check_square(a: &ComplexMatrix) -> Result<usize, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if !is_finite(a) {
        return Err(LinalgError::NonFinite);
    }
    Ok(a.nrows())
}

/// A `d x d` operator flattened to length `d²` by column stacking.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorizedOperator {
    dim: usize,
    data: ComplexVector,
}

impl VectorizedOperator {
    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        assert!(m.is_square(), "only square operators can be vectorized");
        let dim = m.nrows();
        // nalgebra storage is column-major, which is exactly column stacking.
        let data = ComplexVector::from_iterator(dim * dim, m.iter().copied());
        Self { dim, data }
    }

    pub fn from_vector(dim: usize, data: ComplexVector) -> Result<Self, LinalgError> {
        if data.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &ComplexVector {
        &self.data
    }

    pub fn into_data(self) -> ComplexVector {
        self.data
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_column_slice(self.dim, self.dim, self.data.as_slice())
    }

    pub fn trace(&self) -> C64 {
        trace_vec(self.dim, &self.data)
    }
}

pub fn vectorize(m: &ComplexMatrix) -> ComplexVector {
    VectorizedOperator::from_matrix(m).into_data()
}

pub fn devectorize(dim: usize, v: &ComplexVector) -> ComplexMatrix {
    ComplexMatrix::from_column_slice(dim, dim, v.as_slice())
}

/// Trace of the operator whose column-stacked form is `v`.
pub fn trace_vec(dim: usize, v: &ComplexVector) -> C64 {
    (0..dim).map(|i| v[i * (dim + 1)]).sum()
}

/// Superoperator matrix of `X -> A X B`.
pub fn sandwich(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    b.transpose().kronecker(a)
}

/// Superoperator of left multiplication `X -> A X`.
pub fn left_mul(a: &ComplexMatrix) -> ComplexMatrix {
    let id = ComplexMatrix::identity(a.nrows(), a.nrows());
    sandwich(a, &id)
}

/// Superoperator of right multiplication `X -> X B`.
pub fn right_mul(b: &ComplexMatrix) -> ComplexMatrix {
    let id = ComplexMatrix::identity(b.nrows(), b.nrows());
    sandwich(&id, b)
}

// Padé numerator coefficients for degrees 3, 5, 7, 9, 13 together with the
// largest 1-norm for which each degree reaches double precision.
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152e0;

/// Matrix exponential `exp(A t)` by scaling and squaring with a diagonal
/// Padé approximant whose degree is picked from the 1-norm of `A t`.
pub fn expm(a: &ComplexMatrix, t: f64) -> Result<ComplexMatrix, LinalgError> {
    let n = check_square(a)?;
    if !t.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let at = a * C64::new(t, 0.0);
    let norm = norm1(&at);
    let id = ComplexMatrix::identity(n, n);
    if norm == 0.0 {
        return Ok(id);
    }

    for &(m, theta) in THETA.iter() {
        if norm <= theta {
            let coeffs: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let (u, v) = pade_low(&at, coeffs);
            return pade_solve(u, v);
        }
    }

    let squarings = (norm / THETA13).log2().ceil().max(0.0) as i32;
    let scaled = &at * C64::new(2f64.powi(-squarings), 0.0);
    let (u, v) = pade13(&scaled);
    let mut r = pade_solve(u, v)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

fn scale(m: &ComplexMatrix, s: f64) -> ComplexMatrix {
    m * C64::new(s, 0.0)
}

fn pade_low(a: &ComplexMatrix, b: &[f64]) -> (ComplexMatrix, ComplexMatrix) {
    let n = a.nrows();
    let id = ComplexMatrix::identity(n, n);
    let a2 = a * a;
    let mut u = scale(&id, b[1]);
    let mut v = scale(&id, b[0]);
    let mut power = id.clone();
    for k in 1..b.len() / 2 {
        power = &power * &a2;
        u += scale(&power, b[2 * k + 1]);
        v += scale(&power, b[2 * k]);
    }
    (a * u, v)
}

fn pade13(a: &ComplexMatrix) -> (ComplexMatrix, ComplexMatrix) {
    let b = &PADE13;
    let n = a.nrows();
    let id = ComplexMatrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = scale(&a6, b[13]) + scale(&a4, b[11]) + scale(&a2, b[9]);
    let u = a
        * (&a6 * inner_u
            + scale(&a6, b[7])
            + scale(&a4, b[5])
            + scale(&a2, b[3])
            + scale(&id, b[1]));
    let inner_v = scale(&a6, b[12]) + scale(&a4, b[10]) + scale(&a2, b[8]);
    let v = &a6 * inner_v
        + scale(&a6, b[6])
        + scale(&a4, b[4])
        + scale(&a2, b[2])
        + scale(&id, b[0]);
    (u, v)
}

fn pade_solve(u: ComplexMatrix, v: ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
    let denom = &v - &u;
    let numer = v + u;
    denom
        .lu()
        .solve(&numer)
        .ok_or(LinalgError::Singular {
            condition: f64::INFINITY,
        })
}

/// LU factorization kept around for repeated solves against the same matrix.
#[derive(Debug, Clone)]
pub struct LuSolver {
    lu: LU<C64, Dyn, Dyn>,
    dim: usize,
    condition: f64,
}

impl LuSolver {
    pub fn new(a: &ComplexMatrix) -> Result<Self, LinalgError> {
        let dim = check_square(a)?;
        let lu = a.clone().lu();
        let inverse = lu.solve(&ComplexMatrix::identity(dim, dim));
        let condition = match inverse {
            Some(inv) if is_finite(&inv) => norm1(a) * norm1(&inv),
            _ => f64::INFINITY,
        };
        if !(condition < SINGULAR_CONDITION) {
            return Err(LinalgError::Singular { condition });
        }
        Ok(Self { lu, dim, condition })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// 1-norm condition number of the factored matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn solve_vec(&self, b: &ComplexVector) -> Result<ComplexVector, LinalgError> {
        if b.len() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                got: b.len(),
            });
        }
        self.lu.solve(b).ok_or(LinalgError::Singular {
            condition: self.condition,
        })
    }

    pub fn solve_mat(&self, b: &ComplexMatrix) -> Result<ComplexMatrix, LinalgError> {
        if b.nrows() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                got: b.nrows(),
            });
        }
        self.lu.solve(b).ok_or(LinalgError::Singular {
            condition: self.condition,
        })
    }
}

/// Solves `A x = b`.
pub fn solve(a: &ComplexMatrix, b: &ComplexVector) -> Result<ComplexVector, LinalgError> {
    LuSolver::new(a)?.solve_vec(b)
}

/// Unit vector spanning the one-dimensional null space of `A`.
///
/// Fails when the two smallest singular values are not separated by at least
/// [`NULLSPACE_GAP`].
pub fn nullspace_onedim(a: &ComplexMatrix) -> Result<ComplexVector, LinalgError> {
    let n = check_square(a)?;
    if n == 0 {
        return Err(LinalgError::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let svd = SVD::new(a.clone(), false, true);
    let sv = &svd.singular_values;
    let smallest = sv[n - 1];
    if n > 1 {
        let second = sv[n - 2];
        if !(second > smallest * NULLSPACE_GAP) {
            return Err(LinalgError::DegenerateNullSpace { smallest, second });
        }
    }
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let v: ComplexVector = v_t.row(n - 1).adjoint();
    let norm = v.norm();
    Ok(v / C64::new(norm, 0.0))
}

/// Singular values in descending order.
pub fn singular_values(a: &ComplexMatrix) -> Vec<f64> {
    SVD::new(a.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// Eigenvalues from a complex Schur decomposition.
pub fn eigenvalues(a: &ComplexMatrix) -> Result<Vec<C64>, LinalgError> {
    let n = check_square(a)?;
    let schur = nalgebra::Schur::try_new(a.clone(), 1e-14, 10_000).ok_or(
        LinalgError::Singular {
            condition: f64::NAN,
        },
    )?;
    let (_, t) = schur.unpack();
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// Largest real part over the spectrum of `A`.
pub fn spectral_abscissa(a: &ComplexMatrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn spectral_radius(a: &ComplexMatrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Settings for [`find_root_increasing`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootOptions {
    /// First trial point of the geometric bracket search.
    pub t_start: f64,
    /// The bracket search gives up beyond this point.
    pub t_max: f64,
    /// Required accuracy `|f(t*) - target|`.
    pub tol: f64,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            t_start: 1.0,
            t_max: 1e12,
            tol: 1e-10,
        }
    }
}

fn bracket<F>(f: &mut F, target: f64, opts: &RootOptions) -> Result<(f64, f64, f64), LinalgError>
where
    F: FnMut(f64) -> f64,
{
    let mut lo = 0.0;
    let mut hi = opts.t_start.max(f64::MIN_POSITIVE);
    loop {
        let value = f(hi);
        if value >= target {
            return Ok((lo, hi, value));
        }
        if hi > opts.t_max {
            return Err(LinalgError::BracketExceeded {
                t_max: opts.t_max,
                value,
                target,
            });
        }
        lo = hi;
        hi *= 2.0;
    }
}

/// Solves `f(t) = target` for a continuous non-decreasing `f` on `[0, ∞)`
/// with `f(0) <= target`: geometric bracket growth from `t_start`, then
/// bisection.
pub fn find_root_increasing<F>(
    mut f: F,
    target: f64,
    opts: RootOptions,
) -> Result<f64, LinalgError>
where
    F: FnMut(f64) -> f64,
{
    let f0 = f(0.0);
    if (f0 - target).abs() <= opts.tol || f0 > target {
        return Ok(0.0);
    }
    let (mut lo, mut hi, f_hi) = bracket(&mut f, target, &opts)?;
    if (f_hi - target).abs() <= opts.tol {
        return Ok(hi);
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let value = f(mid);
        if (value - target).abs() <= opts.tol {
            return Ok(mid);
        }
        if value < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Same contract as [`find_root_increasing`], but `f` also returns its
/// derivative so safeguarded Newton steps can replace most bisections.
pub fn find_root_increasing_newton<F>(
    mut f: F,
    target: f64,
    opts: RootOptions,
) -> Result<f64, LinalgError>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (f0, _) = f(0.0);
    if (f0 - target).abs() <= opts.tol || f0 > target {
        return Ok(0.0);
    }
    let mut value_only = |t: f64| f(t).0;
    let (mut lo, mut hi, f_hi) = bracket(&mut value_only, target, &opts)?;
    if (f_hi - target).abs() <= opts.tol {
        return Ok(hi);
    }
    let mut t = 0.5 * (lo + hi);
    loop {
        let (value, slope) = f(t);
        if (value - target).abs() <= opts.tol {
            return Ok(t);
        }
        if value < target {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - (value - target) / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next <= lo || next >= hi || hi - lo <= f64::EPSILON * hi {
            return Ok(t);
        }
        t = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(values: &[f64]) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(
            values.len(),
            values.iter().map(|&x| c(x, 0.0)),
        ))
    }

    fn lcg_matrix(n: usize, seed: u64, scale_to: f64) -> ComplexMatrix {
        let mut state = seed;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let m = ComplexMatrix::from_fn(n, n, |_, _| c(next(), next()));
        let r = spectral_radius(&m).unwrap();
        m * c(scale_to / r, 0.0)
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let z = ComplexMatrix::zeros(4, 4);
        assert_eq!(expm(&z, 5.0).unwrap(), ComplexMatrix::identity(4, 4));
    }

    #[test]
    fn expm_diagonal() {
        let e = expm(&diag(&[-1.0, -2.0]), 1.0).unwrap();
        assert!((e[(0, 0)] - c((-1f64).exp(), 0.0)).norm() < 1e-15);
        assert!((e[(1, 1)] - c((-2f64).exp(), 0.0)).norm() < 1e-15);
        assert!(e[(0, 1)].norm() < 1e-16);
    }

    #[test]
    fn expm_rejects_bad_input() {
        let rect = ComplexMatrix::zeros(2, 3);
        assert!(matches!(expm(&rect, 1.0), Err(LinalgError::NotSquare { .. })));
        let mut nan = ComplexMatrix::zeros(2, 2);
        nan[(0, 0)] = c(f64::NAN, 0.0);
        assert_eq!(expm(&nan, 1.0), Err(LinalgError::NonFinite));
    }

    #[test]
    fn expm_semigroup_random_9x9() {
        for seed in 0..5 {
            let a = lcg_matrix(9, seed, 2.0);
            let full = expm(&a, 1.0).unwrap();
            let half = expm(&a, 0.5).unwrap();
            assert!(max_abs(&(full - &half * &half)) < 1e-10);
        }
    }

    #[test]
    fn expm_matches_taylor_for_large_norm() {
        // rotation generator: exp(θ J) is known in closed form
        let mut j = ComplexMatrix::zeros(2, 2);
        j[(0, 1)] = c(-1.0, 0.0);
        j[(1, 0)] = c(1.0, 0.0);
        let e = expm(&j, 40.0).unwrap();
        assert!((e[(0, 0)].re - 40f64.cos()).abs() < 1e-11);
        assert!((e[(1, 0)].re - 40f64.sin()).abs() < 1e-11);
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let b = ComplexVector::from_vec(vec![c(1.0, 2.0), c(-3.0, 0.5)]);
        let x = solve(&ComplexMatrix::identity(2, 2), &b).unwrap();
        assert_eq!(x, b);
        let x = solve(&diag(&[2.0, 4.0]), &ComplexVector::from_vec(vec![c(2.0, 0.0), c(4.0, 0.0)]))
            .unwrap();
        assert!((x[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((x[1] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn solve_reports_singular() {
        let a = diag(&[1.0, 0.0]);
        let b = ComplexVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(solve(&a, &b), Err(LinalgError::Singular { .. })));
        let a = diag(&[1.0, 1e-14]);
        match solve(&a, &b) {
            Err(LinalgError::Singular { condition }) => assert!(condition > 1e12),
            other => panic!("expected singular, got {other:?}"),
        }
    }

    #[test]
    fn solve_random_residual() {
        let a = lcg_matrix(16, 7, 1.0) + ComplexMatrix::identity(16, 16) * c(3.0, 0.0);
        let b = ComplexVector::from_fn(16, |i, _| c(i as f64, 1.0 - i as f64));
        let x = solve(&a, &b).unwrap();
        assert!((&a * &x - &b).norm() <= 1e-10 * b.norm());
    }

    #[test]
    fn nullspace_of_diag() {
        let v = nullspace_onedim(&diag(&[0.0, 1.0, 2.0])).unwrap();
        assert!((v[0].norm() - 1.0).abs() < 1e-14);
        assert!(v[1].norm() < 1e-14 && v[2].norm() < 1e-14);
    }

    #[test]
    fn nullspace_two_state_rate_matrix() {
        // p0 -> p1 at rate 1, p1 -> p0 at rate 2
        let mut w = ComplexMatrix::zeros(2, 2);
        w[(0, 0)] = c(-1.0, 0.0);
        w[(1, 0)] = c(1.0, 0.0);
        w[(0, 1)] = c(2.0, 0.0);
        w[(1, 1)] = c(-2.0, 0.0);
        let v = nullspace_onedim(&w).unwrap();
        let ratio = v[0] / v[1];
        assert!((ratio - c(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn nullspace_degenerate() {
        let err = nullspace_onedim(&diag(&[0.0, 0.0, 1.0])).unwrap_err();
        assert!(matches!(err, LinalgError::DegenerateNullSpace { .. }));
    }

    #[test]
    fn root_finder_examples() {
        let t = find_root_increasing(|t| 1.0 - (-t).exp(), 1.0 - (-1f64).exp(), RootOptions::default())
            .unwrap();
        assert!((t - 1.0).abs() < 1e-9);
        let t = find_root_increasing(|t| t / (1.0 + t), 0.5, RootOptions::default()).unwrap();
        assert!((t - 1.0).abs() < 1e-9);
    }

    #[test]
    fn root_finder_exponential_mixture() {
        let cdf = |t: f64| 1.0 - 0.3 * (-0.1 * t).exp() - 0.7 * (-5.0 * t).exp();
        let dcdf = |t: f64| 0.03 * (-0.1 * t).exp() + 3.5 * (-5.0 * t).exp();
        for &target in &[0.01, 0.5, 0.9, 0.999] {
            let t = find_root_increasing(cdf, target, RootOptions::default()).unwrap();
            assert!((cdf(t) - target).abs() <= 1e-10);
            let t = find_root_increasing_newton(|t| (cdf(t), dcdf(t)), target, RootOptions::default())
                .unwrap();
            assert!((cdf(t) - target).abs() <= 1e-10);
        }
    }

    #[test]
    fn root_finder_plateau_errors() {
        let opts = RootOptions {
            t_start: 1.0,
            t_max: 1e3,
            tol: 1e-10,
        };
        let err = find_root_increasing(|t| 0.5 * (1.0 - (-t).exp()), 0.9, opts).unwrap_err();
        assert!(matches!(err, LinalgError::BracketExceeded { .. }));
    }

    #[test]
    fn vectorization_roundtrip_and_trace() {
        let m = lcg_matrix(4, 3, 1.0);
        let v = VectorizedOperator::from_matrix(&m);
        assert_eq!(v.to_matrix(), m);
        assert!((v.trace() - trace(&m)).norm() < 1e-15);
    }
}
