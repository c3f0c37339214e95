//! Dense complex linear algebra primitives.
//!
//! Everything here works on `nalgebra::DMatrix<Complex64>`. The routines are
//! pure; inputs are never mutated.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix.
pub type ComplexMatrix = DMatrix<Complex64>;
/// Dense complex column vector.
pub type ComplexVector = DVector<Complex64>;

/// Default relative singular-value threshold for [`numerical_rank`].
pub const RANK_THRESHOLD: f64 = 1e-9;
/// Relative asymmetry accepted by the Hermitian routines.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Isometry tolerance of a [`Frame`].
pub const FRAME_TOL: f64 = 1e-10;

const THETA_13: f64 = 5.371920351148152;
const PADE_13: [f64; 14] = [
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

/// Shorthand for a real scalar as a complex number.
#[inline]
pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// True when every entry is finite.
pub fn is_finite(a: &ComplexMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn ensure_finite(a: &ComplexMatrix, what: &'static str) -> Result<()> {
    if is_finite(a) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn ensure_square(a: &ComplexMatrix) -> Result<()> {
    if a.nrows() == a.ncols() {
        Ok(())
    } else {
        Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        })
    }
}

/// Operator (spectral) norm, the largest singular value. Zero for empty matrices.
pub fn op_norm(a: &ComplexMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().singular_values().max()
}

/// Maximum absolute column sum.
pub fn one_norm(a: &ComplexMatrix) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `(A + A*) / 2`.
pub fn hermitian_part(a: &ComplexMatrix) -> ComplexMatrix {
    (a + a.adjoint()) * c(0.5)
}

/// Real trace of a (nominally Hermitian) square matrix.
pub fn real_trace(a: &ComplexMatrix) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
///
/// `accuracy_target` is the relative accuracy requested; anything down to
/// `1e-15` is met by this scheme, tighter targets are rejected.
pub fn matrix_exponential(a: &ComplexMatrix, accuracy_target: f64) -> Result<ComplexMatrix> {
    ensure_square(a)?;
    ensure_finite(a, "matrix_exponential input")?;
    if !(accuracy_target >= 1e-15) {
        return Err(Error::InvalidParameter(format!(
            "accuracy_target {accuracy_target:e} is below the attainable 1e-15"
        )));
    }
    let n = a.nrows();
    let id = ComplexMatrix::identity(n, n);
    let norm = one_norm(a);
    if norm == 0.0 {
        return Ok(id);
    }
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let a = a * c(0.5f64.powi(s));
    let b = &PADE_13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * c(b[13]) + &a4 * c(b[11]) + &a2 * c(b[9]))
        + &a6 * c(b[7])
        + &a4 * c(b[5])
        + &a2 * c(b[3])
        + &id * c(b[1]);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * c(b[12]) + &a4 * c(b[10]) + &a2 * c(b[8]))
        + &a6 * c(b[6])
        + &a4 * c(b[4])
        + &a2 * c(b[2])
        + &id * c(b[0]);
    let lu = (&v - &u).lu();
    let mut r = lu
        .solve(&(&v + &u))
        .ok_or_else(|| Error::Precondition("Padé denominator is singular".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    ensure_finite(&r, "matrix_exponential output")?;
    Ok(r)
}

/// An `L x q` isometry `Φ*Φ = 1_q`. The empty frame (`q = 0`) is allowed and
/// represents the zero projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    m: ComplexMatrix,
}

impl Frame {
    /// Wrap a matrix after checking `‖Φ*Φ − 1‖ ≤ 1e-10`.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        ensure_finite(&m, "frame")?;
        let dev = isometry_defect(&m);
        if dev > FRAME_TOL {
            return Err(Error::Precondition(format!(
                "frame columns are not orthonormal (defect {dev:e})"
            )));
        }
        Ok(Frame { m })
    }

    /// Wrap a matrix the caller guarantees to be an isometry.
    pub(crate) fn from_isometry(m: ComplexMatrix) -> Self {
        Frame { m }
    }

    /// Empty frame of ambient dimension `l`.
    pub fn empty(l: usize) -> Self {
        Frame {
            m: ComplexMatrix::zeros(l, 0),
        }
    }

    /// Frame made of standard basis vectors at the given matrix rows (0-based).
    pub fn selector(l: usize, rows: impl IntoIterator<Item = usize>) -> Self {
        let rows: Vec<usize> = rows.into_iter().collect();
        let mut m = ComplexMatrix::zeros(l, rows.len());
        for (j, &r) in rows.iter().enumerate() {
            m[(r, j)] = c(1.0);
        }
        Frame { m }
    }

    /// The underlying `L x q` matrix.
    pub fn matrix(&self) -> &ComplexMatrix {
        &self.m
    }

    /// Ambient dimension `L`.
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// Number of columns `q`.
    pub fn rank(&self) -> usize {
        self.m.ncols()
    }

    /// The projection `ΦΦ*`.
    pub fn projector(&self) -> ComplexMatrix {
        &self.m * self.m.adjoint()
    }

    /// Consume and return the matrix.
    pub fn into_matrix(self) -> ComplexMatrix {
        self.m
    }
}

/// `‖M*M − 1‖` in operator norm.
pub fn isometry_defect(m: &ComplexMatrix) -> f64 {
    let q = m.ncols();
    if q == 0 {
        return 0.0;
    }
    op_norm(&(m.adjoint() * m - ComplexMatrix::identity(q, q)))
}

/// Orthonormal basis of `range(M)` for a full-column-rank `M`.
///
/// Rank is certified by requiring the smallest singular value to exceed
/// `1e-12` times the largest.
pub fn thin_orthonormalize(m: &ComplexMatrix) -> Result<Frame> {
    ensure_finite(m, "thin_orthonormalize input")?;
    let (l, q) = m.shape();
    if q == 0 {
        return Ok(Frame::empty(l));
    }
    if q > l {
        return Err(Error::RankDeficient {
            sigma: 0.0,
            threshold: 0.0,
        });
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let threshold = 1e-12 * smax;
    if !(smin > threshold) {
        return Err(Error::RankDeficient { sigma: smin, threshold });
    }
    Ok(Frame::from_isometry(m.clone().qr().q()))
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `eigenvalues`.
    pub eigenvectors: ComplexMatrix,
}

fn check_hermitian(a: &ComplexMatrix) -> Result<()> {
    ensure_square(a)?;
    ensure_finite(a, "Hermitian input")?;
    let scale = op_norm(a);
    let asym = op_norm(&(a - a.adjoint()));
    let tol = HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE);
    if asym > tol && asym > 0.0 {
        return Err(Error::NotHermitian {
            asymmetry: asym,
            tolerance: tol,
        });
    }
    Ok(())
}

/// Hermitian eigensolve. The input is symmetrized before solving.
pub fn hermitian_eigen(a: &ComplexMatrix) -> Result<HermitianEigen> {
    check_hermitian(a)?;
    Ok(hermitian_eigen_unchecked(&hermitian_part(a)))
}

pub(crate) fn hermitian_eigen_unchecked(a: &ComplexMatrix) -> HermitianEigen {
    let n = a.nrows();
    if n == 0 {
        return HermitianEigen {
            eigenvalues: vec![],
            eigenvectors: ComplexMatrix::zeros(0, 0),
        };
    }
    let se = a.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));
    let eigenvalues = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut eigenvectors = ComplexMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        eigenvectors.set_column(k, &se.eigenvectors.column(i));
    }
    HermitianEigen {
        eigenvalues,
        eigenvectors,
    }
}

/// Smallest eigenvalue `μ_1` of a Hermitian matrix.
pub fn smallest_eigenvalue(a: &ComplexMatrix) -> Result<f64> {
    check_hermitian(a)?;
    if a.nrows() == 0 {
        return Err(Error::Dimension("empty matrix has no eigenvalues".into()));
    }
    Ok(hermitian_eigen_unchecked(&hermitian_part(a)).eigenvalues[0])
}

/// Number of singular values above `rel_threshold` times the largest.
pub fn numerical_rank(a: &ComplexMatrix, rel_threshold: f64) -> Result<usize> {
    ensure_finite(a, "numerical_rank input")?;
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rank threshold {rel_threshold} outside (0, 1)"
        )));
    }
    if a.is_empty() {
        return Ok(0);
    }
    let sv = a.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > rel_threshold * smax).count())
}

/// `log det G` of a Hermitian positive-definite matrix through Cholesky.
pub fn hpd_logdet(g: &ComplexMatrix) -> Result<f64> {
    ensure_square(g)?;
    let ch = hermitian_part(g).cholesky().ok_or(Error::GramBreakdown)?;
    Ok(2.0 * ch.l_dirty().diagonal().iter().map(|z| z.re.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taylor_exp(a: &ComplexMatrix, terms: usize) -> ComplexMatrix {
        let n = a.nrows();
        let mut sum = ComplexMatrix::identity(n, n);
        let mut term = ComplexMatrix::identity(n, n);
        for k in 1..terms {
            term = &term * a * c(1.0 / k as f64);
            sum += &term;
        }
        sum
    }

    fn gram_schmidt(m: &ComplexMatrix) -> ComplexMatrix {
        let mut out = m.clone();
        for j in 0..m.ncols() {
            for _ in 0..2 {
                for i in 0..j {
                    let proj = out.column(i).dotc(&out.column(j));
                    let ci = out.column(i).clone_owned();
                    let mut cj = out.column_mut(j);
                    cj -= ci * proj;
                }
            }
            let nrm = out.column(j).norm();
            out.column_mut(j).scale_mut(1.0 / nrm);
        }
        out
    }

    fn lcg_matrix(r: usize, k: usize, seed: u64) -> ComplexMatrix {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        ComplexMatrix::from_fn(r, k, |_, _| Complex64::new(next(), next()))
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = matrix_exponential(&ComplexMatrix::zeros(3, 3), 1e-12).unwrap();
        assert_eq!(e, ComplexMatrix::identity(3, 3));
    }

    #[test]
    fn exp_of_diagonal() {
        let a = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c(2f64.ln()), c(0.0)]));
        let e = matrix_exponential(&a, 1e-12).unwrap();
        assert!((e[(0, 0)] - c(2.0)).norm() < 1e-14);
        assert!((e[(1, 1)] - c(1.0)).norm() < 1e-14);
        assert!(e[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn exp_of_generator_is_rotation() {
        let lam = 0.1;
        let a = ComplexMatrix::from_row_slice(2, 2, &[c(0.0), c(lam), c(-lam), c(0.0)]);
        let e = matrix_exponential(&a, 1e-12).unwrap();
        let want = ComplexMatrix::from_row_slice(2, 2, &[c(lam.cos()), c(lam.sin()), c(-lam.sin()), c(lam.cos())]);
        assert!(op_norm(&(e - want)) < 1e-15);
    }

    #[test]
    fn exp_matches_taylor_oracle_with_scaling() {
        for (seed, scale) in [(1u64, 0.01), (2, 1.0), (3, 9.0), (4, 30.0)] {
            let a = lcg_matrix(5, 5, seed) * c(scale / 5.0);
            let e = matrix_exponential(&a, 1e-12).unwrap();
            let t = taylor_exp(&a, 250);
            let bound = 1e-12 * op_norm(&a).exp();
            assert!(op_norm(&(e - t)) <= bound, "scale {scale}");
        }
    }

    #[test]
    fn exp_group_compatibility() {
        let a = lcg_matrix(6, 6, 9);
        let a = &a * c(1.0 / op_norm(&a));
        let prod = matrix_exponential(&a, 1e-12).unwrap() * matrix_exponential(&(-&a), 1e-12).unwrap();
        assert!(op_norm(&(prod - ComplexMatrix::identity(6, 6))) < 1e-10);
    }

    #[test]
    fn exp_rejects_bad_input() {
        assert!(matches!(
            matrix_exponential(&ComplexMatrix::zeros(2, 3), 1e-12),
            Err(Error::NotSquare { .. })
        ));
        let mut a = ComplexMatrix::zeros(2, 2);
        a[(0, 1)] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(matrix_exponential(&a, 1e-12), Err(Error::NonFinite(_))));
    }

    #[test]
    fn orthonormalize_examples() {
        let e = ComplexMatrix::identity(3, 2);
        let f = thin_orthonormalize(&e).unwrap();
        assert!(op_norm(&(f.projector() - &e * e.adjoint())) < 1e-14);

        let v = ComplexMatrix::from_column_slice(2, 1, &[c(3.0), c(4.0)]);
        let f = thin_orthonormalize(&v).unwrap();
        let phase = f.matrix()[(0, 0)] / f.matrix()[(0, 0)].norm();
        assert!((f.matrix()[(0, 0)] - phase * 0.6).norm() < 1e-14);
        assert!((f.matrix()[(1, 0)] - phase * 0.8).norm() < 1e-14);
    }

    #[test]
    fn orthonormalize_matches_gram_schmidt() {
        for seed in 0..20 {
            let m = lcg_matrix(6, 2, seed);
            let f = thin_orthonormalize(&m).unwrap();
            assert!(isometry_defect(f.matrix()) <= 1e-12);
            let gs = gram_schmidt(&m);
            assert!(op_norm(&(f.projector() - &gs * gs.adjoint())) < 1e-12);
        }
    }

    #[test]
    fn orthonormalize_is_idempotent_on_projectors() {
        let f = thin_orthonormalize(&lcg_matrix(7, 3, 5)).unwrap();
        let g = thin_orthonormalize(f.matrix()).unwrap();
        assert!(op_norm(&(f.projector() - g.projector())) < 1e-13);
    }

    #[test]
    fn orthonormalize_reports_rank_deficiency() {
        let mut m = lcg_matrix(4, 2, 3);
        let col = m.column(0).clone_owned() * c(2.0);
        m.set_column(1, &col);
        match thin_orthonormalize(&m) {
            Err(Error::RankDeficient { sigma, threshold }) => assert!(sigma <= threshold),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn smallest_eigenvalue_examples() {
        let d = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c(3.0), c(1.0), c(2.0)]));
        assert!((smallest_eigenvalue(&d).unwrap() - 1.0).abs() < 1e-14);
        let a = ComplexMatrix::from_row_slice(2, 2, &[c(2.0), c(1.0), c(1.0), c(2.0)]);
        assert!((smallest_eigenvalue(&a).unwrap() - 1.0).abs() < 1e-14);
        let f = thin_orthonormalize(&lcg_matrix(5, 2, 8)).unwrap();
        assert!(smallest_eigenvalue(&f.projector()).unwrap().abs() < 1e-14);
    }

    #[test]
    fn smallest_eigenvalue_rejects_non_hermitian() {
        let a = ComplexMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
        assert!(matches!(smallest_eigenvalue(&a), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn eigen_reconstruction_and_order() {
        let m = lcg_matrix(6, 6, 11);
        let h = hermitian_part(&m);
        let e = hermitian_eigen(&h).unwrap();
        assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let d = ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(6, e.eigenvalues.iter().map(|&x| c(x))));
        let rec = &e.eigenvectors * d * e.eigenvectors.adjoint();
        assert!(op_norm(&(rec - &h)) <= 1e-10 * op_norm(&h).max(1.0));
        assert!(isometry_defect(&e.eigenvectors) < 1e-12);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&ComplexMatrix::zeros(3, 3), RANK_THRESHOLD).unwrap(), 0);
        let v = lcg_matrix(5, 1, 2);
        assert_eq!(numerical_rank(&(&v * v.adjoint()), RANK_THRESHOLD).unwrap(), 1);
        let f = thin_orthonormalize(&lcg_matrix(8, 3, 4)).unwrap();
        assert_eq!(numerical_rank(&f.projector(), RANK_THRESHOLD).unwrap(), 3);
    }

    #[test]
    fn logdet_matches_eigenvalues() {
        let m = lcg_matrix(4, 4, 6);
        let g = m.adjoint() * &m + ComplexMatrix::identity(4, 4);
        let e = hermitian_eigen(&g).unwrap();
        let want: f64 = e.eigenvalues.iter().map(|x| x.ln()).sum();
        assert!((hpd_logdet(&g).unwrap() - want).abs() < 1e-12);
    }
}
