//! Grassmannian points as projections, and the three actions of `GL(L)` on them.
//!
//! A [`Projection`] keeps an orthonormal frame as its authoritative state; the
//! `L x L` matrix is derived on demand. Frames carry no canonical gauge, so
//! every exported quantity is computed in a gauge-invariant way.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{c, op_norm, real_trace, ComplexMatrix, ComplexVector, Frame};
use crate::partition::StabilitySpec;

/// Tolerance on the projection invariants `Q² = Q = Q*`, `tr Q = q`.
pub const PROJECTION_TOL: f64 = 1e-9;
/// Norm below which an image vector counts as vanished.
pub const VANISHING_NORM: f64 = 1e-14;

/// Anything that can be applied to a block of column vectors.
pub trait Operator {
    /// Ambient dimension `L`.
    fn dim(&self) -> usize;
    /// `T · M` for an `L x k` block `M`.
    fn apply(&self, m: &ComplexMatrix) -> ComplexMatrix;
}

impl Operator for ComplexMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, m: &ComplexMatrix) -> ComplexMatrix {
        self * m
    }
}

/// Rank-`q` orthogonal projection on `C^L`.
#[derive(Clone, Debug)]
pub struct Projection {
    frame: Frame,
}

impl Projection {
    /// Projection onto the range of a frame.
    pub fn from_frame(frame: Frame) -> Self {
        Projection { frame }
    }

    /// Zero projection on `C^l`.
    pub fn zero(l: usize) -> Self {
        Projection { frame: Frame::empty(l) }
    }

    /// Projection onto standard basis vectors at the given 0-based rows.
    pub fn coordinate(l: usize, rows: impl IntoIterator<Item = usize>) -> Self {
        Projection {
            frame: Frame::selector(l, rows),
        }
    }

    /// Build from a full matrix after checking the projection invariants.
    pub fn from_matrix(q: &ComplexMatrix) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::NotSquare {
                rows: q.nrows(),
                cols: q.ncols(),
            });
        }
        let l = q.nrows();
        let herm = op_norm(&(q - q.adjoint()));
        let idem = op_norm(&(q * q - q));
        let tr = real_trace(q);
        let rank = tr.round();
        if herm > PROJECTION_TOL || idem > PROJECTION_TOL || (tr - rank).abs() > PROJECTION_TOL {
            return Err(Error::Precondition(format!(
                "not a projection (asymmetry {herm:e}, idempotency defect {idem:e}, trace {tr})"
            )));
        }
        let eig = crate::linalg::hermitian_eigen_unchecked(&crate::linalg::hermitian_part(q));
        let k = rank as usize;
        let cols = eig.eigenvectors.columns(l - k, k).clone_owned();
        Ok(Projection {
            frame: Frame::from_isometry(cols),
        })
    }

    /// Authoritative frame `Φ` with `Q = ΦΦ*`.
    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    /// The `L x L` matrix `ΦΦ*`.
    pub fn matrix(&self) -> ComplexMatrix {
        self.frame.projector()
    }

    /// Rank `q`.
    pub fn rank(&self) -> usize {
        self.frame.rank()
    }

    /// Ambient dimension `L`.
    pub fn dim(&self) -> usize {
        self.frame.dim()
    }

    /// Largest deviation among `‖Q² − Q‖`, `‖Q − Q*‖`, `|tr Q − q|`.
    pub fn invariant_defect(&self) -> f64 {
        let q = self.matrix();
        let idem = op_norm(&(&q * &q - &q));
        let herm = op_norm(&(&q - q.adjoint()));
        let tr = (real_trace(&q) - self.rank() as f64).abs();
        idem.max(herm).max(tr)
    }

    /// `‖Φ_rows‖²`, the operator norm of the compression of `Q` to a set of
    /// consecutive coordinate rows.
    pub fn block_norm(&self, rows: Range<usize>) -> f64 {
        block_norm_sq(self.frame.matrix(), rows)
    }

    /// `tr` of the compression of `Q` to consecutive coordinate rows.
    pub fn block_trace(&self, rows: Range<usize>) -> f64 {
        let m = self.frame.matrix();
        rows.map(|r| m.row(r).iter().map(|z| z.norm_sqr()).sum::<f64>()).sum()
    }
}

pub(crate) fn block_norm_sq(m: &ComplexMatrix, rows: Range<usize>) -> f64 {
    if rows.is_empty() || m.ncols() == 0 {
        return 0.0;
    }
    if m.ncols() == 1 {
        return rows.map(|r| m[(r, 0)].norm_sqr()).sum();
    }
    let sub = m.rows(rows.start, rows.len());
    let g = sub.adjoint() * sub;
    crate::linalg::hermitian_eigen_unchecked(&g)
        .eigenvalues
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(0.0)
}

/// Unit vector in `C^L`.
#[derive(Clone, Debug)]
pub struct UnitVector {
    v: ComplexVector,
}

impl UnitVector {
    /// Normalize a nonzero vector.
    pub fn normalize(v: ComplexVector) -> Result<Self> {
        let n = v.norm();
        if !(n > VANISHING_NORM) || !n.is_finite() {
            return Err(Error::Degenerate(n));
        }
        Ok(UnitVector { v: v / c(n) })
    }

    /// Standard basis vector at a 0-based row.
    pub fn basis(l: usize, row: usize) -> Self {
        let mut v = ComplexVector::zeros(l);
        v[row] = c(1.0);
        UnitVector { v }
    }

    /// Entries.
    pub fn as_vector(&self) -> &ComplexVector {
        &self.v
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// `‖v_rows‖²` for consecutive coordinate rows.
    pub fn block_mass(&self, rows: Range<usize>) -> f64 {
        rows.map(|r| self.v[r].norm_sqr()).sum()
    }
}

/// A point of `𝔚`: a projection `W` and a unit vector `v` with `Wv = 0`.
#[derive(Clone, Debug)]
pub struct GrassmannPair {
    /// Rank-`w` projection.
    pub w: Projection,
    /// Unit vector orthogonal to `range(W)`.
    pub v: UnitVector,
}

impl GrassmannPair {
    /// Build a pair after checking `‖Wv‖ ≤ 1e-9`.
    pub fn new(w: Projection, v: UnitVector) -> Result<Self> {
        if w.dim() != v.dim() {
            return Err(Error::Dimension(format!(
                "projection on C^{} paired with vector in C^{}",
                w.dim(),
                v.dim()
            )));
        }
        let overlap = (w.frame().matrix().adjoint() * v.as_vector()).norm();
        if overlap > PROJECTION_TOL {
            return Err(Error::Precondition(format!(
                "vector is not orthogonal to W (‖Wv‖ = {overlap:e})"
            )));
        }
        Ok(GrassmannPair { w, v })
    }

    /// The rank-`(w+1)` projection `W + vv*`.
    pub fn combined(&self) -> Projection {
        let phi = self.w.frame().matrix();
        let mut m = ComplexMatrix::zeros(phi.nrows(), phi.ncols() + 1);
        m.columns_mut(0, phi.ncols()).copy_from(phi);
        m.set_column(phi.ncols(), self.v.as_vector());
        Projection::from_frame(Frame::from_isometry(m))
    }
}

/// Image frame of `range(TΦ)` plus the log-diagonal of its triangular factor.
///
/// `TΦ = Φ' R` with `R` upper triangular with positive diagonal; the returned
/// logs are `log R_ii`, so leading partial sums give half log-determinants of
/// leading principal minors of `Φ*T*TΦ`.
pub fn push_frame<T: Operator + ?Sized>(t: &T, phi: &Frame) -> Result<(Frame, Vec<f64>)> {
    if t.dim() != phi.dim() {
        return Err(Error::Dimension(format!(
            "operator on C^{} applied to frame in C^{}",
            t.dim(),
            phi.dim()
        )));
    }
    if phi.rank() == 0 {
        return Ok((phi.clone(), vec![]));
    }
    let tphi = t.apply(phi.matrix());
    let (f1, d1) = cholesky_qr(&tphi)?;
    // Second pass restores orthonormality lost to the Gram conditioning.
    let (f2, d2) = cholesky_qr(&f1)?;
    let logs = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
    Ok((Frame::from_isometry(f2), logs))
}

fn cholesky_qr(m: &ComplexMatrix) -> Result<(ComplexMatrix, Vec<f64>)> {
    let g = m.adjoint() * m;
    let g = (&g + g.adjoint()) * c(0.5);
    let ch = g.cholesky().ok_or(Error::GramBreakdown)?;
    let l = ch.l();
    let logs: Vec<f64> = l.diagonal().iter().map(|z| z.re.ln()).collect();
    if logs.iter().any(|x| !x.is_finite()) {
        return Err(Error::GramBreakdown);
    }
    // Φ' = M L^{-*}, i.e. L Φ'* = M*.
    let mut y = m.adjoint();
    if !l.solve_lower_triangular_mut(&mut y) {
        return Err(Error::GramBreakdown);
    }
    Ok((y.adjoint(), logs))
}

/// `T·Q`, the projection onto `range(TQ)`.
pub fn act_projection<T: Operator + ?Sized>(t: &T, q: &Projection) -> Result<Projection> {
    Ok(Projection::from_frame(push_frame(t, q.frame())?.0))
}

/// `T∘v = Tv / ‖Tv‖`.
pub fn act_vector<T: Operator + ?Sized>(t: &T, v: &UnitVector) -> Result<UnitVector> {
    if t.dim() != v.dim() {
        return Err(Error::Dimension(format!(
            "operator on C^{} applied to vector in C^{}",
            t.dim(),
            v.dim()
        )));
    }
    let tv = t.apply(&as_column(v.as_vector()));
    UnitVector::normalize(tv.column(0).clone_owned())
}

fn as_column(v: &ComplexVector) -> ComplexMatrix {
    ComplexMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// `T⋆(W, v) = (T·W, ((T·W)^⊥ T)∘v)`.
pub fn act_pair<T: Operator + ?Sized>(t: &T, p: &GrassmannPair) -> Result<GrassmannPair> {
    let w_new = act_projection(t, &p.w)?;
    let tv = t.apply(&as_column(p.v.as_vector())).column(0).clone_owned();
    let psi = w_new.frame().matrix();
    let mut u = tv;
    for _ in 0..2 {
        let coeff = psi.adjoint() * &u;
        u -= psi * coeff;
    }
    let n = u.norm();
    if !(n > VANISHING_NORM) {
        return Err(Error::Degenerate(n));
    }
    Ok(GrassmannPair {
        w: w_new,
        v: UnitVector { v: u / c(n) },
    })
}

/// `1 − Q`.
pub fn complement_projection(q: &Projection) -> Projection {
    let l = q.dim();
    let k = q.rank();
    if k == 0 {
        return Projection::coordinate(l, 0..l);
    }
    if k == l {
        return Projection::zero(l);
    }
    let comp = ComplexMatrix::identity(l, l) - q.matrix();
    let eig = crate::linalg::hermitian_eigen_unchecked(&crate::linalg::hermitian_part(&comp));
    let cols = eig.eigenvectors.columns(k, l - k).clone_owned();
    Projection::from_frame(Frame::from_isometry(cols))
}

/// `d(Q) = tr(α̂*Qα̂)`, the mass of `Q` on the most unstable block.
pub fn observable_d(q: &Projection, spec: &StabilitySpec) -> Result<f64> {
    if q.dim() != spec.dim() {
        return Err(Error::Dimension(format!(
            "projection on C^{} with spec of dimension {}",
            q.dim(),
            spec.dim()
        )));
    }
    if q.rank() > spec.lb + spec.lc {
        return Err(Error::Precondition(format!(
            "rank {} exceeds lb + lc = {}",
            q.rank(),
            spec.lb + spec.lc
        )));
    }
    Ok(q.block_trace(spec.rows_a()))
}

/// `v` as an `L x 1` matrix.
pub fn column_of(v: &UnitVector) -> ComplexMatrix {
    as_column(v.as_vector())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{thin_orthonormalize, ComplexVector};
    use num_complex::Complex64;

    fn diag(xs: &[f64]) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(xs.len(), xs.iter().map(|&x| c(x))))
    }

    #[test]
    fn scalar_acts_trivially() {
        let q = Projection::from_frame(
            thin_orthonormalize(&ComplexMatrix::from_fn(4, 2, |i, j| {
                c((i * 3 + j) as f64 + 0.5 * (i * j) as f64)
            }))
            .unwrap(),
        );
        let t = ComplexMatrix::identity(4, 4) * Complex64::new(-2.0, 1.0);
        let out = act_projection(&t, &q).unwrap();
        assert!(op_norm(&(out.matrix() - q.matrix())) < 1e-14);
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        let v = UnitVector::normalize(ComplexVector::from_vec(vec![c(1.0), c(1.0)])).unwrap();
        let q = Projection::from_frame(Frame::from_isometry(column_of(&v)));
        let out = act_projection(&diag(&[2.0, 1.0]), &q).unwrap();
        let want = ComplexMatrix::from_row_slice(2, 2, &[c(0.8), c(0.4), c(0.4), c(0.2)]);
        assert!(op_norm(&(out.matrix() - want)) < 1e-15);
    }

    #[test]
    fn vector_action_examples() {
        let swap = ComplexMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let out = act_vector(&swap, &UnitVector::basis(2, 0)).unwrap();
        assert!((out.as_vector()[1] - c(1.0)).norm() < 1e-15);

        let v = UnitVector::normalize(ComplexVector::from_vec(vec![c(1.0), c(1.0)])).unwrap();
        let same = act_vector(&(ComplexMatrix::identity(2, 2) * c(3.0)), &v).unwrap();
        assert!((same.as_vector() - v.as_vector()).norm() < 1e-15);

        let out = act_vector(&diag(&[2.0, 1.0]), &v).unwrap();
        let s = 5f64.sqrt();
        assert!((out.as_vector()[0] - c(2.0 / s)).norm() < 1e-15);
        assert!((out.as_vector()[1] - c(1.0 / s)).norm() < 1e-15);
    }

    #[test]
    fn vector_action_detects_singular_operator() {
        let t = diag(&[0.0, 1.0]);
        assert!(matches!(
            act_vector(&t, &UnitVector::basis(2, 0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn pair_with_empty_w() {
        let t = diag(&[2.0, 1.0, 0.5]);
        let v = UnitVector::normalize(ComplexVector::from_vec(vec![c(1.0), c(1.0), c(1.0)])).unwrap();
        let p = GrassmannPair::new(Projection::zero(3), v.clone()).unwrap();
        let out = act_pair(&t, &p).unwrap();
        assert_eq!(out.w.rank(), 0);
        let direct = act_vector(&t, &v).unwrap();
        assert!((out.v.as_vector() - direct.as_vector()).norm() < 1e-15);
    }

    #[test]
    fn pair_invariant_configuration() {
        let t = diag(&[3.0, 2.0, 1.0]);
        let p = GrassmannPair::new(Projection::coordinate(3, [0]), UnitVector::basis(3, 2)).unwrap();
        let out = act_pair(&t, &p).unwrap();
        assert!(op_norm(&(out.w.matrix() - p.w.matrix())) < 1e-15);
        assert!((out.v.as_vector()[2].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pair_rejects_non_orthogonal() {
        let v = UnitVector::normalize(ComplexVector::from_vec(vec![c(1.0), c(1.0)])).unwrap();
        assert!(GrassmannPair::new(Projection::coordinate(2, [0]), v).is_err());
    }

    #[test]
    fn complement_examples() {
        let z = Projection::zero(3);
        let comp = complement_projection(&z);
        assert!(op_norm(&(comp.matrix() - ComplexMatrix::identity(3, 3))) < 1e-15);
        let q = Projection::coordinate(4, [1, 3]);
        let back = complement_projection(&complement_projection(&q));
        assert!(op_norm(&(back.matrix() - q.matrix())) < 1e-14);
    }

    #[test]
    fn observable_d_examples() {
        let spec = StabilitySpec::new(vec![4.0, 3.0, 2.0, 1.0], 2, 1, 1).unwrap();
        let bc = Projection::coordinate(4, [2, 3]);
        assert!(observable_d(&bc, &spec).unwrap().abs() < 1e-15);
        let a = Projection::coordinate(4, [0, 1]);
        assert!((observable_d(&a, &spec).unwrap() - 2.0).abs() < 1e-15);
        let v = UnitVector::normalize(ComplexVector::from_vec(vec![c(1.0), c(0.0), c(1.0), c(0.0)])).unwrap();
        let q = Projection::from_frame(Frame::from_isometry(column_of(&v)));
        assert!((observable_d(&q, &spec).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn observable_d_rejects_large_rank() {
        let spec = StabilitySpec::new(vec![4.0, 3.0, 2.0, 1.0], 2, 1, 1).unwrap();
        let q = Projection::coordinate(4, [0, 1, 2]);
        assert!(observable_d(&q, &spec).is_err());
    }

    #[test]
    fn from_matrix_round_trip() {
        let f = thin_orthonormalize(&ComplexMatrix::from_fn(5, 2, |i, j| {
            Complex64::new((i + 2 * j) as f64, (i * j) as f64 - 1.0)
        }))
        .unwrap();
        let q = Projection::from_frame(f);
        let back = Projection::from_matrix(&q.matrix()).unwrap();
        assert_eq!(back.rank(), 2);
        assert!(op_norm(&(back.matrix() - q.matrix())) < 1e-12);
        assert!(Projection::from_matrix(&(q.matrix() * c(2.0))).is_err());
    }
}
