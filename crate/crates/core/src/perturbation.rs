//! Second-order expansion of the projection action in the coupling λ, the
//! vector expansion functional `A_𝔡`, and a third-order eigenvalue bound.
//!
//! `Z^{(λ)}` is obtained without forming `(e^{λP}·Q − Q − λX − λ²Y)/λ³`
//! numerically: the frame image, its Gram inverse and the resulting projection
//! are carried as truncated power series in λ with an exact remainder, so the
//! `λ³` coefficient comes out at full working precision for every λ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{act_pair, GrassmannPair, Projection, PROJECTION_TOL};
use crate::linalg::{c, hermitian_eigen, numerical_rank, op_norm, real_trace, ComplexMatrix, Frame, RANK_THRESHOLD};

/// Largest admissible coupling for the expansion estimates.
pub const LAMBDA_MAX: f64 = 1.0 / 64.0;
/// Slack on `‖P‖ ≤ 1`.
pub const P_NORM_SLACK: f64 = 1e-12;
/// Relative spacing below which an eigenvalue counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// `c0 + λ c1 + λ² c2 + λ³ r`, with `r` the exact remainder.
#[derive(Clone, Debug)]
struct Series3 {
    c0: ComplexMatrix,
    c1: ComplexMatrix,
    c2: ComplexMatrix,
    r: ComplexMatrix,
}

impl Series3 {
    fn truncated(&self, lambda: f64) -> ComplexMatrix {
        &self.c0 + &self.c1 * c(lambda) + &self.c2 * c(lambda * lambda)
    }

    fn full(&self, lambda: f64) -> ComplexMatrix {
        self.truncated(lambda) + &self.r * c(lambda.powi(3))
    }

    fn adjoint(&self) -> Series3 {
        Series3 {
            c0: self.c0.adjoint(),
            c1: self.c1.adjoint(),
            c2: self.c2.adjoint(),
            r: self.r.adjoint(),
        }
    }

    fn mul(&self, b: &Series3, lambda: f64) -> Series3 {
        let a = self;
        let r = &a.c1 * &b.c2
            + &a.c2 * &b.c1
            + (&a.c2 * &b.c2) * c(lambda)
            + &a.r * b.full(lambda)
            + a.truncated(lambda) * &b.r;
        Series3 {
            c0: &a.c0 * &b.c0,
            c1: &a.c0 * &b.c1 + &a.c1 * &b.c0,
            c2: &a.c0 * &b.c2 + &a.c1 * &b.c1 + &a.c2 * &b.c0,
            r,
        }
    }
}

/// `Σ_{n≥3} λ^{n−3} Pⁿ / n!`.
fn exp_remainder(p: &ComplexMatrix, lambda: f64) -> ComplexMatrix {
    let mut term = p * p * p / c(6.0);
    let mut acc = term.clone();
    for n in 4..64 {
        term = (&term * p) * c(lambda / n as f64);
        acc += &term;
        if term.norm() <= 1e-3 * f64::EPSILON {
            break;
        }
    }
    acc
}

/// `X(Q, P) = Q^⊥PQ + QP*Q^⊥`.
pub fn x_map(q: &ComplexMatrix, p: &ComplexMatrix) -> ComplexMatrix {
    let qp = complement_matrix(q);
    &qp * p * q + q * p.adjoint() * &qp
}

/// `Y(Q, P)`, the second-order coefficient of `e^{λP}·Q`.
pub fn y_map(q: &ComplexMatrix, p: &ComplexMatrix) -> ComplexMatrix {
    let qp = complement_matrix(q);
    let ps = p.adjoint();
    let diff = &qp - q;
    &qp * p * q * &ps * &qp - q * &ps * &qp * p * q + (&qp * p * &diff * p * q + q * &ps * &diff * &ps * &qp) * c(0.5)
}

fn complement_matrix(q: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::identity(q.nrows(), q.ncols()) - q
}

/// The maps `X, Y, Z^{(λ)}` at one `(Q, P, λ)`.
#[derive(Clone, Debug)]
pub struct ExpansionTriple {
    /// First-order coefficient.
    pub x: ComplexMatrix,
    /// Second-order coefficient.
    pub y: ComplexMatrix,
    /// Third-order remainder coefficient.
    pub z: ComplexMatrix,
    /// Coupling.
    pub lambda: f64,
}

impl ExpansionTriple {
    /// `Q + λX + λ²Y + λ³Z`.
    pub fn reconstruct(&self, q: &ComplexMatrix) -> ComplexMatrix {
        let l = self.lambda;
        q + &self.x * c(l) + &self.y * c(l * l) + &self.z * c(l.powi(3))
    }

    /// `(‖X‖, ‖Y‖, ‖Z‖)`.
    pub fn norms(&self) -> (f64, f64, f64) {
        (op_norm(&self.x), op_norm(&self.y), op_norm(&self.z))
    }
}

fn check_inputs(l: usize, p: &ComplexMatrix, lambda: f64) -> Result<()> {
    if p.nrows() != l || p.ncols() != l {
        return Err(Error::Dimension(format!(
            "perturbation is {}x{}, expected {l}x{l}",
            p.nrows(),
            p.ncols()
        )));
    }
    if !(0.0..=LAMBDA_MAX).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("λ = {lambda} outside [0, 2^-6]")));
    }
    let n = op_norm(p);
    if n > 1.0 + P_NORM_SLACK {
        return Err(Error::InvalidParameter(format!("‖P‖ = {n} exceeds 1")));
    }
    Ok(())
}

/// Expand `e^{λP}·Q = Q + λX + λ²Y + λ³Z^{(λ)}`.
///
/// `X` and `Y` come from their closed forms; `Z` is the exact third-order
/// remainder evaluated by series arithmetic on the frame.
pub fn expansion_maps(q: &Projection, p: &ComplexMatrix, lambda: f64) -> Result<ExpansionTriple> {
    let l = q.dim();
    check_inputs(l, p, lambda)?;
    let qm = q.matrix();
    let x = x_map(&qm, p);
    let y = y_map(&qm, p);
    let z = if q.rank() == 0 || q.rank() == l {
        ComplexMatrix::zeros(l, l)
    } else {
        projection_series(q.frame(), p, lambda).r
    };
    Ok(ExpansionTriple { x, y, z, lambda })
}

/// Series of `e^{λP}·Q` from a frame of `Q`.
fn projection_series(phi: &Frame, p: &ComplexMatrix, lambda: f64) -> Series3 {
    let f = phi.matrix();
    let k = f.ncols();
    let pf = p * f;
    let a = Series3 {
        c0: f.clone(),
        c1: pf.clone(),
        c2: (p * &pf) * c(0.5),
        r: exp_remainder(p, lambda) * f,
    };
    let ad = a.adjoint();
    let g = ad.mul(&a, lambda);
    let id = ComplexMatrix::identity(k, k);
    let h1 = &g.c1;
    let h2 = &g.c2;
    // S = 1 − λH1 + λ²(H1² − H2) inverts G up to G·S = 1 + λ³E.
    let s = Series3 {
        c0: id.clone(),
        c1: -h1.clone(),
        c2: h1 * h1 - h2,
        r: ComplexMatrix::zeros(k, k),
    };
    let g1 = Series3 {
        c0: id.clone(),
        c1: h1.clone(),
        c2: h2.clone(),
        r: g.r.clone(),
    };
    let e = g1.mul(&s, lambda).r;
    let s_full = s.truncated(lambda);
    let corr = (&id + &e * c(lambda.powi(3)))
        .try_inverse()
        .expect("1 + λ³E is a small perturbation of the identity");
    let ginv = Series3 {
        c0: id,
        c1: s.c1.clone(),
        c2: s.c2.clone(),
        r: -(s_full * e * corr),
    };
    a.mul(&ginv, lambda).mul(&ad, lambda)
}

/// Coefficients `(C0, C1, C2)` of the series route, for cross-checking the
/// closed forms of `Q`, `X`, `Y`.
pub fn series_coefficients(q: &Projection, p: &ComplexMatrix, lambda: f64) -> Result<[ComplexMatrix; 3]> {
    check_inputs(q.dim(), p, lambda)?;
    if q.rank() == 0 {
        let z = ComplexMatrix::zeros(q.dim(), q.dim());
        return Ok([z.clone(), z.clone(), z]);
    }
    let s = projection_series(q.frame(), p, lambda);
    Ok([s.c0, s.c1, s.c2])
}

/// Naive residual `(e^{λP}·Q − Q − λX − λ²Y)/λ³` through a dense exponential.
pub fn naive_z(q: &Projection, p: &ComplexMatrix, lambda: f64) -> Result<ComplexMatrix> {
    check_inputs(q.dim(), p, lambda)?;
    if lambda == 0.0 {
        return Err(Error::InvalidParameter("naive residual needs λ > 0".into()));
    }
    let t = crate::linalg::matrix_exponential(&(p * c(lambda)), 1e-15)?;
    let img = crate::grassmann::act_projection(&t, q)?.matrix();
    let qm = q.matrix();
    let rest = img - &qm - x_map(&qm, p) * c(lambda) - y_map(&qm, p) * c(lambda * lambda);
    Ok(rest / c(lambda.powi(3)))
}

/// Ranks of the differences of `X`, `Y`, `Z` when `Q′ ⟂ Q` is added.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankCertificate {
    /// `rk(Q′)`.
    pub rank_q_prime: usize,
    /// `rk(X(Q+Q′) − X(Q))`, allowed up to `2 rk(Q′)`.
    pub rank_dx: usize,
    /// `rk(Y(Q+Q′) − Y(Q))`, allowed up to `3 rk(Q′)`.
    pub rank_dy: usize,
    /// `rk(Z(Q+Q′) − Z(Q))`, allowed up to `4 rk(Q′)`.
    pub rank_dz: usize,
}

impl RankCertificate {
    /// All three rank bounds hold.
    pub fn holds(&self) -> bool {
        let r = self.rank_q_prime;
        self.rank_dx <= 2 * r && self.rank_dy <= 3 * r && self.rank_dz <= 4 * r
    }
}

/// Rank certificates for `Q` and an orthogonal `Q′`.
pub fn rank_certificate(
    q: &Projection,
    q_prime: &Projection,
    p: &ComplexMatrix,
    lambda: f64,
) -> Result<RankCertificate> {
    if q.dim() != q_prime.dim() {
        return Err(Error::Dimension("Q and Q′ live in different dimensions".into()));
    }
    let overlap = op_norm(&(q.frame().matrix().adjoint() * q_prime.frame().matrix()));
    if overlap > PROJECTION_TOL {
        return Err(Error::Precondition(format!("QQ′ ≠ 0 (‖Φ*Φ′‖ = {overlap:e})")));
    }
    let sum = {
        let a = q.frame().matrix();
        let b = q_prime.frame().matrix();
        let mut m = ComplexMatrix::zeros(q.dim(), a.ncols() + b.ncols());
        m.columns_mut(0, a.ncols()).copy_from(a);
        m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
        Projection::from_frame(crate::linalg::thin_orthonormalize(&m)?)
    };
    let t0 = expansion_maps(q, p, lambda)?;
    let t1 = expansion_maps(&sum, p, lambda)?;
    Ok(RankCertificate {
        rank_q_prime: q_prime.rank(),
        rank_dx: numerical_rank(&(t1.x - t0.x), RANK_THRESHOLD)?,
        rank_dy: numerical_rank(&(t1.y - t0.y), RANK_THRESHOLD)?,
        rank_dz: numerical_rank(&(t1.z - t0.z), RANK_THRESHOLD)?,
    })
}

/// One evaluation of the vector expansion estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorExpansionReport {
    /// `A_𝔡(W, v, P)`.
    pub a_d: f64,
    /// `‖𝔡(v′)‖² − ‖𝔡(v)‖²` for `(W′, v′) = e^{λP}⋆(W, v)`.
    pub delta: f64,
    /// `|delta − λ A_𝔡|`.
    pub second_order_residual: f64,
    /// `(3/2)λ`.
    pub first_order_bound: f64,
    /// `9λ² + 160λ³`.
    pub second_order_bound: f64,
}

impl VectorExpansionReport {
    /// `|delta| ≤ (3/2)λ`, `|A_𝔡| ≤ √2` and the second-order residual bound.
    pub fn violations(&self) -> usize {
        usize::from(self.delta.abs() > self.first_order_bound)
            + usize::from(self.a_d.abs() > std::f64::consts::SQRT_2)
            + usize::from(self.second_order_residual > self.second_order_bound)
    }
}

/// `A_𝔡 = tr(Ψ̂*[X(W+vv*, P) − X(W, P)]Ψ̂)` together with the one-step change
/// of `‖Ψ̂*v‖²` under the pair action of `e^{λP}`.
pub fn vector_expansion_a(
    pair: &GrassmannPair,
    p: &ComplexMatrix,
    psi_hat: &Frame,
    lambda: f64,
) -> Result<VectorExpansionReport> {
    let l = pair.w.dim();
    if psi_hat.dim() != l {
        return Err(Error::Dimension(format!(
            "frame in C^{} used with pair in C^{l}",
            psi_hat.dim()
        )));
    }
    check_inputs(l, p, lambda)?;
    let w = pair.w.matrix();
    let wv = pair.combined().matrix();
    let dx = x_map(&wv, p) - x_map(&w, p);
    let psi = psi_hat.matrix();
    let a_d = real_trace(&(psi.adjoint() * dx * psi));

    let t = if lambda == 0.0 {
        ComplexMatrix::identity(l, l)
    } else {
        crate::linalg::matrix_exponential(&(p * c(lambda)), 1e-15)?
    };
    let next = act_pair(&t, pair)?;
    let mass = |v: &crate::linalg::ComplexVector| (psi.adjoint() * v).norm_squared();
    let delta = mass(next.v.as_vector()) - mass(pair.v.as_vector());
    Ok(VectorExpansionReport {
        a_d,
        delta,
        second_order_residual: (delta - lambda * a_d).abs(),
        first_order_bound: 1.5 * lambda,
        second_order_bound: 9.0 * lambda * lambda + 160.0 * lambda.powi(3),
    })
}

/// Second-order expansion of the lowest eigenvalue of `H0 + λH1 + λ²H2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigPerturbationReport {
    /// Lowest eigenvalue of `H`.
    pub e0_exact: f64,
    /// `E_0 + λ⟨ψ_0|H_1ψ_0⟩ + λ²⟨ψ_0|H_2ψ_0⟩ − λ²Σ_k |⟨ψ_0|H_1ψ_k⟩|²/(E_k − E_0)`.
    pub e0_second_order: f64,
    /// `E^{(λ)} = (e0_exact − e0_second_order)/λ³`.
    pub residual: f64,
    /// Right-hand side of the third-order bound.
    pub bound: f64,
    /// `G = min(E_1 − E_0, min_k |E_0 − E_k^{(λ)}| + g)`, the largest admissible gap.
    pub gap_big: f64,
    /// `|E_0^{(λ)} − E_0|`.
    pub gap_small: f64,
    /// Coupling.
    pub lambda: f64,
}

impl EigPerturbationReport {
    /// `|E^{(λ)}| ≤ bound`.
    pub fn within_bound(&self) -> bool {
        self.residual.abs() <= self.bound
    }
}

/// Fix the phase of each column so that its largest-modulus entry is real positive.
pub fn pin_phases(v: &mut ComplexMatrix) {
    for mut col in v.column_iter_mut() {
        let (mut best, mut idx) = (-1.0, 0);
        for (i, z) in col.iter().enumerate() {
            if z.norm() > best + 1e-14 {
                best = z.norm();
                idx = i;
            }
        }
        if best > 0.0 {
            let ph = col[idx].conj() / c(best);
            col *= ph;
        }
    }
}

/// Compare the exact lowest eigenvalue of `H0 + λH1 + λ²H2` with its
/// second-order expansion and the third-order error bound.
pub fn eig_perturb(
    h0: &ComplexMatrix,
    h1: &ComplexMatrix,
    h2: &ComplexMatrix,
    lambda: f64,
) -> Result<EigPerturbationReport> {
    let n = h0.nrows();
    if n < 2 || [h1, h2].iter().any(|h| h.nrows() != n || h.ncols() != n) {
        return Err(Error::Dimension("H0, H1, H2 must share a size of at least 2".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("λ = {lambda} must be positive")));
    }
    let e0 = hermitian_eigen(h0)?;
    let mut psi = e0.eigenvectors.clone();
    pin_phases(&mut psi);
    let ev = &e0.eigenvalues;
    let scale = op_norm(h0).max(1.0);
    if ev[1] - ev[0] <= DEGENERACY_TOL * scale {
        return Err(Error::Degenerate(ev[1] - ev[0]));
    }
    let h = h0 + h1 * c(lambda) + h2 * c(lambda * lambda);
    let el = hermitian_eigen(&h)?.eigenvalues;
    if el[1] - el[0] <= DEGENERACY_TOL * op_norm(&h).max(1.0) {
        return Err(Error::Degenerate(el[1] - el[0]));
    }
    // The bound falls as G grows, so take the largest G the conditions admit.
    let small = (el[0] - ev[0]).abs();
    let perturbed = el[1..]
        .iter()
        .map(|&ek| (ev[0] - ek).abs())
        .fold(f64::INFINITY, f64::min);
    let big = (ev[1] - ev[0]).min(perturbed + small);
    if !(big / 2.0 > small) {
        return Err(Error::Precondition(format!(
            "gap condition fails: G = {big:e}, g = {small:e}"
        )));
    }

    let psi0 = psi.column(0);
    let h1psi = h1 * &psi;
    let expect = |m: &ComplexMatrix| (psi0.adjoint() * m * psi0)[(0, 0)].re;
    let mut second = 0.0;
    for k in 1..n {
        let amp = (psi0.adjoint() * h1psi.column(k))[(0, 0)].norm_sqr();
        second += amp / (ev[k] - ev[0]);
    }
    let approx = ev[0] + lambda * expect(h1) + lambda * lambda * (expect(h2) - second);
    let residual = (el[0] - approx) / lambda.powi(3);

    let (n1, n2, nh) = (op_norm(h1), op_norm(h2), op_norm(&h));
    let res_fac = 1.0 + 2.0 * nh / (big - 2.0 * small);
    let bound = (1.0 + 8.0 * lambda / (big * big) * res_fac * (n1 + lambda * n2))
        * (2.0 / (big * big) * n1.powi(3) + 2.0 / big * n1 * n2)
        + 4.0 * lambda / (big * big) * res_fac * (n2 * n2 + 2.0 / big * n1 * n1 * n2);
    Ok(EigPerturbationReport {
        e0_exact: el[0],
        e0_second_order: approx,
        residual,
        bound,
        gap_big: big,
        gap_small: small,
        lambda,
    })
}

/// `(‖A − B‖, max(‖A‖, ‖B‖))` for positive semidefinite `A, B`.
pub fn psd_difference_norms(a: &ComplexMatrix, b: &ComplexMatrix) -> (f64, f64) {
    (op_norm(&(a - b)), op_norm(a).max(op_norm(b)))
}

/// `(‖QCQ + Q^⊥DQ^⊥‖, max(‖C‖, ‖D‖))`.
pub fn block_diagonal_norms(q: &ComplexMatrix, cm: &ComplexMatrix, d: &ComplexMatrix) -> (f64, f64) {
    let qp = complement_matrix(q);
    (op_norm(&(q * cm * q + &qp * d * &qp)), op_norm(cm).max(op_norm(d)))
}

/// `(‖Q^⊥EQ + QFQ^⊥‖, max(‖E‖, ‖F‖))`.
pub fn block_offdiagonal_norms(q: &ComplexMatrix, e: &ComplexMatrix, f: &ComplexMatrix) -> (f64, f64) {
    let qp = complement_matrix(q);
    (op_norm(&(&qp * e * q + q * f * &qp)), op_norm(e).max(op_norm(f)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{ginibre, haar_frame};
    use crate::grassmann::{act_projection, UnitVector};
    use crate::linalg::{thin_orthonormalize, ComplexVector};
    use crate::rng::stream;
    use rand::Rng;

    fn diag(xs: &[f64]) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(xs.len(), xs.iter().map(|&x| c(x))))
    }

    fn random_p(l: usize, rng: &mut crate::rng::Stream) -> ComplexMatrix {
        let g = ginibre(l, l, rng);
        let n = op_norm(&g);
        g * c(rng.random_range(0.2..1.0) / n)
    }

    fn random_q(l: usize, k: usize, rng: &mut crate::rng::Stream) -> Projection {
        Projection::from_frame(Frame::new(haar_frame(l, k, rng)).unwrap())
    }

    #[test]
    fn trivial_projections_have_no_expansion() {
        let mut rng = stream(1, 0);
        let p = random_p(4, &mut rng);
        for q in [Projection::zero(4), Projection::coordinate(4, 0..4)] {
            let t = expansion_maps(&q, &p, 0.01).unwrap();
            assert!(t.x.norm() < 1e-14 && t.y.norm() < 1e-14 && t.z.norm() < 1e-14);
        }
    }

    #[test]
    fn two_by_two_block_example() {
        let q = Projection::coordinate(2, [0]);
        let mut p = ComplexMatrix::zeros(2, 2);
        p[(1, 0)] = c(1.0);
        let t = expansion_maps(&q, &p, 0.01).unwrap();
        let expected = ComplexMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        assert!((&t.x - expected).norm() < 1e-15);
        assert!((op_norm(&t.x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn series_matches_closed_forms_and_reconstructs() {
        let mut rng = stream(2, 0);
        for trial in 0..50 {
            let l = 3 + trial % 6;
            let k = 1 + trial % (l - 1);
            let q = random_q(l, k, &mut rng);
            let p = random_p(l, &mut rng);
            let lambda = rng.random_range(1e-6..LAMBDA_MAX);
            let [c0, c1, c2] = series_coefficients(&q, &p, lambda).unwrap();
            let qm = q.matrix();
            assert!((c0 - &qm).norm() < 1e-13);
            assert!((c1 - x_map(&qm, &p)).norm() < 1e-13);
            assert!((c2 - y_map(&qm, &p)).norm() < 1e-13);
            let t = expansion_maps(&q, &p, lambda).unwrap();
            let direct = act_projection(
                &crate::linalg::matrix_exponential(&(&p * c(lambda)), 1e-15).unwrap(),
                &q,
            )
            .unwrap()
            .matrix();
            assert!((t.reconstruct(&qm) - direct).norm() < 1e-13);
        }
    }

    #[test]
    fn series_z_agrees_with_naive_residual_at_moderate_lambda() {
        let mut rng = stream(3, 0);
        let q = random_q(6, 2, &mut rng);
        let p = random_p(6, &mut rng);
        let lambda = LAMBDA_MAX;
        let z = expansion_maps(&q, &p, lambda).unwrap().z;
        let zn = naive_z(&q, &p, lambda).unwrap();
        // Naive error scales like ε/λ³ ≈ 6e-11.
        assert!((z - zn).norm() < 1e-8);
    }

    #[test]
    fn norm_bounds_hold() {
        let mut rng = stream(4, 0);
        for _ in 0..200 {
            let l = rng.random_range(2..9);
            let k = rng.random_range(1..l);
            let q = random_q(l, k, &mut rng);
            let p = random_p(l, &mut rng);
            let (nx, ny, nz) = expansion_maps(&q, &p, rng.random_range(0.0..LAMBDA_MAX))
                .unwrap()
                .norms();
            assert!(nx <= 1.0 + 1e-9 && ny <= 1.5 + 1e-9 && nz <= 20.0 + 1e-6);
        }
    }

    #[test]
    fn rank_certificates_hold() {
        let mut rng = stream(5, 0);
        for _ in 0..50 {
            let l = 8;
            let both = haar_frame(l, 4, &mut rng);
            let q = Projection::from_frame(Frame::new(both.columns(0, 2).clone_owned()).unwrap());
            let qp = Projection::from_frame(Frame::new(both.columns(2, 1).clone_owned()).unwrap());
            let p = random_p(l, &mut rng);
            let cert = rank_certificate(&q, &qp, &p, 0.01).unwrap();
            assert!(cert.holds(), "{cert:?}");
            assert!(cert.rank_dx >= 1);
        }
    }

    #[test]
    fn rank_certificate_rejects_overlap() {
        let q = Projection::coordinate(3, [0]);
        let p = ComplexMatrix::zeros(3, 3);
        assert!(rank_certificate(&q, &q, &p, 0.01).is_err());
    }

    #[test]
    fn lambda_out_of_range_is_rejected() {
        let q = Projection::coordinate(3, [0]);
        let p = ComplexMatrix::zeros(3, 3);
        assert!(expansion_maps(&q, &p, 0.02).is_err());
        assert!(expansion_maps(&q, &p, -1e-3).is_err());
    }

    fn random_pair(l: usize, w: usize, rng: &mut crate::rng::Stream) -> GrassmannPair {
        let f = haar_frame(l, w + 1, rng);
        let wp = Projection::from_frame(Frame::new(f.columns(0, w).clone_owned()).unwrap());
        let v = UnitVector::normalize(f.column(w).clone_owned()).unwrap();
        GrassmannPair::new(wp, v).unwrap()
    }

    #[test]
    fn vector_expansion_with_zero_perturbation() {
        let mut rng = stream(6, 0);
        let pair = random_pair(5, 2, &mut rng);
        let psi = Frame::selector(5, 0..2);
        let r = vector_expansion_a(&pair, &ComplexMatrix::zeros(5, 5), &psi, 1e-3).unwrap();
        assert!(r.a_d.abs() < 1e-15 && r.delta.abs() < 1e-14);
        assert_eq!(r.violations(), 0);
    }

    #[test]
    fn vector_expansion_w_zero_matches_direct_formula() {
        let mut rng = stream(7, 0);
        let pair = random_pair(6, 0, &mut rng);
        let p = random_p(6, &mut rng);
        let psi = thin_orthonormalize(&ginibre(6, 3, &mut rng)).unwrap();
        let r = vector_expansion_a(&pair, &p, &psi, 1e-4).unwrap();
        let vv = pair.combined().matrix();
        let direct = real_trace(&(psi.matrix().adjoint() * x_map(&vv, &p) * psi.matrix()));
        assert!((r.a_d - direct).abs() < 1e-13);
    }

    #[test]
    fn vector_expansion_bounds_on_random_draws() {
        let mut rng = stream(8, 0);
        for _ in 0..200 {
            let l = rng.random_range(3..9);
            let w = rng.random_range(0..l - 1);
            let pair = random_pair(l, w, &mut rng);
            let p = random_p(l, &mut rng);
            let k = rng.random_range(1..=l);
            let psi = Frame::new(haar_frame(l, k, &mut rng)).unwrap();
            let r = vector_expansion_a(&pair, &p, &psi, 1e-4).unwrap();
            assert_eq!(r.violations(), 0, "{r:?}");
        }
    }

    #[test]
    fn eig_two_by_two_closed_form() {
        let h0 = diag(&[0.0, 1.0]);
        let h1 = ComplexMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let h2 = ComplexMatrix::zeros(2, 2);
        let lambda: f64 = 0.01;
        let r = eig_perturb(&h0, &h1, &h2, lambda).unwrap();
        let exact = (1.0 - (1.0 + 4.0 * lambda * lambda).sqrt()) / 2.0;
        assert!((r.e0_exact - exact).abs() < 1e-15);
        assert!((r.e0_second_order + lambda * lambda).abs() < 1e-16);
        assert!(r.residual.abs() < 2.0 * lambda);
        assert!(r.within_bound());
    }

    #[test]
    fn eig_unperturbed_has_zero_residual() {
        let h0 = diag(&[-1.0, 0.5, 2.0]);
        let z = ComplexMatrix::zeros(3, 3);
        let r = eig_perturb(&h0, &z, &z, 0.1).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn eig_degenerate_ground_state_is_rejected() {
        let h0 = diag(&[0.0, 0.0, 1.0]);
        let z = ComplexMatrix::zeros(3, 3);
        assert!(matches!(eig_perturb(&h0, &z, &z, 0.1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn helper_norm_inequalities() {
        let mut rng = stream(9, 0);
        for _ in 0..100 {
            let a = ginibre(5, 5, &mut rng);
            let b = ginibre(5, 5, &mut rng);
            let (lhs, rhs) = psd_difference_norms(&(&a * a.adjoint()), &(&b * b.adjoint()));
            assert!(lhs <= rhs * (1.0 + 1e-12));
            let q = random_q(5, 2, &mut rng).matrix();
            let (lhs, rhs) = block_diagonal_norms(&q, &a, &b);
            assert!(lhs <= rhs * (1.0 + 1e-12));
            let (lhs, rhs) = block_offdiagonal_norms(&q, &a, &b);
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }
}
