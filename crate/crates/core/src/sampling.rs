//! Random inputs for audits and tests.

use rand::Rng;

use crate::ensembles::{ginibre, haar_frame, haar_unitary};
use crate::grassmann::{GrassmannPair, Projection, UnitVector};
use crate::linalg::{c, op_norm, ComplexMatrix, ComplexVector, Frame};
use crate::partition::{Ladder, StabilitySpec};
use crate::rng::Stream;

/// `P = s G/‖G‖` with `G` Ginibre and `s ~ U(0.2, 1)`.
pub fn random_perturbation(l: usize, rng: &mut Stream) -> ComplexMatrix {
    let g = ginibre(l, l, rng);
    let n = op_norm(&g);
    g * c(rng.random_range(0.2..1.0) / n)
}

/// Haar-random rank-`k` projection.
pub fn random_projection(l: usize, k: usize, rng: &mut Stream) -> Projection {
    if k == 0 {
        return Projection::zero(l);
    }
    Projection::from_frame(Frame::new(haar_frame(l, k, rng)).expect("Haar frames are isometries"))
}

/// Haar-random pair with `rk W = w`.
pub fn random_pair(l: usize, w: usize, rng: &mut Stream) -> GrassmannPair {
    let f = haar_frame(l, w + 1, rng);
    let wp = if w == 0 {
        Projection::zero(l)
    } else {
        Projection::from_frame(Frame::new(f.columns(0, w).clone_owned()).expect("isometry"))
    };
    let v = UnitVector::normalize(f.column(w).clone_owned()).expect("unit column");
    GrassmannPair::new(wp, v).expect("orthogonal by construction")
}

/// `diag(d)(1 + G/(2‖G‖))` with `d_i ~ U(0.5, 2)`: invertible with condition number at most 12.
pub fn random_invertible(l: usize, rng: &mut Stream) -> ComplexMatrix {
    let g = ginibre(l, l, rng);
    let n = op_norm(&g);
    let mut t = ComplexMatrix::identity(l, l) + g * c(0.5 / n);
    for mut row in t.row_iter_mut() {
        row *= c(rng.random_range(0.5..2.0));
    }
    t
}

/// Hermitian matrix with operator norm `s ~ U(0.2, 1)`.
pub fn random_hermitian(n: usize, rng: &mut Stream) -> ComplexMatrix {
    let g = ginibre(n, n, rng);
    let h = (&g + g.adjoint()) * c(0.5);
    let nh = op_norm(&h);
    h * c(rng.random_range(0.2..1.0) / nh)
}

/// `(H0, H1, H2)` of size `n` where `H0` has a simple lowest eigenvalue
/// separated from the rest by at least `gap`.
pub fn gapped_triple(n: usize, gap: f64, rng: &mut Stream) -> (ComplexMatrix, ComplexMatrix, ComplexMatrix) {
    let e0 = rng.random_range(-1.0..1.0);
    let diag = ComplexVector::from_iterator(
        n,
        (0..n).map(|k| {
            c(if k == 0 {
                e0
            } else {
                e0 + gap + rng.random_range(0.0..2.0)
            })
        }),
    );
    let u = haar_unitary(n, rng);
    let h0 = &u * ComplexMatrix::from_diagonal(&diag) * u.adjoint();
    let h0 = (&h0 + h0.adjoint()) * c(0.5);
    (h0, random_hermitian(n, rng), random_hermitian(n, rng))
}

/// Non-increasing κ with `κ_1 = 1` and log-steps in `[0, max_step)`, with a
/// random partition having `L_a, L_c ≥ 1`.
pub fn random_spec(l: usize, max_step: f64, rng: &mut Stream) -> StabilitySpec {
    assert!(l >= 2, "need L ≥ 2");
    let mut k = 1.0;
    let kappa: Vec<f64> = (0..l)
        .map(|i| {
            if i > 0 {
                k *= (-rng.random_range(0.0..max_step)).exp();
            }
            k
        })
        .collect();
    let la = rng.random_range(1..l);
    let lc = rng.random_range(1..=l - la);
    StabilitySpec::new(kappa, la, l - la - lc, lc).expect("valid by construction")
}

/// Random strictly increasing cuts in `1..=L` (at least three).
pub fn random_ladder(spec: &StabilitySpec, rng: &mut Stream) -> Ladder {
    let l = spec.dim();
    assert!(l >= 3, "a ladder needs L ≥ 3");
    let k = rng.random_range(3..=l.min(8));
    let mut idx: Vec<usize> = (1..=l).collect();
    for i in 0..k {
        let j = rng.random_range(i..l);
        idx.swap(i, j);
    }
    let mut cuts = idx[..k].to_vec();
    cuts.sort_unstable();
    Ladder::from_cuts(spec, cuts).expect("valid by construction")
}

/// A subdivision instance `(spec, a, b, F, φ)` on `b − a ≤ max_len` with
/// nearly uniform squared-κ log-steps; it may violate the assumption, in
/// which case `subdivide` reports a precondition error.
pub fn subdivision_instance(max_len: usize, rng: &mut Stream) -> (StabilitySpec, usize, usize, usize, f64) {
    let n = rng.random_range(2..=max_len);
    let delta = rng.random_range(0.005..0.3);
    let jitter = rng.random_range(0.0..0.5);
    let mut k: f64 = 1.0;
    let mut kappa = vec![k];
    for _ in 0..n {
        k *= (-0.5 * delta * rng.random_range(1.0 - jitter..=1.0f64)).exp();
        kappa.push(k);
    }
    let l = kappa.len();
    let spec = StabilitySpec::new(kappa, 1, l - 2, 1).expect("valid by construction");
    let f = rng.random_range(1..=n.min(6));
    let phi = rng.random_range(0.05..0.95);
    (spec, 1, l, f, phi)
}

/// A pair whose `W` sits in the last `a0` rows up to a leak of trace at most
/// `leak` into the rest, with `v` Haar-random orthogonal to `W`.
pub fn near_stable_pair(l: usize, a0: usize, w: usize, leak: f64, rng: &mut Stream) -> GrassmannPair {
    assert!(w < a0 && a0 <= l, "need w < A_0 ≤ L");
    let wp = if w == 0 {
        Projection::zero(l)
    } else {
        let inner = haar_frame(a0, w, rng);
        let mut f = ginibre(l, w, rng);
        let eps = (leak / w as f64).sqrt() * rng.random_range(0.0..1.0) / op_norm(&f).max(1e-300);
        f *= c(eps);
        let mut block = f.rows_mut(l - a0, a0);
        block.copy_from(&inner);
        Projection::from_frame(crate::linalg::thin_orthonormalize(&f).expect("full rank"))
    };
    let g = ginibre(l, 1, rng).column(0).clone_owned();
    let wm = wp.matrix();
    let v = UnitVector::normalize(&g - &wm * &g).expect("non-zero with probability one");
    GrassmannPair::new(wp, v).expect("orthogonal by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn generators_respect_their_contracts() {
        let mut rng = stream(1, 0);
        for _ in 0..20 {
            assert!(op_norm(&random_perturbation(5, &mut rng)) <= 1.0 + 1e-12);
            let s = random_spec(6, 0.5, &mut rng);
            assert!(s.kappa.windows(2).all(|w| w[0] >= w[1]));
            let ld = random_ladder(&s, &mut rng);
            assert!(ld.cuts.len() >= 3);
            let p = near_stable_pair(8, 3, 2, 1e-6, &mut rng);
            assert!(p.w.block_trace(0..5) <= 1e-6 * (1.0 + 1e-9));
            let (h0, h1, _) = gapped_triple(4, 0.5, &mut rng);
            assert!((&h0 - h0.adjoint()).norm() < 1e-12 && (&h1 - h1.adjoint()).norm() < 1e-12);
        }
    }
}
