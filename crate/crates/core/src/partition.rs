//! Stability bookkeeping: the κ ladder, the block partition, relative gaps,
//! coordinate reference frames, the greedy subdivision, and the hypothesis
//! checker.
//!
//! Public APIs speak 1-based *stability indices* `I` (1 = most stable, largest
//! κ). Index `I` lives at 0-based matrix row `L − I`, so `R = diag(κ_L, …, κ_1)`
//! and the most unstable block sits in the first rows.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, ComplexMatrix, ComplexVector, Frame};

/// Sorted diagonal `κ_1 ≥ … ≥ κ_L > 0` with the partition `L = L_a + L_b + L_c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySpec {
    /// `κ_1, …, κ_L`, non-increasing and positive.
    pub kappa: Vec<f64>,
    /// Size of the unstable block.
    pub la: usize,
    /// Size of the middle block.
    pub lb: usize,
    /// Size of the stable block.
    pub lc: usize,
}

impl StabilitySpec {
    /// Validated constructor.
    pub fn new(kappa: Vec<f64>, la: usize, lb: usize, lc: usize) -> Result<Self> {
        let spec = StabilitySpec { kappa, la, lb, lc };
        spec.validate()?;
        Ok(spec)
    }

    /// Check positivity, ordering, and that the blocks add up to `L`.
    pub fn validate(&self) -> Result<()> {
        let l = self.kappa.len();
        if l == 0 {
            return Err(Error::InvalidParameter("empty κ ladder".into()));
        }
        if self.la + self.lb + self.lc != l {
            return Err(Error::InvalidParameter(format!(
                "la + lb + lc = {} differs from L = {l}",
                self.la + self.lb + self.lc
            )));
        }
        if let Some(k) = self.kappa.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(Error::InvalidParameter(format!("κ entry {k} is not positive")));
        }
        if let Some(i) = self.kappa.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter(format!(
                "κ increases between indices {} and {}",
                i + 1,
                i + 2
            )));
        }
        Ok(())
    }

    /// Dimension `L`.
    pub fn dim(&self) -> usize {
        self.kappa.len()
    }

    /// `κ_I` for a 1-based stability index.
    pub fn kappa_at(&self, i: usize) -> f64 {
        self.kappa[i - 1]
    }

    /// 0-based matrix row of stability index `I`.
    pub fn row_of(&self, i: usize) -> usize {
        self.dim() - i
    }

    /// Diagonal of `R` in row order: `(κ_L, …, κ_1)`.
    pub fn r_diagonal(&self) -> Vec<f64> {
        self.kappa.iter().rev().copied().collect()
    }

    /// `R = diag(κ_L, …, κ_1)`.
    pub fn r_matrix(&self) -> ComplexMatrix {
        let d = self.r_diagonal();
        ComplexMatrix::from_diagonal(&ComplexVector::from_iterator(d.len(), d.iter().map(|&x| c(x))))
    }

    /// Rows of the unstable block `𝔞`.
    pub fn rows_a(&self) -> Range<usize> {
        0..self.la
    }

    /// Rows of the middle block `𝔟`.
    pub fn rows_b(&self) -> Range<usize> {
        self.la..self.la + self.lb
    }

    /// Rows of the stable block `𝔠`.
    pub fn rows_c(&self) -> Range<usize> {
        self.la + self.lb..self.dim()
    }

    /// `η(I, J) = 1 − κ_J²/κ_I²` for `I ≤ J`.
    pub fn relative_gap(&self, i: usize, j: usize) -> Result<f64> {
        let l = self.dim();
        if i == 0 || j > l || i > j {
            return Err(Error::InvalidParameter(format!(
                "relative gap needs 1 ≤ i ≤ j ≤ {l}, got ({i}, {j})"
            )));
        }
        let r = self.kappa_at(j) / self.kappa_at(i);
        Ok((1.0 - r * r).clamp(0.0, 1.0))
    }

    /// The macroscopic gap `𝜼 = η(L_c, L_b + L_c)`.
    pub fn macroscopic_gap(&self) -> Result<f64> {
        if self.lc == 0 {
            return Err(Error::InvalidParameter("macroscopic gap needs lc ≥ 1".into()));
        }
        self.relative_gap(self.lc, self.lb + self.lc)
    }

    /// Ladder of `R^{-1}` reordered to be non-increasing, with the blocks
    /// mirrored: `κ'_I = 1/κ_{L+1−I}`, `(L_a, L_b, L_c) → (L_c, L_b, L_a)`.
    pub fn reflected(&self) -> StabilitySpec {
        StabilitySpec {
            kappa: self.kappa.iter().rev().map(|k| 1.0 / k).collect(),
            la: self.lc,
            lb: self.lb,
            lc: self.la,
        }
    }
}

/// Free-function form of [`StabilitySpec::relative_gap`].
pub fn relative_gap(spec: &StabilitySpec, i: usize, j: usize) -> Result<f64> {
    spec.relative_gap(i, j)
}

/// Cut points `A = I_0 < … < I_F = B` and the gaps `η(I_{f−1}, I_f)` they achieve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubdivisionResult {
    /// `I_0, …, I_F`.
    pub cut_indices: Vec<usize>,
    /// `η(I_{f−1}, I_f)` for `f = 1..F`.
    pub achieved_gaps: Vec<f64>,
}

fn check_subdivision_input(spec: &StabilitySpec, a: usize, b: usize, f: usize, phi: f64) -> Result<f64> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::InvalidParameter(format!("φ = {phi} outside (0, 1)")));
    }
    if f == 0 {
        return Err(Error::InvalidParameter("F must be at least 1".into()));
    }
    if a == 0 || b > spec.dim() || a >= b {
        return Err(Error::InvalidParameter(format!(
            "subdivision range ({a}, {b}) invalid for L = {}",
            spec.dim()
        )));
    }
    if f > b - a {
        return Err(Error::InvalidParameter(format!("F = {f} exceeds b − a = {}", b - a)));
    }
    let eta_ab = spec.relative_gap(a, b)?;
    if !(eta_ab > 0.0) {
        return Err(Error::Precondition(format!("η({a}, {b}) = 0")));
    }
    let cap = phi / f as f64 * eta_ab;
    for j in a..b {
        let g = spec.relative_gap(j, j + 1)?;
        if g > cap {
            return Err(Error::Precondition(format!(
                "η({j}, {}) = {g:e} exceeds (φ/F)·η(A, B) = {cap:e}",
                j + 1
            )));
        }
    }
    Ok(eta_ab)
}

fn block_threshold(spec: &StabilitySpec, a: usize, b: usize, f: usize, phi: f64) -> f64 {
    let ka = spec.kappa_at(a);
    let kb = spec.kappa_at(b);
    (1.0 - phi) / f as f64 * (ka * ka - kb * kb)
}

fn finish(spec: &StabilitySpec, cuts: Vec<usize>) -> Result<SubdivisionResult> {
    let achieved_gaps = cuts
        .windows(2)
        .map(|w| spec.relative_gap(w[0], w[1]))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubdivisionResult {
        cut_indices: cuts,
        achieved_gaps,
    })
}

/// Greedy subdivision of `[a, b]` into `f` blocks.
///
/// `J_f` is the smallest index whose squared-κ drop from `J_{f−1}` reaches
/// `(1−φ)/F · (κ_A² − κ_B²)`; the last cut is pinned to `B`.
pub fn subdivide(spec: &StabilitySpec, a: usize, b: usize, f: usize, phi: f64) -> Result<SubdivisionResult> {
    check_subdivision_input(spec, a, b, f, phi)?;
    let thr = block_threshold(spec, a, b, f, phi);
    let mut cuts = vec![a];
    for _ in 1..f {
        let prev = *cuts.last().expect("non-empty");
        let kp = spec.kappa_at(prev);
        let next = (prev + 1..=b)
            .find(|&j| {
                let kj = spec.kappa_at(j);
                kp * kp - kj * kj >= thr
            })
            .ok_or_else(|| Error::Precondition(format!("no admissible cut after index {prev}")))?;
        cuts.push(next);
    }
    if *cuts.last().expect("non-empty") >= b {
        return Err(Error::Precondition(
            "greedy cuts reached B before the last block".into(),
        ));
    }
    cuts.push(b);
    finish(spec, cuts)
}

/// Reference implementation of [`subdivide`] by exhaustive enumeration: the
/// lexicographically smallest cut sequence in which every block but the last
/// achieves the squared-κ drop threshold.
pub fn subdivide_exhaustive(spec: &StabilitySpec, a: usize, b: usize, f: usize, phi: f64) -> Result<SubdivisionResult> {
    check_subdivision_input(spec, a, b, f, phi)?;
    let thr = block_threshold(spec, a, b, f, phi);
    let interior: Vec<usize> = (a + 1..b).collect();
    let k = f - 1;
    let mut best: Option<Vec<usize>> = None;
    let mut idx: Vec<usize> = (0..k).collect();
    if k > interior.len() {
        return Err(Error::Precondition("not enough interior indices".into()));
    }
    loop {
        let mut cuts = vec![a];
        cuts.extend(idx.iter().map(|&i| interior[i]));
        let ok = cuts.windows(2).all(|w| {
            let (k0, k1) = (spec.kappa_at(w[0]), spec.kappa_at(w[1]));
            k0 * k0 - k1 * k1 >= thr
        });
        if ok {
            cuts.push(b);
            if best.as_ref().is_none_or(|cur| cuts < *cur) {
                best = Some(cuts);
            }
        }
        // Advance the combination in lexicographic order.
        let mut pos = k;
        loop {
            if pos == 0 {
                return match best {
                    Some(cuts) => finish(spec, cuts),
                    None => Err(Error::Precondition("no admissible partition".into())),
                };
            }
            pos -= 1;
            if idx[pos] < interior.len() - k + pos {
                idx[pos] += 1;
                for j in pos + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Where a value of β came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BetaSource {
    /// Supplied by the caller with no further information.
    Supplied,
    /// Closed-form value or lower bound for the ensemble.
    Exact,
    /// Monte-Carlo upper estimate with its standard error.
    MonteCarlo { standard_error: f64 },
}

/// A value of β with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Beta {
    /// The value used.
    pub value: f64,
    /// Its origin.
    pub source: BetaSource,
}

impl From<f64> for Beta {
    fn from(value: f64) -> Self {
        Beta {
            value,
            source: BetaSource::Supplied,
        }
    }
}

/// Outcome of one hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Whether the hypothesis holds.
    pub pass: bool,
    /// Left-hand side of the tested inequality.
    pub lhs: f64,
    /// Right-hand side of the tested inequality.
    pub rhs: f64,
    /// `lhs/rhs − 1`; for the positivity checks `−lhs`. Non-positive on pass.
    pub margin: f64,
}

impl Verdict {
    fn upper(lhs: f64, rhs: f64, strict: bool) -> Self {
        let pass = if strict { lhs < rhs } else { lhs <= rhs };
        Verdict {
            pass,
            lhs,
            rhs,
            margin: lhs / rhs - 1.0,
        }
    }

    fn positive(lhs: f64) -> Self {
        Verdict {
            pass: lhs > 0.0,
            lhs,
            rhs: 0.0,
            margin: -lhs,
        }
    }
}

/// Verdicts and derived constants for a parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// `𝜼 = η(L_c, L_b + L_c)`.
    pub eta: f64,
    /// `ϑ = log(2^{−54/5} λ^{−1})`, unclamped.
    pub theta: f64,
    /// Set when `ϑ < 1`.
    pub theta_below_one: bool,
    /// Coupling λ.
    pub lambda: f64,
    /// Rank q.
    pub q: usize,
    /// β with provenance.
    pub beta: Beta,
    /// Macroscopic gap positive.
    pub h1: Verdict,
    /// β positive.
    pub h2: Verdict,
    /// Small coupling; fails outright when λ ∉ (0, 2^{−13}).
    pub h3: Verdict,
    /// `λ ∈ (0, 2^{−13})`.
    pub h3_lambda_in_range: bool,
    /// Condition on q.
    pub h4: Verdict,
    /// Microscopic gaps over the literal range `I ∈ {L_c, …, L_b + L_c}`;
    /// `None` when no κ ladder was supplied.
    pub h5_literal: Option<Verdict>,
    /// Microscopic gaps inside the middle block only.
    pub h5_interior: Option<Verdict>,
    /// `T_0 = 4 β^{−1} q² ϑ λ^{−2}`.
    pub t0: f64,
    /// `10 𝜼^{−1} q λ²`.
    pub theorem_bound: f64,
}

impl HypothesisReport {
    /// H1–H4 hold.
    pub fn scalar_pass(&self) -> bool {
        self.h1.pass && self.h2.pass && self.h3.pass && self.h4.pass
    }

    /// All of H1–H5 (literal H5) hold; false when H5 was not evaluated.
    pub fn all_pass(&self) -> bool {
        self.scalar_pass() && self.h5_literal.as_ref().is_some_and(|v| v.pass)
    }
}

/// `ϑ = log(2^{−54/5}/λ)`.
pub fn theta(lambda: f64) -> f64 {
    (2f64.powf(-54.0 / 5.0) / lambda).ln()
}

/// Evaluate the hypotheses for `(spec, λ, q, β)`.
pub fn check_hypotheses(
    spec: &StabilitySpec,
    lambda: f64,
    q: usize,
    beta: impl Into<Beta>,
) -> Result<HypothesisReport> {
    spec.validate()?;
    let mut report = check_scalar_hypotheses(spec.macroscopic_gap()?, lambda, q, beta)?;
    let micro_max = |range: Range<usize>| -> Result<f64> {
        let mut m = 0.0f64;
        for i in range {
            if i >= 1 && i < spec.dim() {
                m = m.max(spec.relative_gap(i, i + 1)?);
            }
        }
        Ok(m)
    };
    let cap = 16.0 * lambda;
    report.h5_literal = Some(Verdict::upper(micro_max(spec.lc..spec.lb + spec.lc + 1)?, cap, true));
    report.h5_interior = Some(Verdict::upper(micro_max(spec.lc + 1..spec.lb + spec.lc)?, cap, true));
    Ok(report)
}

/// H1–H4 from `(𝜼, λ, q, β)` alone; H5 is left unevaluated.
pub fn check_scalar_hypotheses(eta: f64, lambda: f64, q: usize, beta: impl Into<Beta>) -> Result<HypothesisReport> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("λ = {lambda} must be positive")));
    }
    if q < 1 {
        return Err(Error::InvalidParameter("q must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("𝜼 = {eta} outside [0, 1]")));
    }
    let beta = beta.into();
    let b = beta.value;
    let th = theta(lambda);
    let qf = q as f64;

    let in_range = lambda < 2f64.powi(-13);
    let h3_rhs = 2f64.powi(-17) * b.powf(8.0 / 3.0) * eta.powf(-1.0 / 3.0);
    let mut h3 = Verdict::upper(th * lambda, h3_rhs, false);
    h3.pass &= in_range;

    let h4_rhs = 2f64.powf(-36.0 / 5.0) * b.powf(0.2) * eta.powf(0.6) * th.powf(-0.2) * lambda.powf(-0.2);
    let h4 = Verdict::upper(qf, h4_rhs, false);

    Ok(HypothesisReport {
        eta,
        theta: th,
        theta_below_one: th < 1.0,
        lambda,
        q,
        h1: Verdict::positive(eta),
        h2: Verdict::positive(b),
        beta,
        h3,
        h3_lambda_in_range: in_range,
        h4,
        h5_literal: None,
        h5_interior: None,
        t0: 4.0 / b * qf * qf * th / (lambda * lambda),
        theorem_bound: 10.0 / eta * qf * lambda * lambda,
    })
}

/// `10 𝜼^{−1} q λ²`.
pub fn theorem_bound(eta: f64, q: usize, lambda: f64) -> f64 {
    10.0 / eta * q as f64 * lambda * lambda
}

/// Ladder of cut indices `D = A_0 < A_1 < … < A_{M+2} = E`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    /// `A_0, …, A_{M+2}` as stability indices.
    pub cuts: Vec<usize>,
}

impl Ladder {
    /// Wrap explicit cuts (at least three, strictly increasing, within `1..=L`).
    pub fn from_cuts(spec: &StabilitySpec, cuts: Vec<usize>) -> Result<Self> {
        if cuts.len() < 3 {
            return Err(Error::InvalidParameter("a ladder needs at least A_0, A_1, A_2".into()));
        }
        if cuts[0] == 0 || *cuts.last().expect("non-empty") > spec.dim() || cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(format!(
                "ladder cuts {cuts:?} are not increasing in 1..=L"
            )));
        }
        Ok(Ladder { cuts })
    }

    /// Build the ladder for the pair rank `w` by chaining the four
    /// subdivisions: `H` on `(L_c, L_b+L_c)`, `I_0 < … < I_q` on `(L_c, H)`,
    /// the three-block split of `(I_w, I_{w+1})`, and the `M`-block split of
    /// its middle with `M = ⌊2^{−10} 𝜼 q^{−1} λ^{−1}⌋`.
    pub fn construct(spec: &StabilitySpec, q: usize, w: usize, lambda: f64) -> Result<Self> {
        if w >= q {
            return Err(Error::InvalidParameter(format!(
                "pair rank w = {w} must be below q = {q}"
            )));
        }
        let eta = spec.macroscopic_gap()?;
        let qf = q as f64;
        let h = subdivide(spec, spec.lc, spec.lb + spec.lc, 2, 32.0 * lambda / eta)?.cut_indices[1];
        let is = subdivide(spec, spec.lc, h, q, 64.0 * qf * lambda / eta)?.cut_indices;
        let (d, e) = (is[w], is[w + 1]);
        let outer = subdivide(spec, d, e, 3, 3.0 * 128.0 * qf * lambda / eta)?.cut_indices;
        let m = (eta / (1024.0 * qf * lambda)).floor() as usize;
        if m == 0 {
            return Err(Error::Precondition("M = ⌊2^{-10} 𝜼 / (qλ)⌋ is zero".into()));
        }
        let inner = subdivide(spec, outer[1], outer[2], m, 0.5)?.cut_indices;
        let mut cuts = vec![outer[0]];
        cuts.extend(inner);
        cuts.push(outer[3]);
        Ladder::from_cuts(spec, cuts)
    }

    /// `M`, so that the cuts are `A_0 … A_{M+2}`.
    pub fn m_max(&self) -> usize {
        self.cuts.len() - 3
    }

    /// Number of ladder levels `m = 0..=M+1`.
    pub fn levels(&self) -> usize {
        self.cuts.len() - 1
    }

    /// `τ_m = η(A_m, A_{m+1})`.
    pub fn tau(&self, spec: &StabilitySpec, m: usize) -> Result<f64> {
        spec.relative_gap(self.cuts[m], self.cuts[m + 1])
    }

    /// `min_m τ_m`.
    pub fn min_tau(&self, spec: &StabilitySpec) -> Result<f64> {
        (0..self.levels())
            .map(|m| self.tau(spec, m))
            .try_fold(f64::INFINITY, |acc, t| t.map(|t| acc.min(t)))
    }

    /// Rows of `𝔵_m`: the first `L − A_{m+1}`.
    pub fn x_rows(&self, l: usize, m: usize) -> Range<usize> {
        0..l - self.cuts[m + 1]
    }

    /// Rows of `𝔷_m`: the last `A_m`.
    pub fn z_rows(&self, l: usize, m: usize) -> Range<usize> {
        l - self.cuts[m]..l
    }

    /// Rows of `ζ̂_m^⊥`: the first `L − A_m`.
    pub fn zeta_perp_rows(&self, l: usize, m: usize) -> Range<usize> {
        0..l - self.cuts[m]
    }

    /// `D = A_0`.
    pub fn d(&self) -> usize {
        self.cuts[0]
    }

    /// `E = A_{M+2}`.
    pub fn e(&self) -> usize {
        *self.cuts.last().expect("non-empty")
    }
}

/// Which coordinate frame to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    /// `α̂`: the `L_a` unstable rows.
    Alpha,
    /// `α̂^⊥`: the remaining rows.
    AlphaPerp,
    /// `γ̂`: the `L_c` stable rows.
    Gamma,
    /// `γ̂^⊥`: the remaining rows.
    GammaPerp,
    /// `ζ̂`, `ζ̂_m`: the last `A_m` rows (`m = 0` gives the `𝔷` frame of the pair).
    Zeta(usize),
    /// `ζ̂^⊥`, `ζ̂_m^⊥`.
    ZetaPerp(usize),
    /// `χ̂_m`: the first `L − A_{m+1}` rows (`m = M+1` gives the `𝔵` frame).
    Chi(usize),
    /// `χ̂_m^⊥`.
    ChiPerp(usize),
}

/// A coordinate frame together with its kind.
#[derive(Clone, Debug)]
pub struct ReferenceFrame {
    /// The kind requested.
    pub kind: FrameKind,
    /// Isometry made of standard basis vectors.
    pub frame: Frame,
    /// The rows it selects.
    pub rows: Range<usize>,
}

/// Build a coordinate frame. Indexed kinds need a ladder.
pub fn reference_frame(spec: &StabilitySpec, kind: FrameKind, ladder: Option<&Ladder>) -> Result<ReferenceFrame> {
    let l = spec.dim();
    let need = |m: usize, extra: usize| -> Result<&Ladder> {
        let ld = ladder.ok_or_else(|| Error::InvalidParameter(format!("{kind:?} needs a ladder")))?;
        if m + extra >= ld.cuts.len() {
            return Err(Error::InvalidParameter(format!(
                "ladder index {m} out of range for {} cuts",
                ld.cuts.len()
            )));
        }
        Ok(ld)
    };
    let rows = match kind {
        FrameKind::Alpha => spec.rows_a(),
        FrameKind::AlphaPerp => spec.la..l,
        FrameKind::Gamma => spec.rows_c(),
        FrameKind::GammaPerp => 0..spec.la + spec.lb,
        FrameKind::Zeta(m) => need(m, 0)?.z_rows(l, m),
        FrameKind::ZetaPerp(m) => need(m, 0)?.zeta_perp_rows(l, m),
        FrameKind::Chi(m) => need(m, 1)?.x_rows(l, m),
        FrameKind::ChiPerp(m) => {
            let ld = need(m, 1)?;
            l - ld.cuts[m + 1]..l
        }
    };
    Ok(ReferenceFrame {
        kind,
        frame: Frame::selector(l, rows.clone()),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::op_norm;

    fn linear_spec() -> StabilitySpec {
        let kappa = (1..=11).map(|i| (1.0 - 0.01 * (i as f64 - 1.0)).sqrt()).collect();
        StabilitySpec::new(kappa, 0, 11, 0).unwrap()
    }

    #[test]
    fn gap_examples() {
        let s = StabilitySpec::new(vec![2.0, 2.0, 1.0], 1, 1, 1).unwrap();
        assert_eq!(s.relative_gap(1, 2).unwrap(), 0.0);
        assert!((s.relative_gap(2, 3).unwrap() - 0.75).abs() < 1e-15);
        assert!(s.relative_gap(3, 2).is_err());
        assert_eq!(s.macroscopic_gap().unwrap(), s.relative_gap(1, 2).unwrap());
    }

    #[test]
    fn spec_validation() {
        assert!(StabilitySpec::new(vec![1.0, 2.0], 1, 0, 1).is_err());
        assert!(StabilitySpec::new(vec![2.0, 1.0], 1, 0, 0).is_err());
        assert!(StabilitySpec::new(vec![2.0, 0.0], 1, 0, 1).is_err());
    }

    #[test]
    fn r_maps_index_to_reversed_row() {
        let s = StabilitySpec::new(vec![5.0, 4.0, 3.0, 2.0], 1, 2, 1).unwrap();
        let r = s.r_matrix();
        for i in 1..=4 {
            let mut e = ComplexVector::zeros(4);
            e[s.row_of(i)] = c(1.0);
            let re = &r * &e;
            assert!((re - e * c(s.kappa_at(i))).norm() < 1e-15);
        }
    }

    #[test]
    fn subdivision_hand_trace() {
        let s = linear_spec();
        let out = subdivide(&s, 1, 11, 2, 0.5).unwrap();
        assert_eq!(out.cut_indices, vec![1, 4, 11]);
        assert!((out.achieved_gaps[0] - 0.03).abs() < 1e-12);
        assert!((out.achieved_gaps[1] - (1.0 - 0.9 / 0.97)).abs() < 1e-12);
        assert!(out.achieved_gaps.iter().all(|&g| g >= 0.025));
        assert_eq!(out, subdivide_exhaustive(&s, 1, 11, 2, 0.5).unwrap());
    }

    #[test]
    fn subdivision_single_block() {
        let s = linear_spec();
        let out = subdivide(&s, 2, 9, 1, 0.3).unwrap();
        assert_eq!(out.cut_indices, vec![2, 9]);
        assert_eq!(out, subdivide_exhaustive(&s, 2, 9, 1, 0.3).unwrap());
    }

    #[test]
    fn subdivision_reports_precondition() {
        let s = StabilitySpec::new(vec![4.0, 1.0, 0.9, 0.8], 0, 4, 0).unwrap();
        match subdivide(&s, 1, 4, 2, 0.5) {
            Err(Error::Precondition(msg)) => assert!(msg.contains("η(1, 2)")),
            other => panic!("{other:?}"),
        }
        assert!(subdivide(&linear_spec(), 1, 3, 5, 0.5).is_err());
    }

    #[test]
    fn hypothesis_examples() {
        let s = StabilitySpec::new(vec![2.0, 2f64.sqrt(), 1.0], 1, 1, 1).unwrap();
        let eta = s.macroscopic_gap().unwrap();
        assert!((eta - 0.5).abs() < 1e-15);

        let r = check_hypotheses(&s, 2f64.powi(-13), 1, 0.5).unwrap();
        assert!(!r.h3.pass && !r.h3_lambda_in_range);

        let r = check_hypotheses(&s, 1e-4, 1, 0.5).unwrap();
        assert!((r.theta - 1.724).abs() < 1e-3);
        assert!((r.h3.lhs - 1.724e-4).abs() < 1e-7);
        assert!((r.h3.rhs - 1.51e-6).abs() < 0.01e-6);
        assert!(!r.h3.pass && r.h3.margin > 0.0);

        let r = check_hypotheses(&s, 0.01, 2, 0.5).unwrap();
        assert!((r.theorem_bound - 4e-3).abs() < 1e-15);
        assert!(r.theta_below_one);
    }

    #[test]
    fn hypothesis_errors() {
        let s = StabilitySpec::new(vec![2.0, 1.0], 1, 0, 1).unwrap();
        assert!(check_hypotheses(&s, 0.0, 1, 0.5).is_err());
        assert!(check_hypotheses(&s, 1e-4, 0, 0.5).is_err());
    }

    #[test]
    fn frames_examples() {
        let s = StabilitySpec::new(vec![3.0, 2.0, 1.0], 1, 1, 1).unwrap();
        let a = reference_frame(&s, FrameKind::Alpha, None).unwrap();
        assert_eq!(
            a.frame.matrix().column(0).iter().map(|z| z.re).collect::<Vec<_>>(),
            vec![1.0, 0.0, 0.0]
        );
        let ap = reference_frame(&s, FrameKind::AlphaPerp, None).unwrap();
        let sum = a.frame.projector() + ap.frame.projector();
        assert!(op_norm(&(sum - ComplexMatrix::identity(3, 3))) < 1e-15);
        let g = reference_frame(&s, FrameKind::Gamma, None).unwrap();
        assert_eq!(g.frame.rank(), s.lc);
        assert!(reference_frame(&s, FrameKind::Zeta(0), None).is_err());
    }

    #[test]
    fn ladder_frames_are_complementary() {
        let s = StabilitySpec::new(vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0], 1, 4, 1).unwrap();
        let ld = Ladder::from_cuts(&s, vec![1, 2, 4, 5]).unwrap();
        for m in 0..ld.levels() - 1 {
            let x = reference_frame(&s, FrameKind::Chi(m), Some(&ld)).unwrap();
            let z = reference_frame(&s, FrameKind::Zeta(m + 1), Some(&ld)).unwrap();
            let sum = x.frame.projector() + z.frame.projector();
            assert!(op_norm(&(sum - ComplexMatrix::identity(6, 6))) < 1e-15);
        }
    }

    #[test]
    fn reflected_gaps_match() {
        let s = StabilitySpec::new(vec![5.0, 3.0, 2.5, 1.0], 1, 2, 1).unwrap();
        let r = s.reflected();
        r.validate().unwrap();
        for i in 1..=4 {
            for j in i..=4 {
                let a = r.relative_gap(i, j).unwrap();
                let b = s.relative_gap(5 - j, 5 - i).unwrap();
                assert!((a - b).abs() < 1e-14);
            }
        }
        assert!((r.macroscopic_gap().unwrap() - s.relative_gap(s.lc + 1, s.lc + s.lb + 1).unwrap()).abs() < 1e-14);
    }
}
