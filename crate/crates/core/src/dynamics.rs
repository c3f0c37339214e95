//! Trajectories of `Q_n = T_n·Q_{n−1}` and `(W_n, v_n) = T_n ⋆ (W_{n−1}, v_{n−1})`,
//! ensemble estimates of `E d(Q_T)`, region labels of the ladder, and the
//! one-step contraction inequalities used as audits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{sample_step, ModelSpec};
use crate::error::{Error, Result};
use crate::grassmann::{act_pair, act_projection, observable_d, GrassmannPair, Operator, Projection, UnitVector};
use crate::linalg::ComplexMatrix;
use crate::partition::{theorem_bound, theta, Ladder, StabilitySpec};
use crate::rng::{stream, Stream};
use crate::stats::mean_and_stderr;

/// Relative slack granted to every audited inequality for round-off.
pub const AUDIT_SLACK: f64 = 1e-12;

/// One evaluated inequality `lhs ≤ rhs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    /// Left-hand side.
    pub lhs: f64,
    /// Right-hand side.
    pub rhs: f64,
}

impl Inequality {
    /// `lhs ≤ rhs`.
    pub fn le(lhs: f64, rhs: f64) -> Self {
        Inequality { lhs, rhs }
    }

    /// `lhs ≥ rhs`, stored with sides swapped.
    pub fn ge(lhs: f64, rhs: f64) -> Self {
        Inequality { lhs: rhs, rhs: lhs }
    }

    /// Holds up to [`AUDIT_SLACK`] relative to the operand size.
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + AUDIT_SLACK * self.lhs.abs().max(self.rhs.abs()).max(1.0)
    }

    /// `lhs − rhs`; non-positive when the inequality holds exactly.
    pub fn excess(&self) -> f64 {
        self.lhs - self.rhs
    }
}

/// Sampled observables of a trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Times `n` at which the state was recorded (0 is the initial state).
    pub times: Vec<u64>,
    /// `d(Q_n)`.
    pub d_values: Vec<f64>,
    /// `‖α̂*Q_nα̂‖`.
    pub norm_a: Vec<f64>,
    /// `‖(γ̂^⊥)*Q_nγ̂^⊥‖`.
    pub norm_gup: Vec<f64>,
    /// Region labels, for pair trajectories.
    pub labels: Option<Vec<RegionLabel>>,
}

impl TrajectoryRecord {
    fn push(&mut self, n: u64, q: &Projection, spec: &StabilitySpec) -> Result<()> {
        self.times.push(n);
        self.d_values.push(observable_d(q, spec)?);
        self.norm_a.push(q.block_norm(spec.rows_a()));
        self.norm_gup.push(q.block_norm(0..spec.la + spec.lb));
        Ok(())
    }
}

/// Projection onto the `q` most unstable directions (the first `q` rows).
pub fn unstable_start(spec: &StabilitySpec, q: usize) -> Projection {
    Projection::coordinate(spec.dim(), 0..q)
}

/// Projection onto the `q` most stable directions (the last `q` rows).
pub fn stable_start(spec: &StabilitySpec, q: usize) -> Projection {
    let l = spec.dim();
    Projection::coordinate(l, l - q..l)
}

/// Run `Q_n = T_n·Q_{n−1}` for `steps` steps, recording every `record_every`
/// steps and at the end. Returns the record and the final projection.
pub fn simulate_projection(
    model: &ModelSpec,
    q0: &Projection,
    steps: u64,
    record_every: u64,
    rng: &mut Stream,
) -> Result<(TrajectoryRecord, Projection)> {
    if steps == 0 || record_every == 0 {
        return Err(Error::InvalidParameter(
            "steps and record_every must be positive".into(),
        ));
    }
    if q0.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial projection in C^{} for a model of dimension {}",
            q0.dim(),
            model.dim()
        )));
    }
    let spec = &model.spec;
    let mut rec = TrajectoryRecord::default();
    rec.push(0, q0, spec)?;
    let mut q = q0.clone();
    for n in 1..=steps {
        let t = sample_step(model, rng).map_err(|e| e.at_step(n))?;
        q = act_projection(&t, &q).map_err(|e| e.at_step(n))?;
        if n % record_every == 0 || n == steps {
            rec.push(n, &q, spec)?;
        }
    }
    Ok((rec, q))
}

/// Final `d(Q_T)` of one trajectory.
pub fn final_d(model: &ModelSpec, q0: &Projection, horizon: u64, rng: &mut Stream) -> Result<f64> {
    let mut q = q0.clone();
    for n in 1..=horizon {
        let t = sample_step(model, rng).map_err(|e| e.at_step(n))?;
        q = act_projection(&t, &q).map_err(|e| e.at_step(n))?;
    }
    observable_d(&q, &model.spec)
}

/// Ensemble estimate of `E d(Q_T)` next to the bound `10 𝜼^{−1} q λ²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedD {
    /// Sample mean of `d(Q_T)`.
    pub mean: f64,
    /// Normal-approximation 95% half-width.
    pub half_width: f64,
    /// Standard error of the mean.
    pub standard_error: f64,
    /// `10 𝜼^{−1} q λ²`.
    pub bound: f64,
    /// Horizon `T`.
    pub horizon: u64,
    /// Number of trajectories.
    pub n_traj: usize,
    /// Master seed.
    pub seed: u64,
}

/// Estimate `E d(Q_T)` over `n_traj` independent trajectories.
///
/// Trajectory `i` draws from `stream(seed, i)`; results are reduced in index
/// order, so the output does not depend on the worker count.
pub fn estimate_expected_d(
    model: &ModelSpec,
    q0: &Projection,
    horizon: u64,
    n_traj: usize,
    seed: u64,
) -> Result<ExpectedD> {
    if n_traj < 2 {
        return Err(Error::InvalidParameter(format!("n_traj = {n_traj} must be at least 2")));
    }
    let ds: Vec<f64> = (0..n_traj)
        .into_par_iter()
        .map(|i| final_d(model, q0, horizon, &mut stream(seed, i as u64)))
        .collect::<Result<_>>()?;
    let (mean, se) = mean_and_stderr(&ds);
    Ok(ExpectedD {
        mean,
        half_width: 1.96 * se,
        standard_error: se,
        bound: theorem_bound(model.spec.macroscopic_gap()?, model.q, model.lambda),
        horizon,
        n_traj,
        seed,
    })
}

/// `2^{−21/5} β^{3/5} 𝜼^{−1/5} ϑ^{−3/5} λ^{7/5}`, the trace threshold of the
/// overwhelming region.
pub fn overwhelming_threshold(beta: f64, eta: f64, lambda: f64) -> f64 {
    2f64.powf(-21.0 / 5.0) * beta.powf(0.6) * eta.powf(-0.2) * theta(lambda).powf(-0.6) * lambda.powf(1.4)
}

/// Ladder parameters frozen for a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderParams {
    /// Cone level σ.
    pub sigma: f64,
    /// Anti-cone level τ.
    pub tau: f64,
    /// Coupling λ entering the anti-cone threshold.
    pub lambda: f64,
    /// Cut indices `A_0 < … < A_{M+2}`.
    pub ladder: Ladder,
    /// `τ_m` for `m = 0..=M+1`.
    pub tau_m: Vec<f64>,
    /// Trace threshold of the overwhelming region.
    pub overwhelming: f64,
}

impl LadderParams {
    /// Explicit parameters; checks `σ + (7/4)λ + (2/σ)(λ/τ) < 1`.
    pub fn new(
        spec: &StabilitySpec,
        sigma: f64,
        tau: f64,
        lambda: f64,
        ladder: Ladder,
        overwhelming: f64,
    ) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 1.0 && tau > 0.0 && tau < 1.0 && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need σ, τ ∈ (0, 1) and λ > 0 (σ = {sigma}, τ = {tau}, λ = {lambda})"
            )));
        }
        let lhs = sigma + 1.75 * lambda + 2.0 / sigma * lambda / tau;
        if !(lhs < 1.0) {
            return Err(Error::Precondition(format!(
                "σ + 7λ/4 + 2λ/(στ) = {lhs} is not below 1"
            )));
        }
        if *ladder.cuts.last().expect("non-empty") > spec.dim() {
            return Err(Error::Dimension("ladder exceeds the model dimension".into()));
        }
        let tau_m = (0..ladder.levels())
            .map(|m| ladder.tau(spec, m))
            .collect::<Result<_>>()?;
        Ok(LadderParams {
            sigma,
            tau,
            lambda,
            ladder,
            tau_m,
            overwhelming,
        })
    }

    /// `σ̄ = 2^{−3/2}`, `τ̄ = 2⁴λ` with a given ladder and β.
    pub fn standard(spec: &StabilitySpec, lambda: f64, beta: f64, ladder: Ladder) -> Result<Self> {
        let eta = spec.macroscopic_gap()?;
        LadderParams::new(
            spec,
            2f64.powf(-1.5),
            16.0 * lambda,
            lambda,
            ladder,
            overwhelming_threshold(beta, eta, lambda),
        )
    }

    /// Anti-cone threshold `(2/σ)(λ/τ)`.
    pub fn anticone_level(&self) -> f64 {
        2.0 / self.sigma * self.lambda / self.tau
    }

    /// Number of levels `M + 2`.
    pub fn levels(&self) -> usize {
        self.ladder.levels()
    }

    /// Classify a pair.
    pub fn label(&self, pair: &GrassmannPair) -> RegionLabel {
        let l = pair.w.dim();
        let ld = &self.ladder;
        let trace = pair.w.block_trace(ld.zeta_perp_rows(l, 0));
        let x: Vec<f64> = (0..self.levels()).map(|m| pair.v.block_mass(ld.x_rows(l, m))).collect();
        let z: Vec<f64> = (0..self.levels()).map(|m| pair.v.block_mass(ld.z_rows(l, m))).collect();
        let cone_index = x.iter().position(|&s| s <= self.sigma);
        let lvl = self.anticone_level();
        let anticone_index = match z.iter().position(|&s| s > lvl) {
            Some(0) => None,
            Some(k) => Some(k - 1),
            None => Some(self.levels() - 1),
        };
        RegionLabel {
            in_overwhelming: trace <= self.overwhelming,
            zeta_perp_trace: trace,
            cone_index,
            anticone_index,
        }
    }
}

/// Ladder position of a pair.
///
/// Cones grow with `m` and anti-cones shrink with `m`, so membership is
/// encoded by two indices: the pair lies in `C_m` iff `m ≥ cone_index` and in
/// `A_m` iff `m ≤ anticone_index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionLabel {
    /// Inside the overwhelming region.
    pub in_overwhelming: bool,
    /// `tr[(ζ̂^⊥)*Wζ̂^⊥]`.
    pub zeta_perp_trace: f64,
    /// Smallest `m` with `‖𝔵_m(v)‖² ≤ σ`.
    pub cone_index: Option<usize>,
    /// Largest `m` with `‖𝔷_m(v)‖² ≤ (2/σ)(λ/τ)`.
    pub anticone_index: Option<usize>,
}

impl RegionLabel {
    /// In `C_m`.
    pub fn in_cone(&self, m: usize) -> bool {
        self.cone_index.is_some_and(|c| m >= c)
    }

    /// In `A_m`.
    pub fn in_anticone(&self, m: usize) -> bool {
        self.anticone_index.is_some_and(|a| m <= a)
    }

    /// In the step `S_m = C_m ∩ A_m`.
    pub fn in_step(&self, m: usize) -> bool {
        self.in_cone(m) && self.in_anticone(m)
    }

    /// In the interspace `I_{m+1/2}`.
    pub fn in_interspace(&self, m: usize) -> bool {
        self.in_cone(m + 1) && !self.in_cone(m) && self.in_anticone(m) && !self.in_anticone(m + 1)
    }

    /// Compact classification: the steps containing the pair, else the interspace.
    pub fn region(&self) -> Region {
        match (self.cone_index, self.anticone_index) {
            (Some(c), Some(a)) if c <= a => Region::Steps { first: c, last: a },
            (Some(c), Some(a)) if c == a + 1 => Region::Interspace { lower: a },
            _ => Region::Other,
        }
    }
}

/// Where a pair sits on the ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Region {
    /// In `S_m` for `first ≤ m ≤ last`.
    Steps { first: usize, last: usize },
    /// In `I_{lower+1/2}`.
    Interspace { lower: usize },
    /// Neither.
    Other,
}

/// Counts of one-step transitions contradicting the allowed movements.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionAudit {
    /// Steps with both endpoints in the overwhelming region.
    pub scored: u64,
    /// Steps skipped because an endpoint left the overwhelming region.
    pub skipped: u64,
    /// Violations per rule 1–5.
    pub violations: [u64; 5],
    /// First violation as `(step, rule, m)`.
    pub first_violation: Option<(u64, usize, usize)>,
}

impl TransitionAudit {
    /// Total violations.
    pub fn total(&self) -> u64 {
        self.violations.iter().sum()
    }

    /// Score the step `n − 1 → n`.
    pub fn record(&mut self, n: u64, prev: &RegionLabel, next: &RegionLabel, params: &LadderParams) {
        if !(prev.in_overwhelming && next.in_overwhelming) {
            self.skipped += 1;
            return;
        }
        self.scored += 1;
        let top = params.levels() - 1;
        let ok_tau = |m: usize| params.tau <= params.tau_m[m];
        for m in 0..=top {
            if !ok_tau(m) {
                continue;
            }
            let mut fail = |rule: usize| {
                self.violations[rule - 1] += 1;
                self.first_violation.get_or_insert((n, rule, m));
            };
            if !prev.in_cone(m) && !prev.in_anticone(m) && next.in_anticone(m) && !next.in_cone(m) {
                fail(1);
            }
            if prev.in_cone(m) && !next.in_cone(m) && !prev.in_anticone(m) {
                fail(2);
            }
            if m < top && ok_tau(m + 1) && !prev.in_anticone(m + 1) && next.in_anticone(m + 1) && !prev.in_interspace(m)
            {
                fail(3);
            }
            if m < top && prev.in_step(m) && !next.in_cone(m) && next.in_anticone(m) && !next.in_interspace(m) {
                fail(4);
            }
            if m >= 1
                && prev.in_interspace(m - 1)
                && !next.in_interspace(m - 1)
                && next.in_anticone(m - 1)
                && !next.in_step(m - 1)
                && !next.in_step(m)
            {
                fail(5);
            }
        }
    }
}

/// Result of a pair trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTrajectory {
    /// `d(W_n + v_nv_n*)` and block norms, with labels at every step.
    pub record: TrajectoryRecord,
    /// Transition audit over the run.
    pub audit: TransitionAudit,
}

/// Run `(W_n, v_n) = T_n ⋆ (W_{n−1}, v_{n−1})`, labelling every state.
pub fn simulate_pair(
    model: &ModelSpec,
    p0: &GrassmannPair,
    steps: u64,
    params: &LadderParams,
    rng: &mut Stream,
) -> Result<PairTrajectory> {
    if p0.w.dim() != model.dim() {
        return Err(Error::Dimension("pair and model dimensions differ".into()));
    }
    let spec = &model.spec;
    let mut rec = TrajectoryRecord::default();
    let mut labels = Vec::with_capacity(steps as usize + 1);
    let mut audit = TransitionAudit::default();
    let mut pair = p0.clone();
    let mut label = params.label(&pair);
    rec.push(0, &pair.combined(), spec)?;
    labels.push(label.clone());
    for n in 1..=steps {
        let t = sample_step(model, rng).map_err(|e| e.at_step(n))?;
        pair = act_pair(&t, &pair).map_err(|e| e.at_step(n))?;
        let next = params.label(&pair);
        audit.record(n, &label, &next, params);
        rec.push(n, &pair.combined(), spec)?;
        labels.push(next.clone());
        label = next;
    }
    rec.labels = Some(labels);
    Ok(PairTrajectory { record: rec, audit })
}

fn r_action(spec: &StabilitySpec) -> ComplexMatrix {
    spec.r_matrix()
}

/// `‖α̂*(R·Q)α̂‖ ≤ [1 − η(L_b+L_c, L_b+L_c+1)(1 − ‖α̂*Qα̂‖)] ‖α̂*Qα̂‖`.
pub fn norm_contraction(spec: &StabilitySpec, q: &Projection) -> Result<Inequality> {
    if spec.la == 0 {
        return Err(Error::Precondition("the unstable block is empty".into()));
    }
    let k = spec.lb + spec.lc;
    let eta = spec.relative_gap(k, k + 1)?;
    let rq = act_projection(&r_action(spec), q)?;
    let n0 = q.block_norm(spec.rows_a());
    Ok(Inequality::le(
        rq.block_norm(spec.rows_a()),
        (1.0 - eta * (1.0 - n0)) * n0,
    ))
}

/// The two trace inequalities for the blocks `α̂` and `γ̂` under `R·`.
pub fn trace_contraction(spec: &StabilitySpec, q: &Projection) -> Result<[Inequality; 2]> {
    let eta = spec.macroscopic_gap()?;
    let rq = act_projection(&r_action(spec), q)?;
    let qm = q.matrix();
    let (ra, rc) = (spec.rows_a(), spec.rows_c());
    let cross: f64 = qm
        .view((rc.start, ra.start), (rc.len(), ra.len()))
        .iter()
        .map(|z| z.norm_sqr())
        .sum();
    Ok([
        Inequality::le(rq.block_trace(ra.clone()), q.block_trace(ra) - eta * cross),
        Inequality::ge(rq.block_trace(rc.clone()), q.block_trace(rc) + eta * cross),
    ])
}

/// `d(R·Q) ≤ (1 − 𝜼(1 − ‖(γ̂^⊥)*Qγ̂^⊥‖)) d(Q)`.
pub fn d_contraction(spec: &StabilitySpec, q: &Projection) -> Result<Inequality> {
    let eta = spec.macroscopic_gap()?;
    let rq = act_projection(&r_action(spec), q)?;
    let gup = q.block_norm(0..spec.la + spec.lb);
    Ok(Inequality::le(
        observable_d(&rq, spec)?,
        (1.0 - eta * (1.0 - gup)) * observable_d(q, spec)?,
    ))
}

fn upper_lower(ladder: &Ladder, m: usize, v: &UnitVector) -> (f64, f64) {
    let l = v.dim();
    (v.block_mass(ladder.x_rows(l, m)), v.block_mass(ladder.z_rows(l, m)))
}

/// The two vector inequalities at level `m` under `(R·W)^⊥R`.
pub fn vector_contraction(
    spec: &StabilitySpec,
    ladder: &Ladder,
    m: usize,
    pair: &GrassmannPair,
) -> Result<[Inequality; 2]> {
    let l = spec.dim();
    let tau = ladder.tau(spec, m)?;
    let next = act_pair(&r_action(spec), pair)?;
    let (x0, z0) = upper_lower(ladder, m, &pair.v);
    let (x1, z1) = upper_lower(ladder, m, &next.v);
    let tr = pair.w.block_trace(ladder.zeta_perp_rows(l, m));
    Ok([
        Inequality::le(x1, x0 * (1.0 - tau * z0) + 2.0 * tr),
        Inequality::ge(z1, z0 * (1.0 + tau * x0) - 2.0 * tr),
    ])
}

/// One-step movement of `‖𝔵_m‖²` and `‖𝔷_m‖²` under a full step `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorMovement {
    /// Level.
    pub m: usize,
    /// `‖𝔵_m(v)‖²` before and after.
    pub x: (f64, f64),
    /// `‖𝔷_m(v)‖²` before and after.
    pub z: (f64, f64),
    /// Whether `‖𝔵_m‖²‖𝔷_m‖² ≥ 2λ/τ_m` held before the step.
    pub ladder_condition: bool,
}

impl VectorMovement {
    /// Bounded drift: `x` rises by at most `(7/4)λ`, `z` falls by at most `(7/4)λ`.
    pub fn bounded_drift(&self, lambda: f64) -> [Inequality; 2] {
        [
            Inequality::le(self.x.1, self.x.0 + 1.75 * lambda),
            Inequality::ge(self.z.1, self.z.0 - 1.75 * lambda),
        ]
    }

    /// Strict movement: `x` falls and `z` rises by at least `λ/4`. Only
    /// meaningful when [`Self::ladder_condition`] holds.
    pub fn strict_drift(&self, lambda: f64) -> [Inequality; 2] {
        [
            Inequality::le(self.x.1, self.x.0 - 0.25 * lambda),
            Inequality::ge(self.z.1, self.z.0 + 0.25 * lambda),
        ]
    }
}

/// Apply `T ⋆` once and report the movement at every ladder level.
pub fn vector_movements<T: Operator + ?Sized>(
    spec: &StabilitySpec,
    ladder: &Ladder,
    lambda: f64,
    t: &T,
    pair: &GrassmannPair,
) -> Result<Vec<VectorMovement>> {
    let next = act_pair(t, pair)?;
    (0..ladder.levels())
        .map(|m| {
            let tau = ladder.tau(spec, m)?;
            let (x0, z0) = upper_lower(ladder, m, &pair.v);
            let (x1, z1) = upper_lower(ladder, m, &next.v);
            Ok(VectorMovement {
                m,
                x: (x0, x1),
                z: (z0, z1),
                ladder_condition: x0 * z0 >= 2.0 * lambda / tau,
            })
        })
        .collect()
}
