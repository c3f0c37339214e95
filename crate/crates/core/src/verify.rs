//! One entry point running every inequality and identity audit on random
//! inputs, producing a scorecard of violation counts.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    d_contraction, norm_contraction, simulate_pair, trace_contraction, vector_contraction, vector_movements,
    Inequality, LadderParams,
};
use crate::ensembles::{
    beta_exact, beta_monte_carlo, haar_frame, haar_unitary, make_haar_model, make_toeplitz_model, BetaForm, Ensemble,
    FactorLaw, ModelSpec, OmegaLaw,
};
use crate::error::{Error, Result};
use crate::grassmann::{act_pair, act_projection, complement_projection, push_frame, Projection};
use crate::linalg::{c, hpd_logdet, matrix_exponential, ComplexMatrix, Frame};
use crate::lyapunov::{verify_step_estimate, StepDraws};
use crate::partition::{subdivide, subdivide_exhaustive, Ladder, StabilitySpec};
use crate::perturbation::{
    block_diagonal_norms, block_offdiagonal_norms, eig_perturb, expansion_maps, psd_difference_norms, rank_certificate,
    vector_expansion_a, LAMBDA_MAX,
};
use crate::rng::{child_seed, stream, Stream};
use crate::sampling::{
    gapped_triple, near_stable_pair, random_invertible, random_ladder, random_pair, random_perturbation,
    random_projection, random_spec, subdivision_instance,
};

/// Tolerance for the action identities.
pub const ALGEBRA_TOL: f64 = 1e-10;
/// Tolerance for the complement-action identity.
pub const COMPLEMENT_TOL: f64 = 1e-9;
/// Tolerance for reconstructing `e^{λP}·Q` from `(X, Y, Z)`.
pub const RECONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance for the QR and log-determinant forms of one Lyapunov increment.
pub const LOGDET_TOL: f64 = 1e-9;
/// Accepted window for the observed order of the eigenvalue remainder.
pub const ORDER_WINDOW: (f64, f64) = (2.5, 3.5);

/// Every audit the suite knows, in registry order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    ActionAlgebra,
    ComplementAction,
    AuxiliaryAction,
    NormContraction,
    TraceContraction,
    DContraction,
    Subdivision,
    ExpansionBounds,
    ExpansionHelperNorms,
    VectorExpansion,
    VectorContraction,
    VectorDrift,
    AllowedMovements,
    StepEstimate,
    LyapunovIncrement,
    EigenvalueExpansion,
    BetaCrossCheck,
}

impl CheckId {
    /// All checks.
    pub const ALL: [CheckId; 17] = [
        CheckId::ActionAlgebra,
        CheckId::ComplementAction,
        CheckId::AuxiliaryAction,
        CheckId::NormContraction,
        CheckId::TraceContraction,
        CheckId::DContraction,
        CheckId::Subdivision,
        CheckId::ExpansionBounds,
        CheckId::ExpansionHelperNorms,
        CheckId::VectorExpansion,
        CheckId::VectorContraction,
        CheckId::VectorDrift,
        CheckId::AllowedMovements,
        CheckId::StepEstimate,
        CheckId::LyapunovIncrement,
        CheckId::EigenvalueExpansion,
        CheckId::BetaCrossCheck,
    ];

    /// Snake-case name used in the scorecard.
    pub fn name(self) -> &'static str {
        match self {
            CheckId::ActionAlgebra => "action_algebra",
            CheckId::ComplementAction => "complement_action",
            CheckId::AuxiliaryAction => "auxiliary_action",
            CheckId::NormContraction => "norm_contraction",
            CheckId::TraceContraction => "trace_contraction",
            CheckId::DContraction => "d_contraction",
            CheckId::Subdivision => "subdivision",
            CheckId::ExpansionBounds => "expansion_bounds",
            CheckId::ExpansionHelperNorms => "expansion_helper_norms",
            CheckId::VectorExpansion => "vector_expansion",
            CheckId::VectorContraction => "vector_contraction",
            CheckId::VectorDrift => "vector_drift",
            CheckId::AllowedMovements => "allowed_movements",
            CheckId::StepEstimate => "step_estimate",
            CheckId::LyapunovIncrement => "lyapunov_increment",
            CheckId::EigenvalueExpansion => "eigenvalue_expansion",
            CheckId::BetaCrossCheck => "beta_cross_check",
        }
    }

    /// What the check asserts.
    pub fn statement(self) -> &'static str {
        match self {
            CheckId::ActionAlgebra => "(T1T2)·Q = T1·(T2·Q), (cT)·Q = T·Q, frame independence, rank preserved",
            CheckId::ComplementAction => "(T·Q)^⊥ = (T^{-1})*·Q^⊥",
            CheckId::AuxiliaryAction => "T⋆(W, v) recombines to T·(W + vv*) with W′v′ = 0",
            CheckId::NormContraction => "‖α̂*(R·Q)α̂‖ ≤ [1 − η(L_b+L_c, L_b+L_c+1)(1 − ‖α̂*Qα̂‖)]‖α̂*Qα̂‖",
            CheckId::TraceContraction => "trace of the α̂ block falls and of the γ̂ block rises by 𝜼‖γ̂*Qα̂‖²",
            CheckId::DContraction => "d(R·Q) ≤ (1 − 𝜼(1 − ‖(γ̂^⊥)*Qγ̂^⊥‖)) d(Q)",
            CheckId::Subdivision => "greedy cuts achieve η(I_{f−1}, I_f) ≥ (1−φ)/F η(A, B) and match exhaustive search",
            CheckId::ExpansionBounds => "e^{λP}·Q = Q + λX + λ²Y + λ³Z, ‖X‖ ≤ 1, ‖Y‖ ≤ 3/2, ‖Z‖ ≤ 20, rank bounds 2/3/4",
            CheckId::ExpansionHelperNorms => "‖A − B‖ ≤ max(‖A‖, ‖B‖) for A, B ≥ 0, and block-diagonal and off-diagonal norm bounds",
            CheckId::VectorExpansion => "|Δ‖𝔡‖²| ≤ 3λ/2, |A_𝔡| ≤ √2, |Δ‖𝔡‖² − λA_𝔡| ≤ 9λ² + 160λ³",
            CheckId::VectorContraction => "‖𝔵_m‖² shrinks and ‖𝔷_m‖² grows under R up to 2 tr[(ζ̂_m^⊥)*Wζ̂_m^⊥]",
            CheckId::VectorDrift => "in the overwhelming region ‖𝔵_m‖², ‖𝔷_m‖² move by at most 7λ/4, and strictly by λ/4 when ‖𝔵_m‖²‖𝔷_m‖² ≥ 2λ/τ_m",
            CheckId::AllowedMovements => "one-step region transitions inside the overwhelming region are among the permitted ones",
            CheckId::StepEstimate => "log det(Φ*T*TΦ) ≥ 2[q log κ_{L_b+L_c} + d(Q) log(κ_L/κ_{L_b+L_c})] + λe^{3λ²/4}tr[(P+P*)(R·Q)] − 3λ²q",
            CheckId::LyapunovIncrement => "Σ log diag of the triangular factor of TΦ = (1/2) log det(Φ*T*TΦ)",
            CheckId::EigenvalueExpansion => "third-order remainder of the lowest eigenvalue within its bound, observed order in [2.5, 3.5]",
            CheckId::BetaCrossCheck => "β estimates agree with closed forms, are non-increasing in q, and both variational forms agree",
        }
    }

    /// Parse a snake-case name.
    pub fn parse(s: &str) -> Result<Self> {
        CheckId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown check `{s}`")))
    }
}

/// Deliberate weakenings used to show that a check can fail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mutation {
    /// Replace the `‖Y‖` bound.
    YBound { bound: f64 },
    /// Drop the `3λ²q` slack of the step estimate.
    DropStepSlack,
}

/// Suite configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    /// Checks to run.
    pub checks: Vec<CheckId>,
    /// Random draws per check.
    pub samples: usize,
    /// Dimensions for the dimension-generic checks.
    pub dims: Vec<usize>,
    /// Optional weakening.
    pub mutation: Option<Mutation>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            checks: CheckId::ALL.to_vec(),
            samples: 1000,
            dims: vec![4, 8, 12],
            mutation: None,
        }
    }
}

impl VerifyConfig {
    fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.iter().any(|&l| !(3..=16).contains(&l)) {
            return Err(Error::InvalidParameter(format!(
                "dims {:?} must lie in 3..=16",
                self.dims
            )));
        }
        if self.samples == 0 {
            return Err(Error::InvalidParameter("samples must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    /// Registry name.
    pub name: String,
    /// What was checked.
    pub statement: String,
    /// Random inputs evaluated.
    pub samples: u64,
    /// Failed comparisons.
    pub violations: u64,
    /// Smallest `bound − value` seen; negative iff violated.
    pub worst_margin: Option<f64>,
    /// Parameters of the run.
    pub params: BTreeMap<String, f64>,
    /// Seed of this check's stream.
    pub seed: u64,
}

/// Results of a suite run, ordered by check name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scorecard {
    /// Master seed.
    pub seed: u64,
    /// Mutation applied, if any.
    pub mutation: Option<Mutation>,
    /// Per-check results.
    pub checks: Vec<CheckResult>,
}

impl Scorecard {
    /// Sum of violations over all checks.
    pub fn total_violations(&self) -> u64 {
        self.checks.iter().map(|c| c.violations).sum()
    }

    /// No violations anywhere.
    pub fn passed(&self) -> bool {
        self.total_violations() == 0
    }

    /// Look up a check by id.
    pub fn get(&self, id: CheckId) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == id.name())
    }
}

#[derive(Default)]
struct Tally {
    samples: u64,
    violations: u64,
    worst: Option<f64>,
    params: BTreeMap<String, f64>,
}

impl Tally {
    fn draw(&mut self) {
        self.samples += 1;
    }

    fn ineq(&mut self, i: Inequality) {
        self.margin(-i.excess(), i.holds());
    }

    fn within(&mut self, err: f64, tol: f64) {
        self.margin(tol - err, err <= tol);
    }

    fn margin(&mut self, m: f64, ok: bool) {
        self.worst = Some(self.worst.map_or(m, |w| w.min(m)));
        if !ok {
            self.violations += 1;
        }
    }

    fn param(&mut self, k: &str, v: f64) {
        self.params.insert(k.to_string(), v);
    }
}

/// Run the configured checks. The scorecard depends only on `(config, seed)`.
pub fn run_all(config: &VerifyConfig, seed: u64) -> Result<Scorecard> {
    if config.checks.is_empty() {
        return Ok(Scorecard {
            seed,
            mutation: config.mutation,
            checks: vec![],
        });
    }
    config.validate()?;
    let mut ids = config.checks.clone();
    ids.sort_by_key(|c| c.name());
    ids.dedup();
    let mut checks = ids
        .par_iter()
        .map(|&id| {
            let s = child_seed(seed, id as u64);
            let mut rng = stream(s, 0);
            let t = run_one(id, config, &mut rng)
                .map_err(|e| Error::InvalidParameter(format!("check `{}` failed to run: {e}", id.name())))?;
            Ok(CheckResult {
                name: id.name().into(),
                statement: id.statement().into(),
                samples: t.samples,
                violations: t.violations,
                worst_margin: t.worst,
                params: t.params,
                seed: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    checks.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(Scorecard {
        seed,
        mutation: config.mutation,
        checks,
    })
}

fn run_one(id: CheckId, cfg: &VerifyConfig, rng: &mut Stream) -> Result<Tally> {
    let mut t = Tally::default();
    t.param("samples", cfg.samples as f64);
    match id {
        CheckId::ActionAlgebra => action_algebra(cfg, rng, &mut t)?,
        CheckId::ComplementAction => complement_action(cfg, rng, &mut t)?,
        CheckId::AuxiliaryAction => auxiliary_action(cfg, rng, &mut t)?,
        CheckId::NormContraction | CheckId::TraceContraction | CheckId::DContraction => {
            contraction(id, cfg, rng, &mut t)?
        }
        CheckId::Subdivision => subdivision(cfg, rng, &mut t)?,
        CheckId::ExpansionBounds => expansion_bounds(cfg, rng, &mut t)?,
        CheckId::ExpansionHelperNorms => helper_norms(cfg, rng, &mut t),
        CheckId::VectorExpansion => vector_expansion(cfg, rng, &mut t)?,
        CheckId::VectorContraction => vector_contraction_check(cfg, rng, &mut t)?,
        CheckId::VectorDrift => vector_drift(cfg, rng, &mut t)?,
        CheckId::AllowedMovements => allowed_movements(cfg, rng, &mut t)?,
        CheckId::StepEstimate => step_estimate(cfg, rng, &mut t)?,
        CheckId::LyapunovIncrement => lyapunov_increment(cfg, rng, &mut t)?,
        CheckId::EigenvalueExpansion => eigenvalue_expansion(cfg, rng, &mut t)?,
        CheckId::BetaCrossCheck => beta_cross_check(cfg, rng, &mut t)?,
    }
    Ok(t)
}

fn pick_dim(cfg: &VerifyConfig, i: usize) -> usize {
    cfg.dims[i % cfg.dims.len()]
}

fn dist(a: &Projection, b: &Projection) -> f64 {
    (a.matrix() - b.matrix()).norm()
}

fn action_algebra(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    t.param("tolerance", ALGEBRA_TOL);
    for i in 0..cfg.samples {
        let l = pick_dim(cfg, i);
        let k = rng.random_range(1..l);
        let (t1, t2) = (random_invertible(l, rng), random_invertible(l, rng));
        let q = random_projection(l, k, rng);
        t.draw();
        let lhs = act_projection(&(&t1 * &t2), &q)?;
        let rhs = act_projection(&t1, &act_projection(&t2, &q)?)?;
        t.within(dist(&lhs, &rhs), ALGEBRA_TOL);
        let z = num_complex::Complex64::from_polar(
            rng.random_range(0.1..10.0),
            rng.random_range(0.0..std::f64::consts::TAU),
        );
        t.within(
            dist(&act_projection(&(&t1 * z), &q)?, &act_projection(&t1, &q)?),
            ALGEBRA_TOL,
        );
        let u = haar_frame(k, k, rng);
        let q2 = Projection::from_frame(Frame::new(q.frame().matrix() * u)?);
        t.within(dist(&act_projection(&t1, &q2)?, &act_projection(&t1, &q)?), ALGEBRA_TOL);
        t.within((lhs.rank() as f64 - k as f64).abs(), 0.0);
    }
    Ok(())
}

fn complement_action(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    t.param("tolerance", COMPLEMENT_TOL);
    for i in 0..cfg.samples {
        let l = pick_dim(cfg, i);
        let k = rng.random_range(1..l);
        let tm = random_invertible(l, rng);
        let q = random_projection(l, k, rng);
        let inv_adj = tm
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Precondition("sampled operator is singular".into()))?
            .adjoint();
        t.draw();
        let lhs = complement_projection(&act_projection(&tm, &q)?);
        let rhs = act_projection(&inv_adj, &complement_projection(&q))?;
        t.within(dist(&lhs, &rhs), COMPLEMENT_TOL);
    }
    Ok(())
}

fn auxiliary_action(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    t.param("tolerance", COMPLEMENT_TOL);
    for i in 0..cfg.samples {
        let l = pick_dim(cfg, i);
        let w = rng.random_range(0..l - 1);
        let tm = random_invertible(l, rng);
        let pair = random_pair(l, w, rng);
        t.draw();
        let next = act_pair(&tm, &pair)?;
        let direct = act_projection(&tm, &pair.combined())?;
        t.within(dist(&next.combined(), &direct), COMPLEMENT_TOL);
        t.within((next.w.matrix() * next.v.as_vector()).norm(), COMPLEMENT_TOL);
    }
    Ok(())
}

fn contraction(id: CheckId, cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    for i in 0..cfg.samples {
        let l = pick_dim(cfg, i);
        let spec = random_spec(l, 0.6, rng);
        let k = rng.random_range(1..=(spec.lb + spec.lc).min(l - 1));
        let q = random_projection(l, k, rng);
        t.draw();
        match id {
            CheckId::NormContraction => t.ineq(norm_contraction(&spec, &q)?),
            CheckId::TraceContraction => trace_contraction(&spec, &q)?.into_iter().for_each(|x| t.ineq(x)),
            _ => t.ineq(d_contraction(&spec, &q)?),
        }
    }
    Ok(())
}

fn subdivision(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    t.param("max_block_length", 12.0);
    let mut attempts = 0usize;
    while (t.samples as usize) < cfg.samples {
        attempts += 1;
        if attempts > 200 * cfg.samples {
            return Err(Error::Precondition("too few admissible subdivision instances".into()));
        }
        let (spec, a, b, f, phi) = subdivision_instance(12, rng);
        let greedy = match subdivide(&spec, a, b, f, phi) {
            Err(Error::Precondition(msg)) if msg.contains("exceeds") => continue,
            other => other,
        };
        t.draw();
        let Ok(res) = greedy else {
            t.margin(-1.0, false);
            continue;
        };
        let floor = (1.0 - phi) / f as f64 * spec.relative_gap(a, b)?;
        for &g in &res.achieved_gaps {
            t.ineq(Inequality::ge(g, floor));
        }
        let strict = res.cut_indices.windows(2).all(|w| w[0] < w[1]);
        let same = subdivide_exhaustive(&spec, a, b, f, phi).is_ok_and(|e| e.cut_indices == res.cut_indices);
        t.margin(if strict && same { 0.0 } else { -1.0 }, strict && same);
    }
    t.param("attempts", attempts as f64);
    Ok(())
}

fn expansion_bounds(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    let y_bound = match cfg.mutation {
        Some(Mutation::YBound { bound }) => bound,
        _ => 1.5,
    };
    t.param("y_bound", y_bound);
    t.param("reconstruction_tol", RECONSTRUCTION_TOL);
    for i in 0..cfg.samples {
        let l = pick_dim(cfg, i);
        let k = rng.random_range(1..l);
        let q = random_projection(l, k, rng);
        // Unitary draws sit on the boundary ‖P‖ = 1 where the bounds are nearly tight.
        let p = if i % 2 == 0 {
            random_perturbation(l, rng)
        } else {
            haar_unitary(l, rng)
        };
        let lambda = rng.random_range(0.0..=LAMBDA_MAX);
        t.draw();
        let tr = expansion_maps(&q, &p, lambda)?;
        let (nx, ny, nz) = tr.norms();
        t.ineq(Inequality::le(nx, 1.0 + 1e-9));
        t.ineq(Inequality::le(ny, y_bound + 1e-9));
        t.ineq(Inequality::le(nz, 20.0 + 1e-6));
        let e = matrix_exponential(&(&p * c(lambda)), 1e-15)?;
        let direct = act_projection(&e, &q)?.matrix();
        t.within((tr.reconstruct(&q.matrix()) - direct).norm(), RECONSTRUCTION_TOL);
        // Q′ inside the complement of Q.
        let kp = rng.random_range(1..=(l - k).min(3));
        let comp = complement_projection(&q);
        let inner = haar_frame(l - k, kp, rng);
        let qp = Projection::from_frame(Frame::new(comp.frame().matrix() * inner)?);
        let cert = rank_certificate(&q, &qp, &p, lambda)?;
        t.margin(if cert.holds() { 0.0 } else { -1.0 }, cert.holds());
    }
    Ok(())
}

fn helper_norms(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) {
    for i in 0..cfg.samples {
        let l = pick_dim(cfg, i);
        t.draw();
        let ga = random_perturbation(l, rng);
        let gb = random_perturbation(l, rng);
        let (a, b) = (&ga * ga.adjoint(), &gb * gb.adjoint());
        let (d, m) = psd_difference_norms(&a, &b);
        t.ineq(Inequality::le(d, m));
        let k = rng.random_range(1..l);
        let q = random_projection(l, k, rng).matrix();
        let (lhs, rhs) = block_diagonal_norms(&q, &ga, &gb);
        t.ineq(Inequality::le(lhs, rhs));
        let (lhs, rhs) = block_offdiagonal_norms(&q, &ga, &gb);
        t.ineq(Inequality::le(lhs, rhs));
    }
}

fn vector_expansion(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    let lambda = 1e-4;
    t.param("lambda", lambda);
    for i in 0..cfg.samples {
        let l = pick_dim(cfg, i);
        let w = rng.random_range(0..l - 1);
        let pair = random_pair(l, w, rng);
        let p = if i % 2 == 0 {
            random_perturbation(l, rng)
        } else {
            haar_unitary(l, rng)
        };
        let kp = rng.random_range(1..l);
        let psi = Frame::new(haar_frame(l, kp, rng))?;
        t.draw();
        let r = vector_expansion_a(&pair, &p, &psi, lambda)?;
        t.ineq(Inequality::le(r.delta.abs(), r.first_order_bound));
        t.ineq(Inequality::le(r.a_d.abs(), std::f64::consts::SQRT_2));
        t.ineq(Inequality::le(r.second_order_residual, r.second_order_bound));
    }
    Ok(())
}

fn vector_contraction_check(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    for i in 0..cfg.samples {
        let l = pick_dim(cfg, i);
        let spec = random_spec(l, 0.6, rng);
        let ladder = random_ladder(&spec, rng);
        let w = rng.random_range(0..l - 1);
        let pair = random_pair(l, w, rng);
        t.draw();
        for m in 0..ladder.levels() {
            vector_contraction(&spec, &ladder, m, &pair)?
                .into_iter()
                .for_each(|x| t.ineq(x));
        }
    }
    Ok(())
}

/// `κ_i = 2^{−i/4}`, `L = 8`, blocks `(2, 4, 2)`, cuts `2 < 3 < 4 < 5 < 6`.
pub fn reference_ladder_model(lambda: f64) -> Result<(ModelSpec, Ladder)> {
    let kappa: Vec<f64> = (0..8).map(|i| 2f64.powf(-(i as f64) / 4.0)).collect();
    let spec = StabilitySpec::new(kappa, 2, 4, 2)?;
    let ladder = Ladder::from_cuts(&spec, vec![2, 3, 4, 5, 6])?;
    let model = ModelSpec::new(spec, Ensemble::IidEntries { dim: 8, scale: 1.0 }, lambda, 2)?;
    Ok((model, ladder))
}

fn vector_drift(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    let (lambda, beta) = (1e-5, 0.4);
    let (model, ladder) = reference_ladder_model(lambda)?;
    let params = LadderParams::standard(&model.spec, lambda, beta, ladder.clone())?;
    t.param("lambda", lambda);
    t.param("beta", beta);
    t.param("overwhelming_threshold", params.overwhelming);
    let l = model.dim();
    let mut strict = 0u64;
    for _ in 0..cfg.samples {
        let w = rng.random_range(0..ladder.d());
        let pair = near_stable_pair(l, ladder.d(), w, params.overwhelming, rng);
        if !params.label(&pair).in_overwhelming {
            continue;
        }
        t.draw();
        let step = crate::ensembles::sample_step(&model, rng)?;
        for mv in vector_movements(&model.spec, &ladder, lambda, &step, &pair)? {
            mv.bounded_drift(lambda).into_iter().for_each(|x| t.ineq(x));
            if mv.ladder_condition {
                strict += 1;
                mv.strict_drift(lambda).into_iter().for_each(|x| t.ineq(x));
            }
        }
    }
    t.param("strict_cases", strict as f64);
    Ok(())
}

fn allowed_movements(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    let (lambda, beta, steps) = (1e-4, 0.4, 50u64);
    let (model, ladder) = reference_ladder_model(lambda)?;
    let params = LadderParams::standard(&model.spec, lambda, beta, ladder.clone())?;
    t.param("lambda", lambda);
    t.param("steps_per_run", steps as f64);
    let runs = cfg.samples.div_ceil(steps as usize).max(1);
    let mut skipped = 0;
    for _ in 0..runs {
        let w = rng.random_range(0..ladder.d());
        let pair = near_stable_pair(model.dim(), ladder.d(), w, params.overwhelming, rng);
        let run = simulate_pair(&model, &pair, steps, &params, rng)?;
        t.samples += run.audit.scored;
        skipped += run.audit.skipped;
        t.violations += run.audit.total();
    }
    t.worst = Some(-(t.violations as f64));
    t.param("skipped", skipped as f64);
    Ok(())
}

fn step_estimate(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    let lambda = 1e-5;
    let with_slack = !matches!(cfg.mutation, Some(Mutation::DropStepSlack));
    let (model, _) = reference_ladder_model(lambda)?;
    let model = model.with_q(1)?;
    t.param("lambda", lambda);
    t.param("with_slack", f64::from(u8::from(with_slack)));
    let random = verify_step_estimate(&model, cfg.samples, StepDraws::Random, with_slack, rng)?;
    let adv = verify_step_estimate(
        &model,
        cfg.samples.div_ceil(10),
        StepDraws::Adversarial,
        with_slack,
        rng,
    )?;
    for a in [random, adv] {
        t.samples += a.samples as u64;
        t.violations += a.violations as u64;
        t.worst = Some(t.worst.map_or(-a.worst_excess, |w| w.min(-a.worst_excess)));
    }
    Ok(())
}

fn lyapunov_increment(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    t.param("tolerance", LOGDET_TOL);
    for i in 0..cfg.samples {
        let l = pick_dim(cfg, i);
        let k = rng.random_range(1..=l);
        let tm = random_invertible(l, rng);
        let phi = Frame::new(haar_frame(l, k, rng))?;
        t.draw();
        let (_, logs) = push_frame(&tm, &phi)?;
        let tphi = &tm * phi.matrix();
        let half = 0.5 * hpd_logdet(&(tphi.adjoint() * &tphi))?;
        t.within((logs.iter().sum::<f64>() - half).abs(), LOGDET_TOL);
    }
    Ok(())
}

/// Observed order `log₂(err(λ)/err(λ/2))` of the second-order eigenvalue remainder.
pub fn observed_order(h0: &ComplexMatrix, h1: &ComplexMatrix, h2: &ComplexMatrix, lambda: f64) -> Result<f64> {
    let a = eig_perturb(h0, h1, h2, lambda)?;
    let b = eig_perturb(h0, h1, h2, lambda / 2.0)?;
    let ea = (a.e0_exact - a.e0_second_order).abs();
    let eb = (b.e0_exact - b.e0_second_order).abs();
    Ok((ea / eb).log2())
}

fn eigenvalue_expansion(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    let (lambda, gap) = (2f64.powi(-10), 0.5);
    let order_samples = cfg.samples.min(100);
    t.param("lambda", lambda);
    t.param("gap", gap);
    t.param("order_samples", order_samples as f64);
    for i in 0..cfg.samples {
        let n = 2 + i % 5;
        let (h0, h1, h2) = gapped_triple(n, gap, rng);
        t.draw();
        let r = eig_perturb(&h0, &h1, &h2, lambda)?;
        t.ineq(Inequality::le(r.residual.abs(), r.bound));
        if i < order_samples {
            let ord = observed_order(&h0, &h1, &h2, lambda)?;
            let ok = (ORDER_WINDOW.0..=ORDER_WINDOW.1).contains(&ord);
            t.margin((ord - ORDER_WINDOW.0).min(ORDER_WINDOW.1 - ord), ok);
        }
    }
    Ok(())
}

/// Outcome of the β comparisons at one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaComparison {
    /// Toeplitz estimate and its standard error.
    pub toeplitz: (f64, f64),
    /// Toeplitz exact value.
    pub toeplitz_exact: f64,
    /// Haar estimates `(q, value, standard error)`.
    pub haar: Vec<(usize, f64, f64)>,
    /// Haar closed-form lower bounds per q.
    pub haar_lower: Vec<f64>,
    /// Complementary-form estimate for Haar at `q = 1`.
    pub haar_complementary: (f64, f64),
}

impl BetaComparison {
    /// Pass/fail per comparison: Toeplitz exact, Haar lower bounds, monotone
    /// in q, primal vs complementary.
    pub fn verdicts(&self) -> Vec<(f64, bool)> {
        let mut out = vec![];
        let (v, se) = self.toeplitz;
        let m = 3.0 * se - (v - self.toeplitz_exact).abs();
        out.push((m, m >= 0.0));
        for ((_, v, se), lb) in self.haar.iter().zip(&self.haar_lower) {
            let m = v - (lb - 3.0 * se);
            out.push((m, m >= 0.0));
        }
        for w in self.haar.windows(2) {
            let m = w[0].1 + 3.0 * w[0].2.hypot(w[1].2) - w[1].1;
            out.push((m, m >= 0.0));
        }
        let (vc, sec) = self.haar_complementary;
        let m = 3.0 * sec.hypot(self.haar[0].2) - (vc - self.haar[0].1).abs();
        out.push((m, m >= 0.0));
        out
    }
}

/// Toeplitz `L = 5`, `L_c = 2`, `ω = ±1` and Haar `L = 4`, `L_c = 3` with
/// uniform diagonal factors, at `q = 1, 2, 3`.
pub fn beta_comparison(n_inner: usize, rng: &mut Stream) -> Result<BetaComparison> {
    let (spec, ens) = make_toeplitz_model(5, 3.0, OmegaLaw::BernoulliPm1, (1, 2, 2))?;
    let tm = ModelSpec::new(spec, ens, 1e-3, 1)?;
    let te = beta_monte_carlo(&tm, n_inner, 4, 20, BetaForm::Primal, rng)?;
    let hspec = StabilitySpec::new(vec![4.0, 3.0, 2.0, 1.0], 1, 0, 3)?;
    let law = FactorLaw::UniformDiagonal { lo: 0.5, hi: 1.0 };
    let hens = make_haar_model(4, law, law)?;
    let mut haar = vec![];
    let mut haar_lower = vec![];
    let mut comp = (0.0, 0.0);
    for q in 1..=3 {
        let m = ModelSpec::new(hspec.clone(), hens.clone(), 1e-3, q)?;
        let e = beta_monte_carlo(&m, n_inner, 4, 20, BetaForm::Primal, rng)?;
        haar.push((q, e.value, e.standard_error));
        haar_lower.push(beta_exact(&m).expect("Haar model has a closed form"));
        if q == 1 {
            let ec = beta_monte_carlo(&m, n_inner, 4, 20, BetaForm::Complementary, rng)?;
            comp = (ec.value, ec.standard_error);
        }
    }
    Ok(BetaComparison {
        toeplitz: (te.value, te.standard_error),
        toeplitz_exact: beta_exact(&tm).expect("Toeplitz q = 1 has a closed form"),
        haar,
        haar_lower,
        haar_complementary: comp,
    })
}

fn beta_cross_check(cfg: &VerifyConfig, rng: &mut Stream, t: &mut Tally) -> Result<()> {
    let n_inner = (4 * cfg.samples).max(100);
    t.param("n_inner", n_inner as f64);
    let cmp = beta_comparison(n_inner, rng)?;
    t.param("toeplitz_estimate", cmp.toeplitz.0);
    t.param("toeplitz_exact", cmp.toeplitz_exact);
    for (m, ok) in cmp.verdicts() {
        t.draw();
        t.margin(m, ok);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(checks: Vec<CheckId>) -> VerifyConfig {
        VerifyConfig {
            checks,
            samples: 60,
            dims: vec![4, 6],
            mutation: None,
        }
    }

    #[test]
    fn empty_check_list_gives_empty_scorecard() {
        let s = run_all(&small(vec![]), 1).unwrap();
        assert!(s.checks.is_empty() && s.passed());
    }

    #[test]
    fn registry_names_are_unique_and_parse() {
        let mut names: Vec<_> = CheckId::ALL.iter().map(|c| c.name()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), CheckId::ALL.len());
        for c in CheckId::ALL {
            assert_eq!(CheckId::parse(c.name()).unwrap(), c);
        }
        assert!(CheckId::parse("nope").is_err());
    }

    #[test]
    fn small_suite_passes_and_is_deterministic() {
        let cfg = small(CheckId::ALL.to_vec());
        let a = run_all(&cfg, 5).unwrap();
        for c in &a.checks {
            assert_eq!(c.violations, 0, "{c:?}");
            assert!(c.samples > 0, "{c:?}");
        }
        let names: Vec<_> = a.checks.iter().map(|c| c.name.clone()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        let b = run_all(&cfg, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mutations_are_detected() {
        let mut cfg = small(vec![CheckId::ExpansionBounds, CheckId::StepEstimate]);
        cfg.mutation = Some(Mutation::YBound { bound: 1.0 });
        let s = run_all(&cfg, 3).unwrap();
        assert!(s.get(CheckId::ExpansionBounds).unwrap().violations > 0);
        assert_eq!(s.get(CheckId::StepEstimate).unwrap().violations, 0);
        cfg.mutation = Some(Mutation::DropStepSlack);
        let s = run_all(&cfg, 3).unwrap();
        assert!(s.get(CheckId::StepEstimate).unwrap().violations > 0);
    }
}
