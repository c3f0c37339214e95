//! Partial sums of Lyapunov exponents from a propagated nested frame, the
//! reflection identity for the adjoint-inverse cocycle, the one-step
//! log-determinant estimate, and the closed-form bounds.

use serde::{Deserialize, Serialize};

use crate::ensembles::{haar_frame, ModelSpec};
use crate::error::{Error, Result};
use crate::grassmann::{act_projection, observable_d, push_frame, Operator, Projection};
use crate::linalg::{c, hpd_logdet, real_trace, ComplexMatrix, Frame};
use crate::partition::{check_hypotheses, Beta, BetaSource, HypothesisReport};
use crate::rng::Stream;
use crate::stats::batch_means;

/// Number of batches used for batch-means standard errors.
pub const BATCHES: usize = 32;
/// Default burn-in.
pub const DEFAULT_BURN_IN: u64 = 1000;
/// Largest coupling accepted by the one-step estimate audit.
pub const STEP_ESTIMATE_LAMBDA_MAX: f64 = 1.0 / 8192.0;

/// Estimate of `Σ_{w≤q} γ_w` in nats per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Number of exponents summed.
    pub q: usize,
    /// Time average of the half log-determinant increments.
    pub partial_sum: f64,
    /// Batch-means standard error.
    pub standard_error: f64,
    /// Steps averaged after burn-in.
    pub per_step_samples: u64,
    /// Steps discarded before averaging.
    pub burn_in: u64,
    /// `q ×` the lower bound on the average of the top `q` exponents, when `q` is the model rank.
    pub bound_lower: Option<f64>,
    /// `q ×` the upper bound on the average of the bottom `q` exponents, when `q` is the model rank.
    pub bound_upper: Option<f64>,
    /// Per-batch means.
    pub batch_means: Vec<f64>,
}

/// Per-step half log-determinant increments of the nested frames `1..=q_max`.
///
/// Row `n` holds `log R_ii` for `i < q_max`; the partial sum for `q` at step
/// `n` is the sum of the first `q` entries.
pub fn log_increments<F>(
    l: usize,
    q_max: usize,
    steps: u64,
    burn_in: u64,
    rng: &mut Stream,
    mut next_step: F,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&mut Stream) -> Result<Box<dyn Operator>>,
{
    if q_max == 0 || q_max > l {
        return Err(Error::InvalidParameter(format!("q_max = {q_max} outside 1..={l}")));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be positive".into()));
    }
    let mut phi = Frame::new(haar_frame(l, q_max, rng))?;
    let mut out = Vec::with_capacity(steps as usize);
    for n in 1..=burn_in + steps {
        let t = next_step(rng).map_err(|e| e.at_step(n))?;
        let (next, logs) = push_frame(t.as_ref(), &phi).map_err(|e| e.at_step(n))?;
        phi = next;
        if n > burn_in {
            out.push(logs);
        }
    }
    Ok(out)
}

fn summarize(rows: &[Vec<f64>], q_max: usize, burn_in: u64) -> Vec<LyapunovEstimate> {
    let mut cumulative = vec![0.0; rows.len()];
    (1..=q_max)
        .map(|q| {
            for (acc, r) in cumulative.iter_mut().zip(rows) {
                *acc += r[q - 1];
            }
            let (mean, se) = batch_means(&cumulative, BATCHES);
            LyapunovEstimate {
                q,
                partial_sum: mean,
                standard_error: se,
                per_step_samples: rows.len() as u64,
                burn_in,
                bound_lower: None,
                bound_upper: None,
                batch_means: batch_vector(&cumulative, BATCHES),
            }
        })
        .collect()
}

fn batch_vector(xs: &[f64], batches: usize) -> Vec<f64> {
    let size = xs.len() / batches;
    if size == 0 {
        return vec![];
    }
    (0..batches)
        .map(|k| xs[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64)
        .collect()
}

/// Estimate `Σ_{w≤q} γ_w` for every `q ≤ q_max` from one trajectory of a
/// nested `L x q_max` frame.
pub fn estimate_partial_sums(
    model: &ModelSpec,
    q_max: usize,
    steps: u64,
    burn_in: u64,
    rng: &mut Stream,
) -> Result<Vec<LyapunovEstimate>> {
    let rows = log_increments(model.dim(), q_max, steps, burn_in, rng, |r| {
        let p = model.sample_perturbation(r)?;
        Ok(Box::new(model.step_for(&p)?) as Box<dyn Operator>)
    })?;
    let mut est = summarize(&rows, q_max, burn_in);
    let bounds = evaluate_bounds(model)?;
    if let Some(e) = est.get_mut(model.q - 1) {
        let qf = model.q as f64;
        e.bound_lower = Some(qf * bounds.lower);
        e.bound_upper = Some(qf * bounds.upper);
    }
    Ok(est)
}

/// Independent replicas from distinct random initial frames, combined by
/// the mean over replicas with the replica spread as standard error.
///
/// Replica `i` uses `stream(seed, i)`; results do not depend on the number of
/// worker threads. Agreement of the replicas is the practical check that the
/// limit does not depend on the initial frame.
pub fn estimate_replicated(
    model: &ModelSpec,
    q_max: usize,
    steps: u64,
    burn_in: u64,
    replicas: usize,
    seed: u64,
) -> Result<(Vec<LyapunovEstimate>, Vec<Vec<LyapunovEstimate>>)> {
    use rayon::prelude::*;
    if replicas < 2 {
        return Err(Error::InvalidParameter("at least two replicas are needed".into()));
    }
    let runs = (0..replicas)
        .into_par_iter()
        .map(|i| estimate_partial_sums(model, q_max, steps, burn_in, &mut crate::rng::stream(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let combined = (0..q_max)
        .map(|k| {
            let xs: Vec<f64> = runs.iter().map(|r| r[k].partial_sum).collect();
            let (mean, se) = crate::stats::mean_and_stderr(&xs);
            LyapunovEstimate {
                partial_sum: mean,
                standard_error: se,
                per_step_samples: steps * replicas as u64,
                batch_means: xs,
                ..runs[0][k].clone()
            }
        })
        .collect();
    Ok((combined, runs))
}

/// Paired forward/adjoint-inverse estimate of `γ_q + γ′_{L−q+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionReport {
    /// Index `q`.
    pub q: usize,
    /// `γ̂_q` of the forward cocycle.
    pub gamma: f64,
    /// `γ̂′_{L−q+1}` of the adjoint-inverse cocycle.
    pub gamma_reflected: f64,
    /// `|γ̂_q + γ̂′_{L−q+1}|`.
    pub discrepancy: f64,
    /// Batch-means standard error of the paired per-step sum.
    pub combined_standard_error: f64,
    /// Steps after burn-in.
    pub steps: u64,
}

/// Run `T_n` and `(T_n*)^{−1}` on the same draws and compare `γ_q` with
/// `−γ′_{L−q+1}`.
pub fn reflection_check(
    model: &ModelSpec,
    q: usize,
    steps: u64,
    burn_in: u64,
    rng: &mut Stream,
) -> Result<ReflectionReport> {
    let l = model.dim();
    if q == 0 || q > l {
        return Err(Error::InvalidParameter(format!("q = {q} outside 1..={l}")));
    }
    let qr = l - q + 1;
    let mut phi = Frame::new(haar_frame(l, q, rng))?;
    let mut psi = Frame::new(haar_frame(l, qr, rng))?;
    let mut paired = Vec::with_capacity(steps as usize);
    let (mut fwd, mut bwd) = (0.0, 0.0);
    for n in 1..=burn_in + steps {
        let p = model.sample_perturbation(rng).map_err(|e| e.at_step(n))?;
        let t = model.step_for(&p).map_err(|e| e.at_step(n))?;
        let ti = t.adjoint_inverse().map_err(|e| e.at_step(n))?;
        let (a, la) = push_frame(&t, &phi).map_err(|e| e.at_step(n))?;
        let (b, lb) = push_frame(&ti, &psi).map_err(|e| e.at_step(n))?;
        phi = a;
        psi = b;
        if n > burn_in {
            let (g, gr) = (la[q - 1], lb[qr - 1]);
            fwd += g;
            bwd += gr;
            paired.push(g + gr);
        }
    }
    let nf = steps as f64;
    let (_, se) = batch_means(&paired, BATCHES);
    let (gamma, gamma_reflected) = (fwd / nf, bwd / nf);
    Ok(ReflectionReport {
        q,
        gamma,
        gamma_reflected,
        discrepancy: (gamma + gamma_reflected).abs(),
        combined_standard_error: se,
        steps,
    })
}

/// Which draws [`verify_step_estimate`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDraws {
    /// Haar-random `Q` of rank `q`, `P` from the model.
    Random,
    /// `Q` at the stability level `L_b + L_c`, `P` a nilpotent-like block
    /// coupling it to an unstable row, for which the estimate is nearly tight.
    Adversarial,
}

/// Outcome of the one-step log-determinant audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEstimateAudit {
    /// Draws evaluated.
    pub samples: usize,
    /// Draws with `lhs < rhs`.
    pub violations: usize,
    /// Largest `rhs − lhs`.
    pub worst_excess: f64,
    /// Whether the `3λ²q` slack was kept.
    pub with_slack: bool,
    /// Draw mode.
    pub draws: StepDraws,
}

/// Both sides of the one-step estimate for a fixed `(Q, P)`.
///
/// `lhs = log det(Φ*T*TΦ)` with `T = e^{λP}R`, and
/// `rhs = 2[q log κ_{L_b+L_c} + d(Q) log(κ_L/κ_{L_b+L_c})] + λe^{3λ²/4} tr[(P+P*)(R·Q)] − 3λ²q`.
pub fn step_estimate_sides(
    model: &ModelSpec,
    q: &Projection,
    p: &ComplexMatrix,
    with_slack: bool,
) -> Result<(f64, f64)> {
    let spec = &model.spec;
    let lambda = model.lambda;
    let k = spec.lb + spec.lc;
    let kk = spec.kappa_at(k);
    let kl = spec.kappa_at(spec.dim());
    let t = model.step_for(&crate::ensembles::Perturbation::Dense(p.clone()))?;
    let tphi = t.apply(q.frame().matrix());
    let lhs = hpd_logdet(&(tphi.adjoint() * &tphi))?;
    let rq = act_projection(&spec.r_matrix(), q)?.matrix();
    let coupling = real_trace(&((p + p.adjoint()) * rq));
    let qf = q.rank() as f64;
    let mut rhs = 2.0 * (qf * kk.ln() + observable_d(q, spec)? * (kl / kk).ln())
        + lambda * (0.75 * lambda * lambda).exp() * coupling;
    if with_slack {
        rhs -= 3.0 * lambda * lambda * qf;
    }
    Ok((lhs, rhs))
}

fn adversarial_draw(model: &ModelSpec, rng: &mut Stream) -> (Projection, ComplexMatrix) {
    use rand::Rng;
    let spec = &model.spec;
    let l = spec.dim();
    let q = model.q;
    let r = spec.row_of(spec.lb + spec.lc);
    // The first row is the coupled partner; Q holds row r and rows below it.
    let mut rows: Vec<usize> = vec![r];
    rows.extend((r + 1..l).take(q - 1));
    let partner = (0..l).find(|i| !rows.contains(i)).expect("q < L leaves a free row");
    let phase = num_complex::Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
    let mut p = ComplexMatrix::zeros(l, l);
    p[(r, partner)] = -phase;
    p[(partner, r)] = phase.conj() * c(0.25);
    (Projection::coordinate(l, rows), p)
}

/// Count violations of the one-step estimate over `samples` draws.
pub fn verify_step_estimate(
    model: &ModelSpec,
    samples: usize,
    draws: StepDraws,
    with_slack: bool,
    rng: &mut Stream,
) -> Result<StepEstimateAudit> {
    if model.lambda > STEP_ESTIMATE_LAMBDA_MAX {
        return Err(Error::InvalidParameter(format!("λ = {} exceeds 2^-13", model.lambda)));
    }
    let l = model.dim();
    if model.q + model.spec.la > l || model.q >= l {
        return Err(Error::Precondition(
            "q too large for the adversarial construction".into(),
        ));
    }
    let mut audit = StepEstimateAudit {
        samples,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
        with_slack,
        draws,
    };
    for _ in 0..samples {
        let (q, p) = match draws {
            StepDraws::Random => {
                let q = Projection::from_frame(Frame::new(haar_frame(l, model.q, rng))?);
                let pert = model.sample_perturbation(rng)?;
                (q, model.dense_perturbation(&pert))
            }
            StepDraws::Adversarial => adversarial_draw(model, rng),
        };
        let (lhs, rhs) = step_estimate_sides(model, &q, &p, with_slack)?;
        let excess = rhs - lhs;
        audit.worst_excess = audit.worst_excess.max(excess);
        if excess > 0.0 {
            audit.violations += 1;
        }
    }
    Ok(audit)
}

/// Closed-form bounds on averaged exponents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovBounds {
    /// Lower bound on `(1/q) Σ_{w≤q} γ_w`.
    pub lower: f64,
    /// Upper bound on `(1/q) Σ_{w>L−q} γ_w`.
    pub upper: f64,
    /// Macroscopic gap used.
    pub eta: f64,
    /// Hypothesis verdicts, when λ > 0 and a closed-form β is known.
    pub hypotheses: Option<HypothesisReport>,
}

/// `log κ_{L_b+L_c} − [3/2 − 10𝜼^{−1} log(κ_L/κ_{L_b+L_c})]λ²` and
/// `log κ_{L_b} + [3/2 − 10𝜼^{−1} log(κ_{L_b}/κ_1)]λ²`.
pub fn evaluate_bounds(model: &ModelSpec) -> Result<LyapunovBounds> {
    let s = &model.spec;
    let eta = s.macroscopic_gap()?;
    let l2 = model.lambda * model.lambda;
    let kbc = s.kappa_at(s.lb + s.lc);
    let lower = kbc.ln() - (1.5 - 10.0 / eta * (s.kappa_at(s.dim()) / kbc).ln()) * l2;
    let upper = if s.lb == 0 {
        f64::NAN
    } else {
        let kb = s.kappa_at(s.lb);
        kb.ln() + (1.5 - 10.0 / eta * (kb / s.kappa_at(1)).ln()) * l2
    };
    let hypotheses = match crate::ensembles::beta_exact(model) {
        Some(b) if model.lambda > 0.0 => Some(check_hypotheses(
            s,
            model.lambda,
            model.q,
            Beta {
                value: b,
                source: BetaSource::Exact,
            },
        )?),
        _ => None,
    };
    Ok(LyapunovBounds {
        lower,
        upper,
        eta,
        hypotheses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{make_toeplitz_model, Ensemble, OmegaLaw};
    use crate::linalg::c;
    use crate::partition::StabilitySpec;
    use crate::rng::stream;

    fn diag_model(kappa: Vec<f64>, lambda: f64) -> ModelSpec {
        let l = kappa.len();
        let spec = StabilitySpec::new(kappa, 1, l - 2, 1).unwrap();
        ModelSpec::new(spec, Ensemble::IidEntries { dim: l, scale: 1.0 }, lambda, 1).unwrap()
    }

    #[test]
    fn zero_coupling_is_exact() {
        let m = diag_model(vec![2.0, 1.0, 0.5], 0.0);
        let est = estimate_partial_sums(&m, 3, 500, 200, &mut stream(1, 0)).unwrap();
        let expect = [2f64.ln(), 2f64.ln(), 0.0];
        for (e, x) in est.iter().zip(expect) {
            assert!((e.partial_sum - x).abs() < 1e-9, "{e:?}");
        }
        assert!(est[0].bound_lower.is_some() && est[1].bound_lower.is_none());
    }

    #[test]
    fn full_rank_sum_is_log_det() {
        let m = diag_model(vec![1.5, 1.2, 1.0, 0.7], 1e-2);
        let mut rng = stream(2, 0);
        let est = estimate_partial_sums(&m, 4, 300, 0, &mut rng.clone()).unwrap();
        // Replay the same draws: the first Haar frame consumes the stream first.
        let _ = haar_frame(4, 4, &mut rng);
        let mut acc = 0.0;
        for _ in 0..300 {
            let p = m.sample_perturbation(&mut rng).unwrap();
            let t = m.step_for(&p).unwrap().to_dense();
            acc += t.determinant().norm().ln();
        }
        assert!((est[3].partial_sum - acc / 300.0).abs() < 1e-10);
    }

    #[test]
    fn reflection_exact_without_coupling() {
        let m = diag_model(vec![2.0, 1.5, 1.0, 0.5], 0.0);
        let r = reflection_check(&m, 2, 300, 200, &mut stream(3, 0)).unwrap();
        assert!(r.discrepancy < 1e-12, "{r:?}");
        assert!((r.gamma - 1.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn reflected_spec_keeps_gaps() {
        let s = StabilitySpec::new(vec![4.0, 3.0, 2.0, 1.0], 1, 2, 1).unwrap();
        let r = s.reflected();
        for i in 1..4 {
            for j in i + 1..=4 {
                let g = s.relative_gap(i, j).unwrap();
                let gr = r.relative_gap(5 - j, 5 - i).unwrap();
                assert!((g - gr).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn step_estimate_at_zero_coupling() {
        let m = diag_model(vec![4.0, 3.0, 2.0, 1.5, 1.0], 0.0);
        let q = Projection::coordinate(5, [4]);
        let (lhs, rhs) = step_estimate_sides(&m, &q, &ComplexMatrix::zeros(5, 5), true).unwrap();
        assert!((lhs - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!(lhs >= rhs);
    }

    #[test]
    fn step_estimate_random_and_mutation() {
        let (spec, ens) = make_toeplitz_model(7, 3.0, OmegaLaw::UniformPm1, (3, 2, 2)).unwrap();
        let m = ModelSpec::new(spec, ens, 1e-5, 1).unwrap();
        let a = verify_step_estimate(&m, 500, StepDraws::Random, true, &mut stream(4, 0)).unwrap();
        assert_eq!(a.violations, 0);
        let b = verify_step_estimate(&m, 100, StepDraws::Adversarial, true, &mut stream(4, 1)).unwrap();
        assert_eq!(b.violations, 0);
        let c = verify_step_estimate(&m, 100, StepDraws::Adversarial, false, &mut stream(4, 1)).unwrap();
        assert!(c.violations > 0);
    }

    #[test]
    fn bounds_at_zero_coupling_and_example() {
        let s = StabilitySpec::new(vec![4.0, 3.0, 2.0, 1.0], 1, 2, 1).unwrap();
        let m0 = ModelSpec::new(s.clone(), Ensemble::zero(4), 0.0, 1).unwrap();
        let b = evaluate_bounds(&m0).unwrap();
        assert_eq!(b.lower, 2f64.ln());
        assert_eq!(b.upper, 3f64.ln());
        let m = m0.with_lambda(1e-3).unwrap();
        let b = evaluate_bounds(&m).unwrap();
        let eta = s.macroscopic_gap().unwrap();
        let expect = 2f64.ln() - (1.5 - 10.0 / eta * 0.5f64.ln()) * 1e-6;
        assert!((b.lower - expect).abs() < 1e-15);
    }

    #[test]
    fn top_exponent_matches_norm_growth() {
        let spec = StabilitySpec::new(vec![1.2, 1.0], 1, 0, 1).unwrap();
        let m = ModelSpec::new(spec, Ensemble::IidEntries { dim: 2, scale: 1.0 }, 0.2, 1).unwrap();
        let (n, burn) = (40_000u64, 500u64);
        let est = estimate_partial_sums(&m, 1, n, burn, &mut stream(8, 0)).unwrap();
        let mut rng = stream(8, 1);
        let mut v = crate::linalg::ComplexVector::from_element(2, c(1.0));
        let mut acc = 0.0;
        let mut incs = Vec::with_capacity(n as usize);
        for k in 0..burn + n {
            let p = m.sample_perturbation(&mut rng).unwrap();
            v = m.step_for(&p).unwrap().to_dense() * v;
            let r = v.norm();
            v /= c(r);
            if k >= burn {
                acc += r.ln();
                incs.push(r.ln());
            }
        }
        let (_, se) = crate::stats::batch_means(&incs, BATCHES);
        let direct = acc / n as f64;
        let tol = 3.0 * est[0].standard_error.hypot(se);
        assert!(
            (est[0].partial_sum - direct).abs() <= tol,
            "{} vs {direct} (tol {tol})",
            est[0].partial_sum
        );
    }

    #[test]
    fn increments_are_ordered_and_replicas_agree() {
        let (spec, ens) = make_toeplitz_model(5, 3.0, OmegaLaw::UniformPm1, (1, 2, 2)).unwrap();
        let m = ModelSpec::new(spec, ens, 0.05, 1).unwrap();
        let (comb, runs) = estimate_replicated(&m, 5, 4000, 200, 4, 12).unwrap();
        for k in 1..5 {
            let g_prev = comb[k - 1].partial_sum - if k >= 2 { comb[k - 2].partial_sum } else { 0.0 };
            let g = comb[k].partial_sum - comb[k - 1].partial_sum;
            let se = comb[k].standard_error + comb[k - 1].standard_error;
            assert!(g <= g_prev + 3.0 * se.max(1e-12), "w = {}", k + 1);
        }
        for r in &runs {
            let d = (r[0].partial_sum - comb[0].partial_sum).abs();
            assert!(d <= 6.0 * r[0].standard_error.hypot(comb[0].standard_error).max(1e-12));
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let again = pool.install(|| estimate_replicated(&m, 5, 4000, 200, 4, 12).unwrap());
        assert_eq!(again.0, comb);
    }

    #[test]
    fn burn_in_shift_is_invisible() {
        let (spec, ens) = make_toeplitz_model(5, 3.0, OmegaLaw::UniformPm1, (1, 2, 2)).unwrap();
        let m = ModelSpec::new(spec, ens, 0.05, 1).unwrap();
        let a = estimate_partial_sums(&m, 2, 20_000, 1000, &mut stream(13, 0)).unwrap();
        let b = estimate_partial_sums(&m, 2, 20_000, 2000, &mut stream(13, 1)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.partial_sum - y.partial_sum).abs() <= 3.0 * x.standard_error.hypot(y.standard_error));
        }
    }
}
