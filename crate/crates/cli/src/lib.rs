//! Configuration, command runners and serialization for the `grassflow`
//! binary.
//!
//! Every command takes a serializable config, runs deterministically from its
//! seed, and returns an [`Output`]: a versioned JSON document plus an
//! optional CSV table.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use grassflow::dynamics::{
    estimate_expected_d, simulate_pair, simulate_projection, stable_start, unstable_start, LadderParams, Region,
    TrajectoryRecord,
};
use grassflow::ensembles::{
    beta_exact, beta_monte_carlo, make_haar_model, make_toeplitz_model, toeplitz_kappa, BetaForm, Ensemble, FactorLaw,
    ModelSpec, OmegaLaw,
};
use grassflow::grassmann::{GrassmannPair, Projection, UnitVector};
use grassflow::lyapunov::{
    estimate_partial_sums, estimate_replicated, evaluate_bounds, reflection_check, LyapunovEstimate,
};
use grassflow::partition::{check_hypotheses, check_scalar_hypotheses, Beta, BetaSource, Ladder, StabilitySpec};
use grassflow::perturbation::{eig_perturb, expansion_maps, LAMBDA_MAX};
use grassflow::rng::{child_seed, stream};
use grassflow::sampling::{gapped_triple, random_perturbation, random_projection};
use grassflow::verify::{run_all, VerifyConfig};

/// Version of the JSON output layout.
pub const SCHEMA_VERSION: u32 = 1;
/// CSV header for trajectory output.
pub const TRAJECTORY_COLUMNS: &str = "time,d,norm_a,norm_gup,flags";

/// Perturbation family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Random Toeplitz (Fourier-diagonal) perturbations.
    Toeplitz,
    /// `P = AUB` with `U` Haar.
    Haar,
    /// Normalized complex Ginibre perturbations.
    Iid,
}

/// Model block shared by the commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelKind,
    #[serde(rename = "L")]
    pub l: usize,
    /// Toeplitz decay parameter, `s > 2`.
    pub s: f64,
    /// Toeplitz ω law: `uniform_pm1`, `bernoulli_pm1`, `uniform_interval:<h>`.
    pub omega: String,
    /// Explicit κ for the Haar and i.i.d. models; defaults to the Toeplitz κ.
    pub kappa: Option<Vec<f64>>,
    #[serde(rename = "La")]
    pub la: Option<usize>,
    #[serde(rename = "Lb")]
    pub lb: Option<usize>,
    #[serde(rename = "Lc")]
    pub lc: Option<usize>,
    /// Haar factor laws: `identity`, `zero`, `scaled:<c>`, `uniform:<lo>:<hi>`.
    pub a_law: String,
    pub b_law: String,
    /// Scale of the i.i.d. model.
    pub scale: f64,
    pub lambda: f64,
    pub q: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model: ModelKind::Toeplitz,
            l: 7,
            s: 3.0,
            omega: "uniform_pm1".into(),
            kappa: None,
            la: None,
            lb: None,
            lc: None,
            a_law: "identity".into(),
            b_law: "identity".into(),
            scale: 1.0,
            lambda: 1e-4,
            q: 1,
        }
    }
}

/// Parse a Haar factor law.
pub fn parse_factor_law(s: &str) -> Result<FactorLaw> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |x: &str| {
        x.parse::<f64>()
            .with_context(|| format!("bad number {x:?} in factor law {s:?}"))
    };
    Ok(match parts.as_slice() {
        ["identity"] => FactorLaw::Identity,
        ["zero"] => FactorLaw::Zero,
        ["scaled", c] => FactorLaw::Scaled { factor: num(c)? },
        ["uniform", lo, hi] => FactorLaw::UniformDiagonal {
            lo: num(lo)?,
            hi: num(hi)?,
        },
        _ => bail!("unknown factor law {s:?}"),
    })
}

impl ModelConfig {
    /// Block sizes with defaults `L_c = max(1, ⌊L/3⌋)`, `L_a = ⌈L/3⌉`.
    pub fn partition(&self) -> Result<(usize, usize, usize)> {
        let l = self.l;
        let lc = self.lc.unwrap_or((l / 3).max(1));
        let la = self.la.unwrap_or(l.div_ceil(3));
        let lb = match self.lb {
            Some(b) => b,
            None => l
                .checked_sub(la + lc)
                .with_context(|| format!("La + Lc = {} exceeds L = {l}", la + lc))?,
        };
        if la + lb + lc != l {
            bail!("La + Lb + Lc = {} differs from L = {l}", la + lb + lc);
        }
        Ok((la, lb, lc))
    }

    /// Build the model.
    pub fn build(&self) -> Result<ModelSpec> {
        let (la, lb, lc) = self.partition()?;
        let kappa = || -> Result<Vec<f64>> {
            match &self.kappa {
                Some(k) if k.len() != self.l => bail!("kappa has {} entries, L = {}", k.len(), self.l),
                Some(k) => Ok(k.clone()),
                None => Ok(toeplitz_kappa(self.l, self.s)),
            }
        };
        let (spec, ens) = match self.model {
            ModelKind::Toeplitz => {
                if self.kappa.is_some() {
                    bail!("kappa is determined by L and s for the Toeplitz model");
                }
                make_toeplitz_model(self.l, self.s, OmegaLaw::parse(&self.omega)?, (la, lb, lc))?
            }
            ModelKind::Haar => (
                StabilitySpec::new(kappa()?, la, lb, lc)?,
                make_haar_model(self.l, parse_factor_law(&self.a_law)?, parse_factor_law(&self.b_law)?)?,
            ),
            ModelKind::Iid => (
                StabilitySpec::new(kappa()?, la, lb, lc)?,
                Ensemble::IidEntries {
                    dim: self.l,
                    scale: self.scale,
                },
            ),
        };
        Ok(ModelSpec::new(spec, ens, self.lambda, self.q)?)
    }
}

/// Initial condition of `simulate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// The `q` most unstable directions.
    Unstable,
    /// The `q` most stable directions.
    Stable,
}

/// `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelConfig,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub traj: usize,
    /// Sampling interval of the CSV trajectory; defaults to `max(1, T/1000)`.
    pub record_every: Option<u64>,
    pub start: Start,
    /// Ladder cuts; when set the CSV trajectory is a pair run with region flags.
    pub ladder_cuts: Option<Vec<usize>>,
    /// β for the overwhelming threshold; defaults to the closed form.
    pub beta: Option<f64>,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            model: ModelConfig::default(),
            horizon: 100_000,
            traj: 200,
            record_every: None,
            start: Start::Unstable,
            ladder_cuts: None,
            beta: None,
            seed: 0,
        }
    }
}

/// `lyapunov`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    pub model: ModelConfig,
    /// Largest partial sum; defaults to `L`.
    pub q_max: Option<usize>,
    #[serde(rename = "N")]
    pub steps: u64,
    pub burn_in: u64,
    /// Independent replicas; one means a single long run.
    pub replicas: usize,
    /// Also run the paired reflection estimate for every `q ≤ q_max`.
    pub reflection: bool,
    pub seed: u64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig {
            model: ModelConfig::default(),
            q_max: None,
            steps: 100_000,
            burn_in: grassflow::lyapunov::DEFAULT_BURN_IN,
            replicas: 1,
            reflection: false,
            seed: 0,
        }
    }
}

/// `beta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaConfig {
    pub model: ModelConfig,
    pub n_inner: usize,
    pub starts: usize,
    pub iters: usize,
    pub form: BetaForm,
    pub seed: u64,
}

impl Default for BetaConfig {
    fn default() -> Self {
        BetaConfig {
            model: ModelConfig::default(),
            n_inner: 20_000,
            starts: 4,
            iters: 20,
            form: BetaForm::Primal,
            seed: 0,
        }
    }
}

/// `check`: with `eta` the scalar hypotheses only, otherwise the model's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub model: Option<ModelConfig>,
    pub lambda: f64,
    pub q: usize,
    pub beta: Option<f64>,
    pub eta: Option<f64>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            model: None,
            lambda: 1e-4,
            q: 1,
            beta: None,
            eta: None,
        }
    }
}

/// `verify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct VerifyRunConfig {
    pub suite: VerifyConfig,
    pub seed: u64,
}

/// `perturb`: expansion maps on random `(Q, P)` and the eigenvalue expansion
/// on random gapped triples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    #[serde(rename = "L")]
    pub l: usize,
    pub rank: usize,
    pub lambda: f64,
    pub samples: usize,
    pub eig_size: usize,
    pub gap: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            l: 6,
            rank: 2,
            lambda: 2f64.powi(-10),
            samples: 100,
            eig_size: 4,
            gap: 0.5,
            seed: 0,
        }
    }
}

/// A full invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    Simulate(SimulateConfig),
    Lyapunov(LyapunovConfig),
    Beta(BetaConfig),
    Check(CheckConfig),
    Verify(VerifyRunConfig),
    Perturb(PerturbConfig),
}

impl RunConfig {
    /// Command name.
    pub fn command(&self) -> &'static str {
        match self {
            RunConfig::Simulate(_) => "simulate",
            RunConfig::Lyapunov(_) => "lyapunov",
            RunConfig::Beta(_) => "beta",
            RunConfig::Check(_) => "check",
            RunConfig::Verify(_) => "verify",
            RunConfig::Perturb(_) => "perturb",
        }
    }

    /// Parse JSON, naming the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut v: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        let obj = v.as_object_mut().context("config must be a JSON object")?;
        let cmd = match obj.remove("command") {
            Some(Value::String(c)) => c,
            _ => bail!("config field `command` must be a string"),
        };
        fn inner<T: serde::de::DeserializeOwned>(v: Value) -> Result<T> {
            serde_path_to_error::deserialize(v)
                .map_err(|e| anyhow::anyhow!("config field `{}`: {}", e.path(), e.inner()))
        }
        Ok(match cmd.as_str() {
            "simulate" => RunConfig::Simulate(inner(v)?),
            "lyapunov" => RunConfig::Lyapunov(inner(v)?),
            "beta" => RunConfig::Beta(inner(v)?),
            "check" => RunConfig::Check(inner(v)?),
            "verify" => RunConfig::Verify(inner(v)?),
            "perturb" => RunConfig::Perturb(inner(v)?),
            other => bail!("config field `command`: unknown command {other:?}"),
        })
    }

    /// Overlay a JSON object on this config; keys present in `overlay` win.
    pub fn merged_with(&self, overlay: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        if let Some(cmd) = overlay.get("command").and_then(Value::as_str) {
            if cmd != self.command() {
                bail!("config file is for `{cmd}`, invoked `{}`", self.command());
            }
        }
        merge(&mut base, overlay);
        RunConfig::from_json(&base.to_string())
    }

    /// Pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Result of running a command.
#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    /// Versioned JSON document.
    pub json: Value,
    /// Optional CSV table.
    pub csv: Option<String>,
    /// Human-readable summary line.
    pub summary: String,
    /// False when a `verify` check failed.
    pub success: bool,
}

fn document(cfg: &RunConfig, result: Value) -> Result<Value> {
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "command": cfg.command(),
        "config": serde_json::to_value(cfg)?,
        "result": result,
    }))
}

/// Run any command.
pub fn run(cfg: &RunConfig) -> Result<Output> {
    match cfg {
        RunConfig::Simulate(c) => cmd_simulate(cfg, c),
        RunConfig::Lyapunov(c) => cmd_lyapunov(cfg, c),
        RunConfig::Beta(c) => cmd_beta(cfg, c),
        RunConfig::Check(c) => cmd_check(cfg, c),
        RunConfig::Verify(c) => cmd_verify(cfg, c),
        RunConfig::Perturb(c) => cmd_perturb(cfg, c),
    }
}

fn exact_beta(model: &ModelSpec, supplied: Option<f64>) -> Option<Beta> {
    match supplied {
        Some(v) => Some(Beta::from(v)),
        None => beta_exact(model).map(|value| Beta {
            value,
            source: BetaSource::Exact,
        }),
    }
}

/// Render a trajectory as CSV with [`TRAJECTORY_COLUMNS`].
pub fn trajectory_csv(rec: &TrajectoryRecord) -> String {
    let mut out = String::from(TRAJECTORY_COLUMNS);
    out.push('\n');
    for i in 0..rec.times.len() {
        let flags = rec.labels.as_ref().map(|ls| {
            let lab = &ls[rec.times[i] as usize];
            let mut f = vec![if lab.in_overwhelming {
                "O".to_string()
            } else {
                "-".to_string()
            }];
            if let Some(m) = lab.cone_index {
                f.push(format!("C{m}"));
            }
            if let Some(m) = lab.anticone_index {
                f.push(format!("A{m}"));
            }
            match lab.region() {
                Region::Steps { first, last } => f.push(format!("S{first}-{last}")),
                Region::Interspace { lower } => f.push(format!("I{lower}")),
                Region::Other => {}
            }
            f.join("|")
        });
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            rec.times[i],
            rec.d_values[i],
            rec.norm_a[i],
            rec.norm_gup[i],
            flags.unwrap_or_default()
        );
    }
    out
}

/// `simulate`: `E d(Q_T)` over trajectories against `10 𝜼^{−1} q λ²`, plus
/// one recorded trajectory as CSV.
pub fn cmd_simulate(cfg: &RunConfig, c: &SimulateConfig) -> Result<Output> {
    let model = c.model.build()?;
    let spec = &model.spec;
    let q0 = match c.start {
        Start::Unstable => unstable_start(spec, model.q),
        Start::Stable => stable_start(spec, model.q),
    };
    let est = estimate_expected_d(&model, &q0, c.horizon, c.traj, c.seed)?;
    let every = c.record_every.unwrap_or((c.horizon / 1000).max(1));
    let rec_seed = child_seed(c.seed, 1);
    let beta = exact_beta(&model, c.beta);
    let record = match &c.ladder_cuts {
        Some(cuts) => {
            let b = beta.as_ref().context("ladder diagnostics need β: pass --beta")?.value;
            let params = LadderParams::standard(spec, model.lambda, b, Ladder::from_cuts(spec, cuts.clone())?)?;
            let l = spec.dim();
            let q = model.q;
            let w = if q == 1 {
                Projection::zero(l)
            } else {
                Projection::coordinate(l, 0..q - 1)
            };
            let p0 = GrassmannPair::new(w, UnitVector::basis(l, q - 1))?;
            let run = simulate_pair(&model, &p0, c.horizon, &params, &mut stream(rec_seed, 0))?;
            thin(run.record, every)
        }
        None => simulate_projection(&model, &q0, c.horizon, every, &mut stream(rec_seed, 0))?.0,
    };
    let hyp = match (&beta, model.lambda > 0.0) {
        (Some(b), true) => Some(check_hypotheses(spec, model.lambda, model.q, b.clone())?),
        _ => None,
    };
    let summary = format!(
        "mean d(Q_T) = {:e} ± {:e} (95%), bound 10 q λ²/𝜼 = {:e}: {}",
        est.mean,
        est.half_width,
        est.bound,
        if est.mean <= est.bound {
            "below bound"
        } else {
            "ABOVE bound"
        }
    );
    let result = json!({
        "mean": est.mean,
        "half_width": est.half_width,
        "standard_error": est.standard_error,
        "bound": est.bound,
        "horizon": est.horizon,
        "n_traj": est.n_traj,
        "seed": est.seed,
        "hypotheses": hyp,
    });
    Ok(Output {
        json: document(cfg, result)?,
        csv: Some(trajectory_csv(&record)),
        summary,
        success: true,
    })
}

fn thin(rec: TrajectoryRecord, every: u64) -> TrajectoryRecord {
    let last = *rec.times.last().unwrap_or(&0);
    let keep: Vec<usize> = (0..rec.times.len())
        .filter(|&i| rec.times[i].is_multiple_of(every) || rec.times[i] == last)
        .collect();
    let pick = |v: &Vec<f64>| keep.iter().map(|&i| v[i]).collect();
    TrajectoryRecord {
        times: keep.iter().map(|&i| rec.times[i]).collect(),
        d_values: pick(&rec.d_values),
        norm_a: pick(&rec.norm_a),
        norm_gup: pick(&rec.norm_gup),
        labels: rec.labels,
    }
}

fn lyapunov_row(e: &LyapunovEstimate, n: u64, seed: u64) -> Value {
    json!({
        "q": e.q,
        "partial_sum": e.partial_sum,
        "stderr": e.standard_error,
        "lower_bound": e.bound_lower,
        "upper_bound": e.bound_upper,
        "N": n,
        "seed": seed,
    })
}

/// `lyapunov`: partial sums for `q ≤ q_max`, bounds, optional reflection.
pub fn cmd_lyapunov(cfg: &RunConfig, c: &LyapunovConfig) -> Result<Output> {
    let model = c.model.build()?;
    let q_max = c.q_max.unwrap_or(model.dim());
    let est = if c.replicas > 1 {
        estimate_replicated(&model, q_max, c.steps, c.burn_in, c.replicas, c.seed)?.0
    } else {
        estimate_partial_sums(&model, q_max, c.steps, c.burn_in, &mut stream(c.seed, 0))?
    };
    let bounds = evaluate_bounds(&model)?;
    let reflection = if c.reflection {
        let rows = (1..=q_max)
            .map(|q| {
                reflection_check(
                    &model,
                    q,
                    c.steps,
                    c.burn_in,
                    &mut stream(child_seed(c.seed, 2), q as u64),
                )
            })
            .collect::<grassflow::Result<Vec<_>>>()?;
        Some(rows)
    } else {
        None
    };
    let mut csv = String::from("batch");
    for e in &est {
        let _ = write!(csv, ",q{}", e.q);
    }
    csv.push('\n');
    let nb = est.first().map_or(0, |e| e.batch_means.len());
    for b in 0..nb {
        let _ = write!(csv, "{b}");
        for e in &est {
            let _ = write!(csv, ",{}", e.batch_means[b]);
        }
        csv.push('\n');
    }
    let summary = est
        .iter()
        .map(|e| format!("Σγ_{{≤{}}} = {:.9} ± {:.2e}", e.q, e.partial_sum, e.standard_error))
        .collect::<Vec<_>>()
        .join("; ");
    let result = json!({
        "partial_sums": est.iter().map(|e| lyapunov_row(e, e.per_step_samples, c.seed)).collect::<Vec<_>>(),
        "bounds": bounds,
        "reflection": reflection,
    });
    Ok(Output {
        json: document(cfg, result)?,
        csv: Some(csv),
        summary,
        success: true,
    })
}

/// `beta`: closed form where known plus a Monte-Carlo upper estimate.
pub fn cmd_beta(cfg: &RunConfig, c: &BetaConfig) -> Result<Output> {
    let model = c.model.build()?;
    let exact = beta_exact(&model);
    let est = beta_monte_carlo(&model, c.n_inner, c.starts, c.iters, c.form, &mut stream(c.seed, 0))?;
    let summary = format!(
        "β exact/closed form: {}; Monte-Carlo: {:.6} ± {:.2e}",
        exact.map_or("none".into(), |b| format!("{b}")),
        est.value,
        est.standard_error
    );
    let result = json!({ "exact": exact, "monte_carlo": est });
    Ok(Output {
        json: document(cfg, result)?,
        csv: None,
        summary,
        success: true,
    })
}

/// `check`: hypothesis verdicts and margins.
pub fn cmd_check(cfg: &RunConfig, c: &CheckConfig) -> Result<Output> {
    let report = match (&c.model, c.eta) {
        (_, Some(eta)) => {
            let b = c.beta.context("check with --eta needs --beta")?;
            check_scalar_hypotheses(eta, c.lambda, c.q, b)?
        }
        (Some(m), None) => {
            let model = m.build()?.with_lambda(c.lambda)?.with_q(c.q)?;
            let b = exact_beta(&model, c.beta).context("no closed-form β for this model: pass --beta")?;
            check_hypotheses(&model.spec, c.lambda, c.q, b)?
        }
        (None, None) => bail!("check needs --eta or a model"),
    };
    let v = |x: &grassflow::partition::Verdict| if x.pass { "pass" } else { "fail" };
    let summary = format!(
        "H1 {} H2 {} H3 {} H4 {} H5 {}",
        v(&report.h1),
        v(&report.h2),
        v(&report.h3),
        v(&report.h4),
        report.h5_literal.as_ref().map_or("n/a", v)
    );
    Ok(Output {
        json: document(cfg, serde_json::to_value(&report)?)?,
        csv: None,
        summary,
        success: true,
    })
}

/// `verify`: the audit scorecard; fails when any check reports a violation.
pub fn cmd_verify(cfg: &RunConfig, c: &VerifyRunConfig) -> Result<Output> {
    let card = run_all(&c.suite, c.seed)?;
    let bad: Vec<&str> = card
        .checks
        .iter()
        .filter(|k| k.violations > 0)
        .map(|k| k.name.as_str())
        .collect();
    let summary = if bad.is_empty() {
        format!("{} checks, no violations", card.checks.len())
    } else {
        format!("{} violations in: {}", card.total_violations(), bad.join(", "))
    };
    Ok(Output {
        json: document(cfg, serde_json::to_value(&card)?)?,
        csv: None,
        summary,
        success: card.passed(),
    })
}

/// `perturb`: expansion-map norms and eigenvalue-expansion reports.
pub fn cmd_perturb(cfg: &RunConfig, c: &PerturbConfig) -> Result<Output> {
    if c.rank > c.l {
        bail!("rank {} exceeds L = {}", c.rank, c.l);
    }
    if c.lambda > LAMBDA_MAX {
        bail!("λ = {} exceeds 2^-6", c.lambda);
    }
    let mut rng = stream(c.seed, 0);
    let mut max = [0.0f64; 4];
    for _ in 0..c.samples {
        let q = random_projection(c.l, c.rank, &mut rng);
        let p = random_perturbation(c.l, &mut rng);
        let t = expansion_maps(&q, &p, c.lambda)?;
        let (x, y, z) = t.norms();
        let e = grassflow::linalg::matrix_exponential(&(&p * grassflow::linalg::c(c.lambda)), 1e-15)?;
        let direct = grassflow::grassmann::act_projection(&e, &q)?.matrix();
        let err = (t.reconstruct(&q.matrix()) - direct).norm();
        for (m, v) in max.iter_mut().zip([x, y, z, err]) {
            *m = m.max(v);
        }
    }
    let mut rng = stream(c.seed, 1);
    let reports = (0..c.samples)
        .map(|_| {
            let (h0, h1, h2) = gapped_triple(c.eig_size, c.gap, &mut rng);
            eig_perturb(&h0, &h1, &h2, c.lambda)
        })
        .collect::<grassflow::Result<Vec<_>>>()?;
    let eig_violations = reports.iter().filter(|r| !r.within_bound()).count();
    let summary = format!(
        "max ‖X‖ = {:.4}, ‖Y‖ = {:.4}, ‖Z‖ = {:.4}, reconstruction error {:.1e}; eigenvalue bound violations {eig_violations}/{}",
        max[0], max[1], max[2], max[3], c.samples
    );
    let result = json!({
        "max_norm_x": max[0],
        "max_norm_y": max[1],
        "max_norm_z": max[2],
        "max_reconstruction_error": max[3],
        "eig_violations": eig_violations,
        "eig_reports": reports,
    });
    Ok(Output {
        json: document(cfg, result)?,
        csv: None,
        summary,
        success: true,
    })
}
