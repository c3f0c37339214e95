//! Laws of the perturbation `P`, the composite step `T = e^{λP} R`, and the
//! coupling constant β.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::Operator;
use crate::linalg::{c, hermitian_eigen_unchecked, matrix_exponential, op_norm, ComplexMatrix, ComplexVector};
use crate::partition::StabilitySpec;
use crate::rng::Stream;

/// Accuracy requested from the matrix exponential in every step.
pub const EXPM_ACCURACY: f64 = 1e-12;
/// Slack on `‖P‖ ≤ 1` accepted from samplers.
pub const NORM_SLACK: f64 = 1e-12;

/// Law of the i.i.d. potentials `ω_j` of the Toeplitz model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum OmegaLaw {
    /// Uniform on `[−1, 1]`.
    UniformPm1,
    /// `±1` with equal probability.
    BernoulliPm1,
    /// Uniform on `[−h, h]` with `0 ≤ h ≤ 1`.
    UniformInterval { half_width: f64 },
}

impl OmegaLaw {
    /// Parse the CLI names `uniform_pm1`, `bernoulli_pm1`, `uniform_interval:<h>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform_pm1" => Ok(OmegaLaw::UniformPm1),
            "bernoulli_pm1" => Ok(OmegaLaw::BernoulliPm1),
            _ => match s.strip_prefix("uniform_interval:") {
                Some(h) => {
                    let half_width = h
                        .parse()
                        .map_err(|_| Error::InvalidParameter(format!("bad half width in {s:?}")))?;
                    let law = OmegaLaw::UniformInterval { half_width };
                    law.validate()?;
                    Ok(law)
                }
                None => Err(Error::InvalidParameter(format!("unknown ω law {s:?}"))),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if let OmegaLaw::UniformInterval { half_width } = *self {
            if !(0.0..=1.0).contains(&half_width) {
                return Err(Error::InvalidParameter(format!(
                    "ω half width {half_width} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// `E ω²`.
    pub fn second_moment(&self) -> f64 {
        match *self {
            OmegaLaw::UniformPm1 => 1.0 / 3.0,
            OmegaLaw::BernoulliPm1 => 1.0,
            OmegaLaw::UniformInterval { half_width } => half_width * half_width / 3.0,
        }
    }

    /// One draw.
    pub fn sample(&self, rng: &mut Stream) -> f64 {
        match *self {
            OmegaLaw::UniformPm1 => rng.random_range(-1.0..=1.0),
            OmegaLaw::BernoulliPm1 => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            OmegaLaw::UniformInterval { half_width } => half_width * rng.random_range(-1.0..=1.0),
        }
    }
}

/// Law of the diagonal factors `A`, `B` of the Haar-product model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum FactorLaw {
    /// `1`.
    Identity,
    /// `0`.
    Zero,
    /// `c·1` with `|c| ≤ 1`.
    Scaled { factor: f64 },
    /// Diagonal with i.i.d. entries uniform on `[lo, hi] ⊂ [0, 1]`.
    UniformDiagonal { lo: f64, hi: f64 },
}

impl FactorLaw {
    fn validate(&self) -> Result<()> {
        match *self {
            FactorLaw::Scaled { factor } if factor.abs() > 1.0 => {
                Err(Error::InvalidParameter(format!("factor {factor} has norm above 1")))
            }
            FactorLaw::UniformDiagonal { lo, hi } if !(0.0 <= lo && lo <= hi && hi <= 1.0) => Err(
                Error::InvalidParameter(format!("diagonal range [{lo}, {hi}] not inside [0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    /// `E μ_1(AA*) = E min_i a_i²`.
    pub fn expected_min_square(&self, l: usize) -> f64 {
        match *self {
            FactorLaw::Identity => 1.0,
            FactorLaw::Zero => 0.0,
            FactorLaw::Scaled { factor } => factor * factor,
            FactorLaw::UniformDiagonal { lo, hi } => {
                // min of L uniforms is lo + (hi − lo)·Beta(1, L).
                let w = hi - lo;
                let n = l as f64;
                lo * lo + 2.0 * lo * w / (n + 1.0) + w * w * 2.0 / ((n + 1.0) * (n + 2.0))
            }
        }
    }

    fn sample(&self, l: usize, rng: &mut Stream) -> Vec<f64> {
        match *self {
            FactorLaw::Identity => vec![1.0; l],
            FactorLaw::Zero => vec![0.0; l],
            FactorLaw::Scaled { factor } => vec![factor; l],
            FactorLaw::UniformDiagonal { lo, hi } => (0..l)
                .map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) })
                .collect(),
        }
    }
}

/// Dense matrix in serializable row-major form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    /// Row count.
    pub rows: usize,
    /// Column count.
    pub cols: usize,
    /// Real parts, row-major.
    pub re: Vec<f64>,
    /// Imaginary parts, row-major.
    pub im: Vec<f64>,
}

impl MatrixData {
    /// Serialize a matrix.
    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        let (rows, cols) = m.shape();
        let mut re = Vec::with_capacity(rows * cols);
        let mut im = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        MatrixData { rows, cols, re, im }
    }

    /// Rebuild the matrix.
    pub fn to_matrix(&self) -> Result<ComplexMatrix> {
        let n = self.rows * self.cols;
        if self.re.len() != n || self.im.len() != n {
            return Err(Error::Dimension(format!(
                "{}x{} matrix with {} real and {} imaginary entries",
                self.rows,
                self.cols,
                self.re.len(),
                self.im.len()
            )));
        }
        Ok(ComplexMatrix::from_fn(self.rows, self.cols, |i, j| {
            Complex64::new(self.re[i * self.cols + j], self.im[i * self.cols + j])
        }))
    }
}

/// Law of the perturbation `P`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Ensemble {
    /// `P = AUB` with `U` Haar on `U(L)`.
    HaarProduct { dim: usize, a: FactorLaw, b: FactorLaw },
    /// `P = F diag(ω) F*` in the ordered Fourier basis.
    ToeplitzFourier { dim: usize, omega: OmegaLaw },
    /// `P = s·G/‖G‖` with `G` complex Ginibre.
    IidEntries { dim: usize, scale: f64 },
    /// `P = ±G_k` with `k` and the sign uniform.
    Custom { dim: usize, generators: Vec<MatrixData> },
}

impl Ensemble {
    /// Dimension `L`.
    pub fn dim(&self) -> usize {
        match self {
            Ensemble::HaarProduct { dim, .. }
            | Ensemble::ToeplitzFourier { dim, .. }
            | Ensemble::IidEntries { dim, .. }
            | Ensemble::Custom { dim, .. } => *dim,
        }
    }

    /// The deterministic ensemble `P ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        Ensemble::Custom {
            dim,
            generators: vec![MatrixData::from_matrix(&ComplexMatrix::zeros(dim, dim))],
        }
    }

    /// Check parameters and the norm bound of fixed generators.
    pub fn validate(&self) -> Result<()> {
        match self {
            Ensemble::HaarProduct { a, b, .. } => {
                a.validate()?;
                b.validate()
            }
            Ensemble::ToeplitzFourier { dim, omega } => {
                if dim % 2 == 0 {
                    return Err(Error::InvalidParameter(format!(
                        "Toeplitz model needs odd L, got {dim}"
                    )));
                }
                omega.validate()
            }
            Ensemble::IidEntries { scale, .. } => {
                if !(0.0..=1.0).contains(scale) {
                    return Err(Error::InvalidParameter(format!("scale {scale} outside [0, 1]")));
                }
                Ok(())
            }
            Ensemble::Custom { dim, generators } => {
                if generators.is_empty() {
                    return Err(Error::InvalidParameter("custom ensemble needs a generator".into()));
                }
                for g in generators {
                    let m = g.to_matrix()?;
                    if m.shape() != (*dim, *dim) {
                        return Err(Error::Dimension(format!(
                            "generator is {}x{}, expected {dim}x{dim}",
                            g.rows, g.cols
                        )));
                    }
                    let n = op_norm(&m);
                    if n > 1.0 + NORM_SLACK {
                        return Err(Error::InvalidParameter(format!("generator norm {n} exceeds 1")));
                    }
                }
                Ok(())
            }
        }
    }
}

/// One draw of `P`: dense, or the potentials of the Fourier model.
#[derive(Clone, Debug)]
pub enum Perturbation {
    /// Dense matrix in working coordinates.
    Dense(ComplexMatrix),
    /// Potentials `ω_j`; `P = F diag(ω) F*`.
    Fourier(Vec<f64>),
}

/// The step matrix `T`, stored densely or in factored Fourier form
/// `T = F diag(left) F* diag(right)`.
#[derive(Clone, Debug)]
pub enum StepOperator {
    /// Dense `L x L`.
    Dense(ComplexMatrix),
    /// Factored form.
    Fourier {
        /// `F`.
        basis: Arc<ComplexMatrix>,
        /// `F*`.
        basis_adj: Arc<ComplexMatrix>,
        /// Left diagonal, in the site basis.
        left: Vec<f64>,
        /// Right diagonal, in working coordinates.
        right: Vec<f64>,
    },
}

fn scale_rows(m: &mut ComplexMatrix, d: &[f64]) {
    for (i, &s) in d.iter().enumerate() {
        m.row_mut(i).scale_mut(s);
    }
}

impl Operator for StepOperator {
    fn dim(&self) -> usize {
        match self {
            StepOperator::Dense(t) => t.nrows(),
            StepOperator::Fourier { right, .. } => right.len(),
        }
    }

    fn apply(&self, m: &ComplexMatrix) -> ComplexMatrix {
        match self {
            StepOperator::Dense(t) => t * m,
            StepOperator::Fourier {
                basis,
                basis_adj,
                left,
                right,
            } => {
                let mut x = m.clone();
                scale_rows(&mut x, right);
                let mut y = basis_adj.as_ref() * x;
                scale_rows(&mut y, left);
                basis.as_ref() * y
            }
        }
    }
}

impl StepOperator {
    /// Dense form.
    pub fn to_dense(&self) -> ComplexMatrix {
        match self {
            StepOperator::Dense(t) => t.clone(),
            StepOperator::Fourier { right, .. } => {
                let l = right.len();
                self.apply(&ComplexMatrix::identity(l, l))
            }
        }
    }

    /// `(T*)^{−1}`.
    pub fn adjoint_inverse(&self) -> Result<StepOperator> {
        match self {
            StepOperator::Dense(t) => {
                let inv = t
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Precondition("step operator is singular".into()))?;
                Ok(StepOperator::Dense(inv.adjoint()))
            }
            StepOperator::Fourier {
                basis,
                basis_adj,
                left,
                right,
            } => {
                let inv_left: Vec<f64> = left.iter().map(|x| 1.0 / x).collect();
                let inv_right: Vec<f64> = right.iter().map(|x| 1.0 / x).collect();
                if inv_left.iter().chain(&inv_right).any(|x| !x.is_finite()) {
                    return Err(Error::Precondition("step operator is singular".into()));
                }
                // T* = R F D F*, so (T*)^{-1} = F D^{-1} F* R^{-1}: same factored shape.
                Ok(StepOperator::Fourier {
                    basis: basis.clone(),
                    basis_adj: basis_adj.clone(),
                    left: inv_left,
                    right: inv_right,
                })
            }
        }
    }
}

/// Indices `k_r` of the Fourier columns in working order: `L, 1, L−1, 2, L−2, …`.
pub fn fourier_order(l: usize) -> Vec<usize> {
    let mut ks = vec![l];
    for i in 1..=l / 2 {
        ks.push(i);
        ks.push(l - i);
    }
    ks.truncate(l);
    ks
}

/// `F` with rows `c_{k_r}*`, where `c_k[j] = e^{2πijk/L}/√L`; so `F (Δ + s) F*`
/// is diagonal with non-decreasing entries down the rows.
pub fn fourier_basis(l: usize) -> ComplexMatrix {
    let ks = fourier_order(l);
    let norm = 1.0 / (l as f64).sqrt();
    ComplexMatrix::from_fn(l, l, |r, j| {
        let phase = -2.0 * PI * (j as f64) * (ks[r] as f64) / l as f64;
        Complex64::from_polar(norm, phase)
    })
}

/// `κ` ladder of the Toeplitz model, `κ_I = s − 2cos(2πk/L)` sorted non-increasing.
pub fn toeplitz_kappa(l: usize, s: f64) -> Vec<f64> {
    // Row r carries s − 2cos(2πk_r/L); index I sits at row L − I.
    let ks = fourier_order(l);
    let rows: Vec<f64> = ks
        .iter()
        .map(|&k| s - 2.0 * (2.0 * PI * k as f64 / l as f64).cos())
        .collect();
    rows.into_iter().rev().collect()
}

/// Toeplitz model: spec with the Fourier-ordered κ ladder and the matching ensemble.
pub fn make_toeplitz_model(
    l: usize,
    s: f64,
    omega: OmegaLaw,
    (la, lb, lc): (usize, usize, usize),
) -> Result<(StabilitySpec, Ensemble)> {
    if l.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("Toeplitz model needs odd L, got {l}")));
    }
    if !(s > 2.0) {
        return Err(Error::InvalidParameter(format!("s = {s} must exceed 2")));
    }
    let spec = StabilitySpec::new(toeplitz_kappa(l, s), la, lb, lc)?;
    let ens = Ensemble::ToeplitzFourier { dim: l, omega };
    ens.validate()?;
    Ok((spec, ens))
}

/// Haar-product ensemble `P = AUB`.
pub fn make_haar_model(l: usize, a: FactorLaw, b: FactorLaw) -> Result<Ensemble> {
    let ens = Ensemble::HaarProduct { dim: l, a, b };
    ens.validate()?;
    Ok(ens)
}

/// Standard complex Gaussian `L x k` matrix, entries with `E|z|² = 1`.
pub fn ginibre(rows: usize, cols: usize, rng: &mut Stream) -> ComplexMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(s * re, s * im)
    })
}

/// Haar unitary: Ginibre, QR, columns rephased by the triangular diagonal.
pub fn haar_unitary(l: usize, rng: &mut Stream) -> ComplexMatrix {
    let g = ginibre(l, l, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..l {
        let d = r[(j, j)];
        let n = d.norm();
        if n > 0.0 {
            let col = q.column(j) * (d / n);
            q.set_column(j, &col);
        }
    }
    q
}

/// Random isometry `L x k` drawn from the Haar measure on frames.
pub fn haar_frame(l: usize, k: usize, rng: &mut Stream) -> ComplexMatrix {
    if k == 0 {
        return ComplexMatrix::zeros(l, 0);
    }
    haar_unitary(l, rng).columns(0, k).clone_owned()
}

/// Model parameters: spec, ensemble, coupling λ, and rank q.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    /// κ ladder and partition.
    pub spec: StabilitySpec,
    /// Law of `P`.
    pub ensemble: Ensemble,
    /// Coupling λ ≥ 0.
    pub lambda: f64,
    /// Rank q.
    pub q: usize,
    #[serde(skip)]
    basis: OnceLock<(Arc<ComplexMatrix>, Arc<ComplexMatrix>)>,
}

impl ModelSpec {
    /// Validated constructor; requires `1 ≤ q ≤ L_c` and matching dimensions.
    pub fn new(spec: StabilitySpec, ensemble: Ensemble, lambda: f64, q: usize) -> Result<Self> {
        let m = ModelSpec {
            spec,
            ensemble,
            lambda,
            q,
            basis: OnceLock::new(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Check the invariants; also used after deserialization.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.ensemble.validate()?;
        if self.ensemble.dim() != self.spec.dim() {
            return Err(Error::Dimension(format!(
                "ensemble of dimension {} with spec of dimension {}",
                self.ensemble.dim(),
                self.spec.dim()
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "λ = {} must be non-negative",
                self.lambda
            )));
        }
        if self.q < 1 || self.q > self.spec.lc {
            return Err(Error::InvalidParameter(format!(
                "q = {} must lie in 1..={} (L_c)",
                self.q, self.spec.lc
            )));
        }
        Ok(())
    }

    /// Same model with another coupling.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        ModelSpec::new(self.spec.clone(), self.ensemble.clone(), lambda, self.q)
    }

    /// Same model with another rank.
    pub fn with_q(&self, q: usize) -> Result<Self> {
        ModelSpec::new(self.spec.clone(), self.ensemble.clone(), self.lambda, q)
    }

    /// Dimension `L`.
    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn fourier(&self) -> &(Arc<ComplexMatrix>, Arc<ComplexMatrix>) {
        self.basis.get_or_init(|| {
            let f = fourier_basis(self.dim());
            let fa = f.adjoint();
            (Arc::new(f), Arc::new(fa))
        })
    }

    /// Draw `P`.
    pub fn sample_perturbation(&self, rng: &mut Stream) -> Result<Perturbation> {
        let l = self.dim();
        Ok(match &self.ensemble {
            Ensemble::ToeplitzFourier { omega, .. } => {
                let w: Vec<f64> = (0..l).map(|_| omega.sample(rng)).collect();
                if let Some(x) = w.iter().find(|x| x.abs() > 1.0 + NORM_SLACK) {
                    return Err(Error::InvalidParameter(format!(
                        "sampled potential {x} has modulus above 1"
                    )));
                }
                Perturbation::Fourier(w)
            }
            Ensemble::HaarProduct { a, b, .. } => {
                let u = haar_unitary(l, rng);
                let da = a.sample(l, rng);
                let db = b.sample(l, rng);
                if da.iter().chain(&db).any(|x| x.abs() > 1.0 + NORM_SLACK) {
                    return Err(Error::InvalidParameter("factor entry has modulus above 1".into()));
                }
                let mut p = u;
                scale_rows(&mut p, &da);
                for (j, &s) in db.iter().enumerate() {
                    p.column_mut(j).scale_mut(s);
                }
                Perturbation::Dense(p)
            }
            Ensemble::IidEntries { scale, .. } => {
                let g = ginibre(l, l, rng);
                let n = op_norm(&g);
                Perturbation::Dense(g * c(*scale / n))
            }
            Ensemble::Custom { generators, .. } => {
                let k = rng.random_range(0..generators.len());
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Perturbation::Dense(generators[k].to_matrix()? * c(sign))
            }
        })
    }

    /// Dense `P` for a draw.
    pub fn dense_perturbation(&self, p: &Perturbation) -> ComplexMatrix {
        match p {
            Perturbation::Dense(m) => m.clone(),
            Perturbation::Fourier(w) => {
                let (f, fa) = self.fourier();
                let mut y = fa.as_ref().clone();
                scale_rows(&mut y, w);
                f.as_ref() * y
            }
        }
    }

    /// `T = e^{λP} R` for a given draw.
    pub fn step_for(&self, p: &Perturbation) -> Result<StepOperator> {
        let r = self.spec.r_diagonal();
        if self.lambda == 0.0 {
            return Ok(StepOperator::Dense(self.spec.r_matrix()));
        }
        match p {
            Perturbation::Fourier(w) => {
                let (f, fa) = self.fourier();
                Ok(StepOperator::Fourier {
                    basis: f.clone(),
                    basis_adj: fa.clone(),
                    left: w.iter().map(|x| (self.lambda * x).exp()).collect(),
                    right: r,
                })
            }
            Perturbation::Dense(m) => {
                let mut t = matrix_exponential(&(m * c(self.lambda)), EXPM_ACCURACY)?;
                for (j, &s) in r.iter().enumerate() {
                    t.column_mut(j).scale_mut(s);
                }
                Ok(StepOperator::Dense(t))
            }
        }
    }
}

/// Draw `T = e^{λP} R`.
pub fn sample_step(model: &ModelSpec, rng: &mut Stream) -> Result<StepOperator> {
    let p = model.sample_perturbation(rng)?;
    model.step_for(&p)
}

/// Closed-form β where one is known: the Haar-product lower bound
/// `(L_c − q + 1)/L · E μ_1(AA*) · E μ_1(B*B)` and the Toeplitz value
/// `L_c/L · E ω²` at `q = 1`.
pub fn beta_exact(model: &ModelSpec) -> Option<f64> {
    let l = model.dim() as f64;
    let lc = model.spec.lc as f64;
    match &model.ensemble {
        Ensemble::HaarProduct { a, b, .. } => {
            let n = model.dim();
            Some((lc - model.q as f64 + 1.0) / l * a.expected_min_square(n) * b.expected_min_square(n))
        }
        Ensemble::ToeplitzFourier { omega, .. } if model.q == 1 => Some(lc / l * omega.second_moment()),
        _ => None,
    }
}

/// Which variational form of β to optimize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaForm {
    /// `E‖𝔠((1−W)Pv)‖²` over rank-`(q−1)` `W ≤ P̂_c`.
    Primal,
    /// `E v*P*W̃Pv` over rank-`(L_c−q+1)` `W̃ ≤ P̂_c`.
    Complementary,
}

/// Monte-Carlo upper estimate of β.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BetaEstimate {
    /// Held-out sample mean at the selected `(v, W)`.
    pub value: f64,
    /// Standard error of that mean.
    pub standard_error: f64,
    /// Optimized objective on the selection sample (biased low).
    pub selection_value: f64,
    /// Selected `v`, in working coordinates.
    #[serde(skip)]
    pub v: ComplexVector,
    /// Selected `W` frame (`L x (q−1)`) in working coordinates.
    #[serde(skip)]
    pub w_frame: ComplexMatrix,
    /// Form optimized.
    pub form: BetaForm,
}

/// Monte-Carlo upper estimate of β.
///
/// Draws `n_inner` perturbations to select `(v, W)` by alternating exact
/// minimization over `v` and over `W` from `n_starts` random starts with at
/// most `refine_iters` sweeps each, then evaluates the objective at the
/// selection on `n_inner` fresh draws. The held-out mean estimates
/// `E‖𝔠((1−W)Pv)‖²` at a feasible point without selection bias, hence an
/// upper estimate of the infimum.
pub fn beta_monte_carlo(
    model: &ModelSpec,
    n_inner: usize,
    n_starts: usize,
    refine_iters: usize,
    form: BetaForm,
    rng: &mut Stream,
) -> Result<BetaEstimate> {
    if n_inner < 100 {
        return Err(Error::InvalidParameter(format!("n_inner = {n_inner} is below 100")));
    }
    if n_starts == 0 {
        return Err(Error::InvalidParameter("n_starts must be positive".into()));
    }
    let spec = &model.spec;
    let l = spec.dim();
    let lc = spec.lc;
    let m = l - lc;
    if m == 0 {
        return Err(Error::Precondition("no rows outside the stable block".into()));
    }
    let k = match form {
        BetaForm::Primal => model.q - 1,
        BetaForm::Complementary => lc - model.q + 1,
    };

    // Blocks B = 𝔠-rows × non-𝔠-columns of each draw.
    let draw_blocks = |rng: &mut Stream| -> Result<Vec<ComplexMatrix>> {
        (0..n_inner)
            .map(|_| {
                let p = model.sample_perturbation(rng)?;
                let d = model.dense_perturbation(&p);
                Ok(d.view((m, 0), (lc, m)).clone_owned())
            })
            .collect()
    };
    let train = draw_blocks(rng)?;
    let eval = draw_blocks(rng)?;
    let inv_n = c(1.0 / n_inner as f64);

    // For fixed Ψ: best v is an extreme eigenvector of mean B*ΠB.
    let best_v = |psi: &ComplexMatrix| -> (ComplexVector, f64) {
        let mut acc = ComplexMatrix::zeros(m, m);
        for b in &train {
            let pb = match form {
                BetaForm::Primal => b - psi * (psi.adjoint() * b),
                BetaForm::Complementary => psi.adjoint() * b,
            };
            acc += pb.adjoint() * pb;
        }
        let e = hermitian_eigen_unchecked(&(acc * inv_n));
        (e.eigenvectors.column(0).clone_owned(), e.eigenvalues[0])
    };
    // For fixed v: best Ψ from the spectrum of mean (Bv)(Bv)*.
    let best_psi = |v: &ComplexVector| -> (ComplexMatrix, f64) {
        let mut acc = ComplexMatrix::zeros(lc, lc);
        for b in &train {
            let u = b * v;
            acc += &u * u.adjoint();
        }
        let e = hermitian_eigen_unchecked(&(acc * inv_n));
        match form {
            BetaForm::Primal => {
                let psi = e.eigenvectors.columns(lc - k, k).clone_owned();
                let total: f64 = e.eigenvalues.iter().sum();
                let top: f64 = e.eigenvalues[lc - k..].iter().sum();
                (psi, total - top)
            }
            BetaForm::Complementary => {
                let psi = e.eigenvectors.columns(0, k).clone_owned();
                (psi, e.eigenvalues[..k].iter().sum())
            }
        }
    };

    let mut best: Option<(f64, ComplexVector, ComplexMatrix)> = None;
    for _ in 0..n_starts {
        let mut psi = haar_frame(lc, k, rng);
        let (mut v, mut val) = best_v(&psi);
        for _ in 0..refine_iters {
            let (p2, _) = best_psi(&v);
            let (v2, val2) = best_v(&p2);
            let improved = val2 < val - 1e-15 * val.abs().max(1e-300);
            if val2 <= val {
                psi = p2;
                v = v2;
                val = val2;
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().is_none_or(|(b, _, _)| val < *b) {
            best = Some((val, v, psi));
        }
    }
    let (selection_value, v, psi) = best.expect("n_starts > 0");

    let samples: Vec<f64> = eval
        .iter()
        .map(|b| {
            let u = b * &v;
            match form {
                BetaForm::Primal => (&u - &psi * (psi.adjoint() * &u)).norm_squared(),
                BetaForm::Complementary => (psi.adjoint() * &u).norm_squared(),
            }
        })
        .collect();
    let (value, standard_error) = crate::stats::mean_and_stderr(&samples);

    let mut v_full = ComplexVector::zeros(l);
    v_full.rows_mut(0, m).copy_from(&v);
    let w_cols = match form {
        BetaForm::Primal => psi.clone(),
        BetaForm::Complementary => complement_in_block(&psi, lc),
    };
    let mut w_frame = ComplexMatrix::zeros(l, w_cols.ncols());
    w_frame.view_mut((m, 0), (lc, w_cols.ncols())).copy_from(&w_cols);

    Ok(BetaEstimate {
        value,
        standard_error,
        selection_value,
        v: v_full,
        w_frame,
        form,
    })
}

// Orthonormal complement of the columns of `psi` inside `C^n`.
fn complement_in_block(psi: &ComplexMatrix, n: usize) -> ComplexMatrix {
    let k = psi.ncols();
    let proj = ComplexMatrix::identity(n, n) - psi * psi.adjoint();
    let e = hermitian_eigen_unchecked(&proj);
    e.eigenvectors.columns(k, n - k).clone_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::isometry_defect;
    use crate::rng::stream;

    #[test]
    fn toeplitz_kappa_l5() {
        let k = toeplitz_kappa(5, 3.0);
        let want = [
            3.0 - 2.0 * (4.0 * PI / 5.0).cos(),
            3.0 - 2.0 * (4.0 * PI / 5.0).cos(),
            3.0 - 2.0 * (2.0 * PI / 5.0).cos(),
            3.0 - 2.0 * (2.0 * PI / 5.0).cos(),
            1.0,
        ];
        for (a, b) in k.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((k[0] - 4.618).abs() < 1e-3 && (k[2] - 2.382).abs() < 1e-3);
    }

    #[test]
    fn fourier_diagonalizes_laplacian() {
        let l = 7;
        let s = 3.0;
        let mut lap = ComplexMatrix::identity(l, l) * c(s);
        for j in 0..l {
            lap[(j, (j + 1) % l)] -= c(1.0);
            lap[((j + 1) % l, j)] -= c(1.0);
        }
        let f = fourier_basis(l);
        assert!(isometry_defect(&f) < 1e-13);
        let r = &f * lap * f.adjoint();
        let (spec, _) = make_toeplitz_model(l, s, OmegaLaw::UniformPm1, (3, 2, 2)).unwrap();
        assert!(op_norm(&(r - spec.r_matrix())) < 1e-12);
    }

    #[test]
    fn toeplitz_round_trip_and_norm() {
        let (spec, ens) = make_toeplitz_model(5, 3.0, OmegaLaw::UniformPm1, (1, 2, 2)).unwrap();
        let model = ModelSpec::new(spec, ens, 0.01, 1).unwrap();
        let mut rng = stream(3, 0);
        for _ in 0..50 {
            let p = model.sample_perturbation(&mut rng).unwrap();
            let Perturbation::Fourier(w) = &p else { panic!() };
            let d = model.dense_perturbation(&p);
            let f = fourier_basis(5);
            let back = f.adjoint() * &d * &f;
            for i in 0..5 {
                for j in 0..5 {
                    let want = if i == j { c(w[i]) } else { c(0.0) };
                    assert!((back[(i, j)] - want).norm() < 1e-10);
                }
            }
            let maxw = w.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            assert!((op_norm(&d) - maxw).abs() < 1e-12);
        }
    }

    #[test]
    fn factored_step_matches_dense() {
        let (spec, ens) = make_toeplitz_model(7, 3.0, OmegaLaw::BernoulliPm1, (3, 2, 2)).unwrap();
        let model = ModelSpec::new(spec, ens, 0.05, 1).unwrap();
        let mut rng = stream(5, 0);
        let p = model.sample_perturbation(&mut rng).unwrap();
        let t = model.step_for(&p).unwrap().to_dense();
        let dense = model.dense_perturbation(&p);
        let want = matrix_exponential(&(dense * c(0.05)), 1e-12).unwrap() * model.spec.r_matrix();
        assert!(op_norm(&(t - want)) < 1e-12);
    }

    #[test]
    fn adjoint_inverse_both_forms() {
        let (spec, ens) = make_toeplitz_model(5, 3.0, OmegaLaw::UniformPm1, (1, 2, 2)).unwrap();
        let model = ModelSpec::new(spec.clone(), ens, 0.1, 1).unwrap();
        let mut rng = stream(9, 0);
        let t = sample_step(&model, &mut rng).unwrap();
        let ai = t.adjoint_inverse().unwrap().to_dense();
        let prod = t.to_dense().adjoint() * ai;
        assert!(op_norm(&(prod - ComplexMatrix::identity(5, 5))) < 1e-12);

        let haar = ModelSpec::new(
            spec,
            make_haar_model(5, FactorLaw::Identity, FactorLaw::Identity).unwrap(),
            0.1,
            1,
        )
        .unwrap();
        let t = sample_step(&haar, &mut rng).unwrap();
        let ai = t.adjoint_inverse().unwrap().to_dense();
        assert!(op_norm(&(t.to_dense().adjoint() * ai - ComplexMatrix::identity(5, 5))) < 1e-12);
    }

    #[test]
    fn zero_coupling_and_zero_ensemble_give_r() {
        let (spec, ens) = make_toeplitz_model(5, 3.0, OmegaLaw::UniformPm1, (1, 2, 2)).unwrap();
        let r = spec.r_matrix();
        let model = ModelSpec::new(spec.clone(), ens, 0.0, 1).unwrap();
        let mut rng = stream(1, 0);
        assert!(op_norm(&(sample_step(&model, &mut rng).unwrap().to_dense() - &r)) < 1e-14);
        let model = ModelSpec::new(spec, Ensemble::zero(5), 0.3, 1).unwrap();
        for _ in 0..5 {
            assert_eq!(sample_step(&model, &mut rng).unwrap().to_dense(), r);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = StabilitySpec::new(vec![4.0, 3.0, 2.0, 1.0], 1, 1, 2).unwrap();
        let model = ModelSpec::new(
            spec,
            make_haar_model(4, FactorLaw::Identity, FactorLaw::Identity).unwrap(),
            0.01,
            1,
        )
        .unwrap();
        let a = sample_step(&model, &mut stream(11, 4)).unwrap().to_dense();
        let b = sample_step(&model, &mut stream(11, 4)).unwrap().to_dense();
        assert_eq!(a, b);
    }

    #[test]
    fn haar_factor_zero_gives_zero() {
        let spec = StabilitySpec::new(vec![4.0, 3.0, 2.0, 1.0], 1, 1, 2).unwrap();
        let model = ModelSpec::new(
            spec,
            make_haar_model(4, FactorLaw::Zero, FactorLaw::Identity).unwrap(),
            0.01,
            1,
        )
        .unwrap();
        let p = model.sample_perturbation(&mut stream(2, 0)).unwrap();
        assert_eq!(model.dense_perturbation(&p), ComplexMatrix::zeros(4, 4));
    }

    #[test]
    fn haar_moments() {
        let l = 4;
        let n = 10_000;
        let mut rng = stream(21, 0);
        let mut sum = vec![0.0; l * l];
        let mut sumsq = vec![0.0; l * l];
        for _ in 0..n {
            let u = haar_unitary(l, &mut rng);
            assert!(isometry_defect(&u) < 1e-12);
            for (i, z) in u.iter().enumerate() {
                let x = z.norm_sqr();
                sum[i] += x;
                sumsq[i] += x * x;
            }
        }
        for i in 0..l * l {
            let mean = sum[i] / n as f64;
            let var = sumsq[i] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!((mean - 0.25).abs() <= 3.0 * se + 1e-12, "entry {i}: {mean} ± {se}");
        }
    }

    #[test]
    fn beta_exact_values() {
        let (spec, ens) = make_toeplitz_model(5, 3.0, OmegaLaw::BernoulliPm1, (1, 2, 2)).unwrap();
        let m = ModelSpec::new(spec.clone(), ens.clone(), 0.01, 1).unwrap();
        assert!((beta_exact(&m).unwrap() - 0.4).abs() < 1e-15);
        assert!(beta_exact(&m.with_q(2).unwrap()).is_none());

        let spec4 = StabilitySpec::new(vec![4.0, 3.0, 2.0, 1.0], 1, 1, 2).unwrap();
        let h = ModelSpec::new(
            spec4,
            make_haar_model(4, FactorLaw::Identity, FactorLaw::Identity).unwrap(),
            0.01,
            1,
        )
        .unwrap();
        assert!((beta_exact(&h).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn expected_min_square_matches_sampling() {
        let law = FactorLaw::UniformDiagonal { lo: 0.4, hi: 0.9 };
        let mut rng = stream(4, 0);
        let n = 200_000;
        let mean: f64 = (0..n)
            .map(|_| law.sample(5, &mut rng).iter().fold(f64::INFINITY, |a, &x| a.min(x * x)))
            .sum::<f64>()
            / n as f64;
        assert!((mean - law.expected_min_square(5)).abs() < 2e-3);
    }

    #[test]
    fn beta_mc_zero_ensemble() {
        let spec = StabilitySpec::new(vec![4.0, 3.0, 2.0, 1.0], 1, 1, 2).unwrap();
        let m = ModelSpec::new(spec, Ensemble::zero(4), 0.01, 1).unwrap();
        let est = beta_monte_carlo(&m, 100, 2, 5, BetaForm::Primal, &mut stream(1, 0)).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(beta_monte_carlo(&m, 99, 2, 5, BetaForm::Primal, &mut stream(1, 0)).is_err());
    }

    #[test]
    fn omega_law_parsing() {
        assert_eq!(OmegaLaw::parse("bernoulli_pm1").unwrap(), OmegaLaw::BernoulliPm1);
        assert_eq!(
            OmegaLaw::parse("uniform_interval:0.5").unwrap(),
            OmegaLaw::UniformInterval { half_width: 0.5 }
        );
        assert!(OmegaLaw::parse("uniform_interval:2").is_err());
        assert!(OmegaLaw::parse("gauss").is_err());
    }
}
