//! Closed-form optimal λ values, the variance bound, and Monte-Carlo
//! estimators of the constants they depend on.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledBatch, Teacher, UnlabeledBatch};
use crate::datagen::GaussianLinearModel;
use crate::error::{Error, Result};
use crate::model::{augmented_feature_norm, lipschitz_label_constant, LossModel, ParamVector};
use crate::stats::{mean_se, MeanSe, PairedTraceMoments, JACKKNIFE_BLOCKS};

/// Smallest Monte-Carlo sample accepted by the estimators.
pub const MIN_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EstimatorMeta {
    pub draws: usize,
    pub n: usize,
    pub big_n: usize,
    /// Parameters the constants were estimated at; the estimates are
    /// point-in-w and hence lower bounds on the sup-over-w constants.
    pub w: Vec<f64>,
    pub sigma_sq_se: f64,
    pub sigma_e_sq_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceConstants {
    /// Trace covariance of the per-sample loss gradient.
    pub sigma_sq: f64,
    /// Trace covariance of `∇ℓ − ∇ℓ^f`.
    pub sigma_e_sq: f64,
    /// `n / N`.
    pub r: f64,
    #[serde(default)]
    pub meta: Option<EstimatorMeta>,
}

impl VarianceConstants {
    pub fn new(sigma_sq: f64, sigma_e_sq: f64, r: f64) -> Result<Self> {
        if !(sigma_sq >= 0.0 && sigma_e_sq >= 0.0 && sigma_sq.is_finite() && sigma_e_sq.is_finite()) {
            return Err(Error::invalid("variance constants", "must be finite and non-negative"));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid("r", "must be positive"));
        }
        Ok(Self {
            sigma_sq,
            sigma_e_sq,
            r,
            meta: None,
        })
    }
}

/// `λ* = σ² / ((1 + r)(σ² + σ_e²))`, the minimiser of [`variance_bound`].
pub fn lambda_star(c: &VarianceConstants) -> Result<f64> {
    let total = c.sigma_sq + c.sigma_e_sq;
    if total <= 0.0 {
        return Err(Error::Degenerate("sigma^2 + sigma_e^2 = 0"));
    }
    Ok(c.sigma_sq / ((1.0 + c.r) * total))
}

/// `(4/n)[(1 − λ)² σ² + λ² (r σ² + (1 + r) σ_e²)]`.
pub fn variance_bound(c: &VarianceConstants, n: usize, lambda: f64) -> f64 {
    let a = (1.0 - lambda) * (1.0 - lambda) * c.sigma_sq;
    let b = lambda * lambda * (c.r * c.sigma_sq + (1.0 + c.r) * c.sigma_e_sq);
    4.0 / n as f64 * (a + b)
}

/// `(4σ²/n)(σ_e²/(σ_e² + σ²) + r)/(1 + r)`: the bound evaluated at λ*.
pub fn optimal_variance_bound(c: &VarianceConstants, n: usize) -> Result<f64> {
    let total = c.sigma_sq + c.sigma_e_sq;
    if total <= 0.0 {
        return Err(Error::Degenerate("sigma^2 + sigma_e^2 = 0"));
    }
    Ok(4.0 * c.sigma_sq / n as f64 * (c.sigma_e_sq / total + c.r) / (1.0 + c.r))
}

/// Residual moments for `ε = y − x·w*` and `ε_f = f(x) − x·w*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub var_eps: f64,
    pub var_eps_f: f64,
    pub cov_eps_epsf: f64,
}

impl ResidualStats {
    pub fn new(var_eps: f64, var_eps_f: f64, cov_eps_epsf: f64) -> Result<Self> {
        if !(var_eps >= 0.0 && var_eps_f >= 0.0) || !cov_eps_epsf.is_finite() {
            return Err(Error::invalid("residual stats", "variances must be non-negative"));
        }
        if cov_eps_epsf.abs() > (var_eps * var_eps_f).sqrt() + 1e-9 {
            return Err(Error::invalid("cov_eps_epsf", "violates Cauchy-Schwarz"));
        }
        Ok(Self {
            var_eps,
            var_eps_f,
            cov_eps_epsf,
        })
    }

    /// Sample moments (denominator `k − 1`) of paired residuals.
    pub fn from_residuals(eps: &[f64], eps_f: &[f64]) -> Result<Self> {
        if eps.len() != eps_f.len() {
            return Err(Error::DimensionMismatch {
                expected: eps.len(),
                got: eps_f.len(),
            });
        }
        if eps.len() < 2 {
            return Err(Error::EmptyData("need at least two residual pairs".into()));
        }
        let k = eps.len() as f64;
        let me = eps.iter().sum::<f64>() / k;
        let mf = eps_f.iter().sum::<f64>() / k;
        let (mut ve, mut vf, mut c) = (0.0, 0.0, 0.0);
        for (&a, &b) in eps.iter().zip(eps_f) {
            ve += (a - me) * (a - me);
            vf += (b - mf) * (b - mf);
            c += (a - me) * (b - mf);
        }
        let (ve, vf, c) = (ve / (k - 1.0), vf / (k - 1.0), c / (k - 1.0));
        // clamp rounding drift so the Cauchy-Schwarz invariant holds exactly
        let lim = (ve * vf).sqrt();
        Self::new(ve, vf, c.clamp(-lim, lim))
    }
}

/// A λ from a residual formula; raw values may leave `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub raw: f64,
    pub clamped: f64,
}

impl LambdaEstimate {
    fn new(raw: f64) -> Self {
        Self {
            raw,
            clamped: raw.clamp(0.0, 1.0),
        }
    }
}

/// `Cov(ε, ε_f) / ((1 + r) Var(ε_f))`, the variance-optimal PPI++ weight.
pub fn lambda_star_ppi_linear(s: &ResidualStats, r: f64) -> Result<LambdaEstimate> {
    if s.var_eps_f <= 0.0 {
        return Err(Error::Degenerate("Var(eps_f) = 0"));
    }
    Ok(LambdaEstimate::new(s.cov_eps_epsf / ((1.0 + r) * s.var_eps_f)))
}

/// Exact minimiser of the linear-model estimator variance; the same
/// expression as [`lambda_star_ppi_linear`].
pub fn lambda_star_variance_linear(s: &ResidualStats, r: f64) -> Result<LambdaEstimate> {
    lambda_star_ppi_linear(s, r)
}

/// `Var(ε) / ((1 + r)(Var(ε) + Var(ε_f)))`.
pub fn lambda_star_ppssl_linear(s: &ResidualStats, r: f64) -> Result<f64> {
    let total = s.var_eps + s.var_eps_f;
    if total <= 0.0 {
        return Err(Error::Degenerate("Var(eps) + Var(eps_f) = 0"));
    }
    Ok(s.var_eps / ((1.0 + r) * total))
}

/// Source of labelled draws `(x, y)` for Monte-Carlo estimators.
pub trait SampleStream {
    fn dim(&self) -> usize;

    /// Writes the features into `x` and returns the label.
    fn next_sample(&mut self, x: &mut [f64]) -> f64;
}

/// Fresh draws from the linear-Gaussian model.
pub struct GaussianStream<'a, R> {
    pub model: &'a GaussianLinearModel,
    pub rng: R,
}

impl<R: Rng> SampleStream for GaussianStream<'_, R> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn next_sample(&mut self, x: &mut [f64]) -> f64 {
        self.model.sample_row(&mut self.rng, x)
    }
}

/// Replays the rows of a batch in order, wrapping around.
pub struct ReplayStream<'a> {
    batch: &'a LabeledBatch<f64>,
    pos: usize,
}

impl<'a> ReplayStream<'a> {
    pub fn new(batch: &'a LabeledBatch<f64>) -> Self {
        Self { batch, pos: 0 }
    }
}

impl SampleStream for ReplayStream<'_> {
    fn dim(&self) -> usize {
        self.batch.dim()
    }

    fn next_sample(&mut self, x: &mut [f64]) -> f64 {
        let i = self.pos % self.batch.len();
        self.pos += 1;
        x.copy_from_slice(self.batch.row(i));
        self.batch.labels()[i]
    }
}

fn check_draws(k: usize) -> Result<()> {
    if k < MIN_DRAWS {
        return Err(Error::invalid("K", format!("{k} draws; need at least {MIN_DRAWS}")));
    }
    Ok(())
}

/// Point-in-w Monte-Carlo estimates of `σ²(w)` and `σ_e²(w)`, with
/// jackknife standard errors in the metadata.
#[allow(clippy::too_many_arguments)]
pub fn estimate_constants(
    model: &LossModel,
    w: &ParamVector<f64>,
    teacher: &dyn Teacher<f64>,
    stream: &mut dyn SampleStream,
    k: usize,
    n: usize,
    big_n: usize,
) -> Result<VarianceConstants> {
    check_draws(k)?;
    model.check_params(w)?;
    if stream.dim() != model.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim,
            got: stream.dim(),
        });
    }
    if n == 0 || big_n == 0 {
        return Err(Error::invalid("n, N", "must be positive"));
    }
    let p = model.param_len();
    let mut grad_acc = PairedTraceMoments::new(p, JACKKNIFE_BLOCKS, None);
    let mut err_acc = PairedTraceMoments::new(p, JACKKNIFE_BLOCKS, None);
    let zero = vec![0.0; p];
    let mut x = vec![0.0; model.feature_dim];
    let mut g = vec![0.0; p];
    let mut ge = vec![0.0; p];
    for _ in 0..k {
        let y = stream.next_sample(&mut x);
        let f = teacher.predict(&x);
        if !f.is_finite() {
            return Err(Error::PoisonedTeacher { split: "stream", row: 0 });
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        model.add_grad(w, &x, y, 1.0, &mut g);
        ge.copy_from_slice(&g);
        model.add_grad(w, &x, f, -1.0, &mut ge);
        grad_acc.push(&g, &zero);
        err_acc.push(&ge, &zero);
    }
    let (sigma_sq, s_se) = grad_acc.estimate(0.0);
    let (sigma_e_sq, e_se) = err_acc.estimate(0.0);
    let mut c = VarianceConstants::new(sigma_sq.max(0.0), sigma_e_sq.max(0.0), n as f64 / big_n as f64)?;
    c.meta = Some(EstimatorMeta {
        draws: k,
        n,
        big_n,
        w: w.to_f64(),
        sigma_sq_se: s_se,
        sigma_e_sq_se: e_se,
    });
    Ok(c)
}

/// Monte-Carlo `E(y − f(x))²` with its standard error.
pub fn teacher_error(model: &LossModel, teacher: &dyn Teacher<f64>, stream: &mut dyn SampleStream, k: usize) -> Result<MeanSe> {
    check_draws(k)?;
    if !model.kind.is_regression() {
        return Err(Error::UnsupportedKind("teacher_error"));
    }
    let mut x = vec![0.0; stream.dim()];
    let sq: Vec<f64> = (0..k)
        .map(|_| {
            let y = stream.next_sample(&mut x);
            let r = y - teacher.predict(&x);
            r * r
        })
        .collect();
    Ok(mean_se(&sq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma1Verdict {
    Pass,
    Fail,
    /// A drawn feature vector exceeded the stated radius, so the
    /// inequality's precondition does not hold.
    RadiusViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub l_y: f64,
    pub teacher_error: MeanSe,
    /// `L_Y² Ê^f`.
    pub rhs: f64,
    /// `σ̂_e²` at each supplied parameter vector.
    pub sigma_e_sq: Vec<f64>,
    pub sigma_e_sq_se: Vec<f64>,
    /// Largest bias-augmented feature norm among the draws.
    pub max_feature_norm: f64,
    pub verdict: Lemma1Verdict,
}

/// Checks `σ_e² ≤ L_Y² E^f` at every `w` with three combined standard errors
/// of slack. `radius` must bound the bias-augmented feature norm `‖(x, 1)‖`.
pub fn lemma1_check(
    model: &LossModel,
    w_samples: &[ParamVector<f64>],
    teacher: &dyn Teacher<f64>,
    stream: &mut dyn SampleStream,
    radius: f64,
    k: usize,
) -> Result<Lemma1Report> {
    check_draws(k)?;
    let bound = lipschitz_label_constant(model, radius)?;
    if w_samples.is_empty() {
        return Err(Error::invalid("w_samples", "need at least one parameter vector"));
    }
    let mut xs = Vec::with_capacity(k * stream.dim());
    let mut ys = Vec::with_capacity(k);
    let mut x = vec![0.0; stream.dim()];
    for _ in 0..k {
        ys.push(stream.next_sample(&mut x));
        xs.extend_from_slice(&x);
    }
    let batch = LabeledBatch::new(stream.dim(), xs, ys, None)?;
    let max_norm = batch.rows().map(augmented_feature_norm).fold(0.0, f64::max);
    let te = teacher_error(model, teacher, &mut ReplayStream::new(&batch), k)?;
    let l2 = bound.l_y * bound.l_y;
    let rhs = l2 * te.mean;
    let mut sig = Vec::new();
    let mut sig_se = Vec::new();
    let mut pass = true;
    for w in w_samples {
        let c = estimate_constants(model, w, teacher, &mut ReplayStream::new(&batch), k, 1, 1)?;
        let se = c.meta.as_ref().map_or(0.0, |m| m.sigma_e_sq_se);
        let combined = (se * se + (l2 * te.se).powi(2)).sqrt();
        pass &= c.sigma_e_sq <= rhs + 3.0 * combined;
        sig.push(c.sigma_e_sq);
        sig_se.push(se);
    }
    let verdict = if max_norm > radius {
        Lemma1Verdict::RadiusViolation
    } else if pass {
        Lemma1Verdict::Pass
    } else {
        Lemma1Verdict::Fail
    };
    Ok(Lemma1Report {
        l_y: bound.l_y,
        teacher_error: te,
        rhs,
        sigma_e_sq: sig,
        sigma_e_sq_se: sig_se,
        max_feature_norm: max_norm,
        verdict,
    })
}

/// Solves `A x = b` for symmetric positive-definite `A` by Cholesky.
pub fn solve_spd(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Vec<f64>> {
    let k = b.len();
    if a.len() != k || a.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: a.len(),
        });
    }
    let m = DMatrix::from_fn(k, k, |i, j| a[i][j]);
    let chol = m.cholesky().ok_or(Error::Degenerate("matrix is not positive definite"))?;
    Ok(chol.solve(&DVector::from_vec(b)).iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflinePpiLambda {
    /// Prediction-powered least-squares fit, bias last.
    pub theta: Vec<f64>,
    pub residuals: ResidualStats,
    pub lambda: LambdaEstimate,
    pub r: f64,
    /// Rows the residual moments were computed on.
    pub residual_rows: usize,
}

/// Offline PPI++ weight for linear least squares.
///
/// Fits `θ = (X̃ᵀX̃/N)⁻¹ (X̃ᵀf̃/N + Xᵀ(y − f)/n)` on bias-augmented features,
/// then plugs the residuals `y − x·θ` and `f(x) − x·θ` on `residual_rows`
/// (the labelled rows when `None`) into [`lambda_star_ppi_linear`].
pub fn offline_ppi_lambda(
    labeled: &LabeledBatch<f64>,
    unlabeled: &UnlabeledBatch<f64>,
    teacher: &dyn Teacher<f64>,
    residual_rows: Option<&LabeledBatch<f64>>,
) -> Result<OfflinePpiLambda> {
    let d = labeled.dim();
    if unlabeled.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: unlabeled.dim(),
        });
    }
    let k = d + 1;
    let aug = |x: &[f64]| x.iter().copied().chain(std::iter::once(1.0)).collect::<Vec<f64>>();
    let big_n = unlabeled.len() as f64;
    let n = labeled.len() as f64;
    let mut a = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for x in unlabeled.rows() {
        let z = aug(x);
        let f = teacher.predict(x);
        for i in 0..k {
            rhs[i] += z[i] * f / big_n;
            for j in 0..k {
                a[i][j] += z[i] * z[j] / big_n;
            }
        }
    }
    for (x, &y) in labeled.rows().zip(labeled.labels()) {
        let z = aug(x);
        let f = teacher.predict(x);
        for i in 0..k {
            rhs[i] += z[i] * (y - f) / n;
        }
    }
    let theta = solve_spd(a, rhs)?;
    let rows = residual_rows.unwrap_or(labeled);
    let (mut eps, mut eps_f) = (Vec::new(), Vec::new());
    for (x, &y) in rows.rows().zip(rows.labels()) {
        let fit: f64 = aug(x).iter().zip(&theta).map(|(a, b)| a * b).sum();
        eps.push(y - fit);
        eps_f.push(teacher.predict(x) - fit);
    }
    let residuals = ResidualStats::from_residuals(&eps, &eps_f)?;
    let r = n / big_n;
    Ok(OfflinePpiLambda {
        lambda: lambda_star_ppi_linear(&residuals, r)?,
        theta,
        residuals,
        r,
        residual_rows: rows.len(),
    })
}
