//! Linear predictors and their per-sample losses.
//!
//! Parameters are stored as one block per output, each block laid out as
//! `[w_1, .., w_d, b]`, so the bias is simply the last coordinate of the
//! block and of every gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, dot, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    dim: usize,
    outputs: usize,
    coeffs: Vec<T>,
}

/// Gradients share the parameter layout.
pub type Gradient<T> = ParamVector<T>;

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(dim: usize, outputs: usize) -> Self {
        Self {
            dim,
            outputs,
            coeffs: vec![T::zero(); (dim + 1) * outputs],
        }
    }

    /// Single-output parameters from weights and bias.
    pub fn new(weights: Vec<T>, bias: T) -> Self {
        let dim = weights.len();
        let mut coeffs = weights;
        coeffs.push(bias);
        Self {
            dim,
            outputs: 1,
            coeffs,
        }
    }

    pub fn from_coeffs(dim: usize, outputs: usize, coeffs: Vec<T>) -> Result<Self> {
        let expected = (dim + 1) * outputs;
        if coeffs.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: coeffs.len(),
            });
        }
        Ok(Self {
            dim,
            outputs,
            coeffs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [T] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<T> {
        self.coeffs
    }

    /// `[w, b]` block of output `j`.
    pub fn block(&self, j: usize) -> &[T] {
        let s = self.dim + 1;
        &self.coeffs[j * s..(j + 1) * s]
    }

    /// Weights of the first output.
    pub fn weights(&self) -> &[T] {
        &self.coeffs[..self.dim]
    }

    /// Bias of the first output.
    pub fn bias(&self) -> T {
        self.coeffs[self.dim]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dim == other.dim && self.outputs == other.outputs
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.coeffs)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_shape(other)?;
        Ok(dot(&self.coeffs, &other.coeffs))
    }

    pub fn norm_sq(&self) -> T {
        dot(&self.coeffs, &self.coeffs)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: T, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(&a, &b)| a + alpha * b)
            .collect();
        Ok(Self {
            dim: self.dim,
            outputs: self.outputs,
            coeffs,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-T::one(), other)
    }

    pub fn scale(&self, alpha: T) -> Self {
        Self {
            dim: self.dim,
            outputs: self.outputs,
            coeffs: self.coeffs.iter().map(|&a| a * alpha).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamVector<U> {
        ParamVector {
            dim: self.dim,
            outputs: self.outputs,
            coeffs: self.coeffs.iter().map(|&a| U::lit(a.as_f64())).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.coeffs.iter().map(|&a| a.as_f64()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredL2,
    Logistic,
    SoftmaxCe { classes: usize },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::SquaredL2 => "squared_l2",
            LossKind::Logistic => "logistic",
            LossKind::SoftmaxCe { .. } => "softmax_ce",
        }
    }

    pub fn is_regression(&self) -> bool {
        matches!(self, LossKind::SquaredL2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossModel {
    pub kind: LossKind,
    pub feature_dim: usize,
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

impl LossModel {
    pub fn new(kind: LossKind, feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be positive"));
        }
        if let LossKind::SoftmaxCe { classes } = kind {
            if classes < 2 {
                return Err(Error::invalid("classes", "softmax needs at least 2 classes"));
            }
        }
        Ok(Self { kind, feature_dim })
    }

    pub fn squared(feature_dim: usize) -> Self {
        Self {
            kind: LossKind::SquaredL2,
            feature_dim,
        }
    }

    pub fn outputs(&self) -> usize {
        match self.kind {
            LossKind::SoftmaxCe { classes } => classes,
            _ => 1,
        }
    }

    /// Number of gradient coordinates, biases included.
    pub fn param_len(&self) -> usize {
        (self.feature_dim + 1) * self.outputs()
    }

    pub fn zeros<T: Scalar>(&self) -> ParamVector<T> {
        ParamVector::zeros(self.feature_dim, self.outputs())
    }

    pub fn check_params<T: Scalar>(&self, w: &ParamVector<T>) -> Result<()> {
        if w.dim() != self.feature_dim || w.outputs() != self.outputs() {
            return Err(Error::DimensionMismatch {
                expected: self.param_len(),
                got: w.len(),
            });
        }
        if !w.is_finite() {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(())
    }

    pub fn check_features<T: Scalar>(&self, x: &[T]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        if !all_finite(x) {
            return Err(Error::NonFinite("features"));
        }
        Ok(())
    }

    pub fn check_label<T: Scalar>(&self, y: T) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::NonFinite("label"));
        }
        let ok = match self.kind {
            LossKind::SquaredL2 => true,
            // soft targets in [0, 1] keep the label-Lipschitz analysis meaningful
            LossKind::Logistic => y >= T::zero() && y <= T::one(),
            LossKind::SoftmaxCe { classes } => {
                y >= T::zero() && y.fract() == T::zero() && y.as_f64() < classes as f64
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidLabel {
                label: y.as_f64(),
                kind: self.kind.name(),
            })
        }
    }

    fn check_all<T: Scalar>(&self, w: &ParamVector<T>, x: &[T], y: T) -> Result<()> {
        self.check_params(w)?;
        self.check_features(x)?;
        self.check_label(y)
    }

    fn score<T: Scalar>(block: &[T], x: &[T]) -> T {
        let d = x.len();
        dot(&block[..d], x) + block[d]
    }

    /// Raw linear score of the first output (`x·w + b`).
    pub fn linear_score<T: Scalar>(&self, w: &ParamVector<T>, x: &[T]) -> T {
        Self::score(w.block(0), x)
    }

    /// Point prediction: the regression value, the positive-class
    /// probability, or the arg-max class index.
    pub fn predict<T: Scalar>(&self, w: &ParamVector<T>, x: &[T]) -> T {
        match self.kind {
            LossKind::SquaredL2 => Self::score(w.block(0), x),
            LossKind::Logistic => sigmoid(Self::score(w.block(0), x)),
            LossKind::SoftmaxCe { classes } => {
                let mut best = 0;
                let mut best_z = T::neg_infinity();
                for j in 0..classes {
                    let z = Self::score(w.block(j), x);
                    if z > best_z {
                        best_z = z;
                        best = j;
                    }
                }
                T::lit(best as f64)
            }
        }
    }

    /// Per-sample loss; inputs are assumed validated.
    pub fn loss_unchecked<T: Scalar>(&self, w: &ParamVector<T>, x: &[T], y: T) -> T {
        match self.kind {
            LossKind::SquaredL2 => {
                let r = Self::score(w.block(0), x) - y;
                T::lit(0.5) * r * r
            }
            LossKind::Logistic => {
                let z = Self::score(w.block(0), x);
                softplus(z) - y * z
            }
            LossKind::SoftmaxCe { classes } => {
                let zs: Vec<T> = (0..classes).map(|j| Self::score(w.block(j), x)).collect();
                let m = zs.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let lse = m + zs.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
                let label = y.to_usize().unwrap_or(0);
                lse - zs[label]
            }
        }
    }

    pub fn loss<T: Scalar>(&self, w: &ParamVector<T>, x: &[T], y: T) -> Result<T> {
        self.check_all(w, x, y)?;
        Ok(self.loss_unchecked(w, x, y))
    }

    /// `out += scale * ∇ℓ(w; x, y)`; inputs are assumed validated.
    pub fn add_grad<T: Scalar>(&self, w: &ParamVector<T>, x: &[T], y: T, scale: T, out: &mut [T]) {
        let d = x.len();
        let mut add_block = |j: usize, coef: T| {
            let blk = &mut out[j * (d + 1)..(j + 1) * (d + 1)];
            for (o, &xi) in blk[..d].iter_mut().zip(x) {
                *o = *o + coef * xi;
            }
            blk[d] = blk[d] + coef;
        };
        match self.kind {
            LossKind::SquaredL2 => {
                let r = Self::score(w.block(0), x) - y;
                add_block(0, scale * r);
            }
            LossKind::Logistic => {
                let p = sigmoid(Self::score(w.block(0), x));
                add_block(0, scale * (p - y));
            }
            LossKind::SoftmaxCe { classes } => {
                let zs: Vec<T> = (0..classes).map(|j| Self::score(w.block(j), x)).collect();
                let m = zs.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let es: Vec<T> = zs.iter().map(|&z| (z - m).exp()).collect();
                let total: T = es.iter().copied().sum();
                let label = y.to_usize().unwrap_or(0);
                for (j, &e) in es.iter().enumerate() {
                    let target = if j == label { T::one() } else { T::zero() };
                    add_block(j, scale * (e / total - target));
                }
            }
        }
    }

    pub fn grad<T: Scalar>(&self, w: &ParamVector<T>, x: &[T], y: T) -> Result<Gradient<T>> {
        self.check_all(w, x, y)?;
        let mut g = self.zeros::<T>();
        self.add_grad(w, x, y, T::one(), g.coeffs_mut());
        Ok(g)
    }
}

/// Norm of the gradient feature map `(x, 1)` of a linear model with bias.
pub fn augmented_feature_norm<T: Scalar>(x: &[T]) -> T {
    (dot(x, x) + T::one()).sqrt()
}

/// Population gradient of the squared loss for zero-mean Gaussian features
/// with covariance `feature_cov` and labels `y = x·w* + b* + noise`.
pub fn population_gradient_gaussian<T: Scalar>(
    w: &ParamVector<T>,
    w_star: &ParamVector<T>,
    feature_cov: &[Vec<T>],
) -> Result<Gradient<T>> {
    let d = w.dim();
    if w.outputs() != 1 || !w.same_shape(w_star) {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: w_star.len(),
        });
    }
    if feature_cov.len() != d || feature_cov.iter().any(|row| row.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: feature_cov.len(),
        });
    }
    check_psd(feature_cov)?;
    let delta = w.sub(w_star)?;
    let mut coeffs = Vec::with_capacity(d + 1);
    for row in feature_cov {
        coeffs.push(dot(row, &delta.coeffs()[..d]));
    }
    coeffs.push(delta.coeffs()[d]);
    ParamVector::from_coeffs(d, 1, coeffs)
}

/// Symmetry plus a pivoted LDLᵀ sweep that tolerates zero pivots.
fn check_psd<T: Scalar>(m: &[Vec<T>]) -> Result<()> {
    let d = m.len();
    let scale = (0..d)
        .map(|i| m[i][i].abs())
        .fold(T::zero(), |a, b| a.max(b))
        .max(T::one());
    let tol = T::lit(1e-10) * scale;
    for i in 0..d {
        if !all_finite(&m[i]) {
            return Err(Error::NonFinite("covariance"));
        }
        for j in 0..i {
            if (m[i][j] - m[j][i]).abs() > tol {
                return Err(Error::NotPsd);
            }
        }
    }
    let mut a: Vec<Vec<T>> = m.to_vec();
    for k in 0..d {
        let p = a[k][k];
        if p < -tol {
            return Err(Error::NotPsd);
        }
        if p <= tol {
            if (k + 1..d).any(|i| a[i][k].abs() > tol.sqrt() * scale.sqrt()) {
                return Err(Error::NotPsd);
            }
            continue;
        }
        for i in k + 1..d {
            let f = a[i][k] / p;
            for j in k + 1..d {
                a[i][j] = a[i][j] - f * a[k][j];
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBound {
    /// Lipschitz constant of the gradient in the label argument.
    pub l_y: f64,
    pub feature_radius: f64,
}

/// Label-Lipschitz constant of the loss gradient given `‖∇φ_w(x)‖ ≤ radius`.
///
/// For the linear models here `∇φ_w(x) = (x, 1)`, so `radius` must bound the
/// bias-augmented feature norm (see [`augmented_feature_norm`]).
pub fn lipschitz_label_constant(model: &LossModel, feature_radius: f64) -> Result<LipschitzBound> {
    if !(feature_radius >= 0.0) || !feature_radius.is_finite() {
        return Err(Error::invalid("feature_radius", "must be finite and non-negative"));
    }
    match model.kind {
        LossKind::SquaredL2 | LossKind::Logistic => Ok(LipschitzBound {
            l_y: feature_radius,
            feature_radius,
        }),
        LossKind::SoftmaxCe { .. } => Err(Error::UnsupportedKind("lipschitz_label_constant")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn squared_loss_examples() {
        let m = LossModel::squared(2);
        let w = ParamVector::new(vec![0.0, 0.0], 0.0);
        assert_eq!(m.loss(&w, &[1.0, 0.0], 2.0).unwrap(), 2.0);
        let w = ParamVector::new(vec![0.3, -1.2], 0.7);
        let y = 0.3 * 1.5 - 1.2 * 2.0 + 0.7;
        assert!(m.loss::<f64>(&w, &[1.5, 2.0], y).unwrap().abs() < 1e-15);
        assert!(m.grad(&w, &[1.5, 2.0], y).unwrap().norm_sq() < 1e-28);
    }

    #[test]
    fn squared_grad_example() {
        let m = LossModel::squared(2);
        let w = ParamVector::new(vec![0.0, 0.0], 0.0);
        let g = m.grad(&w, &[1.0, 0.0], 2.0).unwrap();
        assert_eq!(g.weights(), &[-2.0, 0.0]);
        assert_eq!(g.bias(), -2.0);
    }

    #[test]
    fn logistic_examples() {
        let m = LossModel::new(LossKind::Logistic, 1).unwrap();
        let w = ParamVector::new(vec![0.0], 0.0);
        assert!(close(m.loss(&w, &[5.0], 1.0).unwrap(), std::f64::consts::LN_2, 1e-15));
        let g = m.grad(&w, &[3.0], 0.0).unwrap();
        assert!(close(g.weights()[0], 1.5, 1e-15));
        // large scores stay finite
        let w = ParamVector::new(vec![1000.0], 0.0);
        assert!(m.loss::<f64>(&w, &[1.0], 0.0).unwrap().is_finite());
        assert!(m.loss::<f64>(&w, &[-1.0], 1.0).unwrap().is_finite());
    }

    #[test]
    fn softmax_shapes_and_stability() {
        let m = LossModel::new(LossKind::SoftmaxCe { classes: 3 }, 2).unwrap();
        let w = m.zeros::<f64>();
        assert_eq!(m.grad(&w, &[1.0, 2.0], 1.0).unwrap().len(), 9);
        assert!(close(m.loss(&w, &[1.0, 2.0], 2.0).unwrap(), 3f64.ln(), 1e-14));
        let big = ParamVector::from_coeffs(2, 3, vec![900.0, 0.0, 0.0, 0.0, 0.0, 0.0, -900.0, 0.0, 0.0]).unwrap();
        assert!(m.loss::<f64>(&big, &[1.0, 0.0], 2.0).unwrap().is_finite());
        assert!(m.grad(&big, &[1.0, 0.0], 2.0).unwrap().is_finite());
        assert!(m.check_label(3.0).is_err());
        assert!(m.check_label(0.5).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = LossModel::squared(2);
        let w = ParamVector::new(vec![0.0, 0.0], 0.0);
        assert!(matches!(m.loss(&w, &[1.0], 0.0), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(m.loss(&w, &[f64::NAN, 0.0], 0.0), Err(Error::NonFinite(_))));
        assert!(matches!(m.loss(&w, &[1.0, 0.0], f64::INFINITY), Err(Error::NonFinite(_))));
        let lm = LossModel::new(LossKind::Logistic, 2).unwrap();
        assert!(lm.loss(&w, &[1.0, 0.0], 2.0).is_err());
    }

    fn fd_check(model: &LossModel, rng: &mut ChaCha8Rng) {
        let d = model.feature_dim;
        let k = model.outputs();
        for _ in 0..100 {
            let coeffs: Vec<f64> = (0..(d + 1) * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = ParamVector::from_coeffs(d, k, coeffs).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = match model.kind {
                LossKind::SquaredL2 => rng.random_range(-2.0..2.0),
                LossKind::Logistic => rng.random_range(0..2) as f64,
                LossKind::SoftmaxCe { classes } => rng.random_range(0..classes) as f64,
            };
            let g = model.grad(&w, &x, y).unwrap();
            let h = 1e-5;
            let fd: Vec<f64> = (0..w.len())
                .map(|i| {
                    let mut p = w.clone();
                    p.coeffs_mut()[i] += h;
                    let mut q = w.clone();
                    q.coeffs_mut()[i] -= h;
                    (model.loss(&p, &x, y).unwrap() - model.loss(&q, &x, y).unwrap()) / (2.0 * h)
                })
                .collect();
            let fd = ParamVector::from_coeffs(d, k, fd).unwrap();
            let err = g.sub(&fd).unwrap().norm_sq().sqrt();
            let scale = g.norm_sq().sqrt().max(1e-3);
            assert!(err / scale <= 1e-6, "{:?}: rel err {}", model.kind, err / scale);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        fd_check(&LossModel::squared(4), &mut rng);
        fd_check(&LossModel::new(LossKind::Logistic, 4).unwrap(), &mut rng);
        fd_check(&LossModel::new(LossKind::SoftmaxCe { classes: 3 }, 4).unwrap(), &mut rng);
    }

    #[test]
    fn gradient_is_label_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let radius = 2.0;
        for kind in [LossKind::SquaredL2, LossKind::Logistic] {
            let m = LossModel::new(kind, 3).unwrap();
            let lip = lipschitz_label_constant(&m, radius).unwrap();
            for _ in 0..1000 {
                let w = ParamVector::new((0..3).map(|_| rng.random_range(-3.0..3.0)).collect(), rng.random_range(-1.0..1.0));
                // scale (x, 1) to land inside the radius
                let mut x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let target = rng.random_range(1.0..radius);
                let s = ((target * target - 1.0) / dot(&x, &x)).sqrt();
                x.iter_mut().for_each(|v| *v *= s);
                assert!(augmented_feature_norm(&x) <= radius + 1e-12);
                let (y1, y2) = match kind {
                    LossKind::Logistic => (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
                    _ => (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
                };
                let g1 = m.grad(&w, &x, y1).unwrap();
                let g2 = m.grad(&w, &x, y2).unwrap();
                let diff = g1.sub(&g2).unwrap().norm_sq().sqrt();
                assert!(diff <= lip.l_y * (y1 - y2).abs() + 1e-12);
            }
        }
    }

    #[test]
    fn lipschitz_constants() {
        assert_eq!(lipschitz_label_constant(&LossModel::squared(2), 1.0).unwrap().l_y, 1.0);
        let lm = LossModel::new(LossKind::Logistic, 2).unwrap();
        assert_eq!(lipschitz_label_constant(&lm, 2.5).unwrap().l_y, 2.5);
        assert_eq!(lipschitz_label_constant(&LossModel::squared(2), 0.0).unwrap().l_y, 0.0);
        let sm = LossModel::new(LossKind::SoftmaxCe { classes: 3 }, 2).unwrap();
        assert!(matches!(lipschitz_label_constant(&sm, 1.0), Err(Error::UnsupportedKind(_))));
    }

    #[test]
    fn population_gradient_examples() {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let ws = ParamVector::new(vec![0.5, 2.0], 0.0);
        let g = population_gradient_gaussian(&ws, &ws, &eye).unwrap();
        assert!(g.norm_sq() == 0.0);
        let w = ParamVector::new(vec![1.5, 1.0], 0.0);
        let g = population_gradient_gaussian(&w, &ws, &eye).unwrap();
        assert_eq!(g.weights(), &[1.0, -1.0]);
        let diag = vec![vec![2.0, 0.0], vec![0.0, 1.0]];
        let w = ParamVector::new(vec![1.5, 3.0], 0.0);
        let g = population_gradient_gaussian(&w, &ws, &diag).unwrap();
        assert_eq!(g.weights(), &[2.0, 1.0]);
        let bad = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert_eq!(population_gradient_gaussian(&w, &ws, &bad), Err(Error::NotPsd));
        let singular = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(population_gradient_gaussian(&w, &ws, &singular).is_ok());
    }

    /// Monte-Carlo average of per-sample gradients against the closed form.
    #[test]
    fn population_gradient_matches_monte_carlo() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let m = LossModel::squared(2);
        let ws = ParamVector::new(vec![0.5, -1.0], 0.25);
        let w = ParamVector::new(vec![1.5, 0.0], 0.25);
        let sd = [2f64.sqrt(), 1.0];
        let k = 1_000_000;
        let mut sum = [0.0; 3];
        let mut sum_sq = [0.0; 3];
        for _ in 0..k {
            let x: Vec<f64> = sd.iter().map(|s| { let z: f64 = StandardNormal.sample(&mut rng); s * z }).collect();
            let noise: f64 = StandardNormal.sample(&mut rng);
            let y = m.linear_score(&ws, &x) + 0.3 * noise;
            let g = m.grad(&w, &x, y).unwrap();
            for (i, &v) in g.coeffs().iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
        let expected = [2.0, 1.0, 0.0];
        for i in 0..3 {
            let mean = sum[i] / k as f64;
            let se = ((sum_sq[i] / k as f64 - mean * mean) / k as f64).sqrt();
            assert!((mean - expected[i]).abs() <= 3.0 * se, "coord {i}: {mean} vs {}", expected[i]);
        }
        let closed = population_gradient_gaussian(&w, &ws, &[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(closed.coeffs(), &expected);
    }
}
