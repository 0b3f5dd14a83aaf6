//! Row-major feature batches and fixed teachers.

use crate::error::{Error, Result};
use crate::model::{LossKind, LossModel, ParamVector};
use crate::rng::hashed_standard_normal;
use crate::scalar::{all_finite, dot, Scalar};

fn check_rows<T: Scalar>(dim: usize, features: &[T], what: &'static str) -> Result<usize> {
    if dim == 0 {
        return Err(Error::invalid("dim", "must be positive"));
    }
    if !features.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: features.len() % dim,
        });
    }
    let rows = features.len() / dim;
    if rows == 0 {
        return Err(Error::EmptyData(what.to_string()));
    }
    if !all_finite(features) {
        return Err(Error::NonFinite(what));
    }
    Ok(rows)
}

fn check_groups(groups: &Option<Vec<u32>>, rows: usize) -> Result<()> {
    match groups {
        Some(g) if g.len() != rows => Err(Error::DimensionMismatch {
            expected: rows,
            got: g.len(),
        }),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch<T> {
    dim: usize,
    features: Vec<T>,
    labels: Vec<T>,
    groups: Option<Vec<u32>>,
}

impl<T: Scalar> LabeledBatch<T> {
    pub fn new(dim: usize, features: Vec<T>, labels: Vec<T>, groups: Option<Vec<u32>>) -> Result<Self> {
        let rows = check_rows(dim, &features, "labeled features")?;
        if labels.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                got: labels.len(),
            });
        }
        if !all_finite(&labels) {
            return Err(Error::NonFinite("labels"));
        }
        check_groups(&groups, rows)?;
        Ok(Self {
            dim,
            features,
            labels,
            groups,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    pub fn groups(&self) -> Option<&[u32]> {
        self.groups.as_deref()
    }

    pub fn validate_for(&self, model: &LossModel) -> Result<()> {
        if self.dim != model.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: model.feature_dim,
                got: self.dim,
            });
        }
        self.labels.iter().try_for_each(|&y| model.check_label(y))
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: self.groups.as_ref().map(|g| idx.iter().map(|&i| g[i]).collect()),
        }
    }

    /// Drops the labels; they stay reachable only through
    /// [`UnlabeledBatch::oracle_labels`].
    pub fn hide_labels(self) -> UnlabeledBatch<T> {
        UnlabeledBatch {
            dim: self.dim,
            features: self.features,
            groups: self.groups,
            hidden_labels: Some(self.labels),
        }
    }

    pub fn cast<U: Scalar>(&self) -> LabeledBatch<U> {
        LabeledBatch {
            dim: self.dim,
            features: self.features.iter().map(|&v| U::lit(v.as_f64())).collect(),
            labels: self.labels.iter().map(|&v| U::lit(v.as_f64())).collect(),
            groups: self.groups.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledBatch<T> {
    dim: usize,
    features: Vec<T>,
    groups: Option<Vec<u32>>,
    hidden_labels: Option<Vec<T>>,
}

impl<T: Scalar> UnlabeledBatch<T> {
    pub fn new(dim: usize, features: Vec<T>, groups: Option<Vec<u32>>) -> Result<Self> {
        let rows = check_rows(dim, &features, "unlabeled features")?;
        check_groups(&groups, rows)?;
        Ok(Self {
            dim,
            features,
            groups,
            hidden_labels: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn groups(&self) -> Option<&[u32]> {
        self.groups.as_deref()
    }

    /// True labels kept for evaluation-only oracles. Training code never
    /// calls this.
    pub fn oracle_labels(&self) -> Option<&[T]> {
        self.hidden_labels.as_deref()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            features,
            groups: self.groups.as_ref().map(|g| idx.iter().map(|&i| g[i]).collect()),
            hidden_labels: self
                .hidden_labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> UnlabeledBatch<U> {
        UnlabeledBatch {
            dim: self.dim,
            features: self.features.iter().map(|&v| U::lit(v.as_f64())).collect(),
            groups: self.groups.clone(),
            hidden_labels: self
                .hidden_labels
                .as_ref()
                .map(|l| l.iter().map(|&v| U::lit(v.as_f64())).collect()),
        }
    }
}

/// A fixed prediction function used for pseudo-labels.
///
/// Implementations must be deterministic: the same input always yields the
/// same output for the lifetime of the teacher.
pub trait Teacher<T>: Send + Sync {
    fn predict(&self, x: &[T]) -> T;

    fn describe(&self) -> String;
}

/// `f(x) = x·w + b`.
#[derive(Debug, Clone)]
pub struct LinearTeacher<T> {
    params: ParamVector<T>,
}

impl<T: Scalar> LinearTeacher<T> {
    pub fn new(params: ParamVector<T>) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &ParamVector<T> {
        &self.params
    }
}

impl<T: Scalar> Teacher<T> for LinearTeacher<T> {
    fn predict(&self, x: &[T]) -> T {
        dot(self.params.weights(), x) + self.params.bias()
    }

    fn describe(&self) -> String {
        format!("linear teacher (d={})", self.params.dim())
    }
}

/// `f(x) = x·w + b + noise_std·ζ(x)` where `ζ(x)` is a standard normal drawn
/// once per distinct input (hash-keyed, so no cache is needed).
#[derive(Debug, Clone)]
pub struct NoisyLinearTeacher<T> {
    params: ParamVector<T>,
    noise_std: T,
    key: u64,
}

impl<T: Scalar> NoisyLinearTeacher<T> {
    pub fn new(params: ParamVector<T>, noise_std: T, key: u64) -> Self {
        Self {
            params,
            noise_std,
            key,
        }
    }

    pub fn params(&self) -> &ParamVector<T> {
        &self.params
    }

    pub fn noise_std(&self) -> T {
        self.noise_std
    }
}

impl<T: Scalar> Teacher<T> for NoisyLinearTeacher<T> {
    fn predict(&self, x: &[T]) -> T {
        let clean = dot(self.params.weights(), x) + self.params.bias();
        if self.noise_std == T::zero() {
            return clean;
        }
        let z = hashed_standard_normal(self.key, x.iter().map(|v| v.as_f64()));
        clean + self.noise_std * T::lit(z)
    }

    fn describe(&self) -> String {
        format!(
            "noisy linear teacher (d={}, noise_std={})",
            self.params.dim(),
            self.noise_std
        )
    }
}

/// Hard-label teacher backed by a trained linear model: regression value,
/// thresholded probability for logistic, arg-max class for softmax.
#[derive(Debug, Clone)]
pub struct ModelTeacher<T> {
    model: LossModel,
    params: ParamVector<T>,
}

impl<T: Scalar> ModelTeacher<T> {
    pub fn new(model: LossModel, params: ParamVector<T>) -> Result<Self> {
        model.check_params(&params)?;
        Ok(Self { model, params })
    }
}

impl<T: Scalar> Teacher<T> for ModelTeacher<T> {
    fn predict(&self, x: &[T]) -> T {
        let p = self.model.predict(&self.params, x);
        match self.model.kind {
            LossKind::Logistic => {
                if p >= T::lit(0.5) {
                    T::one()
                } else {
                    T::zero()
                }
            }
            _ => p,
        }
    }

    fn describe(&self) -> String {
        format!("{} model teacher", self.model.kind.name())
    }
}

/// Wraps a plain function.
pub struct FnTeacher<F> {
    f: F,
    description: String,
}

impl<F> FnTeacher<F> {
    pub fn new(description: impl Into<String>, f: F) -> Self {
        Self {
            f,
            description: description.into(),
        }
    }
}

impl<T, F> Teacher<T> for FnTeacher<F>
where
    F: Fn(&[T]) -> T + Send + Sync,
{
    fn predict(&self, x: &[T]) -> T {
        (self.f)(x)
    }

    fn describe(&self) -> String {
        self.description.clone()
    }
}
