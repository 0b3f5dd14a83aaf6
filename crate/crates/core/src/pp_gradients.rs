//! Mini-batch gradient estimators and their prediction-powered combination.

use crate::data::{LabeledBatch, Teacher, UnlabeledBatch};
use crate::error::{Error, Result};
use crate::model::{Gradient, LossModel, ParamVector};
use crate::scalar::Scalar;

/// The three mini-batch gradients of one step plus their difference.
#[derive(Debug, Clone, PartialEq)]
pub struct PPGradient<T> {
    /// Mean gradient on labeled rows with true labels.
    pub g_labeled: Gradient<T>,
    /// Mean gradient on labeled rows with teacher labels.
    pub g_labeled_pseudo: Gradient<T>,
    /// Mean gradient on unlabeled rows with teacher labels.
    pub g_unlabeled_pseudo: Gradient<T>,
    /// `g_unlabeled_pseudo - g_labeled_pseudo`.
    pub d_f: Gradient<T>,
}

impl<T: Scalar> PPGradient<T> {
    pub fn from_parts(g_labeled: Gradient<T>, g_labeled_pseudo: Gradient<T>, g_unlabeled_pseudo: Gradient<T>) -> Result<Self> {
        let d_f = g_unlabeled_pseudo.sub(&g_labeled_pseudo)?;
        if !g_labeled.same_shape(&d_f) {
            return Err(Error::DimensionMismatch {
                expected: g_labeled.len(),
                got: d_f.len(),
            });
        }
        Ok(Self {
            g_labeled,
            g_labeled_pseudo,
            g_unlabeled_pseudo,
            d_f,
        })
    }

    /// `g_labeled + lambda * d_f`; exactly `g_labeled` at `lambda = 0`, so no
    /// signed zero or NaN from `d_f` leaks in.
    pub fn combined(&self, lambda: T) -> Gradient<T> {
        if lambda == T::zero() {
            return self.g_labeled.clone();
        }
        self.g_labeled
            .axpy(lambda, &self.d_f)
            .expect("shapes checked at construction")
    }

    /// Gradient of the undebiased pseudo-labeling loss `L_n + L̃_N^f`.
    pub fn ssl_gradient(&self) -> Gradient<T> {
        self.g_labeled
            .axpy(T::one(), &self.g_unlabeled_pseudo)
            .expect("shapes checked at construction")
    }

    pub fn is_finite(&self) -> bool {
        self.g_labeled.is_finite() && self.g_labeled_pseudo.is_finite() && self.g_unlabeled_pseudo.is_finite()
    }
}

/// Teacher outputs for every row, rejecting non-finite predictions.
pub fn pseudo_labels<'a, T: Scalar>(
    teacher: &dyn Teacher<T>,
    rows: impl Iterator<Item = &'a [T]>,
    split: &'static str,
) -> Result<Vec<T>> {
    rows.enumerate()
        .map(|(row, x)| {
            let y = teacher.predict(x);
            if y.is_finite() {
                Ok(y)
            } else {
                Err(Error::PoisonedTeacher { split, row })
            }
        })
        .collect()
}

fn mean_gradient<'a, T: Scalar>(
    model: &LossModel,
    w: &ParamVector<T>,
    rows: impl Iterator<Item = &'a [T]>,
    labels: &[T],
) -> Gradient<T> {
    let mut g = model.zeros::<T>();
    let out = g.coeffs_mut();
    for (x, &y) in rows.zip(labels) {
        model.add_grad(w, x, y, T::one(), out);
    }
    let inv = T::one() / T::lit(labels.len() as f64);
    out.iter_mut().for_each(|v| *v = *v * inv);
    g
}

/// Mean gradient over the rows `idx` of a row-major pool; same summation
/// order and scaling as the batch estimators.
pub fn indexed_mean_gradient<T: Scalar>(
    model: &LossModel,
    w: &ParamVector<T>,
    features: &[T],
    labels: &[T],
    idx: &[usize],
) -> Gradient<T> {
    let d = model.feature_dim;
    let mut g = model.zeros::<T>();
    let out = g.coeffs_mut();
    for &i in idx {
        model.add_grad(w, &features[i * d..(i + 1) * d], labels[i], T::one(), out);
    }
    let inv = T::one() / T::lit(idx.len() as f64);
    out.iter_mut().for_each(|v| *v = *v * inv);
    g
}

fn check_inputs<T: Scalar>(
    model: &LossModel,
    w: &ParamVector<T>,
    labeled: &LabeledBatch<T>,
    unlabeled: &UnlabeledBatch<T>,
) -> Result<()> {
    model.check_params(w)?;
    labeled.validate_for(model)?;
    if unlabeled.dim() != model.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim,
            got: unlabeled.dim(),
        });
    }
    Ok(())
}

/// Builds `g^n`, `g^{n,f}`, `g̃^{N,f}` and `d_f` for one step. The teacher is
/// queried once per row; sums run in row order.
pub fn batch_gradients<T: Scalar>(
    model: &LossModel,
    w: &ParamVector<T>,
    labeled: &LabeledBatch<T>,
    unlabeled: &UnlabeledBatch<T>,
    teacher: &dyn Teacher<T>,
) -> Result<PPGradient<T>> {
    check_inputs(model, w, labeled, unlabeled)?;
    let lab_pseudo = pseudo_labels(teacher, labeled.rows(), "labeled")?;
    let unl_pseudo = pseudo_labels(teacher, unlabeled.rows(), "unlabeled")?;
    batch_gradients_with_pseudo(model, w, labeled, &lab_pseudo, unlabeled, &unl_pseudo)
}

/// As [`batch_gradients`] with teacher outputs computed up front, so the same
/// draw can be re-used at several parameter vectors.
pub fn batch_gradients_with_pseudo<T: Scalar>(
    model: &LossModel,
    w: &ParamVector<T>,
    labeled: &LabeledBatch<T>,
    labeled_pseudo: &[T],
    unlabeled: &UnlabeledBatch<T>,
    unlabeled_pseudo: &[T],
) -> Result<PPGradient<T>> {
    check_inputs(model, w, labeled, unlabeled)?;
    if labeled_pseudo.len() != labeled.len() || unlabeled_pseudo.len() != unlabeled.len() {
        return Err(Error::DimensionMismatch {
            expected: labeled.len() + unlabeled.len(),
            got: labeled_pseudo.len() + unlabeled_pseudo.len(),
        });
    }
    for (split, labels) in [("labeled", labeled_pseudo), ("unlabeled", unlabeled_pseudo)] {
        for (row, &y) in labels.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::PoisonedTeacher { split, row });
            }
            model.check_label(y)?;
        }
    }
    let g_labeled = mean_gradient(model, w, labeled.rows(), labeled.labels());
    let g_labeled_pseudo = mean_gradient(model, w, labeled.rows(), labeled_pseudo);
    let g_unlabeled_pseudo = mean_gradient(model, w, unlabeled.rows(), unlabeled_pseudo);
    PPGradient::from_parts(g_labeled, g_labeled_pseudo, g_unlabeled_pseudo)
}

/// `h(λ) = ‖g^n + λ d_f‖²`, bias coordinate included.
pub fn h_value<T: Scalar>(pp: &PPGradient<T>, lambda: T) -> T {
    pp.combined(lambda).norm_sq()
}

/// `h'(λ) = 2⟨d_f, g^n + λ d_f⟩`.
pub fn h_derivative<T: Scalar>(pp: &PPGradient<T>, lambda: T) -> T {
    let g = pp.combined(lambda);
    T::lit(2.0) * pp.d_f.dot(&g).expect("shapes checked at construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FnTeacher, LinearTeacher};
    use proptest::prelude::*;

    fn pp_from(g: [f64; 2], d: [f64; 2]) -> PPGradient<f64> {
        // d=1 feature + bias; put the two test coordinates in (w, b)
        let g_n = ParamVector::new(vec![g[0]], g[1]);
        let zero = ParamVector::new(vec![0.0], 0.0);
        let d_f = ParamVector::new(vec![d[0]], d[1]);
        PPGradient::from_parts(g_n, zero, d_f).unwrap()
    }

    #[test]
    fn h_examples() {
        let pp = pp_from([1.0, 0.0], [0.0, 2.0]);
        assert_eq!(h_value(&pp, 0.5), 2.0);
        assert_eq!(h_value(&pp, 1.0), 1.0 + 4.0);
        assert_eq!(h_derivative(&pp, 0.5), 4.0);
        let flat = pp_from([1.0, 3.0], [0.0, 0.0]);
        for l in [-1.0, 0.0, 0.3, 2.0] {
            assert_eq!(h_value(&flat, l), 10.0);
            assert_eq!(h_derivative(&flat, l), 0.0);
        }
        let pp = pp_from([1.0, -2.0], [0.5, 1.5]);
        let lhat = -pp.d_f.dot(&pp.g_labeled).unwrap() / pp.d_f.norm_sq();
        assert!(h_derivative(&pp, lhat).abs() < 1e-12);
    }

    #[test]
    fn h_derivative_matches_finite_differences() {
        let pp = pp_from([0.7, -1.3], [2.1, 0.4]);
        for l in [-0.5, 0.0, 0.25, 1.0, 3.0] {
            let h = 1e-4;
            let fd = (h_value(&pp, l + h) - h_value(&pp, l - h)) / (2.0 * h);
            let an = h_derivative(&pp, l);
            assert!((fd - an).abs() <= 1e-8 * an.abs().max(1.0));
        }
    }

    #[test]
    fn single_row_example() {
        let m = LossModel::squared(2);
        let w = m.zeros::<f64>();
        let lab = LabeledBatch::new(2, vec![1.0, 0.0], vec![2.0], None).unwrap();
        let unl = UnlabeledBatch::new(2, vec![1.0, 0.0], None).unwrap();
        let zero = FnTeacher::new("zero", |_: &[f64]| 0.0);
        let pp = batch_gradients(&m, &w, &lab, &unl, &zero).unwrap();
        assert_eq!(pp.g_labeled.weights(), &[-2.0, 0.0]);
        assert_eq!(pp.g_labeled_pseudo.norm_sq(), 0.0);
        assert_eq!(pp.g_unlabeled_pseudo.norm_sq(), 0.0);
        assert_eq!(pp.d_f.norm_sq(), 0.0);
        for l in [0.0, 0.5, 1.0] {
            assert_eq!(pp.combined(l).weights(), &[-2.0, 0.0]);
        }
    }

    #[test]
    fn perfect_teacher_on_labeled_rows() {
        let m = LossModel::squared(2);
        let truth = ParamVector::new(vec![1.0, -1.0], 0.5);
        let w = ParamVector::new(vec![0.2, 0.1], -0.3);
        let xs = vec![1.0, 2.0, -0.5, 0.3, 0.0, 1.0];
        let ys: Vec<f64> = xs.chunks(2).map(|x| x[0] - x[1] + 0.5).collect();
        let lab = LabeledBatch::new(2, xs, ys, None).unwrap();
        let unl = UnlabeledBatch::new(2, vec![0.1, 0.2, 3.0, -1.0], None).unwrap();
        let teacher = LinearTeacher::new(truth);
        let pp = batch_gradients(&m, &w, &lab, &unl, &teacher).unwrap();
        assert_eq!(pp.g_labeled, pp.g_labeled_pseudo);
        assert_eq!(pp.combined(0.0), pp.g_labeled);
        let expect = pp.g_labeled.axpy(0.3, &pp.g_unlabeled_pseudo.sub(&pp.g_labeled).unwrap()).unwrap();
        assert_eq!(pp.combined(0.3), expect);
        // determinism
        assert_eq!(pp, batch_gradients(&m, &w, &lab, &unl, &teacher).unwrap());
    }

    #[test]
    fn poisoned_teacher_names_row() {
        let m = LossModel::squared(1);
        let w = m.zeros::<f64>();
        let lab = LabeledBatch::new(1, vec![1.0, 2.0], vec![0.0, 0.0], None).unwrap();
        let unl = UnlabeledBatch::new(1, vec![1.0, 5.0, 7.0], None).unwrap();
        let t = FnTeacher::new("bad", |x: &[f64]| if x[0] > 6.0 { f64::NAN } else { 0.0 });
        assert_eq!(
            batch_gradients(&m, &w, &lab, &unl, &t),
            Err(Error::PoisonedTeacher { split: "unlabeled", row: 2 })
        );
        let lab_bad = LabeledBatch::new(2, vec![1.0, 2.0], vec![0.0], None).unwrap();
        assert!(matches!(batch_gradients(&m, &w, &lab_bad, &unl, &t), Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn combined_is_affine(g in prop::array::uniform2(-10.0f64..10.0), d in prop::array::uniform2(-10.0f64..10.0),
                              l1 in -2.0f64..2.0, l2 in -2.0f64..2.0) {
            let pp = pp_from(g, d);
            let mid = pp.combined((l1 + l2) / 2.0);
            let avg = pp.combined(l1).axpy(1.0, &pp.combined(l2)).unwrap().scale(0.5);
            for (a, b) in mid.coeffs().iter().zip(avg.coeffs()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
            prop_assert_eq!(pp.combined(0.0), pp.g_labeled.clone());
        }

        #[test]
        fn h_is_convex_in_lambda(g in prop::array::uniform2(-10.0f64..10.0), d in prop::array::uniform2(-10.0f64..10.0),
                                 l1 in 0.0f64..1.0, l2 in 0.0f64..1.0) {
            let pp = pp_from(g, d);
            let mid = h_value(&pp, (l1 + l2) / 2.0);
            let avg = (h_value(&pp, l1) + h_value(&pp, l2)) / 2.0;
            prop_assert!(mid <= avg + 1e-9 * (1.0 + avg));
        }
    }
}
