//! First-order weight updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradient, ParamVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `η_t = η_0 (Σ_{s≤t} ‖g_s‖²)^{-1/2}`.
    AdaGradNorm { eta0: f64 },
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, field| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(field, "must be positive and finite"))
            }
        };
        match *self {
            OptimizerKind::AdaGradNorm { eta0 } => positive(eta0, "eta0"),
            OptimizerKind::Sgd { lr } => positive(lr, "lr"),
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                positive(lr, "lr")?;
                positive(eps, "eps")?;
                for (b, f) in [(beta1, "beta1"), (beta2, "beta2")] {
                    if !(0.0..1.0).contains(&b) {
                        return Err(Error::invalid(f, "must lie in [0, 1)"));
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState<T> {
    AdaGradNorm { eta0: T, sq_norm_sum: T },
    Sgd { lr: T },
    Adam { lr: T, beta1: T, beta2: T, eps: T, m: Vec<T>, v: Vec<T>, t: u64 },
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, param_len: usize) -> Self {
        match kind {
            OptimizerKind::AdaGradNorm { eta0 } => OptimizerState::AdaGradNorm {
                eta0: T::lit(eta0),
                sq_norm_sum: T::zero(),
            },
            OptimizerKind::Sgd { lr } => OptimizerState::Sgd { lr: T::lit(lr) },
            OptimizerKind::Adam { lr, beta1, beta2, eps } => OptimizerState::Adam {
                lr: T::lit(lr),
                beta1: T::lit(beta1),
                beta2: T::lit(beta2),
                eps: T::lit(eps),
                m: vec![T::zero(); param_len],
                v: vec![T::zero(); param_len],
                t: 0,
            },
        }
    }

    /// Applies one update in place and returns the step size used
    /// (`None` when the update was skipped).
    pub fn apply(&mut self, w: &mut ParamVector<T>, g: &Gradient<T>) -> Result<Option<T>> {
        if !w.same_shape(g) {
            return Err(Error::DimensionMismatch {
                expected: w.len(),
                got: g.len(),
            });
        }
        if !g.is_finite() {
            return Err(Error::Diverged("gradient"));
        }
        let eta = match self {
            OptimizerState::AdaGradNorm { eta0, sq_norm_sum } => {
                *sq_norm_sum = *sq_norm_sum + g.norm_sq();
                if *sq_norm_sum == T::zero() {
                    return Ok(None);
                }
                let eta = *eta0 / sq_norm_sum.sqrt();
                for (wi, &gi) in w.coeffs_mut().iter_mut().zip(g.coeffs()) {
                    *wi = *wi - eta * gi;
                }
                eta
            }
            OptimizerState::Sgd { lr } => {
                for (wi, &gi) in w.coeffs_mut().iter_mut().zip(g.coeffs()) {
                    *wi = *wi - *lr * gi;
                }
                *lr
            }
            OptimizerState::Adam { lr, beta1, beta2, eps, m, v, t } => {
                *t += 1;
                let tt = *t as i32;
                let bc1 = T::one() - beta1.powi(tt);
                let bc2 = T::one() - beta2.powi(tt);
                for (((wi, &gi), mi), vi) in w.coeffs_mut().iter_mut().zip(g.coeffs()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = *beta1 * *mi + (T::one() - *beta1) * gi;
                    *vi = *beta2 * *vi + (T::one() - *beta2) * gi * gi;
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *wi = *wi - *lr * mhat / (vhat.sqrt() + *eps);
                }
                *lr
            }
        };
        if !w.is_finite() {
            return Err(Error::Diverged("weight update"));
        }
        Ok(Some(eta))
    }
}

/// Functional form of [`OptimizerState::apply`].
pub fn step_weights<T: Scalar>(
    state: &OptimizerState<T>,
    w: &ParamVector<T>,
    g: &Gradient<T>,
) -> Result<(OptimizerState<T>, ParamVector<T>)> {
    let mut s = state.clone();
    let mut w = w.clone();
    s.apply(&mut w, g)?;
    Ok((s, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adagrad_norm_first_step() {
        let s = OptimizerState::<f64>::new(OptimizerKind::AdaGradNorm { eta0: 1.0 }, 3);
        let w = ParamVector::new(vec![1.0, 1.0], 1.0);
        let g = ParamVector::new(vec![2.0, 0.0], 0.0);
        let (s, w2) = step_weights(&s, &w, &g).unwrap();
        assert_eq!(w2.coeffs(), &[0.0, 1.0, 1.0]);
        assert_eq!(s, OptimizerState::AdaGradNorm { eta0: 1.0, sq_norm_sum: 4.0 });
    }

    #[test]
    fn adagrad_norm_two_steps() {
        let mut s = OptimizerState::<f64>::new(OptimizerKind::AdaGradNorm { eta0: 1.0 }, 2);
        let mut w = ParamVector::new(vec![0.0], 0.0);
        let g = ParamVector::new(vec![1.0], 0.0);
        assert_eq!(s.apply(&mut w, &g).unwrap(), Some(1.0));
        let eta2 = s.apply(&mut w, &g).unwrap().unwrap();
        assert!((eta2 - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient() {
        let zero = ParamVector::new(vec![0.0, 0.0], 0.0);
        let w = ParamVector::new(vec![1.0, -1.0], 0.5);
        let s = OptimizerState::<f64>::new(OptimizerKind::AdaGradNorm { eta0: 1.0 }, 3);
        let (s2, w2) = step_weights(&s, &w, &zero).unwrap();
        assert_eq!((s2, w2), (s, w.clone()));

        let mut adam = OptimizerState::<f64>::new(OptimizerKind::adam(0.1), 3);
        let mut w3 = w.clone();
        adam.apply(&mut w3, &ParamVector::new(vec![1.0, 1.0], 1.0)).unwrap();
        let before = adam.clone();
        adam.apply(&mut w3, &zero).unwrap();
        if let (OptimizerState::Adam { m: m0, v: v0, .. }, OptimizerState::Adam { m, v, t, .. }) = (&before, &adam) {
            assert_eq!(*t, 2);
            assert!((m[0] - 0.9 * m0[0]).abs() < 1e-15);
            assert!((v[0] - 0.999 * v0[0]).abs() < 1e-15);
        } else {
            unreachable!()
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = OptimizerState::<f64>::new(OptimizerKind::adam(0.01), 2);
        let mut w = ParamVector::new(vec![0.0], 0.0);
        s.apply(&mut w, &ParamVector::new(vec![3.0], -0.5)).unwrap();
        assert!((w.coeffs()[0] + 0.01).abs() < 1e-9);
        assert!((w.coeffs()[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn sgd_and_divergence() {
        let mut s = OptimizerState::<f64>::new(OptimizerKind::Sgd { lr: 0.5 }, 2);
        let mut w = ParamVector::new(vec![1.0], 0.0);
        s.apply(&mut w, &ParamVector::new(vec![2.0], 2.0)).unwrap();
        assert_eq!(w.coeffs(), &[0.0, -1.0]);
        assert!(s.apply(&mut w, &ParamVector::new(vec![f64::NAN], 0.0)).is_err());
        let mut huge = OptimizerState::<f64>::new(OptimizerKind::Sgd { lr: 1e308 }, 2);
        assert!(huge.apply(&mut w, &ParamVector::new(vec![1e10], 0.0)).is_err());
        assert!(OptimizerKind::Sgd { lr: -1.0 }.validate().is_err());
        assert!(OptimizerKind::Adam { lr: 0.1, beta1: 1.0, beta2: 0.9, eps: 1e-8 }.validate().is_err());
    }
}
