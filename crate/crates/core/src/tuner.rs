//! Projected one-dimensional AdaGrad over the interpolation weight λ ∈ [0, 1].
//!
//! Each step sees `h_t(λ) = ‖g_t + λ d_t‖²`, moves against `h_t'(λ_t)` with
//! stepsize `γ_t = (2 Σ_{s≤t} h_s'(λ_s)²)^{-1/2}` and clamps back to the
//! interval. The diameter of `[0, 1]` is one, so it does not appear.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Gradient;
use crate::pp_gradients::{h_derivative, h_value, PPGradient};
use crate::scalar::Scalar;

pub const DOMAIN_DIAMETER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunerState<T> {
    pub lambda: T,
    /// `Σ_s h_s'(λ_s)²`; never decreases.
    pub sq_grad_sum: T,
    pub step_count: u64,
}

/// One tuner update, as written to run traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunerTrace {
    pub t: u64,
    pub lambda: f64,
    pub derivative: f64,
    /// `None` while every derivative so far has been zero.
    pub gamma: Option<f64>,
    pub h: f64,
}

pub fn tuner_init<T: Scalar>(lambda0: T) -> Result<TunerState<T>> {
    if !(lambda0 > T::zero() && lambda0 <= T::one()) {
        return Err(Error::invalid("lambda0", format!("{lambda0} not in (0, 1]")));
    }
    Ok(TunerState {
        lambda: lambda0,
        sq_grad_sum: T::zero(),
        step_count: 0,
    })
}

impl<T: Scalar> TunerState<T> {
    /// Next state plus the trace entry of the step just taken.
    pub fn step(&self, pp: &PPGradient<T>) -> Result<(TunerState<T>, TunerTrace)> {
        let deriv = h_derivative(pp, self.lambda);
        let h = h_value(pp, self.lambda);
        if !deriv.is_finite() || !h.is_finite() {
            return Err(Error::Diverged("lambda tuner"));
        }
        let sq_grad_sum = self.sq_grad_sum + deriv * deriv;
        let (lambda, gamma) = if sq_grad_sum > T::zero() {
            let gamma = T::lit(DOMAIN_DIAMETER) / (T::lit(2.0) * sq_grad_sum).sqrt();
            let next = (self.lambda - gamma * deriv).max(T::zero()).min(T::one());
            (next, Some(gamma.as_f64()))
        } else {
            (self.lambda, None)
        };
        let next = TunerState {
            lambda,
            sq_grad_sum,
            step_count: self.step_count + 1,
        };
        let trace = TunerTrace {
            t: next.step_count,
            lambda: self.lambda.as_f64(),
            derivative: deriv.as_f64(),
            gamma,
            h: h.as_f64(),
        };
        Ok((next, trace))
    }
}

pub fn tuner_step<T: Scalar>(state: &TunerState<T>, pp: &PPGradient<T>) -> Result<TunerState<T>> {
    state.step(pp).map(|(s, _)| s)
}

/// Online-learning record of a tuner run.
///
/// Scalars are always kept; the `(g_t, d_t)` pairs needed to re-evaluate
/// every `h_t` at an arbitrary λ are only kept when built with closures.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger<T> {
    pub lambdas_played: Vec<T>,
    pub h_values_at_played: Vec<T>,
    pub sq_derivs: Vec<T>,
    closures: Option<Vec<(Gradient<T>, Gradient<T>)>>,
}

impl<T: Scalar> RegretLedger<T> {
    pub fn new(keep_closures: bool) -> Self {
        Self {
            lambdas_played: Vec::new(),
            h_values_at_played: Vec::new(),
            sq_derivs: Vec::new(),
            closures: keep_closures.then(Vec::new),
        }
    }

    pub fn len(&self) -> usize {
        self.h_values_at_played.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h_values_at_played.is_empty()
    }

    pub fn has_closures(&self) -> bool {
        self.closures.is_some()
    }

    /// Records the loss `h_t` revealed at the played `lambda`.
    pub fn record(&mut self, pp: &PPGradient<T>, lambda: T) {
        let d = h_derivative(pp, lambda);
        self.lambdas_played.push(lambda);
        self.h_values_at_played.push(h_value(pp, lambda));
        self.sq_derivs.push(d * d);
        if let Some(c) = self.closures.as_mut() {
            c.push((pp.g_labeled.clone(), pp.d_f.clone()));
        }
    }

    /// `Σ_t h_t(λ)` using the archived closures.
    pub fn cumulative_h(&self, lambda: T) -> Result<T> {
        let closures = self
            .closures
            .as_ref()
            .ok_or(Error::invalid("ledger", "recorded without (g, d) closures"))?;
        Ok(closures
            .iter()
            .map(|(g, d)| g.axpy(lambda, d).expect("same shape").norm_sq())
            .fold(T::zero(), |a, b| a + b))
    }

    /// Regret bound `R_D √(2 Σ_t h_t'(λ_t)²)`.
    pub fn regret_bound(&self) -> T {
        let s = self.sq_derivs.iter().fold(T::zero(), |a, &b| a + b);
        T::lit(DOMAIN_DIAMETER) * (T::lit(2.0) * s).sqrt()
    }
}

/// `Σ_t h_t(λ_t) − Σ_t h_t(λ_fixed)`; zero for an empty ledger.
pub fn regret_against<T: Scalar>(ledger: &RegretLedger<T>, lambda_fixed: T) -> Result<T> {
    if ledger.is_empty() {
        return Ok(T::zero());
    }
    if !(lambda_fixed >= T::zero() && lambda_fixed <= T::one()) {
        return Err(Error::invalid("lambda_fixed", "must lie in [0, 1]"));
    }
    let played = ledger.h_values_at_played.iter().fold(T::zero(), |a, &b| a + b);
    Ok(played - ledger.cumulative_h(lambda_fixed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamVector;
    use proptest::prelude::*;

    fn pp(g: &[f64], d: &[f64]) -> PPGradient<f64> {
        let k = g.len() - 1;
        let g_n = ParamVector::new(g[..k].to_vec(), g[k]);
        let zero = ParamVector::new(vec![0.0; k], 0.0);
        let d_f = ParamVector::new(d[..k].to_vec(), d[k]);
        PPGradient::from_parts(g_n, zero, d_f).unwrap()
    }

    #[test]
    fn init_examples() {
        let s = tuner_init(1.0).unwrap();
        assert_eq!((s.lambda, s.sq_grad_sum, s.step_count), (1.0, 0.0, 0));
        assert_eq!(tuner_init(0.5).unwrap().lambda, 0.5);
        assert!(tuner_init(0.0).is_err());
        assert!(tuner_init(1.5).is_err());
        assert!(tuner_init(f64::NAN).is_err());
    }

    #[test]
    fn first_step_arithmetic() {
        let s = tuner_init(1.0).unwrap();
        let (next, tr) = s.step(&pp(&[1.0, 0.0], &[0.0, 2.0])).unwrap();
        // h'(1) = 2·⟨(0,2),(1,2)⟩ = 8; γ = 1/√128; 1 − 8/√128 = 1 − 1/√2
        assert_eq!(tr.derivative, 8.0);
        assert!((tr.gamma.unwrap() - 1.0 / 128f64.sqrt()).abs() < 1e-15);
        assert!((next.lambda - (1.0 - std::f64::consts::FRAC_1_SQRT_2)).abs() < 1e-12);
        assert_eq!(next.sq_grad_sum, 64.0);
        assert_eq!(next.step_count, 1);
    }

    #[test]
    fn zero_difference_never_moves() {
        let mut s = tuner_init(0.7).unwrap();
        for _ in 0..10 {
            let (n, tr) = s.step(&pp(&[3.0, -1.0], &[0.0, 0.0])).unwrap();
            assert_eq!(tr.gamma, None);
            s = n;
        }
        assert_eq!(s.lambda, 0.7);
        assert_eq!(s.step_count, 10);
    }

    #[test]
    fn clamps_to_zero() {
        let s = tuner_init(0.1).unwrap();
        let n = tuner_step(&s, &pp(&[100.0, 0.0], &[100.0, 0.0])).unwrap();
        assert_eq!(n.lambda, 0.0);
        let n = tuner_step(&tuner_init(0.9).unwrap(), &pp(&[-100.0, 0.0], &[1.0, 0.0])).unwrap();
        assert_eq!(n.lambda, 1.0);
    }

    #[test]
    fn non_finite_aborts() {
        let s = tuner_init(1.0).unwrap();
        assert!(s.step(&pp(&[f64::INFINITY, 0.0], &[1.0, 0.0])).is_err());
    }

    #[test]
    fn regret_examples() {
        let mut ledger = RegretLedger::new(true);
        ledger.record(&pp(&[1.0, 0.0], &[0.0, 2.0]), 1.0);
        assert_eq!(regret_against(&ledger, 0.0).unwrap(), 4.0);
        assert_eq!(regret_against(&ledger, 1.0).unwrap(), 0.0);
        assert_eq!(regret_against(&RegretLedger::<f64>::new(false), 0.3).unwrap(), 0.0);

        let mut scalars_only = RegretLedger::new(false);
        scalars_only.record(&pp(&[1.0, 0.0], &[0.0, 2.0]), 1.0);
        assert!(regret_against(&scalars_only, 0.5).is_err());
    }

    #[test]
    fn constant_play_has_zero_regret_against_itself() {
        let mut ledger = RegretLedger::new(true);
        for i in 0..20 {
            let f = i as f64;
            ledger.record(&pp(&[f.sin(), f.cos()], &[0.3 * f, -1.0]), 0.4);
        }
        assert!(regret_against(&ledger, 0.4).unwrap().abs() < 1e-9);
    }

    proptest! {
        /// Self-bounding identity: h'(λ)² ≤ 4‖d‖² h(λ).
        #[test]
        fn derivative_self_bound(g in prop::collection::vec(-1e3f64..1e3, 3), d in prop::collection::vec(-1e3f64..1e3, 3),
                                 l in 0.0f64..1.0) {
            let p = pp(&g, &d);
            let dh = h_derivative(&p, l);
            let rhs = 4.0 * p.d_f.norm_sq() * h_value(&p, l);
            prop_assert!(dh * dh <= rhs * (1.0 + 1e-9) + 1e-12);
        }

        /// Clamp safety and the regret bound on adversarial streams.
        #[test]
        fn stays_in_interval_and_meets_regret_bound(
            stream in prop::collection::vec((prop::collection::vec(-1e6f64..1e6, 2), prop::collection::vec(-1e6f64..1e6, 2), 0u8..4), 1..60),
            l0 in 0.01f64..1.0,
        ) {
            let mut s = tuner_init(l0).unwrap();
            let mut ledger = RegretLedger::new(true);
            for (g, d, kind) in stream {
                let (g, d) = match kind {
                    0 => (vec![0.0, 0.0], d),
                    1 => (g, vec![0.0, 0.0]),
                    _ => (g, d),
                };
                let p = pp(&g, &d);
                ledger.record(&p, s.lambda);
                s = tuner_step(&s, &p).unwrap();
                prop_assert!((0.0..=1.0).contains(&s.lambda));
            }
            let bound = ledger.regret_bound();
            let scale = ledger.h_values_at_played.iter().sum::<f64>().max(1.0);
            for i in 0..=100 {
                let r = regret_against(&ledger, i as f64 / 100.0).unwrap();
                prop_assert!(r <= bound + 1e-9 * scale, "regret {} > bound {}", r, bound);
            }
        }
    }
}
