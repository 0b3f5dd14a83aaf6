//! Training loops for the prediction-powered method and its baselines.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledBatch, Teacher, UnlabeledBatch};
use crate::datagen::DataSplit;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, mean_loss, MetricsRecord};
use crate::model::{LossModel, ParamVector};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::pp_gradients::{batch_gradients, indexed_mean_gradient, pseudo_labels, PPGradient};
use crate::rng::{StreamKey, StreamRole};
use crate::scalar::Scalar;
use crate::tuner::{tuner_init, RegretLedger, TunerState, TunerTrace};

/// Training losses above this are treated as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Method {
    OnlyLabeled,
    /// Labeled loss plus unit-weight pseudo-label loss, no debiasing.
    Ssl,
    Ppi,
    PpiPlusPlus { lambda: f64 },
    /// Online-tuned λ.
    PpSsl,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::OnlyLabeled => "only_labeled".into(),
            Method::Ssl => "ssl".into(),
            Method::Ppi => "ppi".into(),
            Method::PpiPlusPlus { lambda } => format!("ppi_plus_plus({lambda})"),
            Method::PpSsl => "pp_ssl".into(),
        }
    }

    fn uses_teacher(&self) -> bool {
        !matches!(self, Method::OnlyLabeled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Batches drawn with replacement from the pools at every step.
    FreshIid,
    /// Pools reshuffled each epoch and walked in chunks.
    #[default]
    EpochShuffle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_n: usize,
    pub batch_big_n: usize,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    pub seed: u64,
}

fn default_lambda0() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.epochs == 0 || self.batch_n == 0 || self.batch_big_n == 0 {
            return Err(Error::invalid("epochs/batch", "must be positive"));
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::invalid("early_stop_patience", "must be positive"));
        }
        if !(self.lambda0 > 0.0 && self.lambda0 <= 1.0) {
            return Err(Error::invalid("lambda0", "must lie in (0, 1]"));
        }
        if let Method::PpiPlusPlus { lambda } = self.method {
            if !lambda.is_finite() {
                return Err(Error::invalid("lambda", "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome<T> {
    /// λ used to build this step's gradient.
    pub lambda: T,
    /// Weight step size; `None` when the optimizer skipped the update.
    pub eta: Option<T>,
    pub tuner: Option<TunerTrace>,
}

/// One run's mutable state. Each [`Trainer::step`] follows the order:
/// build the gradient with the current λ, update the weights, then update
/// λ from the same step's `(g, d)`.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar> {
    model: LossModel,
    method: Method,
    w: ParamVector<T>,
    optimizer: OptimizerState<T>,
    tuner: Option<TunerState<T>>,
    ledger: Option<RegretLedger<T>>,
    steps: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: LossModel, method: Method, optimizer: OptimizerKind, lambda0: f64, init: ParamVector<T>) -> Result<Self> {
        optimizer.validate()?;
        model.check_params(&init)?;
        let tuner = match method {
            Method::PpSsl => Some(tuner_init(T::lit(lambda0))?),
            _ => None,
        };
        Ok(Self {
            optimizer: OptimizerState::new(optimizer, model.param_len()),
            model,
            method,
            w: init,
            tuner,
            ledger: None,
            steps: 0,
        })
    }

    /// Records every tuner round in a regret ledger.
    pub fn with_ledger(mut self, keep_closures: bool) -> Self {
        self.ledger = Some(RegretLedger::new(keep_closures));
        self
    }

    pub fn params(&self) -> &ParamVector<T> {
        &self.w
    }

    pub fn model(&self) -> &LossModel {
        &self.model
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn ledger(&self) -> Option<&RegretLedger<T>> {
        self.ledger.as_ref()
    }

    pub fn into_ledger(self) -> Option<RegretLedger<T>> {
        self.ledger
    }

    pub fn tuner(&self) -> Option<&TunerState<T>> {
        self.tuner.as_ref()
    }

    /// λ the next step will use; `None` for the undebiased SSL loss.
    pub fn lambda(&self) -> Option<T> {
        match self.method {
            Method::OnlyLabeled => Some(T::zero()),
            Method::Ssl => None,
            Method::Ppi => Some(T::one()),
            Method::PpiPlusPlus { lambda } => Some(T::lit(lambda)),
            Method::PpSsl => self.tuner.map(|t| t.lambda),
        }
    }

    pub fn step(&mut self, pp: &PPGradient<T>) -> Result<StepOutcome<T>> {
        let lambda = self.lambda();
        let g = match lambda {
            Some(l) => pp.combined(l),
            None => pp.ssl_gradient(),
        };
        let eta = self.optimizer.apply(&mut self.w, &g)?;
        let mut trace = None;
        if let Some(t) = self.tuner {
            if let Some(ledger) = self.ledger.as_mut() {
                ledger.record(pp, t.lambda);
            }
            let (next, tr) = t.step(pp)?;
            self.tuner = Some(next);
            trace = Some(tr);
        }
        self.steps += 1;
        Ok(StepOutcome {
            lambda: lambda.unwrap_or_else(T::nan),
            eta,
            tuner: trace,
        })
    }

    /// Builds the step's gradients from a batch pair and steps.
    pub fn step_batch(&mut self, labeled: &LabeledBatch<T>, unlabeled: &UnlabeledBatch<T>, teacher: &dyn Teacher<T>) -> Result<StepOutcome<T>> {
        let pp = batch_gradients(&self.model, &self.w, labeled, unlabeled, teacher)?;
        self.step(&pp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub test: MetricsRecord,
    /// λ in effect at the end of the epoch.
    pub lambda: Option<f64>,
    /// Last weight step size of the epoch.
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    /// Filled in by the harness from the canonical config.
    #[serde(default)]
    pub config_hash: Option<String>,
    pub per_epoch: Vec<EpochRecord>,
    /// Number of completed epochs; equals `per_epoch.len()`.
    pub stop_epoch: usize,
    /// Epoch whose weights were kept (best validation loss, or the last).
    pub best_epoch: usize,
    pub final_params: Vec<f64>,
    pub final_metrics: Option<MetricsRecord>,
    /// λ at `best_epoch`.
    pub final_lambda: Option<f64>,
    pub diverged: Option<Divergence>,
    /// Not persisted: record files must be byte-identical across reruns.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn lambda_trace(&self) -> Vec<Option<f64>> {
        self.per_epoch.iter().map(|e| e.lambda).collect()
    }
}

fn chunks(idx: &[usize], size: usize) -> Vec<Vec<usize>> {
    idx.chunks(size).map(|c| c.to_vec()).collect()
}

/// Runs `config` on fixed pools. Every method walks the same batch
/// schedule: `max(⌈n/b_n⌉, ⌈N/b_N⌉)` steps per epoch, the shorter pool
/// cycling, and batch sizes capped at the pool sizes.
pub fn train<T: Scalar>(config: &TrainConfig, data: &DataSplit<T>, teacher: &dyn Teacher<T>, model: &LossModel) -> Result<RunRecord> {
    train_with_ledger(config, data, teacher, model, false).map(|(r, _)| r)
}

/// As [`train`], also returning the regret ledger of a PP-SSL run when
/// `keep_ledger` is set.
pub fn train_with_ledger<T: Scalar>(
    config: &TrainConfig,
    data: &DataSplit<T>,
    teacher: &dyn Teacher<T>,
    model: &LossModel,
    keep_ledger: bool,
) -> Result<(RunRecord, Option<RegretLedger<T>>)> {
    let started = std::time::Instant::now();
    config.validate()?;
    let lab = &data.labeled;
    let unl = &data.unlabeled;
    if lab.is_empty() || unl.is_empty() {
        return Err(Error::EmptyData("labeled and unlabeled pools must be non-empty".into()));
    }
    lab.validate_for(model)?;
    if unl.dim() != model.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim,
            got: unl.dim(),
        });
    }
    if config.early_stop_patience.is_some() && data.validation.is_none() {
        return Err(Error::invalid("early_stop_patience", "requires a validation split"));
    }

    let (lab_pseudo, unl_pseudo) = if config.method.uses_teacher() {
        (
            pseudo_labels(teacher, lab.rows(), "labeled")?,
            pseudo_labels(teacher, unl.rows(), "unlabeled")?,
        )
    } else {
        (Vec::new(), Vec::new())
    };
    if config.method.uses_teacher() {
        for &y in lab_pseudo.iter().chain(&unl_pseudo) {
            model.check_label(y)?;
        }
    }

    let key = StreamKey::new(config.seed, 0);
    let mut shuffle_rng = key.rng(StreamRole::Shuffle);
    let mut batch_rng = key.rng(StreamRole::Batches);
    let bn = config.batch_n.min(lab.len());
    let bbn = config.batch_big_n.min(unl.len());
    let steps_per_epoch = lab.len().div_ceil(bn).max(unl.len().div_ceil(bbn));

    let mut trainer = Trainer::new(*model, config.method, config.optimizer, config.lambda0, model.zeros::<T>())?;
    if keep_ledger {
        trainer = trainer.with_ledger(true);
    }
    let zero = model.zeros::<T>();
    let mut lab_idx: Vec<usize> = (0..lab.len()).collect();
    let mut unl_idx: Vec<usize> = (0..unl.len()).collect();

    let mut per_epoch = Vec::new();
    let mut best: Option<(f64, usize, ParamVector<T>, Option<f64>)> = None;
    let mut diverged = None;

    'epochs: for epoch in 1..=config.epochs {
        let (lab_chunks, unl_chunks) = match config.sampling {
            Sampling::EpochShuffle => {
                lab_idx.shuffle(&mut shuffle_rng);
                unl_idx.shuffle(&mut shuffle_rng);
                (chunks(&lab_idx, bn), chunks(&unl_idx, bbn))
            }
            Sampling::FreshIid => {
                let draw = |rng: &mut crate::rng::StreamRng, pool: usize, size: usize| -> Vec<Vec<usize>> {
                    (0..steps_per_epoch)
                        .map(|_| (0..size).map(|_| rng.random_range(0..pool)).collect())
                        .collect()
                };
                let l = draw(&mut batch_rng, lab.len(), bn);
                let u = draw(&mut batch_rng, unl.len(), bbn);
                (l, u)
            }
        };
        let mut eta = None;
        for s in 0..steps_per_epoch {
            let li = &lab_chunks[s % lab_chunks.len()];
            let ui = &unl_chunks[s % unl_chunks.len()];
            let w = trainer.params();
            let g_n = indexed_mean_gradient(model, w, lab.features(), lab.labels(), li);
            let pp = if config.method.uses_teacher() {
                let g_nf = indexed_mean_gradient(model, w, lab.features(), &lab_pseudo, li);
                let g_nf_tilde = indexed_mean_gradient(model, w, unl.features(), &unl_pseudo, ui);
                PPGradient::from_parts(g_n, g_nf, g_nf_tilde)?
            } else {
                PPGradient::from_parts(g_n, zero.clone(), zero.clone())?
            };
            match trainer.step(&pp) {
                Ok(out) => eta = out.eta.map(|e| e.as_f64()).or(eta),
                Err(Error::Diverged(what)) => {
                    diverged = Some(Divergence {
                        epoch,
                        reason: format!("non-finite {what}"),
                    });
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }

        let w = trainer.params();
        let train_loss = mean_loss(w, model, lab).as_f64();
        if !train_loss.is_finite() || train_loss > DIVERGENCE_LOSS {
            diverged = Some(Divergence {
                epoch,
                reason: format!("training loss {train_loss:e}"),
            });
            break;
        }
        let val_loss = data.validation.as_ref().map(|v| mean_loss(w, model, v).as_f64());
        let lambda = trainer.lambda().map(|l| l.as_f64());
        per_epoch.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            test: evaluate(w, model, &data.test)?,
            lambda,
            eta,
        });

        if let (Some(patience), Some(vl)) = (config.early_stop_patience, val_loss) {
            match &best {
                Some((bv, _, _, _)) if vl >= *bv => {}
                _ => best = Some((vl, epoch, w.clone(), lambda)),
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch >= patience {
                break;
            }
        }
    }

    let stop_epoch = per_epoch.len();
    let (final_w, best_epoch, final_lambda) = match best {
        Some((_, e, w, l)) => (w, e, l),
        None => (trainer.params().clone(), stop_epoch, per_epoch.last().and_then(|e| e.lambda)),
    };
    let final_metrics = if final_w.is_finite() && stop_epoch > 0 {
        Some(evaluate(&final_w, model, &data.test)?)
    } else {
        None
    };
    let record = RunRecord {
        method: config.method,
        seed: config.seed,
        config_hash: None,
        per_epoch,
        stop_epoch,
        best_epoch,
        final_params: final_w.to_f64(),
        final_metrics,
        final_lambda,
        diverged,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((record, trainer.into_ledger()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_g1_model, gen_two_group, G1Spec, SyntheticSpec, GROUP_B};
    use crate::model::population_gradient_gaussian;

    fn cfg(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            optimizer: OptimizerKind::adam(0.01),
            epochs: 30,
            batch_n: 8,
            batch_big_n: 64,
            sampling: Sampling::EpochShuffle,
            early_stop_patience: None,
            lambda0: 1.0,
            seed: 11,
        }
    }

    fn two_group() -> (DataSplit<f64>, crate::data::LinearTeacher<f64>, LossModel) {
        let d = gen_two_group(&SyntheticSpec::with_indicator(3.0, 1)).unwrap();
        let m = LossModel::squared(d.split.dim());
        (d.split.clone(), d.teacher(), m)
    }

    #[test]
    fn baseline_identities_are_bit_exact() {
        let (split, t, m) = two_group();
        for sampling in [Sampling::EpochShuffle, Sampling::FreshIid] {
            let run = |method| {
                train(&TrainConfig { sampling, ..cfg(method) }, &split, &t, &m).unwrap()
            };
            let only = run(Method::OnlyLabeled);
            let zero = run(Method::PpiPlusPlus { lambda: 0.0 });
            assert_eq!(only.per_epoch.len(), zero.per_epoch.len());
            for (a, b) in only.per_epoch.iter().zip(&zero.per_epoch) {
                assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
                assert_eq!(a.test, b.test);
            }
            assert_eq!(only.final_params, zero.final_params);
            let ppi = run(Method::Ppi);
            let one = run(Method::PpiPlusPlus { lambda: 1.0 });
            assert_eq!(ppi.per_epoch, one.per_epoch);
        }
    }

    #[test]
    fn deterministic_records() {
        let (split, t, m) = two_group();
        let c = TrainConfig {
            early_stop_patience: Some(5),
            ..cfg(Method::PpSsl)
        };
        let a = train(&c, &split, &t, &m).unwrap();
        let b = train(&c, &split, &t, &m).unwrap();
        assert_eq!(a.per_epoch, b.per_epoch);
        assert_eq!(a.final_params, b.final_params);
        assert!(a.per_epoch.iter().all(|e| e.lambda.is_some_and(|l| (0.0..=1.0).contains(&l))));
    }

    #[test]
    fn early_stopping_keeps_best_validation_epoch() {
        let (split, t, m) = two_group();
        let c = TrainConfig {
            epochs: 400,
            optimizer: OptimizerKind::adam(0.2),
            early_stop_patience: Some(3),
            ..cfg(Method::Ssl)
        };
        let r = train(&c, &split, &t, &m).unwrap();
        assert_eq!(r.stop_epoch, r.per_epoch.len());
        let best = r.per_epoch[r.best_epoch - 1].val_loss.unwrap();
        for e in &r.per_epoch[..r.best_epoch] {
            assert!(best <= e.val_loss.unwrap());
        }
        assert!(r.stop_epoch < 400, "never stopped");
        assert_eq!(r.stop_epoch - r.best_epoch, 3);
        assert_eq!(r.final_metrics.as_ref().unwrap(), &r.per_epoch[r.best_epoch - 1].test);
    }

    #[test]
    fn rejected_configs() {
        let (mut split, t, m) = two_group();
        let c = TrainConfig {
            early_stop_patience: Some(2),
            ..cfg(Method::PpSsl)
        };
        split.validation = None;
        assert!(train(&c, &split, &t, &m).is_err());
        assert!(train(&TrainConfig { lambda0: 0.0, ..cfg(Method::PpSsl) }, &split, &t, &m).is_err());
        assert!(train(&TrainConfig { epochs: 0, ..cfg(Method::PpSsl) }, &split, &t, &m).is_err());
    }

    #[test]
    fn divergence_is_marked() {
        let (split, t, m) = two_group();
        let c = TrainConfig {
            optimizer: OptimizerKind::Sgd { lr: 50.0 },
            epochs: 200,
            ..cfg(Method::OnlyLabeled)
        };
        let r = train(&c, &split, &t, &m).unwrap();
        let d = r.diverged.expect("diverged");
        assert!(d.epoch <= 200);
        assert_eq!(r.stop_epoch, d.epoch - 1);
    }

    #[test]
    fn ppssl_beats_ssl_on_biased_group() {
        // a handful of seeds; the full 100-seed comparison lives in the acceptance suite
        let mut diff = 0.0;
        for seed in 0..5 {
            let d = gen_two_group(&SyntheticSpec::with_indicator(7.0, seed)).unwrap();
            let m = LossModel::squared(d.split.dim());
            let c = |method| TrainConfig {
                optimizer: OptimizerKind::adam(0.01),
                epochs: 300,
                batch_n: 256,
                batch_big_n: 256,
                early_stop_patience: Some(10),
                seed,
                ..cfg(method)
            };
            let a = train(&c(Method::PpSsl), &d.split, &d.teacher(), &m).unwrap();
            let b = train(&c(Method::Ssl), &d.split, &d.teacher(), &m).unwrap();
            diff += b.final_metrics.unwrap().group_mse(GROUP_B).unwrap() - a.final_metrics.unwrap().group_mse(GROUP_B).unwrap();
        }
        assert!(diff > 0.0, "{diff}");
    }

    #[test]
    fn trainer_step_order() {
        // the weight step uses λ_t; the tuner then moves to λ_{t+1}
        let spec = G1Spec::new(20, 200, 1.5, 1.0, 3);
        let g1 = gen_g1_model(&spec).unwrap();
        let m = LossModel::squared(10);
        let mut tr = Trainer::new(m, Method::PpSsl, OptimizerKind::AdaGradNorm { eta0: 1.0 }, 1.0, m.zeros::<f64>()).unwrap();
        let pp = batch_gradients(&m, tr.params(), &g1.split.labeled, &g1.split.unlabeled, &g1.teacher).unwrap();
        let out = tr.step(&pp).unwrap();
        assert_eq!(out.lambda, 1.0);
        let g = pp.combined(1.0);
        let eta = 1.0 / g.norm_sq().sqrt();
        assert_eq!(out.eta, Some(eta));
        let expect = m.zeros::<f64>().axpy(-eta, &g).unwrap();
        assert_eq!(tr.params(), &expect);
        let (next, _) = tuner_init(1.0).unwrap().step(&pp).unwrap();
        assert_eq!(tr.lambda(), Some(next.lambda));
        let _ = population_gradient_gaussian(tr.params(), g1.w_star(), &g1.model.feature_cov()).unwrap();
    }
}
