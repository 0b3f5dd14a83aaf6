//! Experiment configuration files.
//!
//! A config is TOML with the sections `data`, `model`, `optimizer`, `tuner`
//! and `experiment`. Unknown keys are rejected everywhere. Defaults are
//! listed next to each field; the only environment override is
//! `PPGRAD_SEED`, which replaces the base seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ppssl_core::datagen::{CsvSchema, GroupConvention, SplitFractions};
use ppssl_core::{G1Spec, LossKind, Method, OptimizerKind, Sampling, SyntheticSpec, TrainConfig};

use crate::error::CliError;

pub const SEED_ENV: &str = "PPGRAD_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub tuner: TunerSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    /// Two-group synthetic regression.
    TwoGroup {
        /// Default 3.0.
        #[serde(default = "d_mu")]
        mu: f64,
        /// Default 10.
        #[serde(default = "d_m")]
        m: usize,
        /// Default 2000.
        #[serde(default = "d_total")]
        total: usize,
        /// Default 0.2.
        #[serde(default = "d_tau")]
        tau: f64,
        /// Default true.
        #[serde(default = "d_true")]
        group_indicator: bool,
        /// Default 1.0.
        #[serde(default = "d_one")]
        noise_std: f64,
        /// Default `bottom_clean_label`.
        #[serde(default)]
        convention: GroupConvention,
        /// Default 0.01 / 0.10 / 0.395 / 0 of the rows.
        #[serde(default)]
        fractions: SplitFractions,
    },
    /// Linear-Gaussian model with a biased, noisy linear teacher.
    G1 {
        /// Default 10.
        #[serde(default = "d_m")]
        d: usize,
        n: usize,
        big_n: usize,
        b: f64,
        sigma_zeta_sq: f64,
        /// Default 0.01.
        #[serde(default = "d_sigma_star")]
        sigma_star_sq: f64,
        /// Default 1000.
        #[serde(default = "d_holdout")]
        n_val: usize,
        /// Default 1000.
        #[serde(default = "d_holdout")]
        n_test: usize,
    },
    /// A CSV table; the teacher is trained (labeled-only) on the `pretrain`
    /// fraction, which must be positive.
    Csv {
        path: PathBuf,
        features: Vec<String>,
        target: String,
        #[serde(default)]
        group: Option<String>,
        fractions: SplitFractions,
        /// Default true; statistics come from the labeled and unlabeled rows.
        #[serde(default = "d_true")]
        standardize: bool,
    },
}

fn d_mu() -> f64 {
    3.0
}
fn d_m() -> usize {
    10
}
fn d_total() -> usize {
    2000
}
fn d_tau() -> f64 {
    0.2
}
fn d_true() -> bool {
    true
}
fn d_one() -> f64 {
    1.0
}
fn d_sigma_star() -> f64 {
    0.01
}
fn d_holdout() -> usize {
    1000
}

impl DataSection {
    pub fn synthetic_spec(&self, seed: u64) -> Option<SyntheticSpec> {
        match self {
            DataSection::TwoGroup {
                mu,
                m,
                total,
                tau,
                group_indicator,
                noise_std,
                convention,
                fractions,
            } => Some(SyntheticSpec {
                m: *m,
                total: *total,
                tau: *tau,
                mu: *mu,
                group_indicator: *group_indicator,
                noise_std: *noise_std,
                seed,
                convention: *convention,
                fractions: *fractions,
            }),
            _ => None,
        }
    }

    pub fn g1_spec(&self, seed: u64) -> Option<G1Spec> {
        match self {
            DataSection::G1 {
                d,
                n,
                big_n,
                b,
                sigma_zeta_sq,
                sigma_star_sq,
                n_val,
                n_test,
            } => Some(G1Spec {
                d: *d,
                n: *n,
                big_n: *big_n,
                b: *b,
                sigma_zeta_sq: *sigma_zeta_sq,
                sigma_star_sq: *sigma_star_sq,
                seed,
                n_val: *n_val,
                n_test: *n_test,
            }),
            _ => None,
        }
    }

    pub fn csv_schema(&self) -> Option<CsvSchema> {
        match self {
            DataSection::Csv { features, target, group, .. } => Some(CsvSchema {
                features: features.clone(),
                target: target.clone(),
                group: group.clone(),
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Squared,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Default `squared`.
    pub loss: LossName,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { loss: LossName::Squared }
    }
}

impl ModelSection {
    pub fn kind(&self) -> LossKind {
        match self.loss {
            LossName::Squared => LossKind::SquaredL2,
            LossName::Logistic => LossKind::Logistic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSection {
    AdagradNorm {
        /// Default 1.0.
        #[serde(default = "d_one")]
        eta0: f64,
    },
    Sgd {
        lr: f64,
    },
    Adam {
        /// Default 0.001.
        #[serde(default = "d_lr")]
        lr: f64,
        #[serde(default = "d_beta1")]
        beta1: f64,
        #[serde(default = "d_beta2")]
        beta2: f64,
        #[serde(default = "d_eps")]
        eps: f64,
    },
}

fn d_lr() -> f64 {
    0.001
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection::Adam {
            lr: d_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
        }
    }
}

impl OptimizerSection {
    pub fn kind(&self) -> OptimizerKind {
        match *self {
            OptimizerSection::AdagradNorm { eta0 } => OptimizerKind::AdaGradNorm { eta0 },
            OptimizerSection::Sgd { lr } => OptimizerKind::Sgd { lr },
            OptimizerSection::Adam { lr, beta1, beta2, eps } => OptimizerKind::Adam { lr, beta1, beta2, eps },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunerSection {
    /// Default 1.0.
    pub lambda0: f64,
}

impl Default for TunerSection {
    fn default() -> Self {
        Self { lambda0: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    OnlyLabeled,
    Ssl,
    Ppi,
    PpiPlusPlus,
    PpSsl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// Closed-form linear PPI++ λ from residuals of the prediction-powered
    /// least-squares fit, computed once per seed before training.
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Value(f64),
    Rule(LambdaRule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { base: u64, count: usize },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { base, count } => (0..*count as u64).map(|i| base + i).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Default `pp_ssl`.
    #[serde(default = "d_method")]
    pub method: MethodName,
    /// Required for `ppi_plus_plus`, rejected otherwise.
    #[serde(default)]
    pub lambda: Option<LambdaSpec>,
    /// Default 3000.
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// Default 256 (capped at the labeled pool).
    #[serde(default = "d_batch")]
    pub batch_n: usize,
    /// Default 256 (capped at the unlabeled pool).
    #[serde(default = "d_batch")]
    pub batch_big_n: usize,
    /// Default `epoch_shuffle`.
    #[serde(default)]
    pub sampling: Sampling,
    /// Default 10; 0 disables early stopping.
    #[serde(default = "d_patience")]
    pub early_stop_patience: usize,
    /// Default `{ base = 0, count = 1 }`.
    #[serde(default = "d_seeds")]
    pub seeds: SeedSpec,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
}

fn d_method() -> MethodName {
    MethodName::PpSsl
}
fn d_epochs() -> usize {
    3000
}
fn d_batch() -> usize {
    256
}
fn d_patience() -> usize {
    10
}
fn d_seeds() -> SeedSpec {
    SeedSpec::Range { base: 0, count: 1 }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            method: d_method(),
            lambda: None,
            epochs: d_epochs(),
            batch_n: d_batch(),
            batch_big_n: d_batch(),
            sampling: Sampling::default(),
            early_stop_patience: d_patience(),
            seeds: d_seeds(),
            diagnose: DiagnoseSection::default(),
        }
    }
}

/// Parameters of the `diagnose` subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    /// Monte-Carlo batch draws for `variance` (default 100000).
    pub draws: usize,
    /// Draws for the point-in-w constants (default 20000).
    pub const_draws: usize,
    /// Random parameter points for `variance` (default 5).
    pub points: usize,
    /// λ values for `variance` (default 0, 0.25, 0.5, 0.75, 1).
    pub lambdas: Vec<f64>,
    /// Runs for `regret` (default 20).
    pub runs: usize,
    /// Steps per `regret` run (default 1000).
    pub steps: usize,
    /// AdaGrad-Norm η₀ for `regret` (default 1.0).
    pub eta0: f64,
    /// Batch draws per sweep setting for `sweep_s4` (default 20000).
    pub sweep_draws: usize,
    /// Grid points on [0, 1] for `sweep_s4` (default 101).
    pub sweep_points: usize,
    /// Teacher errors for `dynamics_s5` (default 0.01, 0.04, 0.05).
    pub ladder: Vec<f64>,
    /// Seeds per ladder rung (default 5).
    pub ladder_seeds: usize,
    /// AdaGrad-Norm η₀ for `dynamics_s5` (default 0.1).
    pub ladder_eta0: f64,
    /// Steps for `dynamics_s5` (default 1000).
    pub ladder_steps: usize,
    /// Batch sizes for `dynamics_s5` (default 50 and 2000).
    pub ladder_n: usize,
    pub ladder_big_n: usize,
    /// Bias levels for `oracle_s6` (default 0.5, 3.0).
    pub mus: Vec<f64>,
    /// Fixed-λ grid points on [0, 1] for `oracle_s6` (default 21).
    pub oracle_points: usize,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self {
            draws: 100_000,
            const_draws: 20_000,
            points: 5,
            lambdas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            runs: 20,
            steps: 1000,
            eta0: 1.0,
            sweep_draws: 20_000,
            sweep_points: 101,
            ladder: vec![0.01, 0.04, 0.05],
            ladder_seeds: 5,
            ladder_eta0: 0.1,
            ladder_steps: 1000,
            ladder_n: 50,
            ladder_big_n: 2000,
            mus: vec![0.5, 3.0],
            oracle_points: 21,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Replaces the seed list's base with `PPGRAD_SEED` when set, then its
    /// count with `count` when given.
    pub fn apply_overrides(&mut self, count: Option<usize>) -> Result<(), CliError> {
        let seeds = self.experiment.seeds.seeds();
        let mut base = seeds.first().copied().unwrap_or(0);
        let mut n = seeds.len();
        let mut changed = false;
        if let Ok(v) = std::env::var(SEED_ENV) {
            base = v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}: `{v}` is not an unsigned integer")))?;
            changed = true;
        }
        if let Some(c) = count {
            n = c;
            changed = true;
        }
        if changed {
            self.experiment.seeds = SeedSpec::Range { base, count: n };
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: &str| Err(CliError::Config(format!("{field}: {why}")));
        let e = &self.experiment;
        match (e.method, e.lambda) {
            (MethodName::PpiPlusPlus, None) => return bad("experiment.lambda", "required for ppi_plus_plus"),
            (MethodName::PpiPlusPlus, Some(LambdaSpec::Value(l))) if !(0.0..=1.0).contains(&l) => {
                return bad("experiment.lambda", "must lie in [0, 1]")
            }
            (m, Some(_)) if m != MethodName::PpiPlusPlus => return bad("experiment.lambda", "only valid for ppi_plus_plus"),
            _ => {}
        }
        if e.seeds.seeds().is_empty() {
            return bad("experiment.seeds", "empty seed list");
        }
        match &self.data {
            DataSection::TwoGroup { .. } => {
                let spec = self.data.synthetic_spec(0).expect("two-group");
                spec.validate().map_err(|err| CliError::Config(format!("data.{err}")))?;
            }
            DataSection::G1 { .. } => {
                let spec = self.data.g1_spec(0).expect("g1");
                spec.validate().map_err(|err| CliError::Config(format!("data.{err}")))?;
            }
            DataSection::Csv { path, fractions, features, .. } => {
                if !path.is_file() {
                    return bad("data.path", &format!("{} does not exist", path.display()));
                }
                if fractions.pretrain <= 0.0 {
                    return bad("data.fractions.pretrain", "must be positive to train the teacher");
                }
                if features.is_empty() {
                    return bad("data.features", "empty");
                }
            }
        }
        if !matches!(self.model.loss, LossName::Squared) && !matches!(self.data, DataSection::Csv { .. }) {
            return bad("model.loss", "synthetic data are regression targets; use squared");
        }
        self.train_config(0, None).validate().map_err(|err| CliError::Config(err.to_string()))?;
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.experiment.seeds.seeds()
    }

    /// Core training config for `seed`; `offline_lambda` supplies the value
    /// of an `offline` λ rule.
    pub fn train_config(&self, seed: u64, offline_lambda: Option<f64>) -> TrainConfig {
        let e = &self.experiment;
        let method = match e.method {
            MethodName::OnlyLabeled => Method::OnlyLabeled,
            MethodName::Ssl => Method::Ssl,
            MethodName::Ppi => Method::Ppi,
            MethodName::PpSsl => Method::PpSsl,
            MethodName::PpiPlusPlus => Method::PpiPlusPlus {
                lambda: match e.lambda {
                    Some(LambdaSpec::Value(l)) => l,
                    _ => offline_lambda.unwrap_or(1.0),
                },
            },
        };
        TrainConfig {
            method,
            optimizer: self.optimizer.kind(),
            epochs: e.epochs,
            batch_n: e.batch_n,
            batch_big_n: e.batch_big_n,
            sampling: e.sampling,
            early_stop_patience: (e.early_stop_patience > 0).then_some(e.early_stop_patience),
            lambda0: self.tuner.lambda0,
            seed,
        }
    }

    /// First 64 bits (hex) of SHA-256 over the canonical JSON of the
    /// config with the seed list removed, so every seed of one experiment
    /// shares a hash.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.experiment.seeds = SeedSpec::List(Vec::new());
        let canon = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Default training setup (Adam 1e-3, batch 256) on two-group data with bias `mu`.
    pub fn two_group_default(mu: f64) -> Self {
        Self {
            data: DataSection::TwoGroup {
                mu,
                m: d_m(),
                total: d_total(),
                tau: d_tau(),
                group_indicator: true,
                noise_std: 1.0,
                convention: GroupConvention::default(),
                fractions: SplitFractions::default(),
            },
            model: ModelSection::default(),
            optimizer: OptimizerSection::default(),
            tuner: TunerSection::default(),
            experiment: ExperimentSection::default(),
        }
    }

    /// Linear-Gaussian defaults used by the `variance` and `regret`
    /// diagnostics.
    pub fn g1_default() -> Self {
        Self {
            data: DataSection::G1 {
                d: 10,
                n: 20,
                big_n: 200,
                b: 1.0,
                sigma_zeta_sq: 1.5,
                sigma_star_sq: 0.01,
                n_val: 1000,
                n_test: 1000,
            },
            ..Self::two_group_default(3.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse("[data]\nkind = \"two_group\"\nmu = 7.0\n").unwrap();
        assert_eq!(c, {
            let mut d = ExperimentConfig::two_group_default(7.0);
            d.experiment.seeds = d_seeds();
            d
        });
        assert_eq!(c.train_config(3, None).early_stop_patience, Some(10));
    }

    #[test]
    fn unknown_keys_rejected_in_every_section() {
        for text in [
            "[data]\nkind = \"two_group\"\nmuu = 1.0\n",
            "[data]\nkind = \"two_group\"\n[model]\nloss = \"squared\"\nextra = 1\n",
            "[data]\nkind = \"two_group\"\n[optimizer]\nkind = \"adam\"\nlearning_rate = 0.1\n",
            "[data]\nkind = \"two_group\"\n[tuner]\nlambda_0 = 1.0\n",
            "[data]\nkind = \"two_group\"\n[experiment]\nepoch = 3\n",
            "[data]\nkind = \"two_group\"\n[experiment.diagnose]\ndraw = 3\n",
            "[data]\nkind = \"two_group\"\n[extra]\n",
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = ExperimentConfig::parse("[data]\nkind = \"two_group\"\ntau = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("tau"), "{err}");
        let err = ExperimentConfig::parse("[data]\nkind = \"two_group\"\n[experiment]\nmethod = \"ppi_plus_plus\"\n").unwrap_err();
        assert!(err.to_string().contains("experiment.lambda"), "{err}");
        let err = ExperimentConfig::parse("[data]\nkind = \"two_group\"\n[experiment]\nlambda = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("experiment.lambda"), "{err}");
        let err = ExperimentConfig::parse(
            "[data]\nkind = \"csv\"\npath = \"/nonexistent.csv\"\nfeatures = [\"a\"]\ntarget = \"y\"\nfractions = { labeled = 0.1, validation = 0.1, test = 0.2, pretrain = 0.1 }\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("data.path"), "{err}");
    }

    #[test]
    fn lambda_forms() {
        let c = ExperimentConfig::parse("[data]\nkind = \"two_group\"\n[experiment]\nmethod = \"ppi_plus_plus\"\nlambda = \"offline\"\n").unwrap();
        assert_eq!(c.experiment.lambda, Some(LambdaSpec::Rule(LambdaRule::Offline)));
        assert_eq!(c.train_config(0, Some(0.3)).method, Method::PpiPlusPlus { lambda: 0.3 });
        let c = ExperimentConfig::parse("[data]\nkind = \"two_group\"\n[experiment]\nmethod = \"ppi_plus_plus\"\nlambda = 0.25\n").unwrap();
        assert_eq!(c.train_config(0, Some(0.9)).method, Method::PpiPlusPlus { lambda: 0.25 });
    }

    #[test]
    fn seed_forms_and_hash() {
        let a = ExperimentConfig::parse("[data]\nkind = \"two_group\"\n[experiment]\nseeds = [4, 9]\n").unwrap();
        assert_eq!(a.seeds(), vec![4, 9]);
        let b = ExperimentConfig::parse("[data]\nkind = \"two_group\"\n[experiment]\nseeds = { base = 5, count = 3 }\n").unwrap();
        assert_eq!(b.seeds(), vec![5, 6, 7]);
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 16);
        let c = ExperimentConfig::parse("[data]\nkind = \"two_group\"\nmu = 2.0\n").unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn g1_section_maps_to_spec() {
        let c = ExperimentConfig::parse(
            "[data]\nkind = \"g1\"\nn = 50\nbig_n = 200\nb = 0.1\nsigma_zeta_sq = 0.01\n[optimizer]\nkind = \"adagrad_norm\"\n",
        )
        .unwrap();
        let s = c.data.g1_spec(3).unwrap();
        assert_eq!((s.d, s.n, s.big_n, s.seed, s.n_test), (10, 50, 200, 3, 1000));
        assert_eq!(c.optimizer.kind(), OptimizerKind::AdaGradNorm { eta0: 1.0 });
    }
}
