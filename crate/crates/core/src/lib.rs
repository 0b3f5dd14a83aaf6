//! Prediction-powered semi-supervised learning.
//!
//! Gradients mix a small labelled batch with teacher pseudo-labels on a
//! large unlabelled batch, `g^λ = g^n + λ (g̃^{N,f} − g^{n,f})`, which stays
//! unbiased for every λ. λ is tuned online by projected AdaGrad on
//! `h(λ) = ‖g^λ‖²`, and the weights move with AdaGrad-Norm, SGD or Adam.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64` aliases below name the usual instantiation.

pub mod data;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pp_gradients;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod theory;
pub mod trainer;
pub mod tuner;

pub use data::{FnTeacher, LabeledBatch, LinearTeacher, ModelTeacher, NoisyLinearTeacher, Teacher, UnlabeledBatch};
pub use datagen::{gen_g1_model, gen_two_group, DataSplit, G1Spec, GaussianLinearModel, SyntheticSpec};
pub use error::{Error, Result};
pub use metrics::{evaluate, MetricsRecord};
pub use model::{Gradient, LossKind, LossModel, ParamVector};
pub use optim::{step_weights, OptimizerKind, OptimizerState};
pub use pp_gradients::{batch_gradients, h_derivative, h_value, PPGradient};
pub use rng::{StreamKey, StreamRole};
pub use scalar::Scalar;
pub use theory::{lambda_star, variance_bound, ResidualStats, VarianceConstants};
pub use trainer::{train, Method, RunRecord, Sampling, TrainConfig, Trainer};
pub use tuner::{regret_against, tuner_init, tuner_step, RegretLedger, TunerState};

pub type ParamVectorF64 = ParamVector<f64>;
pub type ParamVectorF32 = ParamVector<f32>;
pub type GradientF64 = Gradient<f64>;
pub type LabeledBatchF64 = LabeledBatch<f64>;
pub type UnlabeledBatchF64 = UnlabeledBatch<f64>;
pub type PPGradientF64 = PPGradient<f64>;
pub type PPGradientF32 = PPGradient<f32>;
pub type TunerStateF64 = TunerState<f64>;
pub type TunerStateF32 = TunerState<f32>;
pub type RegretLedgerF64 = RegretLedger<f64>;
pub type OptimizerStateF64 = OptimizerState<f64>;
pub type TrainerF64 = Trainer<f64>;
pub type TrainerF32 = Trainer<f32>;
pub type DataSplitF64 = DataSplit<f64>;
