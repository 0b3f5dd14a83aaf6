//! Monte-Carlo oracles and sweeps over the linear-Gaussian model and the
//! two-group synthetic data.
//!
//! Draws are shared wherever several quantities are compared (several `w`,
//! several λ, several teachers): each batch and its teacher labels are
//! produced once and reused, so differences between the compared
//! quantities are not swamped by independent sampling noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{NoisyLinearTeacher, Teacher};
use crate::datagen::{gen_two_group, GaussianLinearModel, G1Spec, SyntheticSpec, GROUP_A, GROUP_B};
use crate::error::{Error, Result};
use crate::model::{LossModel, ParamVector};
use crate::optim::OptimizerKind;
use crate::pp_gradients::{batch_gradients_with_pseudo, pseudo_labels, PPGradient};
use crate::rng::{StreamKey, StreamRole};
use crate::stats::{mean_se, MeanSe, PairedTraceMoments, VectorWelford, JACKKNIFE_BLOCKS};
use crate::theory::{estimate_constants, lambda_star, variance_bound, GaussianStream, VarianceConstants};
use crate::trainer::{train, Method, TrainConfig, Trainer};
use crate::tuner::{regret_against, RegretLedger};

/// Smallest draw count accepted by [`gradient_audit`].
pub const MIN_VARIANCE_DRAWS: usize = 10_000;

/// The four `(N, σ_ζ², b)` settings of the variance sweep, all with
/// `d = 10`, `n = 50`, `σ*² = 0.01`.
pub const SWEEP_SETTINGS: [(usize, f64, f64); 4] = [(2000, 0.01, 0.1), (2000, 1.5, 1.0), (200, 0.01, 0.1), (200, 1.5, 1.0)];

/// `count` parameter vectors with weights and bias drawn from `N(0, 1)`.
pub fn random_points(dim: usize, count: usize, key: StreamKey) -> Vec<ParamVector<f64>> {
    let mut rng = key.rng(StreamRole::Init);
    (0..count)
        .map(|_| {
            let w: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            ParamVector::new(w, rng.sample(StandardNormal))
        })
        .collect()
}

/// Fresh-batch sampling from the linear-Gaussian model.
#[derive(Clone, Copy)]
pub struct FreshSetup<'a> {
    pub model: &'a GaussianLinearModel,
    pub teacher: &'a dyn Teacher<f64>,
    pub n: usize,
    pub big_n: usize,
}

impl FreshSetup<'_> {
    pub fn loss(&self) -> LossModel {
        LossModel::squared(self.model.dim())
    }

    pub fn ratio(&self) -> f64 {
        self.n as f64 / self.big_n as f64
    }
}

/// One labelled and one unlabelled batch with teacher outputs, reusable at
/// any `w`.
pub struct Draw {
    pub labeled: crate::data::LabeledBatch<f64>,
    pub unlabeled: crate::data::UnlabeledBatch<f64>,
    pub labeled_pseudo: Vec<f64>,
    pub unlabeled_pseudo: Vec<f64>,
}

impl Draw {
    pub fn sample<R: Rng>(setup: &FreshSetup<'_>, rng: &mut R) -> Result<Self> {
        let labeled = setup.model.sample_labeled(rng, setup.n);
        let unlabeled = setup.model.sample_unlabeled(rng, setup.big_n);
        Ok(Self {
            labeled_pseudo: pseudo_labels(setup.teacher, labeled.rows(), "labeled")?,
            unlabeled_pseudo: pseudo_labels(setup.teacher, unlabeled.rows(), "unlabeled")?,
            labeled,
            unlabeled,
        })
    }

    pub fn gradients(&self, model: &LossModel, w: &ParamVector<f64>) -> Result<PPGradient<f64>> {
        batch_gradients_with_pseudo(model, w, &self.labeled, &self.labeled_pseudo, &self.unlabeled, &self.unlabeled_pseudo)
    }
}

/// Which stochastic gradient an unbiasedness check is run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    PredictionPowered,
    /// `g^n + g̃^{N,f}`, expected to be biased for an imperfect teacher.
    Ssl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbiasEntry {
    pub w_index: usize,
    pub estimator: Estimator,
    /// `None` for the SSL estimator.
    pub lambda: Option<f64>,
    /// Largest `|mean − ∇L(w)| / SE` over coordinates.
    pub max_abs_z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub w_index: usize,
    pub lambda: f64,
    /// `E‖g^λ − ∇L(w)‖²` over the draws.
    pub measured_variance: f64,
    pub measured_se: f64,
    pub bound_value: f64,
    pub constants: VarianceConstants,
    pub pass: bool,
}

/// Accumulated Monte-Carlo moments for several `w` over shared draws.
pub struct GradientAudit {
    pub draws: usize,
    pub ws: Vec<ParamVector<f64>>,
    pub population: Vec<ParamVector<f64>>,
    pub lambdas: Vec<f64>,
    means: Vec<Vec<VectorWelford>>,
    ssl_means: Vec<VectorWelford>,
    moments: Vec<PairedTraceMoments>,
}

/// Runs `k` fresh draws and accumulates, for every `w`, the per-coordinate
/// moments of `g^λ` (each λ), of the SSL gradient, and the centred trace
/// moments of `(g^n, d_f)`.
pub fn gradient_audit(setup: &FreshSetup<'_>, ws: &[ParamVector<f64>], lambdas: &[f64], k: usize, key: StreamKey) -> Result<GradientAudit> {
    if k < MIN_VARIANCE_DRAWS {
        return Err(Error::invalid("K", format!("{k} draws; need at least {MIN_VARIANCE_DRAWS}")));
    }
    let model = setup.loss();
    let cov = setup.model.feature_cov();
    let population: Vec<ParamVector<f64>> = ws
        .iter()
        .map(|w| crate::model::population_gradient_gaussian(w, &setup.model.w_star, &cov))
        .collect::<Result<_>>()?;
    let p = model.param_len();
    let mut means = vec![vec![VectorWelford::new(p); lambdas.len()]; ws.len()];
    let mut ssl_means = vec![VectorWelford::new(p); ws.len()];
    let mut moments: Vec<PairedTraceMoments> = population
        .iter()
        .map(|g| PairedTraceMoments::new(p, JACKKNIFE_BLOCKS, Some(g.coeffs().to_vec())))
        .collect();
    let mut rng = key.rng(StreamRole::MonteCarlo);
    for _ in 0..k {
        let draw = Draw::sample(setup, &mut rng)?;
        for (i, w) in ws.iter().enumerate() {
            let pp = draw.gradients(&model, w)?;
            for (j, &l) in lambdas.iter().enumerate() {
                means[i][j].push(pp.combined(l).coeffs());
            }
            ssl_means[i].push(pp.ssl_gradient().coeffs());
            moments[i].push(pp.g_labeled.coeffs(), pp.d_f.coeffs());
        }
    }
    Ok(GradientAudit {
        draws: k,
        ws: ws.to_vec(),
        population,
        lambdas: lambdas.to_vec(),
        means,
        ssl_means,
        moments,
    })
}

fn max_z(acc: &VectorWelford, target: &[f64]) -> f64 {
    acc.summaries()
        .iter()
        .zip(target)
        .map(|(s, &t)| {
            let dev = (s.mean - t).abs();
            if s.se > 0.0 {
                dev / s.se
            } else if dev == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

impl GradientAudit {
    /// Per-coordinate `|mean − ∇L(w)| ≤ 3 SE` for every `(w, λ)`, plus the
    /// same check on the SSL gradient (reported, expected to fail when the
    /// teacher is biased).
    pub fn unbiasedness(&self) -> Vec<UnbiasEntry> {
        let mut out = Vec::new();
        for (i, pop) in self.population.iter().enumerate() {
            for (j, &l) in self.lambdas.iter().enumerate() {
                let z = max_z(&self.means[i][j], pop.coeffs());
                out.push(UnbiasEntry {
                    w_index: i,
                    estimator: Estimator::PredictionPowered,
                    lambda: Some(l),
                    max_abs_z: z,
                    pass: z <= 3.0,
                });
            }
            let z = max_z(&self.ssl_means[i], pop.coeffs());
            out.push(UnbiasEntry {
                w_index: i,
                estimator: Estimator::Ssl,
                lambda: None,
                max_abs_z: z,
                pass: z <= 3.0,
            });
        }
        out
    }

    /// `E‖g^λ − ∇L(w)‖²` and its jackknife SE.
    pub fn measured_variance(&self, w_index: usize, lambda: f64) -> (f64, f64) {
        self.moments[w_index].estimate(lambda)
    }

    /// Pairs each measured variance with the bound at constants estimated
    /// at the same `w` from `k_const` fresh draws.
    pub fn variance_reports(&self, setup: &FreshSetup<'_>, lambdas: &[f64], k_const: usize, key: StreamKey) -> Result<Vec<VarianceReport>> {
        let model = setup.loss();
        let mut out = Vec::new();
        for (i, w) in self.ws.iter().enumerate() {
            let mut stream = GaussianStream {
                model: setup.model,
                rng: key.child(i as u64).rng(StreamRole::MonteCarlo),
            };
            let c = estimate_constants(&model, w, setup.teacher, &mut stream, k_const, setup.n, setup.big_n)?;
            for &l in lambdas {
                let (m, se) = self.measured_variance(i, l);
                let bound = variance_bound(&c, setup.n, l);
                out.push(VarianceReport {
                    w_index: i,
                    lambda: l,
                    measured_variance: m,
                    measured_se: se,
                    bound_value: bound,
                    constants: c.clone(),
                    pass: m <= bound + 3.0 * se,
                });
            }
        }
        Ok(out)
    }
}

/// Single-`w` convenience wrapper around [`gradient_audit`].
pub fn mc_variance(
    setup: &FreshSetup<'_>,
    w: &ParamVector<f64>,
    lambdas: &[f64],
    k: usize,
    k_const: usize,
    key: StreamKey,
) -> Result<Vec<VarianceReport>> {
    let audit = gradient_audit(setup, std::slice::from_ref(w), lambdas, k, key)?;
    audit.variance_reports(setup, lambdas, k_const, key.child(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    pub metric_per_lambda: Vec<f64>,
    pub argmin_lambda: f64,
    pub adaptive_metric: Option<f64>,
    pub adaptive_final_lambda: Option<f64>,
}

impl SweepResult {
    pub fn new(grid: Vec<f64>, metric: Vec<f64>) -> Result<Self> {
        if grid.len() != metric.len() || grid.is_empty() {
            return Err(Error::invalid("grid", "metric must match a non-empty grid"));
        }
        if grid.windows(2).any(|p| p[0] >= p[1]) || grid[0] < 0.0 || grid[grid.len() - 1] > 1.0 {
            return Err(Error::invalid("grid", "must be strictly increasing within [0, 1]"));
        }
        let best = (0..grid.len()).min_by(|&a, &b| metric[a].total_cmp(&metric[b])).expect("non-empty");
        Ok(Self {
            argmin_lambda: grid[best],
            grid,
            metric_per_lambda: metric,
            adaptive_metric: None,
            adaptive_final_lambda: None,
        })
    }

    pub fn min_metric(&self) -> f64 {
        self.metric_per_lambda.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `k` points evenly spaced on `[0, 1]` with step `1/(k−1)`.
pub fn uniform_grid(points: usize) -> Vec<f64> {
    (0..points).map(|i| i as f64 / (points - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub spec: G1Spec,
    pub sweep: SweepResult,
    /// Jackknife SE of each grid variance.
    pub metric_se: Vec<f64>,
    pub constants: VarianceConstants,
    pub lambda_theory: f64,
    pub var_theory: f64,
    pub lambda_practice: f64,
    pub var_practice: f64,
    pub test_w: Vec<f64>,
    /// Midpoint convexity of the variance curve with 3 SE slack.
    pub convex: bool,
}

/// Gradient variance over a λ grid at a random test point `w̃ ~ N(0, I)`,
/// with λ* from constants estimated at the same point.
pub fn lambda_sweep_variance(spec: &G1Spec, grid: &[f64], k: usize, k_const: usize) -> Result<SweepReport> {
    if grid.len() < 21 {
        return Err(Error::invalid("grid", "need at least 21 points"));
    }
    let data = crate::datagen::gen_g1_model(spec)?;
    let key = StreamKey::new(spec.seed, 1);
    let mut init = key.rng(StreamRole::Init);
    let test_w = ParamVector::new((0..spec.d).map(|_| init.sample::<f64, _>(StandardNormal)).collect(), 0.0);
    let setup = FreshSetup {
        model: &data.model,
        teacher: &data.teacher,
        n: spec.n,
        big_n: spec.big_n,
    };
    let audit = gradient_audit(&setup, std::slice::from_ref(&test_w), &[], k, key)?;
    let mut stream = GaussianStream {
        model: &data.model,
        rng: key.child(1).rng(StreamRole::MonteCarlo),
    };
    let constants = estimate_constants(&setup.loss(), &test_w, &data.teacher, &mut stream, k_const, spec.n, spec.big_n)?;
    let lt = lambda_star(&constants)?;
    let (metric, metric_se): (Vec<f64>, Vec<f64>) = grid.iter().map(|&l| audit.measured_variance(0, l)).unzip();
    let sweep = SweepResult::new(grid.to_vec(), metric.clone())?;
    let var_practice = sweep.min_metric();
    let convex = (1..grid.len() - 1).all(|i| {
        let slack = 3.0 * (metric_se[i - 1] + 2.0 * metric_se[i] + metric_se[i + 1]) / 2.0;
        metric[i] <= 0.5 * (metric[i - 1] + metric[i + 1]) + slack
    });
    Ok(SweepReport {
        spec: spec.clone(),
        lambda_practice: sweep.argmin_lambda,
        sweep,
        metric_se,
        var_theory: audit.measured_variance(0, lt).0,
        lambda_theory: lt,
        var_practice,
        constants,
        test_w: test_w.to_f64(),
        convex,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreshRunConfig {
    pub n: usize,
    pub big_n: usize,
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub method: Method,
    pub lambda0: f64,
}

#[derive(Debug, Clone)]
pub struct FreshRunOutput {
    /// `λ_t` for `t = 0..=steps`; `λ_0` first.
    pub lambdas: Vec<f64>,
    /// `‖∇L(w_t)‖²` for `t = 0..steps` (before each update).
    pub grad_norms_sq: Vec<f64>,
    pub ledger: Option<RegretLedger<f64>>,
    pub final_w: ParamVector<f64>,
}

/// PP-SSL training with the online tuner on fresh i.i.d. batches from the Gaussian model,
/// starting at `w = 0`.
pub fn fresh_run(
    model: &GaussianLinearModel,
    teacher: &dyn Teacher<f64>,
    cfg: &FreshRunConfig,
    keep_ledger: bool,
    key: StreamKey,
) -> Result<FreshRunOutput> {
    let loss = LossModel::squared(model.dim());
    let mut trainer = Trainer::new(loss, cfg.method, cfg.optimizer, cfg.lambda0, loss.zeros::<f64>())?;
    if keep_ledger {
        trainer = trainer.with_ledger(true);
    }
    let setup = FreshSetup {
        model,
        teacher,
        n: cfg.n,
        big_n: cfg.big_n,
    };
    let mut rng = key.rng(StreamRole::Batches);
    let mut lambdas = vec![trainer.lambda().unwrap_or(f64::NAN)];
    let mut grad_norms_sq = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        grad_norms_sq.push(model.population_gradient(trainer.params()).norm_sq());
        let draw = Draw::sample(&setup, &mut rng)?;
        let pp = draw.gradients(&loss, trainer.params())?;
        trainer.step(&pp)?;
        lambdas.push(trainer.lambda().unwrap_or(f64::NAN));
    }
    Ok(FreshRunOutput {
        lambdas,
        grad_norms_sq,
        final_w: trainer.params().clone(),
        ledger: trainer.into_ledger(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretAuditReport {
    pub rounds: usize,
    pub max_regret: f64,
    pub argmax_lambda: f64,
    /// `√(2 Σ_t h_t'(λ_t)²)`.
    pub bound: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Regret against every λ on a 1001-point grid versus the AdaGrad bound.
pub fn regret_audit(ledger: &RegretLedger<f64>) -> Result<RegretAuditReport> {
    if !ledger.has_closures() {
        return Err(Error::invalid("ledger", "recorded without (g, d) closures"));
    }
    let mut max_regret = f64::NEG_INFINITY;
    let mut arg = 0.0;
    for l in uniform_grid(1001) {
        let r = regret_against(ledger, l)?;
        if r > max_regret {
            max_regret = r;
            arg = l;
        }
    }
    let bound = ledger.regret_bound();
    let tolerance = 1e-9 * ledger.len() as f64;
    Ok(RegretAuditReport {
        rounds: ledger.len(),
        max_regret,
        argmax_lambda: arg,
        bound,
        tolerance,
        pass: max_regret <= bound + tolerance,
    })
}

/// A teacher of target error `E^f` on the G1 model: the excess over the
/// label noise is split evenly between the squared bias `b²` and `σ_ζ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub target_error: f64,
    pub b: f64,
    pub sigma_zeta_sq: f64,
}

impl LadderRung {
    pub fn for_error(target_error: f64, sigma_star_sq: f64) -> Result<Self> {
        let excess = target_error - sigma_star_sq;
        if excess < -1e-15 {
            return Err(Error::invalid("target_error", "below the label-noise floor"));
        }
        let half = excess.max(0.0) / 2.0;
        Ok(Self {
            target_error,
            b: half.sqrt(),
            sigma_zeta_sq: half,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub d: usize,
    pub n: usize,
    pub big_n: usize,
    pub sigma_star_sq: f64,
    pub steps: usize,
    pub lambda0: f64,
    pub eta0: f64,
    pub checkpoint_every: usize,
    pub seeds: Vec<u64>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            d: 10,
            n: 50,
            big_n: 2000,
            sigma_star_sq: 0.01,
            steps: 1000,
            lambda0: 1.0,
            eta0: 1.0,
            checkpoint_every: 100,
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRow {
    pub rung: LadderRung,
    pub checkpoints: Vec<usize>,
    /// Seed-averaged λ at each checkpoint.
    pub mean_lambda: Vec<f64>,
    pub per_seed_final: Vec<f64>,
    /// λ* from constants estimated at the start point `w = 0`.
    pub lambda_theory_at_start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub config: DynamicsConfig,
    pub rows: Vec<DynamicsRow>,
    /// Final mean λ strictly decreases as the teacher error grows.
    pub strictly_decreasing: bool,
}

/// λ trajectories of PP-SSL with AdaGrad-Norm on fresh G1 batches, one row
/// per teacher error. Every rung reuses each seed's `w*`, batches and
/// teacher-noise key.
pub fn lambda_dynamics_trace(errors: &[f64], cfg: &DynamicsConfig) -> Result<DynamicsReport> {
    if !(cfg.lambda0 > 0.0 && cfg.lambda0 <= 1.0) {
        return Err(Error::invalid("lambda0", "must lie in (0, 1]"));
    }
    if cfg.seeds.is_empty() || cfg.checkpoint_every == 0 {
        return Err(Error::invalid("seeds", "need at least one seed and a positive checkpoint interval"));
    }
    let checkpoints: Vec<usize> = (0..=cfg.steps).step_by(cfg.checkpoint_every).collect();
    let mut rows = Vec::new();
    for &e in errors {
        let rung = LadderRung::for_error(e, cfg.sigma_star_sq)?;
        let mut sums = vec![0.0; checkpoints.len()];
        let mut finals = Vec::new();
        let mut lt = Vec::new();
        for &seed in &cfg.seeds {
            let spec = G1Spec {
                d: cfg.d,
                n: cfg.n,
                big_n: cfg.big_n,
                b: rung.b,
                sigma_zeta_sq: rung.sigma_zeta_sq,
                sigma_star_sq: cfg.sigma_star_sq,
                seed,
                n_val: 0,
                n_test: 1,
            };
            let data = crate::datagen::gen_g1_model(&spec)?;
            let run_cfg = FreshRunConfig {
                n: cfg.n,
                big_n: cfg.big_n,
                steps: cfg.steps,
                optimizer: OptimizerKind::AdaGradNorm { eta0: cfg.eta0 },
                method: Method::PpSsl,
                lambda0: cfg.lambda0,
            };
            let key = StreamKey::new(seed, 2);
            let out = fresh_run(&data.model, &data.teacher, &run_cfg, false, key)?;
            for (s, &c) in sums.iter_mut().zip(&checkpoints) {
                *s += out.lambdas[c];
            }
            finals.push(out.lambdas[cfg.steps]);
            let mut stream = GaussianStream {
                model: &data.model,
                rng: key.rng(StreamRole::MonteCarlo),
            };
            let zero = ParamVector::zeros(cfg.d, 1);
            let c = estimate_constants(&LossModel::squared(cfg.d), &zero, &data.teacher, &mut stream, 5000, cfg.n, cfg.big_n)?;
            lt.push(lambda_star(&c)?);
        }
        let k = cfg.seeds.len() as f64;
        rows.push(DynamicsRow {
            rung,
            checkpoints: checkpoints.clone(),
            mean_lambda: sums.iter().map(|s| s / k).collect(),
            per_seed_final: finals,
            lambda_theory_at_start: lt.iter().sum::<f64>() / k,
        });
    }
    let finals: Vec<f64> = rows.iter().map(|r| *r.mean_lambda.last().expect("checkpoints")).collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| errors[a].total_cmp(&errors[b]));
    let strictly_decreasing = order.windows(2).all(|p| finals[p[0]] > finals[p[1]]);
    Ok(DynamicsReport {
        config: cfg.clone(),
        rows,
        strictly_decreasing,
    })
}

/// Group-wise test MSE summary of one method over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    pub total: MeanSe,
    pub group_a: MeanSe,
    pub group_b: MeanSe,
    /// Seed-averaged final λ, where the method has one.
    pub lambda: Option<f64>,
    pub runs: usize,
    pub diverged: usize,
}

/// Trains `method` on each seed's two-group dataset and summarises the
/// final test MSE; diverged runs are excluded and counted.
pub fn multi_seed_mse(spec: &SyntheticSpec, cfg: &TrainConfig, method: Method, seeds: &[u64]) -> Result<MseSummary> {
    let mut total = Vec::new();
    let mut ga = Vec::new();
    let mut gb = Vec::new();
    let mut lambdas = Vec::new();
    let mut diverged = 0;
    for &seed in seeds {
        let data = gen_two_group(&SyntheticSpec { seed, ..spec.clone() })?;
        let model = LossModel::squared(data.split.dim());
        let run_cfg = TrainConfig {
            method,
            seed,
            ..cfg.clone()
        };
        let rec = train(&run_cfg, &data.split, &data.teacher(), &model)?;
        match (&rec.diverged, &rec.final_metrics) {
            (None, Some(m)) => {
                total.push(m.overall.mse.unwrap_or(f64::NAN));
                ga.push(m.group_mse(GROUP_A).unwrap_or(f64::NAN));
                gb.push(m.group_mse(GROUP_B).unwrap_or(f64::NAN));
                if let Some(l) = rec.final_lambda {
                    lambdas.push(l);
                }
            }
            _ => diverged += 1,
        }
    }
    let clean = |v: Vec<f64>| v.into_iter().filter(|x| x.is_finite()).collect::<Vec<_>>();
    Ok(MseSummary {
        total: mean_se(&clean(total)),
        group_a: mean_se(&clean(ga)),
        group_b: mean_se(&clean(gb)),
        lambda: (!lambdas.is_empty()).then(|| lambdas.iter().sum::<f64>() / lambdas.len() as f64),
        runs: seeds.len() - diverged,
        diverged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub mu: f64,
    pub sweep: SweepResult,
    pub oracle: MseSummary,
    pub adaptive: MseSummary,
    pub fixed: Vec<MseSummary>,
}

/// Fixed-λ PPI++ over `grid` against PP-SSL, per bias level.
pub fn adaptive_vs_fixed(spec: &SyntheticSpec, mus: &[f64], grid: &[f64], cfg: &TrainConfig, seeds: &[u64]) -> Result<Vec<OracleRow>> {
    let mut rows = Vec::new();
    for &mu in mus {
        let s = SyntheticSpec { mu, ..spec.clone() };
        let fixed: Vec<MseSummary> = grid
            .iter()
            .map(|&l| multi_seed_mse(&s, cfg, Method::PpiPlusPlus { lambda: l }, seeds))
            .collect::<Result<_>>()?;
        let adaptive = multi_seed_mse(&s, cfg, Method::PpSsl, seeds)?;
        let mut sweep = SweepResult::new(grid.to_vec(), fixed.iter().map(|f| f.total.mean).collect())?;
        sweep.adaptive_metric = Some(adaptive.total.mean);
        sweep.adaptive_final_lambda = adaptive.lambda;
        let best = grid.iter().position(|&l| l == sweep.argmin_lambda).expect("argmin is a grid point");
        rows.push(OracleRow {
            mu,
            oracle: fixed[best],
            sweep,
            adaptive,
            fixed,
        });
    }
    Ok(rows)
}

/// A noisy-linear G1 teacher for a ladder rung around `w*`.
pub fn ladder_teacher(w_star: &ParamVector<f64>, rung: &LadderRung, key: StreamKey) -> NoisyLinearTeacher<f64> {
    let mut tw = w_star.clone();
    tw.coeffs_mut()[0] += rung.b;
    NoisyLinearTeacher::new(tw, rung.sigma_zeta_sq.sqrt(), key.noise_key(StreamRole::TeacherNoise))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LinearTeacher;
    use crate::datagen::gen_g1_model;

    fn small_model() -> GaussianLinearModel {
        GaussianLinearModel {
            w_star: ParamVector::new(vec![1.0, -0.5, 0.25], 0.0),
            noise_var: 0.1,
        }
    }

    #[test]
    fn audit_detects_bias_and_measures_variance() {
        let gm = small_model();
        let mut tw = gm.w_star.clone();
        tw.coeffs_mut()[0] += 1.0;
        let teacher = LinearTeacher::new(tw);
        let setup = FreshSetup {
            model: &gm,
            teacher: &teacher,
            n: 10,
            big_n: 50,
        };
        let ws = vec![ParamVector::new(vec![0.0, 0.0, 0.0], 0.5)];
        let audit = gradient_audit(&setup, &ws, &[0.0, 1.0], 10_000, StreamKey::new(1, 0)).unwrap();
        let entries = audit.unbiasedness();
        assert!(entries.iter().filter(|e| e.estimator == Estimator::PredictionPowered).all(|e| e.pass));
        assert!(entries.iter().any(|e| e.estimator == Estimator::Ssl && !e.pass));
        // λ = 0: E‖g^n − ∇L‖² = tr Cov(∇ℓ)/n
        let mut stream = GaussianStream {
            model: &gm,
            rng: StreamKey::new(9, 0).rng(StreamRole::MonteCarlo),
        };
        let c = estimate_constants(&setup.loss(), &ws[0], &teacher, &mut stream, 50_000, 10, 50).unwrap();
        let (v0, se0) = audit.measured_variance(0, 0.0);
        let expect = c.sigma_sq / 10.0;
        let se_c = c.meta.unwrap().sigma_sq_se / 10.0;
        assert!((v0 - expect).abs() <= 3.0 * (se0 * se0 + se_c * se_c).sqrt(), "{v0} vs {expect}");
        let reports = audit.variance_reports(&setup, &[0.0, 1.0], 5000, StreamKey::new(2, 0)).unwrap();
        assert!(reports.iter().all(|r| r.pass));
        assert!(gradient_audit(&setup, &ws, &[0.0], 100, StreamKey::new(1, 0)).is_err());
    }

    #[test]
    fn perfect_teacher_sweep_minimum_near_linear_formula() {
        // teacher = truth on every input: ε_f = ε, so the variance minimiser is 1/(1+r)
        let spec = G1Spec::new(50, 200, 0.0, 0.0, 5);
        let rep = lambda_sweep_variance(&G1Spec { sigma_star_sq: 0.0, ..spec }, &uniform_grid(101), 10_000, 2000).unwrap();
        assert!((rep.lambda_practice - 1.0 / 1.25).abs() <= 0.011, "{}", rep.lambda_practice);
        assert!(rep.convex);
    }

    #[test]
    fn regret_audit_on_short_run() {
        let spec = G1Spec::new(20, 200, 1.5, 1.0, 2);
        let data = gen_g1_model(&spec).unwrap();
        let cfg = FreshRunConfig {
            n: 20,
            big_n: 200,
            steps: 100,
            optimizer: OptimizerKind::AdaGradNorm { eta0: 1.0 },
            method: Method::PpSsl,
            lambda0: 1.0,
        };
        let out = fresh_run(&data.model, &data.teacher, &cfg, true, StreamKey::new(1, 0)).unwrap();
        assert_eq!(out.lambdas.len(), 101);
        let rep = regret_audit(out.ledger.as_ref().unwrap()).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(regret_audit(&RegretLedger::new(false)).is_err());
    }

    #[test]
    fn ladder_construction() {
        let r = LadderRung::for_error(0.05, 0.01).unwrap();
        assert!((r.b * r.b + r.sigma_zeta_sq + 0.01 - 0.05).abs() < 1e-15);
        let p = LadderRung::for_error(0.01, 0.01).unwrap();
        assert_eq!((p.b, p.sigma_zeta_sq), (0.0, 0.0));
        assert!(LadderRung::for_error(0.001, 0.01).is_err());
    }

    #[test]
    fn sweep_result_validation() {
        assert!(SweepResult::new(vec![0.0, 0.5, 0.5], vec![1.0, 2.0, 3.0]).is_err());
        let s = SweepResult::new(vec![0.0, 0.5, 1.0], vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.argmin_lambda, 0.5);
    }
}
