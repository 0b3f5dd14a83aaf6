//! The acceptance suite: twelve checks, each with a runtime budget.
//!
//! Every check uses fixed seeds chosen before looking at outcomes. A check
//! passes only if its inequality holds and it finished within budget.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use ppssl_core::datagen::{gen_two_group, GaussianLinearModel};
use ppssl_core::diagnostics::{
    adaptive_vs_fixed, fresh_run, gradient_audit, lambda_dynamics_trace, lambda_sweep_variance, multi_seed_mse, random_points,
    regret_audit, uniform_grid, DynamicsConfig, Estimator, FreshRunConfig, FreshSetup, SWEEP_SETTINGS,
};
use ppssl_core::model::augmented_feature_norm;
use ppssl_core::theory::{lemma1_check, offline_ppi_lambda, GaussianStream, Lemma1Verdict, ReplayStream, SampleStream};
use ppssl_core::{
    gen_g1_model, lambda_star, train, variance_bound, G1Spec, LabeledBatch, LossModel, Method, OptimizerKind, RunRecord, Sampling,
    StreamKey, StreamRole, SyntheticSpec, TrainConfig, VarianceConstants,
};

use crate::config::{ExperimentConfig, LambdaSpec, MethodName, SeedSpec};
use crate::error::CliError;

pub const CRITERIA: [(u32, &str, f64); 12] = [
    (1, "unbiasedness", 120.0),
    (2, "variance bound", 180.0),
    (3, "lambda* is the grid argmin", 1.0),
    (4, "theory vs practice lambda sweep", 300.0),
    (5, "regret audit", 120.0),
    (6, "lambda dynamics ladder", 180.0),
    (7, "adaptive vs best fixed lambda", 900.0),
    (8, "group-B ordering", 1200.0),
    (9, "baseline identities", 10.0),
    (10, "teacher-error bound on sigma_e^2", 120.0),
    (11, "gradient norm decay", 120.0),
    (12, "train determinism", 60.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    /// The inequality held and the budget was met.
    pub pass: bool,
    pub check_pass: bool,
    pub detail: String,
    pub elapsed_secs: f64,
    pub budget_secs: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:02} {} ({:.1}s / {:.0}s): {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed_secs,
            self.budget_secs,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scoreboard {
    pub criteria: Vec<CriterionResult>,
    pub passed: usize,
    pub failed: Vec<u32>,
}

impl Scoreboard {
    pub fn new(criteria: Vec<CriterionResult>) -> Self {
        Self {
            passed: criteria.iter().filter(|c| c.pass).count(),
            failed: criteria.iter().filter(|c| !c.pass).map(|c| c.id).collect(),
            criteria,
        }
    }
}

type Check = Result<(bool, String), CliError>;

/// G1 setting shared by the unbiasedness, bound, regret and decay checks.
fn base_g1(seed: u64) -> G1Spec {
    G1Spec::new(20, 200, 1.5, 1.0, seed)
}

fn c1_unbiasedness() -> Check {
    let spec = base_g1(101);
    let data = gen_g1_model(&spec)?;
    let setup = FreshSetup {
        model: &data.model,
        teacher: &data.teacher,
        n: spec.n,
        big_n: spec.big_n,
    };
    let key = StreamKey::new(101, 1);
    let ws = random_points(spec.d, 5, key);
    let entries = gradient_audit(&setup, &ws, &[0.0, 0.5, 1.0], 100_000, key)?.unbiasedness();
    let pp: Vec<_> = entries.iter().filter(|e| e.estimator == Estimator::PredictionPowered).collect();
    let worst = pp.iter().map(|e| e.max_abs_z).fold(0.0, f64::max);
    let failures = pp.iter().filter(|e| !e.pass).count();
    let ssl_min = entries
        .iter()
        .filter(|e| e.estimator == Estimator::Ssl)
        .map(|e| e.max_abs_z)
        .fold(f64::INFINITY, f64::min);
    // negative control: the undebiased SSL gradient must be flagged at every w
    let control = ssl_min > 3.0;
    Ok((
        failures == 0 && control,
        format!("{} (w, lambda) cells, {failures} beyond 3 SE, worst |z| = {worst:.2}; SSL control min |z| = {ssl_min:.1}", pp.len()),
    ))
}

fn c2_variance_bound() -> Check {
    let spec = base_g1(202);
    let data = gen_g1_model(&spec)?;
    let setup = FreshSetup {
        model: &data.model,
        teacher: &data.teacher,
        n: spec.n,
        big_n: spec.big_n,
    };
    let key = StreamKey::new(202, 1);
    let lambdas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let ws = random_points(spec.d, 5, key);
    let audit = gradient_audit(&setup, &ws, &[], 100_000, key)?;
    let reports = audit.variance_reports(&setup, &lambdas, 20_000, key.child(1))?;
    let fails = reports.iter().filter(|r| !r.pass).count();
    let tightest = reports
        .iter()
        .map(|r| r.measured_variance / r.bound_value)
        .fold(0.0, f64::max);
    Ok((fails == 0, format!("{} points, {fails} above bound + 3 SE, max measured/bound = {tightest:.3}", reports.len())))
}

fn c3_grid_argmin() -> Check {
    let mut rng = StreamKey::new(303, 0).rng(StreamRole::MonteCarlo);
    let grid = 10_000;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s = 10f64.powf(rng.random_range(-2.0..2.0));
        let e = 10f64.powf(rng.random_range(-3.0..2.0));
        let r = 10f64.powf(rng.random_range(-3.0..1.0));
        let c = VarianceConstants::new(s, e, r)?;
        let ls = lambda_star(&c)?;
        let (mut best, mut best_v) = (0.0, f64::INFINITY);
        for i in 0..=grid {
            let l = i as f64 / grid as f64;
            let v = variance_bound(&c, 1, l);
            if v < best_v {
                best_v = v;
                best = l;
            }
        }
        worst = worst.max((best - ls).abs() * grid as f64);
    }
    Ok((worst <= 1.0, format!("100 triples, worst |argmin - lambda*| = {worst:.3} cells")))
}

fn c4_sweep() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for &(big_n, sz, b) in &SWEEP_SETTINGS {
        let spec = G1Spec::new(50, big_n, sz, b, 404);
        let rep = lambda_sweep_variance(&spec, &uniform_grid(101), 20_000, 20_000)?;
        let ratio = rep.var_theory / rep.var_practice;
        let gap = (rep.lambda_theory - rep.lambda_practice).abs();
        ok &= ratio <= 1.10 && gap <= 0.12;
        parts.push(format!(
            "r={:.3},b={b}: lth={:.3} lpr={:.2} ratio={ratio:.3}",
            spec.ratio(),
            rep.lambda_theory,
            rep.lambda_practice
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn c5_regret() -> Check {
    let mut worst_margin = f64::INFINITY;
    let mut fails = 0;
    for i in 0..20u64 {
        let data = gen_g1_model(&base_g1(500 + i))?;
        let cfg = FreshRunConfig {
            n: 20,
            big_n: 200,
            steps: 1000,
            optimizer: OptimizerKind::AdaGradNorm { eta0: 1.0 },
            method: Method::PpSsl,
            lambda0: 1.0,
        };
        let run = fresh_run(&data.model, &data.teacher, &cfg, true, StreamKey::new(500 + i, 1))?;
        let rep = regret_audit(run.ledger.as_ref().expect("ledger kept"))?;
        fails += usize::from(!rep.pass);
        worst_margin = worst_margin.min(rep.bound + rep.tolerance - rep.max_regret);
    }
    Ok((fails == 0, format!("20 runs, {fails} violations, smallest slack to bound = {worst_margin:.4}")))
}

fn c6_dynamics() -> Check {
    let cfg = DynamicsConfig {
        eta0: 0.1,
        seeds: (600..605).collect(),
        ..DynamicsConfig::default()
    };
    let rep = lambda_dynamics_trace(&[0.01, 0.04, 0.05], &cfg)?;
    let finals: Vec<f64> = rep.rows.iter().map(|r| *r.mean_lambda.last().expect("checkpoint")).collect();
    let ok = rep.strictly_decreasing && finals[0] >= 0.85 && finals[2] <= 0.75;
    Ok((ok, format!("final lambda for E^f 0.01/0.04/0.05 = {:.3}/{:.3}/{:.3}", finals[0], finals[1], finals[2])))
}

/// Reference training config on two-group data (Adam 1e-3, batch 256,
/// 3000 epochs, early stopping with patience 10).
pub fn two_group_train_config() -> TrainConfig {
    TrainConfig {
        method: Method::PpSsl,
        optimizer: OptimizerKind::adam(0.001),
        epochs: 3000,
        batch_n: 256,
        batch_big_n: 256,
        sampling: Sampling::EpochShuffle,
        early_stop_patience: Some(10),
        lambda0: 1.0,
        seed: 0,
    }
}

fn c7_oracle() -> Check {
    let seeds: Vec<u64> = (700..720).collect();
    let rows = adaptive_vs_fixed(&SyntheticSpec::with_indicator(0.5, 0), &[0.5, 3.0], &uniform_grid(21), &two_group_train_config(), &seeds)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &rows {
        let ratio = r.adaptive.total.mean / r.oracle.total.mean;
        ok &= ratio <= 1.05;
        parts.push(format!(
            "mu={}: PP-SSL {:.3} (lambda {:.2}) vs oracle {:.3} (lambda {:.2}), ratio {ratio:.3}",
            r.mu,
            r.adaptive.total.mean,
            r.adaptive.lambda.unwrap_or(f64::NAN),
            r.oracle.total.mean,
            r.sweep.argmin_lambda
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn c8_group_b() -> Check {
    let seeds: Vec<u64> = (800..900).collect();
    let spec = SyntheticSpec::with_indicator(7.0, 0);
    let cfg = two_group_train_config();
    let pp = multi_seed_mse(&spec, &cfg, Method::PpSsl, &seeds)?;
    let ssl = multi_seed_mse(&spec, &cfg, Method::Ssl, &seeds)?;
    let mut ppi = Vec::new();
    for &seed in &seeds {
        let s = SyntheticSpec { seed, ..spec.clone() };
        let data = gen_two_group(&s)?;
        let off = offline_ppi_lambda(&data.split.labeled, &data.split.unlabeled, &data.teacher(), data.split.teacher_pretrain.as_ref())?;
        ppi.push(multi_seed_mse(&s, &cfg, Method::PpiPlusPlus { lambda: off.lambda.clamped }, &[seed])?.group_b.mean);
    }
    let ppi_b = ppi.iter().sum::<f64>() / ppi.len() as f64;
    let ok = pp.group_b.mean < ssl.group_b.mean && pp.group_b.mean <= 1.05 * ppi_b && pp.diverged == 0 && ssl.diverged == 0;
    Ok((
        ok,
        format!(
            "group-B MSE: PP-SSL {:.3}, SSL {:.3}, PPI++(offline lambda) {:.3}",
            pp.group_b.mean, ssl.group_b.mean, ppi_b
        ),
    ))
}

fn same_trace(a: &RunRecord, b: &RunRecord) -> bool {
    a.per_epoch.len() == b.per_epoch.len()
        && a.per_epoch.iter().zip(&b.per_epoch).all(|(x, y)| {
            x.train_loss.to_bits() == y.train_loss.to_bits()
                && x.val_loss.map(f64::to_bits) == y.val_loss.map(f64::to_bits)
                && x.test == y.test
                && x.eta.map(f64::to_bits) == y.eta.map(f64::to_bits)
        })
        && a.final_params.iter().map(|v| v.to_bits()).eq(b.final_params.iter().map(|v| v.to_bits()))
}

fn c9_identities() -> Check {
    let data = gen_two_group(&SyntheticSpec::with_indicator(3.0, 909))?;
    let model = LossModel::squared(data.split.dim());
    let teacher = data.teacher();
    let mut ok = true;
    let mut parts = Vec::new();
    for sampling in [Sampling::EpochShuffle, Sampling::FreshIid] {
        let base = TrainConfig {
            epochs: 200,
            sampling,
            seed: 909,
            ..two_group_train_config()
        };
        let run = |m: Method| train(&TrainConfig { method: m, ..base.clone() }, &data.split, &teacher, &model);
        let a = same_trace(&run(Method::OnlyLabeled)?, &run(Method::PpiPlusPlus { lambda: 0.0 })?);
        let b = same_trace(&run(Method::Ppi)?, &run(Method::PpiPlusPlus { lambda: 1.0 })?);
        ok &= a && b;
        parts.push(format!("{sampling:?}: PPI++(0)=OnlyLabeled {a}, PPI=PPI++(1) {b}"));
    }
    Ok((ok, parts.join("; ")))
}

fn c10_lemma1() -> Check {
    let k = 20_000;
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, &(big_n, sz, b)) in SWEEP_SETTINGS.iter().enumerate() {
        let spec = G1Spec::new(50, big_n, sz, b, 1000 + i as u64);
        let data = gen_g1_model(&spec)?;
        let batch = draw_pool(&data.model, k, StreamKey::new(spec.seed, 1))?;
        let radius = batch.rows().map(augmented_feature_norm).fold(0.0, f64::max);
        let ws = random_points(spec.d, 3, StreamKey::new(spec.seed, 2));
        let model = LossModel::squared(spec.d);
        let rep = lemma1_check(&model, &ws, &data.teacher, &mut ReplayStream::new(&batch), radius, k)?;
        ok &= rep.verdict == Lemma1Verdict::Pass;
        let worst = rep.sigma_e_sq.iter().copied().fold(0.0, f64::max);
        parts.push(format!("R={radius:.2}: max sigma_e^2={worst:.3} <= {:.3}", rep.rhs));
    }
    Ok((ok, parts.join("; ")))
}

fn draw_pool(model: &GaussianLinearModel, k: usize, key: StreamKey) -> Result<LabeledBatch<f64>, CliError> {
    let mut stream = GaussianStream {
        model,
        rng: key.rng(StreamRole::MonteCarlo),
    };
    let d = stream.dim();
    let mut x = vec![0.0; d];
    let mut xs = Vec::with_capacity(k * d);
    let mut ys = Vec::with_capacity(k);
    for _ in 0..k {
        ys.push(stream.next_sample(&mut x));
        xs.extend_from_slice(&x);
    }
    Ok(LabeledBatch::new(d, xs, ys, None)?)
}

fn c11_convergence() -> Check {
    let steps = 5000;
    let tenth = steps / 10;
    let (mut lead, mut trail) = (0.0, 0.0);
    let mut per_seed_ok = 0;
    for i in 0..20u64 {
        let data = gen_g1_model(&base_g1(1100 + i))?;
        let cfg = FreshRunConfig {
            n: 20,
            big_n: 200,
            steps,
            optimizer: OptimizerKind::AdaGradNorm { eta0: 1.0 },
            method: Method::PpSsl,
            lambda0: 1.0,
        };
        let run = fresh_run(&data.model, &data.teacher, &cfg, false, StreamKey::new(1100 + i, 1))?;
        let l = run.grad_norms_sq[..tenth].iter().sum::<f64>() / tenth as f64;
        let t = run.grad_norms_sq[steps - tenth..].iter().sum::<f64>() / tenth as f64;
        per_seed_ok += usize::from(t <= 0.5 * l);
        lead += l / 20.0;
        trail += t / 20.0;
    }
    Ok((
        trail <= 0.5 * lead,
        format!("seed-averaged leading {lead:.4e}, trailing {trail:.4e}; {per_seed_ok}/20 seeds individually"),
    ))
}

fn collect_files(root: &Path) -> Result<Vec<(String, Vec<u8>)>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn c12_determinism() -> Check {
    let mut cfg = ExperimentConfig::two_group_default(3.0);
    cfg.experiment.method = MethodName::PpSsl;
    cfg.experiment.epochs = 300;
    cfg.experiment.seeds = SeedSpec::List(vec![1200, 1201, 1202]);
    let mut ppi = cfg.clone();
    ppi.experiment.method = MethodName::PpiPlusPlus;
    ppi.experiment.lambda = Some(LambdaSpec::Rule(crate::config::LambdaRule::Offline));
    let tmp = tempfile::tempdir()?;
    let mut ok = true;
    let mut files = 0;
    for (name, c) in [("pp_ssl", &cfg), ("ppi_offline", &ppi)] {
        let a = tmp.path().join(format!("{name}_a"));
        let b = tmp.path().join(format!("{name}_b"));
        crate::commands::cmd_train(c, &a, 1)?;
        crate::commands::cmd_train(c, &b, 2)?;
        let (fa, fb) = (collect_files(&a)?, collect_files(&b)?);
        files += fa.len();
        ok &= !fa.is_empty() && fa == fb;
    }
    Ok((ok, format!("{files} files compared byte for byte across two invocations (1 and 2 workers)")))
}

pub fn run_criterion(id: u32) -> CriterionResult {
    let (_, name, budget) = CRITERIA.iter().copied().find(|c| c.0 == id).expect("criterion id in 1..=12");
    let start = Instant::now();
    let outcome = match id {
        1 => c1_unbiasedness(),
        2 => c2_variance_bound(),
        3 => c3_grid_argmin(),
        4 => c4_sweep(),
        5 => c5_regret(),
        6 => c6_dynamics(),
        7 => c7_oracle(),
        8 => c8_group_b(),
        9 => c9_identities(),
        10 => c10_lemma1(),
        11 => c11_convergence(),
        12 => c12_determinism(),
        _ => unreachable!(),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let (check_pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    let mut detail = detail;
    if elapsed > budget {
        detail.push_str(&format!(" [over budget: {elapsed:.1}s > {budget:.0}s]"));
    }
    CriterionResult {
        id,
        name: name.to_string(),
        pass: check_pass && elapsed <= budget,
        check_pass,
        detail,
        elapsed_secs: elapsed,
        budget_secs: budget,
    }
}

/// Runs every criterion in order; `on_result` sees each as it completes.
pub fn run_all(mut on_result: impl FnMut(&CriterionResult)) -> Scoreboard {
    let results = CRITERIA
        .iter()
        .map(|c| {
            let r = run_criterion(c.0);
            on_result(&r);
            r
        })
        .collect();
    Scoreboard::new(results)
}
