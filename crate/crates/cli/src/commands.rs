//! `gen-data`, `train` and `diagnose`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ppssl_core::datagen::{load_csv, split_table, write_split_csv, CsvTable};
use ppssl_core::diagnostics::{
    gradient_audit, lambda_dynamics_trace, random_points, regret_audit, uniform_grid, adaptive_vs_fixed, fresh_run, DynamicsConfig,
    FreshRunConfig, FreshSetup, SWEEP_SETTINGS,
};
use ppssl_core::diagnostics::{lambda_sweep_variance, Estimator};
use ppssl_core::theory::offline_ppi_lambda;
use ppssl_core::{
    gen_g1_model, gen_two_group, train, DataSplit, G1Spec, LossModel, Method, ModelTeacher, OptimizerKind, ParamVector, RunRecord,
    StreamKey, Teacher, TrainConfig,
};

use crate::config::{DataSection, ExperimentConfig, LambdaRule, LambdaSpec, MethodName};
use crate::error::CliError;
use crate::records::{aggregate, aggregate_csv, epochs_csv, fmt_real, write_atomic, write_json};

/// One seed's data, teacher and loss.
pub struct Prepared {
    pub split: DataSplit<f64>,
    pub teacher: Box<dyn Teacher<f64>>,
    pub model: LossModel,
}

/// CSV sources are read once and split per seed.
pub fn load_source(cfg: &ExperimentConfig) -> Result<Option<CsvTable>, CliError> {
    match &cfg.data {
        DataSection::Csv { path, .. } => {
            let schema = cfg.data.csv_schema().expect("csv");
            load_csv(path, &schema).map(Some).map_err(|e| CliError::Config(format!("data.path: {e}")))
        }
        _ => Ok(None),
    }
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64, table: Option<&CsvTable>) -> Result<Prepared, CliError> {
    let model = LossModel::new(cfg.model.kind(), 1)?;
    match &cfg.data {
        DataSection::TwoGroup { .. } => {
            let data = gen_two_group(&cfg.data.synthetic_spec(seed).expect("two-group"))?;
            Ok(Prepared {
                model: LossModel::new(model.kind, data.split.dim())?,
                teacher: Box::new(data.teacher()),
                split: data.split,
            })
        }
        DataSection::G1 { .. } => {
            let data = gen_g1_model(&cfg.data.g1_spec(seed).expect("g1"))?;
            Ok(Prepared {
                model: LossModel::new(model.kind, data.split.dim())?,
                teacher: Box::new(data.teacher),
                split: data.split,
            })
        }
        DataSection::Csv { fractions, standardize, .. } => {
            let table = table.ok_or_else(|| CliError::Config("data.path: table not loaded".into()))?;
            let split = split_table(table, fractions, StreamKey::new(seed, 0), *standardize)?;
            let model = LossModel::new(model.kind, split.dim())?;
            let teacher = train_teacher(cfg, &split, &model, seed)?;
            Ok(Prepared {
                split,
                teacher: Box::new(teacher),
                model,
            })
        }
    }
}

/// Labeled-only fit on the pretrain rows with the configured optimizer.
fn train_teacher(cfg: &ExperimentConfig, split: &DataSplit<f64>, model: &LossModel, seed: u64) -> Result<ModelTeacher<f64>, CliError> {
    let pre = split
        .teacher_pretrain
        .clone()
        .ok_or_else(|| CliError::Config("data.fractions.pretrain: no pretrain rows".into()))?;
    let teacher_split = DataSplit {
        labeled: pre,
        unlabeled: split.unlabeled.clone(),
        validation: None,
        test: split.test.clone(),
        teacher_pretrain: None,
    };
    let tc = TrainConfig {
        method: Method::OnlyLabeled,
        early_stop_patience: None,
        ..cfg.train_config(seed, None)
    };
    let nothing = ppssl_core::FnTeacher::new("unused", |_: &[f64]| 0.0);
    let rec = train(&tc, &teacher_split, &nothing, model)?;
    let params = ParamVector::from_coeffs(model.feature_dim, model.outputs(), rec.final_params)?;
    Ok(ModelTeacher::new(*model, params)?)
}

/// λ for an `offline` rule: residuals on the pretrain rows when present,
/// otherwise on the labeled rows.
pub fn offline_lambda(p: &Prepared) -> Result<f64, CliError> {
    let off = offline_ppi_lambda(&p.split.labeled, &p.split.unlabeled, p.teacher.as_ref(), p.split.teacher_pretrain.as_ref())?;
    Ok(off.lambda.clamped)
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64, table: Option<&CsvTable>) -> Result<RunRecord, CliError> {
    let p = prepare(cfg, seed, table)?;
    let offline = match (cfg.experiment.method, cfg.experiment.lambda) {
        (MethodName::PpiPlusPlus, Some(LambdaSpec::Rule(LambdaRule::Offline))) => Some(offline_lambda(&p)?),
        _ => None,
    };
    let tc = cfg.train_config(seed, offline);
    let mut rec = train(&tc, &p.split, p.teacher.as_ref(), &p.model)?;
    rec.config_hash = Some(cfg.config_hash());
    Ok(rec)
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataManifest {
    pub seed: u64,
    pub config_hash: String,
    pub data: DataSection,
    pub dim: usize,
    pub rows: RowCounts,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RowCounts {
    pub labeled: usize,
    pub unlabeled: usize,
    pub validation: usize,
    pub test: usize,
    pub pretrain: usize,
}

/// Writes `seed_<s>/data.csv` and `seed_<s>/manifest.json` per seed.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let table = load_source(cfg)?;
    let mut written = Vec::new();
    for seed in cfg.seeds() {
        let p = prepare(cfg, seed, table.as_ref())?;
        let mut bytes = Vec::new();
        write_split_csv(&p.split, &mut bytes)?;
        let dir = seed_dir(out, seed);
        let csv_path = dir.join("data.csv");
        write_atomic(&csv_path, &bytes)?;
        let s = &p.split;
        let manifest = DataManifest {
            seed,
            config_hash: cfg.config_hash(),
            data: cfg.data.clone(),
            dim: s.dim(),
            rows: RowCounts {
                labeled: s.labeled.len(),
                unlabeled: s.unlabeled.len(),
                validation: s.validation.as_ref().map_or(0, |v| v.len()),
                test: s.test.len(),
                pretrain: s.teacher_pretrain.as_ref().map_or(0, |v| v.len()),
            },
            sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        written.push(csv_path);
    }
    Ok(written)
}

/// Trains every seed, writing `seed_<s>/epochs.csv` and `record.json` as
/// each finishes, then `aggregate.json`/`.csv` in seed order. Fails (after
/// writing) if any seed errored or diverged.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<RunRecord>, CliError> {
    let table = load_source(cfg)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let seeds = cfg.seeds();
    let results: Vec<Result<RunRecord, CliError>> = pool(jobs)?.install(|| {
        use rayon::prelude::*;
        seeds
            .par_iter()
            .map(|&seed| {
                let rec = run_seed(cfg, seed, table.as_ref())?;
                let dir = seed_dir(out, seed);
                write_atomic(&dir.join("epochs.csv"), epochs_csv(&rec).as_bytes())?;
                write_json(&dir.join("record.json"), &rec)?;
                Ok(rec)
            })
            .collect()
    });
    let mut records = Vec::new();
    let mut problems = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(rec) => {
                if let Some(d) = &rec.diverged {
                    problems.push(format!("seed {seed} diverged at epoch {}: {}", d.epoch, d.reason));
                }
                records.push(rec);
            }
            Err(e) => problems.push(format!("seed {seed}: {e}")),
        }
    }
    let agg = aggregate(&cfg.config_hash(), &records);
    write_json(&out.join("aggregate.json"), &agg)?;
    write_atomic(&out.join("aggregate.csv"), aggregate_csv(&agg).as_bytes())?;
    if problems.is_empty() {
        Ok(records)
    } else {
        Err(CliError::Failed(problems.join("; ")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Which {
    Variance,
    Regret,
    SweepS4,
    DynamicsS5,
    OracleS6,
}

fn g1_spec_for(cfg: &ExperimentConfig) -> G1Spec {
    cfg.data
        .g1_spec(cfg.seeds()[0])
        .unwrap_or_else(|| ExperimentConfig::g1_default().data.g1_spec(cfg.seeds()[0]).expect("g1"))
}

/// Runs one diagnostic, writes `<which>.json` and `<which>.csv` under
/// `out`, and fails if an inequality audit fails.
pub fn cmd_diagnose(cfg: &ExperimentConfig, which: Which, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let dg = &cfg.experiment.diagnose;
    let seed = cfg.seeds()[0];
    match which {
        Which::Variance => {
            let spec = g1_spec_for(cfg);
            let data = gen_g1_model(&spec)?;
            let setup = FreshSetup {
                model: &data.model,
                teacher: &data.teacher,
                n: spec.n,
                big_n: spec.big_n,
            };
            let key = StreamKey::new(seed, 10);
            let ws = random_points(spec.d, dg.points, key);
            let audit = gradient_audit(&setup, &ws, &dg.lambdas, dg.draws, key)?;
            let unbiased = audit.unbiasedness();
            let reports = audit.variance_reports(&setup, &dg.lambdas, dg.const_draws, key.child(1))?;
            let mut csv = String::from("w_index,lambda,measured,se,bound,sigma_sq,sigma_e_sq,pass\n");
            for r in &reports {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.w_index,
                    fmt_real(r.lambda),
                    fmt_real(r.measured_variance),
                    fmt_real(r.measured_se),
                    fmt_real(r.bound_value),
                    fmt_real(r.constants.sigma_sq),
                    fmt_real(r.constants.sigma_e_sq),
                    r.pass
                ));
            }
            write_atomic(&out.join("variance.csv"), csv.as_bytes())?;
            write_json(&out.join("variance.json"), &serde_json::json!({ "spec": spec, "unbiasedness": unbiased, "bound": reports }))?;
            let pp_ok = unbiased.iter().filter(|e| e.estimator == Estimator::PredictionPowered).all(|e| e.pass);
            let bound_ok = reports.iter().all(|r| r.pass);
            if !(pp_ok && bound_ok) {
                return Err(CliError::Failed(format!("variance audit: unbiased={pp_ok}, bound={bound_ok}")));
            }
        }
        Which::Regret => {
            let spec = g1_spec_for(cfg);
            let mut rows = Vec::new();
            for i in 0..dg.runs as u64 {
                let data = gen_g1_model(&G1Spec { seed: seed + i, ..spec.clone() })?;
                let rc = FreshRunConfig {
                    n: spec.n,
                    big_n: spec.big_n,
                    steps: dg.steps,
                    optimizer: OptimizerKind::AdaGradNorm { eta0: dg.eta0 },
                    method: Method::PpSsl,
                    lambda0: cfg.tuner.lambda0,
                };
                let run = fresh_run(&data.model, &data.teacher, &rc, true, StreamKey::new(seed + i, 11))?;
                rows.push(regret_audit(run.ledger.as_ref().expect("ledger kept"))?);
            }
            let mut csv = String::from("run,rounds,max_regret,argmax_lambda,bound,pass\n");
            for (i, r) in rows.iter().enumerate() {
                csv.push_str(&format!(
                    "{i},{},{},{},{},{}\n",
                    r.rounds,
                    fmt_real(r.max_regret),
                    fmt_real(r.argmax_lambda),
                    fmt_real(r.bound),
                    r.pass
                ));
            }
            write_atomic(&out.join("regret.csv"), csv.as_bytes())?;
            write_json(&out.join("regret.json"), &rows)?;
            if !rows.iter().all(|r| r.pass) {
                return Err(CliError::Failed("regret audit".into()));
            }
        }
        Which::SweepS4 => {
            let mut reports = Vec::new();
            for &(big_n, sz, b) in &SWEEP_SETTINGS {
                let spec = G1Spec::new(50, big_n, sz, b, seed);
                reports.push(lambda_sweep_variance(&spec, &uniform_grid(dg.sweep_points), dg.sweep_draws, dg.const_draws)?);
            }
            let mut csv = String::from("r,sigma_zeta_sq,b,sigma_sq,sigma_e_sq,lambda_theory,lambda_practice,var_theory,var_practice,convex\n");
            for r in &reports {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    fmt_real(r.spec.ratio()),
                    fmt_real(r.spec.sigma_zeta_sq),
                    fmt_real(r.spec.b),
                    fmt_real(r.constants.sigma_sq),
                    fmt_real(r.constants.sigma_e_sq),
                    fmt_real(r.lambda_theory),
                    fmt_real(r.lambda_practice),
                    fmt_real(r.var_theory),
                    fmt_real(r.var_practice),
                    r.convex
                ));
            }
            write_atomic(&out.join("sweep_s4.csv"), csv.as_bytes())?;
            write_json(&out.join("sweep_s4.json"), &reports)?;
            if !reports.iter().all(|r| r.convex) {
                return Err(CliError::Failed("variance curve not convex within noise".into()));
            }
        }
        Which::DynamicsS5 => {
            let dc = dynamics_config(cfg);
            let rep = lambda_dynamics_trace(&dg.ladder, &dc)?;
            let mut csv = String::from("teacher_mse,b,sigma_zeta_sq");
            for c in &rep.rows[0].checkpoints {
                csv.push_str(&format!(",lambda_{c}"));
            }
            csv.push('\n');
            for r in &rep.rows {
                csv.push_str(&format!("{},{},{}", fmt_real(r.rung.target_error), fmt_real(r.rung.b), fmt_real(r.rung.sigma_zeta_sq)));
                for l in &r.mean_lambda {
                    csv.push_str(&format!(",{}", fmt_real(*l)));
                }
                csv.push('\n');
            }
            write_atomic(&out.join("dynamics_s5.csv"), csv.as_bytes())?;
            write_json(&out.join("dynamics_s5.json"), &rep)?;
        }
        Which::OracleS6 => {
            let base = cfg
                .data
                .synthetic_spec(seed)
                .unwrap_or_else(|| ExperimentConfig::two_group_default(3.0).data.synthetic_spec(seed).expect("two-group"));
            let rows = adaptive_vs_fixed(&base, &dg.mus, &uniform_grid(dg.oracle_points), &cfg.train_config(seed, None), &cfg.seeds())?;
            let mut csv = String::from(
                "mu,oracle_lambda,oracle_mse,oracle_mse_groupA,oracle_mse_groupB,ppssl_lambda,ppssl_mse,ppssl_mse_groupA,ppssl_mse_groupB,diverged\n",
            );
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    fmt_real(r.mu),
                    fmt_real(r.sweep.argmin_lambda),
                    fmt_real(r.oracle.total.mean),
                    fmt_real(r.oracle.group_a.mean),
                    fmt_real(r.oracle.group_b.mean),
                    r.adaptive.lambda.map(fmt_real).unwrap_or_default(),
                    fmt_real(r.adaptive.total.mean),
                    fmt_real(r.adaptive.group_a.mean),
                    fmt_real(r.adaptive.group_b.mean),
                    r.adaptive.diverged + r.fixed.iter().map(|f| f.diverged).sum::<usize>()
                ));
            }
            write_atomic(&out.join("oracle_s6.csv"), csv.as_bytes())?;
            write_json(&out.join("oracle_s6.json"), &rows)?;
        }
    }
    Ok(())
}

pub fn dynamics_config(cfg: &ExperimentConfig) -> DynamicsConfig {
    let dg = &cfg.experiment.diagnose;
    let base = cfg.seeds()[0];
    DynamicsConfig {
        n: dg.ladder_n,
        big_n: dg.ladder_big_n,
        steps: dg.ladder_steps,
        eta0: dg.ladder_eta0,
        lambda0: cfg.tuner.lambda0,
        seeds: (0..dg.ladder_seeds as u64).map(|i| base + i).collect(),
        ..DynamicsConfig::default()
    }
}
