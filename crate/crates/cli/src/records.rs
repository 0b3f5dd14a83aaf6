//! Record files: per-epoch CSV, per-seed JSON and multi-seed aggregates.
//!
//! Reals are written with 17 significant digits so that files round-trip
//! exactly and reruns are byte-identical.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ppssl_core::datagen::{GROUP_A, GROUP_B};
use ppssl_core::stats::mean_se;
use ppssl_core::trainer::EpochRecord;
use ppssl_core::RunRecord;

use crate::error::CliError;

pub const EPOCH_HEADER: &str = "epoch,train_loss,val_loss,test_mse,test_mae,test_r2,mse_groupA,mse_groupB,lambda,eta";

pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn cell(x: Option<f64>) -> String {
    match x {
        Some(v) if !v.is_nan() => fmt_real(v),
        _ => String::new(),
    }
}

pub fn epoch_row(e: &EpochRecord) -> String {
    let t = &e.test;
    [
        e.epoch.to_string(),
        cell(Some(e.train_loss)),
        cell(e.val_loss),
        cell(t.overall.mse),
        cell(t.overall.mae),
        cell(t.overall.r2),
        cell(t.group_mse(GROUP_A)),
        cell(t.group_mse(GROUP_B)),
        cell(e.lambda),
        cell(e.eta),
    ]
    .join(",")
}

pub fn epochs_csv(rec: &RunRecord) -> String {
    let mut s = String::from(EPOCH_HEADER);
    s.push('\n');
    for e in &rec.per_epoch {
        s.push_str(&epoch_row(e));
        s.push('\n');
    }
    s
}

/// Writes `bytes` to a temporary file in the target directory and renames
/// it into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub config_hash: String,
    pub method: String,
    pub seeds: Vec<u64>,
    pub completed: usize,
    pub diverged_seeds: Vec<u64>,
    /// Over completed seeds only.
    pub metrics: BTreeMap<String, MeanStd>,
}

/// Final metrics of one record, by aggregate name.
pub fn final_values(rec: &RunRecord) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    if let Some(f) = &rec.final_metrics {
        let mut put = |k: &str, v: Option<f64>| {
            if let Some(v) = v.filter(|v| v.is_finite()) {
                m.insert(k.to_string(), v);
            }
        };
        put("test_mse", f.overall.mse);
        put("test_mae", f.overall.mae);
        put("test_r2", f.overall.r2);
        put("test_accuracy", f.overall.accuracy);
        put("mse_groupA", f.group_mse(GROUP_A));
        put("mse_groupB", f.group_mse(GROUP_B));
        put("final_lambda", rec.final_lambda);
    }
    m.insert("stop_epoch".into(), rec.stop_epoch as f64);
    m
}

pub fn aggregate(config_hash: &str, records: &[RunRecord]) -> Aggregate {
    let completed: Vec<&RunRecord> = records.iter().filter(|r| r.diverged.is_none()).collect();
    let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &completed {
        for (k, v) in final_values(r) {
            cols.entry(k).or_default().push(v);
        }
    }
    let metrics = cols
        .into_iter()
        .map(|(k, v)| {
            let s = mean_se(&v);
            (k, MeanStd { mean: s.mean, std: s.std, n: s.n })
        })
        .collect();
    Aggregate {
        config_hash: config_hash.to_string(),
        method: records.first().map(|r| r.method.label()).unwrap_or_default(),
        seeds: records.iter().map(|r| r.seed).collect(),
        completed: completed.len(),
        diverged_seeds: records.iter().filter(|r| r.diverged.is_some()).map(|r| r.seed).collect(),
        metrics,
    }
}

pub fn aggregate_csv(a: &Aggregate) -> String {
    let mut s = String::from("metric,mean,std,n\n");
    for (k, m) in &a.metrics {
        s.push_str(&format!("{k},{},{},{}\n", fmt_real(m.mean), fmt_real(m.std), m.n));
    }
    s
}
