use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::model::{LossKind, LossModel, ParamVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub count: usize,
    /// Mean per-sample training loss.
    pub loss: f64,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    /// `None` when the labels have zero variance.
    pub r2: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub overall: GroupMetrics,
    pub per_group: BTreeMap<u32, GroupMetrics>,
}

impl MetricsRecord {
    pub fn group_mse(&self, tag: u32) -> Option<f64> {
        self.per_group.get(&tag).and_then(|g| g.mse)
    }
}

fn summarize(kind: LossKind, preds: &[f64], labels: &[f64], losses: &[f64]) -> GroupMetrics {
    let n = labels.len() as f64;
    let loss = losses.iter().sum::<f64>() / n;
    match kind {
        LossKind::SquaredL2 => {
            let sse: f64 = preds.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
            let sae: f64 = preds.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum();
            let mean = labels.iter().sum::<f64>() / n;
            let sst: f64 = labels.iter().map(|y| (mean - y) * (mean - y)).sum();
            GroupMetrics {
                count: labels.len(),
                loss,
                mse: Some(sse / n),
                mae: Some(sae / n),
                r2: (sst > 0.0).then(|| 1.0 - sse / sst),
                accuracy: None,
            }
        }
        LossKind::Logistic | LossKind::SoftmaxCe { .. } => {
            let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
            GroupMetrics {
                count: labels.len(),
                loss,
                mse: None,
                mae: None,
                r2: None,
                accuracy: Some(hits as f64 / n),
            }
        }
    }
}

/// Regression (MSE, MAE, R²) or top-1 accuracy, overall and per group tag.
pub fn evaluate<T: Scalar>(w: &ParamVector<T>, model: &LossModel, eval_set: &LabeledBatch<T>) -> Result<MetricsRecord> {
    if eval_set.is_empty() {
        return Err(Error::EmptyData("evaluation set".into()));
    }
    model.check_params(w)?;
    eval_set.validate_for(model)?;
    let mut preds = Vec::with_capacity(eval_set.len());
    let mut losses = Vec::with_capacity(eval_set.len());
    for (x, &y) in eval_set.rows().zip(eval_set.labels()) {
        let p = match model.kind {
            LossKind::Logistic => {
                if model.predict(w, x) >= T::lit(0.5) {
                    1.0
                } else {
                    0.0
                }
            }
            _ => model.predict(w, x).as_f64(),
        };
        preds.push(p);
        losses.push(model.loss_unchecked(w, x, y).as_f64());
    }
    let labels: Vec<f64> = eval_set.labels().iter().map(|v| v.as_f64()).collect();
    let overall = summarize(model.kind, &preds, &labels, &losses);
    let mut per_group = BTreeMap::new();
    if let Some(groups) = eval_set.groups() {
        let mut tags: Vec<u32> = groups.to_vec();
        tags.sort_unstable();
        tags.dedup();
        for tag in tags {
            let idx: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == tag).collect();
            let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
            per_group.insert(tag, summarize(model.kind, &pick(&preds), &pick(&labels), &pick(&losses)));
        }
    }
    Ok(MetricsRecord { overall, per_group })
}

/// Mean per-sample loss over a batch.
pub fn mean_loss<T: Scalar>(w: &ParamVector<T>, model: &LossModel, batch: &LabeledBatch<T>) -> T {
    let total = batch
        .rows()
        .zip(batch.labels())
        .fold(T::zero(), |acc, (x, &y)| acc + model.loss_unchecked(w, x, y));
    total / T::lit(batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(labels: &[f64], groups: Option<Vec<u32>>) -> LabeledBatch<f64> {
        LabeledBatch::new(1, labels.iter().map(|_| 0.0).collect(), labels.to_vec(), groups).unwrap()
    }

    #[test]
    fn hand_examples() {
        let m = LossModel::squared(1);
        // x = 0, so the prediction is the bias
        let b = batch(&[0.0, 2.0], None);
        let r = evaluate(&ParamVector::new(vec![0.0], 1.0), &m, &b).unwrap();
        assert_eq!(r.overall.mse, Some(1.0));
        assert_eq!(r.overall.mae, Some(1.0));
        assert_eq!(r.overall.r2, Some(0.0));

        let xs = vec![1.0, 2.0, 3.0];
        let ys = vec![2.0, 4.0, 6.0];
        let b = LabeledBatch::new(1, xs, ys, None).unwrap();
        let r = evaluate(&ParamVector::new(vec![2.0], 0.0), &m, &b).unwrap();
        assert_eq!((r.overall.mse, r.overall.mae, r.overall.r2), (Some(0.0), Some(0.0), Some(1.0)));
    }

    #[test]
    fn zero_variance_r2_is_undefined() {
        let m = LossModel::squared(1);
        let r = evaluate(&ParamVector::new(vec![0.0], 1.0), &m, &batch(&[3.0, 3.0], None)).unwrap();
        assert_eq!(r.overall.r2, None);
        assert_eq!(r.overall.mse, Some(4.0));
    }

    #[test]
    fn per_group_breakdown() {
        let m = LossModel::squared(1);
        let b = batch(&[0.0, 1.0, 3.0], Some(vec![0, 0, 1]));
        let r = evaluate(&ParamVector::new(vec![0.0], 1.0), &m, &b).unwrap();
        assert_eq!(r.group_mse(0), Some(0.5));
        assert_eq!(r.group_mse(1), Some(4.0));
        assert_eq!(r.per_group[&1].r2, None);
    }

    #[test]
    fn accuracy_for_classifiers() {
        let m = LossModel::new(LossKind::Logistic, 1).unwrap();
        let b = LabeledBatch::new(1, vec![1.0, -1.0, 2.0, -3.0], vec![1.0, 0.0, 0.0, 0.0], None).unwrap();
        let r = evaluate(&ParamVector::new(vec![1.0], 0.0), &m, &b).unwrap();
        assert_eq!(r.overall.accuracy, Some(0.75));
        assert_eq!(r.overall.mse, None);
    }
}
