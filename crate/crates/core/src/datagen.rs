//! Synthetic generators, CSV ingestion and seeded splitting.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledBatch, LinearTeacher, NoisyLinearTeacher, UnlabeledBatch};
use crate::error::{Error, Result};
use crate::model::{Gradient, ParamVector};
use crate::rng::{StreamKey, StreamRole};
use crate::scalar::{dot, Scalar};

pub const GROUP_A: u32 = 0;
pub const GROUP_B: u32 = 1;

/// Disjoint partitions of one source table.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit<T> {
    pub labeled: LabeledBatch<T>,
    /// True labels are retained but only reachable via `oracle_labels`.
    pub unlabeled: UnlabeledBatch<T>,
    pub validation: Option<LabeledBatch<T>>,
    pub test: LabeledBatch<T>,
    pub teacher_pretrain: Option<LabeledBatch<T>>,
}

impl<T: Scalar> DataSplit<T> {
    pub fn dim(&self) -> usize {
        self.labeled.dim()
    }

    pub fn cast<U: Scalar>(&self) -> DataSplit<U> {
        DataSplit {
            labeled: self.labeled.cast(),
            unlabeled: self.unlabeled.cast(),
            validation: self.validation.as_ref().map(|b| b.cast()),
            test: self.test.cast(),
            teacher_pretrain: self.teacher_pretrain.as_ref().map(|b| b.cast()),
        }
    }

    /// `n / N` for the pools.
    pub fn ratio(&self) -> f64 {
        self.labeled.len() as f64 / self.unlabeled.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub labeled: f64,
    pub validation: f64,
    pub test: f64,
    #[serde(default)]
    pub pretrain: f64,
}

impl Default for SplitFractions {
    /// 20 / 990 / 200 / 790 rows out of 2000.
    fn default() -> Self {
        Self {
            labeled: 0.01,
            validation: 0.10,
            test: 0.395,
            pretrain: 0.0,
        }
    }
}

impl SplitFractions {
    fn counts(&self, total: usize) -> Result<[usize; 5]> {
        let fr = [self.labeled, self.validation, self.test, self.pretrain];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || fr.iter().sum::<f64>() >= 1.0 {
            return Err(Error::invalid("fractions", "each in [0,1] and summing below 1"));
        }
        let c: Vec<usize> = fr.iter().map(|f| (f * total as f64).round() as usize).collect();
        let used: usize = c.iter().sum();
        if used >= total || c[0] == 0 || c[2] == 0 {
            return Err(Error::invalid("fractions", "labeled, unlabeled and test splits must be non-empty"));
        }
        Ok([c[0], total - used, c[1], c[2], c[3]])
    }

    /// Partition `pool` with a seeded permutation.
    pub fn split<T: Scalar>(&self, pool: &LabeledBatch<T>, key: StreamKey) -> Result<DataSplit<T>> {
        let [n_lab, n_unl, n_val, n_test, n_pre] = self.counts(pool.len())?;
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(&mut key.rng(StreamRole::Split));
        let mut rest = idx.as_slice();
        let mut take = |k: usize| {
            let (a, b) = rest.split_at(k);
            rest = b;
            a.to_vec()
        };
        let lab = take(n_lab);
        let unl = take(n_unl);
        let val = take(n_val);
        let test = take(n_test);
        let pre = take(n_pre);
        Ok(DataSplit {
            labeled: pool.select(&lab),
            unlabeled: pool.select(&unl).hide_labels(),
            validation: (n_val > 0).then(|| pool.select(&val)),
            test: pool.select(&test),
            teacher_pretrain: (n_pre > 0).then(|| pool.select(&pre)),
        })
    }
}

/// Which side of the clean-label threshold is group A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroupConvention {
    /// Group A = the `1 − τ` fraction with the smallest clean labels.
    #[default]
    BottomCleanLabel,
    /// Group A = the `τ` fraction below the τ-quantile of the projection.
    ProjectionQuantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub m: usize,
    pub total: usize,
    pub tau: f64,
    pub mu: f64,
    pub group_indicator: bool,
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default)]
    pub convention: GroupConvention,
    #[serde(default)]
    pub fractions: SplitFractions,
}

impl SyntheticSpec {
    /// Two-group defaults with the group feature appended.
    pub fn with_indicator(mu: f64, seed: u64) -> Self {
        Self {
            m: 10,
            total: 2000,
            tau: 0.2,
            mu,
            group_indicator: true,
            noise_std: 1.0,
            seed,
            convention: GroupConvention::BottomCleanLabel,
            fractions: SplitFractions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid("tau", format!("{} not in (0, 1)", self.tau)));
        }
        if self.total < 10 {
            return Err(Error::invalid("total", "need at least 10 samples"));
        }
        if self.m == 0 {
            return Err(Error::invalid("m", "need at least one feature"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std", "must be positive"));
        }
        if !self.mu.is_finite() {
            return Err(Error::invalid("mu", "must be finite"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.m + usize::from(self.group_indicator)
    }

    fn group_a_count(&self) -> usize {
        let frac = match self.convention {
            GroupConvention::BottomCleanLabel => 1.0 - self.tau,
            GroupConvention::ProjectionQuantile => self.tau,
        };
        (frac * self.total as f64 - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Clone)]
pub struct TwoGroupData {
    pub split: DataSplit<f64>,
    /// True weights; zero on the group feature, zero bias.
    pub w_star: ParamVector<f64>,
    /// Every generated row before splitting.
    pub pool: LabeledBatch<f64>,
}

impl TwoGroupData {
    /// Predicts the clean label: exact for group A, biased by `μ` on group B.
    pub fn teacher(&self) -> LinearTeacher<f64> {
        LinearTeacher::new(self.w_star.clone())
    }
}

/// Indices `0..len` ordered by value, ties by position.
fn stable_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

pub fn gen_two_group(spec: &SyntheticSpec) -> Result<TwoGroupData> {
    spec.validate()?;
    let key = StreamKey::new(spec.seed, 0);
    let mut rng = key.rng(StreamRole::Data);
    let m = spec.m;
    let w: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let mut xs = Vec::with_capacity(spec.total * m);
    for _ in 0..spec.total * m {
        xs.push(rng.sample::<f64, _>(StandardNormal));
    }
    let proj: Vec<f64> = xs.chunks_exact(m).map(|x| dot(x, &w)).collect();
    let noise: Vec<f64> = (0..spec.total)
        .map(|_| spec.noise_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let shift = Normal::new(spec.mu, 1.0).map_err(|e| Error::invalid("mu", e.to_string()))?;
    let shifts: Vec<f64> = (0..spec.total).map(|_| shift.sample(&mut rng)).collect();

    let order = stable_order(&proj);
    if proj[order[0]] == proj[order[spec.total - 1]] {
        return Err(Error::Degenerate("all projections are equal"));
    }
    let n_a = spec.group_a_count();
    let mut groups = vec![GROUP_B; spec.total];
    for &i in &order[..n_a] {
        groups[i] = GROUP_A;
    }

    let dim = spec.feature_dim();
    let mut features = Vec::with_capacity(spec.total * dim);
    let mut labels = Vec::with_capacity(spec.total);
    for i in 0..spec.total {
        features.extend_from_slice(&xs[i * m..(i + 1) * m]);
        if spec.group_indicator {
            features.push(if groups[i] == GROUP_B { 1.0 } else { 0.0 });
        }
        let b_shift = if groups[i] == GROUP_B { shifts[i] } else { 0.0 };
        labels.push(proj[i] + noise[i] + b_shift);
    }
    let mut w_star = w;
    if spec.group_indicator {
        w_star.push(0.0);
    }
    let pool = LabeledBatch::new(dim, features, labels, Some(groups))?;
    let split = spec.fractions.split(&pool, key)?;
    Ok(TwoGroupData {
        split,
        w_star: ParamVector::new(w_star, 0.0),
        pool,
    })
}

/// `y = x·w* + ε`, `x ~ N(0, I_d)`, `ε ~ N(0, noise_var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLinearModel {
    pub w_star: ParamVector<f64>,
    pub noise_var: f64,
}

impl GaussianLinearModel {
    pub fn dim(&self) -> usize {
        self.w_star.dim()
    }

    pub fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R, x: &mut [f64]) -> f64 {
        for v in x.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let eps: f64 = rng.sample(StandardNormal);
        dot(x, self.w_star.weights()) + self.w_star.bias() + self.noise_var.sqrt() * eps
    }

    pub fn sample_labeled<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> LabeledBatch<f64> {
        let d = self.dim();
        let mut features = vec![0.0; n * d];
        let labels = features.chunks_exact_mut(d).map(|x| self.sample_row(rng, x)).collect();
        LabeledBatch::new(d, features, labels, None).expect("generated batch is valid")
    }

    /// Unlabeled draw; the true labels stay attached for oracles only.
    pub fn sample_unlabeled<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> UnlabeledBatch<f64> {
        self.sample_labeled(rng, n).hide_labels()
    }

    pub fn feature_cov(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    /// `∇L(w) = (w − w*, b − b*)` for identity feature covariance.
    pub fn population_gradient<T: Scalar>(&self, w: &ParamVector<T>) -> Gradient<T> {
        w.sub(&self.w_star.cast()).expect("same shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G1Spec {
    pub d: usize,
    pub n: usize,
    pub big_n: usize,
    /// Teacher bias along the first coordinate.
    pub b: f64,
    pub sigma_zeta_sq: f64,
    pub sigma_star_sq: f64,
    pub seed: u64,
    #[serde(default = "default_g1_holdout")]
    pub n_val: usize,
    #[serde(default = "default_g1_holdout")]
    pub n_test: usize,
}

fn default_g1_holdout() -> usize {
    1000
}

impl G1Spec {
    pub fn new(n: usize, big_n: usize, sigma_zeta_sq: f64, b: f64, seed: u64) -> Self {
        Self {
            d: 10,
            n,
            big_n,
            b,
            sigma_zeta_sq,
            sigma_star_sq: 0.01,
            seed,
            n_val: default_g1_holdout(),
            n_test: default_g1_holdout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 || self.big_n == 0 {
            return Err(Error::invalid("g1", "d, n and N must be positive"));
        }
        if !(self.sigma_zeta_sq >= 0.0 && self.sigma_star_sq >= 0.0) {
            return Err(Error::invalid("g1", "variances must be non-negative"));
        }
        if !self.b.is_finite() {
            return Err(Error::invalid("b", "must be finite"));
        }
        Ok(())
    }

    pub fn ratio(&self) -> f64 {
        self.n as f64 / self.big_n as f64
    }

    /// Teacher error `E(y − f(x))² = b² + σ_ζ² + σ_*²` for unit-variance features.
    pub fn teacher_error(&self) -> f64 {
        self.b * self.b + self.sigma_zeta_sq + self.sigma_star_sq
    }
}

#[derive(Debug, Clone)]
pub struct G1Data {
    pub split: DataSplit<f64>,
    pub teacher: NoisyLinearTeacher<f64>,
    pub model: GaussianLinearModel,
}

impl G1Data {
    pub fn w_star(&self) -> &ParamVector<f64> {
        &self.model.w_star
    }
}

/// Linear-Gaussian data with teacher `f(x) = x·(w* + b e₁) + ζ`.
pub fn gen_g1_model(spec: &G1Spec) -> Result<G1Data> {
    spec.validate()?;
    let key = StreamKey::new(spec.seed, 0);
    let mut rng = key.rng(StreamRole::Data);
    let w: Vec<f64> = (0..spec.d).map(|_| rng.sample(StandardNormal)).collect();
    let model = GaussianLinearModel {
        w_star: ParamVector::new(w.clone(), 0.0),
        noise_var: spec.sigma_star_sq,
    };
    let mut tw = w;
    tw[0] += spec.b;
    let teacher = NoisyLinearTeacher::new(
        ParamVector::new(tw, 0.0),
        spec.sigma_zeta_sq.sqrt(),
        key.noise_key(StreamRole::TeacherNoise),
    );
    let labeled = model.sample_labeled(&mut rng, spec.n);
    let unlabeled = model.sample_unlabeled(&mut rng, spec.big_n);
    let validation = (spec.n_val > 0).then(|| model.sample_labeled(&mut rng, spec.n_val));
    let test = model.sample_labeled(&mut rng, spec.n_test.max(1));
    Ok(G1Data {
        split: DataSplit {
            labeled,
            unlabeled,
            validation,
            test,
            teacher_pretrain: None,
        },
        teacher,
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub features: Vec<String>,
    pub target: String,
    #[serde(default)]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRejection {
    /// 1-based line number in the file, header = line 1.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub feature_names: Vec<String>,
    /// Row-major features.
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub groups: Option<Vec<u32>>,
    pub rejected: Vec<RowRejection>,
}

impl CsvTable {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn to_batch(&self) -> Result<LabeledBatch<f64>> {
        LabeledBatch::new(self.dim(), self.features.clone(), self.targets.clone(), self.groups.clone())
    }
}

fn parse_group(s: &str) -> Option<u32> {
    match s.trim() {
        "A" | "a" => Some(GROUP_A),
        "B" | "b" => Some(GROUP_B),
        t => t.parse().ok(),
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<CsvTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Csv(format!("missing column `{name}`")))
    };
    let feat_idx: Vec<usize> = schema.features.iter().map(|f| col(f)).collect::<Result<_>>()?;
    if feat_idx.is_empty() {
        return Err(Error::invalid("features", "schema lists no feature columns"));
    }
    let target_idx = col(&schema.target)?;
    let group_idx = schema.group.as_deref().map(col).transpose()?;

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut groups = group_idx.map(|_| Vec::new());
    let mut rejected = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowRejection { line, reason: e.to_string() });
                continue;
            }
        };
        let num = |j: usize| -> std::result::Result<f64, String> {
            let cell = rec.get(j).unwrap_or("").trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("unparseable cell `{cell}` in column {}", &headers[j])),
            }
        };
        let row: std::result::Result<Vec<f64>, String> = feat_idx.iter().map(|&j| num(j)).collect();
        let parsed = row.and_then(|r| num(target_idx).map(|t| (r, t))).and_then(|(r, t)| {
            match group_idx {
                Some(g) => parse_group(rec.get(g).unwrap_or(""))
                    .map(|tag| (r, t, Some(tag)))
                    .ok_or_else(|| format!("unparseable group `{}`", rec.get(g).unwrap_or(""))),
                None => Ok((r, t, None)),
            }
        });
        match parsed {
            Ok((r, t, g)) => {
                features.extend(r);
                targets.push(t);
                if let (Some(gs), Some(tag)) = (groups.as_mut(), g) {
                    gs.push(tag);
                }
            }
            Err(reason) => rejected.push(RowRejection { line, reason }),
        }
    }
    if targets.is_empty() {
        return Err(Error::EmptyData("csv contains no valid rows".into()));
    }
    Ok(CsvTable {
        feature_names: schema.features.clone(),
        features,
        targets,
        groups,
        rejected,
    })
}

/// Tags the bottom `τ` fraction by target as group A, ties in row order.
pub fn split_by_target_quantile(table: &CsvTable, tau: f64) -> Result<CsvTable> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid("tau", format!("{tau} not in (0, 1)")));
    }
    let order = stable_order(&table.targets);
    let n = table.len();
    if table.targets[order[0]] == table.targets[order[n - 1]] {
        return Err(Error::Degenerate("constant target"));
    }
    let n_a = (tau * n as f64 - 1e-9).ceil() as usize;
    let mut groups = vec![GROUP_B; n];
    for &i in &order[..n_a] {
        groups[i] = GROUP_A;
    }
    Ok(CsvTable {
        groups: Some(groups),
        ..table.clone()
    })
}

/// Per-feature affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for x in rows {
            n += 1;
            for j in 0..dim {
                let delta = x[j] - mean[j];
                mean[j] += delta / n as f64;
                m2[j] += delta * (x[j] - mean[j]);
            }
        }
        let std = m2
            .iter()
            .map(|&s| {
                let sd = (s / n.max(1) as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, features: &mut [f64]) {
        let d = self.mean.len();
        for x in features.chunks_exact_mut(d) {
            for j in 0..d {
                x[j] = (x[j] - self.mean[j]) / self.std[j];
            }
        }
    }
}

/// Splits a table and, when asked, standardizes every split with
/// statistics fitted on the labeled and unlabeled features.
pub fn split_table(table: &CsvTable, fractions: &SplitFractions, key: StreamKey, standardize: bool) -> Result<DataSplit<f64>> {
    let split = fractions.split(&table.to_batch()?, key)?;
    if !standardize {
        return Ok(split);
    }
    let d = table.dim();
    let st = Standardizer::fit(d, split.labeled.rows().chain(split.unlabeled.rows()));
    let fix_lab = |b: &LabeledBatch<f64>| -> Result<LabeledBatch<f64>> {
        let mut f = b.features().to_vec();
        st.apply(&mut f);
        LabeledBatch::new(d, f, b.labels().to_vec(), b.groups().map(|g| g.to_vec()))
    };
    let mut unl = split.unlabeled.features().to_vec();
    st.apply(&mut unl);
    let unlabeled = match split.unlabeled.oracle_labels() {
        Some(l) => LabeledBatch::new(d, unl, l.to_vec(), split.unlabeled.groups().map(|g| g.to_vec()))?.hide_labels(),
        None => UnlabeledBatch::new(d, unl, split.unlabeled.groups().map(|g| g.to_vec()))?,
    };
    Ok(DataSplit {
        labeled: fix_lab(&split.labeled)?,
        unlabeled,
        validation: split.validation.as_ref().map(fix_lab).transpose()?,
        test: fix_lab(&split.test)?,
        teacher_pretrain: split.teacher_pretrain.as_ref().map(fix_lab).transpose()?,
    })
}

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes every split as CSV rows `split,group,y,x0..x{d-1}`; readable with
/// [`load_csv`] using feature columns `x*`, target `y` and group `group`.
pub fn write_split_csv<W: Write>(split: &DataSplit<f64>, out: W) -> Result<()> {
    let d = split.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["split".to_string(), "group".to_string(), "y".to_string()];
    header.extend((0..d).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(|e| Error::Csv(e.to_string()))?;
    let mut emit = |name: &str, rows: &mut dyn Iterator<Item = &[f64]>, labels: &[f64], groups: Option<&[u32]>| -> Result<()> {
        for (i, x) in rows.enumerate() {
            let mut rec = vec![
                name.to_string(),
                groups.map(|g| g[i].to_string()).unwrap_or_default(),
                labels.get(i).map(|&y| fmt_real(y)).unwrap_or_default(),
            ];
            rec.extend(x.iter().map(|&v| fmt_real(v)));
            w.write_record(&rec).map_err(|e| Error::Csv(e.to_string()))?;
        }
        Ok(())
    };
    let lab = &split.labeled;
    emit("labeled", &mut lab.rows(), lab.labels(), lab.groups())?;
    let unl = &split.unlabeled;
    emit("unlabeled", &mut unl.rows(), unl.oracle_labels().unwrap_or(&[]), unl.groups())?;
    if let Some(v) = &split.validation {
        emit("validation", &mut v.rows(), v.labels(), v.groups())?;
    }
    emit("test", &mut split.test.rows(), split.test.labels(), split.test.groups())?;
    if let Some(p) = &split.teacher_pretrain {
        emit("pretrain", &mut p.rows(), p.labels(), p.groups())?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}
