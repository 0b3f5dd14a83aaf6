//! Summary statistics and Monte-Carlo standard errors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Standard error of the mean; zero for fewer than two values.
    pub se: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean, sample standard deviation and standard error.
pub fn mean_se(values: &[f64]) -> MeanSe {
    let mut w = Welford::default();
    values.iter().for_each(|&v| w.push(v));
    w.summary()
}

/// Streaming mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two values.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn summary(&self) -> MeanSe {
        let std = self.variance().sqrt();
        MeanSe {
            mean: self.mean,
            se: if self.n < 2 { 0.0 } else { std / (self.n as f64).sqrt() },
            std,
            n: self.n,
        }
    }
}

/// Per-coordinate streaming mean and variance of vector draws.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorWelford {
    coords: Vec<Welford>,
}

impl VectorWelford {
    pub fn new(dim: usize) -> Self {
        Self {
            coords: vec![Welford::default(); dim],
        }
    }

    pub fn push(&mut self, v: &[f64]) {
        for (w, &x) in self.coords.iter_mut().zip(v) {
            w.push(x);
        }
    }

    pub fn summaries(&self) -> Vec<MeanSe> {
        self.coords.iter().map(Welford::summary).collect()
    }
}

/// Delete-one-block jackknife: `leave_out(b)` is the statistic recomputed
/// without block `b`. Returns the standard error.
pub fn block_jackknife_se(blocks: usize, leave_out: impl Fn(usize) -> f64) -> f64 {
    assert!(blocks >= 2, "jackknife needs at least two blocks");
    let vals: Vec<f64> = (0..blocks).map(leave_out).collect();
    let mean = vals.iter().sum::<f64>() / blocks as f64;
    let ss: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum();
    ((blocks - 1) as f64 / blocks as f64 * ss).sqrt()
}

pub const JACKKNIFE_BLOCKS: usize = 50;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct PairSums {
    count: f64,
    gg: f64,
    gd: f64,
    dd: f64,
}

/// Moments of paired vector draws `(g_k, d_k)` sufficient for the trace of
/// `Cov(g + λ d)` at every λ, accumulated in round-robin blocks for the
/// jackknife.
///
/// Optionally centred at a known mean `μ_g` (e.g. the population gradient),
/// in which case the statistic is `E‖g + λd − μ_g‖²` with `E d = 0` assumed
/// and no mean is estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedTraceMoments {
    dim: usize,
    blocks: usize,
    next: usize,
    sums: Vec<PairSums>,
    sum_g: Vec<Vec<f64>>,
    sum_d: Vec<Vec<f64>>,
    centre: Option<Vec<f64>>,
}

impl PairedTraceMoments {
    pub fn new(dim: usize, blocks: usize, centre: Option<Vec<f64>>) -> Self {
        assert!(blocks >= 2);
        if let Some(c) = &centre {
            assert_eq!(c.len(), dim);
        }
        Self {
            dim,
            blocks,
            next: 0,
            sums: vec![PairSums::default(); blocks],
            sum_g: vec![vec![0.0; dim]; blocks],
            sum_d: vec![vec![0.0; dim]; blocks],
            centre,
        }
    }

    pub fn count(&self) -> usize {
        self.sums.iter().map(|s| s.count as usize).sum()
    }

    pub fn push(&mut self, g: &[f64], d: &[f64]) {
        debug_assert_eq!(g.len(), self.dim);
        let b = self.next;
        self.next = (self.next + 1) % self.blocks;
        let s = &mut self.sums[b];
        s.count += 1.0;
        let mut gg = 0.0;
        let mut gd = 0.0;
        let mut dd = 0.0;
        for j in 0..self.dim {
            let gj = match &self.centre {
                Some(c) => g[j] - c[j],
                None => g[j],
            };
            gg += gj * gj;
            gd += gj * d[j];
            dd += d[j] * d[j];
            self.sum_g[b][j] += gj;
            self.sum_d[b][j] += d[j];
        }
        s.gg += gg;
        s.gd += gd;
        s.dd += dd;
    }

    /// Statistic over every block except `skip`.
    fn stat(&self, lambda: f64, skip: Option<usize>) -> f64 {
        let mut n = 0.0;
        let (mut gg, mut gd, mut dd) = (0.0, 0.0, 0.0);
        let mut sg = vec![0.0; self.dim];
        let mut sd = vec![0.0; self.dim];
        for b in (0..self.blocks).filter(|&b| Some(b) != skip) {
            let s = &self.sums[b];
            n += s.count;
            gg += s.gg;
            gd += s.gd;
            dd += s.dd;
            for j in 0..self.dim {
                sg[j] += self.sum_g[b][j];
                sd[j] += self.sum_d[b][j];
            }
        }
        let second = gg + 2.0 * lambda * gd + lambda * lambda * dd;
        if self.centre.is_some() {
            return second / n;
        }
        let mean_sq: f64 = (0..self.dim)
            .map(|j| {
                let m = sg[j] + lambda * sd[j];
                m * m
            })
            .sum();
        (second - mean_sq / n) / (n - 1.0)
    }

    /// Estimate of `tr Cov(g + λd)` (or `E‖g + λd − μ_g‖²` when centred)
    /// with its jackknife standard error.
    pub fn estimate(&self, lambda: f64) -> (f64, f64) {
        let est = self.stat(lambda, None);
        let se = block_jackknife_se(self.blocks, |b| self.stat(lambda, Some(b)));
        (est, se)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn mean_se_basic() {
        let s = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.se - s.std / 2.0).abs() < 1e-12);
        assert_eq!(mean_se(&[7.0]).se, 0.0);
    }

    #[test]
    fn jackknife_of_mean_matches_classical_se() {
        // with one value per block the jackknife SE of the mean is exact
        let v: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let n = v.len() as f64;
        let total: f64 = v.iter().sum();
        let se = block_jackknife_se(50, |b| (total - v[b]) / (n - 1.0));
        assert!((se - mean_se(&v).se).abs() < 1e-12);
    }

    #[test]
    fn trace_moments_match_direct_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..400)
            .map(|_| {
                let g: Vec<f64> = (0..3).map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal)).collect();
                let d: Vec<f64> = (0..3).map(|j| 0.5 * g[j] + rng.sample::<f64, _>(StandardNormal)).collect();
                (g, d)
            })
            .collect();
        let mut acc = PairedTraceMoments::new(3, 50, None);
        draws.iter().for_each(|(g, d)| acc.push(g, d));
        for lambda in [0.0, 0.3, 1.0] {
            let vs: Vec<Vec<f64>> = draws.iter().map(|(g, d)| (0..3).map(|j| g[j] + lambda * d[j]).collect()).collect();
            let direct: f64 = (0..3)
                .map(|j| {
                    let col: Vec<f64> = vs.iter().map(|v| v[j]).collect();
                    let s = mean_se(&col);
                    s.std * s.std
                })
                .sum();
            let (est, se) = acc.estimate(lambda);
            assert!((est - direct).abs() < 1e-9 * direct);
            assert!(se > 0.0);
        }
    }

    #[test]
    fn centred_moments() {
        let mut acc = PairedTraceMoments::new(1, 2, Some(vec![1.0]));
        acc.push(&[2.0], &[0.0]);
        acc.push(&[0.0], &[1.0]);
        // (1² + 1²)/2 at λ=0; (1² + 0²)/2 at λ=1
        assert_eq!(acc.estimate(0.0).0, 1.0);
        assert_eq!(acc.estimate(1.0).0, 0.5);
    }
}
