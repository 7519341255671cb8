//! Percentile bootstrap, contrasts, equivalence testing and rank trends.
//!
//! Replicate `r` of a cell draws from ChaCha8 keyed by
//! `LE64(seed) ‖ LE64(cell) ‖ 0^16` on stream `r`, so a replicate's resample
//! depends only on `(seed, cell, r)`. The cell key separates independently
//! resampled cells; [`cell_key`] derives it from a label.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{map_indices, Execution};
use crate::stats::{average_ranks, quantile_sorted};

/// Name recorded in run configs for the resampling generator.
pub const RNG_FAMILY: &str = "chacha8-stream";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub seed: u64,
    pub level: f64,
    /// Resamples with |statistic| above this are excluded.
    pub exclusion_bound: f64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_resamples: 10_000,
            seed: 42,
            level: 0.95,
            exclusion_bound: 10.0,
            execution: Execution::default(),
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_resamples == 0 {
            return Err(Error::InvalidInput("n_resamples must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if !(self.exclusion_bound > 0.0) {
            return Err(Error::InvalidInput("exclusion bound must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub n_resamples: usize,
    pub n_excluded: usize,
    pub seed: u64,
}

/// Point estimate plus per-replicate values; `None` marks an excluded
/// resample. Index `r` is the replicate number, so two distributions from
/// the same run configuration line up replicate by replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub point: f64,
    pub replicates: Vec<Option<f64>>,
}

impl Distribution {
    pub fn retained(&self) -> Vec<f64> {
        self.replicates.iter().flatten().copied().collect()
    }

    pub fn n_excluded(&self) -> usize {
        self.replicates.iter().filter(|v| v.is_none()).count()
    }
}

/// Stable 64-bit FNV-1a hash of a cell label.
pub fn cell_key(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn replicate_rng(seed: u64, cell: u64, r: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&cell.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(r as u64);
    rng
}

/// Evaluates `statistic` on `n_resamples` with-replacement resamples.
pub fn bootstrap_replicates<T, S, F>(
    items: &[T],
    statistic: F,
    n_resamples: usize,
    seed: u64,
    cell: u64,
    execution: Execution,
) -> Vec<Option<S>>
where
    T: Clone + Sync,
    S: Send,
    F: Fn(&[T]) -> Option<S> + Sync + Send,
{
    let n = items.len();
    if n == 0 {
        return (0..n_resamples).map(|_| None).collect();
    }
    map_indices(n_resamples, execution, |r| {
        let mut rng = replicate_rng(seed, cell, r);
        let sample: Vec<T> = (0..n).map(|_| items[rng.gen_range(0..n)].clone()).collect();
        statistic(&sample)
    })
}

/// Applies the exclusion rule and the percentile interval.
pub fn summarize(dist: &Distribution, cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    cfg.validate()?;
    let total = dist.replicates.len();
    let mut kept: Vec<f64> = dist
        .replicates
        .iter()
        .flatten()
        .copied()
        .filter(|v| v.is_finite() && v.abs() <= cfg.exclusion_bound)
        .collect();
    let excluded = total - kept.len();
    if total == 0 || 2 * excluded > total {
        return Err(Error::TooManyExcluded { excluded, total });
    }
    kept.sort_by(f64::total_cmp);
    let alpha = (1.0 - cfg.level) / 2.0;
    Ok(BootstrapResult {
        point: dist.point,
        ci_low: quantile_sorted(&kept, alpha),
        ci_high: quantile_sorted(&kept, 1.0 - alpha),
        level: cfg.level,
        n_resamples: total,
        n_excluded: excluded,
        seed: cfg.seed,
    })
}

/// Marks replicates outside the exclusion rule as `None`.
pub fn apply_exclusion(values: Vec<Option<f64>>, bound: f64) -> Vec<Option<f64>> {
    values
        .into_iter()
        .map(|v| v.filter(|x| x.is_finite() && x.abs() <= bound))
        .collect()
}

/// Percentile bootstrap of a scalar statistic on one cell.
pub fn bootstrap<T, F>(items: &[T], statistic: F, cfg: &BootstrapConfig, cell: u64) -> Result<(BootstrapResult, Distribution)>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Option<f64> + Sync + Send,
{
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidInput("cannot bootstrap an empty sample".into()));
    }
    let point = statistic(items)
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Unstable("statistic undefined on the full sample".into()))?;
    let reps = bootstrap_replicates(items, &statistic, cfg.n_resamples, cfg.seed, cell, cfg.execution);
    let dist = Distribution {
        point,
        replicates: apply_exclusion(reps, cfg.exclusion_bound),
    };
    Ok((summarize(&dist, cfg)?, dist))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastResult {
    pub delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub excludes_zero: bool,
    pub n_excluded: usize,
}

/// Contrast `a - b` from two replicate-aligned distributions. A replicate
/// pair is excluded when either side was excluded.
pub fn contrast(a: &Distribution, b: &Distribution, level: f64) -> Result<ContrastResult> {
    let diffs = paired_differences(a, b)?;
    let total = a.replicates.len();
    let excluded = total - diffs.len();
    if 2 * excluded > total {
        return Err(Error::TooManyExcluded { excluded, total });
    }
    let alpha = (1.0 - level) / 2.0;
    let ci_low = quantile_sorted(&diffs, alpha);
    let ci_high = quantile_sorted(&diffs, 1.0 - alpha);
    Ok(ContrastResult {
        delta: a.point - b.point,
        ci_low,
        ci_high,
        excludes_zero: !(ci_low <= 0.0 && 0.0 <= ci_high),
        n_excluded: excluded,
    })
}

fn paired_differences(a: &Distribution, b: &Distribution) -> Result<Vec<f64>> {
    if a.replicates.len() != b.replicates.len() || a.replicates.is_empty() {
        return Err(Error::InvalidInput(
            "distributions must have the same positive number of replicates".into(),
        ));
    }
    let mut d: Vec<f64> = a
        .replicates
        .iter()
        .zip(&b.replicates)
        .filter_map(|(x, y)| Some((*x)? - (*y)?))
        .collect();
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Bootstraps both samples independently and contrasts the statistic.
pub fn pairwise_contrast<T, F>(a: &[T], b: &[T], statistic: F, cfg: &BootstrapConfig) -> Result<ContrastResult>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Option<f64> + Sync + Send,
{
    let (_, da) = bootstrap(a, &statistic, cfg, cell_key("contrast:a"))?;
    let (_, db) = bootstrap(b, &statistic, cfg, cell_key("contrast:b"))?;
    contrast(&da, &db, cfg.level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TostPair {
    pub a: String,
    pub b: String,
    pub delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub equivalent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TostResult {
    pub pass: bool,
    pub max_range: f64,
    pub delta: f64,
    pub pairs: Vec<TostPair>,
}

/// Two one-sided tests at 5% each: a pair is equivalent when the 90%
/// bootstrap interval of its difference lies inside (-delta, delta).
pub fn tost_equivalence(by_condition: &BTreeMap<String, Distribution>, delta: f64) -> Result<TostResult> {
    if by_condition.len() < 2 {
        return Err(Error::InvalidInput("TOST needs at least two conditions".into()));
    }
    if by_condition.values().any(|d| d.replicates.is_empty()) {
        return Err(Error::InvalidInput("missing bootstrap distribution".into()));
    }
    let names: Vec<&String> = by_condition.keys().collect();
    let mut pairs = Vec::new();
    let mut max_range: f64 = 0.0;
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let a = &by_condition[names[i]];
            let b = &by_condition[names[j]];
            let diffs = paired_differences(a, b)?;
            if diffs.is_empty() {
                return Err(Error::InvalidInput("no jointly retained replicates".into()));
            }
            let lo = quantile_sorted(&diffs, 0.05);
            let hi = quantile_sorted(&diffs, 0.95);
            max_range = max_range.max((a.point - b.point).abs());
            pairs.push(TostPair {
                a: names[i].clone(),
                b: names[j].clone(),
                delta: a.point - b.point,
                ci_low: lo,
                ci_high: hi,
                equivalent: -delta < lo && hi < delta,
            });
        }
    }
    Ok(TostResult {
        pass: pairs.iter().all(|p| p.equivalent),
        max_range,
        delta,
        pairs,
    })
}

/// Range of point estimates across conditions.
pub fn point_range(points: &[f64]) -> f64 {
    let max = points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = points.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Spearman correlation with average ranks for ties.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput("need two equal-length series of length >= 2".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mx = rx.iter().sum::<f64>() / rx.len() as f64;
    let my = ry.iter().sum::<f64>() / ry.len() as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidInput("zero rank variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Supported when the whole interval lies below optimal efficiency.
pub fn h1_test(result: &BootstrapResult) -> bool {
    result.ci_high < 1.0
}
