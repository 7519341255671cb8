//! Generative observer with known sensitivity, variance ratio and
//! metacognitive noise.
//!
//! Evidence `x` is drawn from `N(+d/2, 1/sigma_ratio)` for correct trials
//! and `N(-d/2, 1)` for incorrect ones. The emitted confidence keeps the
//! side of `c_gen` that `x` falls on, while its distance from `c_gen` is
//! read out through Gaussian noise:
//!
//! `nlp = c_gen + sign(x - c_gen) * |x + e - c_gen|`, `e ~ N(0, sigma_meta)`.
//!
//! With `sigma_meta = 0` this is the ideal observer (`nlp = x`). Adding the
//! noise directly to `x` would not do: the Type-1 split and the confidence
//! ratings would then both be read from the same noisy value, which is
//! again an ideal observer (with a smaller d') and leaves M at 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binning::{fit_bins, BinStrategy};
use crate::error::{Error, Result};
use crate::estimate::{bootstrap_cell, fit_cell, rate_trials};
use crate::inference::{cell_key, BootstrapConfig};
use crate::par::{map_slice, Execution};
use crate::sdt::gaussian_cdf;
use crate::stats::{mean, sample_sd};
use crate::trials::TrialRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSpec {
    pub d_gen: f64,
    #[serde(default)]
    pub c_gen: f64,
    #[serde(default = "one")]
    pub sigma_ratio: f64,
    #[serde(default)]
    pub sigma_meta: f64,
    #[serde(default = "half")]
    pub base_rate: f64,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl ObserverSpec {
    pub fn ideal(d_gen: f64, n: usize, seed: u64) -> Self {
        ObserverSpec {
            d_gen,
            c_gen: 0.0,
            sigma_ratio: 1.0,
            sigma_meta: 0.0,
            base_rate: 0.5,
            n,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.d_gen, self.c_gen, self.sigma_ratio, self.sigma_meta, self.base_rate]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("observer parameters must be finite".into()));
        }
        if self.sigma_ratio <= 0.0 {
            return Err(Error::InvalidInput("sigma_ratio must be positive".into()));
        }
        if self.sigma_meta < 0.0 {
            return Err(Error::InvalidInput("sigma_meta must be non-negative".into()));
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return Err(Error::InvalidInput("base_rate must lie in (0, 1)".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidInput("n must be at least 1".into()));
        }
        Ok(())
    }

    /// Expected rate at which the side of `c_gen` agrees with correctness.
    pub fn expected_agreement(&self) -> f64 {
        let h = self.d_gen / 2.0;
        self.base_rate * gaussian_cdf((h - self.c_gen) * self.sigma_ratio)
            + (1.0 - self.base_rate) * gaussian_cdf(h + self.c_gen)
    }
}

/// Grouping labels stamped onto simulated records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLabels {
    pub model_id: String,
    pub dataset_id: String,
    pub domain: String,
    pub temperature: f64,
    pub question_prefix: String,
}

impl Default for TrialLabels {
    fn default() -> Self {
        TrialLabels {
            model_id: "sim".into(),
            dataset_id: "sim".into(),
            domain: "unclassified".into(),
            temperature: 1.0,
            question_prefix: "q".into(),
        }
    }
}

pub fn simulate(spec: &ObserverSpec) -> Result<Vec<TrialRecord>> {
    simulate_labeled(spec, &TrialLabels::default())
}

pub fn simulate_labeled(spec: &ObserverSpec, labels: &TrialLabels) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.sigma_meta).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let half = spec.d_gen / 2.0;
    Ok((0..spec.n)
        .map(|i| {
            let correct = rng.gen::<f64>() < spec.base_rate;
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = if correct {
                half + z / spec.sigma_ratio
            } else {
                -half + z
            };
            let e = noise.sample(&mut rng);
            let side = if x >= spec.c_gen { 1.0 } else { -1.0 };
            let nlp = spec.c_gen + side * (x + e - spec.c_gen).abs();
            TrialRecord {
                model_id: labels.model_id.clone(),
                dataset_id: labels.dataset_id.clone(),
                domain: labels.domain.clone(),
                temperature: labels.temperature,
                question_id: format!("{}{i}", labels.question_prefix),
                answer_text: None,
                nlp,
                correct,
            }
        })
        .collect())
}

/// A labelled block of simulated trials: one observer under one
/// model/dataset/domain/temperature label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cohort {
    pub model_id: String,
    #[serde(default = "default_dataset")]
    pub dataset_id: String,
    #[serde(default = "default_domain")]
    pub domain: String,
    #[serde(default = "one")]
    pub temperature: f64,
    /// Question ids are `{question_prefix}{i}`; cohorts of different models
    /// sharing a prefix share questions.
    #[serde(default = "default_prefix")]
    pub question_prefix: String,
    pub d_gen: f64,
    #[serde(default)]
    pub c_gen: f64,
    #[serde(default = "one")]
    pub sigma_ratio: f64,
    #[serde(default)]
    pub sigma_meta: f64,
    #[serde(default = "half")]
    pub base_rate: f64,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_dataset() -> String {
    "sim".into()
}

fn default_domain() -> String {
    "unclassified".into()
}

fn default_prefix() -> String {
    "q".into()
}

impl Cohort {
    pub fn spec(&self) -> ObserverSpec {
        ObserverSpec {
            d_gen: self.d_gen,
            c_gen: self.c_gen,
            sigma_ratio: self.sigma_ratio,
            sigma_meta: self.sigma_meta,
            base_rate: self.base_rate,
            n: self.n,
            seed: self.seed,
        }
    }

    pub fn labels(&self) -> TrialLabels {
        TrialLabels {
            model_id: self.model_id.clone(),
            dataset_id: self.dataset_id.clone(),
            domain: self.domain.clone(),
            temperature: self.temperature,
            question_prefix: self.question_prefix.clone(),
        }
    }
}

/// A set of cohorts, as read from a TOML document of `[[cohort]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortGrid {
    pub cohort: Vec<Cohort>,
}

impl CohortGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

pub fn simulate_cohorts(cohorts: &[Cohort]) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for c in cohorts {
        out.extend(simulate_labeled(&c.spec(), &c.labels())?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySettings {
    pub k: usize,
    pub strategy: BinStrategy,
    /// Simulated data sets per grid point; replicate `i` uses seed `seed + i`.
    pub replicates: usize,
    pub bootstrap: BootstrapConfig,
    /// Sample size of the reference run that fixes the population
    /// meta-d' and M when no closed form exists.
    pub reference_n: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for RecoverySettings {
    fn default() -> Self {
        RecoverySettings {
            k: 4,
            strategy: BinStrategy::Quantile,
            replicates: 20,
            bootstrap: BootstrapConfig {
                n_resamples: 1000,
                ..Default::default()
            },
            reference_n: 200_000,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub spec: ObserverSpec,
    pub target_meta_d: f64,
    pub target_m_ratio: f64,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub mean_meta_d: f64,
    pub bias: f64,
    pub sd: f64,
    pub mean_m_ratio: f64,
    /// Fraction of M-ratio intervals containing the target.
    pub coverage: f64,
    pub n_excluded: usize,
}

/// Population targets. The equal-variance ideal observer has meta-d' = d'
/// and M = 1 exactly; anything else is pinned by a large reference fit.
pub fn recovery_targets(spec: &ObserverSpec, settings: &RecoverySettings) -> Result<(f64, f64)> {
    if spec.sigma_meta == 0.0 && spec.sigma_ratio == 1.0 {
        return Ok((spec.d_gen, 1.0));
    }
    let reference = ObserverSpec {
        n: settings.reference_n,
        seed: spec.seed ^ 0x5eed_5eed,
        ..spec.clone()
    };
    let trials = simulate(&reference)?;
    let scheme = fit_bins(&trials, settings.k, settings.strategy)?;
    let cell = fit_cell(&trials, &scheme, 1.0)?;
    Ok((cell.fit.meta_d, cell.fit.m_ratio))
}

pub fn recovery_study(grid: &[ObserverSpec], settings: &RecoverySettings) -> Result<Vec<RecoveryRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("recovery grid is empty".into()));
    }
    if settings.replicates == 0 {
        return Err(Error::InvalidInput("replicates must be positive".into()));
    }
    grid.iter().map(|spec| recovery_row(spec, settings)).collect()
}

struct Replicate {
    meta_d: f64,
    m_ratio: f64,
    covered: bool,
    excluded: usize,
}

fn recovery_row(spec: &ObserverSpec, settings: &RecoverySettings) -> Result<RecoveryRow> {
    spec.validate()?;
    let (target_meta_d, target_m) = recovery_targets(spec, settings)?;
    let seeds: Vec<u64> = (0..settings.replicates as u64).map(|i| spec.seed.wrapping_add(i)).collect();
    // replicates run in parallel; each bootstrap inside runs sequentially
    let inner = BootstrapConfig {
        execution: Execution::Sequential,
        ..settings.bootstrap
    };
    let outcomes = map_slice(&seeds, settings.execution, |&seed| -> Result<Replicate> {
        let s = ObserverSpec { seed, ..spec.clone() };
        let trials = simulate(&s)?;
        let scheme = fit_bins(&trials, settings.k, settings.strategy)?;
        let rated = rate_trials(&trials, &scheme);
        let point = fit_cell(&trials, &scheme, 1.0)?;
        let boot = bootstrap_cell(&rated, settings.k, 1.0, &point, &inner, cell_key(&format!("recovery:{seed}")))?;
        Ok(Replicate {
            meta_d: point.fit.meta_d,
            m_ratio: point.fit.m_ratio,
            covered: boot.m_ratio.ci_low <= target_m && target_m <= boot.m_ratio.ci_high,
            excluded: boot.m_ratio.n_excluded,
        })
    });
    let ok: Vec<&Replicate> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(outcomes.into_iter().find_map(|o| o.err()).unwrap());
    }
    let meta: Vec<f64> = ok.iter().map(|r| r.meta_d).collect();
    let mean_meta_d = mean(&meta);
    Ok(RecoveryRow {
        spec: spec.clone(),
        target_meta_d,
        target_m_ratio: target_m,
        n_replicates: ok.len(),
        n_failed: outcomes.len() - ok.len(),
        mean_meta_d,
        bias: mean_meta_d - target_meta_d,
        sd: if meta.len() > 1 { sample_sd(&meta) } else { 0.0 },
        mean_m_ratio: mean(&ok.iter().map(|r| r.m_ratio).collect::<Vec<_>>()),
        coverage: ok.iter().filter(|r| r.covered).count() as f64 / ok.len() as f64,
        n_excluded: ok.iter().map(|r| r.excluded).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let spec = ObserverSpec::ideal(1.0, 500, 3);
        let a = simulate(&spec).unwrap();
        assert_eq!(a.len(), 500);
        assert_eq!(a, simulate(&spec).unwrap());
        assert_ne!(a, simulate(&ObserverSpec { seed: 4, ..spec }).unwrap());
        assert_eq!(a[7].question_id, "q7");
    }

    #[test]
    fn noise_never_moves_a_trial_across_the_criterion() {
        let base = ObserverSpec {
            c_gen: 0.3,
            ..ObserverSpec::ideal(1.2, 2000, 11)
        };
        let clean = simulate(&base).unwrap();
        let noisy = simulate(&ObserverSpec { sigma_meta: 1.0, ..base }).unwrap();
        for (a, b) in clean.iter().zip(&noisy) {
            assert_eq!(a.correct, b.correct);
            assert_eq!(a.nlp >= 0.3, b.nlp >= 0.3);
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        for bad in [
            ObserverSpec { n: 0, ..ObserverSpec::ideal(1.0, 10, 0) },
            ObserverSpec { sigma_ratio: 0.0, ..ObserverSpec::ideal(1.0, 10, 0) },
            ObserverSpec { sigma_meta: -1.0, ..ObserverSpec::ideal(1.0, 10, 0) },
            ObserverSpec { base_rate: 1.0, ..ObserverSpec::ideal(1.0, 10, 0) },
            ObserverSpec { d_gen: f64::NAN, ..ObserverSpec::ideal(1.0, 10, 0) },
        ] {
            assert!(simulate(&bad).is_err());
        }
    }
}
