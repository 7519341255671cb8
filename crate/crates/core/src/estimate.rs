//! Single-cell estimation: trials → ratings → corrected counts → Type-1
//! statistics → meta-d' fit, plus the bootstrap that re-runs that chain on
//! every resample with the binning scheme held fixed.

use serde::{Deserialize, Serialize};

use crate::binning::{assign_rating, hautus_correct, BinningScheme, RatingCounts};
use crate::error::Result;
use crate::inference::{apply_exclusion, bootstrap_replicates, summarize, BootstrapConfig, BootstrapResult, Distribution};
use crate::metad::{fit_meta_d_with, FitOptions, MetaDFit};
use crate::metrics::Scored;
use crate::sdt::{compute_type1_with_s, Type1Stats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFit {
    /// Hautus-corrected counts.
    pub counts: RatingCounts,
    pub type1: Type1Stats,
    pub fit: MetaDFit,
}

impl CellFit {
    pub fn m_ratio(&self) -> f64 {
        self.fit.m_ratio
    }
}

/// `(rating, correct)` per trial under a fixed scheme.
pub fn rate_trials<T: Scored>(trials: &[T], scheme: &BinningScheme) -> Vec<(usize, bool)> {
    trials
        .iter()
        .map(|t| (assign_rating(t.nlp(), scheme), t.correct()))
        .collect()
}

pub fn fit_rated(k: usize, rated: &[(usize, bool)], s: f64, options: &FitOptions) -> Result<CellFit> {
    if rated.is_empty() {
        return Err(crate::Error::InvalidInput("cell has no trials".into()));
    }
    let counts = hautus_correct(&RatingCounts::from_ratings(k, rated.iter().copied()))?;
    let type1 = compute_type1_with_s(&counts, s)?;
    let fit = fit_meta_d_with(&counts, s, options)?;
    Ok(CellFit { counts, type1, fit })
}

pub fn fit_cell<T: Scored>(trials: &[T], scheme: &BinningScheme, s: f64) -> Result<CellFit> {
    fit_rated(scheme.k, &rate_trials(trials, scheme), s, &FitOptions::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellBootstrap {
    pub m_ratio: BootstrapResult,
    pub meta_d: BootstrapResult,
    pub d_prime: BootstrapResult,
    /// Replicate-aligned distributions; a replicate excluded for M is
    /// excluded in all three.
    pub m_dist: Distribution,
    pub meta_d_dist: Distribution,
    pub d_prime_dist: Distribution,
}

/// Bootstraps M-ratio, meta-d' and d' for one cell. Each resample redoes
/// counts, correction, Type-1 statistics and the fit; resamples whose fit
/// fails or whose |M| exceeds the exclusion bound are dropped from all
/// three distributions.
pub fn bootstrap_cell(
    rated: &[(usize, bool)],
    k: usize,
    s: f64,
    point: &CellFit,
    cfg: &BootstrapConfig,
    cell: u64,
) -> Result<CellBootstrap> {
    let options = FitOptions::default();
    let reps = bootstrap_replicates(
        rated,
        |sample: &[(usize, bool)]| {
            let f = fit_rated(k, sample, s, &options).ok()?;
            Some((f.fit.m_ratio, f.fit.meta_d, f.type1.d_prime))
        },
        cfg.n_resamples,
        cfg.seed,
        cell,
        cfg.execution,
    );
    let m = apply_exclusion(reps.iter().map(|r| r.map(|v| v.0)).collect(), cfg.exclusion_bound);
    let keep = |i: usize, v: f64| m[i].map(|_| v);
    let meta: Vec<Option<f64>> = reps.iter().enumerate().map(|(i, r)| r.and_then(|v| keep(i, v.1))).collect();
    let dp: Vec<Option<f64>> = reps.iter().enumerate().map(|(i, r)| r.and_then(|v| keep(i, v.2))).collect();
    let m_dist = Distribution {
        point: point.fit.m_ratio,
        replicates: m,
    };
    let meta_d_dist = Distribution {
        point: point.fit.meta_d,
        replicates: meta,
    };
    let d_prime_dist = Distribution {
        point: point.type1.d_prime,
        replicates: dp,
    };
    // the exclusion rule is defined on M; the other two only inherit it
    let unbounded = BootstrapConfig {
        exclusion_bound: f64::INFINITY,
        ..*cfg
    };
    Ok(CellBootstrap {
        m_ratio: summarize(&m_dist, cfg)?,
        meta_d: summarize(&meta_d_dist, &unbounded)?,
        d_prime: summarize(&d_prime_dist, &unbounded)?,
        m_dist,
        meta_d_dist,
        d_prime_dist,
    })
}
