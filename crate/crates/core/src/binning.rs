//! Confidence binning onto the 2K ordered rating scale and the rating-count
//! arrays (incorrect-class `n_r_s1`, correct-class `n_r_s2`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sorted_copy};
use crate::trials::TrialRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinStrategy {
    Quantile,
    EqualWidth,
}

impl std::fmt::Display for BinStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BinStrategy::Quantile => f.write_str("quantile"),
            BinStrategy::EqualWidth => f.write_str("equal_width"),
        }
    }
}

impl std::str::FromStr for BinStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(BinStrategy::Quantile),
            "equal_width" | "equal-width" => Ok(BinStrategy::EqualWidth),
            other => Err(Error::InvalidInput(format!("unknown bin strategy `{other}`"))),
        }
    }
}

/// The condition whose confidence distribution defined the edges.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCondition {
    pub model_id: Option<String>,
    pub dataset_id: Option<String>,
    pub temperature: Option<f64>,
}

/// Interior bin boundaries for a 2K-level rating scale.
///
/// `edges[K-1]` (0-based) is the Type-1 boundary: ratings `1..=K` are the
/// "predict incorrect" side, `K+1..=2K` the "predict correct" side.
/// Edges are non-decreasing; an edge equal to its predecessor (a mass point
/// in the reference sample) is listed in `collapsed` and leaves the bin
/// between them empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningScheme {
    pub k: usize,
    pub strategy: BinStrategy,
    pub edges: Vec<f64>,
    #[serde(default)]
    pub collapsed: Vec<usize>,
    #[serde(default)]
    pub reference: ReferenceCondition,
}

impl BinningScheme {
    pub fn new(k: usize, strategy: BinStrategy, edges: Vec<f64>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput(format!("K must be at least 2, got {k}")));
        }
        if edges.len() != 2 * k - 1 {
            return Err(Error::InvalidInput(format!(
                "expected {} edges for K={k}, got {}",
                2 * k - 1,
                edges.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidInput("non-finite bin edge".into()));
        }
        let mut collapsed = Vec::new();
        for j in 1..edges.len() {
            if edges[j] < edges[j - 1] {
                return Err(Error::InvalidInput("bin edges must be non-decreasing".into()));
            }
            if edges[j] == edges[j - 1] {
                collapsed.push(j);
            }
        }
        Ok(BinningScheme {
            k,
            strategy,
            edges,
            collapsed,
            reference: ReferenceCondition::default(),
        })
    }

    pub fn n_ratings(&self) -> usize {
        2 * self.k
    }

    pub fn with_reference(mut self, reference: ReferenceCondition) -> Self {
        self.reference = reference;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: BinningScheme = serde_json::from_str(text)?;
        // re-derive the collapse list from the edges
        let reference = parsed.reference.clone();
        Ok(BinningScheme::new(parsed.k, parsed.strategy, parsed.edges)?.with_reference(reference))
    }
}

/// Fits bin edges on the reference trials' confidence values.
pub fn fit_bins(trials: &[TrialRecord], k: usize, strategy: BinStrategy) -> Result<BinningScheme> {
    let values: Vec<f64> = trials.iter().map(|t| t.nlp).collect();
    fit_bins_values(&values, k, strategy)
}

/// Quantile edges sit at the `100 j / 2K` percentiles (linear
/// interpolation); equal-width edges split `[min, max]` into 2K intervals.
pub fn fit_bins_values(values: &[f64], k: usize, strategy: BinStrategy) -> Result<BinningScheme> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("K must be at least 2, got {k}")));
    }
    if values.is_empty() {
        return Err(Error::DegenerateBins("no reference values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite confidence value".into()));
    }
    let sorted = sorted_copy(values);
    let n_bins = 2 * k;
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if lo == hi {
        return Err(Error::DegenerateBins(format!(
            "all {} reference values equal {lo}",
            sorted.len()
        )));
    }
    let edges: Vec<f64> = match strategy {
        BinStrategy::Quantile => (1..n_bins)
            .map(|j| quantile_sorted(&sorted, j as f64 / n_bins as f64))
            .collect(),
        BinStrategy::EqualWidth => {
            let width = (hi - lo) / n_bins as f64;
            (1..n_bins).map(|j| lo + width * j as f64).collect()
        }
    };
    let scheme = BinningScheme::new(k, strategy, edges)?;

    let occupied = occupied_bins(&sorted, &scheme);
    if occupied < 2 {
        return Err(Error::DegenerateBins(format!(
            "only {occupied} occupied rating bin(s)"
        )));
    }
    if !scheme.collapsed.is_empty() {
        log::warn!(
            "bin edges collapsed at positions {:?} (mass points in the reference sample); {} of {} ratings occupied",
            scheme.collapsed,
            occupied,
            n_bins
        );
    }
    Ok(scheme)
}

fn occupied_bins(values: &[f64], scheme: &BinningScheme) -> usize {
    let mut seen = vec![false; scheme.n_ratings()];
    for &v in values {
        seen[assign_rating(v, scheme) - 1] = true;
    }
    seen.iter().filter(|&&s| s).count()
}

/// Rating in `1..=2K`: left-closed intervals, the top bin closed above.
#[inline]
pub fn assign_rating(nlp: f64, scheme: &BinningScheme) -> usize {
    scheme.edges.partition_point(|&e| e <= nlp) + 1
}

/// Confidence-by-accuracy rating counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingCounts {
    pub k: usize,
    /// Incorrect-trial counts per rating 1..=2K.
    pub n_r_s1: Vec<f64>,
    /// Correct-trial counts per rating 1..=2K.
    pub n_r_s2: Vec<f64>,
    pub corrected: bool,
}

impl RatingCounts {
    pub fn new(k: usize, n_r_s1: Vec<f64>, n_r_s2: Vec<f64>, corrected: bool) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput(format!("K must be at least 2, got {k}")));
        }
        if n_r_s1.len() != 2 * k || n_r_s2.len() != 2 * k {
            return Err(Error::InvalidInput(format!(
                "count arrays must have length {}",
                2 * k
            )));
        }
        if n_r_s1.iter().chain(&n_r_s2).any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidInput("counts must be finite and non-negative".into()));
        }
        if corrected && n_r_s1.iter().chain(&n_r_s2).any(|&c| c < 0.5) {
            return Err(Error::InvalidInput("corrected counts must be at least 0.5".into()));
        }
        Ok(RatingCounts {
            k,
            n_r_s1,
            n_r_s2,
            corrected,
        })
    }

    /// Tallies `(rating, correct)` pairs; ratings are 1-based.
    pub fn from_ratings<I>(k: usize, ratings: I) -> Self
    where
        I: IntoIterator<Item = (usize, bool)>,
    {
        let mut n_r_s1 = vec![0.0; 2 * k];
        let mut n_r_s2 = vec![0.0; 2 * k];
        for (rating, correct) in ratings {
            if correct {
                n_r_s2[rating - 1] += 1.0;
            } else {
                n_r_s1[rating - 1] += 1.0;
            }
        }
        RatingCounts {
            k,
            n_r_s1,
            n_r_s2,
            corrected: false,
        }
    }

    pub fn total(&self) -> f64 {
        self.n_r_s1.iter().sum::<f64>() + self.n_r_s2.iter().sum::<f64>()
    }

    pub fn n_incorrect(&self) -> f64 {
        self.n_r_s1.iter().sum()
    }

    pub fn n_correct(&self) -> f64 {
        self.n_r_s2.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        RatingCounts {
            k: self.k,
            n_r_s1: self.n_r_s1.iter().map(|c| c * factor).collect(),
            n_r_s2: self.n_r_s2.iter().map(|c| c * factor).collect(),
            corrected: self.corrected,
        }
    }
}

pub fn build_counts(trials: &[TrialRecord], scheme: &BinningScheme) -> Result<RatingCounts> {
    if trials.is_empty() {
        return Err(Error::InvalidInput("cannot build counts from an empty trial set".into()));
    }
    Ok(RatingCounts::from_ratings(
        scheme.k,
        trials.iter().map(|t| (assign_rating(t.nlp, scheme), t.correct)),
    ))
}

/// Log-linear correction: +0.5 to every cell of both arrays.
pub fn hautus_correct(counts: &RatingCounts) -> Result<RatingCounts> {
    if counts.corrected {
        return Err(Error::AlreadyCorrected);
    }
    Ok(RatingCounts {
        k: counts.k,
        n_r_s1: counts.n_r_s1.iter().map(|c| c + 0.5).collect(),
        n_r_s2: counts.n_r_s2.iter().map(|c| c + 0.5).collect(),
        corrected: true,
    })
}

/// Corrects a single count array (used by callers working on one class).
pub fn hautus_correct_array(counts: &[f64]) -> Vec<f64> {
    counts.iter().map(|c| c + 0.5).collect()
}
