//! Trial-level evaluation metrics around the meta-d' estimate.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::binning::{assign_rating, BinningScheme};
use crate::error::{Error, Result};
use crate::stats::{average_ranks, quantile_sorted, sorted_copy};
use crate::trials::TrialRecord;

/// Anything carrying a confidence score (log-probability) and a correctness
/// label.
pub trait Scored {
    fn nlp(&self) -> f64;
    fn correct(&self) -> bool;
}

impl Scored for TrialRecord {
    fn nlp(&self) -> f64 {
        self.nlp
    }
    fn correct(&self) -> bool {
        self.correct
    }
}

impl Scored for (f64, bool) {
    fn nlp(&self) -> f64 {
        self.0
    }
    fn correct(&self) -> bool {
        self.1
    }
}

impl<T: Scored> Scored for &T {
    fn nlp(&self) -> f64 {
        (**self).nlp()
    }
    fn correct(&self) -> bool {
        (**self).correct()
    }
}

pub const UNSTABLE_D_PRIME: f64 = 0.1;
pub const UNSTABLE_M_RATIO: f64 = 10.0;

pub fn m_ratio(meta_d: f64, d_prime: f64) -> Result<f64> {
    if !(d_prime.abs() >= crate::metad::MIN_ABS_D_PRIME) {
        return Err(Error::Unstable(format!("d' = {d_prime:e} is too close to zero")));
    }
    Ok(meta_d / d_prime)
}

/// Whether an (M-ratio, d') pair falls under the instability rule.
pub fn is_unstable(m: f64, d_prime: f64) -> bool {
    !(d_prime.abs() >= UNSTABLE_D_PRIME) || !(m.abs() <= UNSTABLE_M_RATIO)
}

fn confidence(nlp: f64) -> f64 {
    nlp.exp().clamp(0.0, 1.0)
}

/// Mann-Whitney estimate of P(conf_correct > conf_incorrect) with ties
/// counted as one half.
pub fn auroc2<T: Scored>(trials: &[T]) -> Result<f64> {
    let scores: Vec<f64> = trials.iter().map(|t| t.nlp()).collect();
    let labels: Vec<bool> = trials.iter().map(|t| t.correct()).collect();
    auroc_from(&scores, &labels)
}

/// AUROC on folded ratings: the rating side is treated as a prediction of
/// correctness and the distance of the rating from the scale midpoint as
/// the confidence in that prediction.
pub fn auroc2_folded<T: Scored>(trials: &[T], scheme: &BinningScheme) -> Result<f64> {
    let k = scheme.k;
    let mut scores = Vec::with_capacity(trials.len());
    let mut labels = Vec::with_capacity(trials.len());
    for t in trials {
        let r = assign_rating(t.nlp(), scheme);
        let says_correct = r > k;
        scores.push((r as f64 - (k as f64 + 0.5)).abs());
        labels.push(says_correct == t.correct());
    }
    auroc_from(&scores, &labels)
}

fn auroc_from(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&c| c).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(
            "AUROC needs at least one trial of each class".into(),
        ));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &c)| c).map(|(r, _)| r).sum();
    let n_pos = n_pos as f64;
    let u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg as f64))
}

/// Expected calibration error over equal-width bins of `exp(nlp)`.
pub fn ece<T: Scored>(trials: &[T], n_bins: usize) -> f64 {
    if trials.is_empty() || n_bins == 0 {
        return 0.0;
    }
    let mut conf = vec![0.0; n_bins];
    let mut hits = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for t in trials {
        let p = confidence(t.nlp());
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        conf[b] += p;
        hits[b] += if t.correct() { 1.0 } else { 0.0 };
        count[b] += 1;
    }
    let n = trials.len() as f64;
    (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (hits[b] - conf[b]).abs() / n)
        .sum()
}

pub fn brier<T: Scored>(trials: &[T]) -> f64 {
    if trials.is_empty() {
        return 0.0;
    }
    let sum: f64 = trials
        .iter()
        .map(|t| {
            let y = if t.correct() { 1.0 } else { 0.0 };
            (confidence(t.nlp()) - y).powi(2)
        })
        .sum();
    sum / trials.len() as f64
}

pub fn accuracy<T: Scored>(trials: &[T]) -> f64 {
    if trials.is_empty() {
        return 0.0;
    }
    trials.iter().filter(|t| t.correct()).count() as f64 / trials.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    /// Accuracy per confidence group, lowest confidence first.
    pub accuracies: Vec<f64>,
    pub counts: Vec<usize>,
    /// Set when tied quantile edges forced groups to merge.
    pub merged: bool,
    pub pass: bool,
}

pub fn strictly_increasing(values: &[f64]) -> bool {
    values.len() >= 2 && values.windows(2).all(|w| w[0] < w[1])
}

/// Splits trials at the nlp quantiles and checks that accuracy rises
/// strictly from group to group.
pub fn monotonicity_check<T: Scored>(trials: &[T], n_quantiles: usize) -> Result<Monotonicity> {
    if n_quantiles < 2 || trials.len() < n_quantiles {
        return Err(Error::InvalidInput(format!(
            "need at least {n_quantiles} trials and 2 groups"
        )));
    }
    let sorted = sorted_copy(&trials.iter().map(|t| t.nlp()).collect::<Vec<_>>());
    let mut edges: Vec<f64> = (1..n_quantiles)
        .map(|j| quantile_sorted(&sorted, j as f64 / n_quantiles as f64))
        .collect();
    let before = edges.len();
    edges.dedup();
    let merged = edges.len() < before;
    if merged {
        warn!("tied nlp quantiles: {} groups merged", before - edges.len());
    }
    let groups = edges.len() + 1;
    let mut hits = vec![0usize; groups];
    let mut counts = vec![0usize; groups];
    for t in trials {
        let g = edges.partition_point(|&e| e <= t.nlp());
        counts[g] += 1;
        hits[g] += t.correct() as usize;
    }
    let (accuracies, counts): (Vec<f64>, Vec<usize>) = hits
        .iter()
        .zip(&counts)
        .filter(|(_, &n)| n > 0)
        .map(|(&h, &n)| (h as f64 / n as f64, n))
        .unzip();
    let pass = strictly_increasing(&accuracies);
    Ok(Monotonicity {
        accuracies,
        counts,
        merged,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub coverage: f64,
    pub n: usize,
    pub accuracy: f64,
}

/// Selective accuracy when answering only the most confident fraction, for
/// coverages 0.1, 0.2, ..., 1.0. Ties keep input order.
pub fn risk_coverage<T: Scored>(trials: &[T]) -> Result<Vec<CoveragePoint>> {
    if trials.len() < 2 {
        return Err(Error::InvalidInput("risk-coverage needs at least 2 trials".into()));
    }
    let mut order: Vec<usize> = (0..trials.len()).collect();
    order.sort_by(|&a, &b| trials[b].nlp().total_cmp(&trials[a].nlp()));
    let mut prefix = Vec::with_capacity(order.len() + 1);
    prefix.push(0usize);
    for &i in &order {
        prefix.push(prefix.last().unwrap() + trials[i].correct() as usize);
    }
    Ok((1..=10)
        .map(|step| {
            let coverage = step as f64 / 10.0;
            let n = ((coverage * trials.len() as f64).round() as usize).clamp(1, trials.len());
            CoveragePoint {
                coverage,
                n,
                accuracy: prefix[n] as f64 / n as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub meta_d: f64,
    pub d_prime: f64,
    /// Absent when d' is too close to zero for the ratio to exist.
    pub m_ratio: Option<f64>,
    pub auroc2: f64,
    pub ece: f64,
    pub brier: f64,
    pub accuracy: f64,
    pub unstable: bool,
}

impl MetricBundle {
    pub fn compute<T: Scored>(trials: &[T], meta_d: f64, d_prime: f64, ece_bins: usize) -> Result<Self> {
        let m = m_ratio(meta_d, d_prime).ok();
        Ok(MetricBundle {
            meta_d,
            d_prime,
            m_ratio: m,
            auroc2: auroc2(trials)?,
            ece: ece(trials, ece_bins),
            brier: brier(trials),
            accuracy: accuracy(trials),
            unstable: m.is_none_or(|m| is_unstable(m, d_prime)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(nlp: f64, c: bool) -> (f64, bool) {
        (nlp, c)
    }

    #[test]
    fn m_ratio_examples() {
        assert!((m_ratio(1.361, 1.597).unwrap() - 0.852).abs() < 5e-4);
        assert!((m_ratio(1.474, 1.407).unwrap() - 1.048).abs() < 5e-4);
        assert_eq!(m_ratio(0.7, 0.7).unwrap(), 1.0);
        assert!(matches!(m_ratio(1.0, 1e-9), Err(Error::Unstable(_))));
    }

    /// Pair-enumeration oracle.
    fn auroc_pairs(trials: &[(f64, bool)]) -> f64 {
        let mut won = 0.0;
        let mut n = 0.0;
        for a in trials.iter().filter(|t| t.1) {
            for b in trials.iter().filter(|t| !t.1) {
                n += 1.0;
                won += if a.0 > b.0 {
                    1.0
                } else if a.0 == b.0 {
                    0.5
                } else {
                    0.0
                };
            }
        }
        won / n
    }

    #[test]
    fn auroc_examples() {
        let sep = [t(0.9, true), t(0.8, true), t(0.5, false), t(0.4, false)];
        assert_eq!(auroc2(&sep).unwrap(), 1.0);
        let flat = [t(0.3, true), t(0.3, false), t(0.3, true)];
        assert_eq!(auroc2(&flat).unwrap(), 0.5);
        let mixed = [t(3.0, true), t(1.0, true), t(2.0, false), t(0.0, false)];
        assert_eq!(auroc2(&mixed).unwrap(), 0.75);
        assert!(auroc2(&[t(1.0, true)]).is_err());
    }

    #[test]
    fn folded_auroc_on_ideal_ratings() {
        let scheme = BinningScheme::new(2, crate::binning::BinStrategy::EqualWidth, vec![-3.0, -2.0, -1.0]).unwrap();
        // rating 4 correct, rating 1 incorrect: both predictions right and confident
        let trials = [t(-0.5, true), t(-3.5, false), t(-2.5, true), t(-1.5, false)];
        assert_eq!(auroc2_folded(&trials, &scheme).unwrap(), 1.0);
    }

    #[test]
    fn ece_examples() {
        // every trial's p equals its bin accuracy
        let calibrated = [
            t(0.25f64.ln(), true),
            t(0.25f64.ln(), false),
            t(0.25f64.ln(), false),
            t(0.25f64.ln(), false),
        ];
        assert!(ece(&calibrated, 10) < 1e-12);
        let over = [t(0.0, true), t(0.0, false)];
        assert!((ece(&over, 10) - 0.5).abs() < 1e-12);
        // p = 0.15, 0.15 in bin 1 with accuracy 0.5; p = 0.95, 0.85 in bins 9 and 8
        let hand = [
            t(0.15f64.ln(), true),
            t(0.15f64.ln(), false),
            t(0.95f64.ln(), true),
            t(0.85f64.ln(), false),
        ];
        let want = 0.5 * (0.5f64 - 0.15).abs() + 0.25 * 0.05 + 0.25 * 0.85;
        assert!((ece(&hand, 10) - want).abs() < 1e-12);
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[t(0.0, true), t(0.0, true)]), 0.0);
        assert!((brier(&[t(0.5f64.ln(), true), t(0.5f64.ln(), false)]) - 0.25).abs() < 1e-15);
        let fx = [t(0.8f64.ln(), true), t(0.3f64.ln(), false)];
        assert!((brier(&fx) - 0.065).abs() < 1e-12);
    }

    #[test]
    fn strictness_rule() {
        assert!(strictly_increasing(&[0.314, 0.539, 0.690, 0.859]));
        assert!(!strictly_increasing(&[0.5, 0.5, 0.6, 0.7]));
        assert!(!strictly_increasing(&[0.859, 0.690, 0.539, 0.314]));
    }

    #[test]
    fn monotonicity_on_ordered_fixture() {
        // quartile q holds 4 trials with q+1 correct
        let mut trials = Vec::new();
        for q in 0..4 {
            for i in 0..4 {
                trials.push(t(q as f64 + i as f64 * 0.1, i <= q));
            }
        }
        let m = monotonicity_check(&trials, 4).unwrap();
        assert_eq!(m.counts, vec![4, 4, 4, 4]);
        assert_eq!(m.accuracies, vec![0.25, 0.5, 0.75, 1.0]);
        assert!(m.pass && !m.merged);
        let rev: Vec<_> = trials.iter().map(|&(x, c)| t(-x, c)).collect();
        assert!(!monotonicity_check(&rev, 4).unwrap().pass);
    }

    #[test]
    fn monotonicity_merges_tied_quantiles() {
        let trials: Vec<_> = (0..12).map(|i| t(if i < 9 { 0.0 } else { 1.0 }, i >= 9)).collect();
        let m = monotonicity_check(&trials, 4).unwrap();
        assert!(m.merged);
        assert_eq!(m.accuracies.len(), 2);
    }

    #[test]
    fn risk_coverage_examples() {
        let ranked: Vec<_> = (0..10).map(|i| t(-(i as f64), i < 5)).collect();
        let curve = risk_coverage(&ranked).unwrap();
        assert_eq!(curve[4].accuracy, 1.0);
        assert_eq!(curve[9].accuracy, 0.5);
        let flat: Vec<_> = (0..10).map(|i| t(0.0, i % 2 == 0)).collect();
        for p in risk_coverage(&flat).unwrap().iter().skip(1).step_by(2) {
            assert_eq!(p.accuracy, 0.5);
        }
        // hand-sorted: nlp descending gives labels 1,0,1,0,1,0,1,0,0,0
        let nlps = [-0.1, -0.5, -0.2, -0.3, -0.9, -0.6, -0.4, -0.7, -0.8, -1.0];
        let labels = [true, true, false, true, false, false, false, true, false, false];
        let fx: Vec<_> = nlps.iter().zip(labels).map(|(&x, c)| t(x, c)).collect();
        let want = [1.0, 0.5, 2.0 / 3.0, 0.5, 0.6, 0.5, 4.0 / 7.0, 0.5, 4.0 / 9.0, 0.4];
        for (p, w) in risk_coverage(&fx).unwrap().iter().zip(want) {
            assert!((p.accuracy - w).abs() < 1e-12, "{p:?} vs {w}");
        }
    }

    #[test]
    fn bundle_flags_instability() {
        let trials = [t(-0.1, true), t(-2.0, false), t(-0.5, true), t(-1.0, false)];
        assert!(MetricBundle::compute(&trials, 0.5, 0.05, 10).unwrap().unstable);
        assert!(MetricBundle::compute(&trials, 0.5, 1e-9, 10).unwrap().m_ratio.is_none());
        assert!(!MetricBundle::compute(&trials, 1.0, 1.2, 10).unwrap().unstable);
    }

    fn trials_strategy() -> impl Strategy<Value = Vec<(f64, bool)>> {
        proptest::collection::vec((-5.0f64..0.0, any::<bool>()), 2..60)
            .prop_filter("both classes", |v| v.iter().any(|t| t.1) && v.iter().any(|t| !t.1))
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_enumeration(mut v in trials_strategy()) {
            for x in v.iter_mut() { x.0 = (x.0 * 4.0).round() / 4.0; }
            prop_assert!((auroc2(&v).unwrap() - auroc_pairs(&v)).abs() < 1e-12);
        }

        #[test]
        fn auroc_invariant_to_monotone_transform(v in trials_strategy()) {
            let w: Vec<_> = v.iter().map(|&(x, c)| (x.exp() * 3.0 + 1.0, c)).collect();
            prop_assert!((auroc2(&v).unwrap() - auroc2(&w).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn scores_bounded(v in trials_strategy()) {
            let e = ece(&v, 10);
            let b = brier(&v);
            prop_assert!((0.0..=1.0).contains(&e));
            prop_assert!((0.0..=1.0).contains(&b));
        }

        #[test]
        fn full_coverage_is_accuracy(v in trials_strategy()) {
            let curve = risk_coverage(&v).unwrap();
            prop_assert_eq!(curve[9].accuracy, accuracy(&v));
        }

        #[test]
        fn m_ratio_scale_invariant(m in -3.0f64..3.0, d in 0.2f64..3.0, l in 0.1f64..10.0) {
            prop_assert!((m_ratio(m, d).unwrap() - m_ratio(l * m, l * d).unwrap()).abs() < 1e-12);
        }
    }
}
