//! Robustness battery: the primary point estimates recomputed under
//! perturbed settings (rating resolution, variance assumption, bin
//! placement, difficulty matching).
//!
//! A cell is one model x dataset slice of the trials passed in; bins are
//! fitted per cell. Only point estimates are compared.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::binning::{fit_bins, hautus_correct, BinStrategy, RatingCounts};
use crate::error::{Error, Result};
use crate::estimate::{fit_rated, rate_trials};
use crate::inference::{cell_key, replicate_rng};
use crate::metad::FitOptions;
use crate::sdt::estimate_s;
use crate::trials::TrialRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CheckId {
    R1,
    R2,
    R3,
    R6,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimarySettings {
    pub k: usize,
    pub strategy: BinStrategy,
}

impl Default for PrimarySettings {
    fn default() -> Self {
        PrimarySettings {
            k: 4,
            strategy: BinStrategy::Quantile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub m_ratios: BTreeMap<String, f64>,
    /// Variant minus primary, per cell.
    pub deltas: BTreeMap<String, f64>,
    pub max_perturbation: f64,
    pub ordering_preserved: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub check_id: CheckId,
    pub settings: BTreeMap<String, String>,
    pub primary: BTreeMap<String, f64>,
    pub variants: Vec<Variant>,
    /// Largest |delta M| over all variants and cells.
    pub max_perturbation: f64,
    /// Whether every variant ranks the cells as the primary run does;
    /// absent with fewer than two cells.
    pub ordering_preserved: Option<bool>,
    /// Cells that could not be estimated, with the reason.
    pub failed: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

/// Groups trials into model x dataset cells, labelled `model|dataset`.
pub fn split_cells(trials: &[TrialRecord]) -> BTreeMap<String, Vec<&TrialRecord>> {
    let mut cells: BTreeMap<String, Vec<&TrialRecord>> = BTreeMap::new();
    for t in trials {
        cells
            .entry(format!("{}|{}", t.model_id, t.dataset_id))
            .or_default()
            .push(t);
    }
    cells
}

struct CellResult {
    m: f64,
    counts: RatingCounts,
}

fn estimate(trials: &[&TrialRecord], k: usize, strategy: BinStrategy, s: Option<f64>) -> Result<CellResult> {
    let scheme = fit_bins_refs(trials, k, strategy)?;
    let rated = rate_trials(trials, &scheme);
    let s = match s {
        Some(s) => s,
        None => {
            let counts = hautus_correct(&RatingCounts::from_ratings(k, rated.iter().copied()))?;
            estimate_s(&counts)?
        }
    };
    let fit = fit_rated(k, &rated, s, &FitOptions::default())?;
    Ok(CellResult {
        m: fit.fit.m_ratio,
        counts: RatingCounts::from_ratings(k, rated),
    })
}

fn fit_bins_refs(trials: &[&TrialRecord], k: usize, strategy: BinStrategy) -> Result<crate::binning::BinningScheme> {
    let owned: Vec<TrialRecord> = trials.iter().map(|t| (*t).clone()).collect();
    fit_bins(&owned, k, strategy)
}

/// Rank order of cells by M, descending, ties by label.
fn ordering(m: &BTreeMap<String, f64>) -> Vec<&String> {
    let mut v: Vec<(&String, f64)> = m.iter().map(|(k, &v)| (k, v)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    v.into_iter().map(|(k, _)| k).collect()
}

fn compare(label: String, primary: &BTreeMap<String, f64>, m_ratios: BTreeMap<String, f64>) -> Variant {
    let shared: BTreeMap<String, f64> = primary
        .iter()
        .filter(|(k, _)| m_ratios.contains_key(*k))
        .map(|(k, &v)| (k.clone(), v))
        .collect();
    let deltas: BTreeMap<String, f64> = shared
        .iter()
        .map(|(k, &p)| (k.clone(), m_ratios[k] - p))
        .collect();
    let max_perturbation = deltas.values().fold(0.0f64, |a, d| a.max(d.abs()));
    let ordering_preserved = (shared.len() >= 2).then(|| {
        let variant_shared: BTreeMap<String, f64> =
            shared.keys().map(|k| (k.clone(), m_ratios[k])).collect();
        ordering(&shared) == ordering(&variant_shared)
    });
    Variant {
        label,
        m_ratios,
        deltas,
        max_perturbation,
        ordering_preserved,
    }
}

fn assemble(
    check_id: CheckId,
    settings: BTreeMap<String, String>,
    primary: BTreeMap<String, f64>,
    variants: Vec<Variant>,
    failed: BTreeMap<String, String>,
    warnings: Vec<String>,
) -> RobustnessReport {
    let max_perturbation = variants.iter().fold(0.0f64, |a, v| a.max(v.max_perturbation));
    let flags: Vec<bool> = variants.iter().filter_map(|v| v.ordering_preserved).collect();
    let ordering_preserved = (!flags.is_empty()).then(|| flags.iter().all(|&f| f));
    RobustnessReport {
        check_id,
        settings,
        primary,
        variants,
        max_perturbation,
        ordering_preserved,
        failed,
        warnings,
    }
}

type CellMap<'a> = BTreeMap<String, Vec<&'a TrialRecord>>;

fn primary_run(cells: &CellMap, primary: &PrimarySettings, failed: &mut BTreeMap<String, String>) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (label, trials) in cells {
        match estimate(trials, primary.k, primary.strategy, Some(1.0)) {
            Ok(r) => {
                out.insert(label.clone(), r.m);
            }
            Err(e) => {
                failed.insert(label.clone(), format!("primary: {e}"));
            }
        }
    }
    out
}

fn variant_run<F>(cells: &CellMap, failed: &mut BTreeMap<String, String>, tag: &str, mut f: F) -> BTreeMap<String, f64>
where
    F: FnMut(&str, &[&TrialRecord]) -> Result<f64>,
{
    let mut out = BTreeMap::new();
    for (label, trials) in cells {
        match f(label, trials) {
            Ok(m) => {
                out.insert(label.clone(), m);
            }
            Err(e) => {
                failed.insert(format!("{label} ({tag})"), e.to_string());
            }
        }
    }
    out
}

fn base_settings(primary: &PrimarySettings) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("primary_k".to_string(), primary.k.to_string()),
        ("primary_strategy".to_string(), primary.strategy.to_string()),
    ])
}

/// Rating resolution: refits bins and estimates at each K.
pub fn run_r1(trials: &[TrialRecord], k_values: &[usize], primary: &PrimarySettings) -> Result<RobustnessReport> {
    if let Some(&k) = k_values.iter().find(|&&k| k < 3) {
        return Err(Error::InvalidInput(format!(
            "K = {k} leaves too few Type-2 criteria per side; use K >= 3"
        )));
    }
    if k_values.is_empty() {
        return Err(Error::InvalidInput("no K values given".into()));
    }
    let cells = split_cells(trials);
    let mut failed = BTreeMap::new();
    let mut warnings = Vec::new();
    let base = primary_run(&cells, primary, &mut failed);
    let mut variants = Vec::new();
    for &k in k_values {
        let m = variant_run(&cells, &mut failed, &format!("K={k}"), |label, t| {
            let scheme = fit_bins_refs(t, k, primary.strategy)?;
            if !scheme.collapsed.is_empty() {
                warnings.push(format!("{label}: K={k} collapsed edges {:?}", scheme.collapsed));
            }
            Ok(estimate(t, k, primary.strategy, Some(1.0))?.m)
        });
        variants.push(compare(format!("K={k}"), &base, m));
    }
    let mut settings = base_settings(primary);
    settings.insert(
        "k_values".into(),
        k_values.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
    );
    Ok(assemble(CheckId::R1, settings, base, variants, failed, warnings))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SSource {
    /// Per-cell zROC slope.
    Estimated,
    Supplied(f64),
}

/// Unequal-variance refit.
pub fn run_r2(trials: &[TrialRecord], s_source: SSource, primary: &PrimarySettings) -> Result<RobustnessReport> {
    let s = match s_source {
        SSource::Supplied(s) if !(s > 0.0 && s.is_finite()) => {
            return Err(Error::InvalidInput(format!("s must be positive, got {s}")));
        }
        SSource::Supplied(s) => Some(s),
        SSource::Estimated => None,
    };
    let cells = split_cells(trials);
    let mut failed = BTreeMap::new();
    let base = primary_run(&cells, primary, &mut failed);
    let m = variant_run(&cells, &mut failed, "unequal variance", |_, t| {
        Ok(estimate(t, primary.k, primary.strategy, s)?.m)
    });
    let label = match s {
        Some(s) => format!("s={s}"),
        None => "s=estimated".to_string(),
    };
    let mut settings = base_settings(primary);
    settings.insert("s".into(), label.trim_start_matches("s=").to_string());
    let variants = vec![compare(label, &base, m)];
    Ok(assemble(CheckId::R2, settings, base, variants, failed, Vec::new()))
}

/// Share of trials below which an equal-width bin is flagged as nearly empty.
pub const SPARSE_BIN_SHARE: f64 = 0.005;

/// Equal-width bin placement.
pub fn run_r3(trials: &[TrialRecord], primary: &PrimarySettings) -> Result<RobustnessReport> {
    let cells = split_cells(trials);
    let mut failed = BTreeMap::new();
    let mut warnings = Vec::new();
    let base = primary_run(&cells, primary, &mut failed);
    let m = variant_run(&cells, &mut failed, "equal width", |label, t| {
        let r = estimate(t, primary.k, BinStrategy::EqualWidth, Some(1.0))?;
        let n = t.len() as f64;
        let sparse: Vec<usize> = (0..2 * primary.k)
            .filter(|&i| (r.counts.n_r_s1[i] + r.counts.n_r_s2[i]) / n < SPARSE_BIN_SHARE)
            .map(|i| i + 1)
            .collect();
        if !sparse.is_empty() {
            warn!("{label}: equal-width ratings {sparse:?} are nearly empty");
            warnings.push(format!("{label}: equal-width ratings {sparse:?} hold < 0.5% of trials"));
        }
        Ok(r.m)
    });
    let mut settings = base_settings(primary);
    settings.insert("variant_strategy".into(), BinStrategy::EqualWidth.to_string());
    let variants = vec![compare("equal_width".into(), &base, m)];
    Ok(assemble(CheckId::R3, settings, base, variants, failed, warnings))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingSettings {
    /// Equal-width difficulty strata on [0, 1].
    pub n_strata: usize,
    pub seed: u64,
}

impl Default for MatchingSettings {
    fn default() -> Self {
        MatchingSettings { n_strata: 10, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSubsets {
    /// Matched trials per model, in input order.
    pub by_model: BTreeMap<String, Vec<TrialRecord>>,
    pub dropped_strata: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Difficulty matching across models within one dataset.
///
/// Difficulty is the accuracy on a question pooled over all models that
/// answered it; questions answered by a single model are ignored. Trials are
/// stratified by (difficulty stratum, correctness) and every model is
/// subsampled without replacement to the smallest count in each stratum,
/// so matched subsets share both the difficulty profile and the accuracy.
/// A stratum some model has no trials in is dropped for every model.
pub fn difficulty_match(trials: &[TrialRecord], settings: &MatchingSettings) -> Result<MatchedSubsets> {
    if settings.n_strata == 0 {
        return Err(Error::InvalidInput("need at least one difficulty stratum".into()));
    }
    let mut by_model: BTreeMap<String, Vec<&TrialRecord>> = BTreeMap::new();
    for t in trials {
        by_model.entry(t.model_id.clone()).or_default().push(t);
    }
    if by_model.len() < 2 {
        return Err(Error::InvalidInput("difficulty matching needs at least two models".into()));
    }
    let mut answered_by: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for t in trials {
        answered_by
            .entry(t.question_id.as_str())
            .or_default()
            .insert(t.model_id.as_str());
    }
    let shared: BTreeSet<&str> = answered_by
        .into_iter()
        .filter(|(_, models)| models.len() >= 2)
        .map(|(q, _)| q)
        .collect();
    if shared.is_empty() {
        return Err(Error::InvalidInput("models share no question_ids".into()));
    }
    let mut pooled: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for t in trials.iter().filter(|t| shared.contains(t.question_id.as_str())) {
        let e = pooled.entry(t.question_id.as_str()).or_default();
        e.0 += t.correct as usize;
        e.1 += 1;
    }
    let n_strata = settings.n_strata;
    let stratum_of = |q: &str| {
        let (c, n) = pooled[q];
        ((c as f64 / n as f64 * n_strata as f64) as usize).min(n_strata - 1)
    };

    // per model: (stratum, correct) -> indices into that model's trial list
    let mut strata: BTreeMap<&String, BTreeMap<(usize, bool), Vec<usize>>> = BTreeMap::new();
    for (model, ts) in &by_model {
        let entry = strata.entry(model).or_default();
        for (i, t) in ts.iter().enumerate() {
            if shared.contains(t.question_id.as_str()) {
                entry.entry((stratum_of(&t.question_id), t.correct)).or_default().push(i);
            }
        }
    }
    let mut warnings = Vec::new();
    let mut dropped_strata = Vec::new();
    for d in 0..n_strata {
        let present: Vec<bool> = strata
            .values()
            .map(|m| m.contains_key(&(d, true)) || m.contains_key(&(d, false)))
            .collect();
        if present.iter().any(|&p| p) && !present.iter().all(|&p| p) {
            warnings.push(format!("difficulty stratum {d} missing for some model; dropped"));
            warn!("difficulty stratum {d} missing for some model; dropped");
            dropped_strata.push(d);
        }
    }

    let mut out = BTreeMap::new();
    for (model, ts) in &by_model {
        let mut keep: Vec<usize> = Vec::new();
        for d in (0..n_strata).filter(|d| !dropped_strata.contains(d)) {
            for correct in [false, true] {
                let target = strata
                    .values()
                    .map(|m| m.get(&(d, correct)).map_or(0, Vec::len))
                    .min()
                    .unwrap_or(0);
                let Some(pool) = strata[model].get(&(d, correct)) else {
                    continue;
                };
                if target == pool.len() {
                    keep.extend_from_slice(pool);
                } else if target > 0 {
                    let key = cell_key(&format!("match:{model}:{d}:{correct}"));
                    let mut rng = replicate_rng(settings.seed, key, 0);
                    keep.extend(sample(&mut rng, pool.len(), target).into_iter().map(|j| pool[j]));
                }
            }
        }
        keep.sort_unstable();
        out.insert(model.clone(), keep.into_iter().map(|i| ts[i].clone()).collect());
    }
    Ok(MatchedSubsets {
        by_model: out,
        dropped_strata,
        warnings,
    })
}

/// Difficulty-matched subsampling, per dataset.
pub fn run_r6(trials: &[TrialRecord], matching: &MatchingSettings, primary: &PrimarySettings) -> Result<RobustnessReport> {
    let cells = split_cells(trials);
    let mut failed = BTreeMap::new();
    let mut warnings = Vec::new();
    let base = primary_run(&cells, primary, &mut failed);
    let mut datasets: BTreeMap<&str, Vec<TrialRecord>> = BTreeMap::new();
    for t in trials {
        datasets.entry(t.dataset_id.as_str()).or_default().push(t.clone());
    }
    let mut matched: Vec<TrialRecord> = Vec::new();
    for (dataset, ts) in &datasets {
        let m = difficulty_match(ts, matching)?;
        warnings.extend(m.warnings.into_iter().map(|w| format!("{dataset}: {w}")));
        for subset in m.by_model.into_values() {
            matched.extend(subset);
        }
    }
    let matched_cells = split_cells(&matched);
    let m = variant_run(&matched_cells, &mut failed, "matched", |_, t| {
        Ok(estimate(t, primary.k, primary.strategy, Some(1.0))?.m)
    });
    let mut settings = base_settings(primary);
    settings.insert("n_strata".into(), matching.n_strata.to_string());
    settings.insert("seed".into(), matching.seed.to_string());
    let variants = vec![compare("difficulty_matched".into(), &base, m)];
    Ok(assemble(CheckId::R6, settings, base, variants, failed, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{simulate_labeled, ObserverSpec, TrialLabels};

    fn model(name: &str, spec: ObserverSpec) -> Vec<TrialRecord> {
        let labels = TrialLabels {
            model_id: name.into(),
            ..Default::default()
        };
        simulate_labeled(&spec, &labels).unwrap()
    }

    #[test]
    fn r1_rejects_k2() {
        let t = model("a", ObserverSpec::ideal(1.0, 500, 1));
        assert!(run_r1(&t, &[2, 6], &PrimarySettings::default()).is_err());
    }

    #[test]
    fn r1_at_primary_k_reproduces_primary() {
        let t = model("a", ObserverSpec::ideal(1.0, 2000, 1));
        let r = run_r1(&t, &[4], &PrimarySettings::default()).unwrap();
        assert_eq!(r.max_perturbation, 0.0);
        assert_eq!(r.variants[0].m_ratios, r.primary);
        assert_eq!(r.ordering_preserved, None);
    }

    #[test]
    fn r2_unit_s_changes_nothing_and_bad_s_errors() {
        let mut t = model("a", ObserverSpec::ideal(1.0, 2000, 1));
        t.extend(model("b", ObserverSpec { sigma_meta: 0.8, ..ObserverSpec::ideal(1.3, 2000, 2) }));
        let r = run_r2(&t, SSource::Supplied(1.0), &PrimarySettings::default()).unwrap();
        assert_eq!(r.max_perturbation, 0.0);
        assert_eq!(r.ordering_preserved, Some(true));
        assert!(run_r2(&t, SSource::Supplied(0.0), &PrimarySettings::default()).is_err());
        assert!(run_r2(&t, SSource::Supplied(-1.0), &PrimarySettings::default()).is_err());
    }

    #[test]
    fn r3_flags_sparse_bins_on_skewed_data() {
        let mut t = model("a", ObserverSpec::ideal(1.0, 3000, 5));
        for r in t.iter_mut() {
            r.nlp = -(-r.nlp).exp();
        }
        let rep = run_r3(&t, &PrimarySettings::default()).unwrap();
        assert!(!rep.warnings.is_empty() || !rep.failed.is_empty());
    }

    #[test]
    fn r3_single_point_distribution_fails_cell() {
        let mut t = model("a", ObserverSpec::ideal(1.0, 200, 5));
        for r in t.iter_mut() {
            r.nlp = -1.0;
        }
        let rep = run_r3(&t, &PrimarySettings::default()).unwrap();
        assert!(rep.failed.contains_key("a|sim"));
    }

    #[test]
    fn matching_identity_when_profiles_agree() {
        let a = model("a", ObserverSpec::ideal(1.0, 400, 1));
        let b: Vec<TrialRecord> = a
            .iter()
            .map(|t| TrialRecord {
                model_id: "b".into(),
                nlp: t.nlp * 2.0,
                ..t.clone()
            })
            .collect();
        let all: Vec<TrialRecord> = a.iter().chain(&b).cloned().collect();
        let m = difficulty_match(&all, &MatchingSettings::default()).unwrap();
        assert_eq!(m.by_model["a"], a);
        assert_eq!(m.by_model["b"], b);
    }

    #[test]
    fn matching_equalises_accuracy() {
        let a = model("a", ObserverSpec { base_rate: 0.7, ..ObserverSpec::ideal(1.0, 3000, 1) });
        let b = model("b", ObserverSpec { base_rate: 0.4, ..ObserverSpec::ideal(1.5, 3000, 2) });
        let all: Vec<TrialRecord> = a.into_iter().chain(b).collect();
        let m = difficulty_match(&all, &MatchingSettings::default()).unwrap();
        let acc = |v: &[TrialRecord]| v.iter().filter(|t| t.correct).count() as f64 / v.len() as f64;
        assert!((acc(&m.by_model["a"]) - acc(&m.by_model["b"])).abs() <= 0.01);
        assert_eq!(m.by_model["a"].len(), m.by_model["b"].len());
    }

    #[test]
    fn matching_requires_shared_questions() {
        let a = model("a", ObserverSpec::ideal(1.0, 100, 1));
        let mut b = model("b", ObserverSpec::ideal(1.0, 100, 2));
        for t in b.iter_mut() {
            t.question_id = format!("other{}", t.question_id);
        }
        let all: Vec<TrialRecord> = a.into_iter().chain(b).collect();
        assert!(difficulty_match(&all, &MatchingSettings::default()).is_err());
    }

    #[test]
    fn matching_drops_stratum_missing_for_a_model() {
        let mk = |m: &str, q: usize, c: bool| TrialRecord {
            model_id: m.into(),
            dataset_id: "d".into(),
            domain: "unclassified".into(),
            temperature: 1.0,
            question_id: format!("q{q}"),
            answer_text: None,
            nlp: -(q as f64) / 10.0,
            correct: c,
        };
        // q0..q4 are easy (pooled accuracy 1), q5..q9 hard (0); model c
        // only saw the hard ones
        let mut all = Vec::new();
        for q in 0..10 {
            all.push(mk("a", q, q < 5));
            all.push(mk("b", q, q < 5));
        }
        for q in 5..10 {
            all.push(mk("c", q, false));
        }
        let m = difficulty_match(&all, &MatchingSettings { n_strata: 10, seed: 1 }).unwrap();
        assert_eq!(m.dropped_strata, vec![9]);
        assert_eq!(m.warnings.len(), 1);
        for model in ["a", "b", "c"] {
            assert_eq!(m.by_model[model].len(), 5);
            assert!(m.by_model[model].iter().all(|t| !t.correct));
        }
    }
}
