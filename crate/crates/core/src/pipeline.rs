//! Full evaluation run: per model x dataset binning, cell estimates with
//! bootstrap intervals, the hypothesis battery and the robustness checks.

use std::collections::{BTreeMap, HashMap};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binning::{fit_bins, BinningScheme, RatingCounts, ReferenceCondition};
use crate::config::{AurocVariant, RunConfig};
use crate::error::{Error, Result};
use crate::estimate::{bootstrap_cell, fit_rated, rate_trials, CellBootstrap};
use crate::inference::{
    cell_key, contrast, h1_test, spearman_rho, tost_equivalence, BootstrapResult, ContrastResult, Distribution, TostPair,
};
use crate::metad::{FitOptions, MetaDFit};
use crate::metrics::{auroc2_folded, monotonicity_check, risk_coverage, strictly_increasing, CoveragePoint, MetricBundle, Monotonicity};
use crate::robustness::{run_r1, run_r2, run_r3, run_r6, MatchingSettings, PrimarySettings, RobustnessReport};
use crate::sdt::Type1Stats;
use crate::trials::{same_temperature, write_trials_jsonl, TrialFilter, TrialRecord, TrialStore};

pub const SCHEMA_VERSION: &str = "1.0";
/// Domain label of cells that pool all domains.
pub const ALL_DOMAINS: &str = "all";
/// Domain label excluded from domain contrasts.
pub const UNCLASSIFIED: &str = "unclassified";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellId {
    pub model_id: String,
    pub dataset_id: String,
    pub domain: String,
    pub temperature: f64,
}

impl CellId {
    pub fn label(&self) -> String {
        format!("{}|{}|{}|T={}", self.model_id, self.dataset_id, self.domain, self.temperature)
    }

    pub fn is_aggregate(&self, reference_temperature: f64) -> bool {
        self.domain == ALL_DOMAINS && same_temperature(self.temperature, reference_temperature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub m_ratio: BootstrapResult,
    pub meta_d: BootstrapResult,
    pub d_prime: BootstrapResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub id: CellId,
    pub n_trials: usize,
    pub n_correct: usize,
    pub n_incorrect: usize,
    /// Fewer than `min_cell_trials` trials in either accuracy class.
    pub underpowered: bool,
    pub counts: Option<RatingCounts>,
    pub type1: Option<Type1Stats>,
    pub fit: Option<MetaDFit>,
    pub metrics: Option<MetricBundle>,
    pub bootstrap: Option<BootstrapSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeEntry {
    pub model_id: String,
    pub dataset_id: String,
    pub scheme: BinningScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityRow {
    pub model_id: String,
    pub dataset_id: String,
    pub temperature: f64,
    pub result: Monotonicity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCoverageRow {
    pub model_id: String,
    pub dataset_id: String,
    pub temperature: f64,
    pub points: Vec<CoveragePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Supported,
    NotSupported,
    NotEvaluable,
}

impl Verdict {
    fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Supported
        } else {
            Verdict::NotSupported
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Supported => "supported",
            Verdict::NotSupported => "not_supported",
            Verdict::NotEvaluable => "not_evaluable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Row {
    pub model_id: String,
    pub dataset_id: String,
    pub accuracy: f64,
    pub d_prime: f64,
    pub meta_d: f64,
    pub m_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_excluded: usize,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H2Model {
    pub model_id: String,
    pub dataset_id: String,
    pub n_domains: usize,
    pub n_pairs: usize,
    pub n_excluding_zero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H2Result {
    pub verdict: Verdict,
    pub models: Vec<H2Model>,
    /// Distinct models with at least one domain pair whose interval excludes zero.
    pub models_with_significant_pair: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H3Row {
    pub model_id: String,
    pub dataset_id: String,
    pub temperatures: Vec<f64>,
    pub meta_d: Vec<f64>,
    pub d_prime: Vec<f64>,
    pub max_range: f64,
    pub tost_delta: f64,
    pub tost_pass: bool,
    pub rho_meta_d: Option<f64>,
    pub rho_d_prime: Option<f64>,
    pub verdict: Verdict,
    pub pairs: Vec<TostPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H4Result {
    pub verdict: Verdict,
    pub n_pairs: usize,
    pub n_excluding_zero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypotheses {
    pub h1: Vec<H1Row>,
    pub h2: H2Result,
    pub h3: Vec<H3Row>,
    pub h4: H4Result,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    /// "h2" (domains within a model) or "h4" (models within a dataset).
    pub family: String,
    pub dataset_id: String,
    pub a: String,
    pub b: String,
    pub result: ContrastResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub scope: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub config_sha256: String,
    /// Digest of the trials in canonical JSON-lines form.
    pub trials_sha256: String,
    /// Digests of input files as read, keyed by the name given on input.
    pub inputs: BTreeMap<String, String>,
    pub rng_family: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: String,
    pub provenance: Provenance,
    pub config: RunConfig,
    pub schemes: Vec<SchemeEntry>,
    pub cells: Vec<CellReport>,
    pub monotonicity: Vec<MonotonicityRow>,
    pub risk_coverage: Vec<RiskCoverageRow>,
    pub hypotheses: Hypotheses,
    pub contrasts: Vec<ContrastRow>,
    pub robustness: Vec<RobustnessReport>,
    pub failures: Vec<Failure>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn trials_digest(records: &[TrialRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_trials_jsonl(&mut buf, records)?;
    Ok(sha256_hex(&buf))
}

struct Group<'a> {
    model_id: &'a str,
    dataset_id: &'a str,
}

/// Runs everything. `inputs` carries digests of the files the trials were
/// read from (empty when the store was built in memory).
pub fn run_pipeline(config: &RunConfig, store: &TrialStore, inputs: BTreeMap<String, String>) -> Result<EvaluationReport> {
    config.validate()?;
    if store.is_empty() {
        return Err(Error::InvalidInput("trial store is empty".into()));
    }
    let mut run = Run {
        config,
        schemes: Vec::new(),
        cells: Vec::new(),
        dists: HashMap::new(),
        monotonicity: Vec::new(),
        risk_coverage: Vec::new(),
        failures: Vec::new(),
    };

    let mut pairs: Vec<(String, String)> = store
        .records()
        .iter()
        .map(|r| (r.model_id.clone(), r.dataset_id.clone()))
        .collect();
    pairs.sort();
    pairs.dedup();
    for (model_id, dataset_id) in &pairs {
        run.group(
            store,
            &Group {
                model_id,
                dataset_id,
            },
        );
    }

    let (hypotheses, contrasts) = run.hypotheses()?;
    let reference_trials = store.filter(&TrialFilter::default().temperature(config.reference_temperature));
    let robustness = run.robustness(&reference_trials);

    let provenance = Provenance {
        tool: "metasdt".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(config.to_toml()?.as_bytes()),
        trials_sha256: trials_digest(store.records())?,
        inputs,
        rng_family: config.rng_family.clone(),
    };
    Ok(EvaluationReport {
        schema_version: SCHEMA_VERSION.into(),
        provenance,
        config: config.clone(),
        schemes: run.schemes,
        cells: run.cells,
        monotonicity: run.monotonicity,
        risk_coverage: run.risk_coverage,
        hypotheses,
        contrasts,
        robustness,
        failures: run.failures,
    })
}

struct Run<'c> {
    config: &'c RunConfig,
    schemes: Vec<SchemeEntry>,
    cells: Vec<CellReport>,
    dists: HashMap<String, CellBootstrap>,
    monotonicity: Vec<MonotonicityRow>,
    risk_coverage: Vec<RiskCoverageRow>,
    failures: Vec<Failure>,
}

impl Run<'_> {
    fn fail(&mut self, scope: String, message: String) {
        log::warn!("{scope}: {message}");
        self.failures.push(Failure { scope, message });
    }

    fn group(&mut self, store: &TrialStore, g: &Group) {
        let cfg = self.config;
        let scope = format!("{}|{}", g.model_id, g.dataset_id);
        let base = TrialFilter::default().model(g.model_id).dataset(g.dataset_id);
        let reference = store.filter(&base.clone().temperature(cfg.reference_temperature));
        if reference.is_empty() {
            self.fail(scope, format!("no trials at reference temperature {}", cfg.reference_temperature));
            return;
        }
        let scheme = match fit_bins(&reference, cfg.k, cfg.bin_strategy) {
            Ok(s) => s.with_reference(ReferenceCondition {
                model_id: Some(g.model_id.to_string()),
                dataset_id: Some(g.dataset_id.to_string()),
                temperature: Some(cfg.reference_temperature),
            }),
            Err(e) => {
                self.fail(scope, format!("binning: {e}"));
                return;
            }
        };
        self.schemes.push(SchemeEntry {
            model_id: g.model_id.into(),
            dataset_id: g.dataset_id.into(),
            scheme: scheme.clone(),
        });
        match monotonicity_check(&reference, 4) {
            Ok(m) => self.monotonicity.push(MonotonicityRow {
                model_id: g.model_id.into(),
                dataset_id: g.dataset_id.into(),
                temperature: cfg.reference_temperature,
                result: m,
            }),
            Err(e) => self.fail(scope.clone(), format!("monotonicity: {e}")),
        }
        match risk_coverage(&reference) {
            Ok(points) => self.risk_coverage.push(RiskCoverageRow {
                model_id: g.model_id.into(),
                dataset_id: g.dataset_id.into(),
                temperature: cfg.reference_temperature,
                points,
            }),
            Err(e) => self.fail(scope.clone(), format!("risk-coverage: {e}")),
        }

        let group_trials = store.filter(&base);
        let mut temps: Vec<f64> = cfg.temperatures_h3.clone();
        temps.push(cfg.reference_temperature);
        temps.sort_by(f64::total_cmp);
        temps.dedup_by(|a, b| same_temperature(*a, *b));
        for t in temps {
            let trials: Vec<TrialRecord> = group_trials
                .iter()
                .filter(|r| same_temperature(r.temperature, t))
                .cloned()
                .collect();
            if trials.is_empty() {
                continue;
            }
            self.cell(g, ALL_DOMAINS, t, &trials, &scheme);
        }
        let mut domains: Vec<&str> = reference.iter().map(|r| r.domain.as_str()).collect();
        domains.sort();
        domains.dedup();
        if domains.len() > 1 {
            for d in domains {
                let trials: Vec<TrialRecord> = reference.iter().filter(|r| r.domain == d).cloned().collect();
                self.cell(g, d, cfg.reference_temperature, &trials, &scheme);
            }
        }
    }

    fn cell(&mut self, g: &Group, domain: &str, temperature: f64, trials: &[TrialRecord], scheme: &BinningScheme) {
        let cfg = self.config;
        let id = CellId {
            model_id: g.model_id.into(),
            dataset_id: g.dataset_id.into(),
            domain: domain.into(),
            temperature,
        };
        let label = id.label();
        info!("cell {label}: {} trials", trials.len());
        let n_correct = trials.iter().filter(|t| t.correct).count();
        let n_incorrect = trials.len() - n_correct;
        let mut report = CellReport {
            id,
            n_trials: trials.len(),
            n_correct,
            n_incorrect,
            underpowered: n_correct < cfg.min_cell_trials || n_incorrect < cfg.min_cell_trials,
            counts: None,
            type1: None,
            fit: None,
            metrics: None,
            bootstrap: None,
            error: None,
        };
        let rated = rate_trials(trials, scheme);
        let point = match fit_rated(scheme.k, &rated, 1.0, &FitOptions::default()) {
            Ok(p) => p,
            Err(e) => {
                report.error = Some(format!("fit: {e}"));
                self.cells.push(report);
                return;
            }
        };
        report.counts = Some(point.counts.clone());
        report.type1 = Some(point.type1);
        report.fit = Some(point.fit.clone());
        let mut errors = Vec::new();
        match MetricBundle::compute(trials, point.fit.meta_d, point.type1.d_prime, cfg.ece_bins) {
            Ok(mut m) => {
                if cfg.auroc_variant == AurocVariant::Folded {
                    match auroc2_folded(trials, scheme) {
                        Ok(a) => m.auroc2 = a,
                        Err(e) => errors.push(format!("auroc2: {e}")),
                    }
                }
                report.metrics = Some(m);
            }
            Err(e) => errors.push(format!("metrics: {e}")),
        }
        match bootstrap_cell(&rated, scheme.k, 1.0, &point, &cfg.bootstrap, cell_key(&label)) {
            Ok(b) => {
                report.bootstrap = Some(BootstrapSummary {
                    m_ratio: b.m_ratio.clone(),
                    meta_d: b.meta_d.clone(),
                    d_prime: b.d_prime.clone(),
                });
                self.dists.insert(label, b);
            }
            Err(e) => errors.push(format!("bootstrap: {e}")),
        }
        if !errors.is_empty() {
            report.error = Some(errors.join("; "));
        }
        self.cells.push(report);
    }

    fn find<'a>(&'a self, model: &str, dataset: &str, domain: &str, t: f64) -> Option<(&'a CellReport, &'a CellBootstrap)> {
        let c = self.cells.iter().find(|c| {
            c.id.model_id == model
                && c.id.dataset_id == dataset
                && c.id.domain == domain
                && same_temperature(c.id.temperature, t)
        })?;
        Some((c, self.dists.get(&c.id.label())?))
    }

    fn hypotheses(&self) -> Result<(Hypotheses, Vec<ContrastRow>)> {
        let cfg = self.config;
        let level = cfg.bootstrap.level;
        let reft = cfg.reference_temperature;
        let groups: Vec<(String, String)> = self
            .schemes
            .iter()
            .map(|s| (s.model_id.clone(), s.dataset_id.clone()))
            .collect();
        let mut contrasts = Vec::new();

        // H1: aggregate M-ratio interval below 1
        let mut h1 = Vec::new();
        for (m, d) in &groups {
            if let Some((c, b)) = self.find(m, d, ALL_DOMAINS, reft) {
                let (Some(fit), Some(t1), Some(metrics)) = (&c.fit, &c.type1, &c.metrics) else {
                    continue;
                };
                h1.push(H1Row {
                    model_id: m.clone(),
                    dataset_id: d.clone(),
                    accuracy: metrics.accuracy,
                    d_prime: t1.d_prime,
                    meta_d: fit.meta_d,
                    m_ratio: fit.m_ratio,
                    ci_low: b.m_ratio.ci_low,
                    ci_high: b.m_ratio.ci_high,
                    n_excluded: b.m_ratio.n_excluded,
                    verdict: Verdict::from_bool(h1_test(&b.m_ratio)),
                });
            }
        }

        // H2: domain contrasts within each model
        let mut h2_models = Vec::new();
        let mut significant: Vec<String> = Vec::new();
        for (m, d) in &groups {
            let domain_cells: Vec<(&String, &Distribution)> = self
                .cells
                .iter()
                .filter(|c| {
                    &c.id.model_id == m
                        && &c.id.dataset_id == d
                        && c.id.domain != ALL_DOMAINS
                        && c.id.domain != UNCLASSIFIED
                        && same_temperature(c.id.temperature, reft)
                })
                .filter_map(|c| Some((&c.id.domain, &self.dists.get(&c.id.label())?.m_dist)))
                .collect();
            if domain_cells.len() < 2 {
                continue;
            }
            let mut n_pairs = 0;
            let mut n_sig = 0;
            for i in 0..domain_cells.len() {
                for j in i + 1..domain_cells.len() {
                    let r = contrast(domain_cells[i].1, domain_cells[j].1, level)?;
                    n_pairs += 1;
                    n_sig += r.excludes_zero as usize;
                    contrasts.push(ContrastRow {
                        family: "h2".into(),
                        dataset_id: d.clone(),
                        a: format!("{m}:{}", domain_cells[i].0),
                        b: format!("{m}:{}", domain_cells[j].0),
                        result: r,
                    });
                }
            }
            if n_sig > 0 && !significant.contains(m) {
                significant.push(m.clone());
            }
            h2_models.push(H2Model {
                model_id: m.clone(),
                dataset_id: d.clone(),
                n_domains: domain_cells.len(),
                n_pairs,
                n_excluding_zero: n_sig,
            });
        }
        let mut evaluated: Vec<&String> = h2_models.iter().map(|h| &h.model_id).collect();
        evaluated.dedup();
        let h2 = H2Result {
            verdict: if evaluated.len() < 2 {
                Verdict::NotEvaluable
            } else {
                Verdict::from_bool(significant.len() >= 2)
            },
            models: h2_models,
            models_with_significant_pair: significant,
        };

        // H3: meta-d' stable across temperature while d' moves
        let mut h3 = Vec::new();
        for (m, d) in &groups {
            let mut temps = Vec::new();
            let mut meta = Vec::new();
            let mut dp = Vec::new();
            let mut dists = BTreeMap::new();
            for &t in &cfg.temperatures_h3 {
                if let Some((c, b)) = self.find(m, d, ALL_DOMAINS, t) {
                    let (Some(fit), Some(t1)) = (&c.fit, &c.type1) else { continue };
                    temps.push(t);
                    meta.push(fit.meta_d);
                    dp.push(t1.d_prime);
                    dists.insert(format!("T={t}"), b.meta_d_dist.clone());
                }
            }
            if temps.len() < 2 {
                continue;
            }
            let tost = tost_equivalence(&dists, cfg.tost_delta)?;
            let rho_m = spearman_rho(&meta, &temps).ok();
            let rho_d = spearman_rho(&dp, &temps).ok();
            let verdict = match (rho_m, rho_d) {
                (Some(a), Some(b)) => Verdict::from_bool(tost.pass && a.abs() < b.abs()),
                _ => Verdict::NotEvaluable,
            };
            h3.push(H3Row {
                model_id: m.clone(),
                dataset_id: d.clone(),
                temperatures: temps,
                meta_d: meta,
                d_prime: dp,
                max_range: tost.max_range,
                tost_delta: cfg.tost_delta,
                tost_pass: tost.pass,
                rho_meta_d: rho_m,
                rho_d_prime: rho_d,
                verdict,
                pairs: tost.pairs,
            });
        }

        // H4: model contrasts on the aggregate cell within each dataset
        let mut n_pairs = 0;
        let mut n_sig = 0;
        let mut datasets: Vec<&String> = groups.iter().map(|g| &g.1).collect();
        datasets.sort();
        datasets.dedup();
        for d in datasets {
            let models: Vec<(&String, &Distribution)> = groups
                .iter()
                .filter(|g| &g.1 == d)
                .filter_map(|(m, _)| Some((m, &self.find(m, d, ALL_DOMAINS, reft)?.1.m_dist)))
                .collect();
            for i in 0..models.len() {
                for j in i + 1..models.len() {
                    let r = contrast(models[i].1, models[j].1, level)?;
                    n_pairs += 1;
                    n_sig += r.excludes_zero as usize;
                    contrasts.push(ContrastRow {
                        family: "h4".into(),
                        dataset_id: d.clone(),
                        a: models[i].0.clone(),
                        b: models[j].0.clone(),
                        result: r,
                    });
                }
            }
        }
        let h4 = H4Result {
            verdict: if n_pairs == 0 {
                Verdict::NotEvaluable
            } else {
                Verdict::from_bool(n_sig > 0)
            },
            n_pairs,
            n_excluding_zero: n_sig,
        };
        Ok((Hypotheses { h1, h2, h3, h4 }, contrasts))
    }

    fn robustness(&mut self, reference_trials: &[TrialRecord]) -> Vec<RobustnessReport> {
        let cfg = self.config;
        if !cfg.robustness.enabled || reference_trials.is_empty() {
            return Vec::new();
        }
        let primary = PrimarySettings {
            k: cfg.k,
            strategy: cfg.bin_strategy,
        };
        let mut out = Vec::new();
        let mut runs: Vec<(&str, Result<RobustnessReport>)> = vec![
            ("R1", run_r1(reference_trials, &cfg.robustness.k_values, &primary)),
            ("R2", run_r2(reference_trials, cfg.robustness.s_source, &primary)),
            ("R3", run_r3(reference_trials, &primary)),
        ];
        let mut models: Vec<&str> = reference_trials.iter().map(|t| t.model_id.as_str()).collect();
        models.sort();
        models.dedup();
        if models.len() >= 2 {
            let matching = MatchingSettings {
                n_strata: cfg.robustness.difficulty_strata,
                seed: cfg.bootstrap.seed,
            };
            runs.push(("R6", run_r6(reference_trials, &matching, &primary)));
        }
        for (name, r) in runs {
            match r {
                Ok(r) => out.push(r),
                Err(e) => self.fail(format!("robustness {name}"), e.to_string()),
            }
        }
        out
    }
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("invalid report: {}", what())))
    }
}

fn check_ci(r: &BootstrapResult, scope: &str) -> Result<()> {
    check(r.ci_low <= r.ci_high, || format!("{scope}: ci_low > ci_high"))?;
    check(r.n_excluded <= r.n_resamples, || format!("{scope}: n_excluded > n_resamples"))
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Parses and validates a report document.
    pub fn from_json(text: &str) -> Result<Self> {
        let r: EvaluationReport = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    /// Structural and internal-consistency checks.
    pub fn validate(&self) -> Result<()> {
        check(self.schema_version == SCHEMA_VERSION, || {
            format!("schema version {} (expected {SCHEMA_VERSION})", self.schema_version)
        })?;
        let hex64 = |s: &str| s.len() == 64 && s.chars().all(|c| c.is_ascii_hexdigit());
        check(hex64(&self.provenance.config_sha256), || "config digest".into())?;
        check(hex64(&self.provenance.trials_sha256), || "trials digest".into())?;
        check(self.provenance.inputs.values().all(|v| hex64(v)), || "input digest".into())?;
        self.config.validate()?;
        let min = self.config.min_cell_trials;
        for c in &self.cells {
            let l = c.id.label();
            check(c.n_trials == c.n_correct + c.n_incorrect, || format!("{l}: trial counts"))?;
            check(c.underpowered == (c.n_correct < min || c.n_incorrect < min), || {
                format!("{l}: underpowered flag")
            })?;
            check(c.error.is_some() || (c.fit.is_some() && c.type1.is_some() && c.bootstrap.is_some()), || {
                format!("{l}: missing results without an error")
            })?;
            if let Some(counts) = &c.counts {
                check(counts.corrected && (counts.total() - c.n_trials as f64 - 2.0 * counts.k as f64).abs() < 1e-9, || {
                    format!("{l}: counts do not match the trial count")
                })?;
            }
            if let Some(b) = &c.bootstrap {
                check_ci(&b.m_ratio, &l)?;
                check_ci(&b.meta_d, &l)?;
                check_ci(&b.d_prime, &l)?;
            }
            if let Some(m) = &c.metrics {
                check(unit(m.auroc2) && unit(m.ece) && unit(m.brier) && unit(m.accuracy), || {
                    format!("{l}: metric outside [0, 1]")
                })?;
            }
        }
        for h in &self.hypotheses.h1 {
            check((h.verdict == Verdict::Supported) == (h.ci_high < 1.0), || {
                format!("H1 verdict for {}", h.model_id)
            })?;
        }
        for h in &self.hypotheses.h3 {
            check(h.temperatures.len() == h.meta_d.len() && h.meta_d.len() == h.d_prime.len(), || {
                format!("H3 series for {}", h.model_id)
            })?;
        }
        for c in &self.contrasts {
            let r = &c.result;
            check(r.ci_low <= r.ci_high && r.excludes_zero == !(r.ci_low <= 0.0 && 0.0 <= r.ci_high), || {
                format!("contrast {} vs {}", c.a, c.b)
            })?;
        }
        for m in &self.monotonicity {
            check(m.result.pass == strictly_increasing(&m.result.accuracies), || {
                format!("monotonicity for {}", m.model_id)
            })?;
        }
        for r in &self.robustness {
            check(r.max_perturbation >= 0.0, || format!("{:?} perturbation", r.check_id))?;
        }
        Ok(())
    }
}
