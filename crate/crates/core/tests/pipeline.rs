use std::collections::BTreeMap;

use metasdt::config::RunConfig;
use metasdt::pipeline::{run_pipeline, EvaluationReport, Verdict};
use metasdt::report::{emit_report, EmitOptions};
use metasdt::simulator::{simulate_cohorts, CohortGrid};
use metasdt::trials::TrialStore;

fn fixture_store() -> TrialStore {
    let text = include_str!("../../cli/fixtures/four_models.toml");
    let grid = CohortGrid::from_toml(text).unwrap();
    TrialStore::new(simulate_cohorts(&grid.cohort).unwrap()).unwrap()
}

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.bootstrap.n_resamples = 200;
    c
}

#[test]
fn fixture_report_validates_and_is_deterministic() {
    let store = fixture_store();
    assert_eq!(store.len(), 20_000);
    let cfg = small_config();
    let a = run_pipeline(&cfg, &store, BTreeMap::new()).unwrap();
    a.validate().unwrap();
    assert!(a.failures.is_empty(), "{:?}", a.failures);
    // 4 temperatures + 4 domains per model
    assert_eq!(a.cells.len(), 32);
    assert!(a.cells.iter().all(|c| c.error.is_none() && !c.underpowered));
    assert_eq!(a.hypotheses.h1.len(), 4);
    assert_eq!(a.hypotheses.h3.len(), 4);
    assert_eq!(a.hypotheses.h4.n_pairs, 6);
    assert_ne!(a.hypotheses.h2.verdict, Verdict::NotEvaluable);
    assert_eq!(a.robustness.len(), 4);

    let json = a.to_json().unwrap();
    let back = EvaluationReport::from_json(&json).unwrap();
    assert_eq!(back, a);
    let b = run_pipeline(&cfg, &store, BTreeMap::new()).unwrap();
    assert_eq!(json, b.to_json().unwrap());
}

#[test]
fn emitted_artifacts() {
    let store = fixture_store();
    let report = run_pipeline(&small_config(), &store, BTreeMap::new()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = EmitOptions {
        svg: true,
        ..Default::default()
    };
    let files = emit_report(&report, dir.path(), &opts).unwrap();
    for name in [
        "report.json",
        "tables/aggregate.csv",
        "tables/domains.csv",
        "tables/temperatures.csv",
        "tables/monotonicity.csv",
        "tables/risk_coverage.csv",
        "tables/hypotheses.csv",
        "tables/contrasts.csv",
        "tables/robustness.csv",
        "plots/scatter.csv",
        "plots/identity_line.csv",
        "plots/domain_bars.csv",
        "plots/temperature_curves.csv",
        "plots/scatter.svg",
    ] {
        assert!(files.contains(&dir.path().join(name)), "{name} missing");
    }
    let agg = std::fs::read_to_string(dir.path().join("tables/aggregate.csv")).unwrap();
    let header = agg.lines().next().unwrap();
    for col in ["accuracy", "d_prime", "meta_d", "m_ratio", "ci_low", "ci_high"] {
        assert!(header.split(',').any(|h| h == col), "{col}");
    }
    assert_eq!(agg.lines().count(), 5);

    let scatter = std::fs::read_to_string(dir.path().join("plots/scatter.csv")).unwrap();
    assert_eq!(scatter.lines().next().unwrap(), "d_prime,meta_d,label");
    assert_eq!(scatter.lines().count(), 5);
    let line = std::fs::read_to_string(dir.path().join("plots/identity_line.csv")).unwrap();
    let top = report
        .cells
        .iter()
        .filter(|c| c.id.is_aggregate(1.0))
        .flat_map(|c| [c.type1.as_ref().unwrap().d_prime, c.fit.as_ref().unwrap().meta_d])
        .fold(0.0f64, f64::max)
        + 0.2;
    let last: Vec<f64> = line.lines().nth(2).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last, vec![top, top]);
}

#[test]
fn single_model_leaves_h2_and_h4_not_evaluable() {
    let store = fixture_store();
    let one: Vec<_> = store.records().iter().filter(|r| r.model_id == "alpha").cloned().collect();
    let report = run_pipeline(&small_config(), &TrialStore::new(one).unwrap(), BTreeMap::new()).unwrap();
    assert_eq!(report.hypotheses.h2.verdict, Verdict::NotEvaluable);
    assert_eq!(report.hypotheses.h4.verdict, Verdict::NotEvaluable);
    report.validate().unwrap();
}

#[test]
fn small_cells_are_flagged_not_dropped() {
    let store = fixture_store();
    let mut cfg = small_config();
    cfg.min_cell_trials = 200;
    let report = run_pipeline(&cfg, &store, BTreeMap::new()).unwrap();
    let domain_cells: Vec<_> = report.cells.iter().filter(|c| c.id.domain != "all").collect();
    assert_eq!(domain_cells.len(), 16);
    assert!(domain_cells.iter().all(|c| c.underpowered));
    report.validate().unwrap();
}
