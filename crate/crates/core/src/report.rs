//! Writes a report as a JSON document, flat CSV tables and plot data.
//!
//! Layout under the output directory:
//!
//! ```text
//! report.json
//! tables/{aggregate,domains,temperatures,monotonicity,risk_coverage,
//!         hypotheses,contrasts,robustness}.csv
//! plots/{scatter,identity_line,domain_bars,temperature_curves}.csv
//! plots/*.svg            (optional)
//! ```
//!
//! The identity line runs from 0 to `max(d', meta-d') + 0.2` over the
//! scatter points.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::{CellReport, EvaluationReport, ALL_DOMAINS};
use crate::trials::same_temperature;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmitOptions {
    pub json: bool,
    pub tables: bool,
    pub plots: bool,
    pub svg: bool,
}

impl Default for EmitOptions {
    fn default() -> Self {
        EmitOptions {
            json: true,
            tables: true,
            plots: true,
            svg: false,
        }
    }
}

/// Returns the paths written.
pub fn emit_report(report: &EvaluationReport, out_dir: &Path, options: &EmitOptions) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    if options.json {
        let p = out_dir.join("report.json");
        fs::write(&p, report.to_json()?)?;
        written.push(p);
    }
    if options.tables {
        let dir = out_dir.join("tables");
        fs::create_dir_all(&dir)?;
        written.extend(write_tables(report, &dir)?);
    }
    if options.plots || options.svg {
        let dir = out_dir.join("plots");
        fs::create_dir_all(&dir)?;
        let data = PlotData::from_report(report);
        if options.plots {
            written.extend(data.write_csv(&dir)?);
        }
        if options.svg {
            written.extend(data.write_svg(&dir)?);
        }
    }
    Ok(written)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<PathBuf> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

#[derive(Serialize)]
struct CellRow<'a> {
    model_id: &'a str,
    dataset_id: &'a str,
    domain: &'a str,
    temperature: f64,
    n_trials: usize,
    n_correct: usize,
    n_incorrect: usize,
    underpowered: bool,
    accuracy: Option<f64>,
    d_prime: Option<f64>,
    c: Option<f64>,
    meta_d: Option<f64>,
    m_ratio: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    n_excluded: Option<usize>,
    meta_d_ci_low: Option<f64>,
    meta_d_ci_high: Option<f64>,
    auroc2: Option<f64>,
    ece: Option<f64>,
    brier: Option<f64>,
    unstable: Option<bool>,
    converged: Option<bool>,
    error: Option<&'a str>,
}

const CELL_HEADER: &[&str] = &[
    "model_id", "dataset_id", "domain", "temperature", "n_trials", "n_correct", "n_incorrect", "underpowered",
    "accuracy", "d_prime", "c", "meta_d", "m_ratio", "ci_low", "ci_high", "n_excluded", "meta_d_ci_low",
    "meta_d_ci_high", "auroc2", "ece", "brier", "unstable", "converged", "error",
];

fn cell_row(c: &CellReport) -> CellRow<'_> {
    let b = c.bootstrap.as_ref();
    let m = c.metrics.as_ref();
    CellRow {
        model_id: &c.id.model_id,
        dataset_id: &c.id.dataset_id,
        domain: &c.id.domain,
        temperature: c.id.temperature,
        n_trials: c.n_trials,
        n_correct: c.n_correct,
        n_incorrect: c.n_incorrect,
        underpowered: c.underpowered,
        accuracy: m.map(|m| m.accuracy),
        d_prime: c.type1.as_ref().map(|t| t.d_prime),
        c: c.type1.as_ref().map(|t| t.c),
        meta_d: c.fit.as_ref().map(|f| f.meta_d),
        m_ratio: c.fit.as_ref().map(|f| f.m_ratio),
        ci_low: b.map(|b| b.m_ratio.ci_low),
        ci_high: b.map(|b| b.m_ratio.ci_high),
        n_excluded: b.map(|b| b.m_ratio.n_excluded),
        meta_d_ci_low: b.map(|b| b.meta_d.ci_low),
        meta_d_ci_high: b.map(|b| b.meta_d.ci_high),
        auroc2: m.map(|m| m.auroc2),
        ece: m.map(|m| m.ece),
        brier: m.map(|m| m.brier),
        unstable: m.map(|m| m.unstable),
        converged: c.fit.as_ref().map(|f| f.converged),
        error: c.error.as_deref(),
    }
}

fn write_tables(r: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let reft = r.config.reference_temperature;
    let mut out = Vec::new();
    let pick = |f: &dyn Fn(&CellReport) -> bool| -> Vec<CellRow> { r.cells.iter().filter(|c| f(c)).map(cell_row).collect() };
    out.push(write_csv(&dir.join("aggregate.csv"), &pick(&|c| c.id.is_aggregate(reft)), CELL_HEADER)?);
    out.push(write_csv(&dir.join("domains.csv"), &pick(&|c| c.id.domain != ALL_DOMAINS), CELL_HEADER)?);
    out.push(write_csv(
        &dir.join("temperatures.csv"),
        &pick(&|c| {
            c.id.domain == ALL_DOMAINS && r.config.temperatures_h3.iter().any(|&t| same_temperature(t, c.id.temperature))
        }),
        CELL_HEADER,
    )?);

    #[derive(Serialize)]
    struct Mono<'a> {
        model_id: &'a str,
        dataset_id: &'a str,
        temperature: f64,
        group: usize,
        n: usize,
        accuracy: f64,
        merged: bool,
        pass: bool,
    }
    let mono: Vec<Mono> = r
        .monotonicity
        .iter()
        .flat_map(|m| {
            m.result.accuracies.iter().zip(&m.result.counts).enumerate().map(move |(i, (&a, &n))| Mono {
                model_id: &m.model_id,
                dataset_id: &m.dataset_id,
                temperature: m.temperature,
                group: i + 1,
                n,
                accuracy: a,
                merged: m.result.merged,
                pass: m.result.pass,
            })
        })
        .collect();
    out.push(write_csv(
        &dir.join("monotonicity.csv"),
        &mono,
        &["model_id", "dataset_id", "temperature", "group", "n", "accuracy", "merged", "pass"],
    )?);

    #[derive(Serialize)]
    struct Rc<'a> {
        model_id: &'a str,
        dataset_id: &'a str,
        temperature: f64,
        coverage: f64,
        n: usize,
        accuracy: f64,
    }
    let rc: Vec<Rc> = r
        .risk_coverage
        .iter()
        .flat_map(|row| {
            row.points.iter().map(move |p| Rc {
                model_id: &row.model_id,
                dataset_id: &row.dataset_id,
                temperature: row.temperature,
                coverage: p.coverage,
                n: p.n,
                accuracy: p.accuracy,
            })
        })
        .collect();
    out.push(write_csv(
        &dir.join("risk_coverage.csv"),
        &rc,
        &["model_id", "dataset_id", "temperature", "coverage", "n", "accuracy"],
    )?);

    #[derive(Serialize)]
    struct Hyp {
        hypothesis: &'static str,
        scope: String,
        verdict: &'static str,
        statistic: String,
        value: Option<f64>,
        ci_low: Option<f64>,
        ci_high: Option<f64>,
    }
    let h = &r.hypotheses;
    let mut hyp = Vec::new();
    for row in &h.h1 {
        hyp.push(Hyp {
            hypothesis: "H1",
            scope: format!("{}|{}", row.model_id, row.dataset_id),
            verdict: row.verdict.as_str(),
            statistic: "m_ratio".into(),
            value: Some(row.m_ratio),
            ci_low: Some(row.ci_low),
            ci_high: Some(row.ci_high),
        });
    }
    for m in &h.h2.models {
        hyp.push(Hyp {
            hypothesis: "H2",
            scope: format!("{}|{}", m.model_id, m.dataset_id),
            verdict: h.h2.verdict.as_str(),
            statistic: format!("{} of {} domain pairs exclude zero", m.n_excluding_zero, m.n_pairs),
            value: Some(m.n_excluding_zero as f64),
            ci_low: None,
            ci_high: None,
        });
    }
    if h.h2.models.is_empty() {
        hyp.push(Hyp {
            hypothesis: "H2",
            scope: "all".into(),
            verdict: h.h2.verdict.as_str(),
            statistic: "fewer than two models with two or more domains".into(),
            value: None,
            ci_low: None,
            ci_high: None,
        });
    }
    for row in &h.h3 {
        let scope = format!("{}|{}", row.model_id, row.dataset_id);
        hyp.push(Hyp {
            hypothesis: "H3",
            scope: scope.clone(),
            verdict: row.verdict.as_str(),
            statistic: format!("meta_d range (TOST delta {}, pass {})", row.tost_delta, row.tost_pass),
            value: Some(row.max_range),
            ci_low: None,
            ci_high: None,
        });
        hyp.push(Hyp {
            hypothesis: "H3",
            scope: scope.clone(),
            verdict: row.verdict.as_str(),
            statistic: "rho(meta_d, T)".into(),
            value: row.rho_meta_d,
            ci_low: None,
            ci_high: None,
        });
        hyp.push(Hyp {
            hypothesis: "H3",
            scope,
            verdict: row.verdict.as_str(),
            statistic: "rho(d_prime, T)".into(),
            value: row.rho_d_prime,
            ci_low: None,
            ci_high: None,
        });
    }
    hyp.push(Hyp {
        hypothesis: "H4",
        scope: "all".into(),
        verdict: h.h4.verdict.as_str(),
        statistic: format!("{} of {} model pairs exclude zero", h.h4.n_excluding_zero, h.h4.n_pairs),
        value: Some(h.h4.n_excluding_zero as f64),
        ci_low: None,
        ci_high: None,
    });
    out.push(write_csv(&dir.join("hypotheses.csv"), &hyp, &[])?);

    #[derive(Serialize)]
    struct Con<'a> {
        family: &'a str,
        dataset_id: &'a str,
        a: &'a str,
        b: &'a str,
        delta: f64,
        ci_low: f64,
        ci_high: f64,
        excludes_zero: bool,
        n_excluded: usize,
    }
    let con: Vec<Con> = r
        .contrasts
        .iter()
        .map(|c| Con {
            family: &c.family,
            dataset_id: &c.dataset_id,
            a: &c.a,
            b: &c.b,
            delta: c.result.delta,
            ci_low: c.result.ci_low,
            ci_high: c.result.ci_high,
            excludes_zero: c.result.excludes_zero,
            n_excluded: c.result.n_excluded,
        })
        .collect();
    out.push(write_csv(
        &dir.join("contrasts.csv"),
        &con,
        &["family", "dataset_id", "a", "b", "delta", "ci_low", "ci_high", "excludes_zero", "n_excluded"],
    )?);

    #[derive(Serialize)]
    struct Rob<'a> {
        check: String,
        variant: &'a str,
        cell: &'a str,
        primary_m: f64,
        variant_m: f64,
        delta: f64,
        ordering_preserved: Option<bool>,
    }
    let rob: Vec<Rob> = r
        .robustness
        .iter()
        .flat_map(|rep| {
            rep.variants.iter().flat_map(move |v| {
                v.deltas.iter().map(move |(cell, &d)| Rob {
                    check: format!("{:?}", rep.check_id),
                    variant: &v.label,
                    cell,
                    primary_m: rep.primary[cell],
                    variant_m: v.m_ratios[cell],
                    delta: d,
                    ordering_preserved: v.ordering_preserved,
                })
            })
        })
        .collect();
    out.push(write_csv(
        &dir.join("robustness.csv"),
        &rob,
        &["check", "variant", "cell", "primary_m", "variant_m", "delta", "ordering_preserved"],
    )?);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub d_prime: f64,
    pub meta_d: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bar {
    pub label: String,
    pub domain: String,
    pub m_ratio: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub label: String,
    pub temperature: f64,
    pub d_prime: f64,
    pub meta_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinePoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub scatter: Vec<ScatterPoint>,
    pub identity_line: [LinePoint; 2],
    pub domain_bars: Vec<Bar>,
    pub temperature_curves: Vec<CurvePoint>,
}

impl PlotData {
    pub fn from_report(r: &EvaluationReport) -> Self {
        let reft = r.config.reference_temperature;
        let label = |c: &CellReport| format!("{}|{}", c.id.model_id, c.id.dataset_id);
        let ok = |c: &&CellReport| c.fit.is_some() && c.type1.is_some();
        let scatter: Vec<ScatterPoint> = r
            .cells
            .iter()
            .filter(|c| c.id.is_aggregate(reft))
            .filter(ok)
            .map(|c| ScatterPoint {
                d_prime: c.type1.as_ref().unwrap().d_prime,
                meta_d: c.fit.as_ref().unwrap().meta_d,
                label: label(c),
            })
            .collect();
        let top = scatter
            .iter()
            .flat_map(|p| [p.d_prime, p.meta_d])
            .fold(0.0f64, f64::max)
            + 0.2;
        let domain_bars = r
            .cells
            .iter()
            .filter(|c| c.id.domain != ALL_DOMAINS)
            .filter(ok)
            .map(|c| Bar {
                label: label(c),
                domain: c.id.domain.clone(),
                m_ratio: c.fit.as_ref().unwrap().m_ratio,
                ci_low: c.bootstrap.as_ref().map(|b| b.m_ratio.ci_low),
                ci_high: c.bootstrap.as_ref().map(|b| b.m_ratio.ci_high),
            })
            .collect();
        let mut temperature_curves: Vec<CurvePoint> = r
            .cells
            .iter()
            .filter(|c| {
                c.id.domain == ALL_DOMAINS
                    && r.config.temperatures_h3.iter().any(|&t| same_temperature(t, c.id.temperature))
            })
            .filter(ok)
            .map(|c| CurvePoint {
                label: label(c),
                temperature: c.id.temperature,
                d_prime: c.type1.as_ref().unwrap().d_prime,
                meta_d: c.fit.as_ref().unwrap().meta_d,
            })
            .collect();
        temperature_curves.sort_by(|a, b| a.label.cmp(&b.label).then(a.temperature.total_cmp(&b.temperature)));
        PlotData {
            scatter,
            identity_line: [LinePoint { x: 0.0, y: 0.0 }, LinePoint { x: top, y: top }],
            domain_bars,
            temperature_curves,
        }
    }

    fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        Ok(vec![
            write_csv(&dir.join("scatter.csv"), &self.scatter, &["d_prime", "meta_d", "label"])?,
            write_csv(&dir.join("identity_line.csv"), &self.identity_line, &["x", "y"])?,
            write_csv(
                &dir.join("domain_bars.csv"),
                &self.domain_bars,
                &["label", "domain", "m_ratio", "ci_low", "ci_high"],
            )?,
            write_csv(
                &dir.join("temperature_curves.csv"),
                &self.temperature_curves,
                &["label", "temperature", "d_prime", "meta_d"],
            )?,
        ])
    }

    fn write_svg(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        let top = self.identity_line[1].x;
        let mut s = Svg::new("d' vs meta-d'", (0.0, top), (0.0, top));
        s.line(&[(0.0, 0.0), (top, top)], "#999", true);
        for p in &self.scatter {
            s.point(p.d_prime, p.meta_d, &p.label);
        }
        out.push(s.save(&dir.join("scatter.svg"))?);

        let bar_top = self
            .domain_bars
            .iter()
            .map(|b| b.ci_high.unwrap_or(b.m_ratio).max(b.m_ratio))
            .fold(1.2f64, f64::max);
        let n = self.domain_bars.len().max(1) as f64;
        let mut s = Svg::new("M-ratio by domain", (0.0, n), (0.0, bar_top));
        for (i, b) in self.domain_bars.iter().enumerate() {
            s.bar(i as f64 + 0.1, 0.8, b.m_ratio, &format!("{} {}", b.label, b.domain));
        }
        s.line(&[(0.0, 1.0), (n, 1.0)], "#999", true);
        out.push(s.save(&dir.join("domain_bars.svg"))?);

        let (tmin, tmax) = self
            .temperature_curves
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.temperature), hi.max(p.temperature)));
        let ymax = self
            .temperature_curves
            .iter()
            .flat_map(|p| [p.d_prime, p.meta_d])
            .fold(0.0f64, f64::max)
            + 0.2;
        let (tmin, tmax) = if tmin.is_finite() { (tmin, tmax.max(tmin + 1e-6)) } else { (0.0, 1.0) };
        let mut s = Svg::new("d' and meta-d' across temperature", (tmin, tmax), (0.0, ymax));
        let mut labels: Vec<&str> = self.temperature_curves.iter().map(|p| p.label.as_str()).collect();
        labels.dedup();
        for l in labels {
            let pts: Vec<&CurvePoint> = self.temperature_curves.iter().filter(|p| p.label == l).collect();
            s.line(&pts.iter().map(|p| (p.temperature, p.d_prime)).collect::<Vec<_>>(), "#1f77b4", false);
            s.line(&pts.iter().map(|p| (p.temperature, p.meta_d)).collect::<Vec<_>>(), "#d62728", true);
        }
        out.push(s.save(&dir.join("temperature_curves.svg"))?);
        Ok(out)
    }
}

/// Minimal SVG canvas in data coordinates.
struct Svg {
    body: String,
    x: (f64, f64),
    y: (f64, f64),
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 40.0;

impl Svg {
    fn new(title: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut body = String::new();
        body.push_str(&format!(
            "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
            W / 2.0,
            escape(title)
        ));
        body.push_str(&format!(
            "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
            W - 2.0 * PAD,
            H - 2.0 * PAD
        ));
        Svg { body, x, y }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD);
        let sy = H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD);
        (sx, sy)
    }

    fn line(&mut self, pts: &[(f64, f64)], color: &str, dashed: bool) {
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (a, b) = self.px(x, y);
                format!("{a:.1},{b:.1}")
            })
            .collect();
        let dash = if dashed { " stroke-dasharray=\"4 3\"" } else { "" };
        self.body.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\"{dash}/>\n",
            path.join(" ")
        ));
    }

    fn point(&mut self, x: f64, y: f64, label: &str) {
        let (a, b) = self.px(x, y);
        self.body.push_str(&format!(
            "<circle cx=\"{a:.1}\" cy=\"{b:.1}\" r=\"4\" fill=\"#1f77b4\"><title>{}</title></circle>\n",
            escape(label)
        ));
    }

    fn bar(&mut self, x: f64, width: f64, height: f64, label: &str) {
        let (a, top) = self.px(x, height.max(0.0));
        let (b, base) = self.px(x + width, 0.0);
        self.body.push_str(&format!(
            "<rect x=\"{a:.1}\" y=\"{top:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#2ca02c\"><title>{}</title></rect>\n",
            b - a,
            (base - top).max(0.0),
            escape(label)
        ));
    }

    fn save(&self, path: &Path) -> Result<PathBuf> {
        let doc = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n{}</svg>\n",
            self.body
        );
        fs::write(path, doc).map_err(Error::from)?;
        Ok(path.to_path_buf())
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
