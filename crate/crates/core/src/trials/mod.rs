//! Trial-level logs: the canonical record, loading, validation and filtering.

mod grading;

pub use grading::{gestalt_ratio, grade_answer, AnswerKey, Grade, Normalization};

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const UNCLASSIFIED: &str = "unclassified";

/// One question/answer trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub model_id: String,
    pub dataset_id: String,
    pub domain: String,
    pub temperature: f64,
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_text: Option<String>,
    /// Mean per-token log-probability of the generated answer.
    pub nlp: f64,
    pub correct: bool,
}

impl TrialRecord {
    pub fn key(&self) -> TrialKey {
        TrialKey {
            model_id: self.model_id.clone(),
            dataset_id: self.dataset_id.clone(),
            temperature_bits: self.temperature.to_bits(),
            question_id: self.question_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrialKey {
    pub model_id: String,
    pub dataset_id: String,
    temperature_bits: u64,
    pub question_id: String,
}

impl TrialKey {
    pub fn temperature(&self) -> f64 {
        f64::from_bits(self.temperature_bits)
    }
}

/// Maps canonical field names onto the names used in a particular log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMapping {
    pub model_id: String,
    pub dataset_id: String,
    pub domain: String,
    pub temperature: String,
    pub question_id: String,
    pub answer_text: String,
    pub nlp: String,
    pub correct: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            model_id: "model_id".into(),
            dataset_id: "dataset_id".into(),
            domain: "domain".into(),
            temperature: "temperature".into(),
            question_id: "question_id".into(),
            answer_text: "answer_text".into(),
            nlp: "nlp".into(),
            correct: "correct".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialFormat {
    /// One JSON object per line.
    JsonLines,
    /// Header row plus delimiter-separated values.
    Delimited(u8),
}

impl TrialFormat {
    /// Picks a format from a file extension; anything unknown is JSON lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => TrialFormat::Delimited(b','),
            Some("tsv") => TrialFormat::Delimited(b'\t'),
            _ => TrialFormat::JsonLines,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOutcome {
    pub records: Vec<TrialRecord>,
    pub skipped: Vec<SkippedLine>,
}

/// Reads trial records. Malformed lines, missing fields and non-finite
/// `nlp` values are skipped and reported with their line number; a
/// duplicate (model, dataset, temperature, question) key is a hard error.
pub fn load_trials<R: Read>(source: R, format: TrialFormat, mapping: &FieldMapping) -> Result<LoadOutcome> {
    load_trials_graded(source, format, mapping, &BTreeMap::new())
}

/// As [`load_trials`], but any row whose question has an answer key and
/// which carries answer text is graded against the key; the grade replaces
/// the `correct` field, which may then be absent.
pub fn load_trials_graded<R: Read>(
    source: R,
    format: TrialFormat,
    mapping: &FieldMapping,
    keys: &BTreeMap<String, AnswerKey>,
) -> Result<LoadOutcome> {
    let rows = match format {
        TrialFormat::JsonLines => read_json_rows(source)?,
        TrialFormat::Delimited(delim) => read_delimited_rows(source, delim)?,
    };
    let mut records = Vec::with_capacity(rows.len());
    let mut skipped = Vec::new();
    let mut seen = HashSet::with_capacity(rows.len());
    for (line, row) in rows {
        let row = match row {
            Ok(row) => row,
            Err(reason) => {
                skipped.push(SkippedLine { line, reason });
                continue;
            }
        };
        match record_from_row(&row, mapping, keys) {
            Ok(rec) => {
                if !seen.insert(rec.key()) {
                    return Err(Error::DuplicateTrial {
                        model_id: rec.model_id,
                        dataset_id: rec.dataset_id,
                        temperature: rec.temperature,
                        question_id: rec.question_id,
                    });
                }
                records.push(rec);
            }
            Err(reason) => skipped.push(SkippedLine { line, reason }),
        }
    }
    Ok(LoadOutcome { records, skipped })
}

pub fn load_trials_path(path: &Path, mapping: &FieldMapping) -> Result<LoadOutcome> {
    let file = std::fs::File::open(path)?;
    load_trials(std::io::BufReader::new(file), TrialFormat::from_path(path), mapping)
}

type Row = BTreeMap<String, Value>;
type RowResult = std::result::Result<Row, String>;

fn read_json_rows<R: Read>(source: R) -> Result<Vec<(usize, RowResult)>> {
    let reader = std::io::BufReader::new(source);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(map)) => Ok(map.into_iter().collect()),
            Ok(_) => Err("line is not a JSON object".to_string()),
            Err(e) => Err(format!("malformed JSON: {e}")),
        };
        rows.push((idx + 1, row));
    }
    Ok(rows)
}

fn read_delimited_rows<R: Read>(source: R, delimiter: u8) -> Result<Vec<(usize, RowResult)>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let mut rows = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        // header occupies line 1
        let line = idx + 2;
        let row = match rec {
            Ok(rec) if rec.len() != headers.len() => Err(format!(
                "expected {} fields, found {}",
                headers.len(),
                rec.len()
            )),
            Ok(rec) => Ok(headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                .collect()),
            Err(e) => Err(format!("malformed row: {e}")),
        };
        rows.push((line, row));
    }
    Ok(rows)
}

fn record_from_row(row: &Row, m: &FieldMapping, keys: &BTreeMap<String, AnswerKey>) -> std::result::Result<TrialRecord, String> {
    let nlp = get_f64(row, &m.nlp)?;
    if !nlp.is_finite() {
        return Err(format!("non-finite nlp ({nlp})"));
    }
    let temperature = get_f64(row, &m.temperature)?;
    if !temperature.is_finite() {
        return Err(format!("non-finite temperature ({temperature})"));
    }
    let domain = match row.get(&m.domain) {
        None | Some(Value::Null) => UNCLASSIFIED.to_string(),
        Some(_) => get_string(row, &m.domain)?,
    };
    let answer_text = match row.get(&m.answer_text) {
        None | Some(Value::Null) => None,
        Some(_) => Some(get_string(row, &m.answer_text)?),
    };
    let question_id = get_string(row, &m.question_id)?;
    let correct = match (keys.get(&question_id), &answer_text) {
        (Some(key), Some(text)) => grade_answer(text, key).correct,
        _ => get_bool(row, &m.correct)?,
    };
    Ok(TrialRecord {
        model_id: get_string(row, &m.model_id)?,
        dataset_id: get_string(row, &m.dataset_id)?,
        domain,
        temperature,
        question_id,
        answer_text,
        nlp,
        correct,
    })
}

fn field<'a>(row: &'a Row, name: &str) -> std::result::Result<&'a Value, String> {
    match row.get(name) {
        None | Some(Value::Null) => Err(format!("missing mandatory field `{name}`")),
        Some(v) => Ok(v),
    }
}

fn get_string(row: &Row, name: &str) -> std::result::Result<String, String> {
    match field(row, name)? {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(format!("field `{name}` is not a scalar")),
    }
}

fn get_f64(row: &Row, name: &str) -> std::result::Result<f64, String> {
    match field(row, name)? {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| format!("field `{name}` is not representable as f64")),
        Value::String(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("field `{name}` is not a number: {s:?}")),
        _ => Err(format!("field `{name}` is not a number")),
    }
}

fn get_bool(row: &Row, name: &str) -> std::result::Result<bool, String> {
    match field(row, name)? {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) => match n.as_f64() {
            Some(1.0) => Ok(true),
            Some(0.0) => Ok(false),
            _ => Err(format!("field `{name}` is not boolean")),
        },
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(format!("field `{name}` is not boolean: {s:?}")),
        },
        _ => Err(format!("field `{name}` is not boolean")),
    }
}

/// Writes records as JSON lines with canonical field names.
pub fn write_trials_jsonl<W: Write>(mut out: W, records: &[TrialRecord]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A validated, read-only collection of trials.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialStore {
    records: Vec<TrialRecord>,
}

impl TrialStore {
    pub fn new(records: Vec<TrialRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for rec in &records {
            if !rec.nlp.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite nlp for question {}",
                    rec.question_id
                )));
            }
            if !seen.insert(rec.key()) {
                return Err(Error::DuplicateTrial {
                    model_id: rec.model_id.clone(),
                    dataset_id: rec.dataset_id.clone(),
                    temperature: rec.temperature,
                    question_id: rec.question_id.clone(),
                });
            }
        }
        Ok(TrialStore { records })
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn filter(&self, f: &TrialFilter) -> Vec<TrialRecord> {
        filter_trials(&self.records, f)
    }

    /// Sorted distinct values of a string field.
    pub fn distinct<F: Fn(&TrialRecord) -> &str>(&self, f: F) -> Vec<String> {
        let mut v: Vec<String> = self.records.iter().map(|r| f(r).to_string()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn temperatures(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.records.iter().map(|r| r.temperature).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// Conjunction of optional equality constraints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialFilter {
    pub model_id: Option<String>,
    pub dataset_id: Option<String>,
    pub domain: Option<String>,
    pub temperature: Option<f64>,
}

impl TrialFilter {
    pub fn model(mut self, m: &str) -> Self {
        self.model_id = Some(m.to_string());
        self
    }
    pub fn dataset(mut self, d: &str) -> Self {
        self.dataset_id = Some(d.to_string());
        self
    }
    pub fn domain(mut self, d: &str) -> Self {
        self.domain = Some(d.to_string());
        self
    }
    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }

    pub fn matches(&self, r: &TrialRecord) -> bool {
        self.model_id.as_deref().is_none_or(|m| r.model_id == m)
            && self.dataset_id.as_deref().is_none_or(|d| r.dataset_id == d)
            && self.domain.as_deref().is_none_or(|d| r.domain == d)
            && self
                .temperature
                .is_none_or(|t| same_temperature(r.temperature, t))
    }
}

pub fn same_temperature(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

/// Subset of `trials` matching `filter`, in input order.
pub fn filter_trials(trials: &[TrialRecord], filter: &TrialFilter) -> Vec<TrialRecord> {
    trials.iter().filter(|r| filter.matches(r)).cloned().collect()
}

/// Reads an answer-key document: a JSON object mapping question ids to alias lists.
pub fn load_answer_keys<R: Read>(source: R, threshold: f64) -> Result<Vec<AnswerKey>> {
    let map: BTreeMap<String, Vec<String>> = serde_json::from_reader(source)?;
    map.into_iter()
        .map(|(qid, aliases)| AnswerKey::new(qid, aliases)?.with_threshold(threshold))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(model: &str, t: f64, q: &str, nlp: &str, correct: bool) -> String {
        format!(
            r#"{{"model_id":"{model}","dataset_id":"triviaqa","domain":"Geography","temperature":{t},"question_id":"{q}","nlp":{nlp},"correct":{correct}}}"#
        )
    }

    fn load(text: &str) -> Result<LoadOutcome> {
        load_trials(text.as_bytes(), TrialFormat::JsonLines, &FieldMapping::default())
    }

    #[test]
    fn three_good_lines() {
        let text = [
            line("m", 1.0, "q1", "-0.5", true),
            line("m", 1.0, "q2", "-1.5", false),
            line("m", 0.3, "q1", "-0.2", true),
        ]
        .join("\n");
        let out = load(&text).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.skipped.is_empty());
        assert_eq!(out.records[1].nlp, -1.5);
        assert!(!out.records[1].correct);
    }

    #[test]
    fn answer_keys_grade_rows_without_correct_field() {
        let text = [
            r#"{"model_id":"m","dataset_id":"d","temperature":1.0,"question_id":"q1","nlp":-0.3,"answer_text":"The Paris."}"#,
            r#"{"model_id":"m","dataset_id":"d","temperature":1.0,"question_id":"q2","nlp":-0.9,"answer_text":"Lyon","correct":true}"#,
            r#"{"model_id":"m","dataset_id":"d","temperature":1.0,"question_id":"q3","nlp":-0.9}"#,
        ]
        .join("\n");
        let keys: BTreeMap<String, AnswerKey> = [
            AnswerKey::new("q1", vec!["Paris".into()]).unwrap(),
            AnswerKey::new("q2", vec!["Marseille".into()]).unwrap(),
        ]
        .into_iter()
        .map(|k| (k.question_id.clone(), k))
        .collect();
        let out = load_trials_graded(text.as_bytes(), TrialFormat::JsonLines, &FieldMapping::default(), &keys).unwrap();
        assert_eq!(out.records.len(), 2);
        assert!(out.records[0].correct);
        // the key overrides a stale label
        assert!(!out.records[1].correct);
        assert_eq!(out.skipped[0].line, 3);
    }

    #[test]
    fn nan_nlp_is_skipped_with_line_number() {
        let text = [
            line("m", 1.0, "q1", "-0.5", true),
            line("m", 1.0, "q2", "\"NaN\"", false),
        ]
        .join("\n");
        let out = load(&text).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].line, 2);
    }

    #[test]
    fn missing_field_and_garbage_are_skipped() {
        let text = format!(
            "{}\nnot json\n{{\"model_id\":\"m\"}}\n",
            line("m", 1.0, "q1", "-0.5", true)
        );
        let out = load(&text).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.skipped.len(), 2);
        assert!(out.skipped[1].reason.contains("missing mandatory field"));
    }

    #[test]
    fn duplicate_key_names_the_key() {
        let text = [
            line("m", 1.0, "q1", "-0.5", true),
            line("m", 1.0, "q1", "-0.7", false),
        ]
        .join("\n");
        let err = load(&text).unwrap_err().to_string();
        assert!(err.contains("q1") && err.contains("model=m"), "{err}");
    }

    #[test]
    fn delimited_reader_with_custom_mapping() {
        let text = "model,ds,dom,temp,qid,logp,ok\nm,tqa,History,1.0,q1,-0.25,1\nm,tqa,History,1.0,q2,-2.5,0\n";
        let mapping = FieldMapping {
            model_id: "model".into(),
            dataset_id: "ds".into(),
            domain: "dom".into(),
            temperature: "temp".into(),
            question_id: "qid".into(),
            nlp: "logp".into(),
            correct: "ok".into(),
            ..FieldMapping::default()
        };
        let out = load_trials(text.as_bytes(), TrialFormat::Delimited(b','), &mapping).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].domain, "History");
        assert!(out.records[0].correct);
        assert_eq!(out.records[1].nlp, -2.5);
    }

    fn rec(domain: &str, t: f64, q: usize) -> TrialRecord {
        TrialRecord {
            model_id: "m".into(),
            dataset_id: "d".into(),
            domain: domain.into(),
            temperature: t,
            question_id: format!("q{q}"),
            answer_text: None,
            nlp: -(q as f64),
            correct: q.is_multiple_of(2),
        }
    }

    #[test]
    fn filter_by_temperature() {
        let trials: Vec<_> = (0..6).map(|i| rec("Geography", if i < 3 { 0.3 } else { 1.0 }, i)).collect();
        let got = filter_trials(&trials, &TrialFilter::default().temperature(1.0));
        assert_eq!(got.len(), 3);
        assert!(got.iter().all(|r| r.temperature == 1.0));
        assert_eq!(got[0].question_id, "q3");
    }

    #[test]
    fn filter_on_absent_domain_is_empty() {
        let trials: Vec<_> = (0..4).map(|i| rec("Geography", 1.0, i)).collect();
        assert!(filter_trials(&trials, &TrialFilter::default().domain("Music")).is_empty());
    }

    #[test]
    fn filter_counts_domain_rows() {
        let trials: Vec<_> = (0..15)
            .map(|i| rec(if i < 10 { "Geography" } else { "History & Politics" }, 1.0, i))
            .collect();
        assert_eq!(filter_trials(&trials, &TrialFilter::default().domain("Geography")).len(), 10);
    }

    #[test]
    fn store_rejects_duplicates() {
        assert!(TrialStore::new(vec![rec("G", 1.0, 1), rec("G", 1.0, 1)]).is_err());
        assert!(TrialStore::new(vec![rec("G", 1.0, 1), rec("G", 0.5, 1)]).is_ok());
    }

    #[test]
    fn answer_key_document() {
        let doc = r#"{"q1": ["Paris"], "q2": ["Beatles", "The Beatles"]}"#;
        let keys = load_answer_keys(doc.as_bytes(), 0.85).unwrap();
        assert_eq!(keys.len(), 2);
        assert_eq!(keys[1].aliases.len(), 2);
        assert!(load_answer_keys(r#"{"q1": []}"#.as_bytes(), 0.85).is_err());
    }
}
