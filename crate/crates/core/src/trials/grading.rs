//! Answer grading: normalised exact match with a gestalt-similarity fallback.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.85;

/// Text normalisation applied identically to generated answers and aliases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    pub lowercase: bool,
    /// Drop a leading "the", "a" or "an".
    pub strip_articles: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            lowercase: true,
            strip_articles: true,
        }
    }
}

impl Normalization {
    /// Case folding and trimming only, no article stripping.
    pub fn case_only() -> Self {
        Normalization {
            lowercase: true,
            strip_articles: false,
        }
    }

    pub fn apply(&self, text: &str) -> String {
        let mut s: String = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        s = collapse_whitespace(trim_punct(&s));
        if self.strip_articles {
            for article in ["the ", "a ", "an "] {
                if let Some(rest) = s.strip_prefix(article) {
                    s = rest.to_string();
                    break;
                }
            }
            s = collapse_whitespace(trim_punct(&s));
        }
        s
    }
}

fn is_edge_punct(c: char) -> bool {
    c.is_whitespace() || c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '…')
}

fn trim_punct(s: &str) -> &str {
    s.trim_matches(is_edge_punct)
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub question_id: String,
    pub aliases: Vec<String>,
    #[serde(default = "default_threshold")]
    pub similarity_threshold: f64,
    #[serde(default)]
    pub normalization: Normalization,
}

fn default_threshold() -> f64 {
    DEFAULT_SIMILARITY_THRESHOLD
}

impl AnswerKey {
    pub fn new(question_id: impl Into<String>, aliases: Vec<String>) -> Result<Self> {
        let key = AnswerKey {
            question_id: question_id.into(),
            aliases,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            normalization: Normalization::default(),
        };
        key.validate()?;
        Ok(key)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        self.similarity_threshold = threshold;
        self.validate()?;
        Ok(self)
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.aliases.is_empty() {
            return Err(Error::InvalidInput(format!(
                "answer key {} has no aliases",
                self.question_id
            )));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "similarity threshold {} outside (0, 1]",
                self.similarity_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grade {
    pub correct: bool,
    /// Best similarity ratio over aliases (1.0 on exact match).
    pub similarity: f64,
    /// Set when the generated answer was empty after normalisation.
    pub empty_answer: bool,
}

/// Grades a generated answer against the key's aliases.
///
/// Correct iff the normalised answer equals a normalised alias, or the best
/// Ratcliff–Obershelp ratio over aliases reaches the key's threshold.
pub fn grade_answer(generated: &str, key: &AnswerKey) -> Grade {
    let norm = key.normalization;
    let answer = norm.apply(generated);
    if answer.is_empty() {
        return Grade {
            correct: false,
            similarity: 0.0,
            empty_answer: true,
        };
    }
    let mut best = 0.0f64;
    for alias in &key.aliases {
        let alias = norm.apply(alias);
        if alias == answer {
            return Grade {
                correct: true,
                similarity: 1.0,
                empty_answer: false,
            };
        }
        best = best.max(gestalt_ratio(&answer, &alias));
    }
    Grade {
        correct: best >= key.similarity_threshold,
        similarity: best,
        empty_answer: false,
    }
}

/// Ratcliff–Obershelp similarity `2M / (|a| + |b|)`, where `M` counts the
/// characters in the recursively found longest common blocks. Ties between
/// equally long blocks go to the earliest start in `a`, then in `b`.
pub fn gestalt_ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * matched_chars(&a, &b) as f64 / total as f64
}

fn matched_chars(a: &[char], b: &[char]) -> usize {
    let mut stack = vec![(0usize, a.len(), 0usize, b.len())];
    let mut matched = 0;
    while let Some((alo, ahi, blo, bhi)) = stack.pop() {
        let (i, j, size) = longest_match(a, b, alo, ahi, blo, bhi);
        if size == 0 {
            continue;
        }
        matched += size;
        if alo < i && blo < j {
            stack.push((alo, i, blo, j));
        }
        if i + size < ahi && j + size < bhi {
            stack.push((i + size, ahi, j + size, bhi));
        }
    }
    matched
}

fn longest_match(
    a: &[char],
    b: &[char],
    alo: usize,
    ahi: usize,
    blo: usize,
    bhi: usize,
) -> (usize, usize, usize) {
    let (mut best_i, mut best_j, mut best) = (alo, blo, 0);
    // run[j] = length of the common suffix ending at a[i-1], b[j-1]
    let width = bhi - blo;
    let mut prev = vec![0usize; width + 1];
    let mut cur = vec![0usize; width + 1];
    for i in alo..ahi {
        for j in blo..bhi {
            let col = j - blo + 1;
            cur[col] = if a[i] == b[j] { prev[col - 1] + 1 } else { 0 };
            let len = cur[col];
            if len > best {
                best = len;
                best_i = i + 1 - len;
                best_j = j + 1 - len;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
        cur.iter_mut().for_each(|v| *v = 0);
    }
    (best_i, best_j, best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(aliases: &[&str]) -> AnswerKey {
        AnswerKey::new("q", aliases.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn exact_match() {
        assert!(grade_answer("Paris", &key(&["Paris"])).correct);
    }

    #[test]
    fn leading_article_blocks_fuzzy_match_without_stripping() {
        // "the beatles" vs "beatles": one block of 7 chars, 2*7/(11+7) = 0.777...
        let k = key(&["Beatles"]).with_normalization(Normalization::case_only());
        let g = grade_answer("The Beatles", &k);
        assert!(!g.correct);
        assert!((g.similarity - 14.0 / 18.0).abs() < 1e-12);
    }

    #[test]
    fn leading_article_stripped_by_default() {
        assert!(grade_answer("The Beatles", &key(&["Beatles"])).correct);
    }

    #[test]
    fn case_folding() {
        let k = key(&["Beatles"]).with_normalization(Normalization::case_only());
        assert!(grade_answer("beatles", &k).correct);
    }

    #[test]
    fn empty_answer_is_flagged() {
        let g = grade_answer("  ... ", &key(&["Paris"]));
        assert!(!g.correct);
        assert!(g.empty_answer);
    }

    #[test]
    fn fuzzy_fallback_at_threshold() {
        // "abraham lincoln" vs "abraham lincon": 14 matched, 2*14/29 = 0.9655
        let g = grade_answer("Abraham Lincon", &key(&["Abraham Lincoln"]));
        assert!(g.correct);
        assert!((g.similarity - 28.0 / 29.0).abs() < 1e-12);
    }

    #[test]
    fn gestalt_matches_hand_computed_blocks() {
        // difflib's classic example: ratio("abcd", "bcde") = 0.75
        assert!((gestalt_ratio("abcd", "bcde") - 0.75).abs() < 1e-12);
        // "WIKIMEDIA" vs "WIKIMANIA": blocks WIKIM + IA = 7 -> 14/18
        assert!((gestalt_ratio("WIKIMEDIA", "WIKIMANIA") - 14.0 / 18.0).abs() < 1e-12);
        assert_eq!(gestalt_ratio("", ""), 1.0);
        assert_eq!(gestalt_ratio("abc", ""), 0.0);
    }

    #[test]
    fn key_validation() {
        assert!(AnswerKey::new("q", vec![]).is_err());
        assert!(key(&["x"]).with_threshold(0.0).is_err());
        assert!(key(&["x"]).with_threshold(1.0).is_ok());
    }

    #[test]
    fn normalisation_trims_punctuation() {
        let n = Normalization::default();
        assert_eq!(n.apply("  The   Eiffel Tower!  "), "eiffel tower");
        assert_eq!(n.apply("\"An apple.\""), "apple");
    }
}
