// SPDX-License-Identifier: MIT OR Apache-2.0

//! Code-generation evaluation metrics.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexer::{regions, RegionKind};

/// The 50 reserved Java keywords plus the `true`, `false` and `null`
/// literals.
pub const JAVA_RESERVED: [&str; 53] = [
    "abstract",
    "assert",
    "boolean",
    "break",
    "byte",
    "case",
    "catch",
    "char",
    "class",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extends",
    "final",
    "finally",
    "float",
    "for",
    "goto",
    "if",
    "implements",
    "import",
    "instanceof",
    "int",
    "interface",
    "long",
    "native",
    "new",
    "package",
    "private",
    "protected",
    "public",
    "return",
    "short",
    "static",
    "strictfp",
    "super",
    "switch",
    "synchronized",
    "this",
    "throw",
    "throws",
    "transient",
    "try",
    "void",
    "volatile",
    "while",
    "true",
    "false",
    "null",
];

fn normalize(s: &str) -> String {
    s.replace("\r\n", "\n")
}

/// 1 when the texts are equal after CRLF normalisation, else 0.
pub fn exact_match(candidate: &str, reference: &str) -> f64 {
    f64::from(normalize(candidate) == normalize(reference))
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Strip surrounding whitespace and, when the text holds a code fence, the
/// lines before it, the opening fence line and its closing fence.
pub fn trim(candidate: &str) -> String {
    let text = normalize(candidate);
    let lines: Vec<&str> = text.split('\n').collect();
    let Some(open) = lines.iter().position(|l| is_fence(l)) else {
        return text.trim().to_owned();
    };
    let mut kept: Vec<&str> = Vec::with_capacity(lines.len());
    let mut closed = false;
    for line in &lines[open + 1..] {
        if !closed && is_fence(line) {
            closed = true;
            continue;
        }
        kept.push(line);
    }
    kept.join("\n").trim().to_owned()
}

/// 1 when the trimmed candidate equals, starts with or ends with the
/// reference.
pub fn em_trim(candidate: &str, reference: &str) -> f64 {
    let c = trim(candidate);
    let r = normalize(reference);
    f64::from(c == r || c.starts_with(&r) || c.ends_with(&r))
}

/// Word runs (`[A-Za-z0-9_]`, plus any non-ASCII alphanumerics) and single
/// punctuation characters; whitespace separates.
pub fn bleu_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let word = c.is_alphanumeric() || c == '_';
        if word {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
        if !c.is_whitespace() {
            out.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU-4 with clipped precisions, uniform weights and brevity
/// penalty. A zero precision for n > 1 is replaced by `1 / (2 * count)`
/// where `count` is the number of candidate n-grams (at least 1).
pub fn bleu4(candidate: &str, reference: &str) -> f64 {
    let c_norm = normalize(candidate);
    let r_norm = normalize(reference);
    let cand = bleu_tokens(&c_norm);
    let refr = bleu_tokens(&r_norm);
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let c_counts = ngram_counts(&cand, n);
        let r_counts = ngram_counts(&refr, n);
        let total = cand.len().saturating_sub(n - 1);
        let matched: usize = c_counts
            .iter()
            .map(|(g, &c)| c.min(r_counts.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (2.0 * total.max(1) as f64)
        };
        log_sum += p.ln() / 4.0;
    }
    let (c, r) = (cand.len() as f64, refr.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    (bp * log_sum.exp()).clamp(0.0, 1.0)
}

pub fn bleu_trim(candidate: &str, reference: &str) -> f64 {
    bleu4(&trim(candidate), reference)
}

/// `1 - levenshtein / max_len` over characters; 1.0 for two empty strings.
pub fn edit_similarity(candidate: &str, reference: &str) -> f64 {
    strsim::normalized_levenshtein(&normalize(candidate), &normalize(reference))
}

/// Java identifiers in code regions, in order, keywords excluded.
pub fn extract_identifiers(code: &str) -> Vec<String> {
    let mut out = Vec::new();
    for region in regions(code) {
        if region.kind != RegionKind::Code {
            continue;
        }
        let text = &code[region.start..region.end];
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let b = bytes[i];
            if b.is_ascii_alphabetic() || b == b'_' || b == b'$' {
                let s = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$')
                {
                    i += 1;
                }
                let ident = &text[s..i];
                if !JAVA_RESERVED.contains(&ident) {
                    out.push(ident.to_owned());
                }
            } else if b.is_ascii_digit() {
                // Numeric literal, including suffixes and exponents.
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.')
                {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
    }
    out
}

/// Identifier exact match and multiset F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdMatch {
    pub em: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn id_match(candidate: &str, reference: &str) -> IdMatch {
    id_match_lists(
        &extract_identifiers(candidate),
        &extract_identifiers(reference),
    )
}

/// [`id_match`] over pre-extracted identifier lists.
pub fn id_match_lists(cand: &[String], refr: &[String]) -> IdMatch {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for c in cand {
        counts.entry(c).or_default().0 += 1;
    }
    for r in refr {
        counts.entry(r).or_default().1 += 1;
    }
    let tp: usize = counts.values().map(|&(c, r)| c.min(r)).sum();
    let fp = cand.len() - tp;
    let fn_ = refr.len() - tp;
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    };
    IdMatch {
        em: f64::from(cand == refr),
        f1,
        tp,
        fp,
        fn_,
    }
}

/// Percentage change of `modified` relative to `original`.
pub fn relative_delta(modified: f64, original: f64) -> Result<f64> {
    if original == 0.0 {
        return Err(Error::UndefinedBaseline);
    }
    Ok((modified - original) / original * 100.0)
}

/// Fraction of `true` outcomes.
pub fn success_rate(outcomes: &[bool]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Empty("outcomes"));
    }
    Ok(outcomes.iter().filter(|&&o| o).count() as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Em,
    EmTrim,
    Bleu4,
    BleuTrim,
    Es,
    IdEm,
    IdF1,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Em,
        Metric::EmTrim,
        Metric::Bleu4,
        Metric::BleuTrim,
        Metric::Es,
        Metric::IdEm,
        Metric::IdF1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Em => "em",
            Metric::EmTrim => "em_trim",
            Metric::Bleu4 => "bleu4",
            Metric::BleuTrim => "bleu_trim",
            Metric::Es => "es",
            Metric::IdEm => "id_em",
            Metric::IdF1 => "id_f1",
        }
    }

    pub fn score(self, candidate: &str, reference: &str) -> f64 {
        match self {
            Metric::Em => exact_match(candidate, reference),
            Metric::EmTrim => em_trim(candidate, reference),
            Metric::Bleu4 => bleu4(candidate, reference),
            Metric::BleuTrim => bleu_trim(candidate, reference),
            Metric::Es => edit_similarity(candidate, reference),
            Metric::IdEm => id_match(candidate, reference).em,
            Metric::IdF1 => id_match(candidate, reference).f1,
        }
    }

    /// Parse a comma-separated list such as `em,bleu4,id_f1`.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out: Vec<Metric> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Metric = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::Empty("metric list"));
        }
        Ok(out)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric `{s}`")))
    }
}

/// Scores for one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScores {
    pub id: String,
    pub scores: BTreeMap<Metric, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: Vec<RecordScores>,
    /// Mean of each metric over records.
    pub aggregate: BTreeMap<Metric, f64>,
}

/// Score `(id, candidate, reference)` triples.
pub fn evaluate(items: &[(String, String, String)], metrics: &[Metric]) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    let records: Vec<RecordScores> = items
        .iter()
        .map(|(id, cand, refr)| RecordScores {
            id: id.clone(),
            scores: metrics.iter().map(|&m| (m, m.score(cand, refr))).collect(),
        })
        .collect();
    let aggregate = metrics
        .iter()
        .map(|&m| {
            let mean = records.iter().map(|r| r.scores[&m]).sum::<f64>() / records.len() as f64;
            (m, mean)
        })
        .collect();
    Ok(MetricReport { records, aggregate })
}

/// Relative delta of each shared aggregate of `treated` against `baseline`;
/// `None` where the baseline is zero.
pub fn compare(treated: &MetricReport, baseline: &MetricReport) -> BTreeMap<Metric, Option<f64>> {
    baseline
        .aggregate
        .iter()
        .filter_map(|(m, &b)| {
            treated
                .aggregate
                .get(m)
                .map(|&t| (*m, relative_delta(t, b).ok()))
        })
        .collect()
}
