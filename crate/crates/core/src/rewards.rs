//! Rule-based rewards for structured diagnostic responses: section format,
//! keyword coverage, exact-set diagnosis, and their weighted total.
//!
//! A response is plain text. Section lines read `Header: body`; the conclusion
//! is the last line starting with `Diagnosis:`, whose labels are separated by
//! commas or semicolons.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DIAGNOSIS_MARKER: &str = "Diagnosis:";

pub const DEFAULT_HEADERS: [&str; 3] = [
    "Location & Imaging Environment",
    "Mucosal Morphology & Focal Lesions",
    "Surface Texture & Microvascular Architecture",
];

/// Collapses every whitespace run to a single space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct SectionSchema {
    headers: [String; 3],
}

impl SectionSchema {
    pub fn new(headers: [&str; 3]) -> Result<Self> {
        Self::try_from(headers.iter().map(|h| h.to_string()).collect::<Vec<_>>())
    }

    pub fn headers(&self) -> &[String; 3] {
        &self.headers
    }
}

impl Default for SectionSchema {
    fn default() -> Self {
        Self::new(DEFAULT_HEADERS).expect("default headers are valid")
    }
}

impl TryFrom<Vec<String>> for SectionSchema {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        let v: Vec<String> = v.iter().map(|h| normalize_whitespace(h)).collect();
        let headers: [String; 3] = v.try_into().map_err(|v: Vec<String>| {
            Error::contract(format!("schema needs 3 headers, got {}", v.len()))
        })?;
        if headers.iter().any(String::is_empty) {
            return Err(Error::contract("schema headers must be non-empty"));
        }
        if headers[0] == headers[1] || headers[0] == headers[2] || headers[1] == headers[2] {
            return Err(Error::contract("schema headers must be distinct"));
        }
        Ok(Self { headers })
    }
}

impl From<SectionSchema> for Vec<String> {
    fn from(s: SectionSchema) -> Self {
        s.headers.into()
    }
}

/// Raw response text with its parsed view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredResponse {
    raw_text: String,
    sections: Vec<(String, String)>,
    diagnosis_line: Option<String>,
}

impl StructuredResponse {
    pub fn parse(raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let mut sections: Vec<(String, String)> = Vec::new();
        let mut diagnosis_line = None;
        for line in raw_text.lines() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix(DIAGNOSIS_MARKER) {
                diagnosis_line = Some(rest.trim().to_string());
                continue;
            }
            match t.split_once(':') {
                Some((head, body)) if !head.trim().is_empty() => {
                    sections.push((normalize_whitespace(head), body.trim().to_string()));
                }
                _ => match sections.last_mut() {
                    Some((_, body)) => {
                        if !body.is_empty() {
                            body.push(' ');
                        }
                        body.push_str(t);
                    }
                    None => sections.push((String::new(), t.to_string())),
                },
            }
        }
        Self {
            raw_text,
            sections,
            diagnosis_line,
        }
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }

    pub fn sections(&self) -> &[(String, String)] {
        &self.sections
    }

    /// Text after the last `Diagnosis:` marker, if any.
    pub fn diagnosis_line(&self) -> Option<&str> {
        self.diagnosis_line.as_deref()
    }
}

/// Nine reference keywords, three per section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<String>>", into = "Vec<Vec<String>>")]
pub struct KeywordSet {
    groups: [[String; 3]; 3],
}

impl KeywordSet {
    pub fn new(groups: [[&str; 3]; 3]) -> Result<Self> {
        Self::try_from(
            groups
                .iter()
                .map(|g| g.iter().map(|k| k.to_string()).collect())
                .collect::<Vec<Vec<String>>>(),
        )
    }

    /// Builds from a flat list of exactly nine keywords, three per section in
    /// order.
    pub fn from_flat(flat: &[String]) -> Result<Self> {
        if flat.len() != 9 {
            return Err(Error::contract(format!(
                "keyword set must have 9 entries, got {}",
                flat.len()
            )));
        }
        Self::try_from(flat.chunks(3).map(<[String]>::to_vec).collect::<Vec<_>>())
    }

    pub fn groups(&self) -> &[[String; 3]; 3] {
        &self.groups
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().flatten().map(String::as_str)
    }
}

impl TryFrom<Vec<Vec<String>>> for KeywordSet {
    type Error = Error;

    fn try_from(v: Vec<Vec<String>>) -> Result<Self> {
        if v.len() != 3 || v.iter().any(|g| g.len() != 3) {
            let n: usize = v.iter().map(Vec::len).sum();
            return Err(Error::contract(format!(
                "keyword set must be 3 groups of 3, got {} groups / {n} keywords",
                v.len()
            )));
        }
        let mut groups: [[String; 3]; 3] = Default::default();
        for (gi, g) in v.into_iter().enumerate() {
            for (ki, k) in g.into_iter().enumerate() {
                let k = normalize_whitespace(&k);
                if k.is_empty() {
                    return Err(Error::contract("keywords must be non-empty"));
                }
                groups[gi][ki] = k;
            }
        }
        Ok(Self { groups })
    }
}

impl From<KeywordSet> for Vec<Vec<String>> {
    fn from(k: KeywordSet) -> Self {
        k.groups.into_iter().map(Vec::from).collect()
    }
}

/// Canonical label set: lowercase, trimmed, sorted, deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct DiagnosisLabelSet(BTreeSet<String>);

pub fn canonical_label(s: &str) -> String {
    normalize_whitespace(s).to_lowercase()
}

impl DiagnosisLabelSet {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self(
            labels
                .into_iter()
                .map(|s| canonical_label(s.as_ref()))
                .filter(|s| !s.is_empty())
                .collect(),
        )
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.contains(&canonical_label(label))
    }
}

impl From<Vec<String>> for DiagnosisLabelSet {
    fn from(v: Vec<String>) -> Self {
        Self::new(v)
    }
}

impl From<DiagnosisLabelSet> for Vec<String> {
    fn from(s: DiagnosisLabelSet) -> Self {
        s.0.into_iter().collect()
    }
}

impl fmt::Display for DiagnosisLabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.iter().cloned().collect::<Vec<_>>().join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_fmt: f64,
    pub w_cog: f64,
    pub w_diag: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_fmt: 1.0,
            w_cog: 1.0,
            w_diag: 2.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_fmt", self.w_fmt),
            ("w_cog", self.w_cog),
            ("w_diag", self.w_diag),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(
                    format!("weights.{name}"),
                    "must be finite and nonnegative",
                ));
            }
        }
        Ok(())
    }

    pub fn max_total(&self) -> f64 {
        self.w_fmt + self.w_cog + self.w_diag
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_fmt: f64,
    pub r_cog: f64,
    pub r_diag: f64,
    pub total: f64,
}

/// 1 if every schema header occurs in the text; with `strict_order`, their
/// first occurrences must also follow schema order.
pub fn format_reward(
    response: &StructuredResponse,
    schema: &SectionSchema,
    strict_order: bool,
) -> f64 {
    let text = normalize_whitespace(response.raw_text());
    let mut last = None;
    for h in schema.headers() {
        let Some(pos) = text.find(h.as_str()) else {
            return 0.0;
        };
        if strict_order {
            if last.is_some_and(|p| pos <= p) {
                return 0.0;
            }
            last = Some(pos);
        }
    }
    1.0
}

/// Fraction of the nine keywords found as case-insensitive substrings.
pub fn cognition_reward(response: &StructuredResponse, keywords: &KeywordSet) -> f64 {
    let text = normalize_whitespace(response.raw_text()).to_lowercase();
    let hits = keywords
        .iter()
        .filter(|k| text.contains(&k.to_lowercase()))
        .count();
    hits as f64 / 9.0
}

pub fn diagnosis_reward(predicted: &DiagnosisLabelSet, gold: &DiagnosisLabelSet) -> f64 {
    if predicted == gold {
        1.0
    } else {
        0.0
    }
}

/// Labels named on the last `Diagnosis:` line that belong to `vocabulary`.
pub fn extract_diagnosis<S: AsRef<str>>(
    response: &StructuredResponse,
    vocabulary: &[S],
) -> DiagnosisLabelSet {
    let Some(line) = response.diagnosis_line() else {
        return DiagnosisLabelSet::default();
    };
    let vocab: BTreeSet<String> = vocabulary
        .iter()
        .map(|v| canonical_label(v.as_ref()))
        .collect();
    DiagnosisLabelSet::new(
        line.split([',', ';'])
            .map(canonical_label)
            .filter(|t| vocab.contains(t)),
    )
}

pub fn total_reward(
    r_fmt: f64,
    r_cog: f64,
    r_diag: f64,
    weights: &RewardWeights,
) -> RewardBreakdown {
    RewardBreakdown {
        r_fmt,
        r_cog,
        r_diag,
        total: weights.w_fmt * r_fmt + weights.w_cog * r_cog + weights.w_diag * r_diag,
    }
}

/// Everything needed to score a response besides its reference data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardContext {
    pub schema: SectionSchema,
    pub weights: RewardWeights,
    pub strict_order: bool,
    pub vocabulary: Vec<String>,
}

impl RewardContext {
    pub fn score(
        &self,
        response: &StructuredResponse,
        keywords: &KeywordSet,
        gold: &DiagnosisLabelSet,
    ) -> RewardBreakdown {
        let predicted = extract_diagnosis(response, &self.vocabulary);
        total_reward(
            format_reward(response, &self.schema, self.strict_order),
            cognition_reward(response, keywords),
            diagnosis_reward(&predicted, gold),
            &self.weights,
        )
    }
}

/// One line of a scoring input file.
#[derive(Debug, Clone, Deserialize)]
pub struct ScoreRequest {
    pub response: String,
    pub keywords: KeywordSetInput,
    pub gold_labels: Vec<String>,
    #[serde(default)]
    pub vocabulary: Option<Vec<String>>,
}

/// Keywords may be given as three groups of three or as a flat list of nine.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum KeywordSetInput {
    Grouped(Vec<Vec<String>>),
    Flat(Vec<String>),
}

impl KeywordSetInput {
    pub fn resolve(self) -> Result<KeywordSet> {
        match self {
            KeywordSetInput::Grouped(g) => KeywordSet::try_from(g),
            KeywordSetInput::Flat(f) => KeywordSet::from_flat(&f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredLine {
    pub line: usize,
    pub predicted: DiagnosisLabelSet,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub records: Vec<ScoredLine>,
    pub count: usize,
    pub mean_r_fmt: f64,
    pub mean_r_cog: f64,
    pub mean_r_diag: f64,
    pub mean_total: f64,
}

/// Scores a JSON-lines stream of `{response, keywords, gold_labels}`. The
/// diagnosis vocabulary is the context's, the record's gold labels and an
/// optional per-record `vocabulary`.
pub fn score_jsonl<R: BufRead>(reader: R, ctx: &RewardContext) -> Result<ScoreReport> {
    ctx.weights.validate()?;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<reward input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let req: ScoreRequest = serde_json::from_str(&line)
            .map_err(|e| Error::parse("reward input", format!("line {}: {e}", i + 1)))?;
        let keywords = req.keywords.resolve()?;
        let gold = DiagnosisLabelSet::new(&req.gold_labels);
        let mut vocab = ctx.vocabulary.clone();
        vocab.extend(req.gold_labels.iter().cloned());
        vocab.extend(req.vocabulary.into_iter().flatten());
        let local = RewardContext {
            vocabulary: vocab,
            ..ctx.clone()
        };
        let response = StructuredResponse::parse(req.response);
        records.push(ScoredLine {
            line: i + 1,
            predicted: extract_diagnosis(&response, &local.vocabulary),
            breakdown: local.score(&response, &keywords, &gold),
        });
    }
    let n = records.len();
    let mean = |f: fn(&RewardBreakdown) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(|r| f(&r.breakdown)).sum::<f64>() / n as f64
        }
    };
    Ok(ScoreReport {
        count: n,
        mean_r_fmt: mean(|b| b.r_fmt),
        mean_r_cog: mean(|b| b.r_cog),
        mean_r_diag: mean(|b| b.r_diag),
        mean_total: mean(|b| b.total),
        records,
    })
}
