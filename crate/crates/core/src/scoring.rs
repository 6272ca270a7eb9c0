//! Scoring of free-text responses against ground truth taken from the records.
//!
//! Everything here is lexicon- or structure-based and fully deterministic; no
//! second model is consulted.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Outcome;
use crate::lexicon::{contains_token_phrase, Lexicon};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoringError {
    #[error("treatment item is empty or has an empty segment: `{0}`")]
    EmptyItem(String),
    #[error("ground truth is empty")]
    EmptyTruth,
    #[error("no prediction/truth pairs to score")]
    EmptyInput,
}

/// A normalized hierarchical treatment path, e.g.
/// `pulmonary|ventilation and oxygenation|mechanical ventilation`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TreatmentItem {
    segments: Vec<String>,
}

impl TreatmentItem {
    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    /// First two segments, when the item has at least two.
    pub fn parent(&self) -> Option<(&str, &str)> {
        match self.segments.as_slice() {
            [a, b, ..] => Some((a.as_str(), b.as_str())),
            _ => None,
        }
    }

    pub fn leaf(&self) -> &str {
        self.segments.last().map(String::as_str).unwrap_or_default()
    }

    /// Item for a path taken from the treatment table. Empty segments are
    /// dropped; ingest guarantees at least one non-empty segment.
    pub fn from_record_path(raw: &str) -> Option<TreatmentItem> {
        let segments: Vec<String> = raw.split('|').map(canonical_segment).filter(|s| !s.is_empty()).collect();
        (!segments.is_empty()).then_some(TreatmentItem { segments })
    }
}

impl fmt::Display for TreatmentItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.segments.join("|"))
    }
}

impl TryFrom<String> for TreatmentItem {
    type Error = ScoringError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        normalize_item(&value)
    }
}

impl From<TreatmentItem> for String {
    fn from(item: TreatmentItem) -> String {
        item.to_string()
    }
}

fn canonical_segment(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn normalize_item(raw: &str) -> Result<TreatmentItem, ScoringError> {
    let segments: Vec<String> = raw.split('|').map(canonical_segment).collect();
    if segments.iter().any(String::is_empty) {
        return Err(ScoringError::EmptyItem(raw.to_string()));
    }
    Ok(TreatmentItem { segments })
}

/// Distinct normalized items of a set of record paths.
pub fn item_set<'a, I: IntoIterator<Item = &'a str>>(paths: I) -> BTreeSet<TreatmentItem> {
    paths.into_iter().filter_map(TreatmentItem::from_record_path).collect()
}

// ---------------------------------------------------------------------------
// List extraction

/// Content of a numbered (`1.`, `2)`) or bulleted (`-`, `*`, `•`, `+`) line.
fn list_item_content(line: &str) -> Option<&str> {
    let t = line.trim_start();
    for bullet in ["- ", "* ", "• ", "+ ", "– "] {
        if let Some(rest) = t.strip_prefix(bullet) {
            return Some(rest.trim());
        }
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && digits <= 3 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if r.is_empty() || r.starts_with(char::is_whitespace) {
                return Some(r.trim());
            }
        }
    }
    None
}

fn strip_markup(s: &str) -> String {
    s.replace("**", "").replace('`', "").trim().to_string()
}

fn is_section_heading(line: &str) -> bool {
    let t = strip_markup(line);
    t.starts_with('#') || (t.ends_with(':') && t.len() > 1)
}

/// Items of the list that follows the last heading matched by `is_heading`;
/// all list items of the text when no heading matches. Collection stops at
/// the next section heading once at least one item was found.
fn list_region_items(text: &str, is_heading: impl Fn(&str) -> bool) -> (Vec<String>, Option<String>) {
    let lines: Vec<&str> = text.lines().collect();
    let heading =
        lines.iter().rposition(|l| list_item_content(l).is_none() && is_heading(&strip_markup(l).to_lowercase()));
    let start = heading.map_or(0, |h| h + 1);
    let inline = heading.and_then(|h| {
        let l = strip_markup(lines[h]);
        l.split_once(':').map(|(_, rest)| rest.trim().to_string()).filter(|r| !r.is_empty())
    });

    let mut items = Vec::new();
    for line in &lines[start..] {
        match list_item_content(line) {
            Some(content) => {
                let c = strip_markup(content);
                if !c.is_empty() {
                    items.push(c);
                }
            }
            None if !items.is_empty() && is_section_heading(line) => break,
            None => {}
        }
    }
    (items, inline)
}

fn is_plan_heading(lower: &str) -> bool {
    lower.contains("treatment plan") || lower.starts_with("plan:") || lower.contains(" plan:")
}

/// Top-level categories of the eICU diagnosis and treatment vocabularies.
const BODY_SYSTEMS: &[&str] = &[
    "burns/trauma",
    "cardiovascular",
    "endocrine",
    "gastrointestinal",
    "general",
    "genitourinary",
    "hematology",
    "infectious diseases",
    "musculoskeletal",
    "neurologic",
    "obstetrics/gynecology",
    "oncology",
    "pulmonary",
    "renal",
    "surgery",
    "toxicology",
    "transplant",
];

/// Pulls a pipe path out of a line of prose, if the line contains one.
fn pipe_path_span(content: &str) -> Option<&str> {
    let first = content.find('|')?;
    let last = content.rfind('|')?;
    let head_delims = [':', ',', '(', ';'];
    let mut start = content[..first].rfind(head_delims).map_or(0, |i| i + 1);
    // drop leading prose ("continue pulmonary|...") when the head ends in a
    // known top-level system
    let head = content[start..first].to_lowercase();
    if let Some(sys) = BODY_SYSTEMS.iter().find(|s| head.trim_end().ends_with(*s)) {
        let at = head.trim_end().len() - sys.len();
        if head.len() == first - start && crate::lexicon::starts_at_word_boundary(&head, at) {
            start += at;
        }
    }
    let tail = &content[last + 1..];
    let mut end = tail.len();
    for d in ["(", ",", ";", ":", " - ", " – "] {
        if let Some(i) = tail.find(d) {
            end = end.min(i);
        }
    }
    Some(content[start..last + 1 + end].trim())
}

fn line_to_item(content: &str) -> Option<TreatmentItem> {
    if let Some(path) = pipe_path_span(content) {
        if let Ok(item) = normalize_item(path) {
            return Some(item);
        }
    }
    let whole = content.trim().trim_end_matches(['.', ';', ':', ',']).trim();
    if whole.is_empty() {
        return None;
    }
    // the whole line is a single segment, so pipes cannot survive
    normalize_item(&whole.replace('|', " ")).ok()
}

/// Extracts the enumerated plan from a response. Returns an empty list when
/// nothing plan-like is found.
pub fn extract_plan(response_text: &str) -> Vec<TreatmentItem> {
    let (lines, inline) = list_region_items(response_text, is_plan_heading);
    let mut items = Vec::new();
    if let Some(rest) = inline.filter(|r| r.contains('|')) {
        items.extend(line_to_item(&rest));
    }
    items.extend(lines.iter().filter_map(|l| line_to_item(l)));
    items
}

// ---------------------------------------------------------------------------
// Plan similarity

pub const EXACT_WEIGHT: f64 = 1.0;
pub const PARENT_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub exact_matches: usize,
    pub parent_matches: usize,
    pub predicted_count: usize,
    pub truth_count: usize,
    pub score: f64,
}

/// One-to-one matching of predicted against true items: exact matches first,
/// then items agreeing on their first two segments for half credit. The
/// weighted total is divided by the larger list size.
pub fn plan_similarity(predicted: &[TreatmentItem], truth: &[TreatmentItem]) -> SimilarityReport {
    let mut report = SimilarityReport {
        exact_matches: 0,
        parent_matches: 0,
        predicted_count: predicted.len(),
        truth_count: truth.len(),
        score: 0.0,
    };
    if predicted.is_empty() && truth.is_empty() {
        report.score = 1.0;
        return report;
    }

    let mut truth_used = vec![false; truth.len()];
    let mut pred_used = vec![false; predicted.len()];
    for (i, p) in predicted.iter().enumerate() {
        if let Some(j) = (0..truth.len()).find(|&j| !truth_used[j] && truth[j] == *p) {
            truth_used[j] = true;
            pred_used[i] = true;
            report.exact_matches += 1;
        }
    }
    // parent agreement is an equivalence relation, so first-fit is optimal
    for (i, p) in predicted.iter().enumerate() {
        let Some(parent) = p.parent().filter(|_| !pred_used[i]) else { continue };
        if let Some(j) = (0..truth.len()).find(|&j| !truth_used[j] && truth[j].parent() == Some(parent)) {
            truth_used[j] = true;
            pred_used[i] = true;
            report.parent_matches += 1;
        }
    }

    let denom = predicted.len().max(truth.len()) as f64;
    report.score = (EXACT_WEIGHT * report.exact_matches as f64 + PARENT_WEIGHT * report.parent_matches as f64) / denom;
    report
}

// ---------------------------------------------------------------------------
// Lexicons

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringLexicons {
    pub alternative: Lexicon,
    pub current: Lexicon,
    pub alive: Lexicon,
    pub expired: Lexicon,
    pub stopwords: Lexicon,
}

impl Default for ScoringLexicons {
    fn default() -> Self {
        ScoringLexicons {
            alternative: Lexicon::parse(include_str!("../lexicons/decision_alternative.txt")),
            current: Lexicon::parse(include_str!("../lexicons/decision_current.txt")),
            alive: Lexicon::parse(include_str!("../lexicons/outcome_alive.txt")),
            expired: Lexicon::parse(include_str!("../lexicons/outcome_expired.txt")),
            stopwords: Lexicon::parse(include_str!("../lexicons/stopwords.txt")),
        }
    }
}

impl ScoringLexicons {
    /// Defaults, with any of the standard lexicon files present in `dir`
    /// replacing the corresponding built-in list.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut lex = ScoringLexicons::default();
        let slots: [(&str, &mut Lexicon); 5] = [
            ("decision_alternative.txt", &mut lex.alternative),
            ("decision_current.txt", &mut lex.current),
            ("outcome_alive.txt", &mut lex.alive),
            ("outcome_expired.txt", &mut lex.expired),
            ("stopwords.txt", &mut lex.stopwords),
        ];
        for (name, slot) in slots {
            let path = dir.join(name);
            if path.exists() {
                *slot = Lexicon::load(&path)?;
            }
        }
        Ok(lex)
    }
}

// ---------------------------------------------------------------------------
// Why-not judgment

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlternativeJudgment {
    Alternative,
    Current,
    Undetermined,
}

fn decide(region: &str, lex: &ScoringLexicons) -> Option<AlternativeJudgment> {
    let alt = lex.alternative.last_match_end(region);
    let cur = lex.current.last_match_end(region);
    match (alt, cur) {
        (Some(a), Some(c)) if a > c => Some(AlternativeJudgment::Alternative),
        (Some(a), Some(c)) if c > a => Some(AlternativeJudgment::Current),
        (Some(_), None) => Some(AlternativeJudgment::Alternative),
        (None, Some(_)) => Some(AlternativeJudgment::Current),
        _ => None,
    }
}

/// Decides whether a why-not response prefers a different treatment. Looks at
/// the text after the last "decision", then the last sentence mentioning
/// "better", then the final paragraph; the first region with a verdict wins.
pub fn judge_alternative(response_text: &str, lex: &ScoringLexicons) -> AlternativeJudgment {
    let lower = response_text.to_lowercase();
    let mut regions: Vec<&str> = Vec::new();
    if let Some(i) = lower.rfind("decision") {
        regions.push(&lower[i..]);
    }
    if let Some(i) = lower.rfind("better") {
        let start = lower[..i].rfind(['.', '!', '?', '\n']).map_or(0, |s| s + 1);
        let end = lower[i..].find(['.', '!', '?', '\n']).map_or(lower.len(), |e| i + e);
        regions.push(&lower[start..end]);
    }
    if let Some(last) = lower.split("\n\n").map(str::trim).filter(|p| !p.is_empty()).last() {
        regions.push(last);
    }
    regions.into_iter().find_map(|r| decide(r, lex)).unwrap_or(AlternativeJudgment::Undetermined)
}

// ---------------------------------------------------------------------------
// So-what diagnosis similarity

/// Fraction of truth paths whose leaf segment is named in the response.
pub fn diagnosis_similarity(response_text: &str, truth: &BTreeSet<String>) -> Result<f64, ScoringError> {
    if truth.is_empty() {
        return Err(ScoringError::EmptyTruth);
    }
    let lower = response_text.to_lowercase();
    let hits = truth
        .iter()
        .filter(|path| {
            let leaf = path.rsplit('|').map(canonical_segment).find(|s| !s.is_empty()).unwrap_or_default();
            contains_token_phrase(&lower, &leaf)
        })
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

// ---------------------------------------------------------------------------
// How-about consideration coverage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub considerations: usize,
    pub satisfied: usize,
    pub coverage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn content_words(text: &str, stopwords: &Lexicon) -> HashSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 4 && !stopwords.contains_phrase(w))
        .map(str::to_string)
        .collect()
}

/// Share of the response's enumerated key considerations that the actual plan
/// addresses, where addressing means sharing at least one content word.
pub fn consideration_coverage(
    response_text: &str,
    actual_plan: &[TreatmentItem],
    lex: &ScoringLexicons,
) -> Result<CoverageReport, ScoringError> {
    if actual_plan.is_empty() {
        return Err(ScoringError::EmptyTruth);
    }
    let (considerations, _) = list_region_items(response_text, |l| l.contains("consideration"));
    if considerations.is_empty() {
        return Ok(CoverageReport {
            considerations: 0,
            satisfied: 0,
            coverage: 0.0,
            warning: Some("no enumerated considerations found in response".into()),
        });
    }
    let plan_words: HashSet<String> =
        actual_plan.iter().flat_map(|item| content_words(&item.segments().join(" "), &lex.stopwords)).collect();
    let satisfied = considerations
        .iter()
        .filter(|c| content_words(c, &lex.stopwords).iter().any(|w| plan_words.contains(w)))
        .count();
    Ok(CoverageReport {
        considerations: considerations.len(),
        satisfied,
        coverage: satisfied as f64 / considerations.len() as f64,
        warning: None,
    })
}

// ---------------------------------------------------------------------------
// Discharge outcome

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictedOutcome {
    Alive,
    Expired,
    Unknown,
}

impl From<Outcome> for PredictedOutcome {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Alive => PredictedOutcome::Alive,
            Outcome::Expired => PredictedOutcome::Expired,
        }
    }
}

/// Reads the predicted discharge status. When both polarities occur, the one
/// matched closest to the end of the text wins.
pub fn extract_outcome(response_text: &str, lex: &ScoringLexicons) -> PredictedOutcome {
    let lower = response_text.to_lowercase();
    match (lex.alive.last_match_end(&lower), lex.expired.last_match_end(&lower)) {
        (Some(a), Some(e)) if a > e => PredictedOutcome::Alive,
        (Some(a), Some(e)) if e > a => PredictedOutcome::Expired,
        (Some(_), None) => PredictedOutcome::Alive,
        (None, Some(_)) => PredictedOutcome::Expired,
        _ => PredictedOutcome::Unknown,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    /// 0 when undefined (no positive predictions); see `precision_defined`.
    pub precision: f64,
    pub precision_defined: bool,
    pub recall: f64,
    pub recall_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub per_label: BTreeMap<Outcome, LabelMetrics>,
    pub total: usize,
    pub correct: usize,
    pub unknown_count: usize,
    pub accuracy: f64,
}

impl ClassificationMetrics {
    pub fn label(&self, l: Outcome) -> &LabelMetrics {
        &self.per_label[&l]
    }
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

/// Per-label precision/recall and accuracy over (predicted, truth) pairs.
/// Unknown predictions are wrong for accuracy and a false negative for the
/// true label, but never a false positive.
pub fn classification_metrics(pairs: &[(PredictedOutcome, Outcome)]) -> Result<ClassificationMetrics, ScoringError> {
    if pairs.is_empty() {
        return Err(ScoringError::EmptyInput);
    }
    let mut per_label: BTreeMap<Outcome, LabelMetrics> =
        Outcome::ALL.iter().map(|&l| (l, LabelMetrics::default())).collect();
    let mut correct = 0;
    let mut unknown_count = 0;
    for &(pred, truth) in pairs {
        let predicted_label = match pred {
            PredictedOutcome::Alive => Some(Outcome::Alive),
            PredictedOutcome::Expired => Some(Outcome::Expired),
            PredictedOutcome::Unknown => None,
        };
        match predicted_label {
            Some(p) if p == truth => {
                correct += 1;
                per_label.get_mut(&truth).unwrap().true_positive += 1;
            }
            Some(p) => {
                per_label.get_mut(&p).unwrap().false_positive += 1;
                per_label.get_mut(&truth).unwrap().false_negative += 1;
            }
            None => {
                unknown_count += 1;
                per_label.get_mut(&truth).unwrap().false_negative += 1;
            }
        }
    }
    for m in per_label.values_mut() {
        (m.precision, m.precision_defined) = ratio(m.true_positive, m.true_positive + m.false_positive);
        (m.recall, m.recall_defined) = ratio(m.true_positive, m.true_positive + m.false_negative);
    }
    Ok(ClassificationMetrics {
        per_label,
        total: pairs.len(),
        correct,
        unknown_count,
        accuracy: correct as f64 / pairs.len() as f64,
    })
}
