//! Time segmentation, vitals aggregation and narrative rendering.
//!
//! Narrative grammar (clauses are joined with `", "`, in offset order):
//!
//! ```text
//! diagnosis: <path>, <path> (offset: N)
//! treatment: <path> (Offset: N)
//! vitalperiodic: sao2: <mean>(mean) <median>(median) <max>(max) <min>(min), heartrate: ..., respiration: ...
//! ```
//!
//! At each offset the diagnosis clause comes first, then the treatment clause,
//! then the vitals block summarizing the window that ends at that treatment
//! offset. Vitals blocks for empty windows are omitted, as are signals without
//! samples. Means print at full precision; the other statistics with one
//! decimal.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{PatientRecord, VitalSample};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimelineError {
    #[error("record has no treatment events")]
    NoTreatments,
    #[error("window start {start} is not before end {end}")]
    InvalidWindow { start: i64, end: i64 },
    #[error("narrative policy includes nothing")]
    InvalidPolicy,
    #[error("nothing left to render after applying the narrative policy")]
    EmptyNarrative,
}

/// Half-open interval `[start_min, end_min)` of minutes since unit admission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawWindow")]
pub struct TimeWindow {
    start_min: i64,
    end_min: i64,
}

#[derive(Deserialize)]
struct RawWindow {
    start_min: i64,
    end_min: i64,
}

impl TryFrom<RawWindow> for TimeWindow {
    type Error = TimelineError;

    fn try_from(raw: RawWindow) -> Result<Self, Self::Error> {
        TimeWindow::new(raw.start_min, raw.end_min)
    }
}

impl TimeWindow {
    pub fn new(start_min: i64, end_min: i64) -> Result<Self, TimelineError> {
        if start_min < end_min {
            Ok(TimeWindow { start_min, end_min })
        } else {
            Err(TimelineError::InvalidWindow { start: start_min, end: end_min })
        }
    }

    pub fn start_min(&self) -> i64 {
        self.start_min
    }

    pub fn end_min(&self) -> i64 {
        self.end_min
    }

    pub fn contains(&self, offset: i64) -> bool {
        offset >= self.start_min && offset < self.end_min
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
    pub min: Option<f64>,
}

impl SignalStats {
    pub fn from_values(mut values: Vec<f64>) -> Self {
        if values.is_empty() {
            return SignalStats::default();
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        values.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 };
        SignalStats {
            count: n,
            mean: Some(mean),
            median: Some(median),
            max: values.last().copied(),
            min: values.first().copied(),
        }
    }

    fn render(&self) -> Option<String> {
        let (mean, median, max, min) = (self.mean?, self.median?, self.max?, self.min?);
        Some(format!("{mean:?}(mean) {median:.1}(median) {max:.1}(max) {min:.1}(min)"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VitalSummary {
    pub sao2: SignalStats,
    pub heartrate: SignalStats,
    pub respiration: SignalStats,
    /// Samples in the window, whichever signals they carry.
    pub sample_count: usize,
}

impl VitalSummary {
    pub fn signals(&self) -> [(&'static str, &SignalStats); 3] {
        [("sao2", &self.sao2), ("heartrate", &self.heartrate), ("respiration", &self.respiration)]
    }

    /// `sao2: ...(mean) ...(median) ...(max) ...(min), heartrate: ...`, or
    /// `None` when no signal has a value.
    pub fn render(&self) -> Option<String> {
        let parts: Vec<String> =
            self.signals().iter().filter_map(|(name, s)| s.render().map(|r| format!("{name}: {r}"))).collect();
        (!parts.is_empty()).then(|| parts.join(", "))
    }
}

/// Statistics per signal over the samples inside `window`. Absent values
/// are skipped for their signal.
pub fn aggregate_vitals(samples: &[VitalSample], window: TimeWindow) -> VitalSummary {
    let inside: Vec<&VitalSample> = samples.iter().filter(|s| window.contains(s.offset_min)).collect();
    let collect =
        |f: fn(&VitalSample) -> Option<f64>| SignalStats::from_values(inside.iter().filter_map(|s| f(s)).collect());
    VitalSummary {
        sao2: collect(|s| s.sao2),
        heartrate: collect(|s| s.heartrate),
        respiration: collect(|s| s.respiration),
        sample_count: inside.len(),
    }
}

/// Windows ending at each distinct treatment offset. The first starts at
/// `min(0, earliest vital offset)`; each later one at the previous treatment
/// offset. A first treatment at or before that start yields no first window.
pub fn segment_by_treatments(record: &PatientRecord) -> Result<Vec<TimeWindow>, TimelineError> {
    let offsets: BTreeSet<i64> = record.treatments.iter().map(|t| t.offset_min).collect();
    if offsets.is_empty() {
        return Err(TimelineError::NoTreatments);
    }
    let mut prev = record.vitals.iter().map(|v| v.offset_min).min().map_or(0, |m| m.min(0));
    let mut windows = Vec::with_capacity(offsets.len());
    for t in offsets {
        if let Ok(w) = TimeWindow::new(prev, t) {
            windows.push(w);
        }
        prev = prev.max(t);
    }
    Ok(windows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativePolicy {
    pub include_diagnoses: bool,
    pub include_treatments: bool,
    pub include_vitals: bool,
    /// Events at or after this offset are dropped.
    pub cutoff_min: Option<i64>,
}

impl Default for NarrativePolicy {
    fn default() -> Self {
        NarrativePolicy { include_diagnoses: true, include_treatments: true, include_vitals: true, cutoff_min: None }
    }
}

impl NarrativePolicy {
    pub fn validate(&self) -> Result<(), TimelineError> {
        if self.include_diagnoses || self.include_treatments || self.include_vitals {
            Ok(())
        } else {
            Err(TimelineError::InvalidPolicy)
        }
    }

    pub fn diagnoses_only() -> Self {
        NarrativePolicy { include_diagnoses: true, include_treatments: false, include_vitals: false, cutoff_min: None }
    }

    pub fn without_diagnoses() -> Self {
        NarrativePolicy { include_diagnoses: false, ..NarrativePolicy::default() }
    }

    pub fn without_vitals() -> Self {
        NarrativePolicy { include_vitals: false, ..NarrativePolicy::default() }
    }
}

pub fn diagnosis_clause<'a>(paths: impl IntoIterator<Item = &'a str>, offset: i64) -> String {
    format!("diagnosis: {} (offset: {offset})", paths.into_iter().collect::<Vec<_>>().join(", "))
}

pub fn treatment_clause<'a>(paths: impl IntoIterator<Item = &'a str>, offset: i64) -> String {
    format!("treatment: {} (Offset: {offset})", paths.into_iter().collect::<Vec<_>>().join(", "))
}

pub fn render_narrative(record: &PatientRecord, policy: &NarrativePolicy) -> Result<String, TimelineError> {
    policy.validate()?;
    let record = match policy.cutoff_min {
        Some(cut) => record.restricted_to(i64::MIN, cut),
        None => record.clone(),
    };

    let mut offsets = BTreeSet::new();
    if policy.include_diagnoses {
        offsets.extend(record.diagnoses.iter().map(|d| d.offset_min));
    }
    if policy.include_treatments || policy.include_vitals {
        offsets.extend(record.treatments.iter().map(|t| t.offset_min));
    }
    let windows = if policy.include_vitals { segment_by_treatments(&record).unwrap_or_default() } else { Vec::new() };

    let mut clauses = Vec::new();
    for offset in offsets {
        if policy.include_diagnoses {
            let dx: Vec<&str> =
                record.diagnoses.iter().filter(|d| d.offset_min == offset).map(|d| d.diagnosis_path.as_str()).collect();
            if !dx.is_empty() {
                clauses.push(diagnosis_clause(dx, offset));
            }
        }
        if policy.include_treatments {
            let tx: Vec<&str> = record
                .treatments
                .iter()
                .filter(|t| t.offset_min == offset)
                .map(|t| t.treatment_path.as_str())
                .collect();
            if !tx.is_empty() {
                clauses.push(treatment_clause(tx, offset));
            }
        }
        if let Some(w) = windows.iter().find(|w| w.end_min() == offset) {
            if let Some(v) = aggregate_vitals(&record.vitals, *w).render() {
                clauses.push(format!("vitalperiodic: {v}"));
            }
        }
    }
    if clauses.is_empty() {
        return Err(TimelineError::EmptyNarrative);
    }
    Ok(clauses.join(", "))
}
