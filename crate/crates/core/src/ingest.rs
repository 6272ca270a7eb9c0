//! Loading of eICU-shaped tables and assembly of per-stay patient records.
//!
//! Input files are comma-separated with a header row. Columns are addressed by
//! name, so column order does not matter and extra columns are ignored.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),
    #[error("{kind} table is missing required column `{column}`")]
    MissingColumn { kind: TableKind, column: &'static str },
    #[error("age `{0}` is not a number")]
    NonNumericAge(String),
    #[error("age {0} is above 89 but not written as the `> 89` sentinel")]
    AgeOutOfRange(u64),
    #[error("{kind} row {line}: {reason}")]
    Row { kind: TableKind, line: u64, reason: String },
    #[error("duplicate patientunitstayid {0}")]
    DuplicateStayId(StayId),
}

/// `patientunitstayid`: one ICU unit stay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct StayId(u64);

impl StayId {
    pub fn new(value: u64) -> Option<Self> {
        (value > 0).then_some(Self(value))
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl TryFrom<u64> for StayId {
    type Error = String;

    fn try_from(value: u64) -> Result<Self, Self::Error> {
        StayId::new(value).ok_or_else(|| "patientunitstayid must be positive".to_string())
    }
}

impl From<StayId> for u64 {
    fn from(id: StayId) -> u64 {
        id.0
    }
}

impl fmt::Display for StayId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Patient age as recorded in the patient table. Ages above 89 are censored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgeValue {
    Years(u8),
    Over89,
}

impl AgeValue {
    /// Age in whole years for distance computations; `Over89` counts as 90.
    pub fn approx_years(self) -> u32 {
        match self {
            AgeValue::Years(y) => u32::from(y),
            AgeValue::Over89 => 90,
        }
    }
}

impl fmt::Display for AgeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgeValue::Years(y) => write!(f, "{y}"),
            AgeValue::Over89 => f.write_str("> 89"),
        }
    }
}

pub fn parse_age(raw: &str) -> Result<AgeValue, IngestError> {
    let trimmed = raw.trim();
    if let Some(rest) = trimmed.strip_prefix('>') {
        if rest.trim() == "89" {
            return Ok(AgeValue::Over89);
        }
        return Err(IngestError::NonNumericAge(raw.to_string()));
    }
    if trimmed.is_empty() || !trimmed.bytes().all(|b| b.is_ascii_digit()) {
        return Err(IngestError::NonNumericAge(raw.to_string()));
    }
    let years: u64 = trimmed.parse().map_err(|_| IngestError::NonNumericAge(raw.to_string()))?;
    if years > 89 {
        return Err(IngestError::AgeOutOfRange(years));
    }
    Ok(AgeValue::Years(years as u8))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl Gender {
    fn parse(raw: &str) -> Self {
        match raw.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Gender::Female,
            "male" | "m" => Gender::Male,
            _ => Gender::Unknown,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "Female",
            Gender::Male => "Male",
            Gender::Unknown => "Unknown",
        })
    }
}

/// Known outcome label of an ICU stay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Alive,
    Expired,
}

impl Outcome {
    pub const ALL: [Outcome; 2] = [Outcome::Alive, Outcome::Expired];
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Alive => "Alive",
            Outcome::Expired => "Expired",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DischargeStatus {
    Alive,
    Expired,
    Unknown,
}

impl DischargeStatus {
    fn parse(raw: &str) -> Self {
        match raw.trim().to_ascii_lowercase().as_str() {
            "alive" => DischargeStatus::Alive,
            "expired" => DischargeStatus::Expired,
            _ => DischargeStatus::Unknown,
        }
    }

    pub fn outcome(self) -> Option<Outcome> {
        match self {
            DischargeStatus::Alive => Some(Outcome::Alive),
            DischargeStatus::Expired => Some(Outcome::Expired),
            DischargeStatus::Unknown => None,
        }
    }
}

impl From<Outcome> for DischargeStatus {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Alive => DischargeStatus::Alive,
            Outcome::Expired => DischargeStatus::Expired,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientStay {
    pub stay_id: StayId,
    /// Carried opaquely; never used for cohort logic.
    pub unique_pid: String,
    /// Carried opaquely; never used for cohort logic.
    pub health_system_stay_id: String,
    pub gender: Gender,
    pub age: AgeValue,
    pub disease: String,
    pub unit_discharge_status: DischargeStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisEvent {
    pub stay_id: StayId,
    pub offset_min: i64,
    pub diagnosis_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentEvent {
    pub stay_id: StayId,
    pub offset_min: i64,
    pub treatment_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalSample {
    pub stay_id: StayId,
    pub offset_min: i64,
    pub sao2: Option<f64>,
    pub heartrate: Option<f64>,
    pub respiration: Option<f64>,
}

/// One ICU stay with its events, each list sorted by offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub stay: PatientStay,
    pub diagnoses: Vec<DiagnosisEvent>,
    pub treatments: Vec<TreatmentEvent>,
    pub vitals: Vec<VitalSample>,
}

impl PatientRecord {
    pub fn stay_id(&self) -> StayId {
        self.stay.stay_id
    }

    /// Path of the earliest-recorded diagnosis. Ties keep input order.
    pub fn primary_diagnosis(&self) -> Option<&str> {
        self.diagnoses.first().map(|d| d.diagnosis_path.as_str())
    }

    /// Copy of this record keeping only events with `start <= offset < end`.
    pub fn restricted_to(&self, start_min: i64, end_min: i64) -> PatientRecord {
        let inside = |o: i64| o >= start_min && o < end_min;
        PatientRecord {
            stay: self.stay.clone(),
            diagnoses: self.diagnoses.iter().filter(|e| inside(e.offset_min)).cloned().collect(),
            treatments: self.treatments.iter().filter(|e| inside(e.offset_min)).cloned().collect(),
            vitals: self.vitals.iter().filter(|e| inside(e.offset_min)).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Patient,
    Diagnosis,
    Treatment,
    Vitals,
}

impl fmt::Display for TableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TableKind::Patient => "patient",
            TableKind::Diagnosis => "diagnosis",
            TableKind::Treatment => "treatment",
            TableKind::Vitals => "vitals",
        })
    }
}

/// A row type that can be decoded from a header-addressed table.
pub trait TableRow: Sized {
    const KIND: TableKind;
    const COLUMNS: &'static [&'static str];

    /// `fields` holds the required columns in `COLUMNS` order.
    fn from_fields(fields: &[&str]) -> Result<Self, String>;
}

fn parse_stay_id(raw: &str) -> Result<StayId, String> {
    raw.trim().parse::<u64>().ok().and_then(StayId::new).ok_or_else(|| format!("invalid patientunitstayid `{raw}`"))
}

fn parse_offset(raw: &str) -> Result<i64, String> {
    raw.trim().parse::<i64>().map_err(|_| format!("invalid offset `{raw}`"))
}

fn parse_path(raw: &str) -> Result<String, String> {
    let path = raw.trim();
    if path.split('|').any(|s| !s.trim().is_empty()) {
        Ok(path.to_string())
    } else {
        Err(format!("empty hierarchy path `{raw}`"))
    }
}

fn parse_vital(raw: &str, name: &str, max: Option<f64>) -> Result<Option<f64>, String> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("null") || t.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    let v: f64 = t.parse().map_err(|_| format!("invalid {name} `{raw}`"))?;
    if !v.is_finite() || v < 0.0 || max.is_some_and(|m| v > m) {
        return Err(format!("{name} {v} outside physical range"));
    }
    Ok(Some(v))
}

impl TableRow for PatientStay {
    const KIND: TableKind = TableKind::Patient;
    const COLUMNS: &'static [&'static str] = &[
        "patientunitstayid",
        "uniquepid",
        "patienthealthsystemstayid",
        "gender",
        "age",
        "apacheadmissiondx",
        "unitdischargestatus",
    ];

    fn from_fields(f: &[&str]) -> Result<Self, String> {
        Ok(PatientStay {
            stay_id: parse_stay_id(f[0])?,
            unique_pid: f[1].trim().to_string(),
            health_system_stay_id: f[2].trim().to_string(),
            gender: Gender::parse(f[3]),
            age: parse_age(f[4]).map_err(|e| e.to_string())?,
            disease: f[5].trim().to_string(),
            unit_discharge_status: DischargeStatus::parse(f[6]),
        })
    }
}

impl TableRow for DiagnosisEvent {
    const KIND: TableKind = TableKind::Diagnosis;
    const COLUMNS: &'static [&'static str] = &["patientunitstayid", "diagnosisoffset", "diagnosisstring"];

    fn from_fields(f: &[&str]) -> Result<Self, String> {
        Ok(DiagnosisEvent {
            stay_id: parse_stay_id(f[0])?,
            offset_min: parse_offset(f[1])?,
            diagnosis_path: parse_path(f[2])?,
        })
    }
}

impl TableRow for TreatmentEvent {
    const KIND: TableKind = TableKind::Treatment;
    const COLUMNS: &'static [&'static str] = &["patientunitstayid", "treatmentoffset", "treatmentstring"];

    fn from_fields(f: &[&str]) -> Result<Self, String> {
        Ok(TreatmentEvent {
            stay_id: parse_stay_id(f[0])?,
            offset_min: parse_offset(f[1])?,
            treatment_path: parse_path(f[2])?,
        })
    }
}

impl TableRow for VitalSample {
    const KIND: TableKind = TableKind::Vitals;
    const COLUMNS: &'static [&'static str] =
        &["patientunitstayid", "observationoffset", "sao2", "heartrate", "respiration"];

    fn from_fields(f: &[&str]) -> Result<Self, String> {
        Ok(VitalSample {
            stay_id: parse_stay_id(f[0])?,
            offset_min: parse_offset(f[1])?,
            sao2: parse_vital(f[2], "sao2", Some(100.0))?,
            heartrate: parse_vital(f[3], "heartrate", None)?,
            respiration: parse_vital(f[4], "respiration", None)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRow {
    /// 1-based line number in the source file (the header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub rows: Vec<T>,
    pub skipped: Vec<SkippedRow>,
}

impl<T> Loaded<T> {
    pub fn data_rows(&self) -> usize {
        self.rows.len() + self.skipped.len()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Fail on the first malformed row instead of collecting it.
    pub strict: bool,
}

pub fn load_table<T: TableRow>(path: &Path, opts: LoadOptions) -> Result<Loaded<T>, IngestError> {
    let file =
        std::fs::File::open(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    read_table(file, opts)
}

pub fn read_table<T: TableRow, R: Read>(reader: R, opts: LoadOptions) -> Result<Loaded<T>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = Vec::with_capacity(T::COLUMNS.len());
    for &column in T::COLUMNS {
        let pos = headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(column))
            .ok_or(IngestError::MissingColumn { kind: T::KIND, column })?;
        index.push(pos);
    }

    let mut loaded = Loaded { rows: Vec::new(), skipped: Vec::new() };
    let mut line = 1u64;
    for record in rdr.records() {
        line += 1;
        let outcome = match record {
            Ok(rec) => {
                line = rec.position().map_or(line, |p| p.line());
                let fields: Vec<&str> = index.iter().map(|&i| rec.get(i).unwrap_or("")).collect();
                if index.iter().any(|&i| i >= rec.len()) {
                    Err("row has fewer fields than the header".to_string())
                } else {
                    T::from_fields(&fields)
                }
            }
            Err(e) => Err(e.to_string()),
        };
        match outcome {
            Ok(row) => loaded.rows.push(row),
            Err(reason) if opts.strict => {
                return Err(IngestError::Row { kind: T::KIND, line, reason });
            }
            Err(reason) => loaded.skipped.push(SkippedRow { line, reason }),
        }
    }
    Ok(loaded)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OrphanCounts {
    pub diagnoses: usize,
    pub treatments: usize,
    pub vitals: usize,
}

impl OrphanCounts {
    pub fn total(&self) -> usize {
        self.diagnoses + self.treatments + self.vitals
    }
}

#[derive(Debug, Clone)]
pub struct Assembled {
    pub records: Vec<PatientRecord>,
    pub orphans: OrphanCounts,
}

/// Groups events under their stay and stably sorts each list by offset.
/// One record is produced per patient row, in patient-row order.
pub fn assemble_records(
    patients: Vec<PatientStay>,
    diagnoses: Vec<DiagnosisEvent>,
    treatments: Vec<TreatmentEvent>,
    vitals: Vec<VitalSample>,
) -> Result<Assembled, IngestError> {
    let mut slot: HashMap<StayId, usize> = HashMap::with_capacity(patients.len());
    let mut records = Vec::with_capacity(patients.len());
    for stay in patients {
        if slot.insert(stay.stay_id, records.len()).is_some() {
            return Err(IngestError::DuplicateStayId(stay.stay_id));
        }
        records.push(PatientRecord { stay, diagnoses: Vec::new(), treatments: Vec::new(), vitals: Vec::new() });
    }

    let mut orphans = OrphanCounts::default();
    for d in diagnoses {
        match slot.get(&d.stay_id) {
            Some(&i) => records[i].diagnoses.push(d),
            None => orphans.diagnoses += 1,
        }
    }
    for t in treatments {
        match slot.get(&t.stay_id) {
            Some(&i) => records[i].treatments.push(t),
            None => orphans.treatments += 1,
        }
    }
    for v in vitals {
        match slot.get(&v.stay_id) {
            Some(&i) => records[i].vitals.push(v),
            None => orphans.vitals += 1,
        }
    }

    // sort_by_key is stable, so ties keep input order
    for r in &mut records {
        r.diagnoses.sort_by_key(|e| e.offset_min);
        r.treatments.sort_by_key(|e| e.offset_min);
        r.vitals.sort_by_key(|e| e.offset_min);
    }
    Ok(Assembled { records, orphans })
}

/// The four table files of one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPaths {
    pub patients: std::path::PathBuf,
    pub diagnoses: std::path::PathBuf,
    pub treatments: std::path::PathBuf,
    pub vitals: std::path::PathBuf,
}

impl DataPaths {
    /// Conventional eICU file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        DataPaths {
            patients: dir.join("patient.csv"),
            diagnoses: dir.join("diagnosis.csv"),
            treatments: dir.join("treatment.csv"),
            vitals: dir.join("vitalPeriodic.csv"),
        }
    }

    pub fn resolve_against(&self, base: &Path) -> Self {
        let j = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        DataPaths {
            patients: j(&self.patients),
            diagnoses: j(&self.diagnoses),
            treatments: j(&self.treatments),
            vitals: j(&self.vitals),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadSummary {
    pub patients: TableSummary,
    pub diagnoses: TableSummary,
    pub treatments: TableSummary,
    pub vitals: TableSummary,
    pub orphans: OrphanCounts,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TableSummary {
    pub loaded: usize,
    pub skipped: Vec<SkippedRow>,
}

impl<T> From<&Loaded<T>> for TableSummary {
    fn from(l: &Loaded<T>) -> Self {
        TableSummary { loaded: l.rows.len(), skipped: l.skipped.clone() }
    }
}

/// Loads all four tables and assembles records.
pub fn load_dataset(paths: &DataPaths, opts: LoadOptions) -> Result<(Vec<PatientRecord>, LoadSummary), IngestError> {
    let patients = load_table::<PatientStay>(&paths.patients, opts)?;
    let diagnoses = load_table::<DiagnosisEvent>(&paths.diagnoses, opts)?;
    let treatments = load_table::<TreatmentEvent>(&paths.treatments, opts)?;
    let vitals = load_table::<VitalSample>(&paths.vitals, opts)?;
    let mut summary = LoadSummary {
        patients: (&patients).into(),
        diagnoses: (&diagnoses).into(),
        treatments: (&treatments).into(),
        vitals: (&vitals).into(),
        orphans: OrphanCounts::default(),
    };
    let assembled = assemble_records(patients.rows, diagnoses.rows, treatments.rows, vitals.rows)?;
    summary.orphans = assembled.orphans;
    Ok((assembled.records, summary))
}
