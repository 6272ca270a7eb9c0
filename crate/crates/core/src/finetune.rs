//! Supervised fine-tuning export for the discharge-status task.
//!
//! Each line is one JSON object:
//! `{"patientunitstayid":N,"messages":[{"role":"system",...},{"role":"user",...},{"role":"assistant",...}]}`.
//! A sidecar `<file>.manifest.json` records class counts, seed, training stay
//! ids and the sha256 of the data file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cohort::{sample_balanced, CohortError};
use crate::ingest::{Outcome, PatientRecord, StayId};
use crate::scenarios::{ChatMessage, Role, ScenarioBuilder, ScenarioError};

pub const ALIVE_ANSWER: &str = "status: Alive.";
pub const EXPIRED_ANSWER: &str = "status: Expired.";
/// Accepted on read as a synonym of [`EXPIRED_ANSWER`].
pub const DEAD_ANSWER: &str = "status: Dead.";

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("stay {0} has an unknown discharge status")]
    UnknownOutcome(StayId),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

pub fn answer_for(outcome: Outcome) -> &'static str {
    match outcome {
        Outcome::Alive => ALIVE_ANSWER,
        Outcome::Expired => EXPIRED_ANSWER,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSample {
    #[serde(rename = "patientunitstayid")]
    pub stay_id: StayId,
    pub messages: Vec<ChatMessage>,
}

impl FinetuneSample {
    /// Checks role order and the assistant answer, returning the label.
    pub fn validate(&self) -> Result<Outcome, String> {
        let roles: Vec<Role> = self.messages.iter().map(|m| m.role).collect();
        if roles != [Role::System, Role::User, Role::Assistant] {
            return Err(format!("expected system/user/assistant messages, found {roles:?}"));
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return Err("empty message content".into());
        }
        match self.messages[2].content.as_str() {
            ALIVE_ANSWER => Ok(Outcome::Alive),
            EXPIRED_ANSWER | DEAD_ANSWER => Ok(Outcome::Expired),
            other => Err(format!("unexpected assistant answer {other:?}")),
        }
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.validate().ok()
    }
}

pub fn build_sample(builder: &ScenarioBuilder, record: &PatientRecord) -> Result<FinetuneSample, FinetuneError> {
    let outcome = record.stay.unit_discharge_status.outcome().ok_or(FinetuneError::UnknownOutcome(record.stay_id()))?;
    let user = builder.prediction_body(record)?;
    let system = builder.templates().system.render(&[]).map_err(ScenarioError::from)?;
    Ok(FinetuneSample {
        stay_id: record.stay_id(),
        messages: vec![
            ChatMessage::new(Role::System, system),
            ChatMessage::new(Role::User, user),
            ChatMessage::new(Role::Assistant, answer_for(outcome)),
        ],
    })
}

pub fn serialize_sample(sample: &FinetuneSample) -> String {
    serde_json::to_string(sample).expect("samples serialize")
}

/// Parses one line. The `status: Dead.` synonym is normalized to the
/// canonical expired answer.
pub fn parse_sample(line: &str) -> Result<FinetuneSample, String> {
    let mut s: FinetuneSample = serde_json::from_str(line).map_err(|e| e.to_string())?;
    s.validate()?;
    if s.messages[2].content == DEAD_ANSWER {
        s.messages[2].content = EXPIRED_ANSWER.to_string();
    }
    Ok(s)
}

pub fn parse_dataset(text: &str) -> Result<Vec<FinetuneSample>, FinetuneError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_sample(l).map_err(|reason| FinetuneError::Parse { line: i + 1, reason }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneManifest {
    pub schema_version: u32,
    pub data_file: String,
    pub lines: usize,
    pub alive: usize,
    pub expired: usize,
    pub seed: u64,
    pub sha256: String,
    pub training_stay_ids: Vec<StayId>,
    pub excluded_stay_ids: Vec<StayId>,
}

pub fn manifest_path(data_path: &Path) -> PathBuf {
    let mut name = data_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    data_path.with_file_name(name)
}

pub fn load_manifest(path: &Path) -> Result<FinetuneManifest, FinetuneError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| FinetuneError::Io { path: path.to_path_buf(), source })?;
    let m: FinetuneManifest = serde_json::from_str(&text)
        .map_err(|e| FinetuneError::Manifest { path: path.to_path_buf(), reason: e.to_string() })?;
    if m.schema_version != 1 {
        return Err(FinetuneError::Manifest {
            path: path.to_path_buf(),
            reason: format!("unsupported schema_version {}", m.schema_version),
        });
    }
    Ok(m)
}

/// Renders the export in memory: data file text plus manifest.
pub fn render_dataset(
    builder: &ScenarioBuilder,
    records: &[&PatientRecord],
    n_per_class: usize,
    seed: u64,
    exclude: &BTreeSet<StayId>,
) -> Result<(String, FinetuneManifest), FinetuneError> {
    let pool: Vec<&PatientRecord> = records.iter().copied().filter(|r| !exclude.contains(&r.stay_id())).collect();
    let chosen = sample_balanced(&pool, n_per_class, seed)?;
    let mut text = String::new();
    let (mut alive, mut expired) = (0, 0);
    for r in &chosen {
        let s = build_sample(builder, r)?;
        match s.outcome() {
            Some(Outcome::Alive) => alive += 1,
            _ => expired += 1,
        }
        text.push_str(&serialize_sample(&s));
        text.push('\n');
    }
    let mut training: Vec<StayId> = chosen.iter().map(|r| r.stay_id()).collect();
    training.sort();
    let manifest = FinetuneManifest {
        schema_version: 1,
        data_file: String::new(),
        lines: chosen.len(),
        alive,
        expired,
        seed,
        sha256: hex::encode(Sha256::digest(text.as_bytes())),
        training_stay_ids: training,
        excluded_stay_ids: exclude.iter().copied().collect(),
    };
    Ok((text, manifest))
}

/// Writes the data file at `path` and its manifest next to it.
pub fn export_dataset(
    builder: &ScenarioBuilder,
    records: &[&PatientRecord],
    n_per_class: usize,
    seed: u64,
    exclude: &BTreeSet<StayId>,
    path: &Path,
) -> Result<FinetuneManifest, FinetuneError> {
    let (text, mut manifest) = render_dataset(builder, records, n_per_class, seed, exclude)?;
    manifest.data_file = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    std::fs::write(path, text).map_err(|source| FinetuneError::Io { path: path.to_path_buf(), source })?;
    let mpath = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&mpath, json).map_err(|source| FinetuneError::Io { path: mpath.clone(), source })?;
    Ok(manifest)
}
