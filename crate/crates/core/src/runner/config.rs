//! Experiment configuration (TOML, `schema_version = 1`).
//!
//! Relative paths are resolved against the directory holding the config file.
//! A scenario runs when its table is present under `[scenarios]`.
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//! mode = "replay"                 # live | record | replay
//! replay_store = "replay.jsonl"
//! output_dir = "out"
//! max_in_flight = 4
//!
//! [data]
//! dir = "fixtures/synthetic"      # or patients/diagnoses/treatments/vitals
//!
//! [cohort]
//! max_age_exclusive = 80
//!
//! [[backends]]
//! model_name = "gpt-4"
//! endpoint_url = "https://example.invalid/v1/chat/completions"
//! api_key_env = "OPENAI_API_KEY"
//!
//! [scenarios.what_if]
//! count = 5
//!
//! [scenarios.how_about]
//! diseases = ["Bleeding, lower GI", "Bleeding, upper GI"]
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::ReportFormat;
use super::RunnerError;
use crate::cohort::{CohortFilter, MatchCriteria};
use crate::ingest::{DataPaths, StayId};
use crate::llm::{BackendConfig, Mode, RetryPolicy};
use crate::scenarios::Scenario;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SO_WHAT_WINDOW_MINUTES: i64 = 1440;

fn default_output_dir() -> PathBuf {
    PathBuf::from("contrast-eval-out")
}

fn default_in_flight() -> usize {
    4
}

fn default_true() -> bool {
    true
}

fn all_formats() -> BTreeSet<ReportFormat> {
    [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::PlotData].into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub replay_store: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "all_formats")]
    pub report_formats: BTreeSet<ReportFormat>,
    pub data: DataConfig,
    #[serde(default)]
    pub cohort: CohortFilter,
    #[serde(default)]
    pub prompts: PromptConfig,
    #[serde(default)]
    pub finetune: FinetuneGuard,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub scenarios: ScenarioSelection,
    /// Directory relative paths are resolved against. Not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory with `patient.csv`, `diagnosis.csv`, `treatment.csv` and
    /// `vitalPeriodic.csv`. Individual paths below take precedence.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub patients: Option<PathBuf>,
    #[serde(default)]
    pub diagnoses: Option<PathBuf>,
    #[serde(default)]
    pub treatments: Option<PathBuf>,
    #[serde(default)]
    pub vitals: Option<PathBuf>,
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    /// TOML file of `[[exemplar]]` tables; the built-in set when unset.
    #[serde(default)]
    pub fewshot: Option<PathBuf>,
    #[serde(default)]
    pub zero_shot: bool,
    /// Directory whose lexicon files replace the built-in ones.
    #[serde(default)]
    pub lexicons_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneGuard {
    /// Manifest written by `export-finetune`; its training stays are kept out
    /// of every scenario when `enforce_disjoint` is set.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub enforce_disjoint: bool,
}

impl Default for FinetuneGuard {
    fn default() -> Self {
        FinetuneGuard { manifest: None, enforce_disjoint: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfConfig {
    #[serde(default)]
    pub stay_ids: Option<Vec<StayId>>,
    #[serde(default)]
    pub count: Option<usize>,
    /// Fixed split offset for every trial; the per-stay default otherwise.
    #[serde(default)]
    pub split_min: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhyNotConfig {
    #[serde(default)]
    pub stay_ids: Option<Vec<StayId>>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default = "default_true")]
    pub use_peer: bool,
    #[serde(default)]
    pub peer: MatchCriteria,
}

impl Default for WhyNotConfig {
    fn default() -> Self {
        WhyNotConfig { stay_ids: None, count: None, use_peer: true, peer: MatchCriteria::default() }
    }
}

fn default_window_minutes() -> i64 {
    DEFAULT_SO_WHAT_WINDOW_MINUTES
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoWhatConfig {
    #[serde(default)]
    pub stay_ids: Option<Vec<StayId>>,
    #[serde(default)]
    pub count: Option<usize>,
    /// Fixed window for every trial. Both ends must be set together.
    #[serde(default)]
    pub window_start_min: Option<i64>,
    #[serde(default)]
    pub window_end_min: Option<i64>,
    /// Length of the default window starting at the first treatment.
    #[serde(default = "default_window_minutes")]
    pub window_minutes: i64,
}

impl Default for SoWhatConfig {
    fn default() -> Self {
        SoWhatConfig {
            stay_ids: None,
            count: None,
            window_start_min: None,
            window_end_min: None,
            window_minutes: DEFAULT_SO_WHAT_WINDOW_MINUTES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HowAboutConfig {
    /// Explicit `[source, target]` stay pairs.
    #[serde(default)]
    pub pairs: Option<Vec<[StayId; 2]>>,
    /// Disease substrings for source and target; pairs are sampled.
    #[serde(default)]
    pub diseases: Option<[String; 2]>,
    #[serde(default)]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DischargeConfig {
    #[serde(default)]
    pub stay_ids: Option<Vec<StayId>>,
    #[serde(default)]
    pub count: Option<usize>,
    /// Draw half of `count` from each outcome.
    #[serde(default = "default_true")]
    pub balanced: bool,
}

impl Default for DischargeConfig {
    fn default() -> Self {
        DischargeConfig { stay_ids: None, count: None, balanced: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSelection {
    #[serde(default)]
    pub what_if: Option<WhatIfConfig>,
    #[serde(default)]
    pub why_not: Option<WhyNotConfig>,
    #[serde(default)]
    pub so_what: Option<SoWhatConfig>,
    #[serde(default)]
    pub how_about: Option<HowAboutConfig>,
    #[serde(default)]
    pub discharge_prediction: Option<DischargeConfig>,
}

impl ScenarioSelection {
    pub fn enabled(&self) -> Vec<Scenario> {
        let flags = [
            self.what_if.is_some(),
            self.why_not.is_some(),
            self.so_what.is_some(),
            self.how_about.is_some(),
            self.discharge_prediction.is_some(),
        ];
        Scenario::ALL.iter().zip(flags).filter(|(_, on)| *on).map(|(s, _)| *s).collect()
    }
}

/// Trials drawn per scenario when neither `stay_ids` nor `count` is given.
pub fn default_count(s: Scenario) -> usize {
    match s {
        Scenario::WhyNot | Scenario::DischargePrediction => 10,
        Scenario::WhatIf | Scenario::SoWhat | Scenario::HowAbout => 5,
    }
}

/// Values given on the command line, applied over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub replay_store: Option<PathBuf>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> RunnerError {
    RunnerError::ConfigInvalid(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, RunnerError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| RunnerError::ConfigInvalid(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    /// Reads and parses `path` without validating it.
    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    /// Override paths are taken as given (relative to the working directory).
    pub fn apply(&mut self, o: &Overrides) {
        let cwd = std::env::current_dir().unwrap_or_default();
        let abs = |p: &PathBuf| if p.is_absolute() { p.clone() } else { cwd.join(p) };
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(p) = &o.replay_store {
            self.replay_store = Some(abs(p));
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.output_dir {
            self.output_dir = abs(p);
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_paths(&self) -> Result<DataPaths, RunnerError> {
        let d = &self.data;
        let base = d.dir.as_ref().map(|dir| DataPaths::in_dir(dir));
        let pick = |own: &Option<PathBuf>, from_dir: Option<&PathBuf>, name: &str| {
            own.clone()
                .or_else(|| from_dir.cloned())
                .ok_or_else(|| invalid(format!("data.{name} is not set and data.dir is absent")))
        };
        let paths = DataPaths {
            patients: pick(&d.patients, base.as_ref().map(|b| &b.patients), "patients")?,
            diagnoses: pick(&d.diagnoses, base.as_ref().map(|b| &b.diagnoses), "diagnoses")?,
            treatments: pick(&d.treatments, base.as_ref().map(|b| &b.treatments), "treatments")?,
            vitals: pick(&d.vitals, base.as_ref().map(|b| &b.vitals), "vitals")?,
        };
        Ok(paths.resolve_against(&self.base_dir))
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.scenarios.enabled().is_empty() {
            return Err(invalid("no scenario selected"));
        }
        if self.backends.is_empty() {
            return Err(invalid("no backend configured"));
        }
        let mut names = BTreeSet::new();
        for b in &self.backends {
            b.validate().map_err(|e| invalid(e.to_string()))?;
            if !names.insert(b.model_name.as_str()) {
                return Err(invalid(format!("duplicate backend model_name {:?}", b.model_name)));
            }
        }
        if self.mode != Mode::Live && self.replay_store.is_none() {
            return Err(invalid(format!("{:?} mode requires replay_store", self.mode).to_lowercase()));
        }
        if self.max_in_flight == 0 {
            return Err(invalid("max_in_flight must be at least 1"));
        }
        self.data_paths()?;
        self.cohort.validate().map_err(|e| invalid(e.to_string()))?;
        let s = &self.scenarios;
        if let Some(w) = &s.why_not {
            if w.use_peer {
                w.peer.validate().map_err(|e| invalid(e.to_string()))?;
            }
        }
        if let Some(w) = &s.so_what {
            match (w.window_start_min, w.window_end_min) {
                (Some(a), Some(b)) if a >= b => return Err(invalid("so_what window start must precede its end")),
                (Some(_), None) | (None, Some(_)) => {
                    return Err(invalid("so_what window_start_min and window_end_min go together"))
                }
                _ => {}
            }
            if w.window_minutes <= 0 {
                return Err(invalid("so_what window_minutes must be positive"));
            }
        }
        if let Some(h) = &s.how_about {
            if h.pairs.is_none() && h.diseases.is_none() {
                return Err(invalid("how_about needs pairs or diseases"));
            }
        }
        if let Some(d) = &s.discharge_prediction {
            let n = d.count.unwrap_or(default_count(Scenario::DischargePrediction));
            if d.balanced && d.stay_ids.is_none() && n % 2 == 1 {
                return Err(invalid("balanced discharge_prediction needs an even count"));
            }
        }
        Ok(())
    }

    /// sha256 of the canonical JSON form, ignoring where output is written.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let value = serde_json::to_value(&c).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}
