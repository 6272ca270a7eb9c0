//! End-to-end experiments: trial selection, dispatch, scoring, aggregation and
//! the run artifact.
//!
//! Artifact directory layout:
//!
//! ```text
//! trials.jsonl        one TrialRecord per line, sorted by (model, scenario, stay, peer)
//! ground_truth.jsonl  one GroundTruthRecord per line, kept apart from transcripts
//! summary.json        provenance and aggregate blocks
//! report.md           markdown summary (optional)
//! trials.csv          per-trial rows (optional)
//! plot_data.json      per-patient series and aggregates (optional)
//! ```

pub mod config;
pub mod reference;
pub mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cohort::{filter_cohort, find_alternative_peer, pair_similar_diseases};
use crate::finetune::{load_manifest, FinetuneError};
use crate::ingest::{load_dataset, IngestError, LoadOptions, LoadSummary, Outcome, PatientRecord, StayId};
use crate::lexicon::Lexicon;
use crate::llm::{
    default_refusal_lexicon, ChatBackend, Dispatcher, HttpBackend, LlmError, Mode, OfflineBackend, ReplayStore,
    Transcript,
};
use crate::scenarios::{
    default_exemplars, default_so_what_window, load_exemplars, GroundTruth, PromptBundle, Scenario, ScenarioBuilder,
    ScenarioError,
};
use crate::scoring::{
    classification_metrics, consideration_coverage, diagnosis_similarity, extract_outcome, extract_plan,
    judge_alternative, plan_similarity, AlternativeJudgment, ClassificationMetrics, CoverageReport, PredictedOutcome,
    ScoringError, ScoringLexicons, SimilarityReport,
};
use crate::template::PromptTemplates;
use crate::timeline::TimeWindow;

pub use config::{ExperimentConfig, Overrides};
pub use report::{emit_report, ReportFormat};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("data unreadable: {0}")]
    DataUnreadable(#[from] IngestError),
    #[error("backend: {0}")]
    Backend(#[from] LlmError),
    #[error("no trial could be constructed")]
    NoTrials,
    #[error("no trials to aggregate")]
    EmptyTrials,
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("malformed artifact {path}: {reason}")]
    Artifact { path: PathBuf, reason: String },
    #[error(transparent)]
    Finetune(#[from] FinetuneError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunnerError + '_ {
    move |e| RunnerError::Io { path: path.to_path_buf(), reason: e.to_string() }
}

/// Score of one answered trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrialScore {
    PlanSimilarity { report: SimilarityReport },
    Alternative { judgment: AlternativeJudgment },
    DiagnosisSimilarity { score: f64 },
    Coverage { report: CoverageReport },
    Outcome { predicted: PredictedOutcome, truth: Outcome },
}

impl TrialScore {
    /// Per-trial number used in CSV and plot series: a similarity, 1/0 for a
    /// why-not judgment or a prediction, `None` when undetermined.
    pub fn value(&self) -> Option<f64> {
        match self {
            TrialScore::PlanSimilarity { report } => Some(report.score),
            TrialScore::DiagnosisSimilarity { score } => Some(*score),
            TrialScore::Coverage { report } => Some(report.coverage),
            TrialScore::Alternative { judgment } => match judgment {
                AlternativeJudgment::Alternative => Some(1.0),
                AlternativeJudgment::Current => Some(0.0),
                AlternativeJudgment::Undetermined => None,
            },
            TrialScore::Outcome { predicted, truth } => match predicted {
                PredictedOutcome::Unknown => None,
                p => Some(if *p == PredictedOutcome::from(*truth) { 1.0 } else { 0.0 }),
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            TrialScore::Alternative { judgment } => format!("{judgment:?}").to_lowercase(),
            TrialScore::Outcome { predicted, truth } => {
                format!("{}/{}", format!("{predicted:?}").to_lowercase(), truth.to_string().to_lowercase())
            }
            TrialScore::Coverage { report } => format!("{}/{}", report.satisfied, report.considerations),
            TrialScore::PlanSimilarity { report } => {
                format!(
                    "{}+{}/{}",
                    report.exact_matches,
                    report.parent_matches,
                    report.predicted_count.max(report.truth_count)
                )
            }
            TrialScore::DiagnosisSimilarity { .. } => String::new(),
        }
    }

    fn undetermined(&self) -> bool {
        match self {
            TrialScore::Alternative { judgment } => *judgment == AlternativeJudgment::Undetermined,
            TrialScore::Outcome { predicted, .. } => *predicted == PredictedOutcome::Unknown,
            TrialScore::Coverage { report } => report.considerations == 0,
            _ => false,
        }
    }
}

pub fn score_response(
    truth: &GroundTruth,
    response_text: &str,
    lex: &ScoringLexicons,
) -> Result<TrialScore, ScoringError> {
    Ok(match truth {
        GroundTruth::TreatmentPlan { items } => {
            let truth: Vec<_> = items.iter().cloned().collect();
            TrialScore::PlanSimilarity { report: plan_similarity(&extract_plan(response_text), &truth) }
        }
        GroundTruth::AlternativePreferred { .. } => {
            TrialScore::Alternative { judgment: judge_alternative(response_text, lex) }
        }
        GroundTruth::DiagnosisSet { paths } => {
            TrialScore::DiagnosisSimilarity { score: diagnosis_similarity(response_text, paths)? }
        }
        GroundTruth::TargetPlan { items } => {
            let plan: Vec<_> = items.iter().cloned().collect();
            TrialScore::Coverage { report: consideration_coverage(response_text, &plan, lex)? }
        }
        GroundTruth::OutcomeLabel { outcome } => {
            TrialScore::Outcome { predicted: extract_outcome(response_text, lex), truth: *outcome }
        }
    })
}

/// One (model, scenario, stay) attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub model: String,
    pub scenario: Scenario,
    pub stay_id: StayId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_stay_id: Option<StayId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<Transcript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<TrialScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    fn key(&self) -> (&str, Scenario, StayId, Option<StayId>) {
        (&self.model, self.scenario, self.stay_id, self.peer_stay_id)
    }

    pub fn refusal(&self) -> bool {
        self.transcript.as_ref().is_some_and(|t| t.refusal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub scenario: Scenario,
    pub stay_id: StayId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_stay_id: Option<StayId>,
    pub ground_truth: GroundTruth,
}

/// Aggregate numbers of one scenario over scored trials.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateValues {
    pub scored: usize,
    pub refusal_count: usize,
    /// Answered trials whose score carries no verdict; refusals are not counted.
    pub undetermined_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<ClassificationMetrics>,
}

/// Refused answers are left out of means and rates and counted apart; for the
/// prediction task they enter the metrics as unknown predictions.
pub fn aggregate(scenario: Scenario, scores: &[(TrialScore, bool)]) -> Result<AggregateValues, RunnerError> {
    if scores.is_empty() {
        return Err(RunnerError::EmptyTrials);
    }
    let mut out = AggregateValues {
        scored: scores.len(),
        refusal_count: scores.iter().filter(|(_, r)| *r).count(),
        undetermined_count: scores.iter().filter(|(s, r)| !*r && s.undetermined()).count(),
        ..Default::default()
    };
    let kept: Vec<&TrialScore> = scores.iter().filter(|(_, r)| !*r).map(|(s, _)| s).collect();
    match scenario {
        Scenario::WhatIf | Scenario::SoWhat | Scenario::HowAbout => {
            let values: Vec<f64> = kept.iter().filter_map(|s| s.value()).collect();
            if !values.is_empty() {
                out.mean_similarity = Some(values.iter().sum::<f64>() / values.len() as f64);
            }
        }
        Scenario::WhyNot => {
            let alt = kept
                .iter()
                .filter(|s| matches!(s, TrialScore::Alternative { judgment: AlternativeJudgment::Alternative }))
                .count();
            out.alternative_count = Some(alt);
            if !kept.is_empty() {
                out.positive_rate = Some(alt as f64 / kept.len() as f64);
            }
        }
        Scenario::DischargePrediction => {
            let pairs: Vec<(PredictedOutcome, Outcome)> = scores
                .iter()
                .filter_map(|(s, refused)| match s {
                    TrialScore::Outcome { predicted, truth } => {
                        Some((if *refused { PredictedOutcome::Unknown } else { *predicted }, *truth))
                    }
                    _ => None,
                })
                .collect();
            out.metrics = classification_metrics(&pairs).ok();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateBlock {
    pub model: String,
    pub scenario: Scenario,
    pub trials: usize,
    pub errors: usize,
    #[serde(flatten)]
    pub values: AggregateValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_sha256: String,
    pub data_sha256: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_store_sha256: Option<String>,
    pub seed: u64,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_timestamp: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub trial_count: usize,
    pub error_count: usize,
    pub aggregates: Vec<AggregateBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub summary: Summary,
    pub trials: Vec<TrialRecord>,
    pub ground_truth: Vec<GroundTruthRecord>,
}

/// Blocks for every (model, scenario) present in `trials`, in sorted order.
pub fn aggregate_trials(trials: &[TrialRecord]) -> Vec<AggregateBlock> {
    let mut groups: BTreeMap<(String, Scenario), Vec<&TrialRecord>> = BTreeMap::new();
    for t in trials {
        groups.entry((t.model.clone(), t.scenario)).or_default().push(t);
    }
    groups
        .into_iter()
        .map(|((model, scenario), ts)| {
            let scores: Vec<(TrialScore, bool)> =
                ts.iter().filter_map(|t| t.score.clone().map(|s| (s, t.refusal()))).collect();
            AggregateBlock {
                model,
                scenario,
                trials: ts.len(),
                errors: ts.iter().filter(|t| t.error.is_some()).count(),
                values: aggregate(scenario, &scores).unwrap_or_default(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Trial planning

/// A scenario prompt for one stay (or stay pair), shared across models.
#[derive(Debug, Clone)]
pub struct PlannedTrial {
    pub scenario: Scenario,
    pub stay_id: StayId,
    pub peer_stay_id: Option<StayId>,
    pub built: Result<(PromptBundle, GroundTruth), String>,
}

fn scenario_salt(s: Scenario) -> u64 {
    match s {
        Scenario::WhatIf => 0x5157_0001,
        Scenario::WhyNot => 0x5157_0002,
        Scenario::SoWhat => 0x5157_0003,
        Scenario::HowAbout => 0x5157_0004,
        Scenario::DischargePrediction => 0x5157_0005,
    }
}

fn shuffled<T: Ord + Clone>(mut items: Vec<T>, seed: u64) -> Vec<T> {
    items.sort();
    items.dedup();
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    items
}

struct Planner<'a> {
    builder: &'a ScenarioBuilder,
    all: HashMap<StayId, &'a PatientRecord>,
    pool: Vec<&'a PatientRecord>,
    pool_ids: BTreeSet<StayId>,
    held_out: BTreeSet<StayId>,
    seed: u64,
}

type Built = Result<(PromptBundle, GroundTruth), ScenarioError>;

impl<'a> Planner<'a> {
    fn unavailable(&self, id: StayId) -> Option<String> {
        if !self.all.contains_key(&id) {
            Some(format!("stay {id} is not in the dataset"))
        } else if self.held_out.contains(&id) {
            Some(format!("stay {id} is in the fine-tune training set"))
        } else if !self.pool_ids.contains(&id) {
            Some(format!("stay {id} is excluded by the cohort filter"))
        } else {
            None
        }
    }

    fn eligible(&self) -> Vec<&'a PatientRecord> {
        self.pool.iter().copied().filter(|r| !self.held_out.contains(&r.stay_id())).collect()
    }

    fn single(
        &self,
        scenario: Scenario,
        explicit: &Option<Vec<StayId>>,
        count: Option<usize>,
        candidates: Vec<&'a PatientRecord>,
        build: impl Fn(&PatientRecord) -> Built,
    ) -> Vec<PlannedTrial> {
        let finish = |id: StayId, built: Built| {
            let built = built.map_err(|e| e.to_string());
            let peer = built.as_ref().ok().and_then(|(b, _)| b.peer_stay_id);
            PlannedTrial { scenario, stay_id: id, peer_stay_id: peer, built }
        };
        match explicit {
            Some(ids) => {
                let mut seen = BTreeSet::new();
                ids.iter()
                    .filter(|id| seen.insert(**id))
                    .map(|id| match self.unavailable(*id) {
                        Some(why) => PlannedTrial { scenario, stay_id: *id, peer_stay_id: None, built: Err(why) },
                        None => finish(*id, build(self.all[id])),
                    })
                    .collect()
            }
            None => {
                let want = count.unwrap_or(config::default_count(scenario));
                let by_id: HashMap<StayId, &PatientRecord> = candidates.iter().map(|r| (r.stay_id(), *r)).collect();
                let order = shuffled(by_id.keys().copied().collect(), self.seed ^ scenario_salt(scenario));
                let mut out = Vec::new();
                for id in order {
                    if out.len() == want {
                        break;
                    }
                    if let Ok(b) = build(by_id[&id]) {
                        out.push(finish(id, Ok(b)));
                    }
                }
                out
            }
        }
    }

    fn plan(&self, cfg: &ExperimentConfig) -> Vec<PlannedTrial> {
        let s = &cfg.scenarios;
        let b = self.builder;
        let mut out = Vec::new();

        if let Some(w) = &s.what_if {
            out.extend(
                self.single(Scenario::WhatIf, &w.stay_ids, w.count, self.eligible(), |r| {
                    b.build_what_if(r, w.split_min)
                }),
            );
        }
        if let Some(w) = &s.why_not {
            let expired: Vec<_> = self
                .eligible()
                .into_iter()
                .filter(|r| r.stay.unit_discharge_status.outcome() == Some(Outcome::Expired))
                .collect();
            out.extend(self.single(Scenario::WhyNot, &w.stay_ids, w.count, expired, |r| {
                let peer = if w.use_peer { find_alternative_peer(r, &self.pool, &w.peer) } else { None };
                b.build_why_not(r, peer)
            }));
        }
        if let Some(w) = &s.so_what {
            let fixed = match (w.window_start_min, w.window_end_min) {
                (Some(a), Some(z)) => TimeWindow::new(a, z).ok(),
                _ => None,
            };
            out.extend(self.single(Scenario::SoWhat, &w.stay_ids, w.count, self.eligible(), |r| {
                let window = fixed
                    .or_else(|| default_so_what_window(r, w.window_minutes))
                    .ok_or(ScenarioError::NoTreatmentInWindow)?;
                b.build_so_what(r, window)
            }));
        }
        if let Some(h) = &s.how_about {
            out.extend(self.plan_how_about(h));
        }
        if let Some(d) = &s.discharge_prediction {
            let scenario = Scenario::DischargePrediction;
            let build = |r: &PatientRecord| b.build_discharge_prediction(r);
            if d.balanced && d.stay_ids.is_none() {
                let half = d.count.unwrap_or(config::default_count(scenario)) / 2;
                for label in Outcome::ALL {
                    let class: Vec<_> = self
                        .eligible()
                        .into_iter()
                        .filter(|r| r.stay.unit_discharge_status.outcome() == Some(label))
                        .collect();
                    out.extend(self.single(scenario, &None, Some(half), class, build));
                }
            } else {
                out.extend(self.single(scenario, &d.stay_ids, d.count, self.eligible(), build));
            }
        }
        out
    }

    fn plan_how_about(&self, h: &config::HowAboutConfig) -> Vec<PlannedTrial> {
        let scenario = Scenario::HowAbout;
        let make = |a: StayId, z: StayId, built: Result<(PromptBundle, GroundTruth), String>| PlannedTrial {
            scenario,
            stay_id: a,
            peer_stay_id: Some(z),
            built,
        };
        if let Some(pairs) = &h.pairs {
            let mut seen = BTreeSet::new();
            return pairs
                .iter()
                .filter(|p| seen.insert(**p))
                .map(|[a, z]| {
                    let why = self.unavailable(*a).or_else(|| self.unavailable(*z));
                    let built = match why {
                        Some(w) => Err(w),
                        None => self.builder.build_how_about(self.all[a], self.all[z]).map_err(|e| e.to_string()),
                    };
                    make(*a, *z, built)
                })
                .collect();
        }
        let Some([da, db]) = &h.diseases else { return Vec::new() };
        let eligible = self.eligible();
        let Ok(pairs) = pair_similar_diseases(&eligible, da, db) else { return Vec::new() };
        let by_key: HashMap<(StayId, StayId), (&PatientRecord, &PatientRecord)> =
            pairs.iter().map(|(a, z)| ((a.stay_id(), z.stay_id()), (*a, *z))).collect();
        let order = shuffled(by_key.keys().copied().collect(), self.seed ^ scenario_salt(scenario));
        let want = h.count.unwrap_or(config::default_count(scenario));
        let mut out = Vec::new();
        for key in order {
            if out.len() == want {
                break;
            }
            let (a, z) = by_key[&key];
            if let Ok(built) = self.builder.build_how_about(a, z) {
                out.push(make(key.0, key.1, Ok(built)));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Running

/// Everything a run needs besides the config, loaded from disk.
pub struct Prepared {
    pub records: Vec<PatientRecord>,
    pub load_summary: LoadSummary,
    pub builder: ScenarioBuilder,
    pub lexicons: ScoringLexicons,
    pub refusal: Lexicon,
    pub held_out: BTreeSet<StayId>,
}

fn file_sha256(path: &Path) -> Result<String, RunnerError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, RunnerError> {
    let paths = cfg.data_paths()?;
    let (records, load_summary) = load_dataset(&paths, LoadOptions { strict: cfg.data.strict })?;

    let invalid = |e: String| RunnerError::ConfigInvalid(e);
    let p = &cfg.prompts;
    let templates = match &p.templates_dir {
        Some(d) => PromptTemplates::load_dir(&cfg.resolve(d)).map_err(|e| invalid(e.to_string()))?,
        None => PromptTemplates::default(),
    };
    let exemplars = match (&p.fewshot, p.zero_shot) {
        (_, true) => Vec::new(),
        (Some(f), false) => load_exemplars(&cfg.resolve(f)).map_err(|e| invalid(e.to_string()))?,
        (None, false) => default_exemplars(),
    };
    let builder = ScenarioBuilder::new(templates, &exemplars).map_err(|e| invalid(e.to_string()))?;
    let (lexicons, refusal) = match &p.lexicons_dir {
        Some(d) => {
            let dir = cfg.resolve(d);
            let lex = ScoringLexicons::load_dir(&dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
            let rpath = dir.join("refusal.txt");
            let refusal = if rpath.exists() {
                Lexicon::load(&rpath).map_err(|e| invalid(format!("{}: {e}", rpath.display())))?
            } else {
                default_refusal_lexicon()
            };
            (lex, refusal)
        }
        None => (ScoringLexicons::default(), default_refusal_lexicon()),
    };
    let held_out = match (&cfg.finetune.manifest, cfg.finetune.enforce_disjoint) {
        (Some(m), true) => load_manifest(&cfg.resolve(m))?.training_stay_ids.into_iter().collect(),
        _ => BTreeSet::new(),
    };
    Ok(Prepared { records, load_summary, builder, lexicons, refusal, held_out })
}

pub fn plan_trials(cfg: &ExperimentConfig, prepared: &Prepared) -> Vec<PlannedTrial> {
    let pool = filter_cohort(&prepared.records, &cfg.cohort);
    let planner = Planner {
        builder: &prepared.builder,
        all: prepared.records.iter().map(|r| (r.stay_id(), r)).collect(),
        pool_ids: pool.iter().map(|r| r.stay_id()).collect(),
        pool,
        held_out: prepared.held_out.clone(),
        seed: cfg.seed,
    };
    let mut trials = planner.plan(cfg);
    trials.sort_by_key(|t| (t.scenario, t.stay_id, t.peer_stay_id));
    trials
}

/// Runs every (backend, trial) pair. Per-trial failures are recorded in the
/// artifact; only configuration, data and backend-construction problems abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifact, RunnerError> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let planned = plan_trials(cfg, &prepared);
    if planned.iter().all(|t| t.built.is_err()) {
        return Err(RunnerError::NoTrials);
    }

    let store = match &cfg.replay_store {
        Some(p) if cfg.mode != Mode::Live => Some(ReplayStore::open(&cfg.resolve(p))?),
        _ => None,
    };
    let replay_digest = match (&cfg.replay_store, cfg.mode) {
        (Some(p), Mode::Replay) => Some(file_sha256(&cfg.resolve(p))?),
        _ => None,
    };
    let dispatcher = Dispatcher::new(cfg.mode, store, cfg.retry, prepared.refusal.clone())?;
    let backends: Vec<Box<dyn ChatBackend>> = cfg
        .backends
        .iter()
        .map(|b| -> Result<Box<dyn ChatBackend>, LlmError> {
            match cfg.mode {
                Mode::Replay => Ok(Box::new(OfflineBackend)),
                Mode::Live | Mode::Record => Ok(Box::new(HttpBackend::new(b)?)),
            }
        })
        .collect::<Result<_, _>>()?;

    let jobs: Vec<(usize, &PlannedTrial)> =
        (0..cfg.backends.len()).flat_map(|i| planned.iter().map(move |t| (i, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_in_flight)
        .build()
        .map_err(|e| RunnerError::ConfigInvalid(e.to_string()))?;
    let mut trials: Vec<TrialRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|(i, t)| run_trial(&dispatcher, &cfg.backends[*i], backends[*i].as_ref(), t, &prepared.lexicons))
            .collect()
    });
    trials.sort_by(|a, b| a.key().cmp(&b.key()));

    let ground_truth = planned
        .iter()
        .filter_map(|t| {
            t.built.as_ref().ok().map(|(_, gt)| GroundTruthRecord {
                scenario: t.scenario,
                stay_id: t.stay_id,
                peer_stay_id: t.peer_stay_id,
                ground_truth: gt.clone(),
            })
        })
        .collect();

    let paths = cfg.data_paths()?;
    let data_sha256 = [
        ("patients", &paths.patients),
        ("diagnoses", &paths.diagnoses),
        ("treatments", &paths.treatments),
        ("vitals", &paths.vitals),
    ]
    .into_iter()
    .map(|(k, p)| file_sha256(p).map(|d| (k.to_string(), d)))
    .collect::<Result<_, _>>()?;
    let stamps: Vec<DateTime<Utc>> = trials.iter().filter_map(|t| t.transcript.as_ref().map(|x| x.timestamp)).collect();
    let provenance = Provenance {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: cfg.digest(),
        data_sha256,
        replay_store_sha256: replay_digest,
        seed: cfg.seed,
        mode: cfg.mode,
        first_timestamp: stamps.iter().min().copied(),
        last_timestamp: stamps.iter().max().copied(),
    };
    let summary = Summary {
        schema_version: config::SCHEMA_VERSION,
        provenance,
        trial_count: trials.len(),
        error_count: trials.iter().filter(|t| t.error.is_some()).count(),
        aggregates: aggregate_trials(&trials),
    };
    Ok(RunArtifact { summary, trials, ground_truth })
}

fn run_trial(
    dispatcher: &Dispatcher,
    config: &crate::llm::BackendConfig,
    backend: &dyn ChatBackend,
    trial: &PlannedTrial,
    lex: &ScoringLexicons,
) -> TrialRecord {
    let mut rec = TrialRecord {
        model: config.model_name.clone(),
        scenario: trial.scenario,
        stay_id: trial.stay_id,
        peer_stay_id: trial.peer_stay_id,
        transcript: None,
        score: None,
        error: None,
    };
    let (bundle, truth) = match &trial.built {
        Ok(b) => b,
        Err(e) => {
            rec.error = Some(format!("prompt: {e}"));
            return rec;
        }
    };
    match dispatcher.complete(bundle, config, backend) {
        Ok(t) => {
            match score_response(truth, &t.response_text, lex) {
                Ok(s) => rec.score = Some(s),
                Err(e) => rec.error = Some(format!("scoring: {e}")),
            }
            rec.transcript = Some(t);
        }
        Err(e) => rec.error = Some(format!("backend: {e}")),
    }
    rec
}

/// Recomputes every score and aggregate from stored transcripts.
pub fn rescore(artifact: &RunArtifact, lex: &ScoringLexicons) -> RunArtifact {
    let truths: HashMap<(Scenario, StayId, Option<StayId>), &GroundTruth> =
        artifact.ground_truth.iter().map(|g| ((g.scenario, g.stay_id, g.peer_stay_id), &g.ground_truth)).collect();
    let trials: Vec<TrialRecord> = artifact
        .trials
        .iter()
        .map(|t| {
            let mut t = t.clone();
            if let (Some(tr), Some(gt)) = (&t.transcript, truths.get(&(t.scenario, t.stay_id, t.peer_stay_id))) {
                match score_response(gt, &tr.response_text, lex) {
                    Ok(s) => {
                        t.score = Some(s);
                        if t.error.as_deref().is_some_and(|e| e.starts_with("scoring:")) {
                            t.error = None;
                        }
                    }
                    Err(e) => {
                        t.score = None;
                        t.error = Some(format!("scoring: {e}"));
                    }
                }
            }
            t
        })
        .collect();
    let mut summary = artifact.summary.clone();
    summary.error_count = trials.iter().filter(|t| t.error.is_some()).count();
    summary.aggregates = aggregate_trials(&trials);
    RunArtifact { summary, trials, ground_truth: artifact.ground_truth.clone() }
}

// ---------------------------------------------------------------------------
// Artifact I/O

pub const TRIALS_FILE: &str = "trials.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).expect("artifact rows serialize") + "\n").collect()
}

pub fn write_artifact(artifact: &RunArtifact, dir: &Path) -> Result<(), RunnerError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(io_err(&p))
    };
    write(TRIALS_FILE, jsonl(&artifact.trials))?;
    write(GROUND_TRUTH_FILE, jsonl(&artifact.ground_truth))?;
    write(SUMMARY_FILE, serde_json::to_string_pretty(&artifact.summary).expect("summary serializes") + "\n")
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| RunnerError::Artifact { path: path.to_path_buf(), reason: format!("line {}: {e}", i + 1) })
        })
        .collect()
}

pub fn read_artifact(dir: &Path) -> Result<RunArtifact, RunnerError> {
    let sp = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&sp).map_err(io_err(&sp))?;
    let summary =
        serde_json::from_str(&text).map_err(|e| RunnerError::Artifact { path: sp.clone(), reason: e.to_string() })?;
    Ok(RunArtifact {
        summary,
        trials: read_jsonl(&dir.join(TRIALS_FILE))?,
        ground_truth: read_jsonl(&dir.join(GROUND_TRUTH_FILE))?,
    })
}
