//! Presetting turns and the five experiment prompt bundles.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Outcome, PatientRecord, StayId};
use crate::scoring::TreatmentItem;
use crate::template::{PromptTemplates, TemplateError};
use crate::timeline::{render_narrative, NarrativePolicy, TimeWindow, TimelineError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("no diagnosis before the split offset {0}")]
    NoPreSplitDiagnosis(i64),
    #[error("no diagnosis at or after the split offset {0}")]
    NoPostSplitDiagnosis(i64),
    #[error("no unseen treatment at or after the split offset {0}")]
    NoPostSplitTreatment(i64),
    #[error("stay {0} did not expire in the unit")]
    NotExpired(StayId),
    #[error("no treatment inside the window")]
    NoTreatmentInWindow,
    #[error("no diagnosis inside the window")]
    NoDiagnosisInWindow,
    #[error("source and target share the disease {0:?}")]
    SameDisease(String),
    #[error("source stay {0} has no treatments")]
    MissingSourcePlan(StayId),
    #[error("target stay {0} has no treatments that the prompt does not already show")]
    MissingTargetPlan(StayId),
    #[error("target stay {0} has no diagnoses")]
    NoTargetDiagnosis(StayId),
    #[error("stay {0} has no treatments")]
    NoTreatments(StayId),
    #[error("stay {0} has an unknown discharge status")]
    UnknownOutcome(StayId),
    #[error("few-shot exemplars cannot target {0}")]
    ExemplarScenario(Scenario),
    #[error("failed to read exemplars: {0}")]
    Exemplars(String),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage { role, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    WhatIf,
    WhyNot,
    SoWhat,
    HowAbout,
    DischargePrediction,
}

impl Scenario {
    pub const ALL: [Scenario; 5] =
        [Scenario::WhatIf, Scenario::WhyNot, Scenario::SoWhat, Scenario::HowAbout, Scenario::DischargePrediction];

    pub fn slug(self) -> &'static str {
        match self {
            Scenario::WhatIf => "what-if",
            Scenario::WhyNot => "why-not",
            Scenario::SoWhat => "so-what",
            Scenario::HowAbout => "how-about",
            Scenario::DischargePrediction => "discharge-prediction",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

/// Messages sent for one trial. Build through the `ScenarioBuilder` methods,
/// which keep the system message first and a user message last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub scenario: Scenario,
    pub stay_id: StayId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_stay_id: Option<StayId>,
    pub messages: Vec<ChatMessage>,
}

impl PromptBundle {
    /// Content of the final (scenario) user message.
    pub fn user_text(&self) -> &str {
        self.messages.last().map_or("", |m| m.content.as_str())
    }

    pub fn is_well_formed(&self) -> bool {
        let systems = self.messages.iter().filter(|m| m.role == Role::System).count();
        systems == 1
            && self.messages.first().is_some_and(|m| m.role == Role::System)
            && self.messages.last().is_some_and(|m| m.role == Role::User)
            && self.messages.iter().all(|m| !m.content.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    TreatmentPlan { items: BTreeSet<TreatmentItem> },
    DiagnosisSet { paths: BTreeSet<String> },
    OutcomeLabel { outcome: Outcome },
    AlternativePreferred { expected: bool },
    TargetPlan { items: BTreeSet<TreatmentItem> },
}

impl GroundTruth {
    pub fn scenario(&self) -> Scenario {
        match self {
            GroundTruth::TreatmentPlan { .. } => Scenario::WhatIf,
            GroundTruth::DiagnosisSet { .. } => Scenario::SoWhat,
            GroundTruth::OutcomeLabel { .. } => Scenario::DischargePrediction,
            GroundTruth::AlternativePreferred { .. } => Scenario::WhyNot,
            GroundTruth::TargetPlan { .. } => Scenario::HowAbout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExemplar {
    pub scenario: Scenario,
    pub text: String,
}

#[derive(Deserialize)]
struct ExemplarFile {
    #[serde(default)]
    exemplar: Vec<FewShotExemplar>,
}

/// Parses a TOML document made of `[[exemplar]]` tables with `scenario` and
/// `text` keys.
pub fn parse_exemplars(toml_text: &str) -> Result<Vec<FewShotExemplar>, ScenarioError> {
    let file: ExemplarFile = toml::from_str(toml_text).map_err(|e| ScenarioError::Exemplars(e.to_string()))?;
    if let Some(e) = file.exemplar.iter().find(|e| e.scenario == Scenario::DischargePrediction) {
        return Err(ScenarioError::ExemplarScenario(e.scenario));
    }
    Ok(file.exemplar)
}

pub fn load_exemplars(path: &Path) -> Result<Vec<FewShotExemplar>, ScenarioError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ScenarioError::Exemplars(format!("{}: {e}", path.display())))?;
    parse_exemplars(&text)
}

/// The synthetic exemplars shipped with the crate.
pub fn default_exemplars() -> Vec<FewShotExemplar> {
    parse_exemplars(include_str!("../templates/fewshot.toml")).expect("built-in exemplars parse")
}

/// System message plus the user turn defining the four reasoning scenarios.
/// Exemplars for the prediction task are ignored.
pub fn build_presetting(
    templates: &PromptTemplates,
    exemplars: &[FewShotExemplar],
) -> Result<Vec<ChatMessage>, ScenarioError> {
    let block = |s: Scenario| -> String {
        exemplars
            .iter()
            .filter(|e| e.scenario == s)
            .enumerate()
            .map(|(i, e)| format!("\nExample {}:\n{}", i + 1, e.text.trim_end()))
            .collect()
    };
    let (wi, wn, sw, ha) =
        (block(Scenario::WhatIf), block(Scenario::WhyNot), block(Scenario::SoWhat), block(Scenario::HowAbout));
    let user = templates.presetting.render(&[
        ("what_if_examples", &wi),
        ("why_not_examples", &wn),
        ("so_what_examples", &sw),
        ("how_about_examples", &ha),
    ])?;
    Ok(vec![ChatMessage::new(Role::System, templates.system.render(&[])?), ChatMessage::new(Role::User, user)])
}

/// Default what-if split: the upper median of the distinct treatment offsets.
/// With two or more distinct offsets at least one treatment precedes it.
pub fn default_split(record: &PatientRecord) -> Option<i64> {
    let offsets: Vec<i64> =
        record.treatments.iter().map(|t| t.offset_min).collect::<BTreeSet<_>>().into_iter().collect();
    offsets.get(offsets.len() / 2).copied()
}

/// Default so-what window: `minutes` long, starting at the first treatment.
pub fn default_so_what_window(record: &PatientRecord, minutes: i64) -> Option<TimeWindow> {
    let start = record.treatments.iter().map(|t| t.offset_min).min()?;
    TimeWindow::new(start, start.saturating_add(minutes)).ok()
}

fn distinct<'a>(paths: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = BTreeSet::new();
    paths.into_iter().map(str::trim).filter(|p| !p.is_empty() && seen.insert(*p)).collect()
}

fn normalized_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// True when the canonical form of `item` occurs in `text`, after the text is
/// lowercased and whitespace runs are collapsed.
pub fn item_visible_in(item: &TreatmentItem, text: &str) -> bool {
    normalized_text(text).contains(&item.to_string())
}

fn hidden_items<'a>(paths: impl IntoIterator<Item = &'a str>, shown: &str) -> BTreeSet<TreatmentItem> {
    let shown = normalized_text(shown);
    paths.into_iter().filter_map(TreatmentItem::from_record_path).filter(|i| !shown.contains(&i.to_string())).collect()
}

/// Builds every scenario prompt from one set of templates and presetting turns.
#[derive(Debug, Clone)]
pub struct ScenarioBuilder {
    templates: PromptTemplates,
    presetting: Vec<ChatMessage>,
}

impl ScenarioBuilder {
    pub fn new(templates: PromptTemplates, exemplars: &[FewShotExemplar]) -> Result<Self, ScenarioError> {
        let presetting = build_presetting(&templates, exemplars)?;
        Ok(ScenarioBuilder { templates, presetting })
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn presetting(&self) -> &[ChatMessage] {
        &self.presetting
    }

    fn bundle(&self, scenario: Scenario, record: &PatientRecord, peer: Option<StayId>, user: String) -> PromptBundle {
        let mut messages = self.presetting.clone();
        messages.push(ChatMessage::new(Role::User, user));
        PromptBundle { scenario, stay_id: record.stay_id(), peer_stay_id: peer, messages }
    }

    fn header_values(record: &PatientRecord) -> [(&'static str, String); 4] {
        [
            ("stay_id", record.stay_id().to_string()),
            ("gender", record.stay.gender.to_string()),
            ("age", record.stay.age.to_string()),
            ("disease", record.stay.disease.clone()),
        ]
    }

    fn render_with(
        template: &crate::template::Template,
        record: &PatientRecord,
        narrative: &str,
        extra: &[(&str, &str)],
    ) -> Result<String, ScenarioError> {
        let header = Self::header_values(record);
        let mut values: Vec<(&str, &str)> = header.iter().map(|(k, v)| (*k, v.as_str())).collect();
        values.push(("narrative", narrative));
        values.extend_from_slice(extra);
        Ok(template.render(&values)?)
    }

    /// `split_min` of `None` uses [`default_split`].
    pub fn build_what_if(
        &self,
        record: &PatientRecord,
        split_min: Option<i64>,
    ) -> Result<(PromptBundle, GroundTruth), ScenarioError> {
        let split = split_min.or_else(|| default_split(record)).ok_or(ScenarioError::NoTreatments(record.stay_id()))?;
        let (pre, post) = (record.restricted_to(i64::MIN, split), record.restricted_to(split, i64::MAX));
        if pre.diagnoses.is_empty() {
            return Err(ScenarioError::NoPreSplitDiagnosis(split));
        }
        if post.diagnoses.is_empty() {
            return Err(ScenarioError::NoPostSplitDiagnosis(split));
        }
        let narrative = render_narrative(record, &NarrativePolicy { cutoff_min: Some(split), ..Default::default() })?;

        // Diagnoses are re-charted over a stay; prefer the ones not seen before
        // the split and fall back to every post-split path.
        let known: BTreeSet<&str> = pre.diagnoses.iter().map(|d| d.diagnosis_path.trim()).collect();
        let fresh: Vec<_> = post.diagnoses.iter().filter(|d| !known.contains(d.diagnosis_path.trim())).collect();
        let shown = if fresh.is_empty() { post.diagnoses.iter().collect() } else { fresh };
        let mut seen = BTreeSet::new();
        let mut groups: Vec<(i64, Vec<&str>)> = Vec::new();
        for d in shown {
            let p = d.diagnosis_path.trim();
            if p.is_empty() || !seen.insert(p) {
                continue;
            }
            match groups.last_mut() {
                Some((o, paths)) if *o == d.offset_min => paths.push(p),
                _ => groups.push((d.offset_min, vec![p])),
            }
        }
        let new_dx =
            groups.iter().map(|(o, p)| format!("{} (offset: {o})", p.join(", "))).collect::<Vec<_>>().join(", ");

        let user = Self::render_with(&self.templates.what_if, record, &narrative, &[("new_diagnoses", &new_dx)])?;
        let items = hidden_items(post.treatments.iter().map(|t| t.treatment_path.as_str()), &user);
        if items.is_empty() {
            return Err(ScenarioError::NoPostSplitTreatment(split));
        }
        Ok((self.bundle(Scenario::WhatIf, record, None, user), GroundTruth::TreatmentPlan { items }))
    }

    pub fn build_why_not(
        &self,
        record: &PatientRecord,
        peer: Option<&PatientRecord>,
    ) -> Result<(PromptBundle, GroundTruth), ScenarioError> {
        if record.stay.unit_discharge_status.outcome() != Some(Outcome::Expired) {
            return Err(ScenarioError::NotExpired(record.stay_id()));
        }
        let narrative = render_narrative(record, &NarrativePolicy::default())?;
        let user = match peer {
            None => Self::render_with(&self.templates.why_not, record, &narrative, &[])?,
            Some(p) => {
                let plan = distinct(p.treatments.iter().map(|t| t.treatment_path.as_str())).join(", ");
                Self::render_with(&self.templates.why_not_peer, record, &narrative, &[("alternative_plan", &plan)])?
            }
        };
        let bundle = self.bundle(Scenario::WhyNot, record, peer.map(PatientRecord::stay_id), user);
        Ok((bundle, GroundTruth::AlternativePreferred { expected: true }))
    }

    pub fn build_so_what(
        &self,
        record: &PatientRecord,
        window: TimeWindow,
    ) -> Result<(PromptBundle, GroundTruth), ScenarioError> {
        let inside = record.restricted_to(window.start_min(), window.end_min());
        if inside.treatments.is_empty() {
            return Err(ScenarioError::NoTreatmentInWindow);
        }
        if inside.diagnoses.is_empty() {
            return Err(ScenarioError::NoDiagnosisInWindow);
        }
        let narrative = render_narrative(&inside, &NarrativePolicy::without_diagnoses())?;
        let user = Self::render_with(&self.templates.so_what, record, &narrative, &[])?;
        let paths: BTreeSet<String> = distinct(inside.diagnoses.iter().map(|d| d.diagnosis_path.as_str()))
            .into_iter()
            .filter(|p| !user.contains(p))
            .map(str::to_string)
            .collect();
        if paths.is_empty() {
            return Err(ScenarioError::NoDiagnosisInWindow);
        }
        Ok((self.bundle(Scenario::SoWhat, record, None, user), GroundTruth::DiagnosisSet { paths }))
    }

    pub fn build_how_about(
        &self,
        source: &PatientRecord,
        target: &PatientRecord,
    ) -> Result<(PromptBundle, GroundTruth), ScenarioError> {
        let (sd, td) = (source.stay.disease.trim(), target.stay.disease.trim());
        if sd.to_lowercase() == td.to_lowercase() {
            return Err(ScenarioError::SameDisease(sd.to_string()));
        }
        if source.treatments.is_empty() {
            return Err(ScenarioError::MissingSourcePlan(source.stay_id()));
        }
        if target.treatments.is_empty() {
            return Err(ScenarioError::MissingTargetPlan(target.stay_id()));
        }
        if target.diagnoses.is_empty() {
            return Err(ScenarioError::NoTargetDiagnosis(target.stay_id()));
        }
        let narrative = render_narrative(source, &NarrativePolicy::without_vitals())?;
        let target_dx = distinct(target.diagnoses.iter().map(|d| d.diagnosis_path.as_str())).join(", ");
        let user = Self::render_with(
            &self.templates.how_about,
            source,
            &narrative,
            &[("target_disease", td), ("target_diagnoses", &target_dx)],
        )?;
        let items = hidden_items(target.treatments.iter().map(|t| t.treatment_path.as_str()), &user);
        if items.is_empty() {
            return Err(ScenarioError::MissingTargetPlan(target.stay_id()));
        }
        let bundle = self.bundle(Scenario::HowAbout, source, Some(target.stay_id()), user);
        Ok((bundle, GroundTruth::TargetPlan { items }))
    }

    /// The patient body shared by the prediction prompt and fine-tune samples.
    pub fn prediction_body(&self, record: &PatientRecord) -> Result<String, ScenarioError> {
        if record.treatments.is_empty() {
            return Err(ScenarioError::NoTreatments(record.stay_id()));
        }
        let narrative = render_narrative(record, &NarrativePolicy::default())?;
        Self::render_with(&self.templates.prediction_body, record, &narrative, &[])
    }

    pub fn build_discharge_prediction(
        &self,
        record: &PatientRecord,
    ) -> Result<(PromptBundle, GroundTruth), ScenarioError> {
        let outcome =
            record.stay.unit_discharge_status.outcome().ok_or(ScenarioError::UnknownOutcome(record.stay_id()))?;
        let body = self.prediction_body(record)?;
        let id = record.stay_id().to_string();
        let user = self.templates.discharge_prediction.render(&[("stay_id", &id), ("prediction_body", &body)])?;
        Ok((self.bundle(Scenario::DischargePrediction, record, None, user), GroundTruth::OutcomeLabel { outcome }))
    }
}

impl Default for ScenarioBuilder {
    fn default() -> Self {
        ScenarioBuilder::new(PromptTemplates::default(), &default_exemplars()).expect("built-in templates render")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{AgeValue, DiagnosisEvent, DischargeStatus, Gender, PatientStay, TreatmentEvent, VitalSample};
    use proptest::prelude::*;

    fn rec(id: u64, disease: &str, status: DischargeStatus, dx: &[(i64, &str)], tx: &[(i64, &str)]) -> PatientRecord {
        let sid = StayId::new(id).unwrap();
        PatientRecord {
            stay: PatientStay {
                stay_id: sid,
                unique_pid: "p".into(),
                health_system_stay_id: "h".into(),
                gender: Gender::Female,
                age: AgeValue::Years(74),
                disease: disease.into(),
                unit_discharge_status: status,
            },
            diagnoses: dx
                .iter()
                .map(|(o, p)| DiagnosisEvent { stay_id: sid, offset_min: *o, diagnosis_path: (*p).into() })
                .collect(),
            treatments: tx
                .iter()
                .map(|(o, p)| TreatmentEvent { stay_id: sid, offset_min: *o, treatment_path: (*p).into() })
                .collect(),
            vitals: vec![VitalSample {
                stay_id: sid,
                offset_min: 5,
                sao2: Some(97.0),
                heartrate: None,
                respiration: None,
            }],
        }
    }

    fn sample() -> PatientRecord {
        rec(
            343448,
            "Hypertension, uncontrolled",
            DischargeStatus::Expired,
            &[(10, "cardiovascular|hypertension"), (500, "renal|acute renal failure"), (600, "pulmonary|pneumonia")],
            &[(20, "cardiovascular|vasodilator|labetalol"), (520, "x|y|z"), (700, "a|b")],
        )
    }

    fn item(s: &str) -> TreatmentItem {
        TreatmentItem::from_record_path(s).unwrap()
    }

    #[test]
    fn presetting_defines_four_scenarios_without_exemplars() {
        let p = build_presetting(&PromptTemplates::default(), &[]).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].role, Role::System);
        assert_eq!(p[0].content, "You are a medical treatment assistant.");
        assert!(p[1].content.contains("define for you four scenarios of higher order reasoning problems"));
        for h in ["What-if scenario:", "Why-not scenario:", "So-what scenario:", "How-about scenario:"] {
            assert_eq!(p[1].content.matches(h).count(), 1, "{h}");
        }
    }

    #[test]
    fn exemplars_appear_under_their_heading() {
        let ex: Vec<_> = [Scenario::WhatIf, Scenario::WhyNot, Scenario::SoWhat, Scenario::HowAbout]
            .iter()
            .map(|s| FewShotExemplar { scenario: *s, text: format!("EXEMPLAR-{s}") })
            .collect();
        let t = PromptTemplates::default();
        let p = build_presetting(&t, &ex).unwrap();
        assert_eq!(p, build_presetting(&t, &ex).unwrap());
        let text = &p[1].content;
        let at = |s: &str| text.find(s).unwrap();
        assert!(at("What-if scenario:") < at("EXEMPLAR-what-if") && at("EXEMPLAR-what-if") < at("Why-not scenario:"));
        assert!(at("Why-not scenario:") < at("EXEMPLAR-why-not") && at("EXEMPLAR-why-not") < at("So-what scenario:"));
        assert!(at("So-what scenario:") < at("EXEMPLAR-so-what") && at("EXEMPLAR-so-what") < at("How-about scenario:"));
        assert!(at("How-about scenario:") < at("EXEMPLAR-how-about"));
    }

    #[test]
    fn default_exemplars_two_per_scenario() {
        let ex = default_exemplars();
        for s in &Scenario::ALL[..4] {
            assert_eq!(ex.iter().filter(|e| e.scenario == *s).count(), 2);
        }
        assert!(matches!(
            parse_exemplars("[[exemplar]]\nscenario = \"discharge-prediction\"\ntext = \"x\"\n"),
            Err(ScenarioError::ExemplarScenario(_))
        ));
    }

    #[test]
    fn what_if_header_and_ground_truth() {
        let b = ScenarioBuilder::default();
        let (bundle, gt) = b.build_what_if(&sample(), Some(500)).unwrap();
        assert!(bundle.is_well_formed());
        let u = bundle.user_text();
        assert!(
            u.starts_with("What if scenario: patientunitstayid: 343448, gender: Female, age:74, disease:Hypertension")
        );
        assert!(u.contains("What if the patient has a new diagnosis: renal|acute renal failure (offset: 500), pulmonary|pneumonia (offset: 600)"));
        assert!(u.ends_with("what would be the new treatment plan?"));
        assert!(!u.contains("x|y|z"));
        assert_eq!(gt, GroundTruth::TreatmentPlan { items: [item("x|y|z"), item("a|b")].into() });
    }

    #[test]
    fn what_if_split_before_all_treatments_needs_pre_diagnosis() {
        let b = ScenarioBuilder::default();
        let r = sample();
        let (_, gt) = b.build_what_if(&r, Some(15)).unwrap();
        let all: BTreeSet<_> = r.treatments.iter().map(|t| item(&t.treatment_path)).collect();
        assert_eq!(gt, GroundTruth::TreatmentPlan { items: all });
        assert!(matches!(b.build_what_if(&r, Some(5)), Err(ScenarioError::NoPreSplitDiagnosis(5))));
        assert!(matches!(b.build_what_if(&r, Some(650)), Err(ScenarioError::NoPostSplitDiagnosis(650))));
    }

    #[test]
    fn what_if_default_split_is_upper_median() {
        assert_eq!(default_split(&sample()), Some(520));
        let (_, gt) = ScenarioBuilder::default().build_what_if(&sample(), None).unwrap();
        assert_eq!(gt, GroundTruth::TreatmentPlan { items: [item("x|y|z"), item("a|b")].into() });
    }

    #[test]
    fn why_not_with_and_without_peer() {
        let b = ScenarioBuilder::default();
        let r = sample();
        let (bundle, gt) = b.build_why_not(&r, None).unwrap();
        assert!(bundle.user_text().starts_with("Why Not scenario: patientunitstayid: 343448"));
        assert!(bundle.user_text().contains("which one is better?"));
        assert!(!bundle.user_text().contains("Another patient"));
        assert_eq!(gt, GroundTruth::AlternativePreferred { expected: true });

        let peer = rec(
            9,
            "Hypertension, uncontrolled",
            DischargeStatus::Alive,
            &[(1, "cardiovascular|hypertension")],
            &[(2, "cardiovascular|vasodilator|nicardipine"), (3, "renal|diuretics|furosemide")],
        );
        let (bundle, _) = b.build_why_not(&r, Some(&peer)).unwrap();
        assert_eq!(bundle.peer_stay_id, StayId::new(9));
        for t in &peer.treatments {
            assert!(bundle.user_text().contains(&t.treatment_path));
        }
        assert!(bundle.user_text().contains("which one is better?"));

        let alive = rec(5, "d", DischargeStatus::Alive, &[(1, "a|b")], &[(2, "c|d")]);
        assert!(matches!(b.build_why_not(&alive, None), Err(ScenarioError::NotExpired(_))));
    }

    #[test]
    fn so_what_hides_diagnoses() {
        let b = ScenarioBuilder::default();
        let r = sample();
        let (bundle, gt) = b.build_so_what(&r, TimeWindow::new(0, 10_000).unwrap()).unwrap();
        let u = bundle.user_text();
        assert!(u.starts_with("So-What scenario: patientunitstayid: 343448"));
        assert!(u.contains("treatment:") && !u.contains("diagnosis:"));
        assert!(u.ends_with("analysis this for potential diagnosis of the patient."));
        let all: BTreeSet<String> = r.diagnoses.iter().map(|d| d.diagnosis_path.clone()).collect();
        assert_eq!(gt, GroundTruth::DiagnosisSet { paths: all });

        let (_, gt) = b.build_so_what(&r, TimeWindow::new(0, 550).unwrap()).unwrap();
        assert!(matches!(gt, GroundTruth::DiagnosisSet { ref paths } if paths.len() == 2));
        assert!(matches!(
            b.build_so_what(&r, TimeWindow::new(0, 15).unwrap()),
            Err(ScenarioError::NoTreatmentInWindow)
        ));
        assert!(matches!(
            b.build_so_what(&r, TimeWindow::new(690, 800).unwrap()),
            Err(ScenarioError::NoDiagnosisInWindow)
        ));
        assert_eq!(default_so_what_window(&r, 1440), TimeWindow::new(20, 1460).ok());
    }

    #[test]
    fn how_about_names_target() {
        let b = ScenarioBuilder::default();
        let src = rec(
            350811,
            "Bleeding, lower GI",
            DischargeStatus::Alive,
            &[(1, "gastrointestinal|gi bleeding|lower gi bleeding")],
            &[(2, "gastrointestinal|endoscopy|colonoscopy")],
        );
        let tgt = rec(
            2,
            "Bleeding, upper GI",
            DischargeStatus::Alive,
            &[(1, "gastrointestinal|gi bleeding|upper gi bleeding")],
            &[(3, "gastrointestinal|medications|pantoprazole"), (4, "gastrointestinal|endoscopy|egd")],
        );
        let (bundle, gt) = b.build_how_about(&src, &tgt).unwrap();
        let u = bundle.user_text();
        assert!(u.starts_with("How about scenario: patientunitstayid: 350811"));
        assert!(u.contains("another patient with Bleeding, upper GI,"));
        assert!(u.contains("this is the patient's diagnosis: gastrointestinal|gi bleeding|upper gi bleeding"));
        let expected: BTreeSet<_> = tgt.treatments.iter().map(|t| item(&t.treatment_path)).collect();
        assert_eq!(gt, GroundTruth::TargetPlan { items: expected });

        let mut bare = tgt.clone();
        bare.treatments.clear();
        assert!(matches!(b.build_how_about(&src, &bare), Err(ScenarioError::MissingTargetPlan(_))));
        let mut same = tgt.clone();
        same.stay.disease = "bleeding, LOWER gi".into();
        assert!(matches!(b.build_how_about(&src, &same), Err(ScenarioError::SameDisease(_))));
    }

    #[test]
    fn discharge_prediction_embeds_narrative() {
        let b = ScenarioBuilder::default();
        let r = sample();
        let (bundle, gt) = b.build_discharge_prediction(&r).unwrap();
        assert_eq!(gt, GroundTruth::OutcomeLabel { outcome: Outcome::Expired });
        let narrative = render_narrative(&r, &NarrativePolicy::default()).unwrap();
        let u = bundle.user_text();
        assert!(u.starts_with("This is the diagnosis information and treatment information of an ICU patient."));
        assert!(u.contains(&format!(
            "\npatientunitstayid: 343448, gender: Female, age: 74, disease: Hypertension, uncontrolled, ,{narrative}, patient's status after discharge?"
        )));
        let mut unknown = r.clone();
        unknown.stay.unit_discharge_status = DischargeStatus::Unknown;
        assert!(matches!(b.build_discharge_prediction(&unknown), Err(ScenarioError::UnknownOutcome(_))));
    }

    #[test]
    fn bundles_serialize_without_ground_truth() {
        let (bundle, gt) = ScenarioBuilder::default().build_what_if(&sample(), Some(500)).unwrap();
        let json = serde_json::to_string(&bundle).unwrap();
        assert!(json.contains("\"scenario\":\"what-if\"") && !json.contains("x|y|z"));
        let back: GroundTruth = serde_json::from_str(&serde_json::to_string(&gt).unwrap()).unwrap();
        assert_eq!(back, gt);
    }

    fn arb_record() -> impl Strategy<Value = PatientRecord> {
        let path = prop::sample::select(vec![
            "a|b",
            "a|b|c",
            "x|y|z",
            "cardio|beta|metoprolol",
            "renal|dialysis",
            "pulm|vent",
        ]);
        (
            prop::collection::vec((0i64..2000, path.clone()), 1..8),
            prop::collection::vec((0i64..2000, path), 1..8),
            prop::bool::ANY,
            prop::sample::select(vec!["Sepsis", "ARDS", "a|b"]),
        )
            .prop_map(|(mut dx, mut tx, expired, disease)| {
                dx.sort();
                tx.sort();
                let status = if expired { DischargeStatus::Expired } else { DischargeStatus::Alive };
                rec(11, disease, status, &dx, &tx)
            })
    }

    proptest! {
        #[test]
        fn every_bundle_is_consistent_and_leak_free(r in arb_record(), other in arb_record(), split in 0i64..2000, start in 0i64..2000, len in 1i64..2000) {
            let b = ScenarioBuilder::default();
            let mut target = other.clone();
            target.stay.disease = format!("{} variant", r.stay.disease);
            let results = [
                b.build_what_if(&r, Some(split)),
                b.build_why_not(&r, Some(&other)),
                b.build_so_what(&r, TimeWindow::new(start, start + len).unwrap()),
                b.build_how_about(&r, &target),
                b.build_discharge_prediction(&r),
            ];
            for (expected, res) in Scenario::ALL.iter().zip(results) {
                let Ok((bundle, gt)) = res else { continue };
                prop_assert_eq!(bundle.scenario, *expected);
                prop_assert_eq!(gt.scenario(), *expected);
                prop_assert!(bundle.is_well_formed());
                let u = bundle.user_text();
                match &gt {
                    GroundTruth::TreatmentPlan { items } | GroundTruth::TargetPlan { items } => {
                        prop_assert!(!items.is_empty());
                        prop_assert!(items.iter().all(|i| !item_visible_in(i, u)));
                    }
                    GroundTruth::DiagnosisSet { paths } => {
                        prop_assert!(!paths.is_empty());
                        prop_assert!(paths.iter().all(|p| !u.contains(p.as_str())));
                    }
                    _ => {}
                }
            }
        }
    }
}
