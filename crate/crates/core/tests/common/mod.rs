//! Shared helpers: the bundled fixture dataset and a seeded synthetic pool.
#![allow(dead_code)]

use std::path::PathBuf;

use contrast_eval::ingest::{
    load_dataset, AgeValue, DataPaths, DiagnosisEvent, DischargeStatus, Gender, LoadOptions, Outcome, PatientRecord,
    PatientStay, StayId, TreatmentEvent, VitalSample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic")
}

pub fn fixture_config() -> PathBuf {
    fixture_dir().join("experiment.toml")
}

pub fn fixture_records() -> Vec<PatientRecord> {
    let (records, summary) =
        load_dataset(&DataPaths::in_dir(&fixture_dir()), LoadOptions { strict: true }).expect("fixture dataset loads");
    assert_eq!(summary.orphans.total(), 0);
    records
}

pub fn fixture_record(id: u64) -> PatientRecord {
    fixture_records().into_iter().find(|r| r.stay_id().get() == id).expect("fixture stay present")
}

const DISEASES: &[&str] =
    &["Sepsis, pulmonary", "Pneumonia, bacterial", "Bleeding, upper GI", "CHF, congestive heart failure"];

const DX: &[&str] = &[
    "pulmonary|respiratory failure|acute respiratory failure",
    "renal|disorder of kidney|acute renal failure",
    "cardiovascular|shock / hypotension|sepsis",
    "cardiovascular|arrhythmias|atrial fibrillation",
    "gastrointestinal|GI bleeding / PUD|upper GI bleeding",
    "hematology|coagulation disorders|coagulopathy",
    "endocrine|glucose metabolism|hyperglycemia",
];

const TX: &[&str] = &[
    "pulmonary|ventilation and oxygenation|mechanical ventilation",
    "pulmonary|ventilation and oxygenation|oxygen therapy (< 40%)",
    "infectious diseases|medications|therapeutic antibacterials",
    "cardiovascular|shock|vasopressors|norepinephrine > 0.1 micrograms/kg/min",
    "cardiovascular|shock|fluid resuscitation",
    "gastrointestinal|medications|stress ulcer prophylaxis|pantoprazole",
    "hematology|anticoagulation|heparin",
    "renal|dialysis|hemodialysis",
    "endocrine|glucose metabolism|insulin|sliding scale administration",
];

/// A plausible stay with 2-5 diagnoses, 2-5 treatments and hourly vitals.
pub fn synthetic_record(id: u64, outcome: Outcome, rng: &mut ChaCha8Rng) -> PatientRecord {
    let sid = StayId::new(id).expect("non-zero id");
    let mut offset = rng.gen_range(0..30);
    let mut diagnoses = Vec::new();
    let mut treatments = Vec::new();
    for _ in 0..rng.gen_range(2..=5) {
        diagnoses.push(DiagnosisEvent {
            stay_id: sid,
            offset_min: offset,
            diagnosis_path: DX[rng.gen_range(0..DX.len())].to_string(),
        });
        treatments.push(TreatmentEvent {
            stay_id: sid,
            offset_min: offset + rng.gen_range(1..20),
            treatment_path: TX[rng.gen_range(0..TX.len())].to_string(),
        });
        offset += rng.gen_range(60..600);
    }
    let vitals = (0..offset / 60 + 1)
        .map(|h| VitalSample {
            stay_id: sid,
            offset_min: h * 60,
            sao2: Some(f64::from(rng.gen_range(88..=100))),
            heartrate: Some(f64::from(rng.gen_range(55..140))),
            respiration: rng.gen_bool(0.95).then(|| f64::from(rng.gen_range(10..32))),
        })
        .collect();
    PatientRecord {
        stay: PatientStay {
            stay_id: sid,
            unique_pid: format!("010-{id}"),
            health_system_stay_id: id.to_string(),
            gender: if rng.gen_bool(0.5) { Gender::Female } else { Gender::Male },
            age: AgeValue::Years(rng.gen_range(20..80)),
            disease: DISEASES[rng.gen_range(0..DISEASES.len())].to_string(),
            unit_discharge_status: match outcome {
                Outcome::Alive => DischargeStatus::Alive,
                Outcome::Expired => DischargeStatus::Expired,
            },
        },
        diagnoses,
        treatments,
        vitals,
    }
}

/// `per_class` alive stays (ids from 1_000_001) followed by `per_class`
/// expired ones (ids from 2_000_001).
pub fn balanced_pool(per_class: usize, seed: u64) -> Vec<PatientRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * 2);
    for i in 0..per_class as u64 {
        out.push(synthetic_record(1_000_001 + i, Outcome::Alive, &mut rng));
    }
    for i in 0..per_class as u64 {
        out.push(synthetic_record(2_000_001 + i, Outcome::Expired, &mut rng));
    }
    out
}
