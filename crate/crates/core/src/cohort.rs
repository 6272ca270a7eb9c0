//! Experiment populations: age/outcome filtering, alternative-treatment peers,
//! similar-disease pairs and outcome-balanced samples.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AgeValue, Outcome, PatientRecord};
use crate::scoring::{item_set, TreatmentItem};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CohortError {
    #[error("max_age_exclusive must be in [1, 90], got {0}")]
    InvalidMaxAge(u32),
    #[error("match criteria enable no condition")]
    NoCriteria,
    #[error("disease labels `{0}` and `{1}` are the same")]
    SameDisease(String, String),
    #[error("need {requested} {label} stays but only {available} are available")]
    InsufficientClass { label: Outcome, available: usize, requested: usize },
}

pub const DEFAULT_MAX_AGE_EXCLUSIVE: u32 = 80;
pub const DEFAULT_AGE_WINDOW_YEARS: u32 = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinEvents {
    #[serde(default)]
    pub diagnoses: usize,
    #[serde(default)]
    pub treatments: usize,
    #[serde(default)]
    pub vitals: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortFilter {
    #[serde(default = "default_max_age")]
    pub max_age_exclusive: Option<u32>,
    #[serde(default)]
    pub outcome: Option<Outcome>,
    #[serde(default)]
    pub disease_substring: Option<String>,
    #[serde(default)]
    pub require_min_events: Option<MinEvents>,
}

fn default_max_age() -> Option<u32> {
    Some(DEFAULT_MAX_AGE_EXCLUSIVE)
}

impl Default for CohortFilter {
    /// Adult cohort under 80, no other restriction.
    fn default() -> Self {
        CohortFilter {
            max_age_exclusive: default_max_age(),
            outcome: None,
            disease_substring: None,
            require_min_events: None,
        }
    }
}

impl CohortFilter {
    /// A filter with every predicate disabled.
    pub fn unrestricted() -> Self {
        CohortFilter { max_age_exclusive: None, ..CohortFilter::default() }
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        match self.max_age_exclusive {
            Some(a) if !(1..=90).contains(&a) => Err(CohortError::InvalidMaxAge(a)),
            _ => Ok(()),
        }
    }

    pub fn accepts(&self, r: &PatientRecord) -> bool {
        if let Some(max) = self.max_age_exclusive {
            match r.stay.age {
                AgeValue::Over89 => return false,
                AgeValue::Years(y) if u32::from(y) >= max => return false,
                AgeValue::Years(_) => {}
            }
        }
        if let Some(o) = self.outcome {
            if r.stay.unit_discharge_status.outcome() != Some(o) {
                return false;
            }
        }
        if let Some(sub) = &self.disease_substring {
            if !r.stay.disease.to_lowercase().contains(&sub.to_lowercase()) {
                return false;
            }
        }
        if let Some(min) = self.require_min_events {
            if r.diagnoses.len() < min.diagnoses || r.treatments.len() < min.treatments || r.vitals.len() < min.vitals {
                return false;
            }
        }
        true
    }
}

/// Records accepted by `filter`, in input order.
pub fn filter_cohort<'a>(records: &'a [PatientRecord], filter: &CohortFilter) -> Vec<&'a PatientRecord> {
    records.iter().filter(|r| filter.accepts(r)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchCriteria {
    #[serde(default)]
    pub same_disease: bool,
    #[serde(default)]
    pub same_primary_diagnosis: bool,
    #[serde(default)]
    pub require_different_treatment: bool,
    #[serde(default)]
    pub require_outcome: Option<Outcome>,
    #[serde(default)]
    pub age_window_years: Option<u32>,
}

impl Default for MatchCriteria {
    /// Same disease and primary diagnosis, a different plan, and survival.
    fn default() -> Self {
        MatchCriteria {
            same_disease: true,
            same_primary_diagnosis: true,
            require_different_treatment: true,
            require_outcome: Some(Outcome::Alive),
            age_window_years: None,
        }
    }
}

impl MatchCriteria {
    pub fn validate(&self) -> Result<(), CohortError> {
        if self.same_disease
            || self.same_primary_diagnosis
            || self.require_different_treatment
            || self.require_outcome.is_some()
            || self.age_window_years.is_some()
        {
            Ok(())
        } else {
            Err(CohortError::NoCriteria)
        }
    }
}

fn treatment_items(r: &PatientRecord) -> BTreeSet<TreatmentItem> {
    item_set(r.treatments.iter().map(|t| t.treatment_path.as_str()))
}

fn age_gap(a: &PatientRecord, b: &PatientRecord) -> u32 {
    a.stay.age.approx_years().abs_diff(b.stay.age.approx_years())
}

/// Best peer of `index` in `pool` under `criteria`: smallest age difference,
/// then smallest stay id. `None` when no pool member qualifies.
pub fn find_alternative_peer<'a>(
    index: &PatientRecord,
    pool: &[&'a PatientRecord],
    criteria: &MatchCriteria,
) -> Option<&'a PatientRecord> {
    let disease = index.stay.disease.to_lowercase();
    let primary = index.primary_diagnosis().map(str::to_lowercase);
    let plan = treatment_items(index);

    pool.iter()
        .copied()
        .filter(|p| p.stay_id() != index.stay_id())
        .filter(|p| !criteria.same_disease || p.stay.disease.to_lowercase() == disease)
        .filter(|p| {
            !criteria.same_primary_diagnosis
                || (primary.is_some() && p.primary_diagnosis().map(str::to_lowercase) == primary)
        })
        .filter(|p| !criteria.require_different_treatment || treatment_items(p) != plan)
        .filter(|p| criteria.require_outcome.is_none_or(|o| p.stay.unit_discharge_status.outcome() == Some(o)))
        .filter(|p| criteria.age_window_years.is_none_or(|w| age_gap(index, p) <= w))
        .min_by_key(|p| (age_gap(index, p), p.stay_id()))
}

/// All (a, b) pairs where a's disease contains `disease_a` and b's contains
/// `disease_b`, ordered by (a.stay_id, b.stay_id).
pub fn pair_similar_diseases<'a>(
    pool: &[&'a PatientRecord],
    disease_a: &str,
    disease_b: &str,
) -> Result<Vec<(&'a PatientRecord, &'a PatientRecord)>, CohortError> {
    let (a, b) = (disease_a.to_lowercase(), disease_b.to_lowercase());
    if a.trim() == b.trim() {
        return Err(CohortError::SameDisease(disease_a.into(), disease_b.into()));
    }
    let mut left: Vec<&PatientRecord> =
        pool.iter().copied().filter(|r| r.stay.disease.to_lowercase().contains(&a)).collect();
    let mut right: Vec<&PatientRecord> =
        pool.iter().copied().filter(|r| r.stay.disease.to_lowercase().contains(&b)).collect();
    left.sort_by_key(|r| r.stay_id());
    left.dedup_by_key(|r| r.stay_id());
    right.sort_by_key(|r| r.stay_id());
    right.dedup_by_key(|r| r.stay_id());

    Ok(left
        .iter()
        .flat_map(|&l| right.iter().filter(move |r| r.stay_id() != l.stay_id()).map(move |&r| (l, r)))
        .collect())
}

/// `n_per_class` Alive and `n_per_class` Expired records drawn with a seeded
/// permutation. Stays with unknown status are never drawn.
pub fn sample_balanced<'a>(
    records: &[&'a PatientRecord],
    n_per_class: usize,
    seed: u64,
) -> Result<Vec<&'a PatientRecord>, CohortError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(2 * n_per_class);
    for label in Outcome::ALL {
        let mut class: Vec<&PatientRecord> =
            records.iter().copied().filter(|r| r.stay.unit_discharge_status.outcome() == Some(label)).collect();
        if class.len() < n_per_class {
            return Err(CohortError::InsufficientClass { label, available: class.len(), requested: n_per_class });
        }
        // canonical order first so the draw does not depend on input order
        class.sort_by_key(|r| r.stay_id());
        class.shuffle(&mut rng);
        picked.extend(class.into_iter().take(n_per_class));
    }
    picked.shuffle(&mut rng);
    Ok(picked)
}
