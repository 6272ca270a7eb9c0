//! Rewrites `fixtures/synthetic/replay.jsonl` from the hand-designed responses
//! below, so that the hermetic run has aggregates that can be worked out on
//! paper. Usage: `cargo run --example regen_fixtures [-- path/to/experiment.toml]`.

use std::error::Error;
use std::path::PathBuf;

use chrono::{Duration, TimeZone, Utc};
use contrast_eval::llm::{detect_refusal, request_digest, ReplayStore, Transcript};
use contrast_eval::runner::{plan_trials, prepare, ExperimentConfig};
use contrast_eval::scenarios::Scenario;

const REFUSAL: &str = "I'm sorry, but I cannot provide medical recommendations for a real patient case.";

fn response(scenario: Scenario, stay: u64) -> Option<&'static str> {
    use Scenario::*;
    Some(match (scenario, stay) {
        // all three items exact: 1.0
        (WhatIf, 343448) => {
            "New treatment plan:\n\
             1. cardiovascular|hypertension|antihypertensive drug|labetalol\n\
             2. cardiovascular|myocardial ischemia / infarction|antiplatelet agent|aspirin\n\
             3. hematology|anticoagulation|heparin"
        }
        // one exact, one sharing only the first two segments: 0.75
        (WhatIf, 400103) => {
            "Treatment plan:\n\
             - infectious diseases|medications|therapeutic antibacterials\n\
             - pulmonary|ventilation and oxygenation|mechanical ventilation"
        }
        // two of four predicted items exact, truth has three: 0.5
        (WhatIf, 400106) => {
            "Updated treatment plan:\n\
             1. infectious diseases|medications|therapeutic antibacterials\n\
             2. cardiovascular|shock|fluid resuscitation\n\
             3. renal|dialysis|hemodialysis\n\
             4. gastrointestinal|medications|stress ulcer prophylaxis|pantoprazole"
        }
        (WhatIf, 400112) => REFUSAL,
        // nothing shared: 0.0
        (WhatIf, 400101) => {
            "Treatment plan:\n\
             1. cardiovascular|shock|vasopressors|norepinephrine > 0.1 micrograms/kg/min\n\
             2. pulmonary|ventilation and oxygenation|mechanical ventilation"
        }

        (WhyNot, 3176264) => {
            "The other plan avoids deep sedation and keeps the lungs open.\n\n\
             Decision: a different treatment would be better for this patient."
        }
        (WhyNot, 400104) => "Decision: switch to the alternative plan, which is better here.",
        (WhyNot, 400105) => "Given the shock, switching to the alternative regimen is better.",
        (WhyNot, 400108) => "Decision: the current treatment is better.",
        (WhyNot, 400110) => "Both plans have merit and more monitoring data would be needed to choose.",

        // both withheld diagnoses named: 1.0
        (SoWhat, 321071) => {
            "The levetiracetam and later phenytoin suggest status epilepticus, and the potassium \
             replacement points to hypokalemia."
        }
        // one of two: 0.5
        (SoWhat, 400102) => "Heparin after diuresis suggests atrial fibrillation in a failing heart.",
        // none: 0.0
        (SoWhat, 400113) => "Hemodialysis followed by vasopressors suggests a risk of sepsis and fluid overload.",
        // one of two: 0.5
        (SoWhat, 400112) => "Potassium replacement implies hypokalemia.",
        // three of four: 0.75
        (SoWhat, 761802) => {
            "Sustained mechanical ventilation indicates acute respiratory failure; the falling \
             saturation and tachycardia fit sepsis with an acute renal failure picture."
        }

        // 2 of 4 considerations addressed: 0.5
        (HowAbout, 350900) => {
            "Key considerations:\n\
             1. Perform endoscopy early to localize the source.\n\
             2. Start a pantoprazole infusion.\n\
             3. Monitor hemoglobin closely.\n\
             4. Avoid colonoscopy preparation."
        }
        // 2 of 2: 1.0
        (HowAbout, 350901) => {
            "Key considerations:\n\
             1. Arrange colonoscopy after bowel preparation.\n\
             2. Gastrointestinal consult before any endoscopy."
        }
        // no enumerated considerations: 0.0, undetermined
        (HowAbout, 350902) => "The upper source changes the approach, so the lower GI work-up should be reconsidered.",
        (HowAbout, 350903) => REFUSAL,
        // 2 of 3: 0.6667
        (HowAbout, 350904) => {
            "Key considerations:\n\
             1. Transfuse packed red cells to a hemoglobin target.\n\
             2. Schedule colonoscopy.\n\
             3. Review fluid balance daily."
        }

        (DischargePrediction, 761802) => "status: Alive.",
        (DischargePrediction, 343448) => "status: Expired.",
        (DischargePrediction, 400101) => {
            "The ketoacidosis resolved, so the patient is likely to survive. status: Alive."
        }
        (DischargePrediction, 400104) => "status: Expired.",
        (DischargePrediction, 400105) => REFUSAL,
        _ => return None,
    })
}

fn main() -> Result<(), Box<dyn Error>> {
    let config_path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic/experiment.toml"));
    let cfg = ExperimentConfig::load(&config_path)?;
    cfg.validate()?;
    let prepared = prepare(&cfg)?;
    let planned = plan_trials(&cfg, &prepared);

    let store_path = cfg.resolve(cfg.replay_store.as_ref().ok_or("config has no replay_store")?);
    if store_path.exists() {
        std::fs::remove_file(&store_path)?;
    }
    let store = ReplayStore::open(&store_path)?;
    let epoch = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut n = 0;
    for backend in &cfg.backends {
        for trial in &planned {
            let (bundle, _) = trial.built.as_ref().map_err(|e| format!("{} {}: {e}", trial.scenario, trial.stay_id))?;
            let text = response(trial.scenario, trial.stay_id.get())
                .ok_or_else(|| format!("no designed response for {} {}", trial.scenario, trial.stay_id))?;
            store.append(&Transcript {
                request_digest: request_digest(
                    &backend.model_name,
                    &bundle.messages,
                    backend.temperature,
                    backend.max_tokens,
                ),
                model_name: backend.model_name.clone(),
                temperature: backend.temperature,
                max_tokens: backend.max_tokens,
                messages: bundle.messages.clone(),
                response_text: text.to_string(),
                backend: "fixture".into(),
                timestamp: epoch + Duration::seconds(n),
                refusal: detect_refusal(text, &prepared.refusal),
            })?;
            n += 1;
        }
    }
    println!("wrote {n} transcripts to {}", store_path.display());
    Ok(())
}
