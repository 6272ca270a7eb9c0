//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the console; exits non-zero on any FAIL.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use contrast_eval::cohort::{find_alternative_peer, MatchCriteria};
use contrast_eval::finetune::{build_sample, parse_sample, render_dataset, serialize_sample};
use contrast_eval::ingest::{Outcome, PatientRecord, StayId, VitalSample};
use contrast_eval::runner::reference::{HOW_ABOUT_ALTERNATE_FIGURE, REFERENCE_FIGURES};
use contrast_eval::runner::{read_artifact, AggregateBlock};
use contrast_eval::scenarios::{item_visible_in, GroundTruth, PromptBundle, Scenario, ScenarioBuilder};
use contrast_eval::scoring::{
    classification_metrics, normalize_item, plan_similarity, PredictedOutcome, TreatmentItem,
};
use contrast_eval::timeline::{aggregate_vitals, TimeWindow};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Verdict = Result<String, String>;

fn check(results: &mut Vec<bool>, name: &str, f: impl FnOnce() -> Verdict) {
    let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
    match &r {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(why) => println!("FAIL {name}: {why}"),
    }
    results.push(r.is_ok());
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let mut results = Vec::new();
    check(&mut results, "reference-figures", reference_figures);
    check(&mut results, "scorer-oracle-equivalence", scorer_oracle_equivalence);
    check(&mut results, "scorer-algebraic-properties", scorer_algebraic_properties);
    check(&mut results, "vitals-oracle", vitals_oracle);
    check(&mut results, "metrics-correctness", metrics_correctness);
    check(&mut results, "hermetic-end-to-end", hermetic_end_to_end);
    check(&mut results, "ground-truth-non-leakage", ground_truth_non_leakage);
    check(&mut results, "fine-tune-export", fine_tune_export);
    check(&mut results, "narrative-golden", narrative_golden);
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------

fn reference_figures() -> Verdict {
    let expected: &[(&str, Scenario, &str, f64)] = &[
        ("gpt-4", Scenario::WhatIf, "mean_similarity", 0.8852),
        ("gpt-3.5-turbo", Scenario::WhatIf, "mean_similarity", 0.389),
        ("llama-2-7b-chat", Scenario::WhatIf, "mean_similarity", 0.559),
        ("gpt-4", Scenario::WhyNot, "positive_rate", 0.7),
        ("gpt-4", Scenario::SoWhat, "mean_similarity", 0.556),
        ("gpt-4", Scenario::HowAbout, "mean_similarity", 0.675),
        ("gpt-4", Scenario::DischargePrediction, "accuracy", 0.7),
        ("gpt-3.5-turbo", Scenario::DischargePrediction, "recall@alive", 1.0),
        ("llama-2-7b-chat", Scenario::DischargePrediction, "recall@expired", 0.2),
    ];
    for (m, s, metric, v) in expected {
        let hit = REFERENCE_FIGURES.iter().find(|f| f.model == *m && f.scenario == *s && f.metric == *metric);
        let got = hit.map(|f| f.value);
        ensure(got == Some(*v), || format!("{m} {s} {metric}: expected {v}, found {got:?}"))?;
    }
    ensure(HOW_ABOUT_ALTERNATE_FIGURE == 0.665, || "alternate how-about figure".into())?;
    ensure(REFERENCE_FIGURES.len() == 26, || format!("{} figures", REFERENCE_FIGURES.len()))?;
    Ok(format!(
        "{} figures encoded as labelled constants; not reproducible offline, property suites substitute",
        REFERENCE_FIGURES.len()
    ))
}

// ---------------------------------------------------------------------------
// Plan similarity

const VOCAB: &[&str] = &[
    "pulmonary|ventilation and oxygenation|mechanical ventilation",
    "pulmonary|ventilation and oxygenation|oxygen therapy",
    "pulmonary|ventilation and oxygenation|prone position",
    "pulmonary|medications|bronchodilator",
    "cardiovascular|shock|vasopressors|norepinephrine",
    "cardiovascular|shock|vasopressors|vasopressin",
    "cardiovascular|shock|fluid resuscitation",
    "infectious diseases|medications|therapeutic antibacterials",
    "renal|dialysis|hemodialysis",
    "aspirin",
    "heparin",
];

/// Items sharing no full path and no first-two-segment parent with `VOCAB`.
const DISJOINT_VOCAB: &[&str] = &[
    "gastrointestinal|medications|pantoprazole",
    "gastrointestinal|endoscopy|colonoscopy",
    "neurologic|seizure therapy|levetiracetam",
    "endocrine|glucose metabolism|insulin",
    "octreotide",
];

fn items(vocab: &[&str], idx: &[usize]) -> Vec<TreatmentItem> {
    idx.iter().map(|&i| normalize_item(vocab[i]).unwrap()).collect()
}

fn pair_weight(p: &TreatmentItem, t: &TreatmentItem) -> f64 {
    let (a, b) = (p.segments(), t.segments());
    if a == b {
        1.0
    } else if a.len() >= 2 && b.len() >= 2 && a[..2] == b[..2] {
        0.5
    } else {
        0.0
    }
}

/// Best total weight over every injective matching of `pred` into `truth`.
fn best_matching(pred: &[TreatmentItem], truth: &[TreatmentItem], used: &mut Vec<bool>) -> f64 {
    let Some((first, rest)) = pred.split_first() else { return 0.0 };
    let mut best = best_matching(rest, truth, used);
    for j in 0..truth.len() {
        if !used[j] {
            let w = pair_weight(first, &truth[j]);
            if w > 0.0 {
                used[j] = true;
                best = best.max(w + best_matching(rest, truth, used));
                used[j] = false;
            }
        }
    }
    best
}

fn oracle_similarity(pred: &[TreatmentItem], truth: &[TreatmentItem]) -> f64 {
    if pred.is_empty() && truth.is_empty() {
        return 1.0;
    }
    best_matching(pred, truth, &mut vec![false; truth.len()]) / pred.len().max(truth.len()) as f64
}

fn scorer_oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ac1e);
    let start = Instant::now();
    let mut mismatches = 0;
    let mut nontrivial = 0;
    for _ in 0..1000 {
        let np = rng.gen_range(0..=6);
        let nt = rng.gen_range(0..=6);
        let p: Vec<usize> = (0..np).map(|_| rng.gen_range(0..VOCAB.len())).collect();
        let t: Vec<usize> = (0..nt).map(|_| rng.gen_range(0..VOCAB.len())).collect();
        let (p, t) = (items(VOCAB, &p), items(VOCAB, &t));
        let greedy = plan_similarity(&p, &t).score;
        let optimum = oracle_similarity(&p, &t);
        if greedy != optimum {
            mismatches += 1;
        }
        if optimum > 0.0 && optimum < 1.0 {
            nontrivial += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(mismatches == 0, || format!("{mismatches} of 1000 pairs differ from the exhaustive optimum"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}, limit 10s"))?;
    Ok(format!("1000 pairs (<=6 items, {nontrivial} partial), 0 mismatches, {elapsed:.2?} (limit 10s)"))
}

fn scorer_algebraic_properties() -> Verdict {
    let config = Config { cases: 10_000, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let strategy = (
        prop::collection::vec(0..VOCAB.len(), 0..=6),
        prop::collection::vec(0..VOCAB.len(), 0..=6),
        prop::collection::vec(0..DISJOINT_VOCAB.len(), 1..=6),
        any::<u64>(),
    );
    let cases = std::cell::Cell::new(0u32);
    let result = runner.run(&strategy, |(xi, yi, di, seed)| {
        cases.set(cases.get() + 1);
        let (x, y, d) = (items(VOCAB, &xi), items(VOCAB, &yi), items(DISJOINT_VOCAB, &di));
        let s = plan_similarity(&x, &y).score;
        prop_assert!((0.0..=1.0).contains(&s), "bounds: {s}");
        prop_assert_eq!(s, plan_similarity(&y, &x).score, "symmetry");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut xs, mut ys) = (x.clone(), y.clone());
        xs.shuffle(&mut rng);
        ys.shuffle(&mut rng);
        prop_assert_eq!(s, plan_similarity(&xs, &ys).score, "permutation invariance");
        if !x.is_empty() {
            prop_assert_eq!(plan_similarity(&x, &x).score, 1.0, "identity");
            prop_assert_eq!(plan_similarity(&x, &d).score, 0.0, "disjoint");
        }
        Ok(())
    });
    match result {
        Ok(()) => Ok(format!(
            "{} generated cases; identity, disjointness, symmetry, permutation invariance, bounds: 0 violations",
            cases.get()
        )),
        Err(e) => Err(format!("violation: {e}")),
    }
}

// ---------------------------------------------------------------------------
// Vitals

type Pull = fn(&VitalSample) -> Option<f64>;

struct OracleStats {
    count: usize,
    mean: f64,
    median: f64,
    max: f64,
    min: f64,
}

fn oracle_stats(mut v: Vec<f64>) -> Option<OracleStats> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let mut sum = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in &v {
        sum += x;
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
    Some(OracleStats { count: n, mean: sum / n as f64, median, max: hi, min: lo })
}

fn vitals_oracle() -> Verdict {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(0x517a1);
    let sid = StayId::new(1).unwrap();
    let (mut windows, mut empty, mut single, mut even) = (0, 0, 0, 0);
    let mut violations = Vec::new();
    for round in 0..2000 {
        let n = rng.gen_range(0..40);
        let samples: Vec<VitalSample> = (0..n)
            .map(|_| VitalSample {
                stay_id: sid,
                offset_min: rng.gen_range(-60..600),
                sao2: rng.gen_bool(0.9).then(|| rng.gen_range(80.0..100.0)),
                heartrate: rng.gen_bool(0.9).then(|| rng.gen_range(40.0..180.0)),
                respiration: rng.gen_bool(0.8).then(|| f64::from(rng.gen_range(8..40))),
            })
            .collect();
        // windows around a chosen sample give single-sample and tiny cases
        let start = match (round % 3, samples.choose(&mut rng)) {
            (0, Some(s)) => s.offset_min,
            _ => rng.gen_range(-80..600),
        };
        let len = if round % 3 == 0 { rng.gen_range(1..3) } else { rng.gen_range(1..400) };
        let w = TimeWindow::new(start, start + len).unwrap();
        windows += 1;
        let got = aggregate_vitals(&samples, w);
        let inside: Vec<&VitalSample> =
            samples.iter().filter(|s| s.offset_min >= start && s.offset_min < start + len).collect();
        if got.sample_count != inside.len() {
            violations.push(format!("window {start}+{len}: sample_count {} vs {}", got.sample_count, inside.len()));
        }
        let pulls: [(&str, Pull); 3] =
            [("sao2", |s| s.sao2), ("heartrate", |s| s.heartrate), ("respiration", |s| s.respiration)];
        for ((name, pull), (_, stats)) in pulls.iter().zip(got.signals()) {
            let values: Vec<f64> = inside.iter().filter_map(|s| pull(s)).collect();
            match values.len() {
                0 => empty += 1,
                1 => single += 1,
                k if k % 2 == 0 => even += 1,
                _ => {}
            }
            match oracle_stats(values) {
                None => {
                    if stats.count != 0 || stats.mean.is_some() || stats.median.is_some() {
                        violations.push(format!("{name}: stats present for an empty window"));
                    }
                }
                Some(o) => {
                    let close = |a: Option<f64>, b: f64| a.is_some_and(|a| (a - b).abs() <= TOL);
                    if stats.count != o.count
                        || !close(stats.mean, o.mean)
                        || !close(stats.median, o.median)
                        || !close(stats.max, o.max)
                        || !close(stats.min, o.min)
                    {
                        violations.push(format!("{name} window {start}+{len}"));
                    }
                }
            }
        }
    }
    ensure(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))?;
    ensure(empty > 0 && single > 0 && even > 0, || "edge cases not exercised".into())?;
    Ok(format!(
        "{windows} windows, tolerance 1e-9; {empty} empty, {single} single-sample, {even} even-count signals; 0 violations"
    ))
}

// ---------------------------------------------------------------------------

fn metrics_correctness() -> Verdict {
    use Outcome::{Alive, Expired};
    use PredictedOutcome as P;
    // all-Alive predictor on a 5/5 set
    let mut pairs = vec![(P::Alive, Alive); 5];
    pairs.extend(vec![(P::Alive, Expired); 5]);
    let m = classification_metrics(&pairs).map_err(|e| e.to_string())?;
    let (a, e) = (m.label(Alive), m.label(Expired));
    ensure(a.precision == 0.5 && a.recall == 1.0, || format!("alive p={} r={}", a.precision, a.recall))?;
    ensure(e.recall == 0.0 && e.recall_defined, || format!("expired r={}", e.recall))?;
    ensure(!e.precision_defined, || "precision@expired should be undefined".into())?;
    ensure(m.accuracy == 0.5, || format!("accuracy {}", m.accuracy))?;

    // 7 of 10 correct
    let mut pairs = vec![(P::Alive, Alive); 4];
    pairs.extend(vec![(P::Expired, Expired); 3]);
    pairs.extend([(P::Expired, Alive), (P::Alive, Expired), (P::Unknown, Expired)]);
    let m = classification_metrics(&pairs).map_err(|e| e.to_string())?;
    ensure(m.accuracy == 0.7, || format!("accuracy {}", m.accuracy))?;
    // hand-computed: alive tp 4 fp 1 fn 1; expired tp 3 fp 1 fn 2
    let (a, e) = (m.label(Alive), m.label(Expired));
    ensure((a.true_positive, a.false_positive, a.false_negative) == (4, 1, 1), || format!("alive {a:?}"))?;
    ensure((e.true_positive, e.false_positive, e.false_negative) == (3, 1, 2), || format!("expired {e:?}"))?;
    ensure(a.precision == 0.8 && a.recall == 0.8, || format!("alive {a:?}"))?;
    ensure(e.precision == 0.75 && e.recall == 0.6, || format!("expired {e:?}"))?;
    ensure(m.unknown_count == 1, || format!("unknown {}", m.unknown_count))?;
    Ok("all-Alive 5/5: p@A 0.5, r@A 1.0, r@E 0.0; 7-of-10: accuracy 0.7 with exact confusion counts".into())
}

// ---------------------------------------------------------------------------

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn block(blocks: &[AggregateBlock], s: Scenario) -> Result<&AggregateBlock, String> {
    blocks.iter().find(|b| b.scenario == s).ok_or_else(|| format!("no aggregate for {s}"))
}

fn hermetic_end_to_end() -> Verdict {
    const TOL: f64 = 1e-12;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = common::fixture_config();
    let mut slowest = Duration::ZERO;
    for run in ["a", "b"] {
        let start = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_contrast-eval"))
            .args(["run", "--mode", "replay", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(tmp.path().join(run))
            .output()
            .map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed());
        ensure(out.status.success(), || format!("run {run} failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    }
    ensure(slowest < Duration::from_secs(60), || format!("took {slowest:?}"))?;
    let (a, b) = (read_dir_bytes(&tmp.path().join("a")), read_dir_bytes(&tmp.path().join("b")));
    ensure(a.len() == 6, || format!("{} artifact files", a.len()))?;
    ensure(a == b, || "artifacts differ between runs".into())?;

    let art = read_artifact(&tmp.path().join("a")).map_err(|e| e.to_string())?;
    ensure(art.summary.error_count == 0, || format!("{} trial errors", art.summary.error_count))?;
    let blocks = &art.summary.aggregates;
    for s in Scenario::ALL {
        let b = block(blocks, s)?;
        ensure(b.trials == 5, || format!("{s}: {} trials", b.trials))?;
    }
    // hand-computed from the designed responses
    let near = |v: Option<f64>, want: f64| v.is_some_and(|v| (v - want).abs() <= TOL);
    let w = &block(blocks, Scenario::WhatIf)?.values;
    ensure(near(w.mean_similarity, (1.0 + 0.75 + 0.5 + 0.0) / 4.0) && w.refusal_count == 1, || {
        format!("what-if {w:?}")
    })?;
    let w = &block(blocks, Scenario::WhyNot)?.values;
    ensure(near(w.positive_rate, 3.0 / 5.0) && w.undetermined_count == 1, || format!("why-not {w:?}"))?;
    let w = &block(blocks, Scenario::SoWhat)?.values;
    ensure(near(w.mean_similarity, (1.0 + 0.5 + 0.0 + 0.5 + 0.75) / 5.0), || format!("so-what {w:?}"))?;
    let w = &block(blocks, Scenario::HowAbout)?.values;
    ensure(
        near(w.mean_similarity, (0.5 + 1.0 + 0.0 + 2.0 / 3.0) / 4.0)
            && w.refusal_count == 1
            && w.undetermined_count == 1,
        || format!("how-about {w:?}"),
    )?;
    let m = block(blocks, Scenario::DischargePrediction)?.values.metrics.clone().ok_or("no metrics")?;
    let (al, ex) = (m.label(Outcome::Alive), m.label(Outcome::Expired));
    ensure(
        (m.accuracy - 0.6).abs() <= TOL
            && (al.precision - 1.0).abs() <= TOL
            && (al.recall - 2.0 / 3.0).abs() <= TOL
            && (ex.precision - 0.5).abs() <= TOL
            && (ex.recall - 0.5).abs() <= TOL,
        || format!("prediction {m:?}"),
    )?;
    Ok(format!(
        "5 scenarios x 5 trials replayed, slowest run {slowest:.2?} (limit 60s), 6 artifact files byte-identical, golden aggregates match"
    ))
}

// ---------------------------------------------------------------------------

fn leak(bundle: &PromptBundle, truth: &GroundTruth) -> Option<String> {
    let text = bundle.user_text();
    if !bundle.is_well_formed() {
        return Some("malformed bundle".into());
    }
    match truth {
        GroundTruth::TreatmentPlan { items } | GroundTruth::TargetPlan { items } => {
            items.iter().find(|i| item_visible_in(i, text)).map(|i| format!("item {i}"))
        }
        GroundTruth::DiagnosisSet { paths } => paths.iter().find(|p| text.contains(p.as_str())).cloned(),
        GroundTruth::OutcomeLabel { outcome } => {
            let answer = format!("status: {outcome}");
            text.to_lowercase().contains(&answer.to_lowercase()).then_some(answer)
        }
        GroundTruth::AlternativePreferred { .. } => None,
    }
}

fn ground_truth_non_leakage() -> Verdict {
    let builder = ScenarioBuilder::default();
    let fixture = common::fixture_records();
    let synthetic = common::balanced_pool(20, 99);
    let mut checked = 0usize;
    let mut failures = Vec::new();
    for corpus in [&fixture, &synthetic] {
        let pool: Vec<&PatientRecord> = corpus.iter().collect();
        let mut note = |r: &PatientRecord, built: Result<(PromptBundle, GroundTruth), _>| {
            if let Ok((b, gt)) = built {
                checked += 1;
                if let Some(what) = leak(&b, &gt) {
                    failures.push(format!("{} stay {}: {what}", b.scenario, r.stay_id()));
                }
            }
        };
        for r in corpus {
            let offsets: BTreeSet<i64> = r.treatments.iter().map(|t| t.offset_min).collect();
            note(r, builder.build_what_if(r, None));
            for &o in &offsets {
                note(r, builder.build_what_if(r, Some(o)));
                note(r, builder.build_so_what(r, TimeWindow::new(o, o + 1440).unwrap()));
            }
            note(r, builder.build_why_not(r, None));
            note(r, builder.build_why_not(r, find_alternative_peer(r, &pool, &MatchCriteria::default())));
            note(r, builder.build_discharge_prediction(r));
            for t in corpus {
                note(r, builder.build_how_about(r, t));
            }
        }
    }
    ensure(failures.is_empty(), || format!("{} leaks, first: {}", failures.len(), failures[0]))?;
    ensure(checked > 1000, || format!("only {checked} bundles built"))?;
    Ok(format!("{checked} bundles over the fixture corpus and a 40-stay synthetic pool; 0 leaks"))
}

// ---------------------------------------------------------------------------

fn fine_tune_export() -> Verdict {
    let builder = ScenarioBuilder::default();
    let pool = common::balanced_pool(60, 2024);
    let refs: Vec<&PatientRecord> = pool.iter().collect();
    // declared test set: five stays of each class
    let test_set: BTreeSet<StayId> =
        pool.iter().filter(|r| matches!(r.stay_id().get() % 1_000_000, 1..=5)).map(PatientRecord::stay_id).collect();
    ensure(test_set.len() == 10, || "test set size".into())?;

    let (text, manifest) = render_dataset(&builder, &refs, 50, 17, &test_set).map_err(|e| e.to_string())?;
    let (again, _) = render_dataset(&builder, &refs, 50, 17, &test_set).map_err(|e| e.to_string())?;
    ensure(text == again, || "export not byte-stable under a fixed seed".into())?;
    ensure(manifest.sha256 == hex::encode(Sha256::digest(text.as_bytes())), || "manifest digest".into())?;

    let lines: Vec<&str> = text.lines().collect();
    ensure(lines.len() == 100, || format!("{} lines", lines.len()))?;
    let (mut alive, mut expired) = (0, 0);
    let mut ids = BTreeSet::new();
    for (i, line) in lines.iter().enumerate() {
        let sample = parse_sample(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        ensure(serialize_sample(&sample) == *line, || format!("line {} does not round-trip", i + 1))?;
        match sample.outcome() {
            Some(Outcome::Alive) => alive += 1,
            Some(Outcome::Expired) => expired += 1,
            None => return Err(format!("line {} has no outcome", i + 1)),
        }
        ensure(ids.insert(sample.stay_id), || format!("duplicate stay {}", sample.stay_id))?;
    }
    ensure((alive, expired) == (50, 50), || format!("{alive} alive, {expired} expired"))?;
    ensure(ids.is_disjoint(&test_set), || "export overlaps the declared test set".into())?;
    let manifest_ids: BTreeSet<StayId> = manifest.training_stay_ids.iter().copied().collect();
    ensure(manifest_ids == ids, || "manifest stay ids differ from the exported lines".into())?;
    Ok("100 schema-valid lines, 50/50, round-trip exact, byte-stable, disjoint from a 10-stay test set".into())
}

// ---------------------------------------------------------------------------

fn narrative_golden() -> Verdict {
    let record = common::fixture_record(761802);
    let builder = ScenarioBuilder::default();
    let body = builder.prediction_body(&record).map_err(|e| e.to_string())?;
    let tokens = [
        "(offset: 16)",
        "(Offset: 227)",
        "sao2: 98.62162162162163(mean) 99.0(median) 100.0(max) 96.0(min)",
        "heartrate: 103.29807692307692(mean) 104.0(median) 132.0(max) 80.0(min)",
    ];
    for t in tokens {
        ensure(body.contains(t), || format!("missing `{t}`"))?;
    }
    let sample = build_sample(&builder, &record).map_err(|e| e.to_string())?;
    let answer = &sample.messages.last().ok_or("no messages")?.content;
    ensure(answer == "status: Alive.", || format!("answer `{answer}`"))?;
    Ok(format!("{} layout tokens and `status: Alive.` reproduced verbatim for stay 761802", tokens.len()))
}
