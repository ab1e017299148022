mod common;

use std::collections::BTreeMap;

use common::scenarios::*;
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsrule::data::{DatasetMode, LabelSequence, MetricSeries};
use tsrule::fusion::RuleSetKind;
use tsrule::llm::{AgentRole, PromptLibrary};
use tsrule::preprocess::PreprocessConfig;
use tsrule::rule::registry::{list_rules, load_rule};
use tsrule::rule::{Dialect, RuleRuntime};
use tsrule::train::{
    calibrate_chunk_size, run_training, select_top_k, CandidateStatus, IterationRecord, RunLayout, RunSettings,
    Trainer, TrainingConfig, ValidationTarget,
};
use tsrule::Error;

#[test]
fn ladder_scores_match_derivation() {
    let set = ladder_set(ValidationTarget::RulesOnly);
    let runtime = RuleRuntime::native();
    for h in [0, 2, 12, 18, 19, 20, 99, 150] {
        let rule = tsrule::rule::RuleArtifact::new("x", Dialect::ThresholdDsl, above(f64::from(h)), tsrule::rule::Provenance::Fresh, 0, 1).unwrap();
        let f1 = set.score(&runtime, &rule).unwrap().unwrap().f1();
        assert!(close(f1, ladder_score(h)), "h={h}: {f1}");
    }
}

#[test]
fn selects_two_best_of_five() {
    // Scores 0.2, 0.5, 1.0, 0.1, 0.667.
    let (mock, gateway) = mock_gateway(script_from(heights(&[12, 18, 20, 2, 19]), vec![], vec![]));
    let out = train(&config(5, 2, 1), &gateway, &input(ValidationTarget::RulesOnly)).unwrap();
    gateway.finish().unwrap();
    assert_eq!(mock.calls(AgentRole::Detection), 5);
    let record = &out.records[0];
    assert_eq!(record.selected, ["t-rules-i01-c2", "t-rules-i01-c4"]);
    assert_eq!(out.best_rules.iter().map(|r| r.rule_id.as_str()).collect::<Vec<_>>(), record.selected);
    assert!(record.candidates.iter().all(|c| c.status == CandidateStatus::Accepted));
    let scores: Vec<f64> = record.candidates.iter().map(|c| c.validation.unwrap().primary_f1()).collect();
    for (s, h) in scores.iter().zip([12, 18, 20, 2, 19]) {
        assert!(close(*s, ladder_score(h)));
    }
}

proptest! {
    #[test]
    fn top_k_matches_rank_oracle(
        scores in prop::collection::vec(prop_oneof![Just(0.0), Just(0.5), Just(1.0), 0.0f64..1.0], 1..20),
        k in 1usize..8,
    ) {
        prop_assert_eq!(select_top_k(&scores, k), top_k_oracle(&scores, k));
    }
}

#[test]
fn regression_is_reverted() {
    let mut cfg = config(1, 1, 2);
    cfg.max_review_rounds = 2;
    let detection = heights(&[19, 12]);
    let review = heights(&[2, 5]);
    let (mock, gateway) = mock_gateway(script_from(detection, vec![], review));
    let out = train(&cfg, &gateway, &input(ValidationTarget::RulesOnly)).unwrap();
    gateway.finish().unwrap();
    assert_eq!(mock.calls(AgentRole::Review), 2);
    let c = &out.records[1].candidates[0];
    assert_eq!(c.status, CandidateStatus::Reverted);
    assert_eq!(c.final_rule_id.as_deref(), Some("t-rules-i01-c0"));
    let ids: Vec<&str> = c.versions.iter().map(|v| v.rule_id.as_str()).collect();
    assert_eq!(ids, ["t-rules-i02-c0", "t-rules-i02-c0-v1", "t-rules-i02-c0-v2"]);
    assert_eq!(out.records[1].best_rule_id.as_deref(), Some("t-rules-i01-c0"));
    // The detection prompt of iteration 2 carries the previous best source.
    let prompt = &out.records[1].transcripts[0].user_prompt;
    assert!(prompt.contains("value above 19"));
}

#[test]
fn review_that_catches_up_is_improved() {
    let mut cfg = config(1, 1, 2);
    cfg.max_review_rounds = 3;
    let (mock, gateway) = mock_gateway(script_from(heights(&[18, 12]), vec![], heights(&[15, 20])));
    let out = train(&cfg, &gateway, &input(ValidationTarget::RulesOnly)).unwrap();
    gateway.finish().unwrap();
    assert_eq!(mock.calls(AgentRole::Review), 2);
    let c = &out.records[1].candidates[0];
    assert_eq!(c.status, CandidateStatus::Improved);
    assert_eq!(c.final_rule_id.as_deref(), Some("t-rules-i02-c0-v2"));
    assert_eq!(out.records[1].best_rule_id.as_deref(), Some("t-rules-i02-c0-v2"));
    assert!(close(out.records[1].best_f1().unwrap(), 1.0));
    let review_prompt = &out.records[1].transcripts[1].user_prompt;
    assert!(review_prompt.contains("--- previous"));
    assert!(review_prompt.contains("ladder 25 13 0 1 0"), "{review_prompt}");
}

#[test]
fn first_iteration_with_baseline_keeps_best_seen() {
    let mut cfg = config(1, 1, 1);
    cfg.max_review_rounds = 2;
    let (_, gateway) = mock_gateway(script_from(heights(&[12]), vec![], heights(&[15, 14])));
    let out = train(&cfg, &gateway, &input(ValidationTarget::Fusion(RuleSetKind::Fn))).unwrap();
    gateway.finish().unwrap();
    let c = &out.records[0].candidates[0];
    assert_eq!(c.status, CandidateStatus::BestSeen);
    assert_eq!(c.final_rule_id.as_deref(), Some("t-rules-i01-c0-v1"));
    assert!(close(out.records[0].best_f1().unwrap(), ladder_score(15)));
    assert!(out.records[0].transcripts[1].user_prompt.contains("first iteration"));
}

#[test]
fn broken_candidate_is_repaired() {
    let detection = vec![reply(BROKEN_DSL)];
    let repair = vec!["no code here".to_string(), reply(BROKEN_DSL), reply(&above(20.0))];
    let (mock, gateway) = mock_gateway(script_from(detection, repair, vec![]));
    let out = train(&config(1, 1, 1), &gateway, &input(ValidationTarget::RulesOnly)).unwrap();
    gateway.finish().unwrap();
    assert_eq!(mock.calls(AgentRole::Repair), 3);
    let c = &out.records[0].candidates[0];
    assert_eq!(c.status, CandidateStatus::Accepted);
    assert_eq!(c.final_rule_id.as_deref(), Some("t-rules-i01-c0-r3"));
    assert!(out.records[0].transcripts[1].user_prompt.contains("threshold-dsl parse error"));
}

#[test]
fn unrepairable_candidate_is_dropped() {
    let detection = vec![reply(BROKEN_DSL), reply(&above(12.0))];
    let repair = vec![reply(BROKEN_DSL); 3];
    let (_, gateway) = mock_gateway(script_from(detection, repair, vec![]));
    let out = train(&config(2, 2, 1), &gateway, &input(ValidationTarget::RulesOnly)).unwrap();
    gateway.finish().unwrap();
    let record = &out.records[0];
    assert_eq!(record.candidates[0].status, CandidateStatus::RepairFailed);
    assert!(record.candidates[0].final_rule_id.is_none());
    assert_eq!(record.selected, ["t-rules-i01-c1"]);
}

#[test]
fn valid_candidate_costs_no_repair_calls() {
    let (mock, gateway) = mock_gateway(script_from(heights(&[20]), vec![], vec![]));
    train(&config(1, 1, 1), &gateway, &input(ValidationTarget::RulesOnly)).unwrap();
    gateway.finish().unwrap();
    assert_eq!(mock.calls(AgentRole::Repair), 0);
    assert_eq!(mock.calls(AgentRole::Review), 0);
}

#[test]
fn unextractable_and_failing_candidates() {
    let detection = vec!["I cannot help".to_string(), reply(&above(20.0))];
    let (_, gateway) = mock_gateway(script_from(detection, vec![], vec![]));
    let out = train(&config(2, 1, 1), &gateway, &input(ValidationTarget::RulesOnly)).unwrap();
    gateway.finish().unwrap();
    assert_eq!(out.records[0].candidates[0].status, CandidateStatus::Unextractable);
    assert!(out.records[0].candidates[0].versions.is_empty());
}

#[test]
fn underrun_aborts_with_completed_records() {
    let (_, gateway) = mock_gateway(script_from(heights(&[20]), vec![], vec![]));
    let err = train(&config(1, 1, 3), &gateway, &input(ValidationTarget::RulesOnly)).unwrap_err();
    assert_eq!(err.records.len(), 1);
    assert!(matches!(err.error, Error::MockUnderrun { role: AgentRole::Detection, index: 1 }));
}

#[test]
fn best_score_never_decreases_over_twenty_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut plan: Vec<Vec<u32>> = (0..20).map(|_| (0..3).map(|_| rng.random_range(2..=19)).collect()).collect();
    plan[0] = vec![10, 4, 6];
    plan[5] = vec![2, 3, 2];
    plan[12] = vec![20, 2, 2];
    let mut cfg = config(3, 1, 20);
    cfg.max_review_rounds = 1;
    let (reviews, trace) = simulate(&plan, 1);
    let detection = heights(&plan.concat());
    let (mock, gateway) = mock_gateway(script_from(detection, vec![], vec![reply(&above(0.0)); reviews]));
    let out = train(&cfg, &gateway, &input(ValidationTarget::RulesOnly)).unwrap();
    gateway.finish().unwrap();
    assert_eq!(mock.calls(AgentRole::Review), reviews);
    let bests: Vec<f64> = out.records.iter().map(|r| r.best_f1().unwrap()).collect();
    assert!(bests.windows(2).all(|w| w[1] >= w[0]), "{bests:?}");
    for (got, want) in bests.iter().zip(&trace) {
        assert!(close(*got, *want));
    }
    let reverted = out.records.iter().flat_map(|r| &r.candidates).filter(|c| c.status == CandidateStatus::Reverted).count();
    assert!(reverted >= 1);
    assert!(close(*bests.last().unwrap(), 1.0));
    for record in &out.records {
        assert!(record.gateway_calls() as u64 <= cfg.call_budget());
    }
}

#[test]
fn worst_case_iteration_meets_the_budget_exactly() {
    let cfg = config(1, 1, 2);
    let detection = vec![reply(&above(20.0)), reply(BROKEN_DSL)];
    let mut repair = Vec::new();
    let mut review = Vec::new();
    // Initial candidate plus three review versions, each fixed on the last repair round.
    for _ in 0..4 {
        repair.extend([reply(BROKEN_DSL), reply(BROKEN_DSL), reply(&above(0.0))]);
    }
    for _ in 0..3 {
        review.push(reply(BROKEN_DSL));
    }
    let (_, gateway) = mock_gateway(script_from(detection, repair, review));
    let out = train(&cfg, &gateway, &input(ValidationTarget::RulesOnly)).unwrap();
    gateway.finish().unwrap();
    assert_eq!(out.records[1].gateway_calls() as u64, cfg.call_budget());
    assert_eq!(cfg.call_budget(), 16);
    assert_eq!(out.records[1].candidates[0].status, CandidateStatus::Reverted);
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let cfg = TrainingConfig { n_candidates: 2, top_k: 2, max_iterations: 3, dialect: Dialect::ThresholdDsl, seed: 7, ..TrainingConfig::default() };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run_pipeline(a.path(), &cfg);
    let sb = run_pipeline(b.path(), &cfg);
    assert_eq!(sa, sb);
    let ta = tree(a.path());
    assert_eq!(ta, tree(b.path()));
    assert!(ta.keys().any(|k| k.ends_with("iter-03.json")));
    assert!(ta.keys().any(|k| k.ends_with("rule.src")));
    assert!(ta.contains_key("out/summary.json"));
    assert!(ta.contains_key("out/transcripts.jsonl"));
}

#[test]
fn registry_holds_only_valid_rules() {
    let cfg = TrainingConfig { n_candidates: 2, top_k: 2, max_iterations: 3, dialect: Dialect::ThresholdDsl, ..TrainingConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let summary = run_pipeline(dir.path(), &cfg);
    assert_eq!(summary.units.len(), 1);
    assert_eq!(summary.units[0].unit.name, "group-all");
    assert_eq!(summary.units[0].unit.mode, DatasetMode::OneForAll);
    let registry = dir.path().join("registry");
    let ids = list_rules(&registry).unwrap();
    assert!(!ids.is_empty());
    let runtime = RuleRuntime::native();
    for id in &ids {
        let rule = load_rule(&registry, id).unwrap();
        assert!(runtime.syntax_check(&rule).unwrap().is_ok(), "{id}");
    }
    // Candidate 1 of iteration 2 was broken beyond repair.
    let records = tree(&dir.path().join("out/records"));
    let iter2: IterationRecord = serde_json::from_slice(records.iter().find(|(k, _)| k.ends_with("iter-02.json")).unwrap().1).unwrap();
    assert_eq!(iter2.candidates[1].status, CandidateStatus::RepairFailed);
    assert!(!ids.iter().any(|id| id.starts_with("group-all-rules-i02-c1")));
}

fn calibration_series() -> MetricSeries {
    let (values, labels) = ladder_values();
    MetricSeries::from_values("ladder", &values, Some(LabelSequence::from_ints(&labels).unwrap())).unwrap()
}

fn calibrate(detection: Vec<String>) -> tsrule::Result<tsrule::train::CalibrationResult> {
    let cfg = config(1, 1, 1);
    let (_, gateway) = mock_gateway(script_from(detection, vec![], vec![]));
    let runtime = RuleRuntime::native();
    let prompts = PromptLibrary::embedded();
    let render = PreprocessConfig::default();
    let trainer = Trainer { config: &cfg, gateway: &gateway, runtime: &runtime, prompts: &prompts, render: &render };
    let result = calibrate_chunk_size(&calibration_series(), &[20, 10, 40], 3, &trainer);
    if result.is_ok() {
        gateway.finish().unwrap();
    }
    result
}

#[test]
fn calibration_picks_the_best_size() {
    let result = calibrate(heights(&[2, 5, 8, 12, 19, 4, 18, 3, 3])).unwrap();
    assert_eq!(result.chosen, 20);
    assert_eq!(result.scores.iter().map(|s| s.chunk_size).collect::<Vec<_>>(), [10, 20, 40]);
    let best: Vec<f64> = result.scores.iter().map(|s| s.best_f1.unwrap()).collect();
    assert!(best[1] > best[0] && best[1] > best[2], "{best:?}");
}

#[test]
fn calibration_ties_go_to_the_smaller_size() {
    let result = calibrate(heights(&[20, 2, 2, 2, 20, 2, 2, 2, 2])).unwrap();
    assert_eq!(result.chosen, 10);
    let mut detection = vec![reply(BROKEN_DSL), reply(BROKEN_DSL), "nothing".to_string()];
    detection.extend(heights(&[2, 2, 2, 2, 2, 2]));
    let result = calibrate(detection).unwrap();
    assert_eq!(result.scores[0].best_f1, None);
    assert_eq!(result.chosen, 20);
}

#[test]
fn calibration_fails_when_nothing_works() {
    let err = calibrate(vec![reply(BROKEN_DSL); 9]).unwrap_err();
    assert!(matches!(err, Error::Calibration(_)));
}

#[test]
fn fusion_run_trains_both_rule_sets() {
    let series = pipeline_series();
    let mut base_bits = series.labels().unwrap().to_ints();
    base_bits[30] = 0;
    base_bits[60] = 1;
    let base = tsrule::fusion::BaseDetectorLabels::new("cpu.util", LabelSequence::from_ints(&base_bits).unwrap(), "threshold-40");
    let bases = BTreeMap::from([("cpu.util".to_string(), base)]);
    let cfg = TrainingConfig { n_candidates: 1, top_k: 1, max_iterations: 2, dialect: Dialect::ThresholdDsl, ..TrainingConfig::default() };
    let (_, gateway) = mock_gateway(script_from(heights(&[50; 4]), vec![], vec![]));
    let runtime = RuleRuntime::native();
    let prompts = PromptLibrary::embedded();
    let render = PreprocessConfig { chunk_size: 20, ..PreprocessConfig::default() };
    let trainer = Trainer { config: &cfg, gateway: &gateway, runtime: &runtime, prompts: &prompts, render: &render };
    let dir = tempfile::tempdir().unwrap();
    let layout = RunLayout::new(dir.path().join("out"), dir.path().join("registry"));
    let summary = run_training(&[series], &bases, &RunSettings::default(), &trainer, &layout).unwrap();
    gateway.finish().unwrap();
    let unit = &summary.units[0];
    let kinds: Vec<&str> = unit.rule_sets.iter().map(|r| r.kind.as_str()).collect();
    assert_eq!(kinds, ["fn", "fp"]);
    assert!(unit.rule_sets.iter().all(|r| r.rules.len() == 1 && r.iterations == 2));
    let bundle = tsrule::fusion::load_bundle(&layout.registry, &unit.bundle_id).unwrap();
    assert_eq!(bundle.base_source.as_deref(), Some("threshold-40"));
    assert_eq!((bundle.fn_rules.len(), bundle.fp_rules.len()), (1, 1));
    let test = &unit.test[0];
    assert!(test.bundle.primary_f1() >= test.base.unwrap().primary_f1());
}
