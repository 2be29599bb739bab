use std::collections::HashSet;

use negmine_core::eval::{build_miner, run_experiment, sample_negatives, ExperimentConfig, SamplerId};
use negmine_core::kb::{
    build_true_negative_split, parse_tsv, write_tsv, ColumnOrder, KnowledgeBase, TrueNegativeOptions,
};
use negmine_core::samplers::AntonymLexicon;
use negmine_core::scorer::TrainConfig;
use negmine_core::synthetic::{planted_rule_kb, PlantedRuleConfig};

fn small_cfg() -> PlantedRuleConfig {
    PlantedRuleConfig {
        relations: 3,
        items_per_cluster: 6,
        positives_per_relation: 60,
        negatives_per_relation: 12,
        ..PlantedRuleConfig::default()
    }
}

fn quick(samplers: Vec<SamplerId>) -> ExperimentConfig {
    let d = ExperimentConfig::default();
    ExperimentConfig {
        samplers,
        trials: 2,
        hidden: 8,
        keep_fraction: 1.0,
        train: TrainConfig { epochs: 5, ..d.train.clone() },
        miner: TrainConfig { epochs: 30, ..d.miner.clone() },
        ..d
    }
}

fn kb_through_tsv() -> KnowledgeBase {
    let data = planted_rule_kb(&small_cfg()).unwrap();
    let mut buf = Vec::new();
    write_tsv(&mut buf, &data.triples, false).unwrap();
    let loaded = parse_tsv(&buf[..], false, ColumnOrder::RelationHeadTail).unwrap();
    assert_eq!(loaded.triples, data.triples);
    KnowledgeBase::from_splits(build_true_negative_split(&loaded.triples, &TrueNegativeOptions::default()).unwrap())
}

/// Pairs every other item token with its successor.
fn lexicon() -> AntonymLexicon {
    let mut text = String::new();
    for i in (0..240).step_by(2) {
        text.push_str(&format!("w{i}\tnoun\tw{}\n", i + 1));
    }
    AntonymLexicon::from_reader(text.as_bytes()).unwrap()
}

#[test]
fn splits_keep_negatives_out_of_training() {
    let kb = kb_through_tsv();
    let splits = kb.splits();
    assert!(splits.train.iter().all(|t| t.label));
    for part in [&splits.validation, &splits.test] {
        let pos = part.iter().filter(|t| t.label).count();
        assert_eq!(pos, part.len() - pos, "evaluation splits are balanced");
        assert!(part.iter().all(|t| !t.triple.relation.name().starts_with("Not")));
    }
    let train: HashSet<_> = splits.train.iter().map(|t| &t.triple).collect();
    assert!(splits.test.iter().all(|t| !train.contains(&t.triple)));
}

#[test]
fn every_sampler_runs_end_to_end() {
    let kb = kb_through_tsv();
    let lex = lexicon();
    let cfg = quick(SamplerId::ALL.to_vec());
    let report = run_experiment(&kb, &cfg, Some(&lex)).unwrap();
    assert_eq!(report.results.len(), SamplerId::ALL.len());
    for r in &report.results {
        assert_eq!(r.trials.len(), 2);
        assert!(r.trials.iter().all(|m| (0.0..=1.0).contains(&m.accuracy)));
        if r.sampler.is_mined() {
            assert!(r.negatives.iter().all(|&n| n == kb.len()), "{}", r.sampler);
        }
    }
    let mut tsv = Vec::new();
    report.write_tsv(&mut tsv).unwrap();
    let text = String::from_utf8(tsv).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * SamplerId::ALL.len());
    assert!(text.lines().skip(1).all(|l| l.split('\t').count() == 6));
    let summary = report.render_summary();
    assert!(summary.starts_with("baseline: uniform\n"));
}

#[test]
fn sampled_negatives_are_out_of_kb_and_reproducible() {
    let kb = kb_through_tsv();
    let lex = lexicon();
    let cfg = quick(vec![SamplerId::MinedTheta]);
    let miner = build_miner(&kb, &cfg).unwrap();
    for sampler in SamplerId::ALL {
        let draw = |trial| sample_negatives(&kb, &cfg, Some(&lex), Some(&miner), sampler, trial).unwrap();
        let first = draw(0);
        assert!(!first.is_empty(), "{sampler}");
        assert!(first.iter().all(|t| !kb.contains(t)), "{sampler} leaked a positive");
        assert_eq!(first, draw(0), "{sampler} is not reproducible");
    }
    let none0 = sample_negatives(&kb, &cfg, None, Some(&miner), SamplerId::MinedNone, 0).unwrap();
    let none1 = sample_negatives(&kb, &cfg, None, Some(&miner), SamplerId::MinedNone, 1).unwrap();
    assert_ne!(none0, none1, "trials draw different random orders");
    assert!(sample_negatives(&kb, &cfg, None, None, SamplerId::MinedGrad, 0).is_err());
    assert!(sample_negatives(&kb, &cfg, None, None, SamplerId::Antonyms, 0).is_err());
}

#[test]
fn experiments_without_evaluation_splits_are_rejected() {
    let data = planted_rule_kb(&small_cfg()).unwrap();
    let kb = KnowledgeBase::from_labeled(&data.triples);
    assert!(run_experiment(&kb, &quick(vec![SamplerId::Uniform]), None).is_err());
}
