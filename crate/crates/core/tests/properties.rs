use std::collections::HashSet;

use negmine_core::candidates::{generate_candidates, validate_candidates, Candidate};
use negmine_core::checkpoint::{read_checkpoint, write_checkpoint};
use negmine_core::kb::{KnowledgeBase, Phrase, Relation, Slot, Triple};
use negmine_core::rankers::{rank_grad, rank_theta, ThetaOptions};
use negmine_core::retrieval::PhraseIndex;
use negmine_core::samplers::{sample_slots, sample_uniform};
use negmine_core::scorer::{GradientScope, ThresholdMap, TokenVocab, TripleScorer};
use negmine_core::stats::{pearson, t_test_two_sided};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random KB over a small vocabulary: `(head, relation, tail)` index triples.
fn kb_strategy() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
    prop::collection::vec((0u8..12, 0u8..3, 0u8..12), 4..40)
}

fn build_kb(raw: &[(u8, u8, u8)]) -> KnowledgeBase {
    KnowledgeBase::new(raw.iter().map(|&(h, r, t)| {
        Triple::parse(&format!("p{h} x"), &format!("R{r}"), &format!("p{t}")).unwrap()
    }))
}

fn scorer_for(kb: &KnowledgeBase, seed: u64) -> TripleScorer {
    TripleScorer::new(TokenVocab::build(kb.triples()), 4, seed).unwrap()
}

fn candidates_for(kb: &KnowledgeBase, scorer: &TripleScorer, k: usize) -> Vec<Candidate> {
    let phrases: Vec<Phrase> = kb.phrases().iter().cloned().collect();
    let index = PhraseIndex::build(&phrases, |p| scorer.embed_phrase(p)).unwrap();
    generate_candidates(kb, &index, k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn candidates_respect_filters(raw in kb_strategy(), seed in 0u64..1000, k in 1usize..6) {
        let kb = build_kb(&raw);
        let scorer = scorer_for(&kb, seed);
        let cands = candidates_for(&kb, &scorer, k);
        prop_assert!(validate_candidates(&kb, &cands, k).is_clean());
        for c in &cands {
            prop_assert!(!kb.contains(&c.triple));
            prop_assert!(kb.slot_contains(&c.triple.relation, c.slot, c.triple.phrase(c.slot)));
            prop_assert_eq!(c.source.phrase(c.slot.other()), c.triple.phrase(c.slot.other()));
            prop_assert!(c.neighbor_rank >= 1 && c.neighbor_rank <= k);
        }
    }

    #[test]
    fn grad_ranking_ignores_input_order(raw in kb_strategy(), seed in 0u64..1000, shuffle_seed in 0u64..1000) {
        let kb = build_kb(&raw);
        let scorer = scorer_for(&kb, seed);
        let cands = candidates_for(&kb, &scorer, 4);
        let mut shuffled = cands.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let a = rank_grad(&scorer, &cands, GradientScope::Full);
        let b = rank_grad(&scorer, &shuffled, GradientScope::Full);
        let keys = |r: &[negmine_core::rankers::RankedCandidate]| r.iter().map(|x| x.key.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(keys(&a), keys(&b));
        for w in a.windows(2) {
            prop_assert!(w[0].key >= w[1].key);
        }
        let set_a: HashSet<_> = a.iter().map(|r| (&r.candidate.triple, r.key.to_bits())).collect();
        let set_b: HashSet<_> = b.iter().map(|r| (&r.candidate.triple, r.key.to_bits())).collect();
        prop_assert_eq!(set_a, set_b);
    }

    #[test]
    fn theta_never_keeps_a_candidate_above_threshold(
        raw in kb_strategy(),
        seed in 0u64..1000,
        theta in 0.0f64..1.0,
        keep in 0.05f64..=1.0,
        shuffle in any::<bool>(),
    ) {
        let kb = build_kb(&raw);
        let mut scorer = scorer_for(&kb, seed);
        let mut map = ThresholdMap::new(0.5);
        for (i, r) in kb.relations().iter().enumerate() {
            map.set(r.clone(), if i == 0 { theta } else { 1.0 - theta });
        }
        scorer.thresholds = map;
        let cands = candidates_for(&kb, &scorer, 4);
        let opts = ThetaOptions { keep_fraction: keep, shuffle, seed };
        let ranked = rank_theta(&scorer, &cands, &opts).unwrap();
        let mut per_rel: std::collections::HashMap<&Relation, (usize, usize)> = Default::default();
        for c in &cands {
            if scorer.score(&c.triple) <= scorer.thresholds.get(&c.triple.relation) {
                per_rel.entry(&c.triple.relation).or_default().0 += 1;
            }
        }
        for r in &ranked {
            let t = &r.candidate.triple;
            prop_assert!(scorer.score(t) <= scorer.thresholds.get(&t.relation));
            per_rel.entry(&t.relation).or_default().1 += 1;
        }
        for (below, kept) in per_rel.values() {
            prop_assert!(*kept as f64 <= (keep * *below as f64).ceil());
            prop_assert!(*kept >= 1 || *below == 0);
        }
    }

    #[test]
    fn samplers_never_return_stored_triples(raw in kb_strategy(), seed in 0u64..1000) {
        let kb = build_kb(&raw);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in kb.triples() {
            if let Some(n) = sample_uniform(&kb, p, &mut rng) {
                prop_assert!(!n.label && !kb.contains(&n.triple));
                prop_assert_eq!(&n.triple.relation, &p.relation);
            }
            if let Some(n) = sample_slots(&kb, p, &mut rng) {
                prop_assert!(!n.label && !kb.contains(&n.triple));
                let changed = if n.triple.head != p.head { Slot::Head } else { Slot::Tail };
                prop_assert!(kb.slot_contains(&p.relation, changed, n.triple.phrase(changed)));
            }
        }
    }

    #[test]
    fn knn_is_sorted_and_excludes_query(
        points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..40),
        k in 1usize..10,
    ) {
        let phrases: Vec<Phrase> = (0..points.len()).map(|i| Phrase::parse(&format!("q{i}")).unwrap()).collect();
        let mut it = points.iter();
        let index = PhraseIndex::build(&phrases, |_| it.next().unwrap().clone()).unwrap();
        for p in &phrases {
            let nn = index.knn(p, k);
            prop_assert_eq!(nn.len(), k.min(phrases.len() - 1));
            prop_assert!(nn.iter().all(|(q, _)| *q != p));
            for w in nn.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
        }
    }

    #[test]
    fn welch_p_is_a_symmetric_probability(
        a in prop::collection::vec(-10.0f64..10.0, 2..12),
        b in prop::collection::vec(-10.0f64..10.0, 2..12),
    ) {
        if let (Ok(x), Ok(y)) = (t_test_two_sided(&a, &b), t_test_two_sided(&b, &a)) {
            prop_assert!((0.0..=1.0).contains(&x.p));
            prop_assert!((x.p - y.p).abs() < 1e-12);
            prop_assert!((x.t + y.t).abs() < 1e-12);
        }
    }

    #[test]
    fn pearson_is_bounded_and_scale_free(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(r) = pearson(&x, &y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            let x2: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
            prop_assert!((pearson(&x2, &y).unwrap() - r).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoints_round_trip(raw in kb_strategy(), seed in 0u64..1000, th in prop::collection::vec(-1.0f64..2.0, 3)) {
        let kb = build_kb(&raw);
        let mut scorer = scorer_for(&kb, seed);
        for (r, v) in kb.relations().iter().zip(&th) {
            scorer.thresholds.set(r.clone(), *v);
        }
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &scorer).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        prop_assert_eq!(&back, &scorer);
        for t in kb.triples() {
            prop_assert_eq!(back.score(t).to_bits(), scorer.score(t).to_bits());
        }
    }
}
