//! Out-of-KB candidate statements built by swapping a head or tail phrase
//! for one of its nearest neighbors.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Phrase, Relation, Slot, Triple};
use crate::retrieval::PhraseIndex;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Candidate {
    pub triple: Triple,
    /// Positive the candidate was derived from.
    pub source: Triple,
    /// Slot that was substituted.
    pub slot: Slot,
    /// 1-based position of the substituted phrase in the neighbor list.
    pub neighbor_rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Generated {
    pub candidates: Vec<Candidate>,
    /// Candidates per positive (KB order) after the KB and slot filters but
    /// before global dedup.
    pub per_positive: Vec<usize>,
}

/// Generates candidates for every positive, head slot before tail, neighbors
/// by ascending distance. Drops candidates already in the KB, those whose new
/// phrase was never seen in that slot of the relation, and repeats of an
/// earlier candidate.
pub fn generate_candidates(kb: &KnowledgeBase, index: &PhraseIndex, k: usize) -> Vec<Candidate> {
    generate_candidates_with_stats(kb, index, k).candidates
}

pub fn generate_candidates_with_stats(kb: &KnowledgeBase, index: &PhraseIndex, k: usize) -> Generated {
    let mut neighbors: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
    let mut seen: HashSet<Triple> = HashSet::new();
    let mut out = Generated::default();
    for positive in kb.triples() {
        let mut count = 0;
        for slot in Slot::BOTH {
            let Some(q) = index.position(positive.phrase(slot)) else {
                continue;
            };
            let nn = neighbors.entry(q).or_insert_with(|| index.knn_by_position(q, k));
            for (rank, &(pos, _)) in nn.iter().enumerate() {
                let phrase = &index.phrases()[pos];
                if !kb.slot_contains(&positive.relation, slot, phrase) {
                    continue;
                }
                let triple = positive.with_phrase(slot, phrase.clone());
                if kb.contains(&triple) {
                    continue;
                }
                count += 1;
                if !seen.insert(triple.clone()) {
                    continue;
                }
                out.candidates.push(Candidate {
                    triple,
                    source: positive.clone(),
                    slot,
                    neighbor_rank: rank + 1,
                });
            }
        }
        out.per_positive.push(count);
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ViolationReport {
    /// Candidates that are stored positives.
    pub in_kb_leaks: usize,
    /// Substituted phrases never observed in that slot of the relation.
    pub slot_violations: usize,
    /// Source positives with more than `2k` candidates.
    pub overflow: usize,
    /// Candidates repeating an earlier candidate triple.
    pub duplicates: usize,
    /// Candidates that do not differ from their source in exactly the named slot.
    pub provenance_mismatches: usize,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        *self == ViolationReport::default()
    }
}

pub fn validate_candidates(kb: &KnowledgeBase, candidates: &[Candidate], k: usize) -> ViolationReport {
    let mut report = ViolationReport::default();
    let mut seen = HashSet::new();
    let mut per_source: HashMap<&Triple, usize> = HashMap::new();
    for c in candidates {
        if kb.contains(&c.triple) {
            report.in_kb_leaks += 1;
        }
        if !kb.slot_contains(&c.triple.relation, c.slot, c.triple.phrase(c.slot)) {
            report.slot_violations += 1;
        }
        if !seen.insert(&c.triple) {
            report.duplicates += 1;
        }
        let other = c.slot.other();
        if c.triple.relation != c.source.relation
            || c.triple.phrase(other) != c.source.phrase(other)
            || c.triple.phrase(c.slot) == c.source.phrase(c.slot)
        {
            report.provenance_mismatches += 1;
        }
        *per_source.entry(&c.source).or_default() += 1;
    }
    report.overflow = per_source.values().filter(|&&n| n > 2 * k).count();
    report
}

/// Writes `relation, head, tail, source_head, source_tail, slot, neighbor_rank`
/// as tab-separated lines.
pub fn write_candidates_tsv<W: Write>(mut w: W, candidates: &[Candidate]) -> std::io::Result<()> {
    for c in candidates {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.triple.relation, c.triple.head, c.triple.tail, c.source.head, c.source.tail, c.slot, c.neighbor_rank
        )?;
    }
    Ok(())
}

pub fn read_candidates_tsv<R: Read>(r: R) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<candidates>", e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let err = |message: String| Error::Parse { line: line_no, message };
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let wrap = |e: Error| err(e.to_string());
        let relation = Relation::new(f[0]).map_err(wrap)?;
        let head = Phrase::parse(f[1]).map_err(wrap)?;
        let tail = Phrase::parse(f[2]).map_err(wrap)?;
        let source = Triple::new(
            Phrase::parse(f[3]).map_err(wrap)?,
            relation.clone(),
            Phrase::parse(f[4]).map_err(wrap)?,
        );
        let slot: Slot = f[5].parse().map_err(wrap)?;
        let neighbor_rank = f[6]
            .parse()
            .map_err(|_| err(format!("bad neighbor rank {:?}", f[6])))?;
        out.push(Candidate {
            triple: Triple::new(head, relation, tail),
            source,
            slot,
            neighbor_rank,
        });
    }
    Ok(out)
}
