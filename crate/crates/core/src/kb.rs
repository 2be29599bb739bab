//! Phrase-valued knowledge bases: data model, TSV ingestion, slot indices
//! and evaluation split construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use indexmap::set::Slice;
use indexmap::IndexSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A normalized phrase: lowercase, whitespace-tokenized, never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Phrase(Vec<String>);

impl Phrase {
    pub fn parse(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
        if tokens.is_empty() {
            return Err(Error::InvalidPhrase(format!("empty phrase {text:?}")));
        }
        Ok(Phrase(tokens))
    }

    /// Builds a phrase from already-split tokens, normalizing each one.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Vec::new();
        for tok in tokens {
            let tok = tok.as_ref();
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::InvalidPhrase(format!("bad token {tok:?}")));
            }
            out.push(tok.to_lowercase());
        }
        if out.is_empty() {
            return Err(Error::InvalidPhrase("empty token list".into()));
        }
        Ok(Phrase(out))
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Phrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Symbolic relation name. Case is preserved.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Relation(String);

impl Relation {
    pub fn new(name: &str) -> Result<Self> {
        let name = name.trim();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("bad relation name {name:?}")));
        }
        Ok(Relation(name.to_string()))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Head,
    Tail,
}

impl Slot {
    pub const BOTH: [Slot; 2] = [Slot::Head, Slot::Tail];

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Head => "head",
            Slot::Tail => "tail",
        }
    }

    pub fn other(self) -> Slot {
        match self {
            Slot::Head => Slot::Tail,
            Slot::Tail => Slot::Head,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Slot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(Slot::Head),
            "tail" => Ok(Slot::Tail),
            other => Err(Error::InvalidArgument(format!("unknown slot {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: Phrase,
    pub relation: Relation,
    pub tail: Phrase,
}

impl Triple {
    pub fn new(head: Phrase, relation: Relation, tail: Phrase) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }

    /// Convenience constructor from raw strings.
    pub fn parse(head: &str, relation: &str, tail: &str) -> Result<Self> {
        Ok(Triple {
            head: Phrase::parse(head)?,
            relation: Relation::new(relation)?,
            tail: Phrase::parse(tail)?,
        })
    }

    pub fn phrase(&self, slot: Slot) -> &Phrase {
        match slot {
            Slot::Head => &self.head,
            Slot::Tail => &self.tail,
        }
    }

    pub fn with_phrase(&self, slot: Slot, phrase: Phrase) -> Triple {
        let mut out = self.clone();
        match slot {
            Slot::Head => out.head = phrase,
            Slot::Tail => out.tail = phrase,
        }
        out
    }

    pub fn with_relation(&self, relation: Relation) -> Triple {
        Triple {
            relation,
            ..self.clone()
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

/// A triple with a binary label (`true` = positive).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledTriple {
    pub triple: Triple,
    pub label: bool,
}

impl LabeledTriple {
    pub fn positive(triple: Triple) -> Self {
        LabeledTriple {
            triple,
            label: true,
        }
    }

    pub fn negative(triple: Triple) -> Self {
        LabeledTriple {
            triple,
            label: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<LabeledTriple>,
    pub validation: Vec<LabeledTriple>,
    pub test: Vec<LabeledTriple>,
}

/// Store of positive triples with relation dictionary, phrase vocabulary and
/// per-(relation, slot) phrase index. Immutable once built.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    triples: Vec<Triple>,
    lookup: HashSet<Triple>,
    relations: IndexSet<Relation>,
    phrases: IndexSet<Phrase>,
    slot_index: HashMap<Relation, [IndexSet<Phrase>; 2]>,
    duplicates: usize,
    splits: Splits,
}

impl KnowledgeBase {
    /// Builds a KB from positive triples. Repeated triples are collapsed and
    /// counted in [`KnowledgeBase::duplicates`].
    pub fn new<I: IntoIterator<Item = Triple>>(positives: I) -> Self {
        let mut kb = KnowledgeBase::default();
        for t in positives {
            if kb.lookup.contains(&t) {
                kb.duplicates += 1;
                continue;
            }
            kb.relations.insert(t.relation.clone());
            kb.phrases.insert(t.head.clone());
            kb.phrases.insert(t.tail.clone());
            let slots = kb.slot_index.entry(t.relation.clone()).or_default();
            slots[Slot::Head.index()].insert(t.head.clone());
            slots[Slot::Tail.index()].insert(t.tail.clone());
            kb.lookup.insert(t.clone());
            kb.triples.push(t);
        }
        kb
    }

    /// Builds a KB from the positive members of a labeled list.
    pub fn from_labeled(triples: &[LabeledTriple]) -> Self {
        Self::new(triples.iter().filter(|t| t.label).map(|t| t.triple.clone()))
    }

    /// Builds the KB from the training positives of `splits` and keeps the
    /// splits attached.
    pub fn from_splits(splits: Splits) -> Self {
        let mut kb = Self::from_labeled(&splits.train);
        kb.splits = splits;
        kb
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn relations(&self) -> &Slice<Relation> {
        self.relations.as_slice()
    }

    pub fn phrases(&self) -> &Slice<Phrase> {
        self.phrases.as_slice()
    }

    pub fn phrase_index(&self, phrase: &Phrase) -> Option<usize> {
        self.phrases.get_index_of(phrase)
    }

    pub fn relation_index(&self, relation: &Relation) -> Option<usize> {
        self.relations.get_index_of(relation)
    }

    pub fn has_relation(&self, relation: &Relation) -> bool {
        self.relations.contains(relation)
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.lookup.contains(triple)
    }

    /// Phrases observed in `slot` of `relation`, in first-seen order. Empty
    /// if the relation is unknown.
    pub fn slot_phrases(&self, relation: &Relation, slot: Slot) -> &Slice<Phrase> {
        match self.slot_index.get(relation) {
            Some(slots) => slots[slot.index()].as_slice(),
            None => Slice::new(),
        }
    }

    pub fn slot_contains(&self, relation: &Relation, slot: Slot, phrase: &Phrase) -> bool {
        self.slot_index
            .get(relation)
            .is_some_and(|slots| slots[slot.index()].contains(phrase))
    }

    /// Recomputes the slot index from the stored triples.
    pub fn rebuild_slot_index(&self) -> HashMap<Relation, [IndexSet<Phrase>; 2]> {
        let mut index: HashMap<Relation, [IndexSet<Phrase>; 2]> = HashMap::new();
        for t in &self.triples {
            let slots = index.entry(t.relation.clone()).or_default();
            slots[Slot::Head.index()].insert(t.head.clone());
            slots[Slot::Tail.index()].insert(t.tail.clone());
        }
        index
    }

    pub fn slot_index(&self) -> &HashMap<Relation, [IndexSet<Phrase>; 2]> {
        &self.slot_index
    }
}

/// Column layout of an input triple file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColumnOrder {
    /// `relation<TAB>head<TAB>tail[<TAB>label]`
    #[default]
    RelationHeadTail,
    /// `head<TAB>relation<TAB>tail[<TAB>label]`
    HeadRelationTail,
}

impl std::str::FromStr for ColumnOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rht" | "relation-head-tail" => Ok(ColumnOrder::RelationHeadTail),
            "hrt" | "head-relation-tail" => Ok(ColumnOrder::HeadRelationTail),
            other => Err(Error::InvalidArgument(format!("unknown column order {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedTriples {
    pub triples: Vec<LabeledTriple>,
    /// Positive lines dropped because an identical positive appeared earlier.
    pub duplicates: usize,
}

pub fn load_tsv(path: impl AsRef<Path>, has_labels: bool) -> Result<LoadedTriples> {
    load_tsv_with(path, has_labels, ColumnOrder::default())
}

pub fn load_tsv_with(
    path: impl AsRef<Path>,
    has_labels: bool,
    order: ColumnOrder,
) -> Result<LoadedTriples> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(file, has_labels, order).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses triple TSV from any reader. Lines starting with `#` and blank
/// lines are skipped.
pub fn parse_tsv<R: Read>(reader: R, has_labels: bool, order: ColumnOrder) -> Result<LoadedTriples> {
    let expected = if has_labels { 4 } else { 3 };
    let mut seen = HashSet::new();
    let mut out = LoadedTriples::default();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != expected {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        let (rel, head, tail) = match order {
            ColumnOrder::RelationHeadTail => (fields[0], fields[1], fields[2]),
            ColumnOrder::HeadRelationTail => (fields[1], fields[0], fields[2]),
        };
        let parse_err = |e: Error| Error::Parse {
            line: line_no,
            message: e.to_string(),
        };
        let triple = Triple {
            head: Phrase::parse(head).map_err(parse_err)?,
            relation: Relation::new(rel).map_err(parse_err)?,
            tail: Phrase::parse(tail).map_err(parse_err)?,
        };
        let label = if has_labels {
            match fields[3].trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("label must be 0 or 1, found {other:?}"),
                    })
                }
            }
        } else {
            true
        };
        if label && !seen.insert(triple.clone()) {
            out.duplicates += 1;
            continue;
        }
        out.triples.push(LabeledTriple { triple, label });
    }
    if out.duplicates > 0 {
        log::warn!("collapsed {} duplicate positive lines", out.duplicates);
    }
    Ok(out)
}

/// Writes triples in `relation<TAB>head<TAB>tail[<TAB>label]` form.
pub fn write_tsv<W: Write>(mut w: W, triples: &[LabeledTriple], with_labels: bool) -> std::io::Result<()> {
    for t in triples {
        let tr = &t.triple;
        if with_labels {
            writeln!(w, "{}\t{}\t{}\t{}", tr.relation, tr.head, tr.tail, u8::from(t.label))?;
        } else {
            writeln!(w, "{}\t{}\t{}", tr.relation, tr.head, tr.tail)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrueNegativeOptions {
    pub negation_prefix: String,
    pub seed: u64,
    /// Balance evaluation positives against negatives per relation rather
    /// than only in aggregate.
    pub per_relation_balance: bool,
}

impl Default for TrueNegativeOptions {
    fn default() -> Self {
        TrueNegativeOptions {
            negation_prefix: "Not".to_string(),
            seed: 0,
            per_relation_balance: true,
        }
    }
}

/// Rewrites negated relations (`Not<r>`) into label-0 triples under `r`,
/// keeps only relations that participate in such a pair, and splits the
/// result into train/validation/test. Every negative goes to an evaluation
/// split (half each) and is matched by an equal number of positives; all
/// remaining positives form the training split.
pub fn build_true_negative_split(triples: &[LabeledTriple], opts: &TrueNegativeOptions) -> Result<Splits> {
    let prefix = opts.negation_prefix.as_str();
    let names: HashSet<&str> = triples.iter().map(|t| t.triple.relation.name()).collect();
    let paired: HashSet<&str> = names
        .iter()
        .filter_map(|n| n.strip_prefix(prefix))
        .filter(|base| !base.is_empty() && names.contains(base))
        .collect();
    if paired.is_empty() {
        return Err(Error::NoNegatedRelations(prefix.to_string()));
    }

    let mut positives: BTreeMap<Relation, Vec<Triple>> = BTreeMap::new();
    let mut negatives: BTreeMap<Relation, Vec<Triple>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for lt in triples.iter().filter(|t| t.label) {
        let name = lt.triple.relation.name();
        if paired.contains(name) {
            if seen.insert(lt.triple.clone()) {
                positives.entry(lt.triple.relation.clone()).or_default().push(lt.triple.clone());
            }
        } else if let Some(base) = name.strip_prefix(prefix).filter(|b| paired.contains(b)) {
            let rewritten = lt.triple.with_relation(Relation(base.to_string()));
            if seen.insert(rewritten.clone()) {
                negatives.entry(rewritten.relation.clone()).or_default().push(rewritten);
            }
        }
    }
    // A statement asserted both ways is ambiguous; keep it as a positive only.
    for (rel, negs) in negatives.iter_mut() {
        if let Some(pos) = positives.get(rel) {
            let pos: HashSet<&Triple> = pos.iter().collect();
            negs.retain(|t| !pos.contains(t));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut splits = Splits::default();
    let mut pooled_pos = Vec::new();
    let mut want_val = 0usize;
    let mut want_test = 0usize;
    let mut rels: Vec<Relation> = positives.keys().chain(negatives.keys()).cloned().collect();
    rels.sort();
    rels.dedup();
    for rel in rels {
        let mut pos = positives.remove(&rel).unwrap_or_default();
        let mut neg = negatives.remove(&rel).unwrap_or_default();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        if opts.per_relation_balance {
            let n = neg.len().min(pos.len());
            neg.truncate(n);
            let half = n / 2;
            let (val_neg, test_neg) = neg.split_at(half);
            let mut pos_iter = pos.into_iter();
            push_labeled(&mut splits.validation, val_neg.iter().cloned(), false);
            push_labeled(&mut splits.validation, pos_iter.by_ref().take(val_neg.len()), true);
            push_labeled(&mut splits.test, test_neg.iter().cloned(), false);
            push_labeled(&mut splits.test, pos_iter.by_ref().take(test_neg.len()), true);
            push_labeled(&mut splits.train, pos_iter, true);
        } else {
            let half = neg.len() / 2;
            want_val += half;
            want_test += neg.len() - half;
            push_labeled(&mut splits.validation, neg[..half].iter().cloned(), false);
            push_labeled(&mut splits.test, neg[half..].iter().cloned(), false);
            pooled_pos.extend(pos);
        }
    }
    if !opts.per_relation_balance {
        pooled_pos.shuffle(&mut rng);
        let total = pooled_pos.len();
        if want_val + want_test > total {
            // Not enough positives: drop surplus negatives to keep balance.
            let keep_val = total / 2;
            let keep_test = total - keep_val;
            truncate_negatives(&mut splits.validation, keep_val.min(want_val));
            truncate_negatives(&mut splits.test, keep_test.min(want_test));
            want_val = keep_val.min(want_val);
            want_test = keep_test.min(want_test);
        }
        let mut it = pooled_pos.into_iter();
        push_labeled(&mut splits.validation, it.by_ref().take(want_val), true);
        push_labeled(&mut splits.test, it.by_ref().take(want_test), true);
        push_labeled(&mut splits.train, it, true);
    }
    splits.validation.shuffle(&mut rng);
    splits.test.shuffle(&mut rng);
    Ok(splits)
}

fn push_labeled(out: &mut Vec<LabeledTriple>, triples: impl Iterator<Item = Triple>, label: bool) {
    out.extend(triples.map(|triple| LabeledTriple { triple, label }));
}

fn truncate_negatives(split: &mut Vec<LabeledTriple>, keep: usize) {
    let mut kept = 0;
    split.retain(|t| {
        if t.label {
            return true;
        }
        kept += 1;
        kept <= keep
    });
}
