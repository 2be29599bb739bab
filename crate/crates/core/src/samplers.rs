//! Baseline negative samplers. Every sampler returns `None` when it cannot
//! produce an out-of-KB negative within [`MAX_RETRIES`] attempts.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, LabeledTriple, Phrase, Slot, Triple};

pub const MAX_RETRIES: usize = 10;

fn coin_slot<R: Rng>(rng: &mut R) -> Slot {
    if rng.gen_bool(0.5) {
        Slot::Head
    } else {
        Slot::Tail
    }
}

/// Uniform index in `0..n` skipping `excluded`.
fn draw_excluding<R: Rng>(n: usize, excluded: Option<usize>, rng: &mut R) -> usize {
    match excluded {
        Some(e) => {
            let i = rng.gen_range(0..n - 1);
            if i >= e {
                i + 1
            } else {
                i
            }
        }
        None => rng.gen_range(0..n),
    }
}

/// Replaces head or tail (coin flip) with a uniform KB phrase other than the
/// original.
pub fn sample_uniform<R: Rng>(kb: &KnowledgeBase, positive: &Triple, rng: &mut R) -> Option<LabeledTriple> {
    let phrases = kb.phrases();
    for _ in 0..MAX_RETRIES {
        let slot = coin_slot(rng);
        let original = kb.phrase_index(positive.phrase(slot));
        let available = phrases.len() - usize::from(original.is_some());
        if available == 0 {
            return None;
        }
        let pick = draw_excluding(phrases.len(), original, rng);
        let triple = positive.with_phrase(slot, phrases[pick].clone());
        if !kb.contains(&triple) {
            return Some(LabeledTriple::negative(triple));
        }
    }
    log::debug!("uniform sampler skipped {positive}");
    None
}

/// Replaces head or tail with another phrase seen in that slot of the
/// relation. Falls back to the other slot when the chosen one has no
/// alternative.
pub fn sample_slots<R: Rng>(kb: &KnowledgeBase, positive: &Triple, rng: &mut R) -> Option<LabeledTriple> {
    let open = open_slots(kb, positive);
    if open.is_empty() {
        return None;
    }
    for _ in 0..MAX_RETRIES {
        let slot = open[rng.gen_range(0..open.len())];
        let set = kb.slot_phrases(&positive.relation, slot);
        let pick = draw_excluding(set.len(), slot_position(kb, positive, slot), rng);
        let triple = positive.with_phrase(slot, set[pick].clone());
        if !kb.contains(&triple) {
            return Some(LabeledTriple::negative(triple));
        }
    }
    log::debug!("slots sampler skipped {positive}");
    None
}

fn slot_position(kb: &KnowledgeBase, positive: &Triple, slot: Slot) -> Option<usize> {
    kb.slot_index()
        .get(&positive.relation)?[slot.index()]
        .get_index_of(positive.phrase(slot))
}

/// Slots whose phrase set holds something other than the original.
fn open_slots(kb: &KnowledgeBase, positive: &Triple) -> Vec<Slot> {
    Slot::BOTH
        .into_iter()
        .filter(|&s| {
            let set = kb.slot_phrases(&positive.relation, s);
            set.len() > usize::from(slot_position(kb, positive, s).is_some())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosClass {
    Verb,
    Noun,
    Adjective,
}

impl PosClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PosClass::Verb => "verb",
            PosClass::Noun => "noun",
            PosClass::Adjective => "adjective",
        }
    }
}

impl std::str::FromStr for PosClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verb" => Ok(PosClass::Verb),
            "noun" => Ok(PosClass::Noun),
            "adjective" | "adj" => Ok(PosClass::Adjective),
            other => Err(Error::InvalidArgument(format!("unknown part-of-speech class {other:?}"))),
        }
    }
}

/// Token → (class, antonyms). Self-antonyms are dropped on insert.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AntonymLexicon {
    entries: HashMap<String, (PosClass, Vec<String>)>,
}

impl AntonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: &str, class: PosClass, antonyms: &[&str]) {
        let ants: Vec<String> = antonyms
            .iter()
            .filter(|a| **a != token && !a.is_empty())
            .map(|a| a.to_string())
            .collect();
        if !ants.is_empty() {
            self.entries.insert(token.to_string(), (class, ants));
        }
    }

    /// Parses `token<TAB>class<TAB>ant1,ant2,...` lines; `#` comments and
    /// blank lines are skipped.
    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut lex = Self::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line.map_err(|e| Error::io("<lexicon>", e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let err = |message: String| Error::Parse { line: i + 1, message };
            if f.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", f.len())));
            }
            let class: PosClass = f[1].trim().parse().map_err(|e: Error| err(e.to_string()))?;
            let ants: Vec<&str> = f[2].split(',').map(str::trim).collect();
            lex.insert(f[0].trim(), class, &ants);
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn get(&self, token: &str) -> Option<&[String]> {
        self.entries.get(token).map(|(_, a)| a.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Class tags carried by the lexicon entries.
    pub fn pos_map(&self) -> HashMap<String, PosClass> {
        self.entries.iter().map(|(k, (c, _))| (k.clone(), *c)).collect()
    }
}

/// Position of the first token matching the phrase class (the class of its
/// first tagged token) that has an antonym entry.
fn antonym_site(lexicon: &AntonymLexicon, phrase: &Phrase, pos_of: &HashMap<String, PosClass>) -> Option<usize> {
    let class = phrase.tokens().iter().find_map(|t| pos_of.get(t))?;
    phrase
        .tokens()
        .iter()
        .position(|t| pos_of.get(t) == Some(class) && lexicon.get(t).is_some())
}

/// Replaces the first class-matching token of the head (or, failing that,
/// the tail) with a random antonym.
pub fn sample_antonyms<R: Rng>(
    lexicon: &AntonymLexicon,
    kb: &KnowledgeBase,
    positive: &Triple,
    pos_of: &HashMap<String, PosClass>,
    rng: &mut R,
) -> Option<LabeledTriple> {
    for slot in Slot::BOTH {
        let phrase = positive.phrase(slot);
        let Some(pos) = antonym_site(lexicon, phrase, pos_of) else {
            continue;
        };
        let ants = lexicon.get(&phrase.tokens()[pos]).expect("site has an entry");
        for _ in 0..MAX_RETRIES {
            let mut tokens = phrase.tokens().to_vec();
            tokens[pos] = ants[rng.gen_range(0..ants.len())].clone();
            let Ok(new_phrase) = Phrase::from_tokens(tokens) else {
                break;
            };
            let triple = positive.with_phrase(slot, new_phrase);
            if !kb.contains(&triple) {
                return Some(LabeledTriple::negative(triple));
            }
        }
        log::debug!("antonym sampler skipped {positive}");
        return None;
    }
    None
}

/// Undirected graph over KB phrases: an edge joins the head and tail of
/// every positive.
#[derive(Debug, Clone)]
pub struct EntityGraph {
    adjacency: Vec<Vec<usize>>,
}

impl EntityGraph {
    pub fn build(kb: &KnowledgeBase) -> Self {
        let mut adjacency = vec![Vec::new(); kb.phrases().len()];
        for t in kb.triples() {
            let h = kb.phrase_index(&t.head).expect("head indexed");
            let tl = kb.phrase_index(&t.tail).expect("tail indexed");
            if h != tl {
                adjacency[h].push(tl);
                adjacency[tl].push(h);
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        EntityGraph { adjacency }
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    /// Nodes within `hops` edges of `start`, excluding `start`, sorted.
    pub fn neighborhood(&self, start: usize, hops: usize) -> Vec<usize> {
        let mut dist = HashMap::from([(start, 0usize)]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d == hops {
                continue;
            }
            for &v in &self.adjacency[u] {
                if let Entry::Vacant(e) = dist.entry(v) {
                    e.insert(d + 1);
                    queue.push_back(v);
                }
            }
        }
        let mut out: Vec<usize> = dist.into_keys().filter(|&n| n != start).collect();
        out.sort_unstable();
        out
    }
}

/// Replaces head or tail with a phrase from its `hops`-hop neighborhood.
pub fn sample_sans<R: Rng>(
    graph: &EntityGraph,
    kb: &KnowledgeBase,
    positive: &Triple,
    hops: usize,
    rng: &mut R,
) -> Option<LabeledTriple> {
    let hoods: Vec<(Slot, Vec<usize>)> = Slot::BOTH
        .into_iter()
        .filter_map(|s| {
            let node = kb.phrase_index(positive.phrase(s))?;
            let hood = graph.neighborhood(node, hops);
            (!hood.is_empty()).then_some((s, hood))
        })
        .collect();
    if hoods.is_empty() {
        return None;
    }
    for _ in 0..MAX_RETRIES {
        let (slot, hood) = &hoods[rng.gen_range(0..hoods.len())];
        let pick = hood[rng.gen_range(0..hood.len())];
        let triple = positive.with_phrase(*slot, kb.phrases()[pick].clone());
        if !kb.contains(&triple) {
            return Some(LabeledTriple::negative(triple));
        }
    }
    log::debug!("k-hop sampler skipped {positive}");
    None
}
