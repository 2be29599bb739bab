//! Exact k-nearest-neighbor search over phrase embeddings.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;

use crate::error::{Error, Result};
use crate::kb::Phrase;

/// Dense embedding matrix over a fixed, ordered phrase list with cached
/// squared norms.
#[derive(Debug, Clone)]
pub struct PhraseIndex {
    phrases: Vec<Phrase>,
    lookup: HashMap<Phrase, usize>,
    dim: usize,
    matrix: Vec<f64>,
    norms: Vec<f64>,
}

/// Max-heap entry ordered by (distance, insertion index).
#[derive(Debug, Clone, Copy)]
struct Entry {
    dist: f64,
    idx: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.idx.cmp(&other.idx))
    }
}

impl PhraseIndex {
    pub fn build<F>(phrases: &[Phrase], mut embed: F) -> Result<Self>
    where
        F: FnMut(&Phrase) -> Vec<f64>,
    {
        if phrases.is_empty() {
            return Err(Error::InvalidArgument("cannot index an empty phrase list".into()));
        }
        let mut lookup = HashMap::with_capacity(phrases.len());
        let mut matrix = Vec::new();
        let mut norms = Vec::with_capacity(phrases.len());
        let mut dim = None;
        for (i, p) in phrases.iter().enumerate() {
            if lookup.insert(p.clone(), i).is_some() {
                return Err(Error::DuplicatePhrase(p.to_string()));
            }
            let v = embed(p);
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: v.len(),
                });
            }
            norms.push(v.iter().map(|x| x * x).sum());
            matrix.extend(v);
        }
        Ok(PhraseIndex {
            phrases: phrases.to_vec(),
            lookup,
            dim: dim.unwrap_or(0),
            matrix,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phrases(&self) -> &[Phrase] {
        &self.phrases
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn position(&self, phrase: &Phrase) -> Option<usize> {
        self.lookup.get(phrase).copied()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// The `k` nearest phrases to `query` by Euclidean distance, ascending,
    /// ties broken by index order. The query itself is excluded. A query not
    /// in the index yields an empty list.
    pub fn knn(&self, query: &Phrase, k: usize) -> Vec<(&Phrase, f64)> {
        match self.position(query) {
            Some(q) => self
                .knn_by_position(q, k)
                .into_iter()
                .map(|(i, d)| (&self.phrases[i], d))
                .collect(),
            None => Vec::new(),
        }
    }

    /// Like [`PhraseIndex::knn`] but over positions.
    pub fn knn_by_position(&self, q: usize, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let qv = self.vector(q);
        let qn = self.norms[q];
        let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(k + 1);
        for i in 0..self.len() {
            if i == q {
                continue;
            }
            let dot: f64 = qv.iter().zip(self.vector(i)).map(|(a, b)| a * b).sum();
            let dist = (qn + self.norms[i] - 2.0 * dot).max(0.0);
            let e = Entry { dist, idx: i };
            if heap.len() < k {
                heap.push(e);
            } else if e < *heap.peek().expect("heap holds k entries") {
                heap.pop();
                heap.push(e);
            }
        }
        heap.into_sorted_vec()
            .into_iter()
            .map(|e| (e.idx, e.dist.sqrt()))
            .collect()
    }

    /// Writes `phrase<TAB>v1,v2,...` lines.
    pub fn write_embeddings<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, p) in self.phrases.iter().enumerate() {
            let vals: Vec<String> = self.vector(i).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}\t{}", p, vals.join(","))?;
        }
        Ok(())
    }
}
