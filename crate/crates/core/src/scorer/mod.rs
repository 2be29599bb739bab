//! Differentiable triple scorer.
//!
//! A triple is linearized as `[START] head.. [SEP] relation [SEP] tail..`,
//! embedded, mean-pooled, passed through one square feedforward layer and
//! scored by a logistic classification layer.

mod thresholds;
mod train;

use std::cell::Cell;

use indexmap::IndexSet;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kb::{Phrase, Relation, Triple};

pub use thresholds::{best_threshold, fit_thresholds, fit_thresholds_from_scores, ThresholdMap};
pub use train::{
    corrupt, train_contrastive, train_with_negatives, CorruptionMode, CorruptionTarget, TrainConfig,
    TrainReport,
};

pub const START_ID: u32 = 0;
pub const SEP_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
const RESERVED: usize = 3;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const LOSS_EPS: f64 = 1e-12;

thread_local! {
    static BACKWARD_PASSES: Cell<u64> = const { Cell::new(0) };
}

/// Number of backward passes run on the current thread so far.
pub fn backward_passes() -> u64 {
    BACKWARD_PASSES.with(Cell::get)
}

/// Token dictionary. Ids `0..3` are reserved (start, separator, unknown),
/// followed by one id per relation, followed by word ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenVocab {
    relations: IndexSet<String>,
    words: IndexSet<String>,
}

impl TokenVocab {
    pub fn build<'a, I: IntoIterator<Item = &'a Triple>>(triples: I) -> Self {
        let mut vocab = TokenVocab::default();
        for t in triples {
            vocab.relations.insert(t.relation.name().to_string());
            for tok in t.head.tokens().iter().chain(t.tail.tokens()) {
                vocab.words.insert(tok.clone());
            }
        }
        vocab
    }

    pub fn from_parts(relations: Vec<String>, words: Vec<String>) -> Result<Self> {
        let n_rel = relations.len();
        let n_words = words.len();
        let vocab = TokenVocab {
            relations: relations.into_iter().collect(),
            words: words.into_iter().collect(),
        };
        if vocab.relations.len() != n_rel || vocab.words.len() != n_words {
            return Err(Error::Checkpoint("duplicate vocabulary entry".into()));
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        RESERVED + self.relations.len() + self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().map(String::as_str)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn relation_id(&self, relation: &Relation) -> u32 {
        self.relations
            .get_index_of(relation.name())
            .map_or(UNK_ID, |i| (RESERVED + i) as u32)
    }

    pub fn word_id(&self, token: &str) -> u32 {
        self.words
            .get_index_of(token)
            .map_or(UNK_ID, |i| (RESERVED + self.relations.len() + i) as u32)
    }

    pub fn phrase_ids(&self, phrase: &Phrase) -> Vec<u32> {
        phrase.tokens().iter().map(|t| self.word_id(t)).collect()
    }

    /// Linearized token ids of a triple.
    pub fn encode(&self, triple: &Triple) -> Vec<u32> {
        let mut ids = Vec::with_capacity(triple.head.len() + triple.tail.len() + 4);
        ids.push(START_ID);
        ids.extend(triple.head.tokens().iter().map(|t| self.word_id(t)));
        ids.push(SEP_ID);
        ids.push(self.relation_id(&triple.relation));
        ids.push(SEP_ID);
        ids.extend(triple.tail.tokens().iter().map(|t| self.word_id(t)));
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed in terms of the activation output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with clamped probability.
pub fn bce(prob: f64, label: bool) -> f64 {
    let p = prob.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Full parameter set of the scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub hidden: usize,
    pub activation: Activation,
    /// `vocab × hidden`, row-major.
    pub embeddings: Vec<f64>,
    /// `hidden × hidden`, row `i` produces output unit `i`.
    pub encoder_weight: Vec<f64>,
    pub encoder_bias: Vec<f64>,
    pub class_weight: Vec<f64>,
    pub class_bias: f64,
}

pub(crate) struct Forward {
    pub pooled: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logit: f64,
}

/// Gradient of the dense (non-embedding) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub encoder_weight: Vec<f64>,
    pub encoder_bias: Vec<f64>,
    pub class_weight: Vec<f64>,
    pub class_bias: f64,
}

impl DenseGrad {
    pub fn zeros(hidden: usize) -> Self {
        DenseGrad {
            encoder_weight: vec![0.0; hidden * hidden],
            encoder_bias: vec![0.0; hidden],
            class_weight: vec![0.0; hidden],
            class_bias: 0.0,
        }
    }

    fn clear(&mut self) {
        self.encoder_weight.fill(0.0);
        self.encoder_bias.fill(0.0);
        self.class_weight.fill(0.0);
        self.class_bias = 0.0;
    }
}

/// Which parameters enter a gradient norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientScope {
    #[default]
    Full,
    /// Classification layer only.
    FinalLayer,
}

impl GradientScope {
    pub fn as_str(self) -> &'static str {
        match self {
            GradientScope::Full => "full",
            GradientScope::FinalLayer => "final-layer",
        }
    }
}

impl std::str::FromStr for GradientScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(GradientScope::Full),
            "final-layer" => Ok(GradientScope::FinalLayer),
            other => Err(Error::InvalidArgument(format!("unknown gradient scope {other:?}"))),
        }
    }
}

/// Gradient over every parameter touched by one triple. Embedding rows of
/// tokens that do not occur in the triple are zero and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub hidden: usize,
    /// Token ids with non-zero rows, ascending and unique.
    pub embedding_ids: Vec<u32>,
    /// `embedding_ids.len() × hidden`.
    pub embedding_rows: Vec<f64>,
    pub dense: DenseGrad,
}

impl Gradient {
    pub fn norm(&self, scope: GradientScope) -> f64 {
        let d = &self.dense;
        let final_layer = d.class_weight.iter().map(|g| g * g).sum::<f64>() + d.class_bias * d.class_bias;
        let sq = match scope {
            GradientScope::FinalLayer => final_layer,
            GradientScope::Full => {
                final_layer
                    + sum_sq(&self.embedding_rows)
                    + sum_sq(&d.encoder_weight)
                    + sum_sq(&d.encoder_bias)
            }
        };
        sq.sqrt()
    }

    pub fn embedding_row(&self, id: u32) -> Option<&[f64]> {
        let h = self.hidden;
        self.embedding_ids
            .binary_search(&id)
            .ok()
            .map(|i| &self.embedding_rows[i * h..(i + 1) * h])
    }

    /// Gradient laid out like [`ScorerParams::flat`].
    pub fn to_flat(&self, vocab_size: usize) -> Vec<f64> {
        let h = self.hidden;
        let mut out = vec![0.0; vocab_size * h];
        for (i, &id) in self.embedding_ids.iter().enumerate() {
            let id = id as usize;
            out[id * h..(id + 1) * h].copy_from_slice(&self.embedding_rows[i * h..(i + 1) * h]);
        }
        out.extend_from_slice(&self.dense.encoder_weight);
        out.extend_from_slice(&self.dense.encoder_bias);
        out.extend_from_slice(&self.dense.class_weight);
        out.push(self.dense.class_bias);
        out
    }
}

fn sum_sq(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ScorerParams {
    pub fn zeros(vocab_size: usize, hidden: usize) -> Self {
        ScorerParams {
            hidden,
            activation: Activation::Tanh,
            embeddings: vec![0.0; vocab_size * hidden],
            encoder_weight: vec![0.0; hidden * hidden],
            encoder_bias: vec![0.0; hidden],
            class_weight: vec![0.0; hidden],
            class_bias: 0.0,
        }
    }

    pub fn random<R: Rng>(vocab_size: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(vocab_size, hidden);
        let emb = 1.0;
        let enc = (6.0 / (2 * hidden) as f64).sqrt();
        let cls = (3.0 / hidden as f64).sqrt();
        p.embeddings.iter_mut().for_each(|x| *x = rng.gen_range(-emb..emb));
        p.encoder_weight.iter_mut().for_each(|x| *x = rng.gen_range(-enc..enc));
        p.class_weight.iter_mut().for_each(|x| *x = rng.gen_range(-cls..cls));
        p
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.len() / self.hidden
    }

    pub fn embedding(&self, id: u32) -> &[f64] {
        let h = self.hidden;
        let id = id as usize;
        &self.embeddings[id * h..(id + 1) * h]
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden;
        if h < 2 {
            return Err(Error::InvalidArgument(format!("hidden dimension {h} < 2")));
        }
        if !self.embeddings.len().is_multiple_of(h)
            || self.encoder_weight.len() != h * h
            || self.encoder_bias.len() != h
            || self.class_weight.len() != h
        {
            return Err(Error::DimensionMismatch {
                expected: h,
                actual: self.class_weight.len(),
            });
        }
        let all_finite = self
            .embeddings
            .iter()
            .chain(&self.encoder_weight)
            .chain(&self.encoder_bias)
            .chain(&self.class_weight)
            .all(|x| x.is_finite())
            && self.class_bias.is_finite();
        if !all_finite {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Mean of the embedding rows of `ids`.
    pub(crate) fn mean_embedding(&self, ids: &[u32]) -> Vec<f64> {
        let h = self.hidden;
        let mut pooled = vec![0.0; h];
        for &id in ids {
            for (acc, x) in pooled.iter_mut().zip(self.embedding(id)) {
                *acc += x;
            }
        }
        let inv = 1.0 / ids.len().max(1) as f64;
        pooled.iter_mut().for_each(|x| *x *= inv);
        pooled
    }

    pub(crate) fn apply_encoder(&self, pooled: &[f64]) -> Vec<f64> {
        let h = self.hidden;
        (0..h)
            .map(|i| {
                let row = &self.encoder_weight[i * h..(i + 1) * h];
                self.activation.apply(dot(row, pooled) + self.encoder_bias[i])
            })
            .collect()
    }

    pub(crate) fn forward(&self, ids: &[u32]) -> Forward {
        let pooled = self.mean_embedding(ids);
        let hidden = self.apply_encoder(&pooled);
        let logit = dot(&self.class_weight, &hidden) + self.class_bias;
        Forward { pooled, hidden, logit }
    }

    /// Pooled triple representation.
    pub fn encode_ids(&self, ids: &[u32]) -> Vec<f64> {
        self.forward(ids).hidden
    }

    pub fn score_ids(&self, ids: &[u32]) -> f64 {
        sigmoid(self.forward(ids).logit)
    }

    /// Backpropagates `dlogit` into `dense` (accumulating) and returns the
    /// gradient with respect to the pooled (mean) embedding.
    pub(crate) fn backward(&self, fwd: &Forward, dlogit: f64, dense: &mut DenseGrad) -> Vec<f64> {
        BACKWARD_PASSES.with(|c| c.set(c.get() + 1));
        let h = self.hidden;
        dense.class_bias += dlogit;
        let mut dpre = vec![0.0; h];
        for i in 0..h {
            dense.class_weight[i] += dlogit * fwd.hidden[i];
            dpre[i] = dlogit * self.class_weight[i] * self.activation.derivative_from_output(fwd.hidden[i]);
        }
        let mut dpooled = vec![0.0; h];
        for i in 0..h {
            let g = dpre[i];
            dense.encoder_bias[i] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.encoder_weight[i * h..(i + 1) * h];
            let grow = &mut dense.encoder_weight[i * h..(i + 1) * h];
            for j in 0..h {
                grow[j] += g * fwd.pooled[j];
                dpooled[j] += g * row[j];
            }
        }
        dpooled
    }

    /// Loss and exact gradient for a single linearized triple.
    pub fn loss_and_gradient_ids(&self, ids: &[u32], label: bool) -> (f64, Gradient) {
        let fwd = self.forward(ids);
        let prob = sigmoid(fwd.logit);
        let loss = bce(prob, label);
        let dlogit = prob - f64::from(u8::from(label));
        let mut dense = DenseGrad::zeros(self.hidden);
        let dpooled = self.backward(&fwd, dlogit, &mut dense);
        let mut uniq: Vec<u32> = ids.to_vec();
        uniq.sort_unstable();
        let inv = 1.0 / ids.len().max(1) as f64;
        let mut embedding_ids = Vec::new();
        let mut embedding_rows = Vec::new();
        for chunk in uniq.chunk_by(|a, b| a == b) {
            let scale = chunk.len() as f64 * inv;
            embedding_ids.push(chunk[0]);
            embedding_rows.extend(dpooled.iter().map(|g| g * scale));
        }
        (
            loss,
            Gradient {
                hidden: self.hidden,
                embedding_ids,
                embedding_rows,
                dense,
            },
        )
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.embeddings.len() + self.encoder_weight.len() + self.encoder_bias.len() + self.class_weight.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Mutable access to parameter `i` in the flat order
    /// `[embeddings, encoder_weight, encoder_bias, class_weight, class_bias]`.
    pub fn flat_mut(&mut self, mut i: usize) -> &mut f64 {
        for part in [
            &mut self.embeddings,
            &mut self.encoder_weight,
            &mut self.encoder_bias,
            &mut self.class_weight,
        ] {
            if i < part.len() {
                return &mut part[i];
            }
            i -= part.len();
        }
        assert_eq!(i, 0, "flat parameter index out of range");
        &mut self.class_bias
    }

    pub fn flat(&self, i: usize) -> f64 {
        let mut copy = i;
        for part in [&self.embeddings, &self.encoder_weight, &self.encoder_bias, &self.class_weight] {
            if copy < part.len() {
                return part[copy];
            }
            copy -= part.len();
        }
        assert_eq!(copy, 0, "flat parameter index out of range");
        self.class_bias
    }
}

/// Where phrase embeddings for retrieval come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbeddingSource {
    /// Frozen, separately seeded table that training never touches.
    #[default]
    Retrieval,
    /// The scorer's trained token embeddings.
    Trained,
}

/// A trained (or trainable) scorer: vocabulary, parameters, frozen retrieval
/// embeddings and per-relation thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleScorer {
    pub vocab: TokenVocab,
    pub params: ScorerParams,
    /// `vocab × hidden`, frozen.
    pub retrieval: Vec<f64>,
    pub thresholds: ThresholdMap,
}

/// Offset mixed into the seed of the retrieval table.
const RETRIEVAL_SEED_SALT: u64 = 0x05EE_D0F7_AB1E;

impl TripleScorer {
    pub fn new(vocab: TokenVocab, hidden: usize, seed: u64) -> Result<Self> {
        Self::with_activation(vocab, hidden, Activation::Tanh, seed)
    }

    pub fn with_activation(vocab: TokenVocab, hidden: usize, activation: Activation, seed: u64) -> Result<Self> {
        if hidden < 2 {
            return Err(Error::InvalidArgument(format!("hidden dimension {hidden} < 2")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ScorerParams::random(vocab.len(), hidden, &mut rng);
        params.activation = activation;
        let mut rrng = ChaCha8Rng::seed_from_u64(seed ^ RETRIEVAL_SEED_SALT);
        let retrieval = (0..vocab.len() * hidden).map(|_| rrng.gen_range(-1.0..1.0)).collect();
        Ok(TripleScorer {
            vocab,
            params,
            retrieval,
            thresholds: ThresholdMap::default(),
        })
    }

    pub fn hidden(&self) -> usize {
        self.params.hidden
    }

    pub fn encode(&self, triple: &Triple) -> Vec<f64> {
        self.params.encode_ids(&self.vocab.encode(triple))
    }

    pub fn score(&self, triple: &Triple) -> f64 {
        self.params.score_ids(&self.vocab.encode(triple))
    }

    /// Pooled representation and score from one forward pass.
    pub fn encode_and_score(&self, triple: &Triple) -> (Vec<f64>, f64) {
        let fwd = self.params.forward(&self.vocab.encode(triple));
        (fwd.hidden, sigmoid(fwd.logit))
    }

    pub fn loss_and_gradient(&self, triple: &Triple, label: bool) -> (f64, Gradient) {
        self.params.loss_and_gradient_ids(&self.vocab.encode(triple), label)
    }

    pub fn classify(&self, triple: &Triple) -> bool {
        self.thresholds.is_positive(&triple.relation, self.score(triple))
    }

    pub fn embed_phrase(&self, phrase: &Phrase) -> Vec<f64> {
        self.embed_phrase_from(phrase, EmbeddingSource::Retrieval)
    }

    pub fn embed_phrase_from(&self, phrase: &Phrase, source: EmbeddingSource) -> Vec<f64> {
        let h = self.hidden();
        let table = match source {
            EmbeddingSource::Retrieval => &self.retrieval,
            EmbeddingSource::Trained => &self.params.embeddings,
        };
        let ids = self.vocab.phrase_ids(phrase);
        let mut out = vec![0.0; h];
        for id in &ids {
            let row = &table[*id as usize * h..(*id as usize + 1) * h];
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
        }
        let inv = 1.0 / ids.len() as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        out
    }
}
