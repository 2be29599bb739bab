use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, LabeledTriple, Slot, Triple};

use super::{bce, sigmoid, DenseGrad, ScorerParams, TripleScorer};

/// Which part of a positive a corruption replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionTarget {
    Head,
    Relation,
    Tail,
}

impl CorruptionTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionTarget::Head => "head",
            CorruptionTarget::Relation => "relation",
            CorruptionTarget::Tail => "tail",
        }
    }
}

impl From<Slot> for CorruptionTarget {
    fn from(slot: Slot) -> Self {
        match slot {
            Slot::Head => CorruptionTarget::Head,
            Slot::Tail => CorruptionTarget::Tail,
        }
    }
}

/// How the negatives of one positive are spread over targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorruptionMode {
    /// Head, relation, tail, head, ...
    #[default]
    Cycle,
    /// Head, tail, head, ...
    Entities,
    Head,
    Relation,
    Tail,
}

impl CorruptionMode {
    pub fn target(self, i: usize) -> CorruptionTarget {
        use CorruptionTarget::*;
        match self {
            CorruptionMode::Cycle => [Head, Relation, Tail][i % 3],
            CorruptionMode::Entities => [Head, Tail][i % 2],
            CorruptionMode::Head => Head,
            CorruptionMode::Relation => Relation,
            CorruptionMode::Tail => Tail,
        }
    }
}

impl std::str::FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cycle" => Ok(CorruptionMode::Cycle),
            "entities" => Ok(CorruptionMode::Entities),
            "head" => Ok(CorruptionMode::Head),
            "relation" => Ok(CorruptionMode::Relation),
            "tail" => Ok(CorruptionMode::Tail),
            other => Err(Error::InvalidArgument(format!("unknown corruption mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub corruption: CorruptionMode,
    /// Redraws allowed when a corruption lands on a stored positive.
    pub max_retries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-2,
            batch_size: 64,
            negatives_per_positive: 3,
            seed: 0,
            corruption: CorruptionMode::Cycle,
            max_retries: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.negatives_per_positive == 0 {
            return Err(Error::InvalidArgument("negatives_per_positive must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Corruptions abandoned after exhausting retries.
    pub skipped: usize,
}

/// Draws an index uniformly from `0..n` skipping `exclude`.
fn draw_excluding<R: Rng>(n: usize, exclude: Option<usize>, rng: &mut R) -> usize {
    match exclude {
        Some(ex) => {
            let i = rng.gen_range(0..n - 1);
            if i >= ex {
                i + 1
            } else {
                i
            }
        }
        None => rng.gen_range(0..n),
    }
}

/// Replaces one part of `positive` with a uniformly drawn phrase (or
/// relation) from the KB, never the original. Draws that land on a stored
/// positive are retried up to `max_retries` times; `Ok(None)` means the
/// corruption was skipped.
pub fn corrupt<R: Rng>(
    kb: &KnowledgeBase,
    positive: &Triple,
    target: CorruptionTarget,
    max_retries: usize,
    rng: &mut R,
) -> Result<Option<LabeledTriple>> {
    let build = |rng: &mut R| -> Result<Triple> {
        match target {
            CorruptionTarget::Relation => {
                let rels = kb.relations();
                let exclude = kb.relation_index(&positive.relation);
                let n = rels.len();
                if n - usize::from(exclude.is_some()) == 0 {
                    return Err(Error::CorruptionImpossible {
                        slot: "relation",
                        reason: format!("relation dictionary has {n} entries"),
                    });
                }
                Ok(positive.with_relation(rels[draw_excluding(n, exclude, rng)].clone()))
            }
            CorruptionTarget::Head | CorruptionTarget::Tail => {
                let slot = if target == CorruptionTarget::Head { Slot::Head } else { Slot::Tail };
                let phrases = kb.phrases();
                let exclude = kb.phrase_index(positive.phrase(slot));
                let n = phrases.len();
                if n - usize::from(exclude.is_some()) == 0 {
                    return Err(Error::CorruptionImpossible {
                        slot: target.as_str(),
                        reason: format!("phrase vocabulary has {n} entries"),
                    });
                }
                Ok(positive.with_phrase(slot, phrases[draw_excluding(n, exclude, rng)].clone()))
            }
        }
    };
    for _ in 0..=max_retries {
        let t = build(rng)?;
        if !kb.contains(&t) {
            return Ok(Some(LabeledTriple::negative(t)));
        }
    }
    log::debug!("skipped {} corruption of {positive}", target.as_str());
    Ok(None)
}

/// Sparse accumulator for embedding-row gradients within a batch.
struct EmbeddingGrad {
    hidden: usize,
    rows: Vec<f64>,
    touched: Vec<u32>,
    is_touched: Vec<bool>,
}

impl EmbeddingGrad {
    fn new(vocab: usize, hidden: usize) -> Self {
        EmbeddingGrad {
            hidden,
            rows: vec![0.0; vocab * hidden],
            touched: Vec::new(),
            is_touched: vec![false; vocab],
        }
    }

    fn add(&mut self, id: u32, grad: &[f64], scale: f64) {
        let h = self.hidden;
        let i = id as usize;
        if !self.is_touched[i] {
            self.is_touched[i] = true;
            self.touched.push(id);
        }
        for (r, g) in self.rows[i * h..(i + 1) * h].iter_mut().zip(grad) {
            *r += g * scale;
        }
    }
}

/// Adagrad: per-parameter steps scaled by accumulated squared gradients.
struct Adagrad {
    lr: f64,
    emb: Vec<f64>,
    enc_w: Vec<f64>,
    enc_b: Vec<f64>,
    cls_w: Vec<f64>,
    cls_b: f64,
}

const ADAGRAD_EPS: f64 = 1e-8;

fn adagrad_update(param: &mut f64, acc: &mut f64, grad: f64, lr: f64) {
    *acc += grad * grad;
    *param -= lr * grad / (acc.sqrt() + ADAGRAD_EPS);
}

impl Adagrad {
    fn new(params: &ScorerParams, lr: f64) -> Self {
        Adagrad {
            lr,
            emb: vec![0.0; params.embeddings.len()],
            enc_w: vec![0.0; params.encoder_weight.len()],
            enc_b: vec![0.0; params.encoder_bias.len()],
            cls_w: vec![0.0; params.class_weight.len()],
            cls_b: 0.0,
        }
    }

    fn step(&mut self, params: &mut ScorerParams, emb: &mut EmbeddingGrad, dense: &DenseGrad, scale: f64) {
        let lr = self.lr;
        let h = params.hidden;
        emb.touched.sort_unstable();
        for &id in &emb.touched {
            let i = id as usize;
            for j in i * h..(i + 1) * h {
                adagrad_update(&mut params.embeddings[j], &mut self.emb[j], emb.rows[j] * scale, lr);
                emb.rows[j] = 0.0;
            }
            emb.is_touched[i] = false;
        }
        emb.touched.clear();
        for (j, g) in dense.encoder_weight.iter().enumerate() {
            adagrad_update(&mut params.encoder_weight[j], &mut self.enc_w[j], g * scale, lr);
        }
        for (j, g) in dense.encoder_bias.iter().enumerate() {
            adagrad_update(&mut params.encoder_bias[j], &mut self.enc_b[j], g * scale, lr);
        }
        for (j, g) in dense.class_weight.iter().enumerate() {
            adagrad_update(&mut params.class_weight[j], &mut self.cls_w[j], g * scale, lr);
        }
        adagrad_update(&mut params.class_bias, &mut self.cls_b, dense.class_bias * scale, lr);
    }
}

struct Trainer {
    opt: Adagrad,
    emb: EmbeddingGrad,
    dense: DenseGrad,
    batch_size: usize,
}

impl Trainer {
    fn new(params: &ScorerParams, config: &TrainConfig) -> Self {
        Trainer {
            opt: Adagrad::new(params, config.learning_rate),
            emb: EmbeddingGrad::new(params.vocab_size(), params.hidden),
            dense: DenseGrad::zeros(params.hidden),
            batch_size: config.batch_size,
        }
    }

    /// One pass over `examples` in the given order; returns the mean loss.
    fn epoch(&mut self, params: &mut ScorerParams, examples: &[(Vec<u32>, bool)], epoch: usize) -> Result<f64> {
        let mut total = 0.0;
        for (b, batch) in examples.chunks(self.batch_size).enumerate() {
            for (ids, label) in batch {
                let fwd = params.forward(ids);
                let prob = sigmoid(fwd.logit);
                let loss = bce(prob, *label);
                if !loss.is_finite() || !fwd.logit.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                total += loss;
                let dlogit = prob - f64::from(u8::from(*label));
                let dpooled = params.backward(&fwd, dlogit, &mut self.dense);
                let inv = 1.0 / ids.len() as f64;
                for &id in ids {
                    self.emb.add(id, &dpooled, inv);
                }
            }
            self.opt
                .step(params, &mut self.emb, &self.dense, 1.0 / batch.len() as f64);
            self.dense.clear();
        }
        Ok(if examples.is_empty() { 0.0 } else { total / examples.len() as f64 })
    }
}

/// Contrastive training: every positive is paired with freshly drawn
/// corruptions each epoch, and binary cross-entropy is minimized with
/// mini-batch Adagrad. Deterministic for a fixed `config.seed`.
pub fn train_contrastive(scorer: &mut TripleScorer, kb: &KnowledgeBase, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if kb.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut report = TrainReport::default();
    if config.epochs == 0 {
        return Ok(report);
    }
    let positives: Vec<Vec<u32>> = kb.triples().iter().map(|t| scorer.vocab.encode(t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trainer = Trainer::new(&scorer.params, config);
    for epoch in 0..config.epochs {
        let mut examples = Vec::with_capacity(positives.len() * (1 + config.negatives_per_positive));
        for (t, ids) in kb.triples().iter().zip(&positives) {
            examples.push((ids.clone(), true));
            for j in 0..config.negatives_per_positive {
                let target = config.corruption.target(j);
                match corrupt(kb, t, target, config.max_retries, &mut rng)? {
                    Some(neg) => examples.push((scorer.vocab.encode(&neg.triple), false)),
                    None => report.skipped += 1,
                }
            }
        }
        examples.shuffle(&mut rng);
        let loss = trainer.epoch(&mut scorer.params, &examples, epoch)?;
        report.epoch_losses.push(loss);
    }
    if report.skipped > 0 {
        log::warn!("{} corruptions skipped after exhausting retries", report.skipped);
    }
    Ok(report)
}

/// Trains on a fixed set of positives and negatives, reshuffled each epoch.
pub fn train_with_negatives(
    scorer: &mut TripleScorer,
    positives: &[Triple],
    negatives: &[Triple],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if positives.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut report = TrainReport::default();
    let mut examples: Vec<(Vec<u32>, bool)> = positives
        .iter()
        .map(|t| (scorer.vocab.encode(t), true))
        .chain(negatives.iter().map(|t| (scorer.vocab.encode(t), false)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trainer = Trainer::new(&scorer.params, config);
    for epoch in 0..config.epochs {
        examples.shuffle(&mut rng);
        let loss = trainer.epoch(&mut scorer.params, &examples, epoch)?;
        report.epoch_losses.push(loss);
    }
    Ok(report)
}
