//! Task-based evaluation: train a fresh classifier per trial with negatives
//! from a chosen source, fit thresholds on validation, score the test split,
//! and compare sources with Welch's t-test.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::candidates::{generate_candidates, Candidate};
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, LabeledTriple, Relation, Triple};
use crate::rankers::{rank_grad, rank_none, rank_theta, RankedCandidate, ThetaOptions};
use crate::retrieval::PhraseIndex;
use crate::samplers::{sample_antonyms, sample_sans, sample_slots, sample_uniform, AntonymLexicon, EntityGraph};
use crate::scorer::{
    corrupt, fit_thresholds, train_contrastive, train_with_negatives, CorruptionMode, GradientScope, TokenVocab,
    TrainConfig, TripleScorer,
};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SamplerId {
    Uniform,
    Slots,
    Antonyms,
    Sans,
    /// Candidates below their relation threshold, most plausible first.
    MinedTheta,
    /// Candidates by descending positive-label gradient magnitude.
    MinedGrad,
    /// Candidates in shuffled order, no ranking.
    MinedNone,
}

impl SamplerId {
    pub const ALL: [SamplerId; 7] = [
        SamplerId::Uniform,
        SamplerId::Slots,
        SamplerId::Antonyms,
        SamplerId::Sans,
        SamplerId::MinedTheta,
        SamplerId::MinedGrad,
        SamplerId::MinedNone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerId::Uniform => "uniform",
            SamplerId::Slots => "slots",
            SamplerId::Antonyms => "antonyms",
            SamplerId::Sans => "sans",
            SamplerId::MinedTheta => "mined-theta",
            SamplerId::MinedGrad => "mined-grad",
            SamplerId::MinedNone => "mined-none",
        }
    }

    pub fn is_mined(self) -> bool {
        matches!(self, SamplerId::MinedTheta | SamplerId::MinedGrad | SamplerId::MinedNone)
    }
}

impl std::fmt::Display for SamplerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SamplerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sampler {s:?}")))
    }
}

/// SplitMix64 finalizer over `base ^ stream`, for independent per-stage seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const MINER_STREAM: u64 = 0xA11CE;
const RANK_STREAM: u64 = 0xB0B;
const TRIAL_STREAM: u64 = 0xC0FFEE;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub samplers: Vec<SamplerId>,
    /// Source the others are tested against on accuracy.
    pub baseline: Option<SamplerId>,
    pub trials: usize,
    pub negatives_per_positive: usize,
    pub hidden: usize,
    /// Classifier training, seeded per trial.
    pub train: TrainConfig,
    /// Training of the scorer that produces and ranks candidates.
    pub miner: TrainConfig,
    pub k: usize,
    pub keep_fraction: f64,
    /// Keep the per-relation sorted order of theta pools instead of shuffling.
    pub preserve_theta_order: bool,
    pub grad_scope: GradientScope,
    pub hops: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            samplers: vec![SamplerId::Uniform],
            baseline: Some(SamplerId::Uniform),
            trials: 5,
            negatives_per_positive: 1,
            hidden: 16,
            train: TrainConfig {
                epochs: 60,
                learning_rate: 0.2,
                ..TrainConfig::default()
            },
            miner: TrainConfig {
                epochs: 60,
                learning_rate: 0.2,
                corruption: CorruptionMode::Entities,
                negatives_per_positive: 1,
                ..TrainConfig::default()
            },
            k: 10,
            keep_fraction: 0.5,
            preserve_theta_order: false,
            grad_scope: GradientScope::Full,
            hops: 2,
            seed: 0,
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.samplers.is_empty() {
            return Err(Error::InvalidArgument("no samplers configured".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::InvalidArgument("negatives_per_positive must be >= 1".into()));
        }
        if self.hops == 0 {
            return Err(Error::InvalidArgument("hops must be >= 1".into()));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "keep_fraction must be in (0, 1], got {}",
                self.keep_fraction
            )));
        }
        self.train.validate()?;
        self.miner.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Absent when nothing was predicted positive.
    pub precision: Option<f64>,
    /// Absent when there are no positive labels.
    pub recall: Option<f64>,
}

pub fn metrics(predictions: &[bool], labels: &[bool]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no examples to score".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / labels.len() as f64,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    })
}

pub use crate::stats::{t_test_two_sided, TTest};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerResult {
    pub sampler: SamplerId,
    pub trials: Vec<Metrics>,
    /// Training negatives actually drawn per trial.
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Accuracy, Metric::Precision, Metric::Recall];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
        }
    }

    fn get(self, m: &Metrics) -> Option<f64> {
        match self {
            Metric::Accuracy => Some(m.accuracy),
            Metric::Precision => m.precision,
            Metric::Recall => m.recall,
        }
    }
}

impl SamplerResult {
    /// Per-trial values of `metric`, skipping trials where it is absent.
    pub fn values(&self, metric: Metric) -> Vec<f64> {
        self.trials.iter().filter_map(|m| metric.get(m)).collect()
    }

    /// Mean and sample standard deviation (0 for a single value); `None`
    /// when no trial defines the metric.
    pub fn summary(&self, metric: Metric) -> Option<(f64, f64)> {
        let v = self.values(metric);
        (!v.is_empty()).then(|| (stats::mean(&v), stats::std_dev(&v)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub baseline: Option<SamplerId>,
    pub results: Vec<SamplerResult>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

impl EvaluationReport {
    pub fn result(&self, sampler: SamplerId) -> Option<&SamplerResult> {
        self.results.iter().find(|r| r.sampler == sampler)
    }

    /// Two-sided Welch p-value of `sampler` against the baseline on
    /// accuracy. `None` for the baseline itself or with fewer than two
    /// trials.
    pub fn p_value(&self, sampler: SamplerId) -> Option<f64> {
        let base = self.baseline?;
        if base == sampler {
            return None;
        }
        let a = self.result(sampler)?.values(Metric::Accuracy);
        let b = self.result(base)?.values(Metric::Accuracy);
        stats::t_test_two_sided(&a, &b).ok().map(|t| t.p)
    }

    /// Columns: sampler, metric, mean, std, p_vs_baseline, trials.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sampler\tmetric\tmean\tstd\tp_vs_baseline\ttrials")?;
        for r in &self.results {
            for metric in Metric::ALL {
                let (mean, std) = r.summary(metric).unzip();
                let p = if metric == Metric::Accuracy { self.p_value(r.sampler) } else { None };
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    r.sampler,
                    metric.as_str(),
                    fmt_opt(mean),
                    fmt_opt(std),
                    fmt_opt(p),
                    r.values(metric).len()
                )?;
            }
        }
        Ok(())
    }

    /// Columns: sampler, trial, accuracy, precision, recall, negatives.
    pub fn write_trials_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sampler\ttrial\taccuracy\tprecision\trecall\tnegatives")?;
        for r in &self.results {
            for (i, (m, n)) in r.trials.iter().zip(&r.negatives).enumerate() {
                writeln!(
                    w,
                    "{}\t{}\t{:.6}\t{}\t{}\t{}",
                    r.sampler,
                    i,
                    m.accuracy,
                    fmt_opt(m.precision),
                    fmt_opt(m.recall),
                    n
                )?;
            }
        }
        Ok(())
    }

    /// One line per sampler and metric, `mean ± std` in percent.
    pub fn render_summary(&self) -> String {
        let mut out = String::new();
        if let Some(b) = self.baseline {
            let _ = writeln!(out, "baseline: {b}");
        }
        for r in &self.results {
            let _ = write!(out, "{} (trials={})", r.sampler, r.trials.len());
            for metric in Metric::ALL {
                match r.summary(metric) {
                    Some((m, s)) => {
                        let _ = write!(out, "  {} {:.2} ± {:.2}", metric.as_str(), 100.0 * m, 100.0 * s);
                    }
                    None => {
                        let _ = write!(out, "  {} NA", metric.as_str());
                    }
                }
            }
            if let Some(p) = self.p_value(r.sampler) {
                let _ = write!(out, "  p={p:.4}");
            }
            out.push('\n');
        }
        out
    }
}

/// Scorer and candidate list shared by the mined sources.
#[derive(Debug, Clone)]
pub struct Miner {
    pub scorer: TripleScorer,
    pub candidates: Vec<Candidate>,
}

/// Validation positives paired with one head or tail corruption each.
fn corrupted_validation(kb: &KnowledgeBase, positives: &[Triple], seed: u64) -> Result<Vec<LabeledTriple>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(positives.len() * 2);
    for (i, p) in positives.iter().enumerate() {
        out.push(LabeledTriple::positive(p.clone()));
        if let Some(neg) = corrupt(kb, p, CorruptionMode::Entities.target(i), 10, &mut rng)? {
            out.push(neg);
        }
    }
    Ok(out)
}

/// Trains the candidate scorer on the KB, fits its thresholds on validation
/// positives and their corruptions, and generates candidates.
pub fn build_miner(kb: &KnowledgeBase, cfg: &ExperimentConfig) -> Result<Miner> {
    let seed = derive_seed(cfg.seed, MINER_STREAM);
    let vocab = TokenVocab::build(kb.triples());
    let mut scorer = TripleScorer::new(vocab, cfg.hidden, seed)?;
    let train = TrainConfig {
        seed: derive_seed(seed, 1),
        ..cfg.miner.clone()
    };
    train_contrastive(&mut scorer, kb, &train)?;
    let mut val_pos: Vec<Triple> = kb
        .splits()
        .validation
        .iter()
        .filter(|t| t.label)
        .map(|t| t.triple.clone())
        .collect();
    if val_pos.is_empty() {
        val_pos = kb.triples().to_vec();
    }
    let validation = corrupted_validation(kb, &val_pos, derive_seed(seed, 2))?;
    scorer.thresholds = fit_thresholds(&scorer, &validation)?;
    let phrases: Vec<_> = kb.phrases().iter().cloned().collect();
    let index = PhraseIndex::build(&phrases, |p| scorer.embed_phrase(p))?;
    let candidates = generate_candidates(kb, &index, cfg.k);
    Ok(Miner { scorer, candidates })
}

/// Takes `per_positive` ranked negatives for each positive: first the best
/// remaining candidate derived from that positive, then the best remaining
/// one of its relation, then the best remaining overall.
pub fn assign_ranked(ranked: &[RankedCandidate], positives: &[Triple], per_positive: usize) -> Result<Vec<Triple>> {
    let mut by_source: HashMap<&Triple, VecDeque<usize>> = HashMap::new();
    let mut by_rel: HashMap<&Relation, VecDeque<usize>> = HashMap::new();
    for (i, r) in ranked.iter().enumerate() {
        by_source.entry(&r.candidate.source).or_default().push_back(i);
        by_rel.entry(&r.candidate.triple.relation).or_default().push_back(i);
    }
    fn next_unused(queue: Option<&mut VecDeque<usize>>, used: &[bool]) -> Option<usize> {
        let q = queue?;
        while let Some(i) = q.pop_front() {
            if !used[i] {
                return Some(i);
            }
        }
        None
    }
    let mut used = vec![false; ranked.len()];
    let mut global = 0usize;
    let mut out = Vec::with_capacity(positives.len() * per_positive);
    let mut shortfall = 0usize;
    for p in positives {
        for _ in 0..per_positive {
            let mut pick = next_unused(by_source.get_mut(p), &used)
                .or_else(|| next_unused(by_rel.get_mut(&p.relation), &used));
            if pick.is_none() {
                while global < ranked.len() && used[global] {
                    global += 1;
                }
                pick = (global < ranked.len()).then_some(global);
            }
            match pick {
                Some(i) => {
                    used[i] = true;
                    out.push(ranked[i].candidate.triple.clone());
                }
                None => shortfall += 1,
            }
        }
    }
    if shortfall > 0 {
        return Err(Error::SourceExhausted { shortfall });
    }
    Ok(out)
}

struct Context<'a> {
    kb: &'a KnowledgeBase,
    cfg: &'a ExperimentConfig,
    lexicon: Option<&'a AntonymLexicon>,
    graph: Option<EntityGraph>,
    miner: Option<&'a Miner>,
    grad_ranked: Option<Vec<RankedCandidate>>,
}

impl<'a> Context<'a> {
    fn new(
        kb: &'a KnowledgeBase,
        cfg: &'a ExperimentConfig,
        lexicon: Option<&'a AntonymLexicon>,
        miner: Option<&'a Miner>,
        samplers: &[SamplerId],
    ) -> Result<Self> {
        if samplers.contains(&SamplerId::Antonyms) && lexicon.is_none() {
            return Err(Error::InvalidArgument("antonym sampler needs a lexicon".into()));
        }
        if samplers.iter().any(|s| s.is_mined()) && miner.is_none() {
            return Err(Error::InvalidArgument("mined sources need a scorer and candidates".into()));
        }
        let grad_ranked = match (miner, samplers.contains(&SamplerId::MinedGrad)) {
            (Some(m), true) => Some(rank_grad(&m.scorer, &m.candidates, cfg.grad_scope)),
            _ => None,
        };
        Ok(Context {
            kb,
            cfg,
            lexicon,
            graph: samplers.contains(&SamplerId::Sans).then(|| EntityGraph::build(kb)),
            miner,
            grad_ranked,
        })
    }

    fn negatives(&self, sampler: SamplerId, trial: usize) -> Result<Vec<Triple>> {
        let positives = self.kb.triples();
        let n = self.cfg.negatives_per_positive;
        let trial_seed = derive_seed(derive_seed(self.cfg.seed, sampler as u64 + 1), trial as u64);
        if sampler.is_mined() {
            let miner = self.miner.expect("miner built for mined sources");
            let rank_seed = derive_seed(trial_seed, RANK_STREAM);
            let owned;
            let ranked: &[RankedCandidate] = match sampler {
                SamplerId::MinedTheta => {
                    let opts = ThetaOptions {
                        keep_fraction: self.cfg.keep_fraction,
                        shuffle: !self.cfg.preserve_theta_order,
                        seed: rank_seed,
                    };
                    owned = rank_theta(&miner.scorer, &miner.candidates, &opts)?;
                    &owned
                }
                SamplerId::MinedGrad => self.grad_ranked.as_deref().expect("grad ranking computed"),
                _ => {
                    owned = rank_none(&miner.candidates, rank_seed);
                    &owned
                }
            };
            return assign_ranked(ranked, positives, n);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let pos_of = self.lexicon.map(|l| l.pos_map());
        let mut out = Vec::with_capacity(positives.len() * n);
        let mut skipped = 0usize;
        for p in positives {
            for _ in 0..n {
                let drawn = match sampler {
                    SamplerId::Uniform => sample_uniform(self.kb, p, &mut rng),
                    SamplerId::Slots => sample_slots(self.kb, p, &mut rng),
                    SamplerId::Antonyms => sample_antonyms(
                        self.lexicon.expect("lexicon checked"),
                        self.kb,
                        p,
                        pos_of.as_ref().expect("lexicon checked"),
                        &mut rng,
                    ),
                    SamplerId::Sans => {
                        sample_sans(self.graph.as_ref().expect("graph built"), self.kb, p, self.cfg.hops, &mut rng)
                    }
                    _ => unreachable!("mined sources handled above"),
                };
                match drawn {
                    Some(lt) => out.push(lt.triple),
                    None => skipped += 1,
                }
            }
        }
        if skipped > 0 {
            log::info!("{sampler}: {skipped} positives without a negative in trial {trial}");
        }
        Ok(out)
    }

    fn trial(&self, sampler: SamplerId, trial: usize) -> Result<(Metrics, usize)> {
        let negatives = self.negatives(sampler, trial)?;
        let positives = self.kb.triples();
        let vocab = TokenVocab::build(positives.iter().chain(&negatives));
        let seed = derive_seed(derive_seed(self.cfg.seed, TRIAL_STREAM), trial as u64);
        let mut scorer = TripleScorer::new(vocab, self.cfg.hidden, seed)?;
        let train = TrainConfig {
            seed: derive_seed(seed, 1),
            ..self.cfg.train.clone()
        };
        train_with_negatives(&mut scorer, positives, &negatives, &train)?;
        scorer.thresholds = fit_thresholds(&scorer, &self.kb.splits().validation)?;
        let test = &self.kb.splits().test;
        let preds: Vec<bool> = test.iter().map(|t| scorer.classify(&t.triple)).collect();
        let labels: Vec<bool> = test.iter().map(|t| t.label).collect();
        Ok((metrics(&preds, &labels)?, negatives.len()))
    }
}

/// Training negatives that `sampler` contributes to trial `trial` of an
/// experiment run with `cfg`. Mined sources take their scorer and candidates
/// from `miner`.
pub fn sample_negatives(
    kb: &KnowledgeBase,
    cfg: &ExperimentConfig,
    lexicon: Option<&AntonymLexicon>,
    miner: Option<&Miner>,
    sampler: SamplerId,
    trial: usize,
) -> Result<Vec<Triple>> {
    cfg.validate()?;
    Context::new(kb, cfg, lexicon, miner, &[sampler])?.negatives(sampler, trial)
}

/// Runs every configured sampler for `cfg.trials` trials. `lexicon` is
/// required only by the antonym sampler.
pub fn run_experiment(
    kb: &KnowledgeBase,
    cfg: &ExperimentConfig,
    lexicon: Option<&AntonymLexicon>,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    if kb.is_empty() {
        return Err(Error::InvalidArgument("knowledge base has no training positives".into()));
    }
    if kb.splits().validation.is_empty() || kb.splits().test.is_empty() {
        return Err(Error::InvalidArgument("knowledge base has no evaluation splits".into()));
    }
    if cfg.samplers.contains(&SamplerId::Antonyms) && lexicon.is_none() {
        return Err(Error::InvalidArgument("antonym sampler needs a lexicon".into()));
    }
    let miner = if cfg.samplers.iter().any(|s| s.is_mined()) {
        Some(build_miner(kb, cfg)?)
    } else {
        None
    };
    run_experiment_with_miner(kb, cfg, lexicon, miner.as_ref())
}

/// [`run_experiment`] with the mined sources drawing from an existing
/// scorer and candidate list instead of a freshly built one.
pub fn run_experiment_with_miner(
    kb: &KnowledgeBase,
    cfg: &ExperimentConfig,
    lexicon: Option<&AntonymLexicon>,
    miner: Option<&Miner>,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    if kb.is_empty() {
        return Err(Error::InvalidArgument("knowledge base has no training positives".into()));
    }
    if kb.splits().validation.is_empty() || kb.splits().test.is_empty() {
        return Err(Error::InvalidArgument("knowledge base has no evaluation splits".into()));
    }
    let ctx = Context::new(kb, cfg, lexicon, miner, &cfg.samplers)?;

    let jobs: Vec<(SamplerId, usize)> = cfg
        .samplers
        .iter()
        .flat_map(|&s| (0..cfg.trials).map(move |t| (s, t)))
        .collect();
    let threads = cfg.threads.clamp(1, jobs.len());
    let mut outcomes: Vec<Option<Result<(Metrics, usize)>>> = (0..jobs.len()).map(|_| None).collect();
    if threads == 1 {
        for (slot, &(s, t)) in outcomes.iter_mut().zip(&jobs) {
            *slot = Some(ctx.trial(s, t));
        }
    } else {
        std::thread::scope(|scope| {
            let ctx = &ctx;
            let jobs = &jobs;
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    scope.spawn(move || {
                        (w..jobs.len())
                            .step_by(threads)
                            .map(|j| (j, ctx.trial(jobs[j].0, jobs[j].1)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (j, r) in h.join().expect("trial worker panicked") {
                    outcomes[j] = Some(r);
                }
            }
        });
    }

    let mut results: Vec<SamplerResult> = cfg
        .samplers
        .iter()
        .map(|&sampler| SamplerResult {
            sampler,
            trials: Vec::with_capacity(cfg.trials),
            negatives: Vec::with_capacity(cfg.trials),
        })
        .collect();
    for ((s, _), outcome) in jobs.iter().zip(outcomes) {
        let (m, n) = outcome.expect("every job ran")?;
        let r = results.iter_mut().find(|r| r.sampler == *s).expect("sampler listed");
        r.trials.push(m);
        r.negatives.push(n);
    }
    Ok(EvaluationReport {
        baseline: cfg.baseline,
        results,
    })
}
