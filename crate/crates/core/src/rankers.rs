//! Candidate ranking: by score below the relation threshold, by gradient
//! magnitude under a forced positive label, or by a learned predictor of
//! that magnitude that needs forward passes only.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::candidates::Candidate;
use crate::error::{Error, Result};
use crate::kb::Relation;
use crate::scorer::{dot, Activation, GradientScope, TripleScorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RankMethod {
    Theta,
    Grad,
    GradFast,
    /// Seeded shuffle, no ranking.
    None,
}

impl RankMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RankMethod::Theta => "theta",
            RankMethod::Grad => "grad",
            RankMethod::GradFast => "grad-fast",
            RankMethod::None => "none",
        }
    }
}

impl std::str::FromStr for RankMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta" => Ok(RankMethod::Theta),
            "grad" => Ok(RankMethod::Grad),
            "grad-fast" => Ok(RankMethod::GradFast),
            "none" => Ok(RankMethod::None),
            other => Err(Error::InvalidArgument(format!("unknown ranking method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub candidate: Candidate,
    /// Score for theta ranking, gradient magnitude (true or predicted)
    /// otherwise.
    pub key: f64,
    /// 1-based.
    pub rank: usize,
    pub method: RankMethod,
}

fn assign_ranks(items: Vec<(Candidate, f64)>, method: RankMethod) -> Vec<RankedCandidate> {
    items
        .into_iter()
        .enumerate()
        .map(|(i, (candidate, key))| RankedCandidate {
            candidate,
            key,
            rank: i + 1,
            method,
        })
        .collect()
}

/// Indices sorted by key descending; equal keys keep input order.
fn descending_order(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]));
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaOptions {
    /// Fraction of each relation's below-threshold pool to keep.
    pub keep_fraction: f64,
    /// Shuffle the combined pools; when false the per-relation sorted order
    /// is kept.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for ThetaOptions {
    fn default() -> Self {
        ThetaOptions {
            keep_fraction: 0.5,
            shuffle: true,
            seed: 0,
        }
    }
}

/// Keeps candidates scored at or below their relation's threshold, sorts
/// each relation's pool by descending score, keeps the top
/// `ceil(keep_fraction * pool)` of each, and combines the pools.
pub fn rank_theta(scorer: &TripleScorer, candidates: &[Candidate], opts: &ThetaOptions) -> Result<Vec<RankedCandidate>> {
    if !(opts.keep_fraction > 0.0 && opts.keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_fraction must be in (0, 1], got {}",
            opts.keep_fraction
        )));
    }
    let scores: Vec<f64> = candidates.iter().map(|c| scorer.score(&c.triple)).collect();
    let pools = theta_pools(&scorer.thresholds, candidates, &scores, opts.keep_fraction);
    let mut combined: Vec<(Candidate, f64)> = pools
        .into_iter()
        .flat_map(|pool| pool.into_iter().map(|i| (candidates[i].clone(), scores[i])))
        .collect();
    if opts.shuffle {
        combined.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    }
    Ok(assign_ranks(combined, RankMethod::Theta))
}

/// Per-relation (sorted by relation name) lists of kept candidate indices.
fn theta_pools(
    thresholds: &crate::scorer::ThresholdMap,
    candidates: &[Candidate],
    scores: &[f64],
    keep_fraction: f64,
) -> Vec<Vec<usize>> {
    let mut by_rel: BTreeMap<&Relation, Vec<usize>> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        if scores[i] <= thresholds.get(&c.triple.relation) {
            by_rel.entry(&c.triple.relation).or_default().push(i);
        }
    }
    by_rel
        .into_values()
        .map(|mut pool| {
            pool.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            // Guard against 0.7 * 10 = 7.000000000000001.
            let keep = ((keep_fraction * pool.len() as f64) - 1e-9).ceil().max(0.0) as usize;
            pool.truncate(keep.min(pool.len()));
            pool
        })
        .collect()
}

/// Seeded shuffle of all candidates.
pub fn rank_none(candidates: &[Candidate], seed: u64) -> Vec<RankedCandidate> {
    let mut items: Vec<(Candidate, f64)> = candidates.iter().map(|c| (c.clone(), 0.0)).collect();
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    assign_ranks(items, RankMethod::None)
}

/// L2 norm of the loss gradient when `candidate` is labeled positive.
pub fn gradient_magnitude(scorer: &TripleScorer, candidate: &Candidate, scope: GradientScope) -> f64 {
    scorer.loss_and_gradient(&candidate.triple, true).1.norm(scope)
}

/// Ranks all candidates by descending gradient magnitude.
pub fn rank_grad(scorer: &TripleScorer, candidates: &[Candidate], scope: GradientScope) -> Vec<RankedCandidate> {
    let keys: Vec<f64> = candidates
        .iter()
        .map(|c| gradient_magnitude(scorer, c, scope))
        .collect();
    rank_by_keys(candidates, &keys, RankMethod::Grad)
}

pub fn rank_by_keys(candidates: &[Candidate], keys: &[f64], method: RankMethod) -> Vec<RankedCandidate> {
    let items = descending_order(keys)
        .into_iter()
        .map(|i| (candidates[i].clone(), keys[i]))
        .collect();
    assign_ranks(items, method)
}

/// Positive-label loss next to gradient magnitude for each candidate, for
/// comparing the two as ranking keys.
pub fn loss_vs_gradient(scorer: &TripleScorer, candidates: &[Candidate]) -> Vec<(f64, f64)> {
    candidates
        .iter()
        .map(|c| {
            let (loss, grad) = scorer.loss_and_gradient(&c.triple, true);
            (loss, grad.norm(GradientScope::Full))
        })
        .collect()
}

pub use crate::stats::{pearson, spearman};

/// One-hidden-layer regressor from pooled triple vectors to gradient
/// magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPredictor {
    pub input_dim: usize,
    pub width: usize,
    pub activation: Activation,
    /// `width × input_dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    /// Number of training examples.
    pub n: usize,
    /// Mean absolute error on the training examples after fitting.
    pub train_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            epochs: 100,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl GradientPredictor {
    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        (0..self.width)
            .map(|i| self.activation.apply(dot(&self.w1[i * d..(i + 1) * d], x) + self.b1[i]))
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(dot(&self.w2, &self.hidden(x)) + self.b2)
    }

    /// Fits by mini-batch Adagrad on mean absolute error. The output layer
    /// starts at zero, so the initial prediction is the target median.
    pub fn fit(
        features: &[Vec<f64>],
        targets: &[f64],
        width: usize,
        activation: Activation,
        config: &PredictorConfig,
    ) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::InvalidArgument("features/targets length mismatch".into()));
        }
        if features.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "predictor needs at least 2 examples, got {}",
                features.len()
            )));
        }
        let d = features[0].len();
        if let Some(bad) = features.iter().find(|f| f.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: bad.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = (6.0 / (d + width) as f64).sqrt();
        let mut sorted = targets.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        // Fit on targets centered at the median and scaled by their mean
        // absolute deviation, then fold both back into the output layer.
        let spread = match targets.iter().map(|y| (y - median).abs()).sum::<f64>() / targets.len() as f64 {
            s if s > 0.0 => s,
            _ => 1.0,
        };
        let ys: Vec<f64> = targets.iter().map(|y| (y - median) / spread).collect();
        let mut model = GradientPredictor {
            input_dim: d,
            width,
            activation,
            w1: (0..width * d).map(|_| rng.gen_range(-scale..scale)).collect(),
            b1: vec![0.0; width],
            w2: vec![0.0; width],
            b2: 0.0,
            n: features.len(),
            train_mae: 0.0,
        };

        let mut acc_w1 = vec![0.0; model.w1.len()];
        let mut acc_b1 = vec![0.0; width];
        let mut acc_w2 = vec![0.0; width];
        let mut acc_b2 = 0.0;
        let mut g_w1 = vec![0.0; model.w1.len()];
        let mut g_b1 = vec![0.0; width];
        let mut g_w2 = vec![0.0; width];
        let lr = config.learning_rate;
        let upd = |p: &mut f64, acc: &mut f64, g: f64| {
            *acc += g * g;
            *p -= lr * g / (acc.sqrt() + 1e-8);
        };
        let mut order: Vec<usize> = (0..features.len()).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size.max(1)) {
                g_w1.fill(0.0);
                g_b1.fill(0.0);
                g_w2.fill(0.0);
                let mut g_b2 = 0.0;
                for &i in batch {
                    let x = &features[i];
                    let h = model.hidden(x);
                    let pred = dot(&model.w2, &h) + model.b2;
                    let diff = pred - ys[i];
                    let s = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    if s == 0.0 {
                        continue;
                    }
                    g_b2 += s;
                    for j in 0..width {
                        g_w2[j] += s * h[j];
                        let da = s * model.w2[j] * activation.derivative_from_output(h[j]);
                        if da == 0.0 {
                            continue;
                        }
                        g_b1[j] += da;
                        for (g, xv) in g_w1[j * d..(j + 1) * d].iter_mut().zip(x) {
                            *g += da * xv;
                        }
                    }
                }
                let inv = 1.0 / batch.len() as f64;
                for (j, g) in g_w1.iter().enumerate() {
                    if *g != 0.0 {
                        upd(&mut model.w1[j], &mut acc_w1[j], g * inv);
                    }
                }
                for j in 0..width {
                    upd(&mut model.b1[j], &mut acc_b1[j], g_b1[j] * inv);
                    upd(&mut model.w2[j], &mut acc_w2[j], g_w2[j] * inv);
                }
                upd(&mut model.b2, &mut acc_b2, g_b2 * inv);
            }
        }
        model.w2.iter_mut().for_each(|w| *w *= spread);
        model.b2 = median + spread * model.b2;
        let mae: f64 = features
            .iter()
            .zip(targets)
            .map(|(x, y)| (dot(&model.w2, &model.hidden(x)) + model.b2 - y).abs())
            .sum::<f64>()
            / features.len() as f64;
        model.train_mae = mae;
        Ok(model)
    }
}

/// Samples `n` candidates without replacement, computes their pooled vectors
/// and true gradient magnitudes, and fits a regressor of width `H`.
pub fn fit_gradient_predictor(
    scorer: &TripleScorer,
    candidates: &[Candidate],
    n: usize,
    config: &PredictorConfig,
) -> Result<GradientPredictor> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("predictor sample size must be >= 2, got {n}")));
    }
    if n > candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "predictor sample size {n} exceeds {} candidates",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut picked = rand::seq::index::sample(&mut rng, candidates.len(), n).into_vec();
    picked.sort_unstable();
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in picked {
        let c = &candidates[i];
        features.push(scorer.encode(&c.triple));
        targets.push(gradient_magnitude(scorer, c, GradientScope::Full));
    }
    GradientPredictor::fit(&features, &targets, scorer.hidden(), scorer.params.activation, config)
}

/// Ranks by predicted gradient magnitude using forward passes only.
pub fn rank_grad_fast(
    scorer: &TripleScorer,
    predictor: &GradientPredictor,
    candidates: &[Candidate],
) -> Result<Vec<RankedCandidate>> {
    if predictor.input_dim != scorer.hidden() {
        return Err(Error::DimensionMismatch {
            expected: scorer.hidden(),
            actual: predictor.input_dim,
        });
    }
    let keys = candidates
        .iter()
        .map(|c| predictor.predict(&scorer.encode(&c.triple)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(rank_by_keys(candidates, &keys, RankMethod::GradFast))
}

/// Writes `rank<TAB>relation<TAB>head<TAB>tail<TAB>key<TAB>method` lines.
pub fn write_ranked_tsv<W: Write>(mut w: W, ranked: &[RankedCandidate]) -> std::io::Result<()> {
    for r in ranked {
        let t = &r.candidate.triple;
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.rank,
            t.relation,
            t.head,
            t.tail,
            r.key,
            r.method.as_str()
        )?;
    }
    Ok(())
}
