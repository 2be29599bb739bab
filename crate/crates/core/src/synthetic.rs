//! Planted-rule KB generator for experiments and tests.
//!
//! Phrases are `ty<T> w<N>`: a type token plus an item token. Items belong to
//! latent clusters that never appear in the text. Each relation links a head
//! type to a tail type, and a hidden rule maps every head cluster to one tail
//! cluster. Positives follow the rule; negated statements (`Not<R>`) follow a
//! second rule that always picks a wrong cluster of the right type.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kb::{LabeledTriple, Triple};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedRuleConfig {
    pub relations: usize,
    pub types: usize,
    pub clusters_per_type: usize,
    pub items_per_cluster: usize,
    pub positives_per_relation: usize,
    /// Negated statements per relation before the split.
    pub negatives_per_relation: usize,
    /// Draw a random cluster map per relation; otherwise every relation maps
    /// cluster `c` to cluster `c`.
    pub permuted_rules: bool,
    pub seed: u64,
}

impl Default for PlantedRuleConfig {
    fn default() -> Self {
        PlantedRuleConfig {
            relations: 10,
            types: 3,
            clusters_per_type: 4,
            items_per_cluster: 20,
            positives_per_relation: 320,
            negatives_per_relation: 60,
            permuted_rules: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedRule {
    pub relation: String,
    pub head_type: usize,
    pub tail_type: usize,
    /// Head cluster → true tail cluster.
    pub truth: Vec<usize>,
    /// Head cluster → wrong tail cluster used for negated statements.
    pub falsehood: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PlantedRuleKb {
    pub rules: Vec<PlantedRule>,
    /// Positives under `R<i>` and negated statements under `NotR<i>`, all
    /// labeled true as asserted.
    pub triples: Vec<LabeledTriple>,
}

impl PlantedRuleKb {
    /// Item token of cluster `c` (of type `ty`), item `i`.
    pub fn phrase(cfg: &PlantedRuleConfig, ty: usize, c: usize, i: usize) -> String {
        let item = (ty * cfg.clusters_per_type + c) * cfg.items_per_cluster + i;
        format!("ty{ty} w{item}")
    }

    /// Whether `triple` follows its relation's true rule.
    pub fn holds(&self, cfg: &PlantedRuleConfig, triple: &Triple) -> Option<bool> {
        let rule = self.rules.iter().find(|r| r.relation == triple.relation.name())?;
        let (hty, hc) = cluster_of(cfg, &triple.head.to_string())?;
        let (tty, tc) = cluster_of(cfg, &triple.tail.to_string())?;
        Some(hty == rule.head_type && tty == rule.tail_type && rule.truth[hc] == tc)
    }
}

fn cluster_of(cfg: &PlantedRuleConfig, phrase: &str) -> Option<(usize, usize)> {
    let item: usize = phrase.split(' ').nth(1)?.strip_prefix('w')?.parse().ok()?;
    let global = item / cfg.items_per_cluster;
    Some((global / cfg.clusters_per_type, global % cfg.clusters_per_type))
}

pub fn planted_rule_kb(cfg: &PlantedRuleConfig) -> Result<PlantedRuleKb> {
    if cfg.clusters_per_type < 2 || cfg.types == 0 || cfg.items_per_cluster == 0 || cfg.relations == 0 {
        return Err(Error::InvalidArgument(
            "planted-rule KB needs >= 2 clusters per type and non-zero sizes".into(),
        ));
    }
    let combos = cfg.clusters_per_type * cfg.items_per_cluster * cfg.items_per_cluster;
    if cfg.positives_per_relation > combos || cfg.negatives_per_relation > combos {
        return Err(Error::InvalidArgument(format!(
            "at most {combos} distinct statements per relation"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.clusters_per_type;
    let mut rules = Vec::with_capacity(cfg.relations);
    let mut triples = Vec::new();
    for r in 0..cfg.relations {
        let head_type = rng.gen_range(0..cfg.types);
        let tail_type = rng.gen_range(0..cfg.types);
        let mut truth: Vec<usize> = (0..c).collect();
        if cfg.permuted_rules {
            truth.shuffle(&mut rng);
        }
        let falsehood: Vec<usize> = truth.iter().map(|&t| (t + rng.gen_range(1..c)) % c).collect();
        let rule = PlantedRule {
            relation: format!("R{r}"),
            head_type,
            tail_type,
            truth,
            falsehood,
        };
        for (name, map, n) in [
            (rule.relation.clone(), &rule.truth, cfg.positives_per_relation),
            (format!("Not{}", rule.relation), &rule.falsehood, cfg.negatives_per_relation),
        ] {
            let picked = rand::seq::index::sample(&mut rng, combos, n).into_vec();
            for idx in picked {
                let hc = idx / (cfg.items_per_cluster * cfg.items_per_cluster);
                let hi = (idx / cfg.items_per_cluster) % cfg.items_per_cluster;
                let ti = idx % cfg.items_per_cluster;
                let head = PlantedRuleKb::phrase(cfg, head_type, hc, hi);
                let tail = PlantedRuleKb::phrase(cfg, tail_type, map[hc], ti);
                triples.push(LabeledTriple::positive(Triple::parse(&head, &name, &tail)?));
            }
        }
        rules.push(rule);
    }
    Ok(PlantedRuleKb { rules, triples })
}
