use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kb::{LabeledTriple, Relation};

use super::TripleScorer;

/// Per-relation decision thresholds with a global fallback. A triple is
/// positive iff its score is strictly greater than its relation's threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdMap {
    per_relation: BTreeMap<Relation, f64>,
    fallback: f64,
}

impl Default for ThresholdMap {
    fn default() -> Self {
        ThresholdMap::new(0.5)
    }
}

impl ThresholdMap {
    pub fn new(fallback: f64) -> Self {
        ThresholdMap {
            per_relation: BTreeMap::new(),
            fallback,
        }
    }

    pub fn fallback(&self) -> f64 {
        self.fallback
    }

    pub fn set(&mut self, relation: Relation, threshold: f64) {
        self.per_relation.insert(relation, threshold);
    }

    pub fn get(&self, relation: &Relation) -> f64 {
        self.per_relation.get(relation).copied().unwrap_or(self.fallback)
    }

    pub fn has_entry(&self, relation: &Relation) -> bool {
        self.per_relation.contains_key(relation)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Relation, f64)> {
        self.per_relation.iter().map(|(r, t)| (r, *t))
    }

    pub fn len(&self) -> usize {
        self.per_relation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_relation.is_empty()
    }

    pub fn is_positive(&self, relation: &Relation, score: f64) -> bool {
        score > self.get(relation)
    }
}

/// Threshold maximizing accuracy over `(score, label)` pairs.
///
/// Candidates are midpoints between adjacent distinct scores, plus one below
/// the smallest and one above the largest (using 0 and 1 as the outer points
/// when they lie outside the data). Ties on accuracy go to the widest gap,
/// then to the lower threshold. Returns `(threshold, accuracy)`.
pub fn best_threshold(examples: &[(f64, bool)]) -> (f64, f64) {
    if examples.is_empty() {
        return (0.5, 0.0);
    }
    let mut sorted: Vec<(f64, bool)> = examples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Distinct scores with their (positive, negative) counts.
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for &(s, label) in &sorted {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if label {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, usize::from(label), usize::from(!label))),
        }
    }
    let lo = if groups[0].0 > 0.0 { 0.0 } else { groups[0].0 - 1.0 };
    let last = groups[groups.len() - 1].0;
    let hi = if last < 1.0 { 1.0 } else { last + 1.0 };

    let total_pos: usize = groups.iter().map(|g| g.1).sum();
    // Threshold below everything: all predicted positive.
    let mut correct = total_pos;
    let mut best = ((lo + groups[0].0) / 2.0, correct, groups[0].0 - lo);
    for (i, g) in groups.iter().enumerate() {
        // Moving the threshold above group i flips it to negative.
        correct = correct - g.1 + g.2;
        let next = groups.get(i + 1).map_or(hi, |n| n.0);
        let gap = next - g.0;
        let theta = (g.0 + next) / 2.0;
        if correct > best.1 || (correct == best.1 && gap > best.2) {
            best = (theta, correct, gap);
        }
    }
    (best.0, best.1 as f64 / examples.len() as f64)
}

/// Fits thresholds from precomputed `(relation, score, label)` rows.
pub fn fit_thresholds_from_scores(rows: &[(Relation, f64, bool)]) -> Result<ThresholdMap> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    let all: Vec<(f64, bool)> = rows.iter().map(|(_, s, l)| (*s, *l)).collect();
    let mut map = ThresholdMap::new(best_threshold(&all).0);
    let mut by_rel: BTreeMap<&Relation, Vec<(f64, bool)>> = BTreeMap::new();
    for (r, s, l) in rows {
        by_rel.entry(r).or_default().push((*s, *l));
    }
    for (rel, examples) in by_rel {
        let has_pos = examples.iter().any(|e| e.1);
        let has_neg = examples.iter().any(|e| !e.1);
        if has_pos && has_neg {
            map.set(rel.clone(), best_threshold(&examples).0);
        }
    }
    Ok(map)
}

/// Fits per-relation thresholds maximizing validation accuracy. Relations
/// without both classes fall back to the global threshold.
pub fn fit_thresholds(scorer: &TripleScorer, validation: &[LabeledTriple]) -> Result<ThresholdMap> {
    let rows: Vec<(Relation, f64, bool)> = validation
        .iter()
        .map(|lt| (lt.triple.relation.clone(), scorer.score(&lt.triple), lt.label))
        .collect();
    fit_thresholds_from_scores(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accuracy_at(examples: &[(f64, bool)], theta: f64) -> f64 {
        let correct = examples.iter().filter(|(s, l)| (*s > theta) == *l).count();
        correct as f64 / examples.len() as f64
    }

    fn brute_force_best(examples: &[(f64, bool)]) -> f64 {
        (0..=1000)
            .map(|i| accuracy_at(examples, i as f64 / 1000.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn separable_picks_widest_midpoint() {
        let ex = [(0.9, true), (0.8, true), (0.4, false), (0.3, false)];
        let (theta, acc) = best_threshold(&ex);
        assert!((theta - 0.6).abs() < 1e-12);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn interleaved_matches_sweep() {
        let ex = [(0.9, true), (0.4, true), (0.6, false)];
        let (theta, acc) = best_threshold(&ex);
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
        assert!((accuracy_at(&ex, theta) - acc).abs() < 1e-12);
        assert!((brute_force_best(&ex) - acc).abs() < 1e-12);
        // 0.2 (gap 0.4 below 0.4) beats 0.75 (gap 0.3).
        assert!((theta - 0.2).abs() < 1e-12);
    }

    #[test]
    fn saturated_scores_still_separable() {
        let ex = [(1.0, true), (1.0, true), (0.0, false)];
        let (theta, acc) = best_threshold(&ex);
        assert_eq!(acc, 1.0);
        assert!(theta > 0.0 && theta < 1.0);
        // Everything saturated at 1.0 and negative: threshold must sit at or above 1.
        let ex = [(1.0, false), (1.0, false), (0.2, true)];
        let (theta, acc) = best_threshold(&ex);
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
        assert!(theta >= 1.0);
    }

    #[test]
    fn single_class_relation_uses_fallback() {
        let r1 = Relation::new("R1").unwrap();
        let r2 = Relation::new("R2").unwrap();
        let rows = vec![
            (r1.clone(), 0.9, true),
            (r1.clone(), 0.2, false),
            (r2.clone(), 0.7, true),
            (r2.clone(), 0.6, true),
        ];
        let map = fit_thresholds_from_scores(&rows).unwrap();
        assert!(map.has_entry(&r1));
        assert!(!map.has_entry(&r2));
        assert_eq!(map.get(&r2), map.fallback());
    }

    #[test]
    fn classification_is_strict() {
        let r = Relation::new("R").unwrap();
        let mut map = ThresholdMap::new(0.5);
        map.set(r.clone(), 0.6);
        assert!(map.is_positive(&r, 0.7));
        assert!(!map.is_positive(&r, 0.6));
        let unseen = Relation::new("Unseen").unwrap();
        assert!(map.is_positive(&unseen, 0.55));
        assert!(!map.is_positive(&unseen, 0.45));
    }

    #[test]
    fn empty_validation_is_an_error() {
        assert!(fit_thresholds_from_scores(&[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn never_worse_than_dense_sweep(
            ex in proptest::collection::vec((0.0f64..=1.0, proptest::bool::ANY), 1..40)
        ) {
            let (theta, acc) = best_threshold(&ex);
            proptest::prop_assert!((accuracy_at(&ex, theta) - acc).abs() < 1e-12);
            proptest::prop_assert!(acc + 1e-12 >= brute_force_best(&ex));
        }
    }
}
