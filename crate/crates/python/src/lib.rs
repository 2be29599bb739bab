//! Python module `negmine`: knowledge bases, the triple scorer, candidate
//! generation, ranking, the evaluation harness and the statistics helpers.
//! Triples cross the boundary as `(head, relation, tail)` string tuples.

use std::fs::File;
use std::io::{BufReader, BufWriter};

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;

use negmine_core::candidates::{generate_candidates, Candidate};
use negmine_core::checkpoint::{read_checkpoint, write_checkpoint};
use negmine_core::eval::{run_experiment_with_miner, EvaluationReport, ExperimentConfig, Metric, Miner, SamplerId};
use negmine_core::kb::{
    build_true_negative_split, load_tsv_with, KnowledgeBase, LabeledTriple, Splits, TrueNegativeOptions, Triple,
};
use negmine_core::rankers::{
    fit_gradient_predictor, gradient_magnitude, rank_grad, rank_grad_fast, rank_none, rank_theta, PredictorConfig,
    RankMethod, RankedCandidate, ThetaOptions,
};
use negmine_core::retrieval::PhraseIndex;
use negmine_core::samplers::AntonymLexicon;
use negmine_core::scorer::{fit_thresholds, train_contrastive, GradientScope, TokenVocab, TrainConfig, TripleScorer};
use negmine_core::synthetic::{planted_rule_kb, PlantedRuleConfig};
use negmine_core::{stats, Error};

create_exception!(negmine, NegmineError, PyException, "Raised when an operation violates a library invariant.");

type TripleTuple = (String, String, String);
type LabeledTuple = (String, String, String, bool);

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyOSError::new_err(err.to_string()),
        Error::SourceExhausted { .. } | Error::NonFiniteLoss { .. } | Error::DuplicatePhrase(_) => {
            NegmineError::new_err(err.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn triple((h, r, t): &TripleTuple) -> PyResult<Triple> {
    Triple::parse(h, r, t).map_err(to_py)
}

fn tuple(t: &Triple) -> TripleTuple {
    (t.head.to_string(), t.relation.to_string(), t.tail.to_string())
}

fn labeled(rows: &[LabeledTuple]) -> PyResult<Vec<LabeledTriple>> {
    rows.iter()
        .map(|(h, r, t, label)| {
            Ok(LabeledTriple {
                triple: Triple::parse(h, r, t).map_err(to_py)?,
                label: *label,
            })
        })
        .collect()
}

fn labeled_tuples(rows: &[LabeledTriple]) -> Vec<LabeledTuple> {
    rows.iter()
        .map(|lt| {
            let (h, r, t) = tuple(&lt.triple);
            (h, r, t, lt.label)
        })
        .collect()
}

/// Positive triples plus optional train/validation/test splits.
#[pyclass(module = "negmine", name = "KnowledgeBase", frozen)]
struct PyKnowledgeBase {
    inner: KnowledgeBase,
}

#[pymethods]
impl PyKnowledgeBase {
    /// Builds a KB from positive `(head, relation, tail)` tuples.
    #[new]
    fn new(triples: Vec<TripleTuple>) -> PyResult<Self> {
        let parsed = triples.iter().map(triple).collect::<PyResult<Vec<_>>>()?;
        Ok(PyKnowledgeBase {
            inner: KnowledgeBase::new(parsed),
        })
    }

    /// Rewrites negated relations into labeled negatives and splits the
    /// statements; the KB holds the training positives.
    #[staticmethod]
    #[pyo3(signature = (statements, negation_prefix = "Not", seed = 0, per_relation_balance = true))]
    fn from_statements(
        statements: Vec<LabeledTuple>,
        negation_prefix: &str,
        seed: u64,
        per_relation_balance: bool,
    ) -> PyResult<Self> {
        let opts = TrueNegativeOptions {
            negation_prefix: negation_prefix.to_string(),
            seed,
            per_relation_balance,
        };
        let splits = build_true_negative_split(&labeled(&statements)?, &opts).map_err(to_py)?;
        Ok(PyKnowledgeBase {
            inner: KnowledgeBase::from_splits(splits),
        })
    }

    /// Loads a TSV and splits it as [`from_statements`] does.
    #[staticmethod]
    #[pyo3(signature = (path, labeled = false, columns = "rht", negation_prefix = "Not", seed = 0))]
    fn from_tsv(path: &str, labeled: bool, columns: &str, negation_prefix: &str, seed: u64) -> PyResult<Self> {
        let loaded = load_tsv_with(path, labeled, parse(columns)?).map_err(to_py)?;
        let opts = TrueNegativeOptions {
            negation_prefix: negation_prefix.to_string(),
            seed,
            ..TrueNegativeOptions::default()
        };
        let splits = build_true_negative_split(&loaded.triples, &opts).map_err(to_py)?;
        Ok(PyKnowledgeBase {
            inner: KnowledgeBase::from_splits(splits),
        })
    }

    /// KB from explicit labeled splits of `(head, relation, tail, label)`.
    #[staticmethod]
    fn from_splits(
        train: Vec<LabeledTuple>,
        validation: Vec<LabeledTuple>,
        test: Vec<LabeledTuple>,
    ) -> PyResult<Self> {
        Ok(PyKnowledgeBase {
            inner: KnowledgeBase::from_splits(Splits {
                train: labeled(&train)?,
                validation: labeled(&validation)?,
                test: labeled(&test)?,
            }),
        })
    }

    /// Planted-rule synthetic KB, already split.
    #[staticmethod]
    #[pyo3(signature = (relations = 10, positives_per_relation = 320, negatives_per_relation = 60, items_per_cluster = 20, seed = 0))]
    fn synthetic(
        relations: usize,
        positives_per_relation: usize,
        negatives_per_relation: usize,
        items_per_cluster: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = PlantedRuleConfig {
            relations,
            positives_per_relation,
            negatives_per_relation,
            items_per_cluster,
            seed,
            ..PlantedRuleConfig::default()
        };
        let data = planted_rule_kb(&cfg).map_err(to_py)?;
        let splits = build_true_negative_split(&data.triples, &TrueNegativeOptions::default()).map_err(to_py)?;
        Ok(PyKnowledgeBase {
            inner: KnowledgeBase::from_splits(splits),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, t: TripleTuple) -> PyResult<bool> {
        Ok(self.inner.contains(&triple(&t)?))
    }

    fn triples(&self) -> Vec<TripleTuple> {
        self.inner.triples().iter().map(tuple).collect()
    }

    fn relations(&self) -> Vec<String> {
        self.inner.relations().iter().map(|r| r.to_string()).collect()
    }

    fn phrases(&self) -> Vec<String> {
        self.inner.phrases().iter().map(|p| p.to_string()).collect()
    }

    #[getter]
    fn train(&self) -> Vec<LabeledTuple> {
        labeled_tuples(&self.inner.splits().train)
    }

    #[getter]
    fn validation(&self) -> Vec<LabeledTuple> {
        labeled_tuples(&self.inner.splits().validation)
    }

    #[getter]
    fn test(&self) -> Vec<LabeledTuple> {
        labeled_tuples(&self.inner.splits().test)
    }

    fn __repr__(&self) -> String {
        format!(
            "KnowledgeBase(triples={}, relations={}, phrases={})",
            self.inner.len(),
            self.inner.relations().len(),
            self.inner.phrases().len()
        )
    }
}

/// Differentiable triple scorer with per-relation thresholds.
#[pyclass(module = "negmine", name = "Scorer")]
struct PyScorer {
    inner: TripleScorer,
}

#[pymethods]
impl PyScorer {
    /// Untrained scorer over the vocabulary of `kb`.
    #[new]
    #[pyo3(signature = (kb, hidden = 16, activation = "tanh", seed = 0))]
    fn new(kb: &PyKnowledgeBase, hidden: usize, activation: &str, seed: u64) -> PyResult<Self> {
        let vocab = TokenVocab::build(kb.inner.triples());
        let inner = TripleScorer::with_activation(vocab, hidden, parse(activation)?, seed).map_err(to_py)?;
        Ok(PyScorer { inner })
    }

    /// Contrastive training on the KB positives; returns per-epoch losses.
    #[pyo3(signature = (kb, epochs = 60, learning_rate = 0.2, batch_size = 64, corruption = "entities", corruptions_per_positive = 1, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        kb: &PyKnowledgeBase,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        corruption: &str,
        corruptions_per_positive: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let cfg = TrainConfig {
            epochs,
            learning_rate,
            batch_size,
            corruption: parse(corruption)?,
            negatives_per_positive: corruptions_per_positive,
            seed,
            ..TrainConfig::default()
        };
        let scorer = &mut self.inner;
        let report = py.detach(|| train_contrastive(scorer, &kb.inner, &cfg)).map_err(to_py)?;
        Ok(report.epoch_losses)
    }

    /// Fits per-relation thresholds on labeled `(head, relation, tail, label)`
    /// rows, or on the KB's validation split when none are given.
    #[pyo3(signature = (kb = None, validation = None))]
    fn fit_thresholds(&mut self, kb: Option<&PyKnowledgeBase>, validation: Option<Vec<LabeledTuple>>) -> PyResult<()> {
        let rows = match (validation, kb) {
            (Some(v), _) => labeled(&v)?,
            (None, Some(kb)) => kb.inner.splits().validation.clone(),
            (None, None) => return Err(PyValueError::new_err("pass a KB or validation rows")),
        };
        self.inner.thresholds = fit_thresholds(&self.inner, &rows).map_err(to_py)?;
        Ok(())
    }

    fn thresholds(&self) -> Vec<(String, f64)> {
        self.inner.thresholds.iter().map(|(r, v)| (r.to_string(), v)).collect()
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.hidden()
    }

    fn score(&self, t: TripleTuple) -> PyResult<f64> {
        Ok(self.inner.score(&triple(&t)?))
    }

    fn classify(&self, t: TripleTuple) -> PyResult<bool> {
        Ok(self.inner.classify(&triple(&t)?))
    }

    /// Encoder output for a triple.
    fn encode(&self, t: TripleTuple) -> PyResult<Vec<f64>> {
        Ok(self.inner.encode(&triple(&t)?))
    }

    /// Norm of the loss gradient for labeling `t` false.
    #[pyo3(signature = (t, scope = "full"))]
    fn gradient_magnitude(&self, t: TripleTuple, scope: &str) -> PyResult<f64> {
        let tr = triple(&t)?;
        let cand = Candidate {
            source: tr.clone(),
            triple: tr,
            slot: negmine_core::kb::Slot::Head,
            neighbor_rank: 1,
        };
        let scope: GradientScope = parse(scope)?;
        Ok(gradient_magnitude(&self.inner, &cand, scope))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        write_checkpoint(BufWriter::new(f), &self.inner).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        let inner = read_checkpoint(BufReader::new(f)).map_err(to_py)?;
        Ok(PyScorer { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scorer(hidden={}, vocab={}, thresholds={})",
            self.inner.hidden(),
            self.inner.vocab.len(),
            self.inner.thresholds.len()
        )
    }
}

/// Out-of-KB candidate derived from a positive by one substitution.
#[pyclass(module = "negmine", name = "Candidate", frozen, from_py_object)]
#[derive(Clone)]
struct PyCandidate {
    inner: Candidate,
}

#[pymethods]
impl PyCandidate {
    #[getter]
    fn triple(&self) -> TripleTuple {
        tuple(&self.inner.triple)
    }

    #[getter]
    fn source(&self) -> TripleTuple {
        tuple(&self.inner.source)
    }

    #[getter]
    fn slot(&self) -> &'static str {
        self.inner.slot.as_str()
    }

    #[getter]
    fn neighbor_rank(&self) -> usize {
        self.inner.neighbor_rank
    }

    fn __repr__(&self) -> String {
        let (h, r, t) = tuple(&self.inner.triple);
        format!("Candidate(({h:?}, {r:?}, {t:?}), slot={})", self.inner.slot.as_str())
    }
}

#[pyclass(module = "negmine", name = "RankedCandidate", frozen)]
struct PyRanked {
    inner: RankedCandidate,
}

#[pymethods]
impl PyRanked {
    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank
    }

    #[getter]
    fn key(&self) -> f64 {
        self.inner.key
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.as_str()
    }

    #[getter]
    fn candidate(&self) -> PyCandidate {
        PyCandidate {
            inner: self.inner.candidate.clone(),
        }
    }

    #[getter]
    fn triple(&self) -> TripleTuple {
        tuple(&self.inner.candidate.triple)
    }

    fn __repr__(&self) -> String {
        let (h, r, t) = tuple(&self.inner.candidate.triple);
        format!("RankedCandidate({}, ({h:?}, {r:?}, {t:?}), key={})", self.inner.rank, self.inner.key)
    }
}

/// Nearest-neighbor substitution candidates for every KB positive.
#[pyfunction]
#[pyo3(signature = (kb, scorer, k = 10))]
fn candidates(kb: &PyKnowledgeBase, scorer: &PyScorer, k: usize) -> PyResult<Vec<PyCandidate>> {
    let phrases: Vec<_> = kb.inner.phrases().iter().cloned().collect();
    let index = PhraseIndex::build(&phrases, |p| scorer.inner.embed_phrase(p)).map_err(to_py)?;
    Ok(generate_candidates(&kb.inner, &index, k)
        .into_iter()
        .map(|inner| PyCandidate { inner })
        .collect())
}

/// Ranks candidates with `theta`, `grad`, `grad-fast` or `none`.
#[pyfunction]
#[pyo3(signature = (scorer, candidates, method = "theta", keep_fraction = 0.5, shuffle = true, n = 200, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn rank(
    py: Python<'_>,
    scorer: &PyScorer,
    candidates: Vec<PyCandidate>,
    method: &str,
    keep_fraction: f64,
    shuffle: bool,
    n: usize,
    seed: u64,
) -> PyResult<Vec<PyRanked>> {
    let method: RankMethod = parse(method)?;
    let cands: Vec<Candidate> = candidates.into_iter().map(|c| c.inner).collect();
    let s = &scorer.inner;
    let ranked = py
        .detach(|| match method {
            RankMethod::Theta => rank_theta(
                s,
                &cands,
                &ThetaOptions {
                    keep_fraction,
                    shuffle,
                    seed,
                },
            ),
            RankMethod::Grad => Ok(rank_grad(s, &cands, GradientScope::Full)),
            RankMethod::GradFast => {
                let cfg = PredictorConfig {
                    seed,
                    ..PredictorConfig::default()
                };
                fit_gradient_predictor(s, &cands, n, &cfg).and_then(|p| rank_grad_fast(s, &p, &cands))
            }
            RankMethod::None => Ok(rank_none(&cands, seed)),
        })
        .map_err(to_py)?;
    Ok(ranked.into_iter().map(|inner| PyRanked { inner }).collect())
}

/// Per-sampler trial metrics with Welch p-values against the baseline.
#[pyclass(module = "negmine", name = "Report", frozen)]
struct PyReport {
    inner: EvaluationReport,
}

#[pymethods]
impl PyReport {
    fn samplers(&self) -> Vec<String> {
        self.inner.results.iter().map(|r| r.sampler.to_string()).collect()
    }

    /// Per-trial values of `metric` (`accuracy`, `precision` or `recall`).
    #[pyo3(signature = (sampler, metric = "accuracy"))]
    fn values(&self, sampler: &str, metric: &str) -> PyResult<Vec<f64>> {
        let metric = match metric {
            "accuracy" => Metric::Accuracy,
            "precision" => Metric::Precision,
            "recall" => Metric::Recall,
            other => return Err(PyValueError::new_err(format!("unknown metric {other:?}"))),
        };
        let id: SamplerId = parse(sampler)?;
        let r = self
            .inner
            .result(id)
            .ok_or_else(|| PyValueError::new_err(format!("{sampler} was not evaluated")))?;
        Ok(r.values(metric))
    }

    fn p_value(&self, sampler: &str) -> PyResult<Option<f64>> {
        Ok(self.inner.p_value(parse(sampler)?))
    }

    fn tsv(&self) -> String {
        let mut buf = Vec::new();
        self.inner.write_tsv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("report is UTF-8")
    }

    fn summary(&self) -> String {
        self.inner.render_summary()
    }

    fn __repr__(&self) -> String {
        format!("Report(samplers={:?})", self.samplers())
    }
}

/// Trains and tests a classifier per sampler and trial on the KB splits.
#[pyfunction]
#[pyo3(signature = (kb, samplers, trials = 5, baseline = Some("uniform"), seed = 0, hidden = 16, epochs = 60, learning_rate = 0.2, k = 10, threads = 1, lexicon = None, scorer = None, candidates = None))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    py: Python<'_>,
    kb: &PyKnowledgeBase,
    samplers: Vec<String>,
    trials: usize,
    baseline: Option<&str>,
    seed: u64,
    hidden: usize,
    epochs: usize,
    learning_rate: f64,
    k: usize,
    threads: usize,
    lexicon: Option<&str>,
    scorer: Option<&PyScorer>,
    candidates: Option<Vec<PyCandidate>>,
) -> PyResult<PyReport> {
    let defaults = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        samplers: samplers.iter().map(|s| parse(s)).collect::<PyResult<_>>()?,
        baseline: baseline.map(parse).transpose()?,
        trials,
        seed,
        hidden,
        k,
        threads,
        train: TrainConfig {
            epochs,
            learning_rate,
            ..defaults.train.clone()
        },
        miner: TrainConfig {
            epochs,
            learning_rate,
            ..defaults.miner.clone()
        },
        ..defaults
    };
    let lexicon = lexicon.map(AntonymLexicon::load).transpose().map_err(to_py)?;
    let miner = match (scorer, candidates) {
        (Some(s), Some(c)) => Some(Miner {
            scorer: s.inner.clone(),
            candidates: c.into_iter().map(|c| c.inner).collect(),
        }),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("pass both scorer and candidates, or neither")),
    };
    let kb = &kb.inner;
    let report = py
        .detach(|| match miner {
            Some(m) => run_experiment_with_miner(kb, &cfg, lexicon.as_ref(), Some(&m)),
            None => negmine_core::eval::run_experiment(kb, &cfg, lexicon.as_ref()),
        })
        .map_err(to_py)?;
    Ok(PyReport { inner: report })
}

/// Welch two-sided t-test: returns `(t, df, p)`.
#[pyfunction]
fn t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = stats::t_test_two_sided(&a, &b).map_err(to_py)?;
    Ok((r.t, r.df, r.p))
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    stats::pearson(&x, &y).map_err(to_py)
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    stats::spearman(&x, &y).map_err(to_py)
}

#[pymodule]
pub fn negmine(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NegmineError", m.py().get_type::<NegmineError>())?;
    m.add("SAMPLERS", SamplerId::ALL.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
    m.add_class::<PyKnowledgeBase>()?;
    m.add_class::<PyScorer>()?;
    m.add_class::<PyCandidate>()?;
    m.add_class::<PyRanked>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(candidates, m)?)?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(t_test, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    Ok(())
}
