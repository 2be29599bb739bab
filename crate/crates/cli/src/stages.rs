//! One function per subcommand. Each stage resolves and checks its inputs,
//! prints its plan and stops there under `--dry-run`, and otherwise takes the
//! output-directory lock and writes its artifacts atomically.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use negmine_core::candidates::{
    generate_candidates_with_stats, read_candidates_tsv, validate_candidates, write_candidates_tsv,
};
use negmine_core::checkpoint::{read_checkpoint, write_checkpoint};
use negmine_core::eval::{
    derive_seed, run_experiment_with_miner, sample_negatives, ExperimentConfig, Miner, SamplerId,
};
use negmine_core::kb::{
    build_true_negative_split, load_tsv, load_tsv_with, write_tsv, ColumnOrder, KnowledgeBase, LabeledTriple,
    Splits, TrueNegativeOptions,
};
use negmine_core::rankers::{
    fit_gradient_predictor, rank_grad, rank_grad_fast, rank_none, rank_theta, write_ranked_tsv, PredictorConfig,
    RankMethod, ThetaOptions,
};
use negmine_core::retrieval::PhraseIndex;
use negmine_core::samplers::AntonymLexicon;
use negmine_core::scorer::{
    fit_thresholds, train_contrastive, Activation, CorruptionMode, GradientScope, TokenVocab, TrainConfig,
    TripleScorer,
};

use crate::config::Settings;
use crate::failure::Failure;
use crate::output::{write_atomic, DirLock};

pub const SPLIT_FILES: [&str; 3] = ["train.tsv", "validation.tsv", "test.tsv"];

pub struct Run<'a> {
    pub settings: &'a Settings,
    pub dry_run: bool,
}

#[derive(Debug, Default)]
struct Plan {
    reads: Vec<(PathBuf, &'static str)>,
    writes: Vec<PathBuf>,
}

impl Plan {
    fn read(&mut self, path: PathBuf, what: &'static str) -> PathBuf {
        self.reads.push((path.clone(), what));
        path
    }

    fn write(&mut self, path: PathBuf) -> PathBuf {
        self.writes.push(path.clone());
        path
    }

    fn check_inputs(&self) -> Result<(), Failure> {
        for (path, what) in &self.reads {
            if !path.is_file() {
                return Err(Failure::missing(path, what));
            }
        }
        Ok(())
    }

    /// Checks inputs, then either prints the plan (dry run) or returns the
    /// output lock.
    fn begin(&self, run: &Run, stage: &str) -> Result<Option<DirLock>, Failure> {
        self.check_inputs()?;
        if run.dry_run {
            for (p, what) in &self.reads {
                println!("plan stage={stage} read={:?} as={what}", p.display().to_string());
            }
            for p in &self.writes {
                println!("plan stage={stage} write={:?}", p.display().to_string());
            }
            return Ok(None);
        }
        DirLock::acquire(&run.settings.out_dir()).map(Some)
    }
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn load_labeled(path: &Path) -> Result<Vec<LabeledTriple>, Failure> {
    Ok(load_tsv(path, true).map_err(|e| Failure::from(e).at(path))?.triples)
}

fn load_splits(paths: &[PathBuf]) -> Result<KnowledgeBase, Failure> {
    let mut parts = paths.iter().map(|p| load_labeled(p));
    let train = parts.next().transpose()?.unwrap_or_default();
    let validation = parts.next().transpose()?.unwrap_or_default();
    let test = parts.next().transpose()?.unwrap_or_default();
    let kb = KnowledgeBase::from_splits(Splits {
        train,
        validation,
        test,
    });
    if kb.is_empty() {
        return Err(Failure::invalid("training split has no positives").at(&paths[0]));
    }
    Ok(kb)
}

fn load_scorer(path: &Path) -> Result<TripleScorer, Failure> {
    let f = File::open(path).map_err(|e| Failure::read(path, &e))?;
    read_checkpoint(BufReader::new(f)).map_err(|e| Failure::from(e).at(path))
}

fn load_candidates(path: &Path) -> Result<Vec<negmine_core::candidates::Candidate>, Failure> {
    let f = File::open(path).map_err(|e| Failure::read(path, &e))?;
    read_candidates_tsv(BufReader::new(f)).map_err(|e| Failure::from(e).at(path))
}

fn save_scorer(path: &Path, scorer: &TripleScorer) -> Result<(), Failure> {
    write_atomic(path, |w| write_checkpoint(w, scorer))?;
    wrote(path);
    Ok(())
}

fn require_positive(s: &Settings, key: &str) -> Result<usize, Failure> {
    let v: usize = s.parse(key)?;
    if v == 0 {
        return Err(Failure::invalid(format!("{key} must be >= 1")));
    }
    Ok(v)
}

/// Training settings for the candidate scorer.
fn miner_training(s: &Settings) -> Result<TrainConfig, Failure> {
    let cfg = TrainConfig {
        epochs: s.parse("epochs")?,
        learning_rate: s.parse("learning_rate")?,
        batch_size: s.parse("batch_size")?,
        negatives_per_positive: s.parse("corruptions_per_positive")?,
        corruption: s.parse::<CorruptionMode>("corruption")?,
        seed: derive_seed(s.parse("seed")?, 1),
        ..TrainConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn experiment_config(s: &Settings, samplers: Vec<SamplerId>) -> Result<ExperimentConfig, Failure> {
    let train = TrainConfig {
        epochs: s.parse("epochs")?,
        learning_rate: s.parse("learning_rate")?,
        batch_size: s.parse("batch_size")?,
        ..TrainConfig::default()
    };
    let baseline = match s.get("baseline") {
        "" | "none" => None,
        _ => Some(s.parse::<SamplerId>("baseline")?),
    };
    let cfg = ExperimentConfig {
        samplers,
        baseline,
        trials: s.parse("trials")?,
        negatives_per_positive: s.parse("negatives_per_positive")?,
        hidden: s.parse("hidden")?,
        train,
        miner: miner_training(s)?,
        k: s.parse("k")?,
        keep_fraction: s.parse("keep_fraction")?,
        preserve_theta_order: s.parse("preserve_theta_order")?,
        grad_scope: s.parse::<GradientScope>("grad_scope")?,
        hops: s.parse("hops")?,
        seed: s.parse("seed")?,
        threads: require_positive(s, "threads")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn lexicon_path(s: &Settings, samplers: &[SamplerId], plan: &mut Plan) -> Result<Option<PathBuf>, Failure> {
    if !samplers.contains(&SamplerId::Antonyms) {
        return Ok(None);
    }
    match s.optional_path("lexicon") {
        Some(p) => Ok(Some(plan.read(p, "antonym lexicon"))),
        None => Err(Failure::invalid("the antonyms sampler needs `lexicon`")),
    }
}

fn load_lexicon(path: Option<&PathBuf>) -> Result<Option<AntonymLexicon>, Failure> {
    path.map(|p| AntonymLexicon::load(p).map_err(|e| Failure::from(e).at(p)))
        .transpose()
}

pub fn split(run: &Run) -> Result<(), Failure> {
    let s = run.settings;
    let mut plan = Plan::default();
    let kb_path = s
        .optional_path("kb")
        .ok_or_else(|| Failure::invalid("split needs `kb`, the input triple TSV"))?;
    let input = plan.read(kb_path, "knowledge base");
    let labeled: bool = s.parse("labeled")?;
    let order: ColumnOrder = s.parse("columns")?;
    let opts = TrueNegativeOptions {
        negation_prefix: s.get("negation_prefix").to_string(),
        seed: s.parse("seed")?,
        per_relation_balance: s.parse("per_relation_balance")?,
    };
    let dir = s.split_dir();
    let outputs: Vec<PathBuf> = SPLIT_FILES.iter().map(|f| plan.write(dir.join(f))).collect();
    let Some(_lock) = plan.begin(run, "split")? else {
        return Ok(());
    };
    let loaded = load_tsv_with(&input, labeled, order).map_err(|e| Failure::from(e).at(&input))?;
    let splits = build_true_negative_split(&loaded.triples, &opts)?;
    for (path, part) in outputs.iter().zip([&splits.train, &splits.validation, &splits.test]) {
        write_atomic(path, |w| write_tsv(w, part, true))?;
        wrote(path);
    }
    Ok(())
}

pub fn train(run: &Run) -> Result<(), Failure> {
    let s = run.settings;
    let mut plan = Plan::default();
    let train_path = plan.read(s.split_dir().join(SPLIT_FILES[0]), "training split");
    let hidden: usize = s.parse("hidden")?;
    let activation: Activation = s.parse("activation")?;
    let seed: u64 = s.parse("seed")?;
    let cfg = miner_training(s)?;
    let checkpoint = plan.write(s.checkpoint());
    let loss_path = plan.write(s.out_dir().join("train_loss.tsv"));
    let Some(_lock) = plan.begin(run, "train")? else {
        return Ok(());
    };
    let kb = load_splits(&[train_path])?;
    let mut scorer = TripleScorer::with_activation(TokenVocab::build(kb.triples()), hidden, activation, seed)?;
    let report = train_contrastive(&mut scorer, &kb, &cfg)?;
    save_scorer(&checkpoint, &scorer)?;
    write_atomic(&loss_path, |w| {
        writeln!(w, "epoch\tloss")?;
        for (i, l) in report.epoch_losses.iter().enumerate() {
            writeln!(w, "{}\t{l:.9}", i + 1)?;
        }
        Ok(())
    })?;
    wrote(&loss_path);
    Ok(())
}

pub fn thresholds(run: &Run) -> Result<(), Failure> {
    let s = run.settings;
    let mut plan = Plan::default();
    let checkpoint = plan.read(s.checkpoint(), "checkpoint");
    let validation_path = plan.read(s.split_dir().join(SPLIT_FILES[1]), "validation split");
    plan.write(checkpoint.clone());
    let table = plan.write(s.out_dir().join("thresholds.tsv"));
    let Some(_lock) = plan.begin(run, "thresholds")? else {
        return Ok(());
    };
    let mut scorer = load_scorer(&checkpoint)?;
    let validation = load_labeled(&validation_path)?;
    if validation.is_empty() {
        return Err(Failure::invalid("validation split is empty").at(&validation_path));
    }
    scorer.thresholds = fit_thresholds(&scorer, &validation)?;
    save_scorer(&checkpoint, &scorer)?;
    write_atomic(&table, |w| {
        writeln!(w, "relation\tthreshold")?;
        for (rel, v) in scorer.thresholds.iter() {
            writeln!(w, "{rel}\t{v:.9}")?;
        }
        writeln!(w, "*\t{:.9}", scorer.thresholds.fallback())
    })?;
    wrote(&table);
    Ok(())
}

pub fn candidates(run: &Run) -> Result<(), Failure> {
    let s = run.settings;
    let mut plan = Plan::default();
    let checkpoint = plan.read(s.checkpoint(), "checkpoint");
    let train_path = plan.read(s.split_dir().join(SPLIT_FILES[0]), "training split");
    let k = require_positive(s, "k")?;
    let out = plan.write(s.candidates());
    let Some(_lock) = plan.begin(run, "candidates")? else {
        return Ok(());
    };
    let scorer = load_scorer(&checkpoint)?;
    let kb = load_splits(&[train_path])?;
    let phrases: Vec<_> = kb.phrases().iter().cloned().collect();
    let index = PhraseIndex::build(&phrases, |p| scorer.embed_phrase(p))?;
    let generated = generate_candidates_with_stats(&kb, &index, k);
    let violations = validate_candidates(&kb, &generated.candidates, k);
    if !violations.is_clean() {
        return Err(Failure::invariant(format!("candidate filters violated: {violations:?}")));
    }
    write_atomic(&out, |w| write_candidates_tsv(w, &generated.candidates))?;
    wrote(&out);
    log::info!("{} candidates from {} positives", generated.candidates.len(), kb.len());
    Ok(())
}

pub fn rank(run: &Run) -> Result<(), Failure> {
    let s = run.settings;
    let mut plan = Plan::default();
    let checkpoint = plan.read(s.checkpoint(), "checkpoint");
    let cand_path = plan.read(s.candidates(), "candidates");
    let method: RankMethod = s.parse("method")?;
    let seed: u64 = s.parse("seed")?;
    let keep_fraction: f64 = s.parse("keep_fraction")?;
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Failure::invalid(format!("keep_fraction must be in (0, 1], got {keep_fraction}")));
    }
    let preserve: bool = s.parse("preserve_theta_order")?;
    let scope: GradientScope = s.parse("grad_scope")?;
    let n: usize = s.parse("n")?;
    let predictor = PredictorConfig {
        epochs: s.parse("predictor_epochs")?,
        learning_rate: s.parse("predictor_learning_rate")?,
        seed,
        ..PredictorConfig::default()
    };
    let out = plan.write(s.out_dir().join(format!("ranked.{}.tsv", method.as_str())));
    let Some(_lock) = plan.begin(run, "rank")? else {
        return Ok(());
    };
    let scorer = load_scorer(&checkpoint)?;
    let candidates = load_candidates(&cand_path)?;
    let ranked = match method {
        RankMethod::Theta => {
            if scorer.thresholds.is_empty() {
                return Err(Failure::invalid("checkpoint has no thresholds; run the thresholds stage first")
                    .at(&checkpoint));
            }
            let opts = ThetaOptions {
                keep_fraction,
                shuffle: !preserve,
                seed,
            };
            rank_theta(&scorer, &candidates, &opts)?
        }
        RankMethod::Grad => rank_grad(&scorer, &candidates, scope),
        RankMethod::GradFast => {
            let model = fit_gradient_predictor(&scorer, &candidates, n, &predictor)?;
            rank_grad_fast(&scorer, &model, &candidates)?
        }
        RankMethod::None => rank_none(&candidates, seed),
    };
    write_atomic(&out, |w| write_ranked_tsv(w, &ranked))?;
    wrote(&out);
    Ok(())
}

fn miner_inputs(s: &Settings, samplers: &[SamplerId], plan: &mut Plan) -> Option<(PathBuf, PathBuf)> {
    samplers.iter().any(|x| x.is_mined()).then(|| {
        (
            plan.read(s.checkpoint(), "checkpoint"),
            plan.read(s.candidates(), "candidates"),
        )
    })
}

fn load_miner(paths: Option<&(PathBuf, PathBuf)>) -> Result<Option<Miner>, Failure> {
    paths
        .map(|(ckpt, cands)| {
            Ok(Miner {
                scorer: load_scorer(ckpt)?,
                candidates: load_candidates(cands)?,
            })
        })
        .transpose()
}

pub fn sample(run: &Run) -> Result<(), Failure> {
    let s = run.settings;
    let mut plan = Plan::default();
    let train_path = plan.read(s.split_dir().join(SPLIT_FILES[0]), "training split");
    let sampler: SamplerId = s.parse("sampler")?;
    let trial: usize = s.parse("trial")?;
    let cfg = experiment_config(s, vec![sampler])?;
    let lexicon = lexicon_path(s, &[sampler], &mut plan)?;
    let miner_paths = miner_inputs(s, &[sampler], &mut plan);
    let out = plan.write(s.out_dir().join(format!("negatives.{sampler}.tsv")));
    let Some(_lock) = plan.begin(run, "sample")? else {
        return Ok(());
    };
    let kb = load_splits(&[train_path])?;
    let lexicon = load_lexicon(lexicon.as_ref())?;
    let miner = load_miner(miner_paths.as_ref())?;
    let negatives = sample_negatives(&kb, &cfg, lexicon.as_ref(), miner.as_ref(), sampler, trial)?;
    let labeled: Vec<LabeledTriple> = negatives.into_iter().map(LabeledTriple::negative).collect();
    write_atomic(&out, |w| write_tsv(w, &labeled, true))?;
    wrote(&out);
    Ok(())
}

pub fn evaluate(run: &Run) -> Result<(), Failure> {
    let s = run.settings;
    let mut plan = Plan::default();
    let split_dir = s.split_dir();
    let split_paths: Vec<PathBuf> = SPLIT_FILES
        .iter()
        .zip(["training split", "validation split", "test split"])
        .map(|(f, what)| plan.read(split_dir.join(f), what))
        .collect();
    let samplers: Vec<SamplerId> = s.list("samplers")?;
    let cfg = experiment_config(s, samplers)?;
    let lexicon = lexicon_path(s, &cfg.samplers, &mut plan)?;
    let miner_paths = miner_inputs(s, &cfg.samplers, &mut plan);
    let dir = s.out_dir();
    let report_path = plan.write(dir.join("report.tsv"));
    let trials_path = plan.write(dir.join("trials.tsv"));
    let summary_path = plan.write(dir.join("summary.txt"));
    let Some(_lock) = plan.begin(run, "evaluate")? else {
        return Ok(());
    };
    let kb = load_splits(&split_paths)?;
    let lexicon = load_lexicon(lexicon.as_ref())?;
    let miner = load_miner(miner_paths.as_ref())?;
    let report = run_experiment_with_miner(&kb, &cfg, lexicon.as_ref(), miner.as_ref())?;
    write_atomic(&report_path, |w| report.write_tsv(w))?;
    wrote(&report_path);
    write_atomic(&trials_path, |w| report.write_trials_tsv(w))?;
    wrote(&trials_path);
    let summary = report.render_summary();
    write_atomic(&summary_path, |w| w.write_all(summary.as_bytes()))?;
    wrote(&summary_path);
    Ok(())
}

pub const REPORT_HEADER: &str = "sampler\tmetric\tmean\tstd\tp_vs_baseline\ttrials";

/// Renders `report.tsv` as a Markdown table.
pub fn render_report(tsv: &str) -> Result<String, Failure> {
    let mut lines = tsv.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Failure::invalid(format!("report header must be {REPORT_HEADER:?}")));
    }
    let mut out = String::from("| sampler | metric | mean | std | p vs baseline | trials |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| Failure::invalid(format!("report line {}: {what}", i + 2));
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        for v in &f[2..5] {
            if *v != "NA" && v.parse::<f64>().is_err() {
                return Err(bad("non-numeric statistic"));
            }
        }
        f[5].parse::<usize>().map_err(|_| bad("bad trial count"))?;
        out.push_str(&format!("| {} |\n", f.join(" | ")));
    }
    Ok(out)
}

pub fn report(run: &Run) -> Result<(), Failure> {
    let s = run.settings;
    let mut plan = Plan::default();
    let dir = s.out_dir();
    let input = plan.read(dir.join("report.tsv"), "evaluation report");
    let out = plan.write(dir.join("report.md"));
    let Some(_lock) = plan.begin(run, "report")? else {
        return Ok(());
    };
    let text = std::fs::read_to_string(&input).map_err(|e| Failure::read(&input, &e))?;
    let table = render_report(&text).map_err(|f| f.at(&input))?;
    print!("{table}");
    write_atomic(&out, |w| w.write_all(table.as_bytes()))?;
    wrote(&out);
    Ok(())
}
