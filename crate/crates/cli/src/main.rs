//! `negmine`: runs the mining pipeline one stage at a time.
//!
//! Stages: split → train → thresholds → candidates → rank / sample →
//! evaluate → report. Every stage reads the flat config file given by
//! `--config`, then `NEGMINE_OUT_DIR` / `NEGMINE_THREADS`, then `--set
//! key=value` and the stage flags, later sources winning.

mod config;
mod failure;
mod output;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Settings, KEYS};
use failure::Failure;
use stages::Run;

#[derive(Parser, Debug)]
#[command(name = "negmine", version, about = "Mine and rank negative statements for a phrase-valued KB")]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config and NEGMINE_OUT_DIR.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads; overrides the config and NEGMINE_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Check inputs and print the plan without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Override any config key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rewrite negated relations and write train/validation/test splits.
    Split(SplitArgs),
    /// Train the scorer with contrastive corruptions and write a checkpoint.
    Train(TrainArgs),
    /// Fit per-relation thresholds on the validation split.
    Thresholds(ThresholdArgs),
    /// Generate out-of-KB candidates by nearest-neighbor substitution.
    Candidates(CandidateArgs),
    /// Rank candidates by score, gradient magnitude or at random.
    Rank(RankArgs),
    /// Write the training negatives one sampler yields for one trial.
    Sample(SampleArgs),
    /// Train and test a classifier per sampler and trial.
    Evaluate(EvaluateArgs),
    /// Render report.tsv as a Markdown table.
    Report,
    /// Print the effective configuration.
    Config,
    /// List every config key with its default.
    Keys,
}

/// Appends `(key, value)` for every flag that was given.
macro_rules! overrides {
    ($args:expr, $out:ident; $($field:ident => $key:literal),* $(,)?) => {
        $( if let Some(v) = &$args.$field { $out.push(($key, v.to_string())); } )*
    };
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long, value_name = "TSV")]
    kb: Option<PathBuf>,
    /// The input carries a 0/1 label column.
    #[arg(long)]
    labeled: bool,
    /// rht or hrt.
    #[arg(long)]
    columns: Option<String>,
    #[arg(long)]
    negation_prefix: Option<String>,
    #[arg(long, value_name = "DIR")]
    split_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    split_dir: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    corruption: Option<String>,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    #[arg(long, value_name = "DIR")]
    split_dir: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CandidateArgs {
    #[arg(long, value_name = "DIR")]
    split_dir: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    candidates: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct RankArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    candidates: Option<PathBuf>,
    /// theta, grad, grad-fast or none.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    keep_fraction: Option<f64>,
    /// Candidates sampled to fit the gradient predictor.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    grad_scope: Option<String>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long, value_name = "DIR")]
    split_dir: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    candidates: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    trial: Option<usize>,
    #[arg(long)]
    negatives_per_positive: Option<usize>,
    #[arg(long)]
    hops: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, value_name = "DIR")]
    split_dir: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    candidates: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// Repeatable; replaces the configured sampler list.
    #[arg(long = "sampler")]
    samplers: Vec<String>,
    /// A sampler id or `none`.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Thresholds(_) => "thresholds",
            Command::Candidates(_) => "candidates",
            Command::Rank(_) => "rank",
            Command::Sample(_) => "sample",
            Command::Evaluate(_) => "evaluate",
            Command::Report => "report",
            Command::Config => "config",
            Command::Keys => "keys",
        }
    }

    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        match self {
            Command::Split(a) => {
                overrides!(a, out; negation_prefix => "negation_prefix", columns => "columns");
                if let Some(p) = &a.kb {
                    out.push(("kb", p.display().to_string()));
                }
                if let Some(p) = &a.split_dir {
                    out.push(("split_dir", p.display().to_string()));
                }
                if a.labeled {
                    out.push(("labeled", "true".into()));
                }
            }
            Command::Train(a) => {
                overrides!(a, out; hidden => "hidden", activation => "activation", epochs => "epochs",
                    learning_rate => "learning_rate", batch_size => "batch_size", corruption => "corruption");
                push_paths(&mut out, &[("split_dir", &a.split_dir), ("checkpoint", &a.checkpoint)]);
            }
            Command::Thresholds(a) => {
                push_paths(&mut out, &[("split_dir", &a.split_dir), ("checkpoint", &a.checkpoint)]);
            }
            Command::Candidates(a) => {
                overrides!(a, out; k => "k");
                push_paths(
                    &mut out,
                    &[("split_dir", &a.split_dir), ("checkpoint", &a.checkpoint), ("candidates", &a.candidates)],
                );
            }
            Command::Rank(a) => {
                overrides!(a, out; method => "method", keep_fraction => "keep_fraction", n => "n",
                    grad_scope => "grad_scope");
                push_paths(&mut out, &[("checkpoint", &a.checkpoint), ("candidates", &a.candidates)]);
            }
            Command::Sample(a) => {
                overrides!(a, out; sampler => "sampler", trial => "trial",
                    negatives_per_positive => "negatives_per_positive", hops => "hops");
                push_paths(
                    &mut out,
                    &[
                        ("split_dir", &a.split_dir),
                        ("checkpoint", &a.checkpoint),
                        ("candidates", &a.candidates),
                        ("lexicon", &a.lexicon),
                    ],
                );
            }
            Command::Evaluate(a) => {
                overrides!(a, out; baseline => "baseline", trials => "trials", hidden => "hidden",
                    epochs => "epochs", learning_rate => "learning_rate");
                if !a.samplers.is_empty() {
                    out.push(("samplers", a.samplers.join(",")));
                }
                push_paths(
                    &mut out,
                    &[
                        ("split_dir", &a.split_dir),
                        ("checkpoint", &a.checkpoint),
                        ("candidates", &a.candidates),
                        ("lexicon", &a.lexicon),
                    ],
                );
            }
            Command::Report | Command::Config | Command::Keys => {}
        }
        out
    }
}

fn push_paths(out: &mut Vec<(&'static str, String)>, paths: &[(&'static str, &Option<PathBuf>)]) {
    for (key, p) in paths {
        if let Some(p) = p {
            out.push((key, p.display().to_string()));
        }
    }
}

fn settings(cli: &Cli) -> Result<Settings, Failure> {
    let mut s = Settings::defaults();
    if let Some(path) = &cli.config {
        if !path.is_file() {
            return Err(Failure::missing(path, "config file"));
        }
        s.load_file(path)?;
    }
    s.apply_env()?;
    for a in &cli.set {
        s.assign(a)?;
    }
    for (k, v) in cli.command.overrides() {
        s.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        s.set("seed", seed.to_string())?;
    }
    if let Some(dir) = &cli.out_dir {
        s.set("out_dir", dir.display().to_string())?;
    }
    if let Some(t) = cli.threads {
        s.set("threads", t.to_string())?;
    }
    Ok(s)
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let settings = settings(cli)?;
    let run = Run {
        settings: &settings,
        dry_run: cli.dry_run,
    };
    match &cli.command {
        Command::Split(_) => stages::split(&run),
        Command::Train(_) => stages::train(&run),
        Command::Thresholds(_) => stages::thresholds(&run),
        Command::Candidates(_) => stages::candidates(&run),
        Command::Rank(_) => stages::rank(&run),
        Command::Sample(_) => stages::sample(&run),
        Command::Evaluate(_) => stages::evaluate(&run),
        Command::Report => stages::report(&run),
        Command::Config => {
            print!("{}", settings.render());
            Ok(())
        }
        Command::Keys => {
            for (k, default, doc) in KEYS {
                println!("{k}\t{default}\t{doc}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&message).trim_start_matches("error: ");
            eprintln!("{}", Failure::invalid(first).diagnostic("args"));
            return ExitCode::from(failure::EXIT_VALIDATION as u8);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.diagnostic(cli.command.name()));
            ExitCode::from(f.code as u8)
        }
    }
}
