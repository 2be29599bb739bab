//! Flat `key = value` pipeline configuration. Blank lines and lines starting
//! with `#` are ignored. Later sources override earlier ones: defaults, the
//! config file, environment variables, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::failure::Failure;

/// Every recognised key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("kb", "", "input triple TSV read by split"),
    ("labeled", "false", "input TSV carries a 0/1 label column"),
    ("columns", "rht", "input column order: rht (relation head tail) or hrt"),
    ("negation_prefix", "Not", "prefix marking negated relations in the input"),
    ("per_relation_balance", "true", "balance evaluation positives per relation"),
    ("out_dir", ".", "directory receiving every artifact"),
    ("split_dir", "", "directory holding train/validation/test.tsv (default: out_dir)"),
    ("checkpoint", "", "scorer checkpoint (default: out_dir/scorer.ckpt)"),
    ("candidates", "", "candidate TSV (default: out_dir/candidates.tsv)"),
    ("lexicon", "", "antonym lexicon TSV, needed by the antonyms sampler"),
    ("hidden", "16", "hidden width H of the scorer"),
    ("activation", "tanh", "encoder activation: tanh or identity"),
    ("epochs", "60", "training epochs"),
    ("learning_rate", "0.2", "Adagrad learning rate"),
    ("batch_size", "64", "mini-batch size"),
    ("corruption", "entities", "contrastive corruption: cycle, entities, head, relation or tail"),
    ("corruptions_per_positive", "1", "contrastive corruptions per positive and epoch"),
    ("k", "10", "neighbors per phrase during candidate generation"),
    ("method", "theta", "ranking method: theta, grad, grad-fast or none"),
    ("keep_fraction", "0.5", "share of each relation's below-threshold candidates kept by theta"),
    ("preserve_theta_order", "false", "keep theta pools sorted instead of shuffling them"),
    ("grad_scope", "full", "parameters entering gradient norms: full or final-layer"),
    ("n", "200", "candidates sampled to fit the gradient predictor"),
    ("predictor_epochs", "100", "gradient predictor training epochs"),
    ("predictor_learning_rate", "0.05", "gradient predictor learning rate"),
    ("sampler", "uniform", "sampler used by the sample stage"),
    ("samplers", "uniform", "comma-separated samplers compared by evaluate"),
    ("baseline", "uniform", "sampler the others are tested against, or none"),
    ("negatives_per_positive", "1", "sampled negatives per training positive"),
    ("hops", "2", "neighborhood radius of the sans sampler"),
    ("trials", "5", "trials per sampler"),
    ("trial", "0", "trial index used by the sample stage"),
    ("seed", "0", "base seed"),
    ("threads", "1", "worker threads for evaluate"),
];

pub const ENV_OUT_DIR: &str = "NEGMINE_OUT_DIR";
pub const ENV_THREADS: &str = "NEGMINE_THREADS";

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn defaults() -> Self {
        Settings {
            values: KEYS.iter().map(|&(k, v, _)| (k, v.to_string())).collect(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), Failure> {
        let Some(&(k, _, _)) = KEYS.iter().find(|(k, _, _)| *k == key) else {
            return Err(Failure::invalid(format!("unknown config key {key:?}")));
        };
        self.values.insert(k, value.into());
        Ok(())
    }

    /// Applies a `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<(), Failure> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Failure::invalid(format!("expected key=value, found {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::read(path, &e))?;
        self.load_str(&text)
            .map_err(|f| Failure::invalid(format!("{}: {}", path.display(), f.message)))
    }

    pub fn load_str(&mut self, text: &str) -> Result<(), Failure> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.assign(line)
                .map_err(|f| Failure::invalid(format!("line {}: {}", i + 1, f.message)))?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<(), Failure> {
        for (var, key) in [(ENV_OUT_DIR, "out_dir"), (ENV_THREADS, "threads")] {
            if let Ok(v) = std::env::var(var) {
                self.set(key, v)?;
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("config key {key:?} is not declared"))
    }

    pub fn parse<T>(&self, key: &str) -> Result<T, Failure>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.get(key);
        raw.parse()
            .map_err(|e| Failure::invalid(format!("{key}: cannot parse {raw:?}: {e}")))
    }

    pub fn list<T>(&self, key: &str) -> Result<Vec<T>, Failure>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| Failure::invalid(format!("{key}: cannot parse {s:?}: {e}")))
            })
            .collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    /// Path stored under `key`, or `default_name` inside `base` when unset.
    pub fn path_or(&self, key: &str, base: &Path, default_name: &str) -> PathBuf {
        match self.get(key) {
            "" => base.join(default_name),
            p => PathBuf::from(p),
        }
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        Some(self.get(key)).filter(|p| !p.is_empty()).map(PathBuf::from)
    }

    pub fn split_dir(&self) -> PathBuf {
        self.optional_path("split_dir").unwrap_or_else(|| self.out_dir())
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.path_or("checkpoint", &self.out_dir(), "scorer.ckpt")
    }

    pub fn candidates(&self) -> PathBuf {
        self.path_or("candidates", &self.out_dir(), "candidates.tsv")
    }

    /// Effective settings in key order, one `key = value` per line.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
