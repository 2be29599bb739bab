//! Line-oriented scorer checkpoints. Every float is stored as the 16 hex
//! digits of its IEEE-754 bit pattern, so a round trip is bit-exact.
//!
//! ```text
//! negmine-checkpoint v1
//! hidden <H>
//! activation <tanh|identity>
//! relations <n>          followed by n names, one per line
//! words <n>              followed by n tokens, one per line
//! embeddings <rows>      followed by rows lines of H values
//! encoder_weight         H lines of H values
//! encoder_bias           1 line of H values
//! class_weight           1 line of H values
//! class_bias <value>
//! retrieval <rows>       followed by rows lines of H values
//! thresholds <n> <fallback>   followed by n lines `relation<TAB>value`
//! end
//! ```

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::kb::Relation;
use crate::scorer::{Activation, ScorerParams, ThresholdMap, TokenVocab, TripleScorer};

const MAGIC: &str = "negmine-checkpoint v1";

fn hex(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn unhex(s: &str) -> Result<f64> {
    if s.len() != 16 {
        return Err(Error::Checkpoint(format!("bad float field {s:?}")));
    }
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Checkpoint(format!("bad float field {s:?}")))
}

fn write_rows<W: Write>(w: &mut W, values: &[f64], width: usize) -> std::io::Result<()> {
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(|&x| hex(x)).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(mut w: W, scorer: &TripleScorer) -> std::io::Result<()> {
    let p = &scorer.params;
    let h = p.hidden;
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "hidden {h}")?;
    writeln!(w, "activation {}", p.activation.as_str())?;
    let relations: Vec<&str> = scorer.vocab.relations().collect();
    writeln!(w, "relations {}", relations.len())?;
    for r in relations {
        writeln!(w, "{r}")?;
    }
    let words: Vec<&str> = scorer.vocab.words().collect();
    writeln!(w, "words {}", words.len())?;
    for word in words {
        writeln!(w, "{word}")?;
    }
    writeln!(w, "embeddings {}", p.embeddings.len() / h)?;
    write_rows(&mut w, &p.embeddings, h)?;
    writeln!(w, "encoder_weight")?;
    write_rows(&mut w, &p.encoder_weight, h)?;
    writeln!(w, "encoder_bias")?;
    write_rows(&mut w, &p.encoder_bias, h)?;
    writeln!(w, "class_weight")?;
    write_rows(&mut w, &p.class_weight, h)?;
    writeln!(w, "class_bias {}", hex(p.class_bias))?;
    writeln!(w, "retrieval {}", scorer.retrieval.len() / h)?;
    write_rows(&mut w, &scorer.retrieval, h)?;
    let th = &scorer.thresholds;
    writeln!(w, "thresholds {} {}", th.len(), hex(th.fallback()))?;
    for (rel, v) in th.iter() {
        writeln!(w, "{rel}\t{}", hex(v))?;
    }
    writeln!(w, "end")
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::Checkpoint(format!("line {}: {e}", self.line))),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::Checkpoint(format!("line {}: {msg}", self.line))
    }

    /// Reads `<key> [args...]` and returns the arguments.
    fn header(&mut self, key: &str) -> Result<Vec<String>> {
        let l = self.next()?;
        let mut parts = l.split(' ');
        if parts.next() != Some(key) {
            return Err(self.err(&format!("expected {key:?}, found {l:?}")));
        }
        Ok(parts.map(str::to_string).collect())
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let args = self.header(key)?;
        match args.as_slice() {
            [n] => n.parse().map_err(|_| self.err(&format!("bad count {n:?}"))),
            _ => Err(self.err(&format!("{key} takes one count"))),
        }
    }

    fn rows(&mut self, rows: usize, width: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(rows * width);
        for _ in 0..rows {
            let l = self.next()?;
            let before = out.len();
            for field in l.split(' ') {
                out.push(unhex(field).map_err(|e| self.err(&e.to_string()))?);
            }
            if out.len() - before != width {
                return Err(self.err(&format!("expected {width} values")));
            }
        }
        Ok(out)
    }
}

pub fn read_checkpoint<R: BufRead>(r: R) -> Result<TripleScorer> {
    let mut lines = Lines {
        inner: r.lines(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err("not a checkpoint (bad header)"));
    }
    let h = lines.count("hidden")?;
    if h < 2 {
        return Err(lines.err("hidden dimension < 2"));
    }
    let activation: Activation = match lines.header("activation")?.as_slice() {
        [a] => a.parse().map_err(|e: Error| lines.err(&e.to_string()))?,
        _ => return Err(lines.err("activation takes one value")),
    };
    let n_rel = lines.count("relations")?;
    let relations = (0..n_rel).map(|_| lines.next()).collect::<Result<Vec<_>>>()?;
    let n_words = lines.count("words")?;
    let words = (0..n_words).map(|_| lines.next()).collect::<Result<Vec<_>>>()?;
    let vocab = TokenVocab::from_parts(relations, words)?;
    let rows = lines.count("embeddings")?;
    if rows != vocab.len() {
        return Err(lines.err(&format!("{rows} embedding rows for vocabulary of {}", vocab.len())));
    }
    let embeddings = lines.rows(rows, h)?;
    lines.header("encoder_weight")?;
    let encoder_weight = lines.rows(h, h)?;
    lines.header("encoder_bias")?;
    let encoder_bias = lines.rows(1, h)?;
    lines.header("class_weight")?;
    let class_weight = lines.rows(1, h)?;
    let class_bias = match lines.header("class_bias")?.as_slice() {
        [v] => unhex(v)?,
        _ => return Err(lines.err("class_bias takes one value")),
    };
    let rrows = lines.count("retrieval")?;
    if rrows != vocab.len() {
        return Err(lines.err("retrieval table does not match vocabulary"));
    }
    let retrieval = lines.rows(rrows, h)?;
    let (n_th, fallback) = match lines.header("thresholds")?.as_slice() {
        [n, f] => (n.parse::<usize>().map_err(|_| lines.err("bad threshold count"))?, unhex(f)?),
        _ => return Err(lines.err("thresholds takes a count and a fallback")),
    };
    let mut thresholds = ThresholdMap::new(fallback);
    for _ in 0..n_th {
        let l = lines.next()?;
        let (rel, v) = l.split_once('\t').ok_or_else(|| lines.err("bad threshold line"))?;
        thresholds.set(Relation::new(rel)?, unhex(v)?);
    }
    if lines.next()? != "end" {
        return Err(lines.err("missing end marker"));
    }
    let params = ScorerParams {
        hidden: h,
        activation,
        embeddings,
        encoder_weight,
        encoder_bias,
        class_weight,
        class_bias,
    };
    params.validate()?;
    Ok(TripleScorer {
        vocab,
        params,
        retrieval,
        thresholds,
    })
}
