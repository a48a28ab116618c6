//! Plain-text checkpoints.
//!
//! ```text
//! sanmt-checkpoint 1
//! config src_vocab=… tgt_vocab=… emb_dim=… hidden_dim=… att_dim=…
//! source_vocab <count>
//! <token>            (one per line)
//! target_vocab <count>
//! <token>
//! tensors <count>
//! tensor <name> <rows> <cols>
//! <row values>       (one line per row)
//! ```
//!
//! Values use the shortest representation that parses back to the same
//! `f64`, so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{shape_manifest, ModelConfig, ModelParams};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &str = "sanmt-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub source_vocab: Vocab,
    pub target_vocab: Vocab,
}

impl Checkpoint {
    pub fn new(params: ModelParams, source_vocab: Vocab, target_vocab: Vocab) -> Result<Self> {
        let c = params.config();
        if c.src_vocab != source_vocab.len() || c.tgt_vocab != target_vocab.len() {
            return Err(Error::Checkpoint(format!(
                "model expects vocabularies of {}/{} entries, got {}/{}",
                c.src_vocab,
                c.tgt_vocab,
                source_vocab.len(),
                target_vocab.len()
            )));
        }
        Ok(Checkpoint {
            params,
            source_vocab,
            target_vocab,
        })
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> String {
    let c = ckpt.params.config();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(
        out,
        "config src_vocab={} tgt_vocab={} emb_dim={} hidden_dim={} att_dim={}",
        c.src_vocab, c.tgt_vocab, c.emb_dim, c.hidden_dim, c.att_dim
    );
    for (label, vocab) in [("source_vocab", &ckpt.source_vocab), ("target_vocab", &ckpt.target_vocab)] {
        let _ = writeln!(out, "{label} {}", vocab.tokens().len());
        out.push_str(&vocab.to_text());
    }
    write_tensors(&mut out, ckpt.params.names(), ckpt.params.tensors());
    out
}

pub(crate) fn write_tensors(out: &mut String, names: &[String], tensors: &[Matrix]) {
    let _ = writeln!(out, "tensors {}", tensors.len());
    for (name, t) in names.iter().zip(tensors) {
        let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
        for r in 0..t.rows() {
            let mut first = true;
            for v in t.row(r) {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
    }
}

/// Line cursor with 1-based error positions.
pub(crate) struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    pub(crate) fn next_line(&mut self, what: &str) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l)
            }
            None => Err(Error::Checkpoint(format!("file ends before {what}"))),
        }
    }

    pub(crate) fn error(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint(format!("line {}: {}", self.last, msg.into()))
    }

    /// Reads `<label> <count>`.
    pub(crate) fn counted(&mut self, label: &str) -> Result<usize> {
        let line = self.next_line(label)?;
        match line.split_once(' ') {
            Some((l, n)) if l == label => n.trim().parse().map_err(|_| self.error(format!("bad {label} count"))),
            _ => Err(self.error(format!("expected `{label} <count>`"))),
        }
    }
}

pub(crate) fn read_tensors(lines: &mut Lines<'_>) -> Result<(Vec<String>, Vec<Matrix>)> {
    let count = lines.counted("tensors")?;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let header = lines.next_line("tensor header")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let [tag, name, rows, cols] = parts[..] else {
            return Err(lines.error("expected `tensor <name> <rows> <cols>`"));
        };
        if tag != "tensor" {
            return Err(lines.error("expected `tensor <name> <rows> <cols>`"));
        }
        let rows: usize = rows.parse().map_err(|_| lines.error("bad row count"))?;
        let cols: usize = cols.parse().map_err(|_| lines.error("bad column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines.next_line(name)?;
            let before = data.len();
            for v in line.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|_| lines.error(format!("bad value {v:?}")))?);
            }
            if data.len() - before != cols {
                return Err(lines.error(format!("tensor {name}: expected {cols} values")));
            }
        }
        names.push(name.to_string());
        tensors.push(Matrix::from_vec(rows, cols, data)?);
    }
    Ok((names, tensors))
}

pub fn read_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = Lines::new(text);
    let header = lines.next_line("header")?;
    match header.split_once(' ') {
        Some((MAGIC, v)) if v.trim() == VERSION.to_string() => {}
        Some((MAGIC, v)) => {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {v} (this build reads {VERSION})"
            )))
        }
        _ => return Err(Error::Checkpoint("not a checkpoint file".into())),
    }

    let config_line = lines.next_line("config")?;
    let mut fields = config_line.split_whitespace();
    if fields.next() != Some("config") {
        return Err(lines.error("expected config line"));
    }
    let mut get = |key: &str| -> Result<usize> {
        let field = fields.next().ok_or_else(|| Error::Checkpoint(format!("config lacks {key}")))?;
        match field.split_once('=') {
            Some((k, v)) if k == key => v
                .parse()
                .map_err(|_| Error::Checkpoint(format!("config value {key} is not a count"))),
            _ => Err(Error::Checkpoint(format!("config expected {key}, found {field}"))),
        }
    };
    let config = ModelConfig {
        src_vocab: get("src_vocab")?,
        tgt_vocab: get("tgt_vocab")?,
        emb_dim: get("emb_dim")?,
        hidden_dim: get("hidden_dim")?,
        att_dim: get("att_dim")?,
    };

    let mut vocabs = Vec::with_capacity(2);
    for label in ["source_vocab", "target_vocab"] {
        let count = lines.counted(label)?;
        let mut toks = Vec::with_capacity(count);
        for _ in 0..count {
            toks.push(lines.next_line(label)?);
        }
        vocabs.push(Vocab::from_tokens(toks)?);
    }

    let (names, tensors) = read_tensors(&mut lines)?;
    let manifest = shape_manifest(&config);
    if let Some((spec, name)) = manifest.iter().zip(&names).find(|(s, n)| &s.name != *n) {
        return Err(Error::Checkpoint(format!(
            "tensor {name} found where manifest expects {}",
            spec.name
        )));
    }
    let params = ModelParams::from_tensors(config, tensors)?;
    let target = vocabs.pop().expect("two vocabularies");
    let source = vocabs.pop().expect("two vocabularies");
    Checkpoint::new(params, source, target)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, write_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&text)
}
