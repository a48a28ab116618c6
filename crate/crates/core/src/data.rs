//! Corpus ingestion, vocabularies and batching.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align_supervision::SoftAlignmentMatrix;
use crate::error::{Error, Result};

pub const EOL: usize = 0;
pub const UNK: usize = 1;
pub const EOL_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ index map. Index 0 is end-of-sentence and 1 is unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from an explicit token list (without the reserved
    /// entries), preserving order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab {
            tokens: vec![EOL_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        for token in tokens {
            let token = token.into();
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary token {token:?}")));
            }
            if token == EOL_TOKEN || token == UNK_TOKEN || vocab.index.contains_key(&token) {
                return Err(Error::Data(format!("duplicate vocabulary token {token:?}")));
            }
            vocab.index.insert(token.clone(), vocab.tokens.len());
            vocab.tokens.push(token);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> &str {
        self.tokens.get(index).map_or(UNK_TOKEN, String::as_str)
    }

    /// Ordinary tokens, in index order (indices 2..len).
    pub fn tokens(&self) -> &[String] {
        &self.tokens[2..]
    }

    /// Turns indices back into a space-joined line, stopping at the first eol.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices
            .iter()
            .take_while(|&&i| i != EOL)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line, reserved entries excluded.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in self.tokens() {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Vocab::from_tokens(text.lines().filter(|l| !l.is_empty()))
    }
}

/// Ranks tokens by descending frequency (ties lexicographic) and keeps the
/// top `cap - 2`.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], cap: usize) -> Result<Vocab> {
    if cap < 3 {
        return Err(Error::Domain(format!(
            "vocabulary cap {cap} leaves no room for ordinary tokens (minimum 3)"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::Domain("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for line in corpus {
        for tok in line.as_ref().split_whitespace() {
            if tok != EOL_TOKEN && tok != UNK_TOKEN {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap - 2);
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// Whitespace-tokenizes `sentence`, maps unknown tokens to [`UNK`] and
/// appends [`EOL`].
pub fn encode(sentence: &str, vocab: &Vocab) -> Vec<usize> {
    sentence
        .split_whitespace()
        .map(|t| vocab.index_of(t))
        .chain(std::iter::once(EOL))
        .collect()
}

/// Source and target index sequences, each terminated by [`EOL`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl SentencePair {
    pub fn new(source: Vec<usize>, target: Vec<usize>) -> Result<Self> {
        for (side, seq) in [("source", &source), ("target", &target)] {
            if seq.last() != Some(&EOL) {
                return Err(Error::Data(format!("{side} sequence must end with eol")));
            }
            if seq[..seq.len() - 1].contains(&EOL) {
                return Err(Error::Data(format!("{side} sequence has eol before its end")));
            }
        }
        Ok(SentencePair { source, target })
    }

    pub fn encode(source: &str, target: &str, src_vocab: &Vocab, tgt_vocab: &Vocab) -> Self {
        SentencePair {
            source: encode(source, src_vocab),
            target: encode(target, tgt_vocab),
        }
    }

    /// Source length without eol.
    pub fn m(&self) -> usize {
        self.source.len() - 1
    }

    /// Target length without eol.
    pub fn n(&self) -> usize {
        self.target.len() - 1
    }

    pub fn check_vocab(&self, src_size: usize, tgt_size: usize) -> Result<()> {
        if let Some(&i) = self.source.iter().find(|&&i| i >= src_size) {
            return Err(Error::Domain(format!("source index {i} >= vocabulary size {src_size}")));
        }
        if let Some(&i) = self.target.iter().find(|&&i| i >= tgt_size) {
            return Err(Error::Domain(format!("target index {i} >= vocabulary size {tgt_size}")));
        }
        Ok(())
    }
}

/// Keeps pairs whose source and target both have at most `max_len` tokens
/// before eol.
pub fn filter_by_length(pairs: Vec<SentencePair>, max_len: usize) -> Vec<SentencePair> {
    pairs
        .into_iter()
        .filter(|p| p.m() <= max_len && p.n() <= max_len)
        .collect()
}

/// Indices (into the original list) of the pairs `filter_by_length` keeps.
pub fn length_filter_indices(pairs: &[SentencePair], max_len: usize) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.m() <= max_len && p.n() <= max_len)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub pairs: Vec<SentencePair>,
    /// Source indices padded with eol to the longest source in the batch.
    pub source_grid: Vec<Vec<usize>>,
    pub source_mask: Vec<Vec<u8>>,
    pub target_grid: Vec<Vec<usize>>,
    pub target_mask: Vec<Vec<u8>>,
    pub supervision: Option<Vec<SoftAlignmentMatrix>>,
}

impl Batch {
    pub fn new(
        pairs: Vec<SentencePair>,
        supervision: Option<Vec<SoftAlignmentMatrix>>,
    ) -> Result<Self> {
        if let Some(sup) = &supervision {
            if sup.len() != pairs.len() {
                return Err(Error::Consistency(format!(
                    "{} supervision matrices for {} pairs",
                    sup.len(),
                    pairs.len()
                )));
            }
            for (i, (p, s)) in pairs.iter().zip(sup).enumerate() {
                if s.shape() != (p.target.len(), p.source.len()) {
                    return Err(Error::Consistency(format!(
                        "supervision {i} is {:?}, pair needs {:?}",
                        s.shape(),
                        (p.target.len(), p.source.len())
                    )));
                }
            }
        }
        let (source_grid, source_mask) = pad(pairs.iter().map(|p| p.source.as_slice()));
        let (target_grid, target_mask) = pad(pairs.iter().map(|p| p.target.as_slice()));
        Ok(Batch {
            pairs,
            source_grid,
            source_mask,
            target_grid,
            target_mask,
            supervision,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn pad<'a>(seqs: impl Iterator<Item = &'a [usize]> + Clone) -> (Vec<Vec<usize>>, Vec<Vec<u8>>) {
    let width = seqs.clone().map(<[usize]>::len).max().unwrap_or(0);
    seqs.map(|s| {
        let mut grid = s.to_vec();
        grid.resize(width, EOL);
        let mut mask = vec![1u8; s.len()];
        mask.resize(width, 0);
        (grid, mask)
    })
    .unzip()
}

/// Shuffle order for `count` items under `seed`.
pub fn shuffled_order(count: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Deterministically shuffles and groups pairs; the final short batch is kept.
pub fn make_batches(
    pairs: &[SentencePair],
    supervision: Option<&[SoftAlignmentMatrix]>,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if let Some(sup) = supervision {
        if sup.len() != pairs.len() {
            return Err(Error::Consistency(format!(
                "{} supervision matrices for {} pairs",
                sup.len(),
                pairs.len()
            )));
        }
    }
    let order = shuffled_order(pairs.len(), shuffle_seed);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let batch_pairs = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let batch_sup = supervision.map(|s| chunk.iter().map(|&i| s[i].clone()).collect());
            Batch::new(batch_pairs, batch_sup)
        })
        .collect()
}

/// Reads a UTF-8 file of one sentence per line.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads two line-aligned corpus files.
pub fn read_parallel(src: &Path, tgt: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let s = read_lines(src)?;
    let t = read_lines(tgt)?;
    if s.len() != t.len() {
        return Err(Error::Consistency(format!(
            "{} has {} lines but {} has {} lines",
            src.display(),
            s.len(),
            tgt.display(),
            t.len()
        )));
    }
    Ok((s, t))
}
