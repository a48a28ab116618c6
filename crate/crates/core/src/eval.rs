//! Corpus BLEU4 and alignment error rate, with bootstrap intervals.

use std::collections::{BTreeSet, HashMap};
use std::ops::AddAssign;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align_supervision::HardAlignment;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics for corpus BLEU; summing them over sentences gives
/// the corpus statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for k in 0..MAX_ORDER {
            self.matches[k] += o.matches[k];
            self.totals[k] += o.totals[k];
        }
        self.candidate_len += o.candidate_len;
        self.reference_len += o.reference_len;
    }
}

impl BleuStats {
    pub fn precision(&self, order: usize) -> f64 {
        let k = order - 1;
        if self.totals[k] == 0 {
            0.0
        } else {
            self.matches[k] as f64 / self.totals[k] as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        if c == 0.0 {
            0.0
        } else if c < r {
            (1.0 - r / c).exp()
        } else {
            1.0
        }
    }

    /// Geometric mean of the four precisions times the brevity penalty;
    /// zero as soon as any precision is zero.
    pub fn score(&self) -> f64 {
        let mut log_sum = 0.0;
        for order in 1..=MAX_ORDER {
            let p = self.precision(order);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += p.ln();
        }
        self.brevity_penalty() * (log_sum / MAX_ORDER as f64).exp()
    }
}

fn tokens(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts(toks: &[String], order: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if toks.len() >= order {
        for g in toks.windows(order) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Statistics for one candidate against one or more references. The
/// reference length is the one closest to the candidate, shorter on ties.
pub fn sentence_stats(candidate: &str, references: &[&str]) -> BleuStats {
    let cand = tokens(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokens(r)).collect();
    let mut stats = BleuStats {
        candidate_len: cand.len(),
        ..BleuStats::default()
    };
    stats.reference_len = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(cand.len()), len))
        .unwrap_or(0);
    for order in 1..=MAX_ORDER {
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &refs {
            for (g, c) in ngram_counts(r, order) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let cand_counts = ngram_counts(&cand, order);
        stats.totals[order - 1] = cand.len().saturating_sub(order - 1);
        stats.matches[order - 1] = cand_counts
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

/// Per-sentence statistics; `references` holds one line list per reference
/// set, each as long as `candidates`.
pub fn bleu_sentence_stats<C: AsRef<str>, R: AsRef<str>>(
    candidates: &[C],
    references: &[Vec<R>],
) -> Result<Vec<BleuStats>> {
    if references.is_empty() {
        return Err(Error::Consistency("BLEU needs at least one reference set".into()));
    }
    for (k, set) in references.iter().enumerate() {
        if set.len() != candidates.len() {
            return Err(Error::Consistency(format!(
                "{} candidate lines but reference set {} has {}",
                candidates.len(),
                k + 1,
                set.len()
            )));
        }
    }
    Ok(candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let refs: Vec<&str> = references.iter().map(|set| set[i].as_ref()).collect();
            sentence_stats(c.as_ref(), &refs)
        })
        .collect())
}

/// Case-insensitive corpus BLEU4 in [0, 1].
pub fn bleu4<C: AsRef<str>, R: AsRef<str>>(candidates: &[C], references: &[Vec<R>]) -> Result<f64> {
    Ok(sum(&bleu_sentence_stats(candidates, references)?).score())
}

pub type LinkSet = BTreeSet<(usize, usize)>;

/// Gold links of one sentence; `possible` always contains `sure`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GoldAlignment {
    pub sure: LinkSet,
    pub possible: LinkSet,
}

/// Parses `i-j` (sure) and `i?j` (possible only) links, source index first.
pub fn parse_gold_line(line: &str, line_no: usize) -> Result<GoldAlignment> {
    let mut gold = GoldAlignment::default();
    for (k, tok) in line.split_whitespace().enumerate() {
        let err = |msg: String| Error::Parse {
            line: line_no,
            token: k + 1,
            msg,
        };
        let (sure, (a, b)) = match (tok.split_once('-'), tok.split_once('?')) {
            (Some(p), None) => (true, p),
            (None, Some(p)) => (false, p),
            _ => return Err(err(format!("expected i-j or i?j, found {tok:?}"))),
        };
        let i: usize = a.parse().map_err(|_| err(format!("bad index in {tok:?}")))?;
        let j: usize = b.parse().map_err(|_| err(format!("bad index in {tok:?}")))?;
        if sure {
            gold.sure.insert((i, j));
        }
        gold.possible.insert((i, j));
    }
    Ok(gold)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AerCounts {
    pub system_and_sure: usize,
    pub system_and_possible: usize,
    pub system: usize,
    pub sure: usize,
}

impl AddAssign for AerCounts {
    fn add_assign(&mut self, o: Self) {
        self.system_and_sure += o.system_and_sure;
        self.system_and_possible += o.system_and_possible;
        self.system += o.system;
        self.sure += o.sure;
    }
}

impl AerCounts {
    pub fn sentence(system: &LinkSet, gold: &GoldAlignment) -> Self {
        AerCounts {
            system_and_sure: system.intersection(&gold.sure).count(),
            system_and_possible: system.intersection(&gold.possible).count(),
            system: system.len(),
            sure: gold.sure.len(),
        }
    }

    /// `1 − (|A∩S| + |A∩P|) / (|A| + |S|)`; zero when both sets are empty.
    pub fn rate(&self) -> f64 {
        let denom = self.system + self.sure;
        if denom == 0 {
            return 0.0;
        }
        1.0 - (self.system_and_sure + self.system_and_possible) as f64 / denom as f64
    }
}

/// Per-sentence counts after checking that every sure link is possible.
pub fn aer_sentence_counts(system: &[HardAlignment], gold: &[GoldAlignment]) -> Result<Vec<AerCounts>> {
    if system.len() != gold.len() {
        return Err(Error::Consistency(format!(
            "{} system alignments but {} gold alignments",
            system.len(),
            gold.len()
        )));
    }
    system
        .iter()
        .zip(gold)
        .enumerate()
        .map(|(k, (a, g))| {
            if let Some((i, j)) = g.sure.difference(&g.possible).next() {
                return Err(Error::Data(format!(
                    "sentence {}: sure link {i}-{j} is not among the possible links",
                    k + 1
                )));
            }
            Ok(AerCounts::sentence(a.links(), g))
        })
        .collect()
}

/// Corpus alignment error rate (micro-averaged).
pub fn aer(system: &[HardAlignment], gold: &[GoldAlignment]) -> Result<f64> {
    Ok(sum(&aer_sentence_counts(system, gold)?).rate())
}

fn sum<S: Default + Copy + AddAssign>(items: &[S]) -> S {
    let mut total = S::default();
    for &s in items {
        total += s;
    }
    total
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub point: f64,
    pub low: f64,
    pub high: f64,
}

/// Percentile bootstrap over sentences: each resample draws as many
/// sentences as the corpus has, with replacement, and rescores the summed
/// statistics.
pub fn bootstrap<S, F>(per_sentence: &[S], score: F, resamples: usize, confidence: f64, seed: u64) -> Result<Interval>
where
    S: Default + Copy + AddAssign,
    F: Fn(&S) -> f64,
{
    if per_sentence.is_empty() {
        return Err(Error::Data("bootstrap needs at least one sentence".into()));
    }
    if resamples == 0 || !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Config(format!(
            "bootstrap needs resamples >= 1 and confidence in (0, 1), got {resamples} and {confidence}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = per_sentence.len();
    let mut scores: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut total = S::default();
            for _ in 0..n {
                total += per_sentence[rng.gen_range(0..n)];
            }
            score(&total)
        })
        .collect();
    scores.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    let at = |q: f64| scores[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    Ok(Interval {
        point: score(&sum(per_sentence)),
        low: at(tail),
        high: at(1.0 - tail),
    })
}
