//! Greedy and beam-search translation, force-decoding and alignment
//! extraction.

use std::cmp::Ordering;

use crate::align_supervision::{HardAlignment, SoftAlignmentMatrix};
use crate::data::{SentencePair, EOL};
use crate::error::{Error, Result};
use crate::model::{decoder_step, encode, initial_state, teacher_forced_values, EncoderStates, ModelParams};
use crate::numerics::{Matrix, Tape};

/// Decode cap used when none is given: twice the source length plus ten.
pub fn default_max_len(source: &[usize]) -> usize {
    2 * source.len().saturating_sub(1) + 10
}

/// A (possibly unfinished) translation prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Chosen tokens; ends with eol once finished.
    pub tokens: Vec<usize>,
    /// Sum of the chosen tokens' log-probabilities.
    pub score: f64,
    /// Decoder state after the last chosen token.
    pub hidden: Matrix,
    /// One attention row per step.
    pub attention: Vec<Vec<f64>>,
}

impl Hypothesis {
    pub fn is_finished(&self) -> bool {
        self.tokens.last() == Some(&EOL)
    }

    /// Tokens without the trailing eol.
    pub fn words(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&EOL, rest)) => rest,
            _ => &self.tokens,
        }
    }

    pub fn attention_matrix(&self) -> Result<SoftAlignmentMatrix> {
        SoftAlignmentMatrix::from_rows(&self.attention)
    }
}

/// Encoder output plus a tape that is rewound after every step.
struct Session<'p> {
    params: &'p ModelParams,
    tape: Tape<'p>,
    enc: EncoderStates,
    mark: usize,
}

struct StepValues {
    hidden: Matrix,
    log_probs: Vec<f64>,
    alpha: Vec<f64>,
}

impl<'p> Session<'p> {
    fn new(source: &[usize], params: &'p ModelParams) -> Result<(Self, Matrix)> {
        let mut tape = params.tape();
        let enc = encode(source, params, &mut tape)?;
        let h0 = initial_state(&enc, &mut tape)?;
        let h0 = tape.value(h0).clone();
        let mark = tape.len();
        Ok((
            Session {
                params,
                tape,
                enc,
                mark,
            },
            h0,
        ))
    }

    fn step(&mut self, y_prev: usize, hidden: &Matrix) -> Result<StepValues> {
        self.tape.truncate(self.mark);
        let h = self.tape.input(hidden.clone());
        let out = decoder_step(y_prev, h, &self.enc, self.params, &mut self.tape)?;
        Ok(StepValues {
            hidden: self.tape.value(out.state.h).clone(),
            log_probs: self.tape.value(out.log_probs).data().to_vec(),
            alpha: self.tape.value(out.state.alpha).data().to_vec(),
        })
    }
}

fn check_source(source: &[usize]) -> Result<()> {
    if source.last() != Some(&EOL) {
        return Err(Error::Domain("source sequence must end with eol".into()));
    }
    Ok(())
}

/// Picks the most likely word at each step until eol or `max_len` steps.
pub fn greedy_decode(source: &[usize], params: &ModelParams, max_len: usize) -> Result<Hypothesis> {
    check_source(source)?;
    let (mut session, h0) = Session::new(source, params)?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        hidden: h0,
        attention: Vec::new(),
    };
    while hyp.tokens.len() < max_len && !hyp.is_finished() {
        let y_prev = hyp.tokens.last().copied().unwrap_or(EOL);
        let out = session.step(y_prev, &hyp.hidden)?;
        let best = Matrix::row_vector(&out.log_probs).row_argmax(0);
        hyp.score += out.log_probs[best];
        hyp.tokens.push(best);
        hyp.hidden = out.hidden;
        hyp.attention.push(out.alpha);
    }
    Ok(hyp)
}

/// Higher score first, then shorter, then lexicographically smaller.
fn rank(a_score: f64, a: &[usize], b_score: f64, b: &[usize]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| a.len().cmp(&b.len()))
        .then_with(|| a.cmp(b))
}

/// Standard beam search without length normalization.
///
/// Every live hypothesis is expanded over the whole target vocabulary and
/// the best `beam` expansions survive; those ending in eol move to the
/// completed pool. The best completed hypothesis is returned, or the best
/// live one if nothing finished within `max_len` steps.
pub fn beam_search(source: &[usize], params: &ModelParams, beam: usize, max_len: usize) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    check_source(source)?;
    let (mut session, h0) = Session::new(source, params)?;
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        hidden: h0,
        attention: Vec::new(),
    }];
    let mut completed: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        let mut expanded = Vec::with_capacity(live.len());
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (k, hyp) in live.iter().enumerate() {
            let y_prev = hyp.tokens.last().copied().unwrap_or(EOL);
            let out = session.step(y_prev, &hyp.hidden)?;
            for (tok, &lp) in out.log_probs.iter().enumerate() {
                candidates.push((hyp.score + lp, k, tok));
            }
            expanded.push(out);
        }
        let key = |&(_, k, tok): &(f64, usize, usize)| {
            let mut t = live[k].tokens.clone();
            t.push(tok);
            t
        };
        candidates.sort_by(|a, b| match b.0.total_cmp(&a.0) {
            Ordering::Equal => rank(a.0, &key(a), b.0, &key(b)),
            other => other,
        });
        candidates.truncate(beam);

        let mut next = Vec::with_capacity(candidates.len());
        for (score, k, tok) in candidates {
            let parent = &live[k];
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let mut attention = parent.attention.clone();
            attention.push(expanded[k].alpha.clone());
            let hyp = Hypothesis {
                tokens,
                score,
                hidden: expanded[k].hidden.clone(),
                attention,
            };
            if tok == EOL {
                completed.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        // Scores only fall as hypotheses grow, so a completed hypothesis at
        // least as good as every live one cannot be beaten.
        let best_live = live.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        let best_done = completed.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        if best_done >= best_live {
            break;
        }
    }

    let pool = if completed.is_empty() { live } else { completed };
    pool.into_iter()
        .min_by(|a, b| rank(a.score, &a.tokens, b.score, &b.tokens))
        .ok_or_else(|| Error::Numeric("beam search produced no hypothesis".into()))
}

/// Attention matrix of a teacher-forced pass over the gold target.
pub fn force_decode(pair: &SentencePair, params: &ModelParams) -> Result<SoftAlignmentMatrix> {
    Ok(teacher_forced_values(pair, params)?.1)
}

/// One link per ordinary target word to its highest-attention source word
/// (lowest index on ties). Rows peaking on the source eol and the target
/// eol row produce no link.
pub fn extract_hard_alignment(alpha: &SoftAlignmentMatrix) -> HardAlignment {
    let m = alpha.cols() - 1;
    let n = alpha.rows() - 1;
    let links: Vec<(usize, usize)> = (0..n)
        .filter_map(|t| {
            let best = alpha.as_matrix().row_argmax(t);
            (best != m).then_some((best, t))
        })
        .collect();
    HardAlignment::new(m, n, links).expect("argmax links are in range")
}
