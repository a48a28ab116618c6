//! Optimizers, gradient clipping and the training loop.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::align_supervision::SoftAlignmentMatrix;
use crate::data::{make_batches, SentencePair};
use crate::decoding::{default_max_len, greedy_decode};
use crate::error::{Error, Result};
use crate::eval::bleu4;
use crate::losses::{objective_and_gradients, LossConfig};
use crate::model::checkpoint::{read_tensors, write_tensors, Lines};
use crate::model::ModelParams;
use crate::numerics::{Matrix, TensorSet};

pub const ADADELTA_RHO: f64 = 0.95;
pub const ADADELTA_EPSILON: f64 = 1e-6;
pub const DEFAULT_CLIP: f64 = 1.0;

/// Running averages of squared gradients and squared updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState {
    pub rho: f64,
    pub epsilon: f64,
    pub grad_sq: Vec<Matrix>,
    pub update_sq: Vec<Matrix>,
}

impl AdadeltaState {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdadeltaState {
            rho: ADADELTA_RHO,
            epsilon: ADADELTA_EPSILON,
            grad_sq: zeros.clone(),
            update_sq: zeros,
        }
    }
}

fn check_gradients(names: &[String], params: &[Matrix], grads: &[Matrix]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Consistency(format!(
            "{} gradients for {} parameter tensors",
            grads.len(),
            params.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(k).map(String::as_str).unwrap_or("?");
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "optimizer step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient of {name} is {} at entry ({}, {})",
                g.data()[pos],
                pos / g.cols(),
                pos % g.cols()
            )));
        }
    }
    Ok(())
}

/// One Adadelta update in place. A non-finite gradient aborts before any
/// parameter is touched.
pub fn adadelta_step(params: &mut ModelParams, grads: &[Matrix], state: &mut AdadeltaState) -> Result<()> {
    check_gradients(params.names(), params.tensors(), grads)?;
    let (rho, eps) = (state.rho, state.epsilon);
    let names = params.names().to_vec();
    for (k, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[k].data();
        let eg = state.grad_sq[k].data_mut();
        let ex = state.update_sq[k].data_mut();
        let pd = p.data_mut();
        for i in 0..pd.len() {
            eg[i] = rho * eg[i] + (1.0 - rho) * g[i] * g[i];
            let dx = -((ex[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * g[i];
            ex[i] = rho * ex[i] + (1.0 - rho) * dx * dx;
            pd[i] += dx;
        }
        if !p.is_finite() {
            return Err(Error::Numeric(format!("parameter {} became non-finite", names[k])));
        }
    }
    Ok(())
}

pub fn sgd_step(params: &mut ModelParams, grads: &[Matrix], learning_rate: f64) -> Result<()> {
    check_gradients(params.names(), params.tensors(), grads)?;
    for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
        for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
            *x -= learning_rate * d;
        }
    }
    Ok(())
}

/// Rescales all gradients together when their global L2 norm exceeds
/// `threshold`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Matrix], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("clip threshold must be > 0, got {threshold}")));
    }
    let norm = grads.iter().map(Matrix::norm_sq).sum::<f64>().sqrt();
    if norm > threshold {
        let s = threshold / norm;
        grads.iter_mut().for_each(|g| g.scale_in_place(s));
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Adadelta,
    Sgd { learning_rate: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerState {
    Adadelta(AdadeltaState),
    Sgd,
}

impl OptimizerState {
    pub fn fresh(optimizer: Optimizer, params: &ModelParams) -> Self {
        match optimizer {
            Optimizer::Adadelta => OptimizerState::Adadelta(AdadeltaState::new(params.tensors())),
            Optimizer::Sgd { .. } => OptimizerState::Sgd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub batch_size: usize,
    pub max_updates: usize,
    /// Dev evaluation period in updates; 0 evaluates only after the last one.
    pub eval_every: usize,
    pub seed: u64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip: Option<f64>,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            batch_size: 80,
            max_updates: 1000,
            eval_every: 100,
            seed: 1,
            clip: Some(DEFAULT_CLIP),
            optimizer: Optimizer::Adadelta,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.max_updates == 0 {
            return Err(Error::Config("max updates must be at least 1".into()));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip threshold must be > 0, got {c}")));
            }
        }
        if let Optimizer::Sgd { learning_rate } = self.optimizer {
            if !(learning_rate > 0.0) || !learning_rate.is_finite() {
                return Err(Error::Config(format!("learning rate must be > 0, got {learning_rate}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub update: usize,
    /// Objective summed over the batch's sentences.
    pub train_loss: f64,
    pub dev_bleu: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub points: Vec<CurvePoint>,
}

impl TrainingLog {
    pub fn losses(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.train_loss).collect()
    }

    /// `update,train_loss,dev_bleu`, one row per update; dev BLEU is blank
    /// where no evaluation happened.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("update,train_loss,dev_bleu\n");
        for p in &self.points {
            let _ = write!(out, "{},{}", p.update, p.train_loss);
            match p.dev_bleu {
                Some(b) => {
                    let _ = writeln!(out, ",{b}");
                }
                None => out.push_str(",\n"),
            }
        }
        out
    }
}

/// Where a run starts: fresh, or continuing after `updates_done` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Resume {
    pub optimizer: OptimizerState,
    pub updates_done: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    /// Parameters with the best dev BLEU (the final ones without a dev set).
    pub best: ModelParams,
    pub best_update: usize,
    pub best_dev_bleu: Option<f64>,
    pub last: ModelParams,
    pub optimizer: OptimizerState,
    pub updates_done: usize,
}

/// Corpus BLEU of greedy translations, scored on token indices.
pub fn dev_bleu(params: &ModelParams, dev: &[SentencePair]) -> Result<f64> {
    let render = |toks: &[usize]| toks.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let mut hyps = Vec::with_capacity(dev.len());
    let mut refs = Vec::with_capacity(dev.len());
    for pair in dev {
        let hyp = greedy_decode(&pair.source, params, default_max_len(&pair.source))?;
        hyps.push(render(hyp.words()));
        refs.push(render(&pair.target[..pair.target.len() - 1]));
    }
    bleu4(&hyps, &[refs])
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains `params` on `pairs` for `config.max_updates` updates in total
/// (counting those in `resume`).
///
/// Each epoch visits the corpus in an order fixed by `(seed, epoch)`, so a
/// resumed run continues exactly where an uninterrupted one would be.
pub fn train(
    params: ModelParams,
    pairs: &[SentencePair],
    supervision: Option<&[SoftAlignmentMatrix]>,
    dev: &[SentencePair],
    config: &TrainConfig,
    resume: Option<Resume>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    match (config.loss.delta.is_supervised(), supervision.is_some()) {
        (true, false) => {
            return Err(Error::Config(format!(
                "delta {} needs attention supervision",
                config.loss.delta
            )))
        }
        (false, true) => return Err(Error::Config("delta none takes no attention supervision".into())),
        _ => {}
    }
    let (mut optimizer, start) = match resume {
        Some(r) => (r.optimizer, r.updates_done),
        None => (OptimizerState::fresh(config.optimizer, &params), 0),
    };
    match (&optimizer, config.optimizer) {
        (OptimizerState::Adadelta(s), Optimizer::Adadelta) if s.grad_sq.len() == params.tensors().len() => {}
        (OptimizerState::Sgd, Optimizer::Sgd { .. }) => {}
        _ => return Err(Error::Config("optimizer state does not match the configured optimizer".into())),
    }

    let per_epoch = pairs.len().div_ceil(config.batch_size);
    let mut params = params;
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut update = start;
    let mut epoch = start / per_epoch;
    let mut skip = start % per_epoch;

    while update < config.max_updates {
        let batches = make_batches(pairs, supervision, config.batch_size, epoch_seed(config.seed, epoch))?;
        for batch in batches.into_iter().skip(skip) {
            if update >= config.max_updates {
                break;
            }
            let (loss, mut grads) =
                objective_and_gradients(&batch.pairs, batch.supervision.as_deref(), &params, &config.loss)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss is {loss} at update {}", update + 1)));
            }
            if let Some(c) = config.clip {
                clip_gradients(&mut grads, c)?;
            }
            match (&mut optimizer, config.optimizer) {
                (OptimizerState::Adadelta(s), _) => adadelta_step(&mut params, &grads, s)?,
                (OptimizerState::Sgd, Optimizer::Sgd { learning_rate }) => {
                    sgd_step(&mut params, &grads, learning_rate)?
                }
                _ => unreachable!("checked above"),
            }
            update += 1;

            let due = (config.eval_every > 0 && update % config.eval_every == 0) || update == config.max_updates;
            let dev_score = if due && !dev.is_empty() {
                let b = dev_bleu(&params, dev)?;
                if best.as_ref().is_none_or(|(bb, _, _)| b > *bb) {
                    best = Some((b, update, params.clone()));
                }
                Some(b)
            } else {
                None
            };
            log.points.push(CurvePoint {
                update,
                train_loss: loss,
                dev_bleu: dev_score,
            });
        }
        skip = 0;
        epoch += 1;
    }

    let (best_dev_bleu, best_update, best_params) = match best {
        Some((b, u, p)) => (Some(b), u, p),
        None => (None, update, params.clone()),
    };
    Ok(TrainOutcome {
        log,
        best: best_params,
        best_update,
        best_dev_bleu,
        last: params,
        optimizer,
        updates_done: update,
    })
}

const STATE_MAGIC: &str = "sanmt-optimizer";
const STATE_VERSION: u32 = 1;

/// Text form of an optimizer state plus the number of updates already done.
pub fn write_optimizer_state(names: &[String], resume: &Resume) -> String {
    let mut out = format!("{STATE_MAGIC} {STATE_VERSION}\nupdates {}\n", resume.updates_done);
    match &resume.optimizer {
        OptimizerState::Sgd => out.push_str("kind sgd\n"),
        OptimizerState::Adadelta(s) => {
            let _ = writeln!(out, "kind adadelta rho={} epsilon={}", s.rho, s.epsilon);
            let mut all_names: Vec<String> = names.iter().map(|n| format!("grad_sq.{n}")).collect();
            all_names.extend(names.iter().map(|n| format!("update_sq.{n}")));
            let all: Vec<Matrix> = s.grad_sq.iter().chain(&s.update_sq).cloned().collect();
            write_tensors(&mut out, &all_names, &all);
        }
    }
    out
}

pub fn read_optimizer_state(text: &str) -> Result<Resume> {
    let mut lines = Lines::new(text);
    let header = lines.next_line("header")?;
    if header != format!("{STATE_MAGIC} {STATE_VERSION}") {
        return Err(lines.error(format!("expected `{STATE_MAGIC} {STATE_VERSION}`")));
    }
    let updates_done = lines.counted("updates")?;
    let kind = lines.next_line("kind")?;
    let mut fields = kind.split_whitespace();
    if fields.next() != Some("kind") {
        return Err(lines.error("expected `kind ...`"));
    }
    let optimizer = match fields.next() {
        Some("sgd") => OptimizerState::Sgd,
        Some("adadelta") => {
            let mut value = |key: &str| -> Result<f64> {
                let field = fields.next().unwrap_or("");
                match field.split_once('=') {
                    Some((k, v)) if k == key => v.parse().map_err(|_| lines.error(format!("bad {key}"))),
                    _ => Err(lines.error(format!("expected {key}=..."))),
                }
            };
            let rho = value("rho")?;
            let epsilon = value("epsilon")?;
            let (_, mut tensors) = read_tensors(&mut lines)?;
            if tensors.len() % 2 != 0 {
                return Err(Error::Checkpoint("odd number of accumulator tensors".into()));
            }
            let update_sq = tensors.split_off(tensors.len() / 2);
            OptimizerState::Adadelta(AdadeltaState {
                rho,
                epsilon,
                grad_sq: tensors,
                update_sq,
            })
        }
        _ => return Err(lines.error("unknown optimizer kind")),
    };
    Ok(Resume {
        optimizer,
        updates_done,
    })
}

pub fn save_optimizer_state(path: &Path, names: &[String], resume: &Resume) -> Result<()> {
    fs::write(path, write_optimizer_state(names, resume)).map_err(|e| Error::io(path, e))
}

pub fn load_optimizer_state(path: &Path) -> Result<Resume> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_optimizer_state(&text)
}
