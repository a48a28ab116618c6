//! Translation likelihood, attention disagreement penalties and the joint
//! training objective `−log p(y | x) + λ·Δ(α, α̂)`.

use std::fmt;
use std::str::FromStr;

use crate::align_supervision::SoftAlignmentMatrix;
use crate::data::SentencePair;
use crate::error::{Error, Result};
use crate::model::{forward_teacher_forced, ModelParams};
use crate::numerics::{clamped_ln, Matrix, Tape, Var};

/// Attention disagreement penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DeltaKind {
    /// Plain NMT: attention is unsupervised.
    None,
    /// `Σ ½(α − α̂)²`
    Mse,
    /// `−log Σ α·α̂`, one log over the whole matrix.
    Mul,
    /// `−Σ α̂·log α`
    #[default]
    Ce,
}

impl DeltaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DeltaKind::None => "none",
            DeltaKind::Mse => "mse",
            DeltaKind::Mul => "mul",
            DeltaKind::Ce => "ce",
        }
    }

    pub fn is_supervised(self) -> bool {
        self != DeltaKind::None
    }
}

impl fmt::Display for DeltaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeltaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(DeltaKind::None),
            "mse" => Ok(DeltaKind::Mse),
            "mul" => Ok(DeltaKind::Mul),
            "ce" => Ok(DeltaKind::Ce),
            other => Err(Error::Config(format!("unknown delta kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub delta: DeltaKind,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            delta: DeltaKind::Ce,
            lambda: 0.3,
        }
    }
}

impl LossConfig {
    pub fn baseline() -> Self {
        LossConfig {
            delta: DeltaKind::None,
            lambda: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be a finite value >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Whether the disagreement term contributes at all.
    pub fn penalizes(&self) -> bool {
        self.delta.is_supervised() && self.lambda != 0.0
    }
}

/// Negated sum of gold-token log-probabilities.
pub fn nll(gold_log_probs: &[f64]) -> Result<f64> {
    if let Some(bad) = gold_log_probs.iter().find(|&&lp| !(lp <= 0.0)) {
        return Err(Error::Numeric(format!("log-probability {bad} is not <= 0")));
    }
    Ok(-gold_log_probs.iter().sum::<f64>())
}

fn same_shape(alpha: &SoftAlignmentMatrix, hat: &SoftAlignmentMatrix) -> Result<()> {
    if alpha.shape() != hat.shape() {
        return Err(Error::Shape {
            op: "attention disagreement",
            left: alpha.shape(),
            right: hat.shape(),
        });
    }
    Ok(())
}

fn pairs<'a>(alpha: &'a SoftAlignmentMatrix, hat: &'a SoftAlignmentMatrix) -> impl Iterator<Item = (f64, f64)> + 'a {
    alpha
        .as_matrix()
        .data()
        .iter()
        .copied()
        .zip(hat.as_matrix().data().iter().copied())
}

pub fn delta_mse(alpha: &SoftAlignmentMatrix, hat: &SoftAlignmentMatrix) -> Result<f64> {
    same_shape(alpha, hat)?;
    Ok(pairs(alpha, hat).map(|(a, h)| 0.5 * (a - h) * (a - h)).sum())
}

pub fn delta_mul(alpha: &SoftAlignmentMatrix, hat: &SoftAlignmentMatrix) -> Result<f64> {
    same_shape(alpha, hat)?;
    let mass: f64 = pairs(alpha, hat).map(|(a, h)| a * h).sum();
    Ok(-clamped_ln(mass))
}

pub fn delta_ce(alpha: &SoftAlignmentMatrix, hat: &SoftAlignmentMatrix) -> Result<f64> {
    same_shape(alpha, hat)?;
    Ok(-pairs(alpha, hat)
        .map(|(a, h)| if h == 0.0 { 0.0 } else { h * clamped_ln(a) })
        .sum::<f64>())
}

/// Disagreement of the given kind; `None` is identically zero.
pub fn delta(kind: DeltaKind, alpha: &SoftAlignmentMatrix, hat: &SoftAlignmentMatrix) -> Result<f64> {
    match kind {
        DeltaKind::None => {
            same_shape(alpha, hat)?;
            Ok(0.0)
        }
        DeltaKind::Mse => delta_mse(alpha, hat),
        DeltaKind::Mul => delta_mul(alpha, hat),
        DeltaKind::Ce => delta_ce(alpha, hat),
    }
}

/// Records Δ(α, α̂) for a predicted attention matrix on the tape.
pub fn delta_on_tape(tape: &mut Tape<'_>, alpha: Var, hat: &SoftAlignmentMatrix, kind: DeltaKind) -> Result<Option<Var>> {
    if tape.shape(alpha) != hat.shape() {
        return Err(Error::Shape {
            op: "attention disagreement",
            left: tape.shape(alpha),
            right: hat.shape(),
        });
    }
    if kind == DeltaKind::None {
        return Ok(None);
    }
    let target = tape.input(hat.as_matrix().clone());
    let out = match kind {
        DeltaKind::None => unreachable!(),
        DeltaKind::Mse => {
            let diff = tape.sub(alpha, target)?;
            let sq = tape.mul(diff, diff)?;
            let total = tape.sum(sq);
            tape.scale(total, 0.5)
        }
        DeltaKind::Mul => {
            let prod = tape.mul(alpha, target)?;
            let mass = tape.sum(prod);
            let log = tape.log_clamped(mass);
            tape.scale(log, -1.0)
        }
        DeltaKind::Ce => {
            let log = tape.log_clamped(alpha);
            let weighted = tape.mul(target, log)?;
            let total = tape.sum(weighted);
            tape.scale(total, -1.0)
        }
    };
    Ok(Some(out))
}

/// Handles for one pair's contribution to the objective.
#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub total: Var,
    pub nll: Var,
    pub delta: Option<Var>,
    pub alpha: Var,
}

/// `nll + λ·Δ` for one sentence pair, recorded for backpropagation.
///
/// The penalty is not recorded at all when λ is zero, so such runs are
/// bit-for-bit the unsupervised objective.
pub fn joint_loss(
    pair: &SentencePair,
    alpha_hat: Option<&SoftAlignmentMatrix>,
    params: &ModelParams,
    config: &LossConfig,
    tape: &mut Tape<'_>,
) -> Result<JointLoss> {
    config.validate()?;
    if config.delta.is_supervised() && alpha_hat.is_none() {
        return Err(Error::Config(format!(
            "delta {} needs attention supervision for every pair",
            config.delta
        )));
    }
    let fwd = forward_teacher_forced(pair, params, tape)?;
    let total_lp = tape.sum(fwd.gold_log_probs);
    let nll = tape.scale(total_lp, -1.0);

    if !config.penalizes() {
        return Ok(JointLoss {
            total: nll,
            nll,
            delta: None,
            alpha: fwd.alpha,
        });
    }
    let hat = alpha_hat.expect("checked above");
    let delta = delta_on_tape(tape, fwd.alpha, hat, config.delta)?.expect("supervised kind");
    let weighted = tape.scale(delta, config.lambda);
    let total = tape.add(nll, weighted)?;
    Ok(JointLoss {
        total,
        nll,
        delta: Some(delta),
        alpha: fwd.alpha,
    })
}

/// Value and parameter gradients of the objective summed over `pairs`.
pub fn objective_and_gradients(
    pairs: &[SentencePair],
    supervision: Option<&[SoftAlignmentMatrix]>,
    params: &ModelParams,
    config: &LossConfig,
) -> Result<(f64, Vec<Matrix>)> {
    let mut grads: Vec<Matrix> = params
        .tensors()
        .iter()
        .map(|t| Matrix::zeros(t.rows(), t.cols()))
        .collect();
    let mut total = 0.0;
    for (i, pair) in pairs.iter().enumerate() {
        let mut tape = params.tape();
        let loss = joint_loss(pair, supervision.map(|s| &s[i]), params, config, &mut tape)?;
        total += tape.scalar(loss.total);
        tape.backward(loss.total)?.accumulate_params(&mut grads);
    }
    Ok((total, grads))
}

/// Value of the objective summed over `pairs`, without gradients.
pub fn objective(
    pairs: &[SentencePair],
    supervision: Option<&[SoftAlignmentMatrix]>,
    params: &ModelParams,
    config: &LossConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, pair) in pairs.iter().enumerate() {
        let mut tape = params.tape();
        let loss = joint_loss(pair, supervision.map(|s| &s[i]), params, config, &mut tape)?;
        total += tape.scalar(loss.total);
    }
    Ok(total)
}
