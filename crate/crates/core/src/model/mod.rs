//! Encoder, attention network and decoder.
//!
//! All tensors use the row-vector convention: an input `x` of shape 1×d is
//! multiplied on the right by a d×k weight matrix.
//!
//! * encoder: forward and backward GRUs over the source embeddings; row `i`
//!   of `E_x` is `[forward_i; backward_i]`.
//! * attention: `e_i = vᵀ tanh(W h_{t−1} + U E_{x_i} + V emb(y_{t−1}) + b)`,
//!   `α_t = softmax(e)` over all source positions including eol.
//! * decoder: `c_t = α_t E_x`, `h_t = GRU(h_{t−1}, [emb(y_{t−1}); c_t])` and
//!   word scores from one affine map of `[emb(y_{t−1}); h_t; c_t]`.

pub(crate) mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align_supervision::SoftAlignmentMatrix;
use crate::data::{SentencePair, EOL};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, TensorSet, Var};

pub const DEFAULT_INIT_SCALE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub att_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("emb_dim", self.emb_dim),
            ("hidden_dim", self.hidden_dim),
            ("att_dim", self.att_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.src_vocab < 2 || self.tgt_vocab < 2 {
            return Err(Error::Config("vocabularies need the eol and unk entries".into()));
        }
        Ok(())
    }
}

/// Indices of one GRU's tensors within the parameter list.
#[derive(Clone, Copy, Debug)]
struct GruSlots {
    w_gates: usize,
    u_gates: usize,
    b_gates: usize,
    w_cand: usize,
    u_cand: usize,
    b_cand: usize,
}

impl GruSlots {
    const fn at(base: usize) -> Self {
        GruSlots {
            w_gates: base,
            u_gates: base + 1,
            b_gates: base + 2,
            w_cand: base + 3,
            u_cand: base + 4,
            b_cand: base + 5,
        }
    }
}

const SRC_EMB: usize = 0;
const TGT_EMB: usize = 1;
const ENC_FWD: GruSlots = GruSlots::at(2);
const ENC_BWD: GruSlots = GruSlots::at(8);
const INIT_W: usize = 14;
const INIT_B: usize = 15;
const ATT_STATE: usize = 16;
const ATT_ENC: usize = 17;
const ATT_EMB: usize = 18;
const ATT_B: usize = 19;
const ATT_V: usize = 20;
const DEC: GruSlots = GruSlots::at(21);
const OUT_W: usize = 27;
const OUT_B: usize = 28;
const TENSOR_COUNT: usize = 29;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Name and shape of every parameter tensor, in storage order.
pub fn shape_manifest(c: &ModelConfig) -> Vec<TensorSpec> {
    let (e, h, a) = (c.emb_dim, c.hidden_dim, c.att_dim);
    let gru = |prefix: &str, input: usize| {
        vec![
            (format!("{prefix}.w_gates"), input, 2 * h),
            (format!("{prefix}.u_gates"), h, 2 * h),
            (format!("{prefix}.b_gates"), 1, 2 * h),
            (format!("{prefix}.w_cand"), input, h),
            (format!("{prefix}.u_cand"), h, h),
            (format!("{prefix}.b_cand"), 1, h),
        ]
    };
    let mut specs = vec![
        ("src_emb".to_string(), c.src_vocab, e),
        ("tgt_emb".to_string(), c.tgt_vocab, e),
    ];
    specs.extend(gru("enc_fwd", e));
    specs.extend(gru("enc_bwd", e));
    specs.extend([
        ("init.w".to_string(), h, h),
        ("init.b".to_string(), 1, h),
        ("att.w_state".to_string(), h, a),
        ("att.w_enc".to_string(), 2 * h, a),
        ("att.w_emb".to_string(), e, a),
        ("att.b".to_string(), 1, a),
        ("att.v".to_string(), a, 1),
    ]);
    specs.extend(gru("dec", e + 2 * h));
    specs.extend([
        ("out.w".to_string(), e + h + 2 * h, c.tgt_vocab),
        ("out.b".to_string(), 1, c.tgt_vocab),
    ]);
    debug_assert_eq!(specs.len(), TENSOR_COUNT);
    specs
        .into_iter()
        .map(|(name, rows, cols)| TensorSpec { name, rows, cols })
        .collect()
}

/// Every trainable tensor of the translation model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl ModelParams {
    /// Uniform initialization in `[−scale, scale]`.
    pub fn init(config: ModelConfig, scale: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let manifest = shape_manifest(&config);
        let tensors = manifest
            .iter()
            .map(|s| {
                let data = (0..s.rows * s.cols)
                    .map(|_| rng.gen_range(-scale..=scale))
                    .collect();
                Matrix::from_vec(s.rows, s.cols, data)
            })
            .collect::<Result<_>>()?;
        Ok(ModelParams {
            config,
            names: manifest.into_iter().map(|s| s.name).collect(),
            tensors,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut p = ModelParams::init(config, 0.0, 0)?;
        p.tensors.iter_mut().for_each(|t| t.scale_in_place(0.0));
        Ok(p)
    }

    /// Wraps tensors after checking them against the shape manifest.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        let manifest = shape_manifest(&config);
        if tensors.len() != manifest.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                manifest.len(),
                tensors.len()
            )));
        }
        for (spec, t) in manifest.iter().zip(&tensors) {
            if t.shape() != (spec.rows, spec.cols) {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, manifest requires {:?}",
                    spec.name,
                    t.shape(),
                    (spec.rows, spec.cols)
                )));
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("tensor {} has non-finite entries", spec.name)));
            }
        }
        Ok(ModelParams {
            config,
            names: manifest.into_iter().map(|s| s.name).collect(),
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// A tape recording against these parameters.
    pub fn tape(&self) -> Tape<'_> {
        Tape::new(&self.tensors)
    }
}

impl TensorSet for ModelParams {
    fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    fn tensor_name(&self, index: usize) -> String {
        self.names[index].clone()
    }
}

/// Encoder output for one source sentence.
#[derive(Clone, Copy, Debug)]
pub struct EncoderStates {
    /// `E_x`: (m+1) × 2·hidden.
    pub states: Var,
    /// `E_x · U`, the source half of the attention pre-activation.
    pub projected: Var,
    /// Backward GRU state at the first source position.
    pub backward_first: Var,
    pub len: usize,
}

/// Handles for one decoder timestep.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    pub alpha: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: DecoderState,
    /// Log-probabilities over the target vocabulary (1 × tgt_vocab).
    pub log_probs: Var,
}

fn gru_step(tape: &mut Tape<'_>, g: GruSlots, x_gates: Var, x_cand: Var, h: Var, hidden: usize) -> Result<Var> {
    let u_gates = tape.param(g.u_gates);
    let hu = tape.matmul(h, u_gates)?;
    let pre = tape.add(x_gates, hu)?;
    let gates = tape.sigmoid(pre);
    let z = tape.slice_cols(gates, 0, hidden)?;
    let r = tape.slice_cols(gates, hidden, hidden)?;
    let rh = tape.mul(r, h)?;
    let u_cand = tape.param(g.u_cand);
    let ru = tape.matmul(rh, u_cand)?;
    let cand_pre = tape.add(x_cand, ru)?;
    let cand = tape.tanh(cand_pre);
    let diff = tape.sub(cand, h)?;
    let step = tape.mul(z, diff)?;
    tape.add(h, step)
}

/// Input projections `x·W + b` for both the gates and the candidate.
fn gru_inputs(tape: &mut Tape<'_>, g: GruSlots, x: Var) -> Result<(Var, Var)> {
    let w = tape.param(g.w_gates);
    let b = tape.param(g.b_gates);
    let xg = tape.matmul(x, w)?;
    let xg = tape.add_row(xg, b)?;
    let w = tape.param(g.w_cand);
    let b = tape.param(g.b_cand);
    let xc = tape.matmul(x, w)?;
    let xc = tape.add_row(xc, b)?;
    Ok((xg, xc))
}

fn run_direction(
    tape: &mut Tape<'_>,
    g: GruSlots,
    embedded: Var,
    len: usize,
    hidden: usize,
    reverse: bool,
) -> Result<Vec<Var>> {
    let (xg, xc) = gru_inputs(tape, g, embedded)?;
    let mut h = tape.input(Matrix::zeros(1, hidden));
    let mut states = vec![h; len];
    let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
    for i in order {
        let xg_i = tape.row(xg, i)?;
        let xc_i = tape.row(xc, i)?;
        h = gru_step(tape, g, xg_i, xc_i, h, hidden)?;
        states[i] = h;
    }
    Ok(states)
}

/// Bidirectional encoding of an arbitrary index sequence.
pub(crate) fn encode_sequence(x: &[usize], params: &ModelParams, tape: &mut Tape<'_>) -> Result<EncoderStates> {
    let c = params.config();
    if x.is_empty() {
        return Err(Error::Domain("cannot encode an empty sequence".into()));
    }
    if let Some(&bad) = x.iter().find(|&&i| i >= c.src_vocab) {
        return Err(Error::Domain(format!(
            "source index {bad} outside embedding table of {} rows",
            c.src_vocab
        )));
    }
    let table = tape.param(SRC_EMB);
    let embedded = tape.gather_rows(table, x)?;
    let fwd = run_direction(tape, ENC_FWD, embedded, x.len(), c.hidden_dim, false)?;
    let bwd = run_direction(tape, ENC_BWD, embedded, x.len(), c.hidden_dim, true)?;
    let f = tape.concat_rows(&fwd)?;
    let b = tape.concat_rows(&bwd)?;
    let states = tape.concat_cols(&[f, b])?;
    let u = tape.param(ATT_ENC);
    let projected = tape.matmul(states, u)?;
    Ok(EncoderStates {
        states,
        projected,
        backward_first: bwd[0],
        len: x.len(),
    })
}

/// Encodes a source sentence that ends with eol.
pub fn encode(x: &[usize], params: &ModelParams, tape: &mut Tape<'_>) -> Result<EncoderStates> {
    if x.last() != Some(&EOL) {
        return Err(Error::Domain("source sequence must end with eol".into()));
    }
    encode_sequence(x, params, tape)
}

/// `h_0 = tanh(backward_1 · W_init + b_init)`.
pub fn initial_state(enc: &EncoderStates, tape: &mut Tape<'_>) -> Result<Var> {
    let w = tape.param(INIT_W);
    let b = tape.param(INIT_B);
    let pre = tape.matmul(enc.backward_first, w)?;
    let pre = tape.add(pre, b)?;
    Ok(tape.tanh(pre))
}

fn check_target(y: usize, params: &ModelParams) -> Result<()> {
    if y >= params.config().tgt_vocab {
        return Err(Error::Domain(format!(
            "target index {y} outside embedding table of {} rows",
            params.config().tgt_vocab
        )));
    }
    Ok(())
}

fn attend_embedded(tape: &mut Tape<'_>, emb: Var, h_prev: Var, enc: &EncoderStates) -> Result<Var> {
    let w = tape.param(ATT_STATE);
    let v_emb = tape.param(ATT_EMB);
    let b = tape.param(ATT_B);
    let from_state = tape.matmul(h_prev, w)?;
    let from_emb = tape.matmul(emb, v_emb)?;
    let q = tape.add(from_state, from_emb)?;
    let q = tape.add(q, b)?;
    let pre = tape.add_row(enc.projected, q)?;
    let act = tape.tanh(pre);
    let v = tape.param(ATT_V);
    let scores = tape.matmul(act, v)?;
    let scores = tape.transpose(scores);
    tape.softmax_rows(scores)
}

/// Attention row `α_t` (1 × (m+1)) given the previous word and state.
pub fn attend(
    y_prev: usize,
    h_prev: Var,
    enc: &EncoderStates,
    params: &ModelParams,
    tape: &mut Tape<'_>,
) -> Result<Var> {
    check_target(y_prev, params)?;
    check_hidden(tape, h_prev, params)?;
    let table = tape.param(TGT_EMB);
    let emb = tape.gather_rows(table, &[y_prev])?;
    attend_embedded(tape, emb, h_prev, enc)
}

fn check_hidden(tape: &Tape<'_>, h: Var, params: &ModelParams) -> Result<()> {
    let want = (1, params.config().hidden_dim);
    if tape.shape(h) != want {
        return Err(Error::Shape {
            op: "decoder state",
            left: tape.shape(h),
            right: want,
        });
    }
    Ok(())
}

/// One decoder timestep: attention, context, GRU update and word scores.
pub fn decoder_step(
    y_prev: usize,
    h_prev: Var,
    enc: &EncoderStates,
    params: &ModelParams,
    tape: &mut Tape<'_>,
) -> Result<StepOutput> {
    check_target(y_prev, params)?;
    check_hidden(tape, h_prev, params)?;
    let hidden = params.config().hidden_dim;
    let table = tape.param(TGT_EMB);
    let emb = tape.gather_rows(table, &[y_prev])?;
    let alpha = attend_embedded(tape, emb, h_prev, enc)?;
    let c = tape.matmul(alpha, enc.states)?;

    let x = tape.concat_cols(&[emb, c])?;
    let (xg, xc) = gru_inputs(tape, DEC, x)?;
    let h = gru_step(tape, DEC, xg, xc, h_prev, hidden)?;

    let features = tape.concat_cols(&[emb, h, c])?;
    let w = tape.param(OUT_W);
    let b = tape.param(OUT_B);
    let logits = tape.matmul(features, w)?;
    let logits = tape.add(logits, b)?;
    let log_probs = tape.log_softmax_rows(logits)?;
    Ok(StepOutput {
        state: DecoderState { h, c, alpha },
        log_probs,
    })
}

/// Teacher-forced pass over a gold target.
#[derive(Clone, Copy, Debug)]
pub struct TeacherForced {
    /// Log-probability of each gold token, eol step included: 1 × (n+1).
    pub gold_log_probs: Var,
    /// Stacked attention rows: (n+1) × (m+1).
    pub alpha: Var,
}

pub fn forward_teacher_forced(
    pair: &SentencePair,
    params: &ModelParams,
    tape: &mut Tape<'_>,
) -> Result<TeacherForced> {
    pair.check_vocab(params.config().src_vocab, params.config().tgt_vocab)?;
    let enc = encode(&pair.source, params, tape)?;
    let mut h = initial_state(&enc, tape)?;
    let mut y_prev = EOL;
    let mut picks = Vec::with_capacity(pair.target.len());
    let mut rows = Vec::with_capacity(pair.target.len());
    for &y in &pair.target {
        let step = decoder_step(y_prev, h, &enc, params, tape)?;
        picks.push(tape.pick(step.log_probs, 0, y)?);
        rows.push(step.state.alpha);
        h = step.state.h;
        y_prev = y;
    }
    Ok(TeacherForced {
        gold_log_probs: tape.concat_cols(&picks)?,
        alpha: tape.concat_rows(&rows)?,
    })
}

/// Gold log-probabilities and attention matrix as plain values.
pub fn teacher_forced_values(pair: &SentencePair, params: &ModelParams) -> Result<(Vec<f64>, SoftAlignmentMatrix)> {
    let mut tape = params.tape();
    let out = forward_teacher_forced(pair, params, &mut tape)?;
    let lp = tape.value(out.gold_log_probs).data().to_vec();
    let alpha = SoftAlignmentMatrix::new(tape.value(out.alpha).clone())?;
    Ok((lp, alpha))
}
