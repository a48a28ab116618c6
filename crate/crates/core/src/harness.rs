//! Synthetic parallel corpora with known alignments, and side-by-side
//! training runs scored on them.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align_supervision::{to_supervision, HardAlignment, SoftAlignmentMatrix};
use crate::data::{build_vocab, SentencePair, Vocab};
use crate::decoding::{beam_search, default_max_len, extract_hard_alignment, force_decode};
use crate::error::{Error, Result};
use crate::eval::{aer, bleu4, GoldAlignment};
use crate::model::{teacher_forced_values, ModelConfig, ModelParams, DEFAULT_INIT_SCALE};
use crate::numerics::Matrix;
use crate::training::{train, TrainConfig, TrainOutcome};

pub const MAX_SYNTH_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthTask {
    Copy,
    Reverse,
    /// Adjacent pairs swapped; an odd final word stays put.
    LocalSwap,
}

impl SynthTask {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthTask::Copy => "copy",
            SynthTask::Reverse => "reverse",
            SynthTask::LocalSwap => "local-swap",
        }
    }

    /// Source position of each target position.
    pub fn permutation(self, len: usize) -> Vec<usize> {
        (0..len)
            .map(|j| match self {
                SynthTask::Copy => j,
                SynthTask::Reverse => len - 1 - j,
                SynthTask::LocalSwap if j % 2 == 0 && j + 1 < len => j + 1,
                SynthTask::LocalSwap if j % 2 == 1 => j - 1,
                SynthTask::LocalSwap => j,
            })
            .collect()
    }
}

impl fmt::Display for SynthTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(SynthTask::Copy),
            "reverse" => Ok(SynthTask::Reverse),
            "local-swap" => Ok(SynthTask::LocalSwap),
            other => Err(Error::Config(format!("unknown task {other:?} (copy, reverse, local-swap)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            task: SynthTask::Reverse,
            vocab_size: 20,
            min_len: 3,
            max_len: 8,
            train_size: 3000,
            dev_size: 200,
            test_size: 200,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_len < 1 || self.min_len > self.max_len || self.max_len > MAX_SYNTH_LEN {
            return Err(Error::Config(format!(
                "length range {}..={} must lie within 1..={MAX_SYNTH_LEN}",
                self.min_len, self.max_len
            )));
        }
        if self.vocab_size == 0 || self.train_size == 0 || self.dev_size == 0 || self.test_size == 0 {
            return Err(Error::Config("vocabulary and corpus sizes must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthSplit {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub alignments: Vec<HardAlignment>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub train: SynthSplit,
    pub dev: SynthSplit,
    pub test: SynthSplit,
}

fn sentence(task: SynthTask, words: &[usize]) -> (String, String, HardAlignment) {
    let perm = task.permutation(words.len());
    let source = words.iter().map(|w| format!("t{w}")).collect::<Vec<_>>().join(" ");
    let target = perm.iter().map(|&i| format!("u{}", words[i])).collect::<Vec<_>>().join(" ");
    let links = perm.iter().enumerate().map(|(j, &i)| (i, j));
    let align = HardAlignment::new(words.len(), words.len(), links).expect("permutation links are in range");
    (source, target, align)
}

/// Source word `tk` translates to `uk`; the task decides word order.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = |size: usize| {
        let mut out = SynthSplit::default();
        for _ in 0..size {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let words: Vec<usize> = (0..len).map(|_| rng.gen_range(0..spec.vocab_size)).collect();
            let (s, t, a) = sentence(spec.task, &words);
            out.sources.push(s);
            out.targets.push(t);
            out.alignments.push(a);
        }
        out
    };
    Ok(SynthCorpus {
        train: split(spec.train_size),
        dev: split(spec.dev_size),
        test: split(spec.test_size),
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn lines<S: AsRef<str>>(items: impl IntoIterator<Item = S>) -> String {
    let mut out = String::new();
    for s in items {
        out.push_str(s.as_ref());
        out.push('\n');
    }
    out
}

/// Writes `{train,dev,test}.{src,tgt,align}` into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, split) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        write_file(&dir.join(format!("{name}.src")), &lines(&split.sources))?;
        write_file(&dir.join(format!("{name}.tgt")), &lines(&split.targets))?;
        write_file(
            &dir.join(format!("{name}.align")),
            &lines(split.alignments.iter().map(HardAlignment::to_pharaoh)),
        )?;
    }
    Ok(())
}

/// One model/loss setting to train and score.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub att_dim: usize,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub config: String,
    pub task: SynthTask,
    pub dev_bleu: f64,
    pub test_bleu: f64,
    pub test_aer: f64,
    /// Teacher-forced next-word accuracy on the test split, eol included.
    pub token_acc: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub outcomes: Vec<TrainOutcome>,
}

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,task,dev_bleu,test_bleu,test_aer,token_acc\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.config, r.task, r.dev_bleu, r.test_bleu, r.test_aer, r.token_acc
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOptions {
    pub beam: usize,
    /// Test sentences whose attention matrices are written as heatmaps.
    pub heatmaps: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions { beam: 12, heatmaps: 3 }
    }
}

struct Encoded {
    pairs: Vec<SentencePair>,
    supervision: Vec<SoftAlignmentMatrix>,
}

fn encode_split(split: &SynthSplit, src: &Vocab, tgt: &Vocab) -> Encoded {
    Encoded {
        pairs: split
            .sources
            .iter()
            .zip(&split.targets)
            .map(|(s, t)| SentencePair::encode(s, t, src, tgt))
            .collect(),
        supervision: split.alignments.iter().map(to_supervision).collect(),
    }
}

/// Beam-search translations of `pairs` rendered as target words.
pub fn translate_all(pairs: &[SentencePair], params: &ModelParams, vocab: &Vocab, beam: usize) -> Result<Vec<String>> {
    pairs
        .iter()
        .map(|p| Ok(vocab.decode(beam_search(&p.source, params, beam, default_max_len(&p.source))?.words())))
        .collect()
}

/// Share of gold target tokens that are the model's top choice given the
/// gold prefix.
pub fn token_accuracy(pairs: &[SentencePair], params: &ModelParams) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for pair in pairs {
        let mut tape = params.tape();
        let enc = crate::model::encode(&pair.source, params, &mut tape)?;
        let mut h = crate::model::initial_state(&enc, &mut tape)?;
        let mut y_prev = crate::data::EOL;
        for &y in &pair.target {
            let step = crate::model::decoder_step(y_prev, h, &enc, params, &mut tape)?;
            if tape.value(step.log_probs).row_argmax(0) == y {
                hits += 1;
            }
            total += 1;
            h = step.state.h;
            y_prev = y;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Force-decoded AER against the generated gold permutations.
pub fn alignment_error(pairs: &[SentencePair], gold: &[HardAlignment], params: &ModelParams) -> Result<f64> {
    let system: Vec<HardAlignment> = pairs
        .iter()
        .map(|p| Ok(extract_hard_alignment(&force_decode(p, params)?)))
        .collect::<Result<_>>()?;
    let gold: Vec<GoldAlignment> = gold
        .iter()
        .map(|g| GoldAlignment {
            sure: g.links().clone(),
            possible: g.links().clone(),
        })
        .collect();
    aer(&system, &gold)
}

/// Plain-text matrix: `rows cols` header, then one line per row.
pub fn heatmap_text(alpha: &Matrix) -> String {
    let mut out = format!("{} {}\n", alpha.rows(), alpha.cols());
    for r in 0..alpha.rows() {
        let row: Vec<String> = alpha.row(r).iter().map(f64::to_string).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Trains every config from the same initial seed on the same data and
/// scores the best-dev checkpoint of each.
///
/// With `out_dir`, writes `report.csv`, `<config>.curve.csv` and
/// `<config>.heatmap<k>.txt` there.
pub fn run_experiment(
    spec: &SynthSpec,
    configs: &[ExperimentConfig],
    options: &ExperimentOptions,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    if !configs.iter().any(|c| !c.train.loss.delta.is_supervised())
        || !configs.iter().any(|c| c.train.loss.delta.is_supervised())
    {
        return Err(Error::Config(
            "an experiment needs at least one unsupervised and one supervised config".into(),
        ));
    }
    let corpus = generate(spec)?;
    let src_vocab = build_vocab(&corpus.train.sources, spec.vocab_size + 2)?;
    let tgt_vocab = build_vocab(&corpus.train.targets, spec.vocab_size + 2)?;
    let train_set = encode_split(&corpus.train, &src_vocab, &tgt_vocab);
    let dev_set = encode_split(&corpus.dev, &src_vocab, &tgt_vocab);
    let test_set = encode_split(&corpus.test, &src_vocab, &tgt_vocab);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut rows = Vec::with_capacity(configs.len());
    let mut outcomes = Vec::with_capacity(configs.len());
    for cfg in configs {
        let model = ModelConfig {
            src_vocab: src_vocab.len(),
            tgt_vocab: tgt_vocab.len(),
            emb_dim: cfg.emb_dim,
            hidden_dim: cfg.hidden_dim,
            att_dim: cfg.att_dim,
        };
        let init = ModelParams::init(model, DEFAULT_INIT_SCALE, cfg.train.seed)?;
        let supervision = cfg
            .train
            .loss
            .delta
            .is_supervised()
            .then_some(train_set.supervision.as_slice());
        let outcome = train(init, &train_set.pairs, supervision, &dev_set.pairs, &cfg.train, None)?;
        let params = &outcome.best;

        let dev_hyps = translate_all(&dev_set.pairs, params, &tgt_vocab, options.beam)?;
        let test_hyps = translate_all(&test_set.pairs, params, &tgt_vocab, options.beam)?;
        let row = ReportRow {
            config: cfg.name.clone(),
            task: spec.task,
            dev_bleu: bleu4(&dev_hyps, std::slice::from_ref(&corpus.dev.targets))?,
            test_bleu: bleu4(&test_hyps, std::slice::from_ref(&corpus.test.targets))?,
            test_aer: alignment_error(&test_set.pairs, &corpus.test.alignments, params)?,
            token_acc: token_accuracy(&test_set.pairs, params)?,
        };

        if let Some(dir) = out_dir {
            write_file(&dir.join(format!("{}.curve.csv", cfg.name)), &outcome.log.to_csv())?;
            for (k, pair) in test_set.pairs.iter().take(options.heatmaps).enumerate() {
                let (_, alpha) = teacher_forced_values(pair, params)?;
                write_file(
                    &dir.join(format!("{}.heatmap{k}.txt", cfg.name)),
                    &heatmap_text(alpha.as_matrix()),
                )?;
            }
        }
        rows.push(row);
        outcomes.push(outcome);
    }

    let report = ExperimentReport { rows, outcomes };
    if let Some(dir) = out_dir {
        write_file(&dir.join("report.csv"), &report.to_csv())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{DeltaKind, LossConfig};

    #[test]
    fn task_permutations() {
        assert_eq!(SynthTask::Copy.permutation(2), vec![0, 1]);
        assert_eq!(SynthTask::Reverse.permutation(3), vec![2, 1, 0]);
        assert_eq!(SynthTask::LocalSwap.permutation(5), vec![1, 0, 3, 2, 4]);
    }

    #[test]
    fn sentence_fixtures() {
        let (s, t, a) = sentence(SynthTask::Copy, &[3, 7]);
        assert_eq!((s.as_str(), t.as_str(), a.to_pharaoh().as_str()), ("t3 t7", "u3 u7", "0-0 1-1"));
        let (_, t, a) = sentence(SynthTask::Reverse, &[1, 2, 3]);
        assert_eq!(t, "u3 u2 u1");
        assert_eq!(a.to_pharaoh(), "0-2 1-1 2-0");
    }

    #[test]
    fn generation_is_seeded_and_alignments_are_permutations() {
        let spec = SynthSpec {
            train_size: 50,
            dev_size: 5,
            test_size: 5,
            task: SynthTask::LocalSwap,
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        assert_ne!(a, generate(&SynthSpec { seed: 2, ..spec }).unwrap());
        for al in &a.train.alignments {
            let mut src: Vec<usize> = al.links().iter().map(|l| l.0).collect();
            let mut tgt: Vec<usize> = al.links().iter().map(|l| l.1).collect();
            src.sort_unstable();
            tgt.sort_unstable();
            assert_eq!(src, (0..al.m()).collect::<Vec<_>>());
            assert_eq!(tgt, (0..al.n()).collect::<Vec<_>>());
            let sup = to_supervision(al);
            assert!(sup.as_matrix().data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn spec_limits() {
        let bad = SynthSpec {
            max_len: 21,
            ..SynthSpec::default()
        };
        assert!(bad.validate().is_err());
        assert!(SynthSpec {
            min_len: 0,
            ..SynthSpec::default()
        }
        .validate()
        .is_err());
        assert!("sideways".parse::<SynthTask>().is_err());
    }

    #[test]
    fn tiny_experiment_has_one_row_per_config_and_lambda_zero_matches_baseline() {
        let spec = SynthSpec {
            vocab_size: 5,
            min_len: 2,
            max_len: 4,
            train_size: 20,
            dev_size: 4,
            test_size: 4,
            ..SynthSpec::default()
        };
        let cfg = |name: &str, delta, lambda| ExperimentConfig {
            name: name.into(),
            emb_dim: 4,
            hidden_dim: 5,
            att_dim: 4,
            train: TrainConfig {
                loss: LossConfig { delta, lambda },
                batch_size: 4,
                max_updates: 6,
                eval_every: 3,
                ..TrainConfig::default()
            },
        };
        let configs = [
            cfg("nmt", DeltaKind::None, 0.0),
            cfg("zero", DeltaKind::Ce, 0.0),
            cfg("sa", DeltaKind::Ce, 1.0),
        ];
        let dir = tempfile::tempdir().unwrap();
        let options = ExperimentOptions { beam: 2, heatmaps: 1 };
        let report = run_experiment(&spec, &configs, &options, Some(dir.path())).unwrap();
        assert_eq!(report.rows.len(), 3);
        let strip = |r: &ReportRow| (r.dev_bleu, r.test_bleu, r.test_aer, r.token_acc);
        assert_eq!(strip(&report.rows[0]), strip(&report.rows[1]));
        let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(csv, report.to_csv());
        assert_eq!(csv.lines().count(), 4);
        let heat = fs::read_to_string(dir.path().join("sa.heatmap0.txt")).unwrap();
        let header: Vec<usize> = heat.lines().next().unwrap().split(' ').map(|v| v.parse().unwrap()).collect();
        assert_eq!(heat.lines().count(), header[0] + 1);

        assert!(run_experiment(&spec, &configs[..1], &options, None).is_err());
    }
}
