//! The `sanmt` command line.
//!
//! Every command that writes files also writes a run manifest next to them
//! (`run.manifest` inside an output directory, `<file>.manifest` beside an
//! output file). `sanmt rerun <manifest>` repeats the run.

mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

pub use manifest::{file_digest, RunManifest};

use crate::align_supervision::{parse_pharaoh_line, read_supervision, write_supervision, HardAlignment, PharaohOrder};
use crate::data::{build_vocab, length_filter_indices, read_lines, read_parallel, SentencePair, Vocab, EOL, UNK};
use crate::decoding::{beam_search, default_max_len, extract_hard_alignment, force_decode};
use crate::error::{Error, Result};
use crate::eval::{
    aer_sentence_counts, bleu_sentence_stats, bootstrap, parse_gold_line, AerCounts, BleuStats, GoldAlignment,
};
use crate::harness::{generate, run_experiment, write_corpus, ExperimentConfig, ExperimentOptions, SynthSpec, SynthTask};
use crate::losses::{DeltaKind, LossConfig};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, ModelParams};
use crate::training::{
    load_optimizer_state, save_optimizer_state, train, Optimizer, Resume, TrainConfig, DEFAULT_CLIP,
};

pub const MANIFEST_NAME: &str = "run.manifest";

#[derive(Debug, Parser)]
#[command(name = "sanmt", version, about = "Attention NMT with optional attention supervision")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build vocabularies, filter by length and turn alignments into
    /// attention supervision.
    Preprocess(PreprocessArgs),
    /// Train a model on preprocessed data.
    Train(TrainArgs),
    /// Translate a source file with beam search.
    Translate(TranslateArgs),
    /// Force-decode sentence pairs and write Pharaoh alignments.
    Align(AlignArgs),
    /// Score translations (BLEU) or alignments (AER).
    Eval(EvalArgs),
    /// Generate a synthetic parallel corpus with gold alignments.
    Synth(SynthArgs),
    /// Train several configurations on a synthetic corpus and compare them.
    Experiment(ExperimentArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlignOrder {
    /// `i-j` means source i, target j.
    SourceTarget,
    /// `i-j` means target i, source j.
    TargetSource,
}

#[derive(Debug, clap::Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// Pharaoh alignments, one line per sentence pair.
    #[arg(long)]
    pub align: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "source-target")]
    pub align_order: AlignOrder,
    #[arg(long, default_value_t = 30000)]
    pub src_vocab: usize,
    #[arg(long, default_value_t = 30000)]
    pub tgt_vocab: usize,
    /// Pairs with a longer side are dropped.
    #[arg(long, default_value_t = 50)]
    pub max_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerKind {
    Adadelta,
    Sgd,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Output directory of `preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dev_src: Option<PathBuf>,
    #[arg(long)]
    pub dev_tgt: Option<PathBuf>,
    #[arg(long, default_value = "ce")]
    pub delta: DeltaKind,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 620)]
    pub emb_dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub att_dim: usize,
    #[arg(long, default_value_t = 0.08)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 80)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_updates: usize,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Global gradient-norm threshold.
    #[arg(long, default_value_t = DEFAULT_CLIP)]
    pub clip: f64,
    /// Train without gradient clipping.
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long, value_enum, default_value = "adadelta")]
    pub optimizer: OptimizerKind,
    /// Step size for `--optimizer sgd`.
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    /// Continue from the `last.ckpt` and `optimizer.state` of an earlier run.
    #[arg(long)]
    pub resume_from: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub beam: usize,
    /// Decode cap; defaults to twice the source length plus ten.
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Bleu,
    Aer,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub mode: EvalMode,
    /// Translations (bleu) or Pharaoh alignments (aer).
    #[arg(long)]
    pub hyp: PathBuf,
    /// Reference translations; repeat for several reference sets.
    #[arg(long = "ref", action = ArgAction::Append)]
    pub refs: Vec<PathBuf>,
    /// Gold alignments with `i-j` sure and `i?j` possible links.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Bootstrap resamples for a 95% interval; 0 skips it.
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Write the scores here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Copy,
    Reverse,
    LocalSwap,
}

impl From<TaskArg> for SynthTask {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Copy => SynthTask::Copy,
            TaskArg::Reverse => SynthTask::Reverse,
            TaskArg::LocalSwap => SynthTask::LocalSwap,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct SynthSpecArgs {
    #[arg(long, value_enum, default_value = "reverse")]
    pub task: TaskArg,
    #[arg(long, default_value_t = 20)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    #[arg(long, default_value_t = 3000)]
    pub train_size: usize,
    #[arg(long, default_value_t = 200)]
    pub dev_size: usize,
    #[arg(long, default_value_t = 200)]
    pub test_size: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl SynthSpecArgs {
    fn spec(&self) -> SynthSpec {
        SynthSpec {
            task: self.task.into(),
            vocab_size: self.vocab_size,
            min_len: self.min_len,
            max_len: self.max_len,
            train_size: self.train_size,
            dev_size: self.dev_size,
            test_size: self.test_size,
            seed: self.seed,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub spec: SynthSpecArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub spec: SynthSpecArgs,
    /// Comma-separated `name:delta:lambda` entries.
    #[arg(long, default_value = "nmt:none:0,sa-nmt:ce:1")]
    pub configs: String,
    #[arg(long, default_value_t = 32)]
    pub emb_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub att_dim: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3000)]
    pub max_updates: usize,
    #[arg(long, default_value_t = 500)]
    pub eval_every: usize,
    #[arg(long, default_value_t = DEFAULT_CLIP)]
    pub clip: f64,
    #[arg(long, default_value_t = 12)]
    pub beam: usize,
    /// Test sentences whose attention matrices are written out.
    #[arg(long, default_value_t = 3)]
    pub heatmaps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}

/// Files a command read and where its manifest belongs.
struct Record {
    inputs: Vec<PathBuf>,
    manifest: Option<PathBuf>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn joined_lines<S: AsRef<str>>(lines: &[S]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(l.as_ref());
        out.push('\n');
    }
    out
}

fn manifest_beside(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest");
    output.with_file_name(name)
}

fn preprocess(a: &PreprocessArgs) -> Result<Record> {
    if a.max_len == 0 {
        return Err(Error::Config("max length must be at least 1".into()));
    }
    let (src, tgt) = read_parallel(&a.src, &a.tgt)?;
    let alignments = match &a.align {
        Some(path) => {
            let lines = read_lines(path)?;
            if lines.len() != src.len() {
                return Err(Error::Consistency(format!(
                    "{} has {} lines but the corpus has {}",
                    path.display(),
                    lines.len(),
                    src.len()
                )));
            }
            let order = match a.align_order {
                AlignOrder::SourceTarget => PharaohOrder::SourceTarget,
                AlignOrder::TargetSource => PharaohOrder::TargetSource,
            };
            let parsed = lines
                .iter()
                .enumerate()
                .map(|(k, l)| {
                    let m = src[k].split_whitespace().count();
                    let n = tgt[k].split_whitespace().count();
                    parse_pharaoh_line(l, k + 1, m, n, order)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(parsed)
        }
        None => None,
    };

    let lengths: Vec<SentencePair> = src
        .iter()
        .zip(&tgt)
        .map(|(s, t)| {
            let m = s.split_whitespace().count();
            let n = t.split_whitespace().count();
            let mut s = vec![UNK; m];
            let mut t = vec![UNK; n];
            s.push(EOL);
            t.push(EOL);
            SentencePair::new(s, t)
        })
        .collect::<Result<_>>()?;
    let kept = length_filter_indices(&lengths, a.max_len);
    let kept_src: Vec<&str> = kept.iter().map(|&i| src[i].as_str()).collect();
    let kept_tgt: Vec<&str> = kept.iter().map(|&i| tgt[i].as_str()).collect();
    if kept.is_empty() {
        return Err(Error::Data(format!("no sentence pair has both sides within {} words", a.max_len)));
    }
    let src_vocab = build_vocab(&kept_src, a.src_vocab)?;
    let tgt_vocab = build_vocab(&kept_tgt, a.tgt_vocab)?;

    create_dir(&a.out)?;
    write(&a.out.join("src.vocab"), &src_vocab.to_text())?;
    write(&a.out.join("tgt.vocab"), &tgt_vocab.to_text())?;
    write(&a.out.join("train.src"), &joined_lines(&kept_src))?;
    write(&a.out.join("train.tgt"), &joined_lines(&kept_tgt))?;
    let idx: Vec<String> = kept.iter().map(usize::to_string).collect();
    write(&a.out.join("kept.idx"), &joined_lines(&idx))?;
    if let Some(al) = &alignments {
        let sup: Vec<_> = kept.iter().map(|&i| crate::align_supervision::to_supervision(&al[i])).collect();
        write(&a.out.join("supervision.txt"), &write_supervision(&sup))?;
    }
    eprintln!("kept {} of {} pairs", kept.len(), src.len());

    let mut inputs = vec![a.src.clone(), a.tgt.clone()];
    inputs.extend(a.align.clone());
    Ok(Record {
        inputs,
        manifest: Some(a.out.join(MANIFEST_NAME)),
    })
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocab::from_text(&text)
}

fn encode_pairs(src: &[String], tgt: &[String], sv: &Vocab, tv: &Vocab) -> Vec<SentencePair> {
    src.iter().zip(tgt).map(|(s, t)| SentencePair::encode(s, t, sv, tv)).collect()
}

fn train_cmd(a: &TrainArgs) -> Result<Record> {
    let config = TrainConfig {
        loss: LossConfig {
            delta: a.delta,
            lambda: a.lambda,
        },
        batch_size: a.batch_size,
        max_updates: a.max_updates,
        eval_every: a.eval_every,
        seed: a.seed,
        clip: (!a.no_clip).then_some(a.clip),
        optimizer: match a.optimizer {
            OptimizerKind::Adadelta => Optimizer::Adadelta,
            OptimizerKind::Sgd => Optimizer::Sgd {
                learning_rate: a.learning_rate,
            },
        },
    };
    config.validate()?;

    let data = &a.data;
    let mut inputs = vec![
        data.join("src.vocab"),
        data.join("tgt.vocab"),
        data.join("train.src"),
        data.join("train.tgt"),
    ];
    let src_vocab = read_vocab(&inputs[0])?;
    let tgt_vocab = read_vocab(&inputs[1])?;
    let (src, tgt) = read_parallel(&inputs[2], &inputs[3])?;
    let pairs = encode_pairs(&src, &tgt, &src_vocab, &tgt_vocab);

    let supervision = if a.delta.is_supervised() {
        let path = data.join("supervision.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sup = read_supervision(&text)?;
        if sup.len() != pairs.len() {
            return Err(Error::Consistency(format!(
                "{} supervision matrices for {} training pairs",
                sup.len(),
                pairs.len()
            )));
        }
        inputs.push(path);
        Some(sup)
    } else {
        None
    };

    let dev = match (&a.dev_src, &a.dev_tgt) {
        (Some(s), Some(t)) => {
            let (ds, dt) = read_parallel(s, t)?;
            inputs.push(s.clone());
            inputs.push(t.clone());
            encode_pairs(&ds, &dt, &src_vocab, &tgt_vocab)
        }
        (None, None) => Vec::new(),
        _ => return Err(Error::Config("--dev-src and --dev-tgt go together".into())),
    };


    let (params, resume) = match &a.resume_from {
        Some(dir) => {
            let ckpt_path = dir.join("last.ckpt");
            let state_path = dir.join("optimizer.state");
            let ckpt = load_checkpoint(&ckpt_path)?;
            if ckpt.source_vocab != src_vocab || ckpt.target_vocab != tgt_vocab {
                return Err(Error::Checkpoint(format!(
                    "{} was trained with different vocabularies",
                    ckpt_path.display()
                )));
            }
            let resume = load_optimizer_state(&state_path)?;
            inputs.push(ckpt_path);
            inputs.push(state_path);
            (ckpt.params, Some(resume))
        }
        None => {
            let model = ModelConfig {
                src_vocab: src_vocab.len(),
                tgt_vocab: tgt_vocab.len(),
                emb_dim: a.emb_dim,
                hidden_dim: a.hidden_dim,
                att_dim: a.att_dim,
            };
            (ModelParams::init(model, a.init_scale, a.seed)?, None)
        }
    };

    let outcome = train(params, &pairs, supervision.as_deref(), &dev, &config, resume)?;
    create_dir(&a.out)?;
    let names = outcome.best.names().to_vec();
    save_checkpoint(
        &a.out.join("model.ckpt"),
        &Checkpoint::new(outcome.best, src_vocab.clone(), tgt_vocab.clone())?,
    )?;
    save_checkpoint(&a.out.join("last.ckpt"), &Checkpoint::new(outcome.last, src_vocab, tgt_vocab)?)?;
    save_optimizer_state(
        &a.out.join("optimizer.state"),
        &names,
        &Resume {
            optimizer: outcome.optimizer,
            updates_done: outcome.updates_done,
        },
    )?;
    write(&a.out.join("curve.csv"), &outcome.log.to_csv())?;
    match outcome.best_dev_bleu {
        Some(b) => eprintln!("best dev BLEU {b:.4} at update {}", outcome.best_update),
        None => eprintln!("trained {} updates", outcome.updates_done),
    }
    Ok(Record {
        inputs,
        manifest: Some(a.out.join(MANIFEST_NAME)),
    })
}

fn translate_cmd(a: &TranslateArgs) -> Result<Record> {
    let ckpt = load_checkpoint(&a.model)?;
    let lines = read_lines(&a.input)?;
    let mut out = Vec::with_capacity(lines.len());
    for line in &lines {
        let src = crate::data::encode(line, &ckpt.source_vocab);
        let cap = a.max_len.unwrap_or_else(|| default_max_len(&src));
        let hyp = beam_search(&src, &ckpt.params, a.beam, cap)?;
        out.push(ckpt.target_vocab.decode(hyp.words()));
    }
    write(&a.output, &joined_lines(&out))?;
    Ok(Record {
        inputs: vec![a.model.clone(), a.input.clone()],
        manifest: Some(manifest_beside(&a.output)),
    })
}

fn align_cmd(a: &AlignArgs) -> Result<Record> {
    let ckpt = load_checkpoint(&a.model)?;
    let (src, tgt) = read_parallel(&a.src, &a.tgt)?;
    let pairs = encode_pairs(&src, &tgt, &ckpt.source_vocab, &ckpt.target_vocab);
    let mut out = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        out.push(extract_hard_alignment(&force_decode(pair, &ckpt.params)?).to_pharaoh());
    }
    write(&a.output, &joined_lines(&out))?;
    Ok(Record {
        inputs: vec![a.model.clone(), a.src.clone(), a.tgt.clone()],
        manifest: Some(manifest_beside(&a.output)),
    })
}

fn system_alignment(line: &str, line_no: usize) -> Result<HardAlignment> {
    let g = parse_gold_line(line, line_no)?;
    if g.possible.len() != g.sure.len() {
        return Err(Error::Parse {
            line: line_no,
            token: 1,
            msg: "system alignments take only i-j links".into(),
        });
    }
    let m = g.sure.iter().map(|l| l.0 + 1).max().unwrap_or(0);
    let n = g.sure.iter().map(|l| l.1 + 1).max().unwrap_or(0);
    HardAlignment::new(m, n, g.sure)
}

fn eval_cmd(a: &EvalArgs) -> Result<Record> {
    let hyp = read_lines(&a.hyp)?;
    let mut inputs = vec![a.hyp.clone()];
    let mut report = String::new();
    let interval = |point: f64, low: f64, high: f64| format!("{point}\nci95 {low} {high}\n");
    match a.mode {
        EvalMode::Bleu => {
            if a.refs.is_empty() {
                return Err(Error::Config("--mode bleu needs at least one --ref".into()));
            }
            let refs = a.refs.iter().map(|p| read_lines(p)).collect::<Result<Vec<_>>>()?;
            inputs.extend(a.refs.iter().cloned());
            let stats = bleu_sentence_stats(&hyp, &refs)?;
            report.push_str("bleu ");
            if a.bootstrap > 0 && !stats.is_empty() {
                let ci = bootstrap(&stats, BleuStats::score, a.bootstrap, 0.95, a.seed)?;
                report.push_str(&interval(ci.point, ci.low, ci.high));
            } else {
                let mut total = BleuStats::default();
                stats.iter().for_each(|s| total += *s);
                report.push_str(&format!("{}\n", total.score()));
            }
        }
        EvalMode::Aer => {
            let gold_path = a
                .gold
                .as_ref()
                .ok_or_else(|| Error::Config("--mode aer needs --gold".into()))?;
            let gold = read_lines(gold_path)?
                .iter()
                .enumerate()
                .map(|(k, l)| parse_gold_line(l, k + 1))
                .collect::<Result<Vec<GoldAlignment>>>()?;
            inputs.push(gold_path.clone());
            let system = hyp
                .iter()
                .enumerate()
                .map(|(k, l)| system_alignment(l, k + 1))
                .collect::<Result<Vec<_>>>()?;
            let counts = aer_sentence_counts(&system, &gold)?;
            report.push_str("aer ");
            if a.bootstrap > 0 && !counts.is_empty() {
                let ci = bootstrap(&counts, AerCounts::rate, a.bootstrap, 0.95, a.seed)?;
                report.push_str(&interval(ci.point, ci.low, ci.high));
            } else {
                let mut total = AerCounts::default();
                counts.iter().for_each(|c| total += *c);
                report.push_str(&format!("{}\n", total.rate()));
            }
        }
    }
    match &a.output {
        Some(path) => {
            write(path, &report)?;
            Ok(Record {
                inputs,
                manifest: Some(manifest_beside(path)),
            })
        }
        None => {
            print!("{report}");
            Ok(Record { inputs, manifest: None })
        }
    }
}

fn synth_cmd(a: &SynthArgs) -> Result<Record> {
    let corpus = generate(&a.spec.spec())?;
    write_corpus(&corpus, &a.out)?;
    Ok(Record {
        inputs: Vec::new(),
        manifest: Some(a.out.join(MANIFEST_NAME)),
    })
}

fn parse_configs(text: &str) -> Result<Vec<(String, DeltaKind, f64)>> {
    text.split(',')
        .map(|entry| {
            let parts: Vec<&str> = entry.trim().split(':').collect();
            let [name, delta, lambda] = parts[..] else {
                return Err(Error::Config(format!("config {entry:?} is not name:delta:lambda")));
            };
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(Error::Config(format!("config name {name:?} cannot be used as a file name")));
            }
            let lambda: f64 = lambda
                .parse()
                .map_err(|_| Error::Config(format!("bad lambda in config {entry:?}")))?;
            Ok((name.to_string(), delta.parse()?, lambda))
        })
        .collect()
}

fn experiment_cmd(a: &ExperimentArgs) -> Result<Record> {
    let spec = a.spec.spec();
    let configs: Vec<ExperimentConfig> = parse_configs(&a.configs)?
        .into_iter()
        .map(|(name, delta, lambda)| ExperimentConfig {
            name,
            emb_dim: a.emb_dim,
            hidden_dim: a.hidden_dim,
            att_dim: a.att_dim,
            train: TrainConfig {
                loss: LossConfig { delta, lambda },
                batch_size: a.batch_size,
                max_updates: a.max_updates,
                eval_every: a.eval_every,
                seed: spec.seed,
                clip: Some(a.clip),
                optimizer: Optimizer::Adadelta,
            },
        })
        .collect();
    let options = ExperimentOptions {
        beam: a.beam,
        heatmaps: a.heatmaps,
    };
    let report = run_experiment(&spec, &configs, &options, Some(&a.out))?;
    eprint!("{}", report.to_csv());
    Ok(Record {
        inputs: Vec::new(),
        manifest: Some(a.out.join(MANIFEST_NAME)),
    })
}

/// Resolved flags of the parsed subcommand, in declaration order.
fn resolved_args(matches: &clap::ArgMatches) -> Result<(String, Vec<(String, String)>)> {
    let (name, sub) = matches
        .subcommand()
        .ok_or_else(|| Error::Config("no command given".into()))?;
    let root = Cli::command();
    let cmd = root
        .find_subcommand(name)
        .ok_or_else(|| Error::Config(format!("unknown command {name}")))?;
    let mut args = Vec::new();
    for arg in cmd.get_arguments() {
        let Some(long) = arg.get_long() else { continue };
        let id = arg.get_id().as_str();
        if matches!(id, "help" | "version") {
            continue;
        }
        let Some(raw) = sub.get_raw(id) else { continue };
        for v in raw {
            args.push((long.to_string(), v.to_string_lossy().into_owned()));
        }
    }
    Ok((name.to_string(), args))
}

fn argv_from_manifest(m: &RunManifest) -> Result<Vec<OsString>> {
    let root = Cli::command();
    let cmd = root
        .find_subcommand(&m.command)
        .ok_or_else(|| Error::Data(format!("manifest names unknown command {}", m.command)))?;
    let mut argv: Vec<OsString> = vec!["sanmt".into(), m.command.clone().into()];
    for (key, value) in &m.args {
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::Data(format!("manifest flag --{key} is unknown to {}", m.command)))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            if value == "true" {
                argv.push(format!("--{key}").into());
            }
        } else {
            argv.push(format!("--{key}").into());
            argv.push(value.into());
        }
    }
    Ok(argv)
}

fn execute(matches: &clap::ArgMatches) -> Result<()> {
    let cli = Cli::from_arg_matches(matches).map_err(|e| Error::Config(e.to_string()))?;
    let record = match &cli.command {
        Command::Preprocess(a) => preprocess(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Translate(a) => translate_cmd(a)?,
        Command::Align(a) => align_cmd(a)?,
        Command::Eval(a) => eval_cmd(a)?,
        Command::Synth(a) => synth_cmd(a)?,
        Command::Experiment(a) => experiment_cmd(a)?,
        Command::Rerun(a) => return rerun(&a.manifest),
    };
    if let Some(path) = record.manifest {
        let (command, args) = resolved_args(matches)?;
        let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
        let inputs = record
            .inputs
            .into_iter()
            .map(|p| {
                let d = file_digest(&p)?;
                Ok((p, d))
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            cwd,
            args,
            inputs,
        };
        write(&path, &manifest.to_text())?;
    }
    Ok(())
}

fn rerun(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = RunManifest::parse(&text)?;
    if manifest.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "warning: manifest written by version {}, running {}",
            manifest.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    std::env::set_current_dir(&manifest.cwd).map_err(|e| Error::io(&manifest.cwd, e))?;
    manifest.verify_inputs()?;
    let argv = argv_from_manifest(&manifest)?;
    let matches = Cli::command()
        .try_get_matches_from(argv)
        .map_err(|e| Error::Data(format!("manifest arguments no longer parse: {e}")))?;
    execute(&matches)
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_resolve_into_the_manifest() {
        let m = Cli::command()
            .try_get_matches_from(["sanmt", "train", "--data", "d", "--out", "o"])
            .unwrap();
        let (cmd, args) = resolved_args(&m).unwrap();
        assert_eq!(cmd, "train");
        let get = |k: &str| args.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        assert_eq!(get("delta"), Some("ce"));
        assert_eq!(get("lambda"), Some("0.3"));
        assert_eq!(get("emb-dim"), Some("620"));
        assert_eq!(get("batch-size"), Some("80"));
        assert_eq!(get("no-clip"), Some("false"));
        assert_eq!(get("dev-src"), None);
    }

    #[test]
    fn manifest_args_rebuild_the_command_line() {
        let argv = ["sanmt", "eval", "--mode", "bleu", "--hyp", "h", "--ref", "r1", "--ref", "r2"];
        let m = Cli::command().try_get_matches_from(argv).unwrap();
        let (command, args) = resolved_args(&m).unwrap();
        let manifest = RunManifest {
            version: "x".into(),
            command,
            cwd: PathBuf::from("."),
            args,
            inputs: Vec::new(),
        };
        let again = Cli::command()
            .try_get_matches_from(argv_from_manifest(&manifest).unwrap())
            .unwrap();
        assert_eq!(resolved_args(&again).unwrap().1, manifest.args);
    }

    #[test]
    fn config_list_parsing() {
        let c = parse_configs("nmt:none:0, sa:ce:1").unwrap();
        assert_eq!(c[1], ("sa".to_string(), DeltaKind::Ce, 1.0));
        assert!(parse_configs("a:ce").is_err());
        assert!(parse_configs("a:kl:1").is_err());
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["sanmt", "train", "--bogus"]), 1);
        assert_eq!(run(["sanmt", "train", "--data", "d", "--out", "o", "--delta", "kl"]), 1);
    }
}
