//! End-to-end runs of the `sanmt` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sanmt::data::encode;
use sanmt::decoding::{default_max_len, greedy_decode};
use sanmt::model::load_checkpoint;

fn sanmt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sanmt"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = sanmt(args, cwd);
    assert!(
        out.status.success(),
        "sanmt {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tiny_model(root: &Path) {
    ok(
        &["synth", "--vocab-size", "6", "--min-len", "2", "--max-len", "4", "--train-size", "30",
          "--dev-size", "4", "--test-size", "6", "--out", "corpus"],
        root,
    );
    ok(
        &["preprocess", "--src", "corpus/train.src", "--tgt", "corpus/train.tgt", "--align",
          "corpus/train.align", "--out", "prep"],
        root,
    );
    ok(
        &["train", "--data", "prep", "--emb-dim", "5", "--hidden-dim", "6", "--att-dim", "5",
          "--batch-size", "6", "--max-updates", "10", "--eval-every", "0", "--lambda", "1", "--out", "model"],
        root,
    );
}

#[test]
fn pipeline_outputs_and_beam_one_is_greedy() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    tiny_model(root);

    let sup = fs::read_to_string(root.join("prep/supervision.txt")).unwrap();
    assert_eq!(sup.lines().next(), Some("30"));

    ok(&["translate", "--model", "model/model.ckpt", "--input", "corpus/test.src", "--output", "b1.txt", "--beam", "1"], root);
    let ckpt = load_checkpoint(&root.join("model/model.ckpt")).unwrap();
    let sources = fs::read_to_string(root.join("corpus/test.src")).unwrap();
    let beam_out = fs::read_to_string(root.join("b1.txt")).unwrap();
    for (line, got) in sources.lines().zip(beam_out.lines()) {
        let x = encode(line, &ckpt.source_vocab);
        let g = greedy_decode(&x, &ckpt.params, default_max_len(&x)).unwrap();
        assert_eq!(got, ckpt.target_vocab.decode(g.words()));
    }

    ok(&["align", "--model", "model/model.ckpt", "--src", "corpus/test.src", "--tgt", "corpus/test.tgt", "--output", "a.txt"], root);
    assert_eq!(fs::read_to_string(root.join("a.txt")).unwrap().lines().count(), 6);

    let out = ok(&["eval", "--mode", "bleu", "--hyp", "corpus/test.tgt", "--ref", "corpus/test.tgt", "--bootstrap", "0"], root);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "bleu 1\n");
    let out = ok(&["eval", "--mode", "aer", "--hyp", "corpus/test.align", "--gold", "corpus/test.align", "--bootstrap", "0"], root);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "aer 0\n");
}

#[test]
fn train_defaults_echo_into_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    tiny_model(root);
    let manifest = fs::read_to_string(root.join("model/run.manifest")).unwrap();
    for line in ["command train", "arg delta=ce", "arg lambda=1", "arg no-clip=false", "arg clip=1", "arg seed=1"] {
        assert!(manifest.lines().any(|l| l == line), "missing {line:?} in\n{manifest}");
    }
    assert!(manifest.lines().filter(|l| l.starts_with("input ")).count() >= 5);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    assert_eq!(sanmt(&["translate", "--beam"], root).status.code(), Some(1));
    assert_eq!(sanmt(&["--help"], root).status.code(), Some(0));

    fs::write(root.join("a.src"), "x y\nz\n").unwrap();
    fs::write(root.join("a.tgt"), "u\n").unwrap();
    let out = sanmt(&["preprocess", "--src", "a.src", "--tgt", "a.tgt", "--out", "p"], root);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains('2') && msg.contains('1'), "{msg}");

    fs::write(root.join("a.tgt"), "u\nv w\n").unwrap();
    fs::write(root.join("a.align"), "0-0\n0-5\n").unwrap();
    let out = sanmt(&["preprocess", "--src", "a.src", "--tgt", "a.tgt", "--align", "a.align", "--out", "p"], root);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = sanmt(&["train", "--data", "p", "--out", "m", "--lambda=-1"], root);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    tiny_model(root);
    let text = fs::read_to_string(root.join("model/model.ckpt")).unwrap();
    fs::write(root.join("bad.ckpt"), text.replacen("hidden_dim=6", "hidden_dim=7", 1)).unwrap();
    let out = sanmt(&["translate", "--model", "bad.ckpt", "--input", "corpus/test.src", "--output", "o.txt"], root);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn resumed_training_matches_one_long_run() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    tiny_model(root);
    let common = ["--data", "prep", "--emb-dim", "5", "--hidden-dim", "6", "--att-dim", "5", "--batch-size", "6",
                  "--eval-every", "0", "--lambda", "1"];
    let run = |extra: &[&str]| {
        let mut args = vec!["train"];
        args.extend_from_slice(&common);
        args.extend_from_slice(extra);
        ok(&args, root);
    };
    run(&["--max-updates", "16", "--out", "long"]);
    run(&["--max-updates", "7", "--out", "first"]);
    run(&["--max-updates", "16", "--resume-from", "first", "--out", "second"]);
    assert_eq!(
        fs::read(root.join("long/last.ckpt")).unwrap(),
        fs::read(root.join("second/last.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read(root.join("long/optimizer.state")).unwrap(),
        fs::read(root.join("second/optimizer.state")).unwrap()
    );
}
