use std::fs;
use std::path::{Path, PathBuf};

use addrtag::data::synth::{Grammar, Pattern};
use addrtag::data::{is_incomplete, load_dataset, write_dataset, Manifest};
use addrtag::embeddings::ProviderKind;
use addrtag::tagger::{Architecture, ModelDims, ModelParams};
use addrtag::training::{Checkpoint, CheckpointMeta};
use addrtag::Tag;
use addrtag_cli::{run_cli, EXIT_DATA, EXIT_OK, EXIT_USAGE};

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(args: &[&str]) -> Run {
    let mut argv = vec!["addrtag".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli(&argv, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let dims = ModelDims {
        input: 300,
        hidden: 6,
        attention: 5,
        tag_dim: 4,
    };
    let c = Checkpoint {
        params: ModelParams::init(Architecture::ATTENTION, dims, false, 3),
        meta: CheckpointMeta {
            provider: ProviderKind::Fallback,
            config_hash: "test".into(),
            seed: 3,
            epoch: 0,
            best_val_loss: 0.0,
        },
    };
    let path = dir.join("tiny.ckpt");
    c.save(&path).unwrap();
    path
}

/// `train.jsonl` and `val.jsonl` of the two-pattern toy grammar.
fn toy_data(dir: &Path) {
    let g = Grammar::fixed();
    write_dataset(&dir.join("train.jsonl"), &g.generate_two_patterns(40, 1)).unwrap();
    write_dataset(&dir.join("val.jsonl"), &g.generate_two_patterns(10, 2)).unwrap();
}

const SMALL: [&str; 8] = ["--hidden-dim", "6", "--epochs", "2", "--batch-size", "8", "--seed", "5"];

#[test]
fn help_and_unknown_flags() {
    let r = run(&["--help"]);
    assert_eq!(r.code, EXIT_OK);
    assert!(r.out.contains("make-incomplete"));
    assert_eq!(run(&["train", "--no-such-flag"]).code, EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]).code, EXIT_USAGE);
    assert_eq!(run(&[]).code, EXIT_USAGE);
}

#[test]
fn attention_with_adversarial_is_a_usage_error() {
    let r = run(&["train", "--variant", "attention", "--adversarial"]);
    assert_eq!(r.code, EXIT_USAGE, "{}", r.err);
    assert!(r.err.contains("adversarial"));
}

#[test]
fn incomplete_suite_rejects_zero_shot_country() {
    let r = run(&["eval", "--suite", "incomplete", "--countries", "JP"]);
    assert_eq!(r.code, EXIT_DATA, "{}", r.err);
    let r = run(&["eval", "--suite", "holdout", "--countries", "Atlantis"]);
    assert_eq!(r.code, EXIT_DATA);
}

#[test]
fn parse_prints_one_tag_per_token() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_checkpoint(dir.path());
    let out_dir = dir.path().join("out");
    let r = run(&[
        "parse",
        "--model",
        s(&model),
        "--embeddings",
        "fallback",
        "--out-dir",
        s(&out_dir),
        "221 B Baker Street",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let lines: Vec<&str> = r.out.lines().collect();
    assert_eq!(lines.len(), 4);
    for (line, token) in lines.iter().zip(["221", "B", "Baker", "Street"]) {
        let (w, t) = line.split_once('\t').unwrap();
        assert_eq!(w, token);
        assert!(t.parse::<Tag>().is_ok(), "{t}");
    }
    let m = Manifest::load(&out_dir.join("parse-manifest.txt")).unwrap();
    assert_eq!(m.get("command"), Some("parse"));
    assert_eq!(m.get("embeddings"), Some("fallback"));
}

#[test]
fn parse_with_mismatched_embeddings_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_checkpoint(dir.path());
    let r = run(&["parse", "--model", s(&model), "--embeddings", "bpe_combined", "x"]);
    assert_eq!(r.code, EXIT_USAGE);
}

#[test]
fn word_vectors_are_required_for_word_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    toy_data(dir.path());
    let r = run(&["train", "--data-dir", s(dir.path()), "--embeddings", "word_subword"]);
    assert_eq!(r.code, EXIT_USAGE);
}

#[test]
fn malformed_training_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("train.jsonl"), "{\"address\": \"1 Main\", \"tags\": [\"StreetNumber\"], \"country\": \"US\"}\n").unwrap();
    fs::write(dir.path().join("val.jsonl"), "").unwrap();
    let r = run(&["train", "--data-dir", s(dir.path())]);
    assert_eq!(r.code, EXIT_DATA, "{}", r.err);
    let r = run(&["train", "--train", s(&dir.path().join("missing.jsonl")), "--val", s(&dir.path().join("val.jsonl"))]);
    assert_eq!(r.code, EXIT_DATA);
}

#[test]
fn train_writes_checkpoints_and_a_replayable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    toy_data(dir.path());
    let first = dir.path().join("first");
    let mut args = vec!["train", "--data-dir", s(dir.path()), "--out-dir", s(&first)];
    args.extend(SMALL);
    let r = run(&args);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("seed 5"));
    let model = first.join("model-seed5.ckpt");
    assert!(first.join("train-seed5.jsonl").is_file());
    let manifest_path = first.join("train-manifest.txt");
    let m = Manifest::load(&manifest_path).unwrap();
    assert_eq!(m.get("variant"), Some("base"));
    assert_eq!(m.get("hidden_dim"), Some("6"));
    assert_eq!(m.get("out.model.5"), Some(s(&model)));

    let second = dir.path().join("second");
    let r = run(&["train", "--config", s(&manifest_path), "--out-dir", s(&second)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert_eq!(
        fs::read(&model).unwrap(),
        fs::read(second.join("model-seed5.ckpt")).unwrap()
    );
}

#[test]
fn train_falls_back_to_data_dir_env() {
    let dir = tempfile::tempdir().unwrap();
    toy_data(dir.path());
    let out = dir.path().join("out");
    std::env::set_var(addrtag_cli::DATA_DIR_ENV, dir.path());
    let mut args = vec!["train", "--adversarial", "--out-dir", s(&out)];
    args.extend(SMALL);
    let r = run(&args);
    std::env::remove_var(addrtag_cli::DATA_DIR_ENV);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let m = Manifest::load(&out.join("train-manifest.txt")).unwrap();
    assert_eq!(m.get("adversarial"), Some("true"));
}

#[test]
fn incomplete_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let g = Grammar::fixed();
    let mut complete = g.generate(Pattern::A, "US", 30, 1);
    complete.extend(g.generate(Pattern::B, "KR", 30, 2));
    let input = dir.path().join("complete.jsonl");
    write_dataset(&input, &complete).unwrap();
    let out = dir.path().join("inc");
    let r = run(&[
        "make-incomplete",
        "--input",
        s(&input),
        "--train-n",
        "10",
        "--holdout-n",
        "5",
        "--seed",
        "4",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let train = load_dataset(&out.join("incomplete-train.jsonl"), None).unwrap();
    assert_eq!(train.len(), 20);
    assert!(train.iter().all(is_incomplete));
    let us = load_dataset(&out.join("incomplete").join("US.jsonl"), None).unwrap();
    assert_eq!(us.len(), 5);
    assert!(us.iter().all(is_incomplete));
    let m = Manifest::load(&out.join("make-incomplete-manifest.txt")).unwrap();
    assert_eq!(m.get("count.holdout.KR"), Some("5"));

    let model = tiny_checkpoint(dir.path());
    let report_dir = dir.path().join("report");
    let r = run(&[
        "eval",
        "--suite",
        "incomplete",
        "--model",
        s(&model),
        "--data-dir",
        s(&out),
        "--out-dir",
        s(&report_dir),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let csv = fs::read_to_string(report_dir.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "country,mean,std,n_seeds,n_samples");
    assert!(lines[1].starts_with("KR,"));
    assert!(lines[2].starts_with("US,"));
    assert!(lines[3].starts_with("Mean,"));
    let m = Manifest::load(&report_dir.join("eval-manifest.txt")).unwrap();
    assert_eq!(m.get("suite"), Some("incomplete"));
    assert!(m.get("dataset.US").is_some());

    let r = run(&["report", "--input", s(&report_dir.join("report.csv")), "--out-dir", s(&report_dir)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("South Korea"));
    assert!(r.out.contains("Mean"));
    let r = run(&["report", "--input", s(&report_dir.join("report.csv")), "--format", "csv", "--out-dir", s(&report_dir)]);
    assert_eq!(r.out, csv);
}

#[test]
fn probe_reorder_splits_evenly_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("a.jsonl");
    write_dataset(&input, &Grammar::fixed().generate(Pattern::A, "US", 20, 1)).unwrap();
    let join = |p: Pattern| p.class_order().iter().map(|t| t.name()).collect::<Vec<_>>().join(",");
    let model = tiny_checkpoint(dir.path());
    let out = dir.path().join("probe");
    let r = run(&[
        "probe-reorder",
        "--input",
        s(&input),
        "--pattern-a",
        &join(Pattern::A),
        "--pattern-b",
        &join(Pattern::B),
        "--model",
        s(&model),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("10 pattern A, 10 pattern B"));
    assert!(r.out.contains("reordered probe:"));
    assert_eq!(load_dataset(&out.join("probe.jsonl"), None).unwrap().len(), 20);

    let r = run(&["probe-reorder", "--input", s(&input), "--pattern-a", "StreetNumber", "--pattern-b", "Bogus"]);
    assert_eq!(r.code, EXIT_USAGE);
    let r = run(&[
        "probe-reorder",
        "--input",
        s(&input),
        "--pattern-a",
        "StreetNumber",
        "--pattern-b",
        "StreetName",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(r.code, EXIT_DATA, "{}", r.err);
}
