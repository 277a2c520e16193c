//! End-to-end exercises of the `prefmix` binary: the full
//! gen -> train1 -> train2 -> eval -> bound pipeline, exit-code contract,
//! determinism of artifacts, and the rated-corpus binarization mode.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_prefmix")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("prefmix-pipe-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn full_pipeline_produces_artifacts() {
    let dir = workdir("full");
    let gen = run(
        &dir,
        &[
            "gen", "--k", "2", "--dim", "6", "--n", "3000", "--rho", "0.25", "--head-scale",
            "5", "--head-layout", "opposed", "--seed", "21", "--out", "train.jsonl",
        ],
    );
    assert_ok(&gen);
    assert!(dir.join("train.jsonl").exists());
    assert!(dir.join("train.spec.json").exists());
    assert!(dir.join("train.manifest.json").exists());
    let summary = String::from_utf8_lossy(&gen.stdout);
    assert!(summary.contains("group frequencies"));

    // Context corpora reuse the sidecar population on fresh streams.
    assert_ok(&run(
        &dir,
        &[
            "gen", "--population", "train.spec.json", "--n", "200", "--context", "--stream",
            "1", "--out", "ctx_train.jsonl",
        ],
    ));
    assert_ok(&run(
        &dir,
        &[
            "gen", "--population", "train.spec.json", "--n", "500", "--context", "--stream",
            "2", "--out", "ctx_heldout.jsonl",
        ],
    ));

    assert_ok(&run(
        &dir,
        &[
            "train1", "--corpus", "train.jsonl", "--out-dir", "run1", "--k", "2", "--epochs",
            "8", "--learning-rate", "0.005", "--batch-size", "16", "--grad-accum-steps", "1",
            "--hidden-size", "32", "--seed", "5",
        ],
    ));
    assert!(dir.join("run1/checkpoint.json").exists());
    assert!(dir.join("run1/train_log.csv").exists());
    assert!(dir.join("run1/manifest.json").exists());
    let log = fs::read_to_string(dir.join("run1/train_log.csv")).unwrap();
    assert!(log.starts_with("step,mle_loss,reg_loss,total_loss,mean_router_entropy"));

    assert_ok(&run(
        &dir,
        &[
            "train2", "--corpus", "ctx_train.jsonl", "--checkpoint", "run1/checkpoint.json",
            "--out-dir", "run2", "--heldout", "ctx_heldout.jsonl", "--router-lr", "0.2",
            "--seed", "6",
        ],
    ));
    assert!(dir.join("run2/checkpoint.json").exists());
    let adapt = fs::read_to_string(dir.join("run2/adapt_log.csv")).unwrap();
    assert!(adapt.starts_with("epoch,mean_soft_label_entropy,router_ce,heldout_accuracy"));
    assert_eq!(adapt.lines().count(), 11); // header + 10 epochs

    let eval = run(
        &dir,
        &[
            "eval", "--corpus", "ctx_heldout.jsonl", "--checkpoint", "run2/checkpoint.json",
            "--out", "eval.json",
        ],
    );
    assert_ok(&eval);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["n_examples"], 500);
    assert!(report["average_accuracy"].as_f64().unwrap() > 0.5);

    let bound = run(
        &dir,
        &[
            "bound", "--population", "train.spec.json", "--mc-prompts", "4000", "--bt-pairs",
            "2000", "--out", "bound.json",
        ],
    );
    assert_ok(&bound);
    let breport: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("bound.json")).unwrap()).unwrap();
    assert_eq!(breport["satisfied"], true);
}

#[test]
fn gen_is_byte_deterministic_and_leaves_inputs_alone() {
    let dir = workdir("determinism");
    let args = [
        "gen", "--k", "2", "--dim", "4", "--n", "500", "--rho", "0.3", "--seed", "9", "--out",
        "a.jsonl",
    ];
    assert_ok(&run(&dir, &args));
    let corpus_a = fs::read(dir.join("a.jsonl")).unwrap();
    let spec_a = fs::read(dir.join("a.spec.json")).unwrap();
    let mut args_b = args;
    args_b[args.len() - 1] = "b.jsonl";
    assert_ok(&run(&dir, &args_b));
    assert_eq!(corpus_a, fs::read(dir.join("b.jsonl")).unwrap());
    assert_eq!(spec_a, fs::read(dir.join("b.spec.json")).unwrap());

    // Training twice from the same inputs reproduces the checkpoint and log
    // byte-for-byte, and does not touch the corpus.
    let train = [
        "train1", "--corpus", "a.jsonl", "--out-dir", "t1", "--k", "2", "--epochs", "2",
        "--hidden-size", "8", "--seed", "3",
    ];
    assert_ok(&run(&dir, &train));
    let ckpt1 = fs::read(dir.join("t1/checkpoint.json")).unwrap();
    let log1 = fs::read(dir.join("t1/train_log.csv")).unwrap();
    let mut train2 = train;
    train2[4] = "t2";
    assert_ok(&run(&dir, &train2));
    assert_eq!(ckpt1, fs::read(dir.join("t2/checkpoint.json")).unwrap());
    assert_eq!(log1, fs::read(dir.join("t2/train_log.csv")).unwrap());
    assert_eq!(corpus_a, fs::read(dir.join("a.jsonl")).unwrap());
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = workdir("exits");
    // Invalid rho * k > 1.
    let bad_rho = run(
        &dir,
        &[
            "gen", "--rho", "0.6", "--k", "2", "--n", "10", "--out", "x.jsonl",
        ],
    );
    assert_eq!(bad_rho.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_rho.stderr).contains("rho"));

    // Missing input file.
    let missing = run(
        &dir,
        &[
            "train1", "--corpus", "nope.jsonl", "--out-dir", "out", "--k", "2",
        ],
    );
    assert_eq!(missing.status.code(), Some(2));

    // Checkpoint/corpus dimension mismatch.
    assert_ok(&run(
        &dir,
        &[
            "gen", "--k", "2", "--dim", "4", "--n", "300", "--rho", "0.3", "--seed", "1",
            "--out", "d4.jsonl",
        ],
    ));
    assert_ok(&run(
        &dir,
        &[
            "gen", "--k", "2", "--dim", "6", "--n", "300", "--rho", "0.3", "--seed", "2",
            "--out", "d6.jsonl",
        ],
    ));
    assert_ok(&run(
        &dir,
        &[
            "train1", "--corpus", "d4.jsonl", "--out-dir", "m4", "--k", "2", "--epochs", "1",
            "--hidden-size", "8", "--seed", "1",
        ],
    ));
    let mismatch = run(
        &dir,
        &[
            "eval", "--corpus", "d6.jsonl", "--checkpoint", "m4/checkpoint.json", "--out",
            "r.json",
        ],
    );
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("dimension"));
}

#[test]
fn bound_on_identical_heads_reports_zero_variance() {
    let dir = workdir("bound");
    assert_ok(&run(
        &dir,
        &[
            "gen", "--k", "2", "--dim", "4", "--n", "10", "--rho", "0.4", "--seed", "8",
            "--out", "pop.jsonl",
        ],
    ));
    // Degenerate spec: overwrite head 1 with head 0.
    let spec_path = dir.join("pop.spec.json");
    let mut spec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&spec_path).unwrap()).unwrap();
    spec["true_heads"][1] = spec["true_heads"][0].clone();
    fs::write(&spec_path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();

    let bound = run(
        &dir,
        &[
            "bound", "--population", "pop.spec.json", "--mc-prompts", "8000", "--bt-pairs",
            "3000", "--out", "bound.json",
        ],
    );
    assert_eq!(bound.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("bound.json")).unwrap()).unwrap();
    assert!(report["variance_term"].as_f64().unwrap() < 1e-6);
    assert_eq!(report["satisfied"], true);
}

#[test]
fn binarization_mode_emits_tagged_pairs() {
    let dir = workdir("rated");
    let rated = serde_json::json!([
        {"prompt_ctx": [1.0, 0.0], "response": [0.1], "ratings": {"help": 4, "verb": 1}},
        {"prompt_ctx": [1.0, 0.0], "response": [0.2], "ratings": {"help": 2, "verb": 3}},
        {"prompt_ctx": [2.0, 0.5], "response": [0.3], "ratings": {"help": 5, "verb": 5}},
        {"prompt_ctx": [2.0, 0.5], "response": [0.4], "ratings": {"help": 3, "verb": 3}}
    ]);
    fs::write(dir.join("rated.json"), rated.to_string()).unwrap();
    assert_ok(&run(
        &dir,
        &[
            "gen", "--rated-input", "rated.json", "--attributes", "help,verb",
            "--exclude-unanimous", "--out", "pairs.jsonl",
        ],
    ));
    let lines: Vec<String> = fs::read_to_string(dir.join("pairs.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    // First prompt disagrees across attributes (kept, 2 pairs); second is
    // unanimous (dropped).
    assert_eq!(lines.len(), 2);
    for line in &lines {
        let ex: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(ex["attribute"].is_string());
    }
}
