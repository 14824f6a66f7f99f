use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use actvec::evalkit::EvalReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_actvec"));
    c.env("A2V_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic bundle plus a config that overrides the generated one
/// with fast dimensions.
fn small_bundle(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.cfg");
    std::fs::write(
        &spec,
        "num_verbs = 2\nnum_nouns_per_verb = 3\nclips_per_class = 6\nseq_len = 8\nfeature_dim = 6\nembed_dim = 8\n",
    )
    .unwrap();
    let data = dir.join("data");
    let o = run(&["gen-synth", "--spec", p(&spec), "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = data.join("run.cfg");
    let mut text = std::fs::read_to_string(&cfg).unwrap();
    text = text
        .lines()
        .filter(|l| !["hidden", "epochs", "batch_size", "window_len"].iter().any(|k| l.starts_with(k)))
        .collect::<Vec<_>>()
        .join("\n");
    text.push_str("\nhidden1 = 6\nhidden2 = 5\nepochs = 2\nbatch_size = 8\nwindow_len = 4\n");
    std::fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = run(&["frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "learning_rat = 0.1\n").unwrap();
    let o = run(&["grad-check", "--config", p(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("learning_rat"));
}

#[test]
fn validation_lists_every_violation_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "eval-rankcorr",
        "--set",
        "batch_size=1",
        "--set",
        "window_len=30",
        "--set",
        "seq_len=10",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    for needle in ["manifest", "word_vectors", "taxonomy", "mining needs >= 2 classes", "window_len"] {
        assert!(err.contains(needle), "{needle} missing from {err}");
    }
    assert!(!out.exists());
}

#[test]
fn missing_input_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "embed",
        "--manifest",
        "/nonexistent/manifest.jsonl",
        "--checkpoint",
        "/nonexistent/model.ckpt",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn generated_config_validates_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("s0");
    assert_eq!(code(&run(&["gen-synth", "--spec", "s0", "--out", p(&data)])), 0);
    let mut cfg = actvec_cli::RunConfig::load(&data.join("run.cfg")).unwrap();
    cfg.set("out_dir", p(&dir.path().join("t"))).unwrap();
    for cmd in [actvec_cli::Command::Train, actvec_cli::Command::EvalZsl, actvec_cli::Command::EvalRankcorr] {
        assert_eq!(actvec_cli::validate_config(&cfg, cmd), Vec::<String>::new(), "{cmd:?}");
    }
    for f in ["manifest.jsonl", "words.txt", "taxonomy.tsv", "remap.tsv", "split.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
}

#[test]
fn grad_check_toy_passes() {
    let o = run(&["grad-check", "--dims", "toy"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    let err: f64 = out
        .split_whitespace()
        .find_map(|w| w.parse().ok())
        .unwrap_or_else(|| panic!("no number in {out}"));
    assert!(err <= 1e-4, "{out}");
}

#[test]
fn grad_check_failure_exits_numeric() {
    // a tolerance no finite-difference check can meet
    let o = run(&["grad-check", "--dims", "toy", "--set", "grad_tol=1e-300"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn train_evaluate_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_bundle(dir.path());
    let t = dir.path().join("t");
    let o = run(&["train", "--config", p(&cfg), "--out", p(&t)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["model.ckpt", "train_log.csv", "split.json"] {
        assert!(t.join(f).exists(), "{f}");
    }
    let ckpt = t.join("model.ckpt");

    let z = dir.path().join("z");
    let o = run(&["eval-zsl", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--out", p(&z)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = EvalReport::from_json(&std::fs::read_to_string(z.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.splits.len(), 1);
    assert_eq!(report.splits[0].num_test_classes, 2);
    assert!(z.join("metrics.csv").exists() && z.join("run_meta.json").exists());

    let a = dir.path().join("a");
    let o = run(&["eval-arith", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--out", p(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = EvalReport::from_json(&std::fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    // two training nouns per verb: 2 verbs x 2 ordered pairs
    assert_eq!(report.arithmetic.unwrap().comparisons, 4);

    let r = dir.path().join("r");
    let o = run(&["eval-rankcorr", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--out", p(&r)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = EvalReport::from_json(&std::fs::read_to_string(r.join("report.json")).unwrap()).unwrap();
    let names: Vec<&str> = report.rank_correlations.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "taxonomy_vs_word_vectors",
            "taxonomy_vs_pooled_features",
            "taxonomy_vs_embeddings",
            "word_vectors_vs_embeddings"
        ]
    );

    let e = dir.path().join("e");
    let o = run(&["export-embeddings", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--out", p(&e)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tsv = std::fs::read_to_string(e.join("embeddings.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 36);
    assert_eq!(tsv.lines().next().unwrap().split('\t').count(), 2 + 8);
    let sim = std::fs::read_to_string(e.join("similarity.csv")).unwrap();
    assert_eq!(sim.lines().count(), 1 + 6);
    assert_eq!(std::fs::read_to_string(e.join("class_means.tsv")).unwrap().lines().count(), 1 + 6);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_bundle(dir.path());
    let full = dir.path().join("full");
    let o = run(&["train", "--config", p(&cfg), "--epochs", "3", "--out", p(&full)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let part = dir.path().join("part");
    let o = run(&["train", "--config", p(&cfg), "--epochs", "1", "--out", p(&part)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = part.join("model.ckpt");
    let o = run(&["train", "--config", p(&cfg), "--epochs", "3", "--resume", p(&ckpt), "--out", p(&part)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&full, "train_log.csv"), read(&part, "train_log.csv"));
    assert_eq!(read(&full, "model.ckpt"), read(&part, "model.ckpt"));
}

#[test]
fn periodic_checkpoints_do_not_change_the_result() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_bundle(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&run(&["train", "--config", p(&cfg), "--out", p(&a)])), 0);
    let o = run(&["train", "--config", p(&cfg), "--set", "checkpoint_every=2", "--out", p(&b)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());
}

#[test]
fn same_config_gives_byte_identical_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_bundle(dir.path());
    let out = |name: &str| {
        let d = dir.path().join(name);
        let o = run(&["eval-zsl", "--config", p(&cfg), "--split", "50_50,80_20", "--out", p(&d)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(d.join("report.json")).unwrap()
    };
    let first = out("one");
    assert_eq!(first, out("two"));
    let report = EvalReport::from_json(std::str::from_utf8(&first).unwrap()).unwrap();
    let fractions: Vec<f64> = report.splits.iter().map(|s| s.fraction).collect();
    assert_eq!(fractions, [0.5, 0.2]);
}

#[test]
fn krr_baseline_runs_and_notes_the_missing_term() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_bundle(dir.path());
    let out = dir.path().join("k");
    let o = run(&[
        "eval-zsl",
        "--config",
        p(&cfg),
        "--method",
        "krr",
        "--set",
        "kernel=rbf:0.05",
        "--split",
        "50_50",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = EvalReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.splits[0].method, "krr-rbf:0.05");
    assert!(report.notes.iter().any(|n| n.contains("Laplacian")));
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_bundle(dir.path());
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let o = run(&["embed", "--config", p(&cfg), "--checkpoint", p(&bad), "--out", p(&dir.path().join("e"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = run(&["gen-synth", "--out", p(&blocker.join("sub"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
