//! End-to-end contract tests for the binary: exit codes, artifact shapes,
//! and the seed-resolution order.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use st2_core::checkpoint::load_checkpoint;
use st2_core::corpus::Vocabulary;

fn st2(dir: &Path, envs: &[(&str, &str)], args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_st2"));
    cmd.current_dir(dir).env_remove("ST2_SEED").args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = st2(dir, &[], args);
    assert!(
        out.status.success(),
        "st2 {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("st2 exits normally")
}

const CONFIG: &str = r#"
base_model = "vae"
dataset_root = "data"
output_dir = "out"
seed = 1
batch_size = 8

[meta]
inner_lr = 0.02
outer_lr = 0.01
inner_steps = 1
max_outer_steps = 2

[vae]
embed_dim = 8
hidden = 10
d_s = 2
d_c = 3

[finetune]
steps = 2
lr = 0.01

[pretrain]
steps = 2
lr = 0.02

[classifier]
embed_dim = 8
widths = [2, 3]
n_filters = 8
epochs = 2
lr = 0.2
batch_size = 8
"#;

struct Setup {
    dir: tempfile::TempDir,
}

impl Setup {
    fn new(tasks: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let n = tasks.to_string();
        ok(
            dir.path(),
            &[
                "gen-synthetic",
                "--out",
                "data",
                "--tasks",
                &n,
                "--vocab-size",
                "40",
                "--per-side",
                "60",
                "--min-len",
                "3",
                "--max-len",
                "6",
                "--test-pairs",
                "8",
                "--seed",
                "7",
            ],
        );
        fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Setup { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn file(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, files: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, root, files);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    let mut files = Vec::new();
    walk(root, root, &mut files);
    files
}

#[test]
fn synthetic_generation_is_deterministic_and_refuses_overwrite() {
    let s = Setup::new(2);
    ok(
        s.path(),
        &[
            "gen-synthetic",
            "--out",
            "data2",
            "--tasks",
            "2",
            "--vocab-size",
            "40",
            "--per-side",
            "60",
            "--min-len",
            "3",
            "--max-len",
            "6",
            "--test-pairs",
            "8",
            "--seed",
            "7",
        ],
    );
    assert_eq!(tree_bytes(&s.file("data")), tree_bytes(&s.file("data2")));

    let refused = st2(
        s.path(),
        &[],
        &["gen-synthetic", "--out", "data", "--tasks", "2"],
    );
    assert_eq!(code(&refused), 3);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("refusing to overwrite"));
}

#[test]
fn zero_outer_steps_keeps_initialization_and_seeds_resolve_in_order() {
    let s = Setup::new(1);
    ok(s.path(), &["train-meta", "--config", "run.toml", "--steps", "0"]);
    let ck = load_checkpoint(&s.file("out/meta.ckpt.json")).unwrap();
    let init = ck.model.init_params(1);
    assert_eq!(ck.restore(&init).unwrap(), init);

    // The file's seed beats the environment.
    let env_run = st2(
        s.path(),
        &[("ST2_SEED", "5")],
        &["train-meta", "--config", "run.toml", "--steps", "0"],
    );
    assert!(env_run.status.success());
    let ck = load_checkpoint(&s.file("out/meta.ckpt.json")).unwrap();
    assert_eq!(ck.restore(&ck.model.init_params(1)).unwrap(), ck.model.init_params(1));

    // Without a seed in the file, the environment fills it in.
    let no_seed = CONFIG.replacen("seed = 1\n", "", 1);
    fs::write(s.file("noseed.toml"), no_seed).unwrap();
    let env_run = st2(
        s.path(),
        &[("ST2_SEED", "5")],
        &["train-meta", "--config", "noseed.toml", "--steps", "0"],
    );
    assert!(env_run.status.success());
    let ck = load_checkpoint(&s.file("out/meta.ckpt.json")).unwrap();
    assert_eq!(ck.restore(&ck.model.init_params(5)).unwrap(), ck.model.init_params(5));

    // And the flag beats both.
    let flag_run = st2(
        s.path(),
        &[("ST2_SEED", "5")],
        &[
            "train-meta",
            "--config",
            "noseed.toml",
            "--steps",
            "0",
            "--seed",
            "9",
        ],
    );
    assert!(flag_run.status.success());
    let ck = load_checkpoint(&s.file("out/meta.ckpt.json")).unwrap();
    assert_eq!(ck.restore(&ck.model.init_params(9)).unwrap(), ck.model.init_params(9));

    let bad_env = st2(
        s.path(),
        &[("ST2_SEED", "frog")],
        &["train-meta", "--config", "noseed.toml", "--steps", "0"],
    );
    assert_eq!(code(&bad_env), 2);
}

#[test]
fn trace_lists_every_task_at_every_step() {
    let s = Setup::new(2);
    ok(s.path(), &["train-meta", "--config", "run.toml", "--steps", "3"]);
    let trace = fs::read_to_string(s.file("out/trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("step,task_id,loss"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for step in 0..3 {
        for task in ["task00", "task01"] {
            let n = rows
                .iter()
                .filter(|r| r[0] == step.to_string() && r[1] == task)
                .count();
            assert_eq!(n, 1, "step {step} task {task}");
            let row = rows
                .iter()
                .find(|r| r[0] == step.to_string() && r[1] == task)
                .unwrap();
            assert!(row[2].parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn finetune_zero_steps_copies_parameters() {
    let s = Setup::new(1);
    ok(s.path(), &["train-meta", "--config", "run.toml"]);
    ok(
        s.path(),
        &[
            "finetune",
            "--config",
            "run.toml",
            "--task",
            "task00",
            "--from",
            "out/meta.ckpt.json",
            "--steps",
            "0",
        ],
    );
    let meta = load_checkpoint(&s.file("out/meta.ckpt.json")).unwrap();
    let tuned = load_checkpoint(&s.file("out/finetuned-task00.ckpt.json")).unwrap();
    assert_eq!(meta.tensors, tuned.tensors);
    assert_eq!(tuned.kind.to_string(), "finetuned:task00");

    let unknown = st2(
        s.path(),
        &[],
        &[
            "finetune",
            "--config",
            "run.toml",
            "--task",
            "nope",
            "--from",
            "out/meta.ckpt.json",
        ],
    );
    assert_eq!(code(&unknown), 3);
}

#[test]
fn transfer_preserves_line_count_and_rejects_unknown_styles() {
    let s = Setup::new(1);
    ok(s.path(), &["train-meta", "--config", "run.toml", "--steps", "0"]);
    let corpus = fs::read_to_string(s.file("data/task00/a.train.txt")).unwrap();
    let five: Vec<&str> = corpus.lines().take(5).collect();
    fs::write(s.file("in.txt"), format!("{}\n", five.join("\n"))).unwrap();
    ok(
        s.path(),
        &[
            "transfer",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/meta.ckpt.json",
            "--task",
            "task00",
            "--source-style",
            "a",
            "--target-style",
            "b",
            "--input",
            "in.txt",
            "--out",
            "tr.txt",
        ],
    );
    let out = fs::read_to_string(s.file("tr.txt")).unwrap();
    assert_eq!(out.lines().count(), 5);
    assert!(out.lines().all(|l| !l.trim().is_empty()));

    fs::write(s.file("empty.txt"), "").unwrap();
    ok(
        s.path(),
        &[
            "transfer",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/meta.ckpt.json",
            "--task",
            "task00",
            "--source-style",
            "a",
            "--target-style",
            "b",
            "--input",
            "empty.txt",
            "--out",
            "tr-empty.txt",
        ],
    );
    assert_eq!(fs::read_to_string(s.file("tr-empty.txt")).unwrap(), "");

    let bad = st2(
        s.path(),
        &[],
        &[
            "transfer",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/meta.ckpt.json",
            "--task",
            "task00",
            "--source-style",
            "zz",
            "--target-style",
            "b",
            "--input",
            "in.txt",
            "--out",
            "tr2.txt",
        ],
    );
    assert_eq!(code(&bad), 3);
}

#[test]
fn evaluate_needs_classifier_and_matching_hashes() {
    let s = Setup::new(1);
    // No flag overrides here: they would change the effective config and
    // thus the hash the classifier must match.
    ok(s.path(), &["train-meta", "--config", "run.toml"]);

    let missing = st2(
        s.path(),
        &[],
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/meta.ckpt.json",
            "--classifier",
            "out/classifier.ckpt.json",
            "--task",
            "task00",
        ],
    );
    assert_eq!(code(&missing), 3);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing dependency"));

    ok(s.path(), &["train-classifier", "--config", "run.toml"]);
    let out = ok(
        s.path(),
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/meta.ckpt.json",
            "--classifier",
            "out/classifier.ckpt.json",
            "--task",
            "task00",
        ],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("task00:"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(s.file("out/report-task00.json")).unwrap())
            .unwrap();
    assert!(report["ppl"].as_f64().unwrap() >= 1.0);
    assert_eq!(report["n_sentences"].as_u64().unwrap(), 8);

    // A classifier from a different configuration is rejected without --force.
    let other = CONFIG.replace("output_dir = \"out\"", "output_dir = \"out2\"");
    fs::write(s.file("other.toml"), other).unwrap();
    ok(s.path(), &["train-classifier", "--config", "other.toml"]);
    let mixed = st2(
        s.path(),
        &[],
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/meta.ckpt.json",
            "--classifier",
            "out2/classifier.ckpt.json",
            "--task",
            "task00",
        ],
    );
    assert_eq!(code(&mixed), 3);
    assert!(String::from_utf8_lossy(&mixed.stderr).contains("hash mismatch"));
    ok(
        s.path(),
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/meta.ckpt.json",
            "--classifier",
            "out2/classifier.ckpt.json",
            "--task",
            "task00",
            "--force",
        ],
    );

    // Exactly one of --task / --all-tasks.
    let neither = st2(
        s.path(),
        &[],
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/meta.ckpt.json",
            "--classifier",
            "out/classifier.ckpt.json",
        ],
    );
    assert_eq!(code(&neither), 2);
}

#[test]
fn averaged_report_is_the_hand_mean_of_per_task_reports() {
    let s = Setup::new(2);
    ok(s.path(), &["train-meta", "--config", "run.toml"]);
    ok(s.path(), &["train-classifier", "--config", "run.toml"]);
    ok(
        s.path(),
        &[
            "evaluate",
            "--config",
            "run.toml",
            "--checkpoint",
            "out/meta.ckpt.json",
            "--classifier",
            "out/classifier.ckpt.json",
            "--all-tasks",
        ],
    );
    let read = |rel: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(s.file(rel)).unwrap()).unwrap()
    };
    let (a, b, mean) = (
        read("out/report-task00.json"),
        read("out/report-task01.json"),
        read("out/report.json"),
    );
    for field in ["bleu_self", "ppl", "acc"] {
        let want = (a[field].as_f64().unwrap() + b[field].as_f64().unwrap()) / 2.0;
        let got = mean[field].as_f64().unwrap();
        assert!((want - got).abs() < 1e-12, "{field}: {want} vs {got}");
    }
}

#[test]
fn config_problems_exit_2() {
    let s = Setup::new(1);
    fs::write(s.file("broken.toml"), "base_model = \"vae\"\nnot toml [").unwrap();
    let parse = st2(s.path(), &[], &["prepare", "--config", "broken.toml"]);
    assert_eq!(code(&parse), 2);

    let rootless = CONFIG.replace("dataset_root = \"data\"", "dataset_root = \"nowhere\"");
    fs::write(s.file("rootless.toml"), rootless).unwrap();
    let missing_root = st2(s.path(), &[], &["prepare", "--config", "rootless.toml"]);
    assert_eq!(code(&missing_root), 2);
    assert!(String::from_utf8_lossy(&missing_root.stderr).contains("missing dataset root"));

    let bad_rate = CONFIG.replace("inner_lr = 0.02", "inner_lr = -0.5");
    fs::write(s.file("badrate.toml"), bad_rate).unwrap();
    let bad = st2(s.path(), &[], &["prepare", "--config", "badrate.toml"]);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("meta.inner_lr"));
}

#[test]
fn runaway_finetune_exits_4() {
    let s = Setup::new(1);
    ok(s.path(), &["train-meta", "--config", "run.toml", "--steps", "1"]);
    let diverged = st2(
        s.path(),
        &[],
        &[
            "finetune",
            "--config",
            "run.toml",
            "--task",
            "task00",
            "--from",
            "out/meta.ckpt.json",
            "--lr",
            "1e6",
            "--steps",
            "40",
        ],
    );
    assert_eq!(code(&diverged), 4);
    assert!(String::from_utf8_lossy(&diverged.stderr).contains("diverged"));
}

#[test]
fn vocabulary_artifact_round_trips() {
    let s = Setup::new(1);
    ok(s.path(), &["prepare", "--config", "run.toml"]);
    let vocab = Vocabulary::load(&s.file("out/vocab.txt")).unwrap();
    assert!(vocab.len() > 4);
    let ids = vocab.tokenize("w000 w001");
    assert_eq!(vocab.detokenize(&ids), "w000 w001");
}
