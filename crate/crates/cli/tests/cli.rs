use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hanmlm"));
    c.env_remove("HANMLM_OUTPUT_ROOT");
    c
}

fn synthetic(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/synthetic").join(format!("{name}.txt"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = run(dir, args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    o
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const TOY_CONFIG: &str = r#"{
  "model": {"hidden_size": 16, "num_layers": 1, "num_heads": 2, "intermediate_size": 32, "max_position": 16},
  "train": {"learning_rate": 0.003, "batch_size": 16, "epochs": 1, "dropout": false},
  "eval": {"repeats": 2, "seeds": [0, 1]}
}"#;

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let o = bin().output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn missing_checkpoint_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("v.txt"), "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n가\n").unwrap();
    std::fs::write(dir.path().join("c.txt"), "가 가\n").unwrap();
    let o = run(
        dir.path(),
        &["evaluate", "--model", "missing/model.ckpt", "--corpora", "c=c.txt", "--vocab", "v.txt", "--out", "ev"],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("missing/model.ckpt"), "{err}");
    assert!(err.contains("loading checkpoint"), "{err}");
    let m = manifest(&dir.path().join("ev/manifest.json"));
    assert_eq!(m["status"], "failed");
    assert_eq!(m["stage"], "loading checkpoint");
}

#[test]
fn full_pipeline_on_bundled_corpora() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("toy.json"), TOY_CONFIG).unwrap();
    let (a_train, a_test, b_train, b_test) =
        (synthetic("a_train"), synthetic("a_test"), synthetic("b_train"), synthetic("b_test"));
    let s = |p: &PathBuf| p.display().to_string();

    ok(dir, &["build-vocab", "--input", &s(&a_train), "--input", &s(&b_train), "--size", "500", "--out", "vocab.txt"]);
    ok(dir, &["map-syllables", "--input", &s(&b_test), "--out", "b_test.mapped.txt"]);
    let mapped = std::fs::read_to_string(dir.join("b_test.mapped.txt")).unwrap();
    assert!(!mapped.contains('돐') && !mapped.contains('윁'));
    let novel = ok(dir, &["find-novel", "--input", "b_test.mapped.txt", "--vocab", "vocab.txt"]);
    assert!(!String::from_utf8_lossy(&novel.stdout).is_empty(), "mapped syllables are absent from the vocabulary");

    ok(dir, &["train", "--corpus", &s(&a_train), "--vocab", "vocab.txt", "--config", "toy.json", "--out", "base"]);
    ok(
        dir,
        &[
            "train", "--corpus", &s(&b_train), "--vocab", "vocab.txt", "--base", "base/model.ckpt", "--lambda", "0.3",
            "--config", "toy.json", "--seed", "4", "--out", "cl",
        ],
    );
    let corpora = format!("a={},b={}", s(&a_test), s(&b_test));
    let o = ok(
        dir,
        &[
            "evaluate", "--model", "base=base/model.ckpt", "--model", "cl=cl/model.ckpt", "--corpora", &corpora,
            "--vocab", "vocab.txt", "--config", "toy.json", "--out", "eval",
        ],
    );
    assert!(String::from_utf8_lossy(&o.stdout).contains("avg acc"));
    for f in ["report.txt", "report.json", "report.csv", "manifest.json"] {
        assert!(dir.join("eval").join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.join("eval/report.csv")).unwrap();
    assert!(csv.starts_with("model,dataset,perplexity,accuracy,repeat"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);

    ok(
        dir,
        &[
            "sweep", "--lambdas", "0,0.5", "--corpus", &s(&b_train), "--base", "base/model.ckpt", "--vocab",
            "vocab.txt", "--corpora", &corpora, "--config", "toy.json", "--out", "sweep",
        ],
    );
    let text = ok(dir, &["report", "--input", "sweep/sweep.json"]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("avg ppl"));
    ok(dir, &["report", "--logs", "plain=sweep/logs/lambda-0.jsonl,cl=sweep/logs/lambda-0.5.jsonl", "--out", "fig"]);
    let svg = std::fs::read_to_string(dir.join("fig/curves.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));

    // Flags beat the config file, which beats the defaults.
    let m = manifest(&dir.join("cl/manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config"]["train"]["seed"], 4);
    assert_eq!(m["config"]["train"]["learning_rate"], 0.003);
    assert_eq!(m["config"]["train"]["warmup_fraction"], 0.1);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 4);

    // Re-running from the manifest reproduces the primary outputs exactly.
    let before = (std::fs::read(dir.join("cl/model.ckpt")).unwrap(), std::fs::read(dir.join("eval/report.json")).unwrap());
    std::fs::copy(dir.join("eval/manifest.json"), dir.join("eval.manifest.json")).unwrap();
    ok(dir, &["rerun", "cl/manifest.json"]);
    ok(dir, &["rerun", "eval.manifest.json"]);
    let after = (std::fs::read(dir.join("cl/model.ckpt")).unwrap(), std::fs::read(dir.join("eval/report.json")).unwrap());
    assert!(before == after, "rerun changed the outputs");
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let o = bin()
        .current_dir(tmp.path())
        .env("HANMLM_OUTPUT_ROOT", &root)
        .args(["generate-synthetic", "--train", "5", "--test", "2", "--out", "syn"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(root.join("syn/a_test.txt")).unwrap().lines().count(), 2);
    assert_eq!(manifest(&root.join("syn/manifest.json"))["seed"], 7);
}

#[test]
fn ingest_jsonl_with_split() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let docs: String = (0..20)
        .map(|i| format!("{{\"id\": \"d{i}\", \"sentences\": [\"문장 {i} 입니다.\"]}}\n"))
        .chain(std::iter::once("not json\n".to_string()))
        .collect();
    std::fs::write(dir.join("raw.jsonl"), docs).unwrap();
    let o = ok(
        dir,
        &[
            "ingest", "--input", "raw.jsonl", "--format", "jsonl", "--out", "train.jsonl", "--train-fraction", "0.5",
            "--valid-out", "valid.jsonl",
        ],
    );
    assert!(stderr(&o).contains("malformed"));
    let lines = |p: &str| std::fs::read_to_string(dir.join(p)).unwrap().lines().count();
    assert_eq!(lines("train.jsonl") + lines("valid.jsonl"), 20);
}
