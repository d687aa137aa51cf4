use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use timbre_core::dataset::load_embeddings;
use timbre_core::memnet::recall_speaker;
use timbre_core::trainer::Checkpoint;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_timbre"))
        .args(args)
        .env_remove("TIMBRE_LLM_TOKEN")
        .output()
        .expect("spawn timbre")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "timbre {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A small synthetic corpus plus a briefly trained checkpoint.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let f = Fixture { dir };
        let (data_dir, train_dir) = (f.path("data"), f.path("train"));
        ok(&[
            "synth",
            "--output-dir",
            p(&data_dir),
            "--speakers-per-gender",
            "8",
            "--dim",
            "8",
            "--utterances",
            "3",
        ]);
        let mut args = vec![
            "train",
            "--output-dir",
            p(&train_dir),
            "--steps",
            "20",
            "--main-slots",
            "4",
        ];
        let data = f.data_args();
        args.extend(data.iter().map(String::as_str));
        ok(&args);
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn data_args(&self) -> Vec<String> {
        let d = self.path("data");
        [
            ("--embeddings", "embeddings.jsonl"),
            ("--annotations", "annotations.tsv"),
            ("--vocab", "vocab.txt"),
        ]
        .iter()
        .flat_map(|(flag, file)| [flag.to_string(), p(&d.join(file)).to_string()])
        .collect()
    }

    fn checkpoint(&self) -> PathBuf {
        self.path("train/checkpoint.json")
    }

    /// `cmd` followed by the data flags, the checkpoint and `extra`.
    fn args<'a>(&'a self, owned: &'a mut Vec<String>, cmd: &str, extra: &[&str]) -> Vec<&'a str> {
        owned.clear();
        owned.push(cmd.to_string());
        owned.extend(self.data_args());
        if cmd != "train" {
            owned.extend(["--checkpoint".to_string(), p(&self.checkpoint()).to_string()]);
        }
        owned.extend(extra.iter().map(|s| s.to_string()));
        owned.iter().map(String::as_str).collect()
    }
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["train", "--no-such-flag"]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    let dir = tempfile::tempdir().unwrap();
    // Missing required path.
    assert_eq!(code(&["train", "--output-dir", p(dir.path())]), 1);
}

#[test]
fn config_precedence_is_flag_then_file_then_default() {
    let f = Fixture::new();
    let cfg = f.path("run.toml");
    std::fs::write(&cfg, "[train]\nsteps = 3\nlearning_rate = 0.005\n").unwrap();
    let mut owned = Vec::new();
    let train = |out: &str, extra: &[&str], owned: &mut Vec<String>| {
        let mut args = vec!["--output-dir", out];
        args.extend(f.args(owned, "train", extra));
        ok(&args);
        json(&Path::new(out).join("train.manifest.json"))
    };
    let out = f.path("a");
    let m = train(p(&out), &["--config", p(&cfg), "--steps", "5"], &mut owned);
    assert_eq!(m["config"]["train"]["steps"], 5);
    assert_eq!(m["config"]["train"]["learning_rate"], 0.005);
    let out = f.path("b");
    let m = train(p(&out), &["--config", p(&cfg)], &mut owned);
    assert_eq!(m["config"]["train"]["steps"], 3);
    let out = f.path("c");
    let m = train(p(&out), &[], &mut owned);
    assert_eq!(m["config"]["train"]["learning_rate"], 2e-4);
    assert_eq!(m["command"], "train");
}

#[test]
fn tokens_in_config_files_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[llm]\nbase_url = \"http://localhost:1\"\ntoken = \"sk-abc\"\n").unwrap();
    let out = run(&["--config", p(&cfg), "stats"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("TIMBRE_LLM_TOKEN"), "{err}");
    assert!(!err.contains("sk-abc"));
}

#[test]
fn edit_defaults_to_recommended_degree() {
    let f = Fixture::new();
    let mut owned = Vec::new();
    let out = f.path("edit");
    let mut args = vec!["--output-dir", p(&out)];
    args.extend(f.args(
        &mut owned,
        "edit",
        &["--speaker", "f000", "--prompt", "make it a bit deeper"],
    ));
    let stdout = ok(&args);
    assert!(stdout.contains("alpha: 0.7"), "{stdout}");
    let m = json(&out.join("edit.manifest.json"));
    assert_eq!(m["details"]["alpha"], 0.7);
    let edited = std::fs::read_to_string(out.join("edited.jsonl")).unwrap();
    assert!(edited.contains("\"alpha\":0.7"));
}

#[test]
fn zero_degree_edit_is_the_reconstruction() {
    let f = Fixture::new();
    let mut owned = Vec::new();
    let out = f.path("edit0");
    let vocab = std::fs::read_to_string(f.path("data/vocab.txt")).unwrap();
    let first = vocab.lines().next().unwrap().to_string();
    let mut args = vec!["--output-dir", p(&out)];
    args.extend(f.args(
        &mut owned,
        "edit",
        &["--speaker", "m001", "--prompt", &first, "--alpha", "0"],
    ));
    ok(&args);
    let store = load_embeddings(f.path("data/embeddings.jsonl")).unwrap();
    let ck = Checkpoint::load(f.checkpoint()).unwrap();
    let mean = store.speaker("m001").unwrap().mean_embedding();
    let want = recall_speaker(&ck.params.memory, &mean).unwrap().recalled;
    let edited = load_embeddings(out.join("edited.jsonl")).unwrap();
    let got = &edited.speakers().next().unwrap().utterances[0].vec;
    let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-12, "{err}");
}

#[test]
fn eval_is_deterministic_across_thread_counts() {
    let f = Fixture::new();
    let mut owned = Vec::new();
    let mut outputs = Vec::new();
    for (name, jobs) in [("e1", "1"), ("e2", "1"), ("e3", "3")] {
        let out = f.path(name);
        let mut args = vec!["--output-dir", p(&out), "--jobs", jobs];
        args.extend(f.args(&mut owned, "eval", &[]));
        ok(&args);
        outputs.push((
            std::fs::read(out.join("tvas.csv")).unwrap(),
            std::fs::read(out.join("embedding_dump.jsonl")).unwrap(),
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let csv = String::from_utf8(outputs[0].0.clone()).unwrap();
    let rows = json(&f.path("e1/tvas.json"))["rows"].as_array().unwrap().len();
    assert!(rows > 0);
    assert_eq!(csv.lines().count(), 1 + rows * 11);
}

#[test]
fn gradcheck_passes_and_reports_failure_as_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path());
    ok(&["gradcheck", "--cases", "3", "--output-dir", out]);
    assert_eq!(json(&dir.path().join("gradcheck.json"))["passed"], true);
    assert_eq!(
        code(&[
            "gradcheck",
            "--cases",
            "1",
            "--tolerance",
            "1e-300",
            "--output-dir",
            out
        ]),
        3
    );
}

#[test]
fn data_errors_exit_2() {
    let f = Fixture::new();
    let mut owned = Vec::new();
    let out = f.path("x");
    let mut args = vec!["--output-dir", p(&out)];
    args.extend(f.args(&mut owned, "edit", &["--speaker", "nobody", "--prompt", "brighter"]));
    assert_eq!(code(&args), 2);

    let bad = f.path("bad.jsonl");
    std::fs::write(&bad, "{\"speaker\": \"a\", \"gender\": \"F\"\n").unwrap();
    let ann = f.path("data/annotations.tsv");
    assert_eq!(
        code(&[
            "train",
            "--output-dir",
            p(&out),
            "--embeddings",
            p(&bad),
            "--annotations",
            p(&ann)
        ]),
        2
    );
}

#[test]
fn llm_backend_without_endpoint_is_a_usage_error() {
    let f = Fixture::new();
    let mut owned = Vec::new();
    let out = f.path("llm");
    let mut args = vec!["--output-dir", p(&out)];
    args.extend(f.args(
        &mut owned,
        "edit",
        &["--speaker", "f000", "--prompt", "brighter", "--backend", "llm"],
    ));
    assert_eq!(code(&args), 1);
}

#[test]
fn stats_on_bundled_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/annotations_6038.tsv");
    let text = ok(&["stats", "--annotations", p(&fixture), "--output-dir", p(dir.path())]);
    assert!(text.contains("6038"), "{text}");
    let v: Value = serde_json::from_str(&ok(&[
        "stats",
        "--json",
        "--annotations",
        p(&fixture),
        "--output-dir",
        p(dir.path()),
    ]))
    .unwrap();
    let sum: f64 = v["frequencies"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["percent"].as_f64().unwrap())
        .sum();
    assert!((sum - 100.0).abs() <= 0.01);
}

#[test]
fn resume_with_other_vocabulary_is_rejected() {
    let f = Fixture::new();
    let vocab = f.path("other_vocab.txt");
    std::fs::write(&vocab, "Thin\nBright\nCoarse\nSlim\nLow\nPure\n").unwrap();
    let out = f.path("r");
    let code = code(&[
        "train",
        "--output-dir",
        p(&out),
        "--embeddings",
        p(&f.path("data/embeddings.jsonl")),
        "--annotations",
        p(&f.path("data/annotations.tsv")),
        "--vocab",
        p(&vocab),
        "--resume",
        p(&f.checkpoint()),
        "--steps",
        "30",
    ]);
    assert_eq!(code, 2);
}
