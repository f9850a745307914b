//! End-to-end tests of the command line binary: exit codes, output files,
//! manifests, and determinism.

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_groundgram");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn small_config() -> &'static str {
    r#"
seed = 11

[pos]
k = 4
sweeps = 40
burn_in = 20

[hdp]
iterations = 10
chains = 1
min_rule_count = 2

[synth]
root = "S"
length_cap = 8
n_sentences = 30
words = [["it"], ["dog", "cat"], ["the"], ["sleeps"], ["runs"]]

[[synth.rules]]
parent = "S"
kind = "BwdApp"
argument = "NP"
prob = 1.0

[[synth.rules]]
parent = "NP"
kind = "FwdApp"
argument = "N"
prob = 0.6

[synth.leaf_prob]
"NP" = 0.4
"N" = 1.0
"S\\NP" = 1.0
"NP/N" = 1.0

[synth.lexicon]
"NP" = [[0, 1.0]]
"N" = [[1, 1.0]]
"NP/N" = [[2, 1.0]]
"S\\NP" = [[3, 0.5], [4, 0.5]]

[synth.scene]
n_distractors = 1
bindings = { sleeps = ["action", 2], dog = ["geometry", 1] }

[synth.scene.alphabets]
action = 4
color = 4
spatial = 4
geometry = 4
"#
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, small_config()).unwrap();
    p
}

#[test]
fn full_pipeline_produces_populated_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let data = dir.path().join("data");
    let induced = dir.path().join("induced");
    let parsed = dir.path().join("parsed");

    let out = run(&["synth", "--config", cfg, "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["tagged.jsonl", "gold_trees.jsonl", "scenes.jsonl", "corpus.txt", "manifest.json"] {
        assert!(data.join(f).exists(), "missing {f}");
    }

    let out = run(&[
        "induce",
        "--config",
        cfg,
        "--corpus",
        data.join("tagged.jsonl").to_str().unwrap(),
        "--out",
        induced.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(induced.join("grammar.tsv").exists());
    assert!(induced.join("checkpoint.json").exists());

    let out = run(&[
        "parse",
        "--config",
        cfg,
        "--corpus",
        data.join("tagged.jsonl").to_str().unwrap(),
        "--checkpoint",
        induced.join("checkpoint.json").to_str().unwrap(),
        "--out",
        parsed.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report_path = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--pred",
        parsed.join("trees.jsonl").to_str().unwrap(),
        "--gold",
        data.join("gold_trees.jsonl").to_str().unwrap(),
        "--pred-tags",
        data.join("tagged.jsonl").to_str().unwrap(),
        "--gold-tags",
        data.join("tagged.jsonl").to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["format_version"], 1);
    // Internal consistency: F1 agrees with P and R.
    let p = report["bracket_precision"].as_f64().unwrap();
    let r = report["bracket_recall"].as_f64().unwrap();
    let f1 = report["bracket_f1"].as_f64().unwrap();
    let expect = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    assert!((f1 - expect).abs() < 1e-12);
    // Identical tag files score perfectly.
    assert_eq!(report["many_to_one"], 1.0);
    assert!(report["token_count"].as_u64().unwrap() > 0);
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = run(&["synth", "--config", "/does/not/exist.toml", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2)); // unreadable file is a data error
    let out = run(&["synth"]);
    assert_eq!(out.status.code(), Some(1)); // missing required flags
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, "sedd = 3\n").unwrap();
    let out = run(&["synth", "--config", p.to_str().unwrap(), "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sedd"));
}

#[test]
fn corrupted_scene_file_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let out = run(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    // Corrupt record 2 (line 3: header is line 1).
    let scenes = data.join("scenes.jsonl");
    let text = std::fs::read_to_string(&scenes).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[2] = lines[2].replace('{', "");
    std::fs::write(&scenes, lines.join("\n")).unwrap();

    let out = run(&[
        "ground",
        "--config",
        cfg.to_str().unwrap(),
        "--corpus",
        data.join("tagged.jsonl").to_str().unwrap(),
        "--scenes",
        scenes.to_str().unwrap(),
        "--out",
        dir.path().join("g").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("scenes.jsonl:3"), "stderr was: {err}");
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(&[
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    for f in ["tagged.jsonl", "gold_trees.jsonl", "scenes.jsonl", "corpus.txt", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }
}

#[test]
fn resume_extends_a_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let data = dir.path().join("data");
    assert!(run(&["synth", "--config", cfg, "--out", data.to_str().unwrap()])
        .status
        .success());
    let first = dir.path().join("first");
    assert!(run(&[
        "induce",
        "--config",
        cfg,
        "--corpus",
        data.join("tagged.jsonl").to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
    ])
    .status
    .success());
    let resumed = dir.path().join("resumed");
    let out = run(&[
        "induce",
        "--config",
        cfg,
        "--corpus",
        data.join("tagged.jsonl").to_str().unwrap(),
        "--resume",
        first.join("checkpoint.json").to_str().unwrap(),
        "--out",
        resumed.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(resumed.join("checkpoint.json").exists());
}
