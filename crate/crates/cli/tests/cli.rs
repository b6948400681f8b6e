use std::path::{Path, PathBuf};
use std::time::Instant;

use assert_cmd::Command;

fn fixtures(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn lingmark() -> Command {
    Command::cargo_bin("lingmark").unwrap()
}

fn run(args: &[&str]) -> std::process::Output {
    lingmark().args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn prepare(corpus: &Path, data: &Path) -> std::process::Output {
    run(&[
        "prepare",
        "--corpus",
        corpus.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ])
}

#[test]
fn prepare_mini_fixture_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = prepare(&fixtures("mini"), &data);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let sessions = std::fs::read_to_string(data.join("sessions.jsonl")).unwrap();
    assert_eq!(sessions.lines().count(), 5);
    assert!(data.join("split.json").exists());
    assert!(text(&out.stdout).contains("| AD | 2 | 3 | 3 | 3 | 3 | 3 |"));

    let first = std::fs::read(data.join("split.json")).unwrap();
    assert!(prepare(&fixtures("mini"), &data).status.success());
    assert_eq!(first, std::fs::read(data.join("split.json")).unwrap());
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(data.join("manifests/prepare-s42.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 5);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 5);
}

#[test]
fn interviewer_only_corpus_gives_zero_utterances() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    std::fs::write(
        corpus.join("300-0.cha"),
        "@Begin\n@ID:\teng|Pitt|PAR|70;|male|Control||Participant|||\n*INV:\twhat do you see ?\n@End\n",
    )
    .unwrap();
    let out = prepare(&corpus, &dir.path().join("data"));
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("0 sessions, 0 utterances"));
    assert!(text(&out.stderr).contains("no participant utterances"));
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    let out = prepare(&corpus, &dir.path().join("data"));
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("no parseable .cha files"));

    assert_eq!(
        run(&["train", "--strategy", "nonsense"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["markers", "--marker", "sadness"]).status.code(),
        Some(2)
    );

    let data = dir.path().join("mini");
    assert!(prepare(&fixtures("mini"), &data).status.success());
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "repeats = 0\n").unwrap();
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--strategy",
        "standard_finetune",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--strategy",
        "standard_finetune",
        "--backend",
        "pretrained",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_3_and_name_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    let out = run(&["train", "--data", d, "--strategy", "entailment"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out.stderr).contains("run `lingmark prepare` first"));

    assert!(prepare(&fixtures("mini"), &data).status.success());
    let out = run(&["evaluate", "--data", d, "--strategy", "entailment"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out.stderr).contains("lingmark train --strategy entailment"));
    let out = run(&["markers", "--data", d, "--marker", "communication"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out.stderr).contains("lingmark evaluate"));
    let out = run(&["longitudinal", "--data", d, "--marker", "anomia"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out.stderr).contains("lingmark markers --marker anomia"));
}

#[test]
fn partial_report_marks_absent_sections() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(prepare(&fixtures("mini"), &data).status.success());
    let out = run(&["report", "--data", data.to_str().unwrap()]);
    assert!(out.status.success());
    let report = std::fs::read_to_string(data.join("report.md")).unwrap();
    assert!(report.contains("| healthy | 1 | 2 |"));
    assert!(report.contains("_Absent: no longitudinal results found. Run `lingmark longitudinal`"));
    assert!(report.contains("_Absent: no evaluated runs found."));
}

#[test]
fn synth_output_matches_shipped_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let mut generated: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    generated.sort();
    assert_eq!(
        generated.len(),
        std::fs::read_dir(fixtures("synthetic")).unwrap().count()
    );
    for name in generated {
        let a = std::fs::read(dir.path().join(&name)).unwrap();
        let b = std::fs::read(fixtures("synthetic").join(&name)).unwrap();
        assert!(a == b, "{name:?} differs from the shipped fixture");
    }
}

/// Every command on the shipped synthetic corpus with the tiny backend.
#[test]
fn full_pipeline_on_synthetic_fixture() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    let cfg = dir.path().join("fast.toml");
    std::fs::write(
        &cfg,
        "max_epochs = 3\nrepeats = 1\n\n[search]\nlearning_rates = [0.01]\nbatch_sizes = [8]\noptimizers = [\"adam\"]\n\n[hyper]\nlearning_rate = 0.01\nbatch_size = 8\noptimizer = \"adam\"\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    assert!(prepare(&fixtures("synthetic"), &data).status.success());

    for strategy in ["standard_finetune", "standard_prompt", "random_rate"] {
        let out = run(&["train", "--data", d, "--strategy", strategy, "--config", c]);
        assert!(out.status.success(), "{strategy}: {}", text(&out.stderr));
        let out = run(&[
            "evaluate",
            "--data",
            d,
            "--strategy",
            strategy,
            "--config",
            c,
        ]);
        assert!(out.status.success(), "{strategy}: {}", text(&out.stderr));
    }
    let out = run(&[
        "evaluate",
        "--data",
        d,
        "--strategy",
        "standard_prompt",
        "--config",
        c,
    ]);
    assert!(
        text(&out.stdout).contains("(↑")
            || text(&out.stdout).contains("(↓")
            || text(&out.stdout).contains("(↔")
    );

    // --strategy best must pick the stored run with the highest macro F1,
    // ties going to the smaller run id
    let mut entries: Vec<_> = std::fs::read_dir(data.join("registry"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    let mut best = (f64::NEG_INFINITY, String::new());
    for path in entries {
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        let f1 = v["report"]["mean"]["macro_f1"].as_f64().unwrap();
        if v["report"]["strategy"] != "random_rate" && f1 > best.0 {
            best = (f1, v["run_id"].as_str().unwrap().to_string());
        }
    }
    let out = run(&[
        "markers",
        "--data",
        d,
        "--marker",
        "communication",
        "--strategy",
        "best",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let summary = std::fs::read_to_string(data.join("markers/communication.summary.md")).unwrap();
    assert!(summary.contains(&format!("run `{}`", best.1)), "{summary}");

    for marker in ["incoherence", "word-fluency"] {
        assert!(run(&["markers", "--data", d, "--marker", marker])
            .status
            .success());
    }
    for behaviour in ["mmse", "cdr"] {
        let out = run(&[
            "longitudinal",
            "--data",
            d,
            "--marker",
            "communication",
            "--behaviour",
            behaviour,
        ]);
        assert!(out.status.success(), "{}", text(&out.stderr));
    }
    let svg = std::fs::read_to_string(data.join("longitudinal/communication-mmse.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(run(&["report", "--data", d]).status.success());
    let report = std::fs::read_to_string(data.join("report.md")).unwrap();
    assert!(!report.contains("_Absent"));
    assert!(report.contains("word-fluency"));
    assert!(start.elapsed().as_secs() < 300);
}
