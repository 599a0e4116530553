//! Drives the compiled binary end to end on a small synthetic log.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dgekt_core::data::CSV_HEADER;
use dgekt_core::synthetic::{mastery_corpus, MasteryCorpusSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dgekt"))
}

fn workdir(name: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("dgekt-cli-test-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&p);
    fs::create_dir_all(&p).unwrap();
    p
}

fn corpus_spec() -> MasteryCorpusSpec {
    MasteryCorpusSpec {
        students: 12,
        steps_per_student: 12,
        ..MasteryCorpusSpec::default()
    }
}

fn write_corpus(path: &Path) {
    let mut text = format!("{}\n", CSV_HEADER.join(","));
    for r in mastery_corpus(&corpus_spec()) {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.student_id,
            r.exercise_id,
            r.concept_ids.join(";"),
            u8::from(r.correct),
            r.order
        ));
    }
    fs::write(path, text).unwrap();
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_train(dir: &Path, data: &Path, extra: &[&str]) -> Output {
    let out_dir = dir.join("run");
    let mut cmd = bin();
    cmd.args(["train", "--data"])
        .arg(data)
        .arg("--out")
        .arg(&out_dir)
        .args([
            "--seed",
            "5",
            "--embedding-dim",
            "8",
            "--gru-hidden",
            "6",
            "--batch-size",
            "8",
            "--max-epochs",
            "2",
            "--early-stop-patience",
            "0",
        ])
        .args(extra);
    cmd.output().unwrap()
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = workdir("round-trip");
    let data = dir.join("corpus.csv");
    write_corpus(&data);

    let out = run_train(&dir, &data, &[]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let run = dir.join("run");
    let checkpoint = run.join("checkpoint.ckpt");
    assert!(checkpoint.exists());
    assert!(run.join("summary.txt").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    let auc = report["test"]["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc), "test auc {auc}");
    assert_eq!(report["config"]["seed"], 5);
    assert!(stdout(&out).contains("test auc"));

    // scoring the same log again from the checkpoint
    let eval_json = dir.join("eval.json");
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(&checkpoint)
        .arg("--data")
        .arg(&data)
        .arg("--report")
        .arg(&eval_json)
        .output()
        .unwrap();
    assert!(out.status.success(), "eval failed: {}", stderr(&out));
    assert!(stdout(&out).contains("test auc"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&eval_json).unwrap()).unwrap();
    assert!(report["auc"].as_f64().unwrap() > 0.0);
    assert!(report["predictions"].as_array().unwrap().len() > 10);

    // one prediction for a fresh history over known exercises
    let records = mastery_corpus(&corpus_spec());
    let history = dir.join("history.csv");
    let mut text = format!("{}\n", CSV_HEADER.join(","));
    for (i, r) in records.iter().take(3).enumerate() {
        text.push_str(&format!(
            "fresh,{},{},1,{i}\n",
            r.exercise_id,
            r.concept_ids.join(";")
        ));
    }
    fs::write(&history, text).unwrap();
    let target = &records[5].exercise_id;
    let out = bin()
        .args(["predict", "--checkpoint"])
        .arg(&checkpoint)
        .arg("--history")
        .arg(&history)
        .args(["--exercise", target])
        .output()
        .unwrap();
    assert!(out.status.success(), "predict failed: {}", stderr(&out));
    let p: f64 = stdout(&out).trim().parse().unwrap();
    assert!(p > 0.0 && p < 1.0, "probability {p}");

    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn build_graphs_writes_container_and_summary() {
    let dir = workdir("graphs");
    let data = dir.join("corpus.csv");
    write_corpus(&data);
    let out_dir = dir.join("graphs");
    let out = bin()
        .args(["build-graphs", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "build-graphs failed: {}", stderr(&out));
    assert!(out_dir.join("graphs.bin").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("graphs-summary.json")).unwrap())
            .unwrap();
    assert!(summary["hypergraph"]["num_hyperedges"].as_u64().unwrap() > 0);
    assert!(summary["transitions"]["total_transitions"].as_u64().unwrap() > 0);
    assert!(stdout(&out).contains("hyperedges"));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn config_file_merges_with_flag_overrides() {
    let dir = workdir("config-merge");
    let data = dir.join("corpus.csv");
    write_corpus(&data);
    let config = dir.join("config.json");
    fs::write(
        &config,
        r#"{"variant":"RmOKD","embedding_dim":8,"gru_hidden":8,"batch_size":8,"max_epochs":1,"early_stop_patience":0}"#,
    )
    .unwrap();
    let out_dir = dir.join("run");
    let out = bin()
        .args(["train", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&out_dir)
        .args(["--seed", "9", "--config"])
        .arg(&config)
        .args(["--gru-hidden", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["variant"], "RmOKD");
    assert_eq!(report["config"]["gru_hidden"], 5);
    assert_eq!(report["config"]["embedding_dim"], 8);
    assert_eq!(report["config"]["seed"], 9);
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn train_requires_a_seed() {
    let dir = workdir("no-seed");
    let data = dir.join("corpus.csv");
    write_corpus(&data);
    let out = bin()
        .args(["train", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--seed"), "stderr: {}", stderr(&out));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn predict_rejects_unknown_exercises() {
    let dir = workdir("unknown-exercise");
    let data = dir.join("corpus.csv");
    write_corpus(&data);
    let out = run_train(&dir, &data, &[]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let checkpoint = dir.join("run").join("checkpoint.ckpt");

    let history = dir.join("history.csv");
    let records = mastery_corpus(&corpus_spec());
    fs::write(
        &history,
        format!(
            "{}\nfresh,{},{},1,0\n",
            CSV_HEADER.join(","),
            records[0].exercise_id,
            records[0].concept_ids.join(";")
        ),
    )
    .unwrap();
    let out = bin()
        .args(["predict", "--checkpoint"])
        .arg(&checkpoint)
        .arg("--history")
        .arg(&history)
        .args(["--exercise", "zz"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("zz") && err.contains("vocabulary"), "stderr: {err}");
    let _ = fs::remove_dir_all(&dir);
}
