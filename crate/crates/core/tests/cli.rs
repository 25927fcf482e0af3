//! End-to-end tests of the command-line interface, run against the built
//! binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adrclf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adrclf"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn synth_ingest_split_stats_sample_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();

    let out = adrclf(
        &[
            "synth", "--n-pos", "30", "--n-neg", "120", "--lang", "de", "--seed", "5", "--out",
            "corpus.jsonl",
        ],
        cwd,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("150 documents"));

    let out = adrclf(&["ingest", "corpus.jsonl"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("150 valid documents"));

    let out = adrclf(
        &["split", "corpus.jsonl", "--seed", "3", "--out-dir", "."],
        cwd,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(cwd.join("train_dev.jsonl").exists());
    assert!(cwd.join("test.jsonl").exists());
    // ceil(0.2 * 30) = 6 test positives
    assert!(stdout(&out).contains("test: 30 (6 pos, 24 neg)"), "{}", stdout(&out));

    let out = adrclf(
        &[
            "stats",
            "corpus.jsonl",
            "--split",
            "train_dev.jsonl",
            "test.jsonl",
            "--out-dir",
            "stats",
        ],
        cwd,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("avg #tokens"));
    for file in ["stats.csv", "stats.md", "hist_label0.csv", "hist_label1.csv"] {
        assert!(cwd.join("stats").join(file).exists(), "{file}");
    }

    // per_class 10 shots: manifest lists 10 train + 10 dev ids
    let out = adrclf(
        &[
            "sample",
            "--pool",
            "train_dev.jsonl",
            "--mode",
            "per_class",
            "--shots",
            "10",
            "--seed",
            "1",
            "--out-dir",
            "sets",
        ],
        cwd,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = fs::read_to_string(cwd.join("sets/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 20);
    let train_lines = manifest.lines().filter(|l| l.contains("\"train\"")).count();
    assert_eq!(train_lines, 10);
}

#[test]
fn ingest_reports_bad_records_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(
        cwd.join("bad.jsonl"),
        concat!(
            r#"{"id":"a","text":"vier tokens sind hier","label":0,"topic":"t","lang":"de"}"#,
            "\n",
            r#"{"id":"b","text":"kaputtes label","label":2,"topic":"t","lang":"de"}"#,
            "\n",
        ),
    )
    .unwrap();
    let out = adrclf(&["ingest", "bad.jsonl"], cwd);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let lenient = adrclf(&["ingest", "bad.jsonl", "--lenient", "--out", "clean.jsonl"], cwd);
    assert!(lenient.status.success());
    let clean = fs::read_to_string(cwd.join("clean.jsonl")).unwrap();
    assert_eq!(clean.lines().count(), 1);
}

#[test]
fn evaluate_and_postprocess_files() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    // gold: 2 positives, 2 negatives; drug mention only in p1
    let gold = concat!(
        r#"{"id":"p1","text":"alphadol gab mir starke kopfschmerzen","label":1,"topic":"t","lang":"de","source":"s"}"#,
        "\n",
        r#"{"id":"p2","text":"mir geht es schlecht ohne grund","label":1,"topic":"t","lang":"de","source":"s"}"#,
        "\n",
        r#"{"id":"n1","text":"alles bestens bei mir heute","label":0,"topic":"t","lang":"de","source":"s"}"#,
        "\n",
        r#"{"id":"n2","text":"danke fuer eure antworten","label":0,"topic":"t","lang":"de","source":"s"}"#,
        "\n",
    );
    fs::write(cwd.join("gold.jsonl"), gold).unwrap();
    fs::write(
        cwd.join("preds.csv"),
        "doc_id,label,score\np1,1,0.9\np2,0,0.2\nn1,1,0.8\nn2,0,0.1\n",
    )
    .unwrap();
    let out = adrclf(&["evaluate", "preds.csv", "gold.jsonl", "--out-dir", "eval"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    // tp=1 fp=1 fn=1 tn=1 -> P_1 = 50
    assert!(stdout(&out).contains("50.00"), "{}", stdout(&out));
    assert!(cwd.join("eval/report.csv").exists());
    assert!(cwd.join("eval/report.md").exists());

    fs::write(cwd.join("meds.txt"), "alphadol\nbetazin\n").unwrap();
    let out = adrclf(
        &[
            "postprocess",
            "--rule",
            "med",
            "--lexicon",
            "meds.txt",
            "--preds",
            "preds.csv",
            "--docs",
            "gold.jsonl",
            "--out",
            "corrected.csv",
            "--audit",
            "audit.csv",
        ],
        cwd,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    // n1 was predicted positive without a drug mention -> flipped
    assert!(stdout(&out).contains("1 flipped"), "{}", stdout(&out));
    let corrected = fs::read_to_string(cwd.join("corrected.csv")).unwrap();
    assert!(corrected.contains("n1,0"));
    assert!(corrected.contains("p1,1"));
    let audit = fs::read_to_string(cwd.join("audit.csv")).unwrap();
    assert!(audit.contains("n1,med_presence,1,0,true"));
}

#[test]
fn evaluate_rejects_unknown_ids_with_data_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(
        cwd.join("gold.jsonl"),
        r#"{"id":"a","text":"vier tokens sind hier","label":0,"topic":"t","lang":"de"}"#,
    )
    .unwrap();
    fs::write(cwd.join("preds.csv"), "doc_id,label,score\nghost,1,0.9\n").unwrap();
    let out = adrclf(&["evaluate", "preds.csv", "gold.jsonl"], cwd);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("ghost"));
}

fn tiny_run_config(run_dir: &str) -> String {
    format!(
        r#"
[paths]
run_dir = "{run_dir}"

[synthetic.target]
n_pos = 24
n_neg = 120
lang = "de"
seed = 3

[synthetic.source]
n_pos = 60
n_neg = 30
lang = "en"
seed = 4

[backend]
model_id = "stub-small"

[backend.stage1]
learning_rate = 0.5
max_epochs = 3
patience = 3

[backend.stage2]
learning_rate = 0.5
max_epochs = 3
patience = 3

[ensemble]
model_seeds = [78, 99, 227]
sampling_seeds = [1, 2]

[[scenario]]
name = "zero_shot"
kind = "zero_shot"

[[scenario]]
name = "per_class_10"
kind = "few_shot"
mode = "per_class"
shots = 10
"#
    )
}

#[test]
fn run_report_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(cwd.join("exp.toml"), tiny_run_config("rundir")).unwrap();

    let out = adrclf(&["run", "--config", "exp.toml"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    // 3 stage-1 + 3 zero-shot + 2x3 stage-2
    assert!(stdout(&out).contains("jobs: 12 executed"), "{}", stdout(&out));
    let run_dir = cwd.join("rundir");
    for file in [
        "aggregate.csv",
        "aggregate.md",
        "summary.md",
        "config.toml",
        "manifest.jsonl",
        "corpus/target_test.jsonl",
        "runs/per_class_10/1/votes.csv",
        "runs/per_class_10/1/sets_manifest.jsonl",
        "runs/per_class_10/1/model_78/checkpoint.json",
        "runs/per_class_10/1/model_78/predictions.csv",
        "runs/per_class_10/1/model_78/train_log.csv",
        "runs/zero_shot/0/votes.csv",
        "stage1/stub-small/model_78/checkpoint.json",
    ] {
        assert!(run_dir.join(file).exists(), "missing {file}");
    }
    let votes = fs::read_to_string(run_dir.join("runs/per_class_10/1/votes.csv")).unwrap();
    assert!(votes.starts_with("doc_id,v1,v2,v3,final,was_tie"));
    let aggregate_before = fs::read(run_dir.join("aggregate.csv")).unwrap();

    // resumption skips all twelve jobs and reproduces identical bytes
    let out = adrclf(&["run", "--config", "exp.toml"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("jobs: 0 executed"), "{}", stdout(&out));
    assert!(stdout(&out).contains("12 resumed"), "{}", stdout(&out));
    assert_eq!(fs::read(run_dir.join("aggregate.csv")).unwrap(), aggregate_before);

    // report regenerates the same aggregate from persisted rows
    fs::remove_file(run_dir.join("aggregate.csv")).unwrap();
    let out = adrclf(&["report", "--run-dir", "rundir"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read(run_dir.join("aggregate.csv")).unwrap(), aggregate_before);
}

#[test]
fn run_scenario_filter_skips_stage2() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(cwd.join("exp.toml"), tiny_run_config("zs")).unwrap();
    let out = adrclf(
        &["run", "--config", "exp.toml", "--scenario", "zero_shot"],
        cwd,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    // 3 stage-1 fits + 3 zero-shot prediction jobs, no stage-2 fits
    assert!(stdout(&out).contains("jobs: 6 executed"), "{}", stdout(&out));
    assert!(!cwd.join("zs/runs/per_class_10").exists());
    assert!(cwd.join("zs/runs/zero_shot/0/votes.csv").exists());
}

#[test]
fn zero_shot_subcommand_runs_only_zero_shot() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(cwd.join("exp.toml"), tiny_run_config("zs2")).unwrap();
    let out = adrclf(&["zero-shot", "--config", "exp.toml"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(cwd.join("zs2/runs/zero_shot").exists());
    assert!(!cwd.join("zs2/runs/per_class_10").exists());
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(cwd.join("broken.toml"), "[paths]\nrun_dir = \"x\"\n").unwrap();
    let out = adrclf(&["run", "--config", "broken.toml"], cwd);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn env_var_overrides_run_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(cwd.join("exp.toml"), tiny_run_config("ignored")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_adrclf"))
        .args(["run", "--config", "exp.toml", "--scenario", "zero_shot"])
        .env("ADR_RUN_DIR", "from_env")
        .current_dir(cwd)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(cwd.join("from_env/aggregate.csv").exists());
    assert!(!cwd.join("ignored").exists());
}

#[test]
fn train_svm_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let synth = adrclf(
        &[
            "synth", "--n-pos", "40", "--n-neg", "160", "--lang", "de", "--seed", "9", "--out",
            "c.jsonl",
        ],
        cwd,
    );
    assert!(synth.status.success());
    let split = adrclf(&["split", "c.jsonl", "--seed", "1", "--out-dir", "."], cwd);
    assert!(split.status.success());
    let out = adrclf(
        &[
            "train-svm",
            "train_dev.jsonl",
            "--test",
            "test.jsonl",
            "--epochs",
            "20",
        ],
        cwd,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("trained SVM"), "{}", stdout(&out));
    assert!(stdout(&out).contains("P_0"), "{}", stdout(&out));
}
