use std::path::Path;
use std::process::{Command, Output};

use pairalign_core::gap::GapReport;
use pairalign_core::model::checkpoint;
use pairalign_core::pretrain::PretrainRecord;
use pairalign_core::world::{read_jsonl, HomologousPair};
use serde_json::Value;

/// A model and schedule small enough for a few seconds per command.
const TINY: &[&str] = &[
    "--set",
    "model.d_model=16",
    "--set",
    "model.mlp_mult=2",
    "--set",
    "pretrain.steps=40",
    "--set",
    "pretrain.batch_size=4",
    "--set",
    "pretrain.task_mix=[1,3,1]",
    "--set",
    "pretrain.learning_rate=0.01",
    "--set",
    "curation.gen_accuracy_threshold=0.1",
    "--set",
    "alignment.steps=2",
    "--set",
    "alignment.batch_size=2",
    "--set",
    "data.train_pairs=16",
    "--set",
    "data.eval_pairs=4",
];

/// Enough pretraining that generated images are scene-like and curation keeps tuples.
const WARM: &[&str] = &[
    "--set",
    "pretrain.steps=200",
    "--set",
    "pretrain.batch_size=8",
    "--set",
    "run.seed=9",
    "--set",
    "model.init_std=0.3",
    "--set",
    "data.train_pairs=64",
];

fn pairalign_with(run: &Path, args: &[&str], extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairalign"))
        .args(args)
        .arg("--run")
        .arg(run)
        .args(TINY)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn pairalign(run: &Path, args: &[&str]) -> Output {
    pairalign_with(run, args, &[])
}

fn ok(run: &Path, args: &[&str]) -> Value {
    ok_with(run, args, &[])
}

fn ok_with(run: &Path, args: &[&str], extra: &[&str]) -> Value {
    let out = pairalign_with(run, args, extra);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("summary json")
}

#[test]
fn gen_data_writes_valid_reproducible_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let s = ok(&a, &["gen-data", "--count", "100", "--seed", "3"]);
    assert_eq!(s["train_pairs"], 100);
    ok(&b, &["gen-data", "--count", "100", "--seed", "3"]);
    let text = std::fs::read_to_string(a.join("data/train.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 100);
    assert_eq!(
        text,
        std::fs::read_to_string(b.join("data/train.jsonl")).unwrap()
    );
    // schema check: every line is a pair whose image, caption and answers
    // agree with its scene, with the documented field names
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        for key in ["scene", "image_tokens", "caption_tokens", "qa"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let p: HomologousPair = serde_json::from_value(v).unwrap();
        p.validate().unwrap();
    }
    let echoed = std::fs::read_to_string(a.join("data/config.toml")).unwrap();
    assert!(echoed.contains("train_pairs = 100"));
}

#[test]
fn existing_outputs_need_force_and_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("r");
    ok(&run, &["gen-data"]);
    let again = pairalign(&run, &["gen-data"]);
    assert!(!again.status.success());
    let err: Value = serde_json::from_slice(
        again
            .stderr
            .split(|b| *b == b'\n')
            .rev()
            .find(|l| !l.is_empty())
            .unwrap(),
    )
    .expect("error json");
    assert!(err["error"].as_str().unwrap().contains("--force"));
    ok(&run, &["gen-data", "--force"]);

    let missing = pairalign(&run, &["curate"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing checkpoint"));
}

#[test]
fn lock_file_blocks_a_second_command() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("r");
    std::fs::create_dir_all(&run).unwrap();
    std::fs::write(run.join(".lock"), "1").unwrap();
    let out = pairalign(&run, &["gen-data"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pairalign"))
        .args([
            "gen-data",
            "--set",
            "run.name=envrun",
            "--count",
            "5",
            "--eval-count",
            "2",
        ])
        .env("PAIRALIGN_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("envrun/data/train.jsonl").exists());
}

#[test]
fn pretrain_resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (full, split) = (dir.path().join("full"), dir.path().join("split"));
    for r in [&full, &split] {
        ok(r, &["gen-data"]);
    }
    let s = ok(&full, &["pretrain"]);
    ok(&split, &["pretrain", "--until", "15"]);
    ok(&split, &["pretrain", "--resume", "--save-every", "10"]);
    assert_eq!(
        checkpoint::blob_hash(&full.join("pretrain")).unwrap(),
        checkpoint::blob_hash(&split.join("pretrain")).unwrap()
    );
    let log = |r: &Path| std::fs::read(r.join("pretrain/trainlog.jsonl")).unwrap();
    assert_eq!(log(&full), log(&split));

    let records: Vec<PretrainRecord> = read_jsonl(&full.join("pretrain/trainlog.jsonl")).unwrap();
    assert_eq!(records.len(), 40);
    let ln_v = (pairalign_core::vocab::VOCAB_SIZE as f64).ln();
    assert!((records[0].loss - ln_v).abs() < 0.2, "{}", records[0].loss);
    assert!(s["final_loss"].as_f64().unwrap() < ln_v);
}

#[test]
fn full_pipeline_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("r");
    ok_with(&run, &["gen-data"], WARM);
    ok_with(&run, &["pretrain"], WARM);
    let c = ok_with(&run, &["curate"], WARM);
    assert!(c["tuples"].as_u64().unwrap() > 0);
    let a = ok_with(&run, &["align", "--mode", "und"], WARM);
    assert_eq!(a["mode"], "und_only");
    let echoed = std::fs::read_to_string(run.join("align/config.toml")).unwrap();
    assert!(echoed.contains("mode = \"und_only\""));
    ok_with(&run, &["eval-gap"], WARM);
    ok_with(
        &run,
        &[
            "eval-gap",
            "--checkpoint",
            run.join("align").to_str().unwrap(),
        ],
        WARM,
    );
    ok_with(&run, &["iterate", "--rounds", "2"], WARM);
    for d in ["baseline", "round_0", "round_1"] {
        assert!(run.join("iterate").join(d).join("gap.json").exists(), "{d}");
    }
    assert!(!run.join("iterate/round_2").exists());

    ok_with(&run, &["report"], WARM);
    let md = std::fs::read_to_string(run.join("report.md")).unwrap();
    assert!(md.contains("| round_0 |") && md.contains("| round_1 |"));
    let csv = std::fs::read(run.join("report.csv")).unwrap();
    ok_with(&run, &["report"], WARM);
    assert_eq!(std::fs::read(run.join("report.csv")).unwrap(), csv);
    assert_eq!(std::fs::read_to_string(run.join("report.md")).unwrap(), md);

    let mut rows = csv::Reader::from_path(run.join("report.csv")).unwrap();
    let mut n = 0;
    for rec in rows.records() {
        let rec = rec.unwrap();
        let g = GapReport::read(&run.join(&rec[0]).join("gap.json")).unwrap();
        assert_eq!(rec[1].parse::<f64>().unwrap(), g.understanding_score);
        assert_eq!(rec[2].parse::<f64>().unwrap(), g.generation_score);
        assert_eq!(rec[3].parse::<f64>().unwrap(), g.gap);
        n += 1;
    }
    // two eval-gap reports plus baseline and two rounds
    assert_eq!(n, 5);
}

#[test]
fn report_on_a_missing_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = pairalign(&dir.path().join("nope"), &["report"]);
    assert!(!out.status.success());
}
