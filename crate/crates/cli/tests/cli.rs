use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "synth.vertices=300",
    "--set",
    "synth.edges=360",
    "--set",
    "synth.communities=3",
    "--snapshots",
    "3",
    "--dim",
    "8",
    "--set",
    "recurrent_layers=1",
];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trendfair"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn synth_ingest_label_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let stdout = ok(d, &with_small(&["synth", "--out", "log.csv", "--labels", "planted.tsv"]));
    assert!(stdout.contains("interactions written"));
    let planted = fs::read_to_string(d.join("planted.tsv")).unwrap();
    assert_eq!(planted.lines().count(), 300);

    let stdout = ok(d, &["ingest", "--data", "log.csv", "--snapshots", "3", "--out", "g.tsv"]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("snapshot ")).count(), 3);
    assert!(d.join("g.tsv.manifest").exists());

    let stdout = ok(d, &["label", "--graph", "g.tsv", "--patterns", "--out", "labels.tsv"]);
    for group in ["SfH", "T2H", "FaT", "H2T", "FaH"] {
        assert!(stdout.lines().any(|l| l.starts_with(group)), "{group} missing:\n{stdout}");
    }
    let labels = fs::read_to_string(d.join("labels.tsv")).unwrap();
    assert_eq!(labels.lines().count(), 300);
}

#[test]
fn train_checkpoint_resume_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = with_small(&[
        "train",
        "--out",
        "run",
        "--epochs",
        "2",
        "--seeds",
        "4",
        "--checkpoint-dir",
        "ck",
    ]);
    let stdout = ok(d, &args);
    assert!(stdout.starts_with("variant,"));
    assert!(d.join("run/report.json").exists());
    let ck = "ck/full-seed4.ckpt";
    assert!(d.join(ck).exists());

    ok(d, &["train", "--resume", ck, "--epochs", "3", "--out", "resumed"]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("resumed/report.json")).unwrap()).unwrap();
    let trace = report["variants"][0]["runs"][0]["trace"].as_array().unwrap();
    assert_eq!(trace.len(), 3);

    let metrics: serde_json::Value = serde_json::from_str(&ok(d, &["evaluate", "--checkpoint", ck])).unwrap();
    assert!(metrics["hr"]["20"].as_f64().is_some());
    assert_eq!(metrics, report["variants"][0]["runs"][0]["metrics"]);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("exp.cfg"), "epochs = 7\nseeds = 1,2\ngamma4 = 0.5\n").unwrap();
    let args = with_small(&[
        "train", "--config", "exp.cfg", "--epochs", "1", "--seed", "9", "--out", "run",
    ]);
    ok(d, &args);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"], serde_json::json!([9]));
    assert_eq!(report["config_echo"]["epochs"], 1);
    assert_eq!(report["config_echo"]["weights"]["gamma_fair"], 0.5);
}

#[test]
fn single_switch_ablation_and_report_reprint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = with_small(&["ablate", "--ablate", "no_gru", "--epochs", "1", "--seeds", "0", "--out", "abl"]);
    let stdout = ok(d, &args);
    assert!(stdout.lines().any(|l| l.starts_with("full,")));
    assert!(stdout.lines().any(|l| l.starts_with("no_gru,")));
    assert!(stdout.lines().next().unwrap().contains("Dec."));
    let again = ok(d, &["report", "--input", "abl/report.json"]);
    assert_eq!(again, stdout);
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &with_small(&["ablate", "--ablate", "no_thing", "--out", "x"]));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_thing"));

    let out = run(d, &["train", "--set", "epochs", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("KEY=VALUE"));

    let out = run(d, &with_small(&["plugin", "missing", "--epochs", "1", "--seeds", "0", "--out", "x"]));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
}
