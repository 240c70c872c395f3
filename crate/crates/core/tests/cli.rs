//! End-to-end runs of the command-line binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMOKE: &str = r#"{
  "data": {"image_size": 128, "synthetic_frames": 12, "real_train_frames": 6, "real_test_frames": 4},
  "model": {"input_size": 128},
  "supervised": {"epochs": 1, "batch_size": 4},
  "adapt": {"iterations": 5, "batch_size": 2, "lr": 1e-4},
  "eval": {"vis_frames": 2}
}"#;

fn bronchodepth(runs: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bronchodepth"))
        .args(args)
        .env("BRONCHODEPTH_RUNS_DIR", runs)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn succeed(runs: &Path, args: &[&str]) -> String {
    let out = bronchodepth(runs, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn exit_code(runs: &Path, args: &[&str]) -> i32 {
    bronchodepth(runs, args).status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let cfg = write_config(tmp.path(), "smoke.json", SMOKE);
    let p = |name: &str| tmp.path().join(name).display().to_string();

    succeed(
        &runs,
        &[
            "gen-data",
            "--config",
            &cfg,
            "--seed",
            "3",
            "--out",
            &p("data_a"),
        ],
    );
    succeed(
        &runs,
        &[
            "gen-data",
            "--config",
            &cfg,
            "--seed",
            "3",
            "--out",
            &p("data_b"),
        ],
    );
    assert_eq!(
        tree_bytes(&tmp.path().join("data_a/data")),
        tree_bytes(&tmp.path().join("data_b/data")),
        "generation is not deterministic"
    );
    // an existing non-empty run directory is never overwritten
    assert_ne!(
        exit_code(
            &runs,
            &["gen-data", "--config", &cfg, "--out", &p("data_a")]
        ),
        0
    );

    let data = p("data_a/data");
    succeed(
        &runs,
        &[
            "train-sup",
            "--config",
            &cfg,
            "--data",
            &data,
            "--out",
            &p("sup"),
            "--deterministic",
        ],
    );
    let sup_root = tmp.path().join("sup");
    for entry in ["config.json", "ckpts", "logs/train.jsonl", "reports"] {
        assert!(sup_root.join(entry).exists(), "missing {entry}");
    }
    let sup_ckpt = p("sup/ckpts/last");

    assert_eq!(
        exit_code(&runs, &["adapt", "--config", &cfg, "--data", &data]),
        2
    );
    succeed(
        &runs,
        &[
            "adapt",
            "--config",
            &cfg,
            "--data",
            &data,
            "--ckpt",
            &sup_ckpt,
            "--out",
            &p("adapt"),
        ],
    );
    let adapted = p("adapt/ckpts/adapted");
    assert!(Path::new(&adapted).join("manifest.json").exists());

    let stdout = succeed(
        &runs,
        &[
            "eval",
            "--config",
            &cfg,
            "--data",
            &data,
            "--out",
            &p("eval"),
            "--ckpt",
            &format!("vanilla={sup_ckpt}"),
            "--ckpt",
            &format!("adapted={adapted}"),
        ],
    );
    assert!(stdout.contains("vanilla") && stdout.contains("adapted"));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("eval/reports/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    let csv = fs::read_to_string(tmp.path().join("eval/reports/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(
        fs::read_dir(tmp.path().join("eval/reports/depth_vis"))
            .unwrap()
            .count(),
        2
    );

    let frames = p("data_a/data/real_like/test/color");
    assert_eq!(
        exit_code(
            &runs,
            &["infer", "--config", &cfg, "--ckpt", &sup_ckpt, "--input", &frames]
        ),
        2,
        "the synthetic encoder must not serve real-domain inference"
    );
    succeed(
        &runs,
        &[
            "infer",
            "--config",
            &cfg,
            "--ckpt",
            &sup_ckpt,
            "--input",
            &frames,
            "--domain",
            "synthetic",
            "--out",
            &p("infer_syn"),
        ],
    );
    succeed(
        &runs,
        &[
            "infer",
            "--config",
            &cfg,
            "--ckpt",
            &adapted,
            "--input",
            &frames,
            "--out",
            &p("infer"),
        ],
    );
    let written: Vec<String> = fs::read_dir(tmp.path().join("infer/reports"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        written.iter().filter(|n| n.ends_with("_depth.pfm")).count(),
        4
    );
    assert_eq!(
        written
            .iter()
            .filter(|n| n.ends_with("_confidence.pfm"))
            .count(),
        4
    );

    succeed(&runs, &["plot", "--config", &cfg, "--run", &p("adapt")]);
    assert!(
        runs.exists(),
        "plot without --out writes under the runs root"
    );
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let unknown = write_config(
        tmp.path(),
        "unknown.json",
        r#"{"supervised": {"learning_rate": 0.1}}"#,
    );
    let negative = write_config(tmp.path(), "negative.json", r#"{"supervised": {"lr": -1}}"#);
    for cfg in [&unknown, &negative] {
        assert_eq!(exit_code(&runs, &["gen-data", "--config", cfg]), 2, "{cfg}");
    }
    assert!(!runs.exists(), "a rejected config must not create a run");

    // an empty file means all defaults; the missing run is an io error
    let empty = write_config(tmp.path(), "empty.json", "");
    let missing = tmp.path().join("nowhere").display().to_string();
    assert_eq!(
        exit_code(&runs, &["plot", "--config", &empty, "--run", &missing]),
        5
    );
}

#[test]
fn bad_arguments_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bronchodepth(tmp.path(), &["train-sup"]);
    assert!(!out.status.success());
    let out = bronchodepth(tmp.path(), &["no-such-command"]);
    assert!(!out.status.success());
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = bronchodepth::config::ExperimentConfig::load(&path).unwrap();
        cfg.validate()
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 2);
}
