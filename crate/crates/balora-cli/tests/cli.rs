//! End-to-end tests of the command-line front-end: artifact emission,
//! byte-level reproducibility, manifest replay, metric computation on the
//! bundled fixture matrices, and exit-code conventions.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_balora")
}

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../balora/fixtures")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("balora-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
  "T": 2,
  "dims": { "d": 10, "n": 10, "l": 1 },
  "rank": 2,
  "r_plant": 2,
  "n_train": 96,
  "n_eval": 48,
  "snapshot_batch": 8,
  "steps_per_task": 30
}"#,
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn code(output: &Output) -> i32 {
    output.status.code().unwrap()
}

#[test]
fn run_mode_emits_all_artifacts_and_they_parse() {
    let dir = scratch("run");
    let config = small_config(&dir);
    let out_dir = dir.join("out");
    let output = run(&[
        "--mode",
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));

    let accuracy = std::fs::read_to_string(out_dir.join("accuracy.csv")).unwrap();
    let matrix = balora::harness::AccuracyMatrix::from_csv(&accuracy).unwrap();
    assert_eq!(matrix.t(), 2);

    let metrics = std::fs::read_to_string(out_dir.join("metrics.txt")).unwrap();
    assert!(metrics.starts_with("metric rounded full\nmfn "));

    for task in 1..=2 {
        let ckpt =
            std::fs::read_to_string(out_dir.join(format!("adapter_task{task}.ckpt"))).unwrap();
        let updates = balora::adapter::read_checkpoint(&ckpt).unwrap();
        assert_eq!(updates.len(), 1);
        assert_eq!(updates[0].rank(), 2);
    }

    let memory = std::fs::read_to_string(out_dir.join("memory.ckpt")).unwrap();
    let memories = balora::gpm::read_checkpoint(&memory).unwrap();
    assert_eq!(memories.len(), 1);
    assert!(memories[0].k() > 0);

    let manifest = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    let replay = balora::harness::ExperimentConfig::from_json(&manifest).unwrap();
    assert_eq!(replay.tasks, 2);
    assert!(replay.module_version.is_some());
}

#[test]
fn identical_config_and_seed_give_byte_identical_csvs() {
    let dir = scratch("determinism");
    let config = small_config(&dir);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        let output = run(&[
            "--mode",
            "run",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "777",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&output), 0);
    }
    let a = std::fs::read(out_a.join("accuracy.csv")).unwrap();
    let b = std::fs::read(out_b.join("accuracy.csv")).unwrap();
    assert_eq!(a, b, "bytes differ between identical runs");
}

#[test]
fn a_manifest_replays_into_byte_identical_artifacts() {
    let dir = scratch("replay");
    let config = small_config(&dir);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    assert_eq!(
        code(&run(&[
            "--mode",
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_a.to_str().unwrap(),
        ])),
        0
    );
    // Re-run with the emitted manifest as the config; only --out changes.
    assert_eq!(
        code(&run(&[
            "--config",
            out_a.join("manifest.json").to_str().unwrap(),
            "--out",
            out_b.to_str().unwrap(),
        ])),
        0
    );
    for artifact in ["accuracy.csv", "adapter_task1.ckpt", "adapter_task2.ckpt", "memory.ckpt"] {
        let a = std::fs::read(out_a.join(artifact)).unwrap();
        let b = std::fs::read(out_b.join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs after manifest replay");
    }
}

#[test]
fn missing_mode_is_a_config_error_and_writes_nothing() {
    let dir = scratch("nomode");
    let out_dir = dir.join("out");
    let output = run(&["--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&output), 2);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.starts_with("error: ConfigError:"), "{stderr}");
    assert!(!out_dir.exists(), "nothing may be written on config errors");

    let unknown = run(&["--mode", "frobnicate", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&unknown), 2);
}

#[test]
fn metrics_reproduces_published_aggregates_from_fixtures() {
    let fixtures = fixtures_dir();
    let output = run(&[
        "--mode",
        "metrics",
        fixtures.join("ucit_lora_ft.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("mfn 61.3"), "{stdout}");
    assert!(stdout.contains("bwt -15.4"), "{stdout}");
    assert!(stdout.contains("fwt 26.8"), "{stdout}");

    let output = run(&[
        "--mode",
        "metrics",
        fixtures.join("dcl_eblora.csv").to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("mfn 66.7"), "{stdout}");
    assert!(stdout.contains("fwt 34.4"), "{stdout}");
    assert!(stdout.contains("bwt -0.7"), "{stdout}");
}

#[test]
fn malformed_csv_is_a_parse_error_with_exit_code_4() {
    let dir = scratch("badcsv");
    let path = dir.join("bad.csv");
    std::fs::write(&path, "task,1,2\n1,91.7,52.6\n2,58.6,oops\n").unwrap();
    let output = run(&["--mode", "metrics", path.to_str().unwrap()]);
    assert_eq!(code(&output), 4);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.starts_with("error: ParseError:"), "{stderr}");
    assert!(stderr.contains("line 3"), "{stderr}");
}

#[test]
fn spectrum_of_a_stored_adapter_reports_flatness() {
    let dir = scratch("spectrum");
    let config = small_config(&dir);
    let out_dir = dir.join("out");
    assert_eq!(
        code(&run(&[
            "--mode",
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])),
        0
    );
    let spectra_dir = dir.join("spectra");
    let output = run(&[
        "--mode",
        "spectrum",
        "--out",
        spectra_dir.to_str().unwrap(),
        out_dir.join("adapter_task1.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("cv "), "{stdout}");
    let csv = std::fs::read_to_string(spectra_dir.join("spectrum_layer0.csv")).unwrap();
    assert!(csv.starts_with("index,sigma,normalized\n"));
    let cv_line = csv.lines().last().unwrap();
    let cv: f64 = cv_line.split("cv=").nth(1).unwrap().parse().unwrap();
    assert!(cv <= 1e-8, "stored update should be flat, cv = {cv}");
}

#[test]
fn merge_experiment_grid_includes_both_endpoints_by_default() {
    let dir = scratch("merge");
    let config = small_config(&dir);
    let out_dir = dir.join("out");
    let output = run(&[
        "--mode",
        "merge-experiment",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "{}", String::from_utf8_lossy(&output.stderr));
    let csv = std::fs::read_to_string(out_dir.join("nai_vs_alpha.csv")).unwrap();
    let alphas: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(alphas.first(), Some(&0.0));
    assert_eq!(alphas.last(), Some(&1.0));
}

#[test]
fn compare_of_a_run_against_itself_is_all_zero() {
    let dir = scratch("compare");
    let config = small_config(&dir);
    let out_dir = dir.join("out");
    assert_eq!(
        code(&run(&[
            "--mode",
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])),
        0
    );
    let output = run(&[
        "--mode",
        "compare",
        out_dir.to_str().unwrap(),
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0);
    let stdout = String::from_utf8_lossy(&output.stdout);
    for line in stdout.lines().skip(1).take(5) {
        assert!(line.ends_with("+0.0000"), "{line}");
    }
    assert!(stdout.contains("signs mfn:= maa:= bwt:= fwt:= avg:="), "{stdout}");
}
