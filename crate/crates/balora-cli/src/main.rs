//! Batch experiment front-end: continual runs, the unconstrained baseline,
//! the smoothing-then-merging experiment, spectrum dumps, metric computation
//! from stored matrices, and run comparison.
//!
//! Exit codes: 0 success, 2 config error, 3 runtime/module error, 4 parse
//! error. Failures print a single machine-parsable line
//! `error: <class>: <message>` to stderr.

use balora::adapter;
use balora::error::Error;
use balora::gpm;
use balora::harness::{
    baseline_run, merge_experiment, metrics_report, run_sequence, AccuracyMatrix,
    ExperimentConfig, MetricsReport,
};
use balora::linalg::write_matrix;
use balora::spectral::{spectrum, spectrum_csv};
use clap::Parser;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "balora",
    version,
    about = "Energy-balanced low-rank continual adaptation experiments"
)]
struct Cli {
    /// One of: run, baseline, merge-experiment, spectrum, metrics, compare.
    /// May also come from the config file's `mode` field.
    #[arg(long)]
    mode: Option<String>,

    /// JSON experiment config (a manifest from a previous run also works).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Positional inputs: a matrix CSV for `metrics`, an adapter checkpoint
    /// for `spectrum`, two run directories for `compare`.
    inputs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.class());
            let code = match e {
                Error::ConfigError(_) => 2,
                Error::ParseError { .. } => 4,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::ConfigError(format!("cannot read config {}: {e}", path.display()))
            })?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.display().to_string());
    }
    if let Some(mode) = &cli.mode {
        cfg.mode = Some(mode.clone());
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let mode = cfg
        .mode
        .clone()
        .ok_or_else(|| Error::ConfigError("missing required field `mode`".to_string()))?;
    match mode.as_str() {
        "run" => cmd_run(&cfg),
        "baseline" => cmd_baseline(&cfg),
        "merge-experiment" => cmd_merge_experiment(&cfg),
        "spectrum" => cmd_spectrum(&cfg, &cli.inputs),
        "metrics" => cmd_metrics(&cli.inputs),
        "compare" => cmd_compare(&cli.inputs),
        other => Err(Error::ConfigError(format!(
            "unknown mode `{other}`; expected run, baseline, merge-experiment, spectrum, metrics, or compare"
        ))),
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, Error> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::ConfigError("missing required field `out`".to_string()))?;
    let path = PathBuf::from(dir);
    std::fs::create_dir_all(&path)?;
    Ok(path)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), Error> {
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn metrics_text(report: &MetricsReport) -> String {
    let mut out = String::from("metric rounded full\n");
    for (name, value) in [
        ("mfn", report.mfn),
        ("maa", report.maa),
        ("bwt", report.bwt),
        ("fwt", report.fwt),
        ("avg", report.avg),
    ] {
        out.push_str(&format!("{name} {value:.1} {value:.16e}\n"));
    }
    out
}

/// Expands the per-seed run list: the `seeds` array fans out into
/// subdirectories, otherwise the single `seed` runs in the output root.
fn seed_plan(cfg: &ExperimentConfig) -> Vec<(u64, Option<String>)> {
    match &cfg.seeds {
        Some(seeds) if !seeds.is_empty() => seeds
            .iter()
            .map(|s| (*s, Some(format!("seed-{s}"))))
            .collect(),
        _ => vec![(cfg.seed, None)],
    }
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<(), Error> {
    cfg.validate()?;
    let root = out_dir(cfg)?;
    for (seed, sub) in seed_plan(cfg) {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        let dir = match sub {
            Some(name) => {
                let d = root.join(name);
                std::fs::create_dir_all(&d)?;
                d
            }
            None => root.clone(),
        };
        let out = run_sequence(&run_cfg)?;
        write_file(&dir, "accuracy.csv", &out.accuracy.to_csv())?;
        write_file(&dir, "metrics.txt", &metrics_text(&out.metrics))?;
        for (t, updates) in out.adapters.iter().enumerate() {
            write_file(
                &dir,
                &format!("adapter_task{}.ckpt", t + 1),
                &adapter::write_checkpoint(updates),
            )?;
        }
        write_file(&dir, "memory.ckpt", &gpm::write_checkpoint(&out.memories))?;
        write_file(&dir, "manifest.json", &out.manifest)?;
    }
    Ok(())
}

fn cmd_baseline(cfg: &ExperimentConfig) -> Result<(), Error> {
    cfg.validate()?;
    let root = out_dir(cfg)?;
    for (seed, sub) in seed_plan(cfg) {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        let dir = match sub {
            Some(name) => {
                let d = root.join(name);
                std::fs::create_dir_all(&d)?;
                d
            }
            None => root.clone(),
        };
        let out = baseline_run(&run_cfg)?;
        write_file(&dir, "accuracy.csv", &out.accuracy.to_csv())?;
        write_file(&dir, "metrics.txt", &metrics_text(&out.metrics))?;
        for (t, deltas) in out.deltas.iter().enumerate() {
            let mut text = String::new();
            for delta in deltas {
                text.push_str(&write_matrix(delta));
            }
            write_file(&dir, &format!("baseline_delta_task{}.txt", t + 1), &text)?;
        }
        write_file(&dir, "manifest.json", &out.manifest)?;
    }
    Ok(())
}

fn cmd_merge_experiment(cfg: &ExperimentConfig) -> Result<(), Error> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let report = merge_experiment(cfg)?;
    write_file(&dir, "nai_vs_alpha.csv", &report.to_csv())?;
    write_file(&dir, "manifest.json", &report.manifest)?;
    println!("{}", report.to_csv().trim_end());
    Ok(())
}

fn cmd_spectrum(cfg: &ExperimentConfig, inputs: &[PathBuf]) -> Result<(), Error> {
    let path = inputs
        .first()
        .ok_or_else(|| Error::ConfigError("spectrum needs an adapter checkpoint path".to_string()))?;
    let text = std::fs::read_to_string(path)?;
    let updates = adapter::read_checkpoint(&text)?;
    let dir = out_dir(cfg)?;
    for update in &updates {
        let materialized = adapter::materialize(update);
        let full = spectrum(&materialized);
        // The adapter's own spectrum lives in its top-r values.
        let top = balora::spectral::report_from_sigma(
            full.sigma.iter().take(update.rank()).copied().collect(),
        );
        write_file(
            &dir,
            &format!("spectrum_layer{}.csv", update.layer_index),
            &spectrum_csv(&top),
        )?;
        println!(
            "layer {} rank {} cv {:.3e}",
            update.layer_index,
            update.rank(),
            top.cv
        );
    }
    Ok(())
}

fn cmd_metrics(inputs: &[PathBuf]) -> Result<(), Error> {
    let path = inputs
        .first()
        .ok_or_else(|| Error::ConfigError("metrics needs an accuracy-matrix CSV path".to_string()))?;
    let text = std::fs::read_to_string(path)?;
    let matrix = AccuracyMatrix::from_csv(&text)?;
    let report = metrics_report(&matrix)?;
    print!("{}", metrics_text(&report));
    Ok(())
}

fn read_run_metrics(dir: &Path) -> Result<MetricsReport, Error> {
    let text = std::fs::read_to_string(dir.join("accuracy.csv"))?;
    let matrix = AccuracyMatrix::from_csv(&text)?;
    metrics_report(&matrix)
}

fn cmd_compare(inputs: &[PathBuf]) -> Result<(), Error> {
    if inputs.len() != 2 {
        return Err(Error::ConfigError(
            "compare needs two run directories".to_string(),
        ));
    }
    let a = read_run_metrics(&inputs[0])?;
    let b = read_run_metrics(&inputs[1])?;
    println!("metric a b delta");
    let mut signs = Vec::new();
    for (name, va, vb) in [
        ("mfn", a.mfn, b.mfn),
        ("maa", a.maa, b.maa),
        ("bwt", a.bwt, b.bwt),
        ("fwt", a.fwt, b.fwt),
        ("avg", a.avg, b.avg),
    ] {
        let delta = vb - va;
        let sign = if delta > 0.0 {
            "+"
        } else if delta < 0.0 {
            "-"
        } else {
            "="
        };
        signs.push(format!("{name}:{sign}"));
        println!("{name} {va:.4} {vb:.4} {delta:+.4}");
    }
    println!("signs {}", signs.join(" "));
    Ok(())
}
