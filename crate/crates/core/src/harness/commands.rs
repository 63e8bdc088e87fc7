use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    error_histograms, generate_logs, label_logs, plot_rows, run_variant, train_network, ExperimentConfig, FileDigest,
    Manifest, MetricsReport, SolveTimeStats, TimingReport, Variant,
};
use crate::datagen::{compose_dataset, read_dataset, write_dataset, CoverageReport};
use crate::mlp::{load_weights_checked, save_weights};
use crate::sim::RunLog;
use crate::{Error, Result};

/// File names inside a run directory.
pub mod files {
    use super::Variant;

    pub const REFERENCE: &str = "reference.csv";
    pub const DATASET: &str = "dataset.csv";
    pub const COVERAGE: &str = "coverage.json";
    pub const WEIGHTS: &str = "weights.json";
    pub const LOSS_HISTORY: &str = "loss_history.csv";
    pub const METRICS_JSON: &str = "metrics.json";
    pub const METRICS_CSV: &str = "metrics.csv";
    pub const TIMING: &str = "timing.json";
    pub const PLOT: &str = "plot.csv";
    pub const HISTOGRAMS: &str = "histograms.csv";

    pub fn run_log(v: Variant) -> String {
        format!("run_{v}.csv")
    }

    pub fn run_timing(v: Variant) -> String {
        format!("timing_{v}.json")
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn open(dir: &Path, name: &str) -> Result<File> {
    let path = dir.join(name);
    File::open(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.display().to_string()),
        _ => Error::Io(e),
    })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn digests(dir: &Path, names: &[&str]) -> Result<Vec<FileDigest>> {
    names.iter().map(|n| FileDigest::of(dir, n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GenDataSummary {
    scenarios: usize,
    simulated_seconds: f64,
    truncated_runs: Vec<usize>,
    pool_samples: usize,
    coverage: CoverageReport,
    /// reference quantities outside the covered feature range
    uncovered: Vec<String>,
}

/// Simulates the scenario mix, labels it through the observer and writes the
/// composed dataset with the reference it will be used against.
pub fn cmd_gen_data(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out)?;
    let reference = cfg.build_reference()?;
    reference.write_csv(create(out, files::REFERENCE)?)?;
    let logs = generate_logs(cfg, seed)?;
    let pool = label_logs(&logs, &cfg.datagen.observer, seed)?;
    let data = compose_dataset(
        &pool,
        cfg.datagen.initiation_fraction,
        cfg.datagen.total,
        super::compose_seed(seed),
    )?;
    write_dataset(&data, create(out, files::DATASET)?)?;
    let coverage = CoverageReport::from_samples(&data);
    let summary = GenDataSummary {
        scenarios: logs.len(),
        simulated_seconds: logs.iter().map(|l| l.records.len() as f64 * l.dt).sum(),
        truncated_runs: (0..logs.len()).filter(|&i| logs[i].termination.truncated()).collect(),
        pool_samples: pool.len(),
        uncovered: coverage.uncovered(&reference, 0.05),
        coverage,
    };
    write_json(out, files::COVERAGE, &summary)?;
    let outputs = digests(out, &[files::REFERENCE, files::DATASET, files::COVERAGE])?;
    let m = Manifest::new("gen-data", cfg, seed, None, Vec::new(), outputs)?;
    m.write(out)?;
    Ok(m)
}

pub fn cmd_train(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Manifest> {
    let inputs = digests(out, &[files::DATASET])?;
    let data = read_dataset(open(out, files::DATASET)?)?;
    let (mlp, history) = train_network(cfg, &data, seed)?;
    save_weights(&mlp, &out.join(files::WEIGHTS))?;
    let mut w = csv::Writer::from_writer(create(out, files::LOSS_HISTORY)?);
    w.write_record(["epoch", "train_mse", "val_mse"])?;
    for (i, (t, v)) in history.train_mse.iter().zip(&history.val_mse).enumerate() {
        w.write_record([(i + 1).to_string(), format!("{t:.17e}"), format!("{v:.17e}")])?;
    }
    w.flush()?;
    let outputs = digests(out, &[files::WEIGHTS, files::LOSS_HISTORY])?;
    let m = Manifest::new("train", cfg, seed, None, inputs, outputs)?;
    m.write(out)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunTiming {
    stats: Option<SolveTimeStats>,
    /// seconds, one per controller update
    solve_times: Vec<f64>,
}

/// Closed-loop run of one variant along the full reference.
pub fn cmd_run(cfg: &ExperimentConfig, seed: u64, variant: Variant, out: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out)?;
    let reference = cfg.build_reference()?;
    let (network, inputs) = match variant {
        Variant::Physics => (None, Vec::new()),
        Variant::Neural => {
            let inputs = digests(out, &[files::WEIGHTS])?;
            (Some(load_weights_checked(&out.join(files::WEIGHTS), &cfg.mlp)?), inputs)
        }
    };
    let log = run_variant(cfg, &reference, variant, network.as_ref())?;
    let log_name = files::run_log(variant);
    log.write_csv(create(out, &log_name)?, cfg.run.log_solve_time)?;
    let times = log.solve_times();
    write_json(
        out,
        &files::run_timing(variant),
        &RunTiming {
            stats: SolveTimeStats::from_times(&times),
            solve_times: times,
        },
    )?;
    // timing is wall-clock dependent and left out of the manifest
    let outputs = digests(out, &[&log_name])?;
    let m = Manifest::new("run", cfg, seed, Some(variant), inputs, outputs)?;
    m.write(out)?;
    Ok(m)
}

fn read_logs(out: &Path) -> Result<Vec<(Variant, RunLog)>> {
    let mut logs = Vec::new();
    for v in Variant::ALL {
        match open(out, &files::run_log(v)) {
            Ok(f) => logs.push((v, RunLog::read_csv(std::io::BufReader::new(f))?)),
            Err(Error::MissingInput(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if logs.is_empty() {
        return Err(Error::MissingInput(format!("no run logs in {}", out.display())));
    }
    Ok(logs)
}

fn log_digests(out: &Path, logs: &[(Variant, RunLog)]) -> Result<Vec<FileDigest>> {
    logs.iter().map(|(v, _)| FileDigest::of(out, &files::run_log(*v))).collect()
}

/// Region-decomposed metrics over whichever run logs exist, plus a separate
/// timing summary.
pub fn cmd_metrics(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<(Manifest, MetricsReport)> {
    let logs = read_logs(out)?;
    let inputs = log_digests(out, &logs)?;
    let pairs: Vec<_> = logs.iter().map(|(v, l)| (*v, l)).collect();
    let report = MetricsReport::new(&pairs);
    write_json(out, files::METRICS_JSON, &report)?;
    report.write_csv(create(out, files::METRICS_CSV)?)?;
    let mut times = Vec::new();
    for (v, _) in &logs {
        if let Ok(f) = open(out, &files::run_timing(*v)) {
            let t: RunTiming = serde_json::from_reader(std::io::BufReader::new(f))?;
            times.push((*v, t.solve_times));
        }
    }
    write_json(out, files::TIMING, &TimingReport::new(&times))?;
    let outputs = digests(out, &[files::METRICS_JSON, files::METRICS_CSV])?;
    let m = Manifest::new("metrics", cfg, seed, None, inputs, outputs)?;
    m.write(out)?;
    Ok((m, report))
}

/// Plot-ready traces against arc length and per-region error histograms.
pub fn cmd_export(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Manifest> {
    let logs = read_logs(out)?;
    let inputs = log_digests(out, &logs)?;
    let mut w = csv::Writer::from_writer(create(out, files::PLOT)?);
    for (v, log) in &logs {
        for row in plot_rows(*v, log) {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(out, files::HISTOGRAMS)?);
    for (v, log) in &logs {
        for bin in error_histograms(*v, log) {
            w.serialize(bin)?;
        }
    }
    w.flush()?;
    let outputs = digests(out, &[files::PLOT, files::HISTOGRAMS])?;
    let m = Manifest::new("export", cfg, seed, None, inputs, outputs)?;
    m.write(out)?;
    Ok(m)
}
