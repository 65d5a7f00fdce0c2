//! Run configuration, experiment pipelines, verdicts and reports.
//!
//! A run goes config → data → mollification ladder → evolution →
//! measurements → verdicts → files. Verdicts only read the measurements,
//! so `check` can re-derive them from a stored record.

pub mod config;
pub mod experiments;
pub mod record;
pub mod verdict;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ExperimentConfig, ExperimentKind, Thresholds};
pub use record::{output_root, Outcome, RunRecord, Status, SummaryRow, OUTPUT_ROOT_ENV};
pub use verdict::{evaluate, Measurements, Verdict};

use crate::error::{Error, Result};

/// How an error ends a run.
pub fn classify(err: &Error) -> Status {
    match err {
        Error::BlowUp(_) => Status::BlowUp,
        _ => Status::ConfigError,
    }
}

/// Runs a config and writes its directory under `root`.
///
/// A blow-up becomes a record with a failed `no_blowup` verdict; everything
/// else that goes wrong is an error.
pub fn run(cfg: &ExperimentConfig, root: &Path) -> Result<RunRecord> {
    let start = Instant::now();
    log::info!("run {} ({:?}), hash {}", cfg.name, cfg.experiment, &cfg.hash()[..12]);
    let (outcome, blowup) = match experiments::run_experiment(cfg) {
        Ok(o) => (o, None),
        Err(Error::BlowUp(b)) => {
            log::warn!("{}: {b}", cfg.name);
            (Outcome::default(), Some(b))
        }
        Err(e) => return Err(e),
    };
    let mut verdicts = evaluate(cfg.experiment, &outcome.measurements, &cfg.verdict);
    verdicts.push(record::no_blowup(blowup.as_ref()));
    let mut rec = RunRecord {
        name: cfg.name.clone(),
        experiment: config::enum_name(&cfg.experiment),
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.canonical(),
        measurements: outcome.measurements.clone(),
        verdicts,
        blowup,
        files: Vec::new(),
        wall_clock_s: 0.0,
        series: Vec::new(),
    };
    rec.wall_clock_s = start.elapsed().as_secs_f64();
    record::persist(&mut rec, &outcome, root)?;
    rec.series = outcome.series;
    Ok(rec)
}

pub fn run_file(path: &Path, root: &Path) -> Result<RunRecord> {
    run(&ExperimentConfig::from_file(path)?, root)
}

/// Config files (`*.cfg`) of a directory, sorted by name.
pub fn sweep_configs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no *.cfg files in {}", dir.display())));
    }
    Ok(files)
}

/// Runs every config of `dir` on up to `jobs` threads and writes the summary.
pub fn sweep(dir: &Path, root: &Path, jobs: usize) -> Result<(Status, Vec<SummaryRow>)> {
    let files = sweep_configs(dir)?;
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<SummaryRow>>> = files.iter().map(|_| Default::default()).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, files.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some(path) = files.get(k) else { break };
                let label = path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned());
                let row = match run_file(path, root) {
                    Ok(r) => SummaryRow::from_record(&label, &r),
                    Err(e) => SummaryRow::from_error(&label, classify(&e), &e),
                };
                *slots[k].lock().expect("slot") = Some(row);
            });
        }
    });
    let rows: Vec<SummaryRow> =
        slots.into_iter().map(|m| m.into_inner().expect("slot").expect("every config ran")).collect();
    record::write_summary(&rows, root)?;
    let status = rows.iter().fold(Status::Pass, |acc, r| {
        acc.combine(match r.status.as_str() {
            "pass" => Status::Pass,
            "fail" => Status::VerdictFailure,
            "blow-up" => Status::BlowUp,
            _ => Status::ConfigError,
        })
    });
    Ok((status, rows))
}

/// Re-evaluates a stored record; returns the fresh verdicts and whether they
/// agree with the stored ones.
pub fn check(path: &Path) -> Result<(RunRecord, Vec<Verdict>, bool)> {
    let rec = RunRecord::load(path)?;
    let fresh = rec.reevaluate()?;
    let same = fresh.len() == rec.verdicts.len()
        && fresh.iter().zip(&rec.verdicts).all(|(a, b)| a.name == b.name && a.pass == b.pass);
    Ok((rec, fresh, same))
}
