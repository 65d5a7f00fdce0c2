//! Run records, their on-disk layout, and sweep summaries.
//!
//! A run named `foo` writes into `<root>/foo/`:
//!
//! * `record.json`: config text and hash, measurements, verdicts, wall clock
//! * `<series>.csv`: one diagnostics series per evolved member
//! * `<table>.csv`: refinement and ladder tables
//! * `<member>.snap`: final metrics, when `output.snapshots = true`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{BlowUp, Error, Result};
use crate::estimators::DiagnosticsSeries;
use crate::lattice::{save_snapshot, Field};

use super::config::ExperimentConfig;
use super::verdict::{evaluate, Measurements, Verdict};

pub const OUTPUT_ROOT_ENV: &str = "HFLOW_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "hflow-out";

/// `f64` that survives JSON: non-finite values travel as strings.
pub mod lossless {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }

    pub mod map {
        use std::collections::BTreeMap;

        use serde::ser::SerializeMap;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct Item(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(m: &BTreeMap<String, Vec<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
            let mut out = s.serialize_map(Some(m.len()))?;
            for (k, v) in m {
                let items: Vec<Item> = v.iter().map(|&x| Item(x)).collect();
                out.serialize_entry(k, &items)?;
            }
            out.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> std::result::Result<BTreeMap<String, Vec<f64>>, D::Error> {
            let raw: BTreeMap<String, Vec<Item>> = BTreeMap::deserialize(d)?;
            Ok(raw.into_iter().map(|(k, v)| (k, v.into_iter().map(|i| i.0).collect())).collect())
        }
    }
}

/// What an experiment produced before verdicts are applied.
#[derive(Debug, Default)]
pub struct Outcome {
    pub measurements: Measurements,
    pub series: Vec<(String, DiagnosticsSeries)>,
    pub tables: Vec<(String, String)>,
    pub snapshots: Vec<(String, Field)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub experiment: String,
    pub config_hash: String,
    pub code_version: String,
    /// Canonical config text; parsing it reproduces the run's config.
    pub config: String,
    #[serde(with = "lossless::map")]
    pub measurements: Measurements,
    pub verdicts: Vec<Verdict>,
    pub blowup: Option<BlowUp>,
    pub files: Vec<String>,
    pub wall_clock_s: f64,
    /// In-memory only; the CSV files are the persisted form.
    #[serde(skip)]
    pub series: Vec<(String, DiagnosticsSeries)>,
}

/// Exit status of a run or a set of runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Pass,
    VerdictFailure,
    ConfigError,
    BlowUp,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::VerdictFailure => 1,
            Status::ConfigError => 2,
            Status::BlowUp => 3,
        }
    }

    /// Config errors dominate, then blow-ups, then verdict failures.
    pub fn combine(self, other: Status) -> Status {
        let rank = |s: Status| match s {
            Status::Pass => 0,
            Status::VerdictFailure => 1,
            Status::BlowUp => 2,
            Status::ConfigError => 3,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::VerdictFailure => "fail",
            Status::ConfigError => "config-error",
            Status::BlowUp => "blow-up",
        }
    }
}

impl RunRecord {
    pub fn status(&self) -> Status {
        if self.blowup.is_some() {
            Status::BlowUp
        } else if self.verdicts.iter().all(|v| v.pass) {
            Status::Pass
        } else {
            Status::VerdictFailure
        }
    }

    pub fn failed(&self) -> Vec<&str> {
        self.verdicts.iter().filter(|v| !v.pass).map(|v| v.name.as_str()).collect()
    }

    /// Re-derives the verdicts from the stored config and measurements.
    pub fn reevaluate(&self) -> Result<Vec<Verdict>> {
        let cfg = ExperimentConfig::parse(&self.config, &self.name)?;
        let mut v = evaluate(cfg.experiment, &self.measurements, &cfg.verdict);
        v.push(no_blowup(self.blowup.as_ref()));
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn no_blowup(b: Option<&BlowUp>) -> Verdict {
    let detail = b.map_or_else(|| "evolution stayed SPD and finite".to_string(), |b| b.to_string());
    Verdict { name: "no_blowup".into(), pass: b.is_none(), value: b.map_or(0.0, |b| b.t), threshold: 0.0, detail }
}

/// `$HFLOW_OUTPUT_ROOT`, else `./hflow-out`.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT), PathBuf::from)
}

/// Writes the run directory and fills `record.files`.
pub fn persist(record: &mut RunRecord, outcome: &Outcome, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&record.name);
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for (name, series) in &outcome.series {
        let f = format!("{name}.csv");
        std::fs::write(dir.join(&f), series.to_csv())?;
        files.push(f);
    }
    for (name, csv) in &outcome.tables {
        let f = format!("{name}.csv");
        std::fs::write(dir.join(&f), csv)?;
        files.push(f);
    }
    for (name, field) in &outcome.snapshots {
        let f = format!("{name}.snap");
        save_snapshot(field, &dir.join(&f))?;
        files.push(f);
    }
    files.push("record.json".into());
    record.files = files;
    std::fs::write(dir.join("record.json"), serde_json::to_string_pretty(record)?)?;
    Ok(dir)
}

/// One row of a sweep summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config: String,
    pub name: String,
    pub experiment: String,
    pub status: String,
    pub failed: Vec<String>,
    pub detail: String,
    pub wall_clock_s: f64,
}

impl SummaryRow {
    pub fn from_record(config: &str, r: &RunRecord) -> Self {
        Self {
            config: config.to_string(),
            name: r.name.clone(),
            experiment: r.experiment.clone(),
            status: r.status().label().to_string(),
            failed: r.failed().into_iter().map(String::from).collect(),
            detail: String::new(),
            wall_clock_s: r.wall_clock_s,
        }
    }

    pub fn from_error(config: &str, status: Status, err: &Error) -> Self {
        Self {
            config: config.to_string(),
            name: String::new(),
            experiment: String::new(),
            status: status.label().to_string(),
            failed: Vec::new(),
            detail: err.to_string(),
            wall_clock_s: 0.0,
        }
    }
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `summary.csv` and `summary.json` into `root`.
pub fn write_summary(rows: &[SummaryRow], root: &Path) -> Result<()> {
    std::fs::create_dir_all(root)?;
    let mut csv = String::from("config,name,experiment,status,failed,detail,wall_clock_s\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{:.3}",
            csv_cell(&r.config),
            csv_cell(&r.name),
            r.experiment,
            r.status,
            csv_cell(&r.failed.join(";")),
            csv_cell(&r.detail),
            r.wall_clock_s
        );
    }
    std::fs::write(root.join("summary.csv"), csv)?;
    let by_status: BTreeMap<&str, usize> = rows.iter().fold(BTreeMap::new(), |mut m, r| {
        *m.entry(r.status.as_str()).or_default() += 1;
        m
    });
    let json = serde_json::json!({ "runs": rows, "by_status": by_status });
    std::fs::write(root.join("summary.json"), serde_json::to_string_pretty(&json)?)?;
    Ok(())
}

/// Plain CSV text from a header and rows of numbers.
pub fn table(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}
