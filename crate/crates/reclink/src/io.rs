//! CSV and JSON file formats.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use reclink_core::mixture::LinkedFile;
use reclink_core::records::{RecordFile, Value};
use reclink_core::simgen::{Scenario1Config, Scenario1Data, Scenario2Config, Scenario2Data};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

pub const FILE_A: &str = "file_a.csv";
pub const FILE_B: &str = "file_b.csv";
pub const LINKED: &str = "linked.csv";
pub const TRUTH: &str = "truth.json";

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|()| w.flush()).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_records(path: &Path, file: &RecordFile) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(file.fields())?;
    for row in file.rows() {
        w.write_record(row.iter().map(Value::to_string))?;
    }
    w.flush().map_err(io_err(path))
}

/// A record file with a header row; empty cells are missing values.
pub fn read_records(path: &Path) -> Result<RecordFile> {
    let mut r = csv::Reader::from_path(path)?;
    let fields = r.headers()?.iter().map(String::from).collect();
    let mut file = RecordFile::new(fields)?;
    for row in r.records() {
        file.push(row?.iter().map(Value::parse).collect())?;
    }
    Ok(file)
}

/// Ground truth written next to generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub scenario: u8,
    pub seed: u64,
    pub beta_true: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario1: Option<Scenario1Config>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario2: Option<Scenario2Config>,
    /// `(row in A, row in B)` pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub true_links: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors_a: Vec<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors_b: Vec<bool>,
    /// Rows of the linked file whose outcome belongs to the row.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub correct: Vec<bool>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LinkedRow {
    block: usize,
    y: f64,
    x: f64,
}

#[derive(Debug, Clone)]
pub enum Dataset {
    One(Scenario1Data, Scenario1Config),
    Two(Scenario2Data, Scenario2Config),
}

impl Dataset {
    pub fn seed(&self) -> u64 {
        match self {
            Dataset::One(_, c) => c.seed,
            Dataset::Two(_, c) => c.seed,
        }
    }
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let truth = match data {
        Dataset::One(d, cfg) => {
            write_records(&dir.join(FILE_A), &d.file_a)?;
            write_records(&dir.join(FILE_B), &d.file_b)?;
            TruthSidecar {
                scenario: 1,
                seed: cfg.seed,
                beta_true: d.beta_true,
                scenario1: Some(cfg.clone()),
                scenario2: None,
                true_links: d.true_links.clone(),
                errors_a: d.errors_a.clone(),
                errors_b: d.errors_b.clone(),
                correct: Vec::new(),
                diagnostics: d.diagnostics.clone(),
            }
        }
        Dataset::Two(d, cfg) => {
            let f = &d.file;
            let rows: Vec<LinkedRow> =
                (0..f.len()).map(|i| LinkedRow { block: f.block[i] + 1, y: f.y[i], x: f.x[i] }).collect();
            write_csv(&dir.join(LINKED), &rows)?;
            TruthSidecar {
                scenario: 2,
                seed: cfg.seed,
                beta_true: d.beta_true,
                scenario1: None,
                scenario2: Some(cfg.clone()),
                true_links: Vec::new(),
                errors_a: Vec::new(),
                errors_b: Vec::new(),
                correct: f.truth.clone().unwrap_or_default(),
                diagnostics: d.diagnostics.clone(),
            }
        }
    };
    write_json(&dir.join(TRUTH), &truth)
}

/// Read a directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let truth: TruthSidecar = read_json(&dir.join(TRUTH))?;
    match (truth.scenario, truth.scenario1, truth.scenario2) {
        (1, Some(cfg), None) => {
            let data = Scenario1Data {
                file_a: read_records(&dir.join(FILE_A))?,
                file_b: read_records(&dir.join(FILE_B))?,
                true_links: truth.true_links,
                errors_a: truth.errors_a,
                errors_b: truth.errors_b,
                beta_true: truth.beta_true,
                diagnostics: truth.diagnostics,
            };
            Ok(Dataset::One(data, cfg))
        }
        (2, None, Some(cfg)) => {
            let rows: Vec<LinkedRow> = read_csv(&dir.join(LINKED))?;
            if rows.iter().any(|r| r.block == 0) {
                return Err(CliError::Input("block ids in the linked file start at 1".into()));
            }
            let correct = (!truth.correct.is_empty()).then_some(truth.correct);
            let file = LinkedFile::new(
                rows.iter().map(|r| r.y).collect(),
                rows.iter().map(|r| r.x).collect(),
                rows.iter().map(|r| r.block - 1).collect(),
                correct,
            )?;
            Ok(Dataset::Two(Scenario2Data { file, beta_true: truth.beta_true, diagnostics: truth.diagnostics }, cfg))
        }
        _ => Err(CliError::Input(format!("{}: inconsistent truth sidecar", dir.join(TRUTH).display()))),
    }
}

/// One entry of a posterior link-probability matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTriple {
    pub block: usize,
    pub a_row: usize,
    pub b_row: usize,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRow {
    pub a_row: usize,
    pub b_row: usize,
}

/// Partner of an A record in one posterior draw; empty when unlinked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample: usize,
    pub block: usize,
    pub a_row: usize,
    pub b_row: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub method: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub diagnostics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPosteriorRow {
    pub row: usize,
    pub block: usize,
    pub posterior: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use reclink_core::simgen::{gen_scenario1, gen_scenario2};

    #[test]
    fn datasets_survive_a_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Scenario1Config { n_a: 30, n_b: 45, n_blocks: 3, seed: 9, ..Default::default() };
        let d1 = gen_scenario1(&cfg).unwrap();
        write_dataset(dir.path(), &Dataset::One(d1.clone(), cfg.clone())).unwrap();
        let Dataset::One(back, cfg_back) = read_dataset(dir.path()).unwrap() else { panic!() };
        assert_eq!(back.file_a, d1.file_a);
        assert_eq!(back.file_b, d1.file_b);
        assert_eq!(back.true_links, d1.true_links);
        assert_eq!(cfg_back, cfg);

        let dir = tempfile::tempdir().unwrap();
        let cfg = Scenario2Config { seed: 9, ..Default::default() };
        let d2 = gen_scenario2(&cfg).unwrap();
        write_dataset(dir.path(), &Dataset::Two(d2.clone(), cfg)).unwrap();
        let Dataset::Two(back, _) = read_dataset(dir.path()).unwrap() else { panic!() };
        assert_eq!(back.file, d2.file);
    }
}
