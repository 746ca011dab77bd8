//! File formats: CSV click data, JSON state and report files, and
//! plot-ready CSV tables. Every write goes to a temporary file in the target
//! directory and is renamed into place.
//!
//! Click-data schemas (header row required, columns in this order):
//!
//! | data            | columns                          |
//! |-----------------|----------------------------------|
//! | single mode     | `eta,runs,off_counts`            |
//! | two mode        | `eta,runs,n00,n01,n10`           |
//! | phase scan      | `phase,eta,runs,off_counts`      |
//!
//! Floats are written with 17 significant digits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detection::{BipartiteClickData, BipartiteRecord, OffFrequencyData, OffRecord};
use crate::em::ReconstructionReport;
use crate::error::{Error, Result};
use crate::full_rho::{group_phase_records, FullRhoReport, PhaseBlock};
use crate::states::{DensityMatrix, JointPhotonDistribution, PhotonDistribution};

pub const SINGLE_MODE_HEADER: [&str; 3] = ["eta", "runs", "off_counts"];
pub const BIPARTITE_HEADER: [&str; 5] = ["eta", "runs", "n00", "n01", "n10"];
pub const PHASE_SCAN_HEADER: [&str; 4] = ["phase", "eta", "runs", "off_counts"];

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes through a temporary sibling file that replaces `path` on success.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(header).map_err(csv_io)?;
        for row in rows {
            csv.write_record(&row).map_err(csv_io)?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Parsed CSV body: each row with its 1-based line number.
struct Table {
    path: String,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_table(path: &Path, header: &[&str]) -> Result<Table> {
    let shown = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: shown.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let found = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            1,
            format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        rows.push((line, record));
    }
    Ok(Table { path: shown, rows })
}

impl Table {
    fn field<T: FromStr>(
        &self,
        line: usize,
        record: &csv::StringRecord,
        col: usize,
        name: &str,
    ) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = record.get(col).ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line,
            message: format!("missing column `{name}`"),
        })?;
        raw.parse().map_err(|e| Error::Parse {
            path: self.path.clone(),
            line,
            message: format!("column `{name}`: cannot parse `{raw}`: {e}"),
        })
    }

    fn lines(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.0).collect()
    }
}

/// Attaches the source line to a record-level validation failure.
fn with_lines<T>(result: Result<T>, path: &str, lines: &[usize]) -> Result<T> {
    result.map_err(|e| match e {
        Error::Validation { record, message } => Error::Validation {
            record,
            message: format!(
                "{path} line {}: {message}",
                lines.get(record).copied().unwrap_or(0)
            ),
        },
        other => other,
    })
}

fn parse_off_rows(table: &Table, offset: usize) -> Result<Vec<OffRecord>> {
    table
        .rows
        .iter()
        .map(|(line, r)| {
            Ok(OffRecord {
                eta: table.field(*line, r, offset, "eta")?,
                runs: table.field(*line, r, offset + 1, "runs")?,
                off_counts: table.field(*line, r, offset + 2, "off_counts")?,
            })
        })
        .collect()
}

pub fn load_off_data(path: &Path) -> Result<OffFrequencyData> {
    let table = read_table(path, &SINGLE_MODE_HEADER)?;
    let records = parse_off_rows(&table, 0)?;
    with_lines(OffFrequencyData::new(records), &table.path, &table.lines())
}

pub fn save_off_data(path: &Path, data: &OffFrequencyData) -> Result<()> {
    let rows = data
        .records()
        .iter()
        .map(|r| vec![fmt_f64(r.eta), r.runs.to_string(), r.off_counts.to_string()])
        .collect();
    write_rows(path, &SINGLE_MODE_HEADER, rows)
}

pub fn load_bipartite_data(path: &Path) -> Result<BipartiteClickData> {
    let table = read_table(path, &BIPARTITE_HEADER)?;
    let records = table
        .rows
        .iter()
        .map(|(line, r)| {
            Ok(BipartiteRecord {
                eta: table.field(*line, r, 0, "eta")?,
                runs: table.field(*line, r, 1, "runs")?,
                n00: table.field(*line, r, 2, "n00")?,
                n01: table.field(*line, r, 3, "n01")?,
                n10: table.field(*line, r, 4, "n10")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    with_lines(
        BipartiteClickData::new(records),
        &table.path,
        &table.lines(),
    )
}

pub fn save_bipartite_data(path: &Path, data: &BipartiteClickData) -> Result<()> {
    let rows = data
        .records()
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.eta),
                r.runs.to_string(),
                r.n00.to_string(),
                r.n01.to_string(),
                r.n10.to_string(),
            ]
        })
        .collect();
    write_rows(path, &BIPARTITE_HEADER, rows)
}

/// Loads a phase scan from one CSV file or from every `*.csv` file of a
/// directory (read in name order). Blocks come back sorted by phase.
pub fn load_phase_scan(path: &Path) -> Result<Vec<PhaseBlock>> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!(
                "no .csv files in phase-scan directory {}",
                path.display()
            )));
        }
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut rows = Vec::new();
    for file in &files {
        let table = read_table(file, &PHASE_SCAN_HEADER)?;
        let records = parse_off_rows(&table, 1)?;
        with_lines(
            OffFrequencyData::new(records.clone()),
            &table.path,
            &table.lines(),
        )?;
        for ((line, r), record) in table.rows.iter().zip(records) {
            rows.push((table.field(*line, r, 0, "phase")?, record));
        }
    }
    let mut blocks = group_phase_records(rows)?;
    blocks.sort_by(|a, b| a.phase.total_cmp(&b.phase));
    Ok(blocks)
}

pub fn save_phase_scan(path: &Path, blocks: &[PhaseBlock]) -> Result<()> {
    let rows = blocks
        .iter()
        .flat_map(|b| {
            b.data.records().iter().map(move |r| {
                vec![
                    fmt_f64(b.phase),
                    fmt_f64(r.eta),
                    r.runs.to_string(),
                    r.off_counts.to_string(),
                ]
            })
        })
        .collect();
    write_rows(path, &PHASE_SCAN_HEADER, rows)
}

/// JSON state file, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "snake_case")]
pub enum StateFile {
    PhotonDistribution(PhotonDistribution),
    JointPhotonDistribution(JointPhotonDistribution),
    DensityMatrix(DensityMatrix),
}

/// JSON report file, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "report", rename_all = "snake_case")]
pub enum ReportFile {
    SingleMode(ReconstructionReport<PhotonDistribution>),
    Bipartite(ReconstructionReport<JointPhotonDistribution>),
    FullRho(FullRhoReport),
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// `iteration,epsilon,loglik,fidelity`, one row per recorded iteration
/// (every iteration at the default stride). `fidelity` is blank without a
/// reference.
pub fn write_trace_csv<T>(path: &Path, report: &ReconstructionReport<T>) -> Result<()> {
    let rows = (0..report.trace_iterations.len())
        .map(|i| {
            vec![
                report.trace_iterations[i].to_string(),
                fmt_f64(report.epsilon_trace[i]),
                fmt_f64(report.loglik_trace[i]),
                opt(report.fidelity_trace.as_ref().map(|t| t[i])),
            ]
        })
        .collect();
    write_rows(path, &["iteration", "epsilon", "loglik", "fidelity"], rows)
}

/// `n,prob,sigma2`; `sigma2` is blank where the variance is unbounded.
pub fn write_distribution_csv(
    path: &Path,
    dist: &PhotonDistribution,
    variances: &[Option<f64>],
) -> Result<()> {
    let rows = dist
        .probs()
        .iter()
        .enumerate()
        .map(|(n, p)| {
            vec![
                n.to_string(),
                fmt_f64(*p),
                opt(variances.get(n).copied().flatten()),
            ]
        })
        .collect();
    write_rows(path, &["n", "prob", "sigma2"], rows)
}

/// `p,n,k,prob,sigma2` with the one-based flat index `p = 1 + k + n (N+1)`.
pub fn write_joint_csv(
    path: &Path,
    joint: &JointPhotonDistribution,
    variances: &[Option<f64>],
) -> Result<()> {
    let dim = joint.truncation() + 1;
    let rows = joint
        .flat()
        .iter()
        .enumerate()
        .map(|(i, q)| {
            vec![
                (i + 1).to_string(),
                (i / dim).to_string(),
                (i % dim).to_string(),
                fmt_f64(*q),
                opt(variances.get(i).copied().flatten()),
            ]
        })
        .collect();
    write_rows(path, &["p", "n", "k", "prob", "sigma2"], rows)
}

/// `n,m,value` in row-major order, for heat maps.
pub fn write_grid_csv(path: &Path, grid: &DMatrix<f64>) -> Result<()> {
    let rows = (0..grid.nrows())
        .flat_map(|n| (0..grid.ncols()).map(move |m| (n, m)))
        .map(|(n, m)| vec![n.to_string(), m.to_string(), fmt_f64(grid[(n, m)])])
        .collect();
    write_rows(path, &["n", "m", "value"], rows)
}

/// `n,m,re,im` of a density matrix.
pub fn write_density_matrix_csv(path: &Path, rho: &DensityMatrix) -> Result<()> {
    let dim = rho.dim();
    let rows = (0..dim)
        .flat_map(|n| (0..dim).map(move |m| (n, m)))
        .map(|(n, m)| {
            let z = rho.get(n, m);
            vec![n.to_string(), m.to_string(), fmt_f64(z.re), fmt_f64(z.im)]
        })
        .collect();
    write_rows(path, &["n", "m", "re", "im"], rows)
}

/// `eta,frequency,model`: measured off frequencies next to the model curve.
pub fn write_off_frequency_csv(path: &Path, data: &OffFrequencyData, model: &[f64]) -> Result<()> {
    if model.len() != data.len() {
        return Err(Error::domain("one model value per record is required"));
    }
    let rows = data
        .records()
        .iter()
        .zip(model)
        .map(|(r, m)| vec![fmt_f64(r.eta), fmt_f64(r.frequency()), fmt_f64(*m)])
        .collect();
    write_rows(path, &["eta", "frequency", "model"], rows)
}
