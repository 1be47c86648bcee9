//! File formats: matrices, states, trajectories, event logs and result tables.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::State;
use crate::stochastic::EventLog;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field(field: &str, message: impl Into<String>) -> IoError {
    IoError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|e| IoError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    n: usize,
    v: Vec<f64>,
}

/// `{"n": N, "v": [row-major entries]}`.
pub fn parse_matrix_json(text: &str) -> Result<DMatrix<f64>, IoError> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| IoError::Parse {
        what: "matrix JSON".into(),
        message: e.to_string(),
    })?;
    let n = raw
        .get("n")
        .ok_or_else(|| field("n", "missing"))?
        .as_u64()
        .ok_or_else(|| field("n", "expected a positive integer"))? as usize;
    if n == 0 {
        return Err(field("n", "expected a positive integer"));
    }
    let v = raw
        .get("v")
        .ok_or_else(|| field("v", "missing"))?
        .as_array()
        .ok_or_else(|| field("v", "expected an array of numbers"))?;
    if v.len() != n * n {
        return Err(field("v", format!("expected {} entries, got {}", n * n, v.len())));
    }
    let entries = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64()
                .ok_or_else(|| field("v", format!("entry {i} is not a number")))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(DMatrix::from_row_slice(n, n, &entries))
}

pub fn matrix_to_json(m: &DMatrix<f64>) -> String {
    let v: Vec<f64> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect();
    serde_json::to_string(&MatrixJson { n: m.nrows(), v }).expect("serializable")
}

/// `N` rows of `N` comma-separated numbers, no header.
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| IoError::Parse {
            what: "matrix CSV".into(),
            message: e.to_string(),
        })?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().map_err(|_| IoError::Parse {
                    what: "matrix CSV".into(),
                    message: format!("row {}, column {}: `{cell}` is not a number", r + 1, c + 1),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(IoError::Parse {
            what: "matrix CSV".into(),
            message: "no rows".into(),
        });
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(IoError::Parse {
            what: "matrix CSV".into(),
            message: format!("row {} has {} entries, expected {n}", i + 1, row.len()),
        });
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

/// Matrix file by extension: `.csv` is CSV, anything else JSON.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, IoError> {
    let text = read_text(path)?;
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        parse_matrix_csv(&text)
    } else {
        parse_matrix_json(&text)
    }
}

/// `{"q": [...], "p": [...]}`.
pub fn parse_state_json(text: &str) -> Result<State, IoError> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| IoError::Parse {
        what: "state JSON".into(),
        message: e.to_string(),
    })?;
    let vec_of = |name: &str| -> Result<Vec<f64>, IoError> {
        raw.get(name)
            .ok_or_else(|| field(name, "missing"))?
            .as_array()
            .ok_or_else(|| field(name, "expected an array of numbers"))?
            .iter()
            .enumerate()
            .map(|(i, x)| {
                x.as_f64()
                    .ok_or_else(|| field(name, format!("entry {i} is not a number")))
            })
            .collect()
    };
    let (q, p) = (vec_of("q")?, vec_of("p")?);
    State::new(q, p).map_err(|e| field("p", e.to_string()))
}

pub fn read_state(path: &Path) -> Result<State, IoError> {
    parse_state_json(&read_text(path)?)
}

pub fn state_to_json(s: &State) -> String {
    serde_json::to_string(s).expect("serializable")
}

/// Header `t,q1..qN,p1..pN`.
pub fn trajectory_header(n: usize) -> String {
    let mut h = String::from("t");
    for i in 1..=n {
        let _ = write!(h, ",q{i}");
    }
    for i in 1..=n {
        let _ = write!(h, ",p{i}");
    }
    h.push('\n');
    h
}

pub fn trajectory_row(t: f64, s: &State) -> String {
    let mut row = fmt_f64(t);
    for x in s.q.iter().chain(&s.p) {
        row.push(',');
        row.push_str(&fmt_f64(*x));
    }
    row.push('\n');
    row
}

/// Rows `t_m,tau_m`.
pub fn events_to_csv(log: &EventLog) -> String {
    let mut out = String::from("t_m,tau_m\n");
    for (t, tau) in log.times.iter().zip(&log.taus) {
        let _ = writeln!(out, "{},{}", fmt_f64(*t), fmt_f64(*tau));
    }
    out
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    #[serde(rename = "T")]
    pub t: f64,
    pub observable: String,
    pub estimate: f64,
    pub reference: f64,
    pub abs_error: f64,
}

pub const RESULTS_HEADER: &str = "seed,T,observable,estimate,reference,abs_error\n";

pub fn results_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.seed,
            fmt_f64(r.t),
            r.observable,
            fmt_f64(r.estimate),
            fmt_f64(r.reference),
            fmt_f64(r.abs_error)
        );
    }
    out
}

/// Parse a results table written by [`results_to_csv`].
pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>, IoError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e| IoError::Parse {
                what: "results CSV".into(),
                message: e.to_string(),
            })
        })
        .collect()
}
