//! Report persistence: JSON-lines record streams with a CSV projection, and
//! binary matrix dumps with a JSON sidecar. Files are written atomically.

use crate::error::CliError;
use capdirac::{CMat, C64};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Ordered record stream. The first record is the header; rows with
/// `"record": "row"` form the CSV projection.
#[derive(Debug, Default)]
pub struct Report {
    pub records: Vec<Map<String, Value>>,
}

impl Report {
    pub fn push(&mut self, kind: &str, value: Value) {
        let mut map = match value {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        map.insert("record".into(), Value::String(kind.into()));
        self.records.push(map);
    }

    pub fn rows(&self) -> impl Iterator<Item = &Map<String, Value>> {
        self.records.iter().filter(|r| r.get("record").and_then(Value::as_str) == Some("row"))
    }

    /// JSON lines preceded by a `#` comment line carrying the timestamp.
    pub fn to_jsonl(&self, timestamp: &str) -> String {
        let mut out = format!("# capdirac {} {timestamp}\n", env!("CARGO_PKG_VERSION"));
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut columns: Vec<String> = Vec::new();
        for r in self.rows() {
            for k in r.keys() {
                if k != "record" && !columns.contains(k) {
                    columns.push(k.clone());
                }
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&columns).map_err(|e| CliError::Solver(e.to_string()))?;
        for r in self.rows() {
            let cells: Vec<String> = columns.iter().map(|c| r.get(c).map_or(String::new(), cell)).collect();
            w.write_record(&cells).map_err(|e| CliError::Solver(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Solver(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, dir: &Path, stem: &str, timestamp: &str) -> Result<(PathBuf, PathBuf), CliError> {
        fs::create_dir_all(dir)?;
        let jsonl = dir.join(format!("{stem}.jsonl"));
        let csv = dir.join(format!("{stem}.csv"));
        write_atomic(&jsonl, self.to_jsonl(timestamp).as_bytes())?;
        write_atomic(&csv, self.to_csv()?.as_bytes())?;
        Ok((jsonl, csv))
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses a JSON-lines report, skipping `#` comment lines.
pub fn read_jsonl(path: &Path) -> Result<Vec<Value>, CliError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Solver(format!("{}: {e}", path.display()))))
        .collect()
}

/// Header and rows of a CSV projection.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Solver(e.to_string()))?;
    let header = r.headers().map_err(|e| CliError::Solver(e.to_string()))?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Solver(e.to_string()))?;
    Ok((header, rows))
}

/// Sidecar metadata for a binary matrix dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub rows: usize,
    pub cols: usize,
    /// Always "row-major complex128 little-endian".
    pub layout: String,
    pub operator: String,
    pub hbar: f64,
    pub theta_im: Option<f64>,
    pub grid_half_length: f64,
    pub grid_nodes: usize,
    pub spinor_dim: usize,
    pub model_hash: String,
}

pub const DUMP_LAYOUT: &str = "row-major complex128 little-endian";

/// Writes `<stem>.bin` (re, im pairs as f64 LE, row-major) and `<stem>.json`.
pub fn write_dump(dir: &Path, stem: &str, m: &CMat, meta: &DumpMeta) -> Result<(PathBuf, PathBuf), CliError> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(16 * m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            bytes.extend_from_slice(&z.re.to_le_bytes());
            bytes.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    let bin = dir.join(format!("{stem}.bin"));
    let side = dir.join(format!("{stem}.json"));
    write_atomic(&bin, &bytes)?;
    let json = serde_json::to_string_pretty(meta).expect("metadata serializes") + "\n";
    write_atomic(&side, json.as_bytes())?;
    Ok((bin, side))
}

pub fn read_dump(bin: &Path, sidecar: &Path) -> Result<(CMat, DumpMeta), CliError> {
    let meta: DumpMeta = serde_json::from_str(&fs::read_to_string(sidecar)?).map_err(|e| CliError::Solver(e.to_string()))?;
    if meta.layout != DUMP_LAYOUT {
        return Err(CliError::Solver(format!("unknown dump layout {:?}", meta.layout)));
    }
    let bytes = fs::read(bin)?;
    if bytes.len() != 16 * meta.rows * meta.cols {
        return Err(CliError::Solver(format!("dump has {} bytes, expected {}", bytes.len(), 16 * meta.rows * meta.cols)));
    }
    let f = |k: usize| f64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().expect("8-byte chunk"));
    let m = CMat::from_fn(meta.rows, meta.cols, |i, j| {
        let k = 2 * (i * meta.cols + j);
        C64::new(f(k), f(k + 1))
    });
    Ok((m, meta))
}
