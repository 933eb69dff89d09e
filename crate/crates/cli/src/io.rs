//! CSV, TOML and JSON reading and writing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use npn_quilt::{EdgeSet, PairMask};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Writes into one output directory and remembers what was written.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Shortest round-tripping decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn matrix_csv(names: &[String], m: &DMatrix<f64>) -> Vec<u8> {
    csv_bytes(names, (0..m.nrows()).map(|i| m.row(i).iter().map(|&v| fmt_f64(v)).collect()))
}

pub fn mask_csv(names: &[String], mask: &PairMask) -> Vec<u8> {
    let p = mask.p();
    csv_bytes(
        names,
        (0..p).map(|i| (0..p).map(|j| mask.is_observed(i, j).to_string()).collect()),
    )
}

/// Edge list with 1-based indices and names; `region` says whether the pair
/// was ever observed jointly.
pub fn edges_csv(names: &[String], edges: &EdgeSet, mask: Option<&PairMask>) -> Vec<u8> {
    let mut header: Vec<String> = ["i", "j", "name_i", "name_j"].map(String::from).to_vec();
    if mask.is_some() {
        header.push("region".into());
    }
    csv_bytes(
        &header,
        edges.iter().map(|(i, j)| {
            let mut row = vec![(i + 1).to_string(), (j + 1).to_string(), names[i].clone(), names[j].clone()];
            if let Some(m) = mask {
                row.push(if m.is_observed(i, j) { "observed" } else { "unobserved" }.into());
            }
            row
        }),
    )
}

pub fn rows_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    csv_bytes(&header, rows)
}

fn parse_number(path: &Path, row: usize, col: usize, field: &str) -> CliResult<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| CliError::input(path, format!("row {row}, column {col}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::input(path, format!("row {row}, column {col}: non-finite value")));
    }
    Ok(v)
}

/// Headered numeric CSV: column names and the `rows × columns` matrix.
pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, DMatrix<f64>)> {
    let mut reader = open_csv(path)?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::input(path, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(path, e.to_string()))?;
        if record.len() != names.len() {
            return Err(CliError::input(path, format!("row {} has {} fields, expected {}", r + 1, record.len(), names.len())));
        }
        for (c, field) in record.iter().enumerate() {
            values.push(parse_number(path, r + 1, c + 1, field)?);
        }
        rows += 1;
    }
    Ok((names.clone(), DMatrix::from_row_slice(rows, names.len(), &values)))
}

/// Edge list with 1-based `i`, `j` columns.
pub fn read_edges(path: &Path, p: usize) -> CliResult<EdgeSet> {
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(|e| CliError::input(path, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::input(path, format!("missing column `{name}`")))
    };
    let (ci, cj) = (col("i")?, col("j")?);
    let mut edges = EdgeSet::new(p);
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(path, e.to_string()))?;
        let index = |c: usize| -> CliResult<usize> {
            let raw = record.get(c).unwrap_or("").trim();
            match raw.parse::<usize>() {
                Ok(k) if (1..=p).contains(&k) => Ok(k - 1),
                _ => Err(CliError::input(path, format!("row {}: index `{raw}` outside 1..={p}", r + 1))),
            }
        };
        let (i, j) = (index(ci)?, index(cj)?);
        edges.insert(i, j).map_err(|e| CliError::input(path, e.to_string()))?;
    }
    Ok(edges)
}

fn open_csv(path: &Path) -> CliResult<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// SHA-256 of the resolved config serialized as JSON.
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &'static str, config: &C, seed: u64) -> CliResult<Self> {
        let json = serde_json::to_vec(config).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self {
            tool: "npnquilt",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: sha256_hex(&json),
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn finish(mut self, out: &mut OutputDir) -> CliResult<()> {
        self.outputs = out.written().to_vec();
        out.write_json("manifest.json", &self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -0.1, 1e-300, 0.3333333333333333]);
        let path = dir.path().join("m.csv");
        fs::write(&path, matrix_csv(&names, &m)).unwrap();
        let (n, back) = read_matrix(&path).unwrap();
        assert_eq!(n, names);
        assert_eq!(back, m);
    }

    #[test]
    fn nan_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "a,b\n1,NaN\n").unwrap();
        assert_eq!(read_matrix(&path).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn edges_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<String> = (1..=4).map(|i| format!("V{i}")).collect();
        let e = EdgeSet::from_pairs(4, [(0, 3), (1, 2)]).unwrap();
        let path = dir.path().join("e.csv");
        fs::write(&path, edges_csv(&names, &e, None)).unwrap();
        assert_eq!(read_edges(&path, 4).unwrap(), e);
        assert!(read_edges(&path, 3).is_err());
    }
}
