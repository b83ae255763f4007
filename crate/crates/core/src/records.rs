//! Machine-readable output: line-delimited JSON records and the canonical
//! dataset CSV layout.
//!
//! Every result type that a command can print serializes to a single JSON
//! line, and [`parse_line`] is the matching ingestion parser, so
//! `--format records` output round-trips. Dataset dumps use the header
//! `y,d,m,z1,z2,x1..xp` (instrument and covariate blocks widen with
//! numbered suffixes when multi-column).

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::ml::Dataset;
use crate::{Error, Result};

/// Serializes one record as a single JSON line.
pub fn to_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Parse(format!("serialize record: {e}")))
}

/// Parses one JSON record line.
pub fn parse_line<T: DeserializeOwned>(line: &str) -> Result<T> {
    serde_json::from_str(line.trim()).map_err(|e| Error::Parse(format!("parse record: {e}")))
}

fn block_headers(name: &str, width: usize) -> Vec<String> {
    if width == 1 {
        vec![name.to_string()]
    } else {
        (1..=width).map(|i| format!("{name}_{i}")).collect()
    }
}

/// Writes a dataset as CSV with the canonical column layout.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["y".to_string(), "d".to_string(), "m".to_string()];
    header.extend(block_headers("z1", data.z1.ncols()));
    header.extend(block_headers("z2", data.z2.ncols()));
    header.extend((1..=data.x.ncols()).map(|i| format!("x{i}")));
    if let Some(w) = &data.w {
        header.extend((1..=w.ncols()).map(|i| format!("w{i}")));
    }
    writeln!(out, "{}", header.join(","))?;
    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        fields.clear();
        fields.push(data.y[i].to_string());
        fields.push(data.d[i].to_string());
        fields.push(data.m[i].to_string());
        for c in 0..data.z1.ncols() {
            fields.push(data.z1[[i, c]].to_string());
        }
        for c in 0..data.z2.ncols() {
            fields.push(data.z2[[i, c]].to_string());
        }
        for c in 0..data.x.ncols() {
            fields.push(data.x[[i, c]].to_string());
        }
        if let Some(w) = &data.w {
            for c in 0..w.ncols() {
                fields.push(w[[i, c]].to_string());
            }
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Reads a CSV written by [`write_dataset_csv`] back into a dataset,
/// inferring block widths from the header.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV file".into()))?;
    let names: Vec<&str> = header.split(',').collect();
    let find_block = |name: &str| -> Vec<usize> {
        let exact: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, n)| **n == name)
            .map(|(i, _)| i)
            .collect();
        if !exact.is_empty() {
            return exact;
        }
        let prefix = format!("{name}_");
        names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.strip_prefix(&prefix).is_some_and(|s| s.parse::<usize>().is_ok()))
            .map(|(i, _)| i)
            .collect()
    };
    let need = |name: &str| -> Result<Vec<usize>> {
        let cols = find_block(name);
        if cols.is_empty() {
            return Err(Error::Parse(format!("missing column `{name}` in CSV header")));
        }
        Ok(cols)
    };
    let y_col = need("y")?[0];
    let d_col = need("d")?[0];
    let m_col = need("m")?[0];
    let z1_cols = need("z1")?;
    let z2_cols = need("z2")?;
    let x_cols: Vec<usize> = {
        let mut cols: Vec<(usize, usize)> = names
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                n.strip_prefix('x')
                    .and_then(|s| s.parse::<usize>().ok())
                    .map(|k| (k, i))
            })
            .collect();
        cols.sort_unstable();
        cols.into_iter().map(|(_, i)| i).collect()
    };
    let w_cols: Vec<usize> = {
        let mut cols: Vec<(usize, usize)> = names
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                n.strip_prefix('w')
                    .and_then(|s| s.parse::<usize>().ok())
                    .map(|k| (k, i))
            })
            .collect();
        cols.sort_unstable();
        cols.into_iter().map(|(_, i)| i).collect()
    };
    if x_cols.is_empty() {
        return Err(Error::Parse("missing covariate columns x1.. in CSV header".into()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(Error::Parse(format!(
                "line {}: {} fields, expected {}",
                lineno + 2,
                fields.len(),
                names.len()
            )));
        }
        let mut row = Vec::with_capacity(fields.len());
        for (f, name) in fields.iter().zip(&names) {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "line {}, column `{name}`: cannot parse `{f}` as a number",
                    lineno + 2
                ))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parse("CSV has a header but no data rows".into()));
    }
    let pick1 = |col: usize| -> Array1<f64> { Array1::from_iter(rows.iter().map(|r| r[col])) };
    let pick2 = |cols: &[usize]| -> Array2<f64> {
        let mut out = Array2::zeros((n, cols.len()));
        for (j, &c) in cols.iter().enumerate() {
            for i in 0..n {
                out[[i, j]] = rows[i][c];
            }
        }
        out
    };
    let data = Dataset {
        y: pick1(y_col),
        d: pick1(d_col),
        m: pick1(m_col),
        z1: pick2(&z1_cols),
        z2: pick2(&z2_cols),
        x: pick2(&x_cols),
        w: if w_cols.is_empty() { None } else { Some(pick2(&w_cols)) },
    };
    data.validate()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{self, DgpConfig};
    use crate::idtest::TestResult;
    use tempfile::tempdir;

    #[test]
    fn record_roundtrip() {
        let r = TestResult {
            theta_hat: 0.01,
            se: 0.002,
            tstat: 5.0,
            pval: 1e-6,
            n: 100,
            component_means: [0.1, 0.2, 0.3],
            zeta_sd: 0.5,
            degenerate: false,
            seed: 7,
            warnings: Vec::new(),
        };
        let line = to_line(&r).unwrap();
        let back: TestResult = parse_line(&line).unwrap();
        assert_eq!(back.theta_hat, r.theta_hat);
        assert_eq!(back.n, r.n);
        assert!(parse_line::<TestResult>("not json").is_err());
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let data = dgp::simulate(&DgpConfig {
            n: 40,
            p: 3,
            seed: 9,
            ..DgpConfig::default()
        })
        .unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset_csv(&data, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("y,d,m,z1,z2,x1,x2,x3\n"));

        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(back.n(), 40);
        assert_eq!(back.y, data.y);
        assert_eq!(back.x, data.x);

        // A second write is byte-identical.
        let path2 = dir.path().join("d2.csv");
        write_dataset_csv(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn csv_errors_are_located() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "y,d,m,z1,z2,x1\n1,0,2,0.5,0.1,abc\n").unwrap();
        let err = read_dataset_csv(&path).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("x1") && msg.contains("line 2"), "{msg}");

        std::fs::write(&path, "y,d,m,z1,x1\n1,0,2,0.5,0.1\n").unwrap();
        assert!(read_dataset_csv(&path).is_err());
    }
}
