//! CSV ingestion with role-to-column mapping.
//!
//! Column lists accept comma-separated names and numeric ranges like
//! `x1..x200`. Headers are required; missing or non-numeric cells are
//! rejected with the offending column and line.

use anyhow::{anyhow, bail, Context};
use ndarray::{Array1, Array2};
use std::path::Path;

use identest::ml::Dataset;

/// Expands a column spec: `a,b,x1..x4` becomes `[a, b, x1, x2, x3, x4]`.
pub fn expand_columns(spec: &str) -> anyhow::Result<Vec<String>> {
    let mut out = Vec::new();
    for token in spec.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if let Some((left, right)) = token.split_once("..") {
            let (lp, ln) = split_numeric_suffix(left)
                .ok_or_else(|| anyhow!("range `{token}`: `{left}` lacks a numeric suffix"))?;
            let (rp, rn) = split_numeric_suffix(right)
                .ok_or_else(|| anyhow!("range `{token}`: `{right}` lacks a numeric suffix"))?;
            if lp != rp {
                bail!("range `{token}` mixes prefixes `{lp}` and `{rp}`");
            }
            if rn < ln {
                bail!("range `{token}` runs backwards");
            }
            for i in ln..=rn {
                out.push(format!("{lp}{i}"));
            }
        } else {
            out.push(token.to_string());
        }
    }
    if out.is_empty() {
        bail!("empty column list `{spec}`");
    }
    Ok(out)
}

fn split_numeric_suffix(s: &str) -> Option<(&str, usize)> {
    let digits = s.chars().rev().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let (prefix, num) = s.split_at(s.len() - digits);
    num.parse().ok().map(|n| (prefix, n))
}

/// Role-to-column mapping for tabular ingestion.
pub struct ColumnMap {
    pub y: String,
    pub d: String,
    pub m: String,
    pub z1: Vec<String>,
    pub z2: Vec<String>,
    pub x: Vec<String>,
    pub w: Vec<String>,
}

/// Loads a CSV into a dataset under the given mapping.
pub fn load_csv(path: &Path, map: &ColumnMap) -> anyhow::Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = reader
        .headers()
        .context("reading CSV header")?
        .iter()
        .map(|s| s.to_string())
        .collect();

    let locate = |name: &str| -> anyhow::Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("column `{name}` not found in {}", path.display()))
    };
    let locate_all = |names: &[String]| -> anyhow::Result<Vec<usize>> {
        names.iter().map(|n| locate(n)).collect()
    };

    let y_col = locate(&map.y)?;
    let d_col = locate(&map.d)?;
    let m_col = locate(&map.m)?;
    let z1_cols = locate_all(&map.z1)?;
    let z2_cols = locate_all(&map.z2)?;
    let x_cols = locate_all(&map.x)?;
    let w_cols = locate_all(&map.w)?;
    if z1_cols.is_empty() || z2_cols.is_empty() {
        bail!("both instrument blocks must name at least one column");
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading line {}", idx + 2))?;
        let mut row = Vec::with_capacity(header.len());
        for (j, field) in record.iter().enumerate() {
            if field.is_empty() {
                bail!(
                    "line {}, column `{}`: missing value (complete cases required)",
                    idx + 2,
                    header.get(j).map(String::as_str).unwrap_or("?")
                );
            }
            let v: f64 = field.parse().map_err(|_| {
                anyhow!(
                    "line {}, column `{}`: cannot parse `{field}` as a number",
                    idx + 2,
                    header.get(j).map(String::as_str).unwrap_or("?")
                )
            })?;
            row.push(v);
        }
        if row.len() != header.len() {
            bail!("line {}: {} fields, expected {}", idx + 2, row.len(), header.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{} has a header but no data rows", path.display());
    }
    let n = rows.len();
    let pick1 = |c: usize| Array1::from_iter(rows.iter().map(|r| r[c]));
    let pick2 = |cols: &[usize]| {
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

    #[test]
    fn ranges_expand() {
        assert_eq!(
            expand_columns("x1..x3").unwrap(),
            vec!["x1", "x2", "x3"]
        );
        assert_eq!(
            expand_columns("age,inc2..inc4").unwrap(),
            vec!["age", "inc2", "inc3", "inc4"]
        );
        assert!(expand_columns("x3..x1").is_err());
        assert!(expand_columns("x1..y3").is_err());
        assert!(expand_columns("a..b").is_err());
        assert!(expand_columns("").is_err());
    }
}
