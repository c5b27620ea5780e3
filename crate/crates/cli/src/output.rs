//! Per-node CSV files and JSON writers.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{io_err, CliError, CliResult};

/// Writes `node_index,value` rows; `None` entries are skipped.
pub fn write_node_csv(path: &Path, header: &str, values: impl IntoIterator<Item = Option<f64>>) -> CliResult<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node_index", header])?;
    for (i, v) in values.into_iter().enumerate() {
        if let Some(v) = v {
            w.write_record([i.to_string(), format!("{v:e}")])?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads `node_index,value` rows into a vector of length `n`; missing nodes
/// are zero. A non-numeric first row is taken as a header.
pub fn read_node_csv(path: &Path, n: usize) -> CliResult<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut out = vec![0.0; n];
    let mut seen = vec![false; n];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| CliError::Config(format!("{}: row {}: {what}", path.display(), row + 1));
        let (Some(a), Some(b)) = (rec.get(0), rec.get(1)) else {
            return Err(bad("expected node_index,value"));
        };
        let Ok(node) = a.parse::<usize>() else {
            if row == 0 {
                continue;
            }
            return Err(bad("bad node index"));
        };
        let v: f64 = b.parse().map_err(|_| bad("bad value"))?;
        if node >= n {
            return Err(bad(&format!("node {node} out of range for {n} nodes")));
        }
        if seen[node] {
            return Err(bad(&format!("node {node} listed twice")));
        }
        seen[node] = true;
        out[node] = v;
    }
    Ok(out)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(io_err(path))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/u.csv");
        write_node_csv(&path, "value", [Some(1.5), None, Some(-0.25)]).unwrap();
        assert_eq!(read_node_csv(&path, 3).unwrap(), vec![1.5, 0.0, -0.25]);
        assert!(read_node_csv(&path, 2).is_err());
    }

    #[test]
    fn duplicate_nodes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "0,1\n0,2\n").unwrap();
        assert!(matches!(read_node_csv(&path, 3), Err(CliError::Config(_))));
    }
}
