//! File formats: graph JSON, samples CSV (header auto-detected), and
//! round-trip-safe float formatting for output CSVs.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;

use dpca_core::{DecomposableGraph, SampleSet};

/// 17 significant digits: enough to round-trip an f64 exactly.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn load_graph(path: &Path) -> Result<DecomposableGraph> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read graph file {}", path.display()))?;
    let graph: DecomposableGraph = serde_json::from_str(&text)
        .with_context(|| format!("invalid graph spec {}", path.display()))?;
    Ok(graph)
}

pub fn save_graph(path: &Path, graph: &DecomposableGraph) -> Result<()> {
    let text = serde_json::to_string_pretty(graph)?;
    fs::write(path, text + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// One sample per row, `p` numeric columns; a non-numeric first row is
/// treated as a header.
pub fn load_samples(path: &Path) -> Result<SampleSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read data file {}", path.display()))?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("malformed CSV at line {}", i + 1))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(row) => {
                if rows.is_empty() {
                    width = row.len();
                } else if row.len() != width {
                    bail!(
                        "data parse error at line {}: expected {} columns, found {}",
                        i + 1,
                        width,
                        row.len()
                    );
                }
                rows.push(row);
            }
            Err(_) if i == 0 => continue, // header row
            Err(_) => {
                let col = record
                    .iter()
                    .position(|f| f.parse::<f64>().is_err())
                    .unwrap_or(0);
                bail!(
                    "data parse error at line {}, column {}: not a number",
                    i + 1,
                    col + 1
                );
            }
        }
    }
    if rows.is_empty() {
        bail!("data file {} contains no samples", path.display());
    }
    let n = rows.len();
    let matrix = DMatrix::from_fn(n, width, |r, c| rows[r][c]);
    Ok(SampleSet::new(matrix)?)
}

pub fn save_samples(path: &Path, data: &DMatrix<f64>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    for r in 0..data.nrows() {
        let row: Vec<String> = (0..data.ncols()).map(|c| fmt(data[(r, c)])).collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
