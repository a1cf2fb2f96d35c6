//! CSV input and JSON checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use fedkm_core::clustering::WeightedDataset;
use fedkm_core::federation::GlobalModel;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("empty input")]
    Empty,
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] serde_json::Error),
    #[error(transparent)]
    Clustering(#[from] fedkm_core::clustering::ClusteringError),
}

/// Points read from a CSV file, with labels if the file had a label column.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub data: WeightedDataset,
    pub labels: Option<Vec<usize>>,
}

pub fn load_csv(path: &Path, labeled: bool) -> Result<LoadedData, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read { path: path.into(), source })?;
    parse_csv(&text, labeled)
}

/// Parses rectangular numeric CSV. The first row is a header if any of its
/// cells is not a number. The last column holds integer labels when
/// `labeled` is set or the header names it `label`. Rows are numbered from 1
/// as they appear in the file.
pub fn parse_csv(text: &str, labeled: bool) -> Result<LoadedData, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| IoError::Parse { row: i + 1, msg: e.to_string() })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        records.push((i + 1, rec.iter().map(str::to_owned).collect::<Vec<_>>()));
    }
    if records.is_empty() {
        return Err(IoError::Empty);
    }
    let mut header: Option<Vec<String>> = None;
    if records[0].1.iter().any(|c| c.parse::<f64>().is_err()) {
        header = Some(records.remove(0).1);
    }
    if records.is_empty() {
        return Err(IoError::Empty);
    }
    let width = records[0].1.len();
    for (row, cells) in &records {
        if cells.len() != width {
            return Err(IoError::Parse { row: *row, msg: format!("expected {width} columns, found {}", cells.len()) });
        }
    }
    if let Some(h) = &header {
        if h.len() != width {
            return Err(IoError::Parse { row: 1, msg: format!("header has {} columns, data has {width}", h.len()) });
        }
    }

    let mut values = Vec::with_capacity(records.len() * width);
    for (row, cells) in &records {
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| IoError::Parse { row: *row, msg: format!("column {}: not a number: {cell:?}", col + 1) })?;
            if !v.is_finite() {
                return Err(IoError::Parse { row: *row, msg: format!("column {}: non-finite value {cell}", col + 1) });
            }
            values.push(v);
        }
    }

    let is_label = |v: f64| v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64;
    let named = header.as_ref().is_some_and(|h| h[width - 1].eq_ignore_ascii_case("label"));
    let has_labels = labeled || named;
    if has_labels {
        if width < 2 {
            return Err(IoError::Parse { row: records[0].0, msg: "label column leaves no coordinates".into() });
        }
        if let Some(r) = (0..records.len()).find(|&r| !is_label(values[r * width + width - 1])) {
            return Err(IoError::Parse { row: records[r].0, msg: "label is not a non-negative integer".into() });
        }
    }

    let (dim, coords, labels) = if has_labels {
        let dim = width - 1;
        let mut coords = Vec::with_capacity(records.len() * dim);
        let mut labels = Vec::with_capacity(records.len());
        for r in values.chunks(width) {
            coords.extend_from_slice(&r[..dim]);
            labels.push(r[dim] as usize);
        }
        (dim, coords, Some(labels))
    } else {
        (width, values, None)
    };
    Ok(LoadedData { data: WeightedDataset::unweighted(dim, coords)?, labels })
}

/// Model plus the scaling that maps raw data into the model's unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub scale: Option<fedkm_core::ScaleTransform>,
    pub model: GlobalModel,
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), IoError> {
    let text = serde_json::to_string(ck)?;
    fs::write(path, text).map_err(|source| IoError::Write { path: path.into(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read { path: path.into(), source })?;
    Ok(serde_json::from_str(&text)?)
}
