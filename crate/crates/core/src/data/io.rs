//! One sequence per file pair: `<stem>.json` holds the header, `<stem>.bin`
//! holds `T*H*W` little-endian f32 values, frame-major then row-major.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{RadarFrame, RadarSequence};
use crate::error::{NowcastError, Result};

pub const DTYPE: &str = "f32le";
pub const UNITS: &str = "mm/h";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    /// [T, H, W]
    pub dims: [usize; 3],
    pub dtype: String,
    pub units: String,
    pub spacing_min: i64,
    pub timestamps: Vec<i64>,
}

fn dataset_err(path: &Path, field: &str, message: impl Into<String>) -> NowcastError {
    NowcastError::Dataset {
        path: path.to_path_buf(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.bin`.
pub fn write_sequence(sequence: &RadarSequence, dir: &Path, stem: &str) -> Result<PathBuf> {
    let (h, w) = sequence.frame_shape().unwrap_or((0, 0));
    let header = DatasetHeader {
        dims: [sequence.len(), h, w],
        dtype: DTYPE.into(),
        units: UNITS.into(),
        spacing_min: sequence.spacing_min(),
        timestamps: sequence.frames().iter().map(RadarFrame::timestamp).collect(),
    };
    let mut payload = Vec::with_capacity(sequence.len() * h * w * 4);
    for frame in sequence.frames() {
        for &v in frame.values().iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::create_dir_all(dir)?;
    let header_path = dir.join(format!("{stem}.json"));
    fs::write(&header_path, serde_json::to_vec_pretty(&header)?)?;
    fs::write(payload_path(&header_path), payload)?;
    Ok(header_path)
}

pub fn read_sequence(header_path: &Path) -> Result<RadarSequence> {
    let text = fs::read_to_string(header_path)?;
    let header: DatasetHeader = serde_json::from_str(&text)
        .map_err(|e| dataset_err(header_path, "header", e.to_string()))?;
    if header.dtype != DTYPE {
        return Err(dataset_err(
            header_path,
            "dtype",
            format!("expected {DTYPE:?}, found {:?}", header.dtype),
        ));
    }
    if header.units != UNITS {
        return Err(dataset_err(
            header_path,
            "units",
            format!("expected {UNITS:?}, found {:?}", header.units),
        ));
    }
    let [t, h, w] = header.dims;
    if header.timestamps.len() != t {
        return Err(dataset_err(
            header_path,
            "timestamps",
            format!("{} timestamps for {t} frames", header.timestamps.len()),
        ));
    }
    let bytes = fs::read(payload_path(header_path))?;
    let expected = t * h * w * 4;
    if bytes.len() != expected {
        return Err(dataset_err(
            header_path,
            "payload",
            format!(
                "payload length mismatch: expected {expected} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut frames = Vec::with_capacity(t);
    for &ts in &header.timestamps {
        let grid: Vec<f32> = values.by_ref().take(h * w).collect();
        let grid = Array2::from_shape_vec((h, w), grid)
            .map_err(|e| dataset_err(header_path, "dims", e.to_string()))?;
        frames.push(
            RadarFrame::new(grid, ts)
                .map_err(|e| dataset_err(header_path, "payload", e.to_string()))?,
        );
    }
    RadarSequence::new(frames, header.spacing_min)
        .map_err(|e| dataset_err(header_path, "timestamps", e.to_string()))
}

/// Writes every sequence as `seq_00000`, `seq_00001`, ...
pub fn write_dataset(sequences: &[RadarSequence], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, seq) in sequences.iter().enumerate() {
        write_sequence(seq, dir, &format!("seq_{i:05}"))?;
    }
    Ok(())
}

/// Reads every `*.json` header in `dir`, in file-name order.
pub fn read_dataset(dir: &Path) -> Result<Vec<RadarSequence>> {
    let mut headers: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    headers.sort();
    headers.iter().map(|p| read_sequence(p)).collect()
}
