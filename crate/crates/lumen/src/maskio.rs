//! Mask set files: gzip-compressed little-endian `f64` values plus a JSON header.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use lumen_core::saliency::perturbation::MaskOrigin;
use lumen_core::saliency::{MaskSet, SaliencyError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: malformed header: {source}")]
    Header {
        path: String,
        source: serde_json::Error,
    },
    #[error("mask payload is {0} bytes, not a multiple of 8")]
    Truncated(usize),
    #[error("header declares {declared} masks, payload holds {actual}")]
    CountMismatch { declared: usize, actual: usize },
    #[error(transparent)]
    Invalid(#[from] SaliencyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskHeader {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub grid: (usize, usize),
    pub keep_prob: f64,
    pub seed: u64,
    pub origin: MaskOrigin,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MaskIoError + '_ {
    move |source| MaskIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Writes `masks` to `path` and its header to `<path>.json`.
pub fn write_masks(path: &Path, masks: &MaskSet) -> Result<MaskHeader, MaskIoError> {
    let header = MaskHeader {
        count: masks.len(),
        height: masks.height,
        width: masks.width,
        grid: masks.grid,
        keep_prob: masks.keep_prob,
        seed: masks.seed,
        origin: masks.origin,
    };
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut enc = GzEncoder::new(std::io::BufWriter::new(file), Compression::default());
    for v in masks.values() {
        enc.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    enc.finish()
        .and_then(|mut w| w.flush())
        .map_err(io_err(path))?;
    let hp = header_path(path);
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    std::fs::write(&hp, json).map_err(io_err(&hp))?;
    Ok(header)
}

pub fn read_masks(path: &Path) -> Result<MaskSet, MaskIoError> {
    let hp = header_path(path);
    let text = std::fs::read(&hp).map_err(io_err(&hp))?;
    let header: MaskHeader = serde_json::from_slice(&text).map_err(|source| MaskIoError::Header {
        path: hp.display().to_string(),
        source,
    })?;
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut raw = Vec::new();
    GzDecoder::new(file)
        .read_to_end(&mut raw)
        .map_err(io_err(path))?;
    if raw.len() % 8 != 0 {
        return Err(MaskIoError::Truncated(raw.len()));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let plane = header.height * header.width;
    let actual = values.len().checked_div(plane).unwrap_or(0);
    if actual != header.count {
        return Err(MaskIoError::CountMismatch {
            declared: header.count,
            actual,
        });
    }
    Ok(MaskSet::from_parts(
        header.height,
        header.width,
        header.grid,
        header.keep_prob,
        header.seed,
        header.origin,
        values,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lumen_core::saliency::generate_masks;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin.gz");
        let masks = generate_masks(5, (3, 3), 0.5, (8, 8), 11).unwrap();
        write_masks(&path, &masks).unwrap();
        assert_eq!(read_masks(&path).unwrap(), masks);
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin.gz");
        let masks = generate_masks(2, (2, 2), 0.5, (4, 4), 1).unwrap();
        let mut header = write_masks(&path, &masks).unwrap();
        header.count = 3;
        std::fs::write(header_path(&path), serde_json::to_vec(&header).unwrap()).unwrap();
        assert!(matches!(read_masks(&path), Err(MaskIoError::CountMismatch { .. })));
    }
}
