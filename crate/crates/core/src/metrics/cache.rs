//! Distance-matrix cache: `dist_<kind>.f64` holds the strict upper
//! triangle row-major as little-endian float64, `dist_<kind>.json` records
//! how it was produced.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DistanceMatrix, MetricKind, ProjectionSpec};
use crate::error::{Result, TopoError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheInfo {
    pub metric_kind: MetricKind,
    pub n_points: usize,
    #[serde(default)]
    pub n_reference: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub projection: Option<ProjectionSpec>,
}

fn paths(dir: &Path, kind: MetricKind) -> (PathBuf, PathBuf) {
    let stem = format!("dist_{}", kind.token());
    (
        dir.join(format!("{stem}.f64")),
        dir.join(format!("{stem}.json")),
    )
}

pub fn write_cache(
    dir: impl AsRef<Path>,
    dm: &DistanceMatrix,
    info: &CacheInfo,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (data_path, side_path) = paths(dir, dm.kind());
    let n = dm.len();
    let mut bytes = Vec::with_capacity(n * n.saturating_sub(1) * 4);
    for i in 0..n {
        for &d in &dm.row(i)[i + 1..] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
    }
    fs::write(&data_path, bytes)?;
    let json =
        serde_json::to_vec_pretty(info).map_err(|e| TopoError::MetadataParse(e.to_string()))?;
    fs::write(side_path, json)?;
    Ok(data_path)
}

/// Loads a cached matrix of the given kind, or `None` when absent.
pub fn read_cache(
    dir: impl AsRef<Path>,
    kind: MetricKind,
) -> Result<Option<(DistanceMatrix, CacheInfo)>> {
    let (data_path, side_path) = paths(dir.as_ref(), kind);
    if !data_path.is_file() || !side_path.is_file() {
        return Ok(None);
    }
    let info: CacheInfo = serde_json::from_slice(&fs::read(&side_path)?)
        .map_err(|e| TopoError::MetadataParse(format!("{}: {e}", side_path.display())))?;
    let bytes = fs::read(&data_path)?;
    let n = info.n_points;
    let expected = n * n.saturating_sub(1) / 2 * 8;
    if bytes.len() != expected {
        return Err(TopoError::ShapeMismatch(format!(
            "{}: expected {expected} bytes for {n} points, found {}",
            data_path.display(),
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = values.next().expect("length checked");
            entries[i * n + j] = d;
            entries[j * n + i] = d;
        }
    }
    let mut dm = DistanceMatrix::from_entries(n, entries, info.metric_kind)?;
    if let Some(r) = info.n_reference {
        dm = dm.with_reference(r);
    }
    Ok(Some((dm, info)))
}
