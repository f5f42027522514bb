//! Map container: six concatenated EMB1 records plus a JSON sidecar.
//!
//! Record order is `W (n x m)`, `b (1 x n)`, input mean, input std, output
//! mean, output std (each `1 x dim`). Values are stored as 32-bit floats.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AffineMap, AlignError, FitReport, StandardScaler, TrainConfig};
use crate::embedding::{read_record, write_record, EmbeddingError};

pub const RECORD_ORDER: [&str; 6] = ["weight", "bias", "input_mean", "input_std", "output_mean", "output_std"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub schema_version: String,
    pub input_dim: usize,
    pub output_dim: usize,
    pub l2_normalize_inputs: bool,
    pub records: Vec<String>,
    pub input_flagged: Vec<usize>,
    pub output_flagged: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<FitReport>,
}

/// `map.emb1x` -> `map.emb1x.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(path: &Path, source: std::io::Error) -> AlignError {
    AlignError::Embedding(EmbeddingError::Io { path: path.to_owned(), source })
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn save_map(
    map: &AffineMap,
    path: impl AsRef<Path>,
    config: Option<&TrainConfig>,
    report: Option<&FitReport>,
) -> Result<(), AlignError> {
    let path = path.as_ref();
    let (m, n) = (map.input_dim, map.output_dim);
    let mut buf = Vec::new();
    let records: [(usize, usize, Vec<f32>); 6] = [
        (n, m, to_f32(&map.weight)),
        (1, n, to_f32(&map.bias)),
        (1, m, to_f32(&map.input_scaler.mean)),
        (1, m, to_f32(&map.input_scaler.std)),
        (1, n, to_f32(&map.output_scaler.mean)),
        (1, n, to_f32(&map.output_scaler.std)),
    ];
    for (rows, dim, data) in &records {
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(EmbeddingError::NonFiniteValue { row: i / (*dim).max(1), col: i % (*dim).max(1), value: *v }.into());
        }
        write_record(&mut buf, *rows, *dim, data).map_err(|e| io_err(path, e))?;
    }
    fs::write(path, &buf).map_err(|e| io_err(path, e))?;

    let sidecar = MapSidecar {
        schema_version: "1".into(),
        input_dim: m,
        output_dim: n,
        l2_normalize_inputs: map.l2_normalize_inputs,
        records: RECORD_ORDER.iter().map(|s| s.to_string()).collect(),
        input_flagged: map.input_scaler.flagged.clone(),
        output_flagged: map.output_scaler.flagged.clone(),
        train_config: config.cloned(),
        report: report.cloned(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    let side = sidecar_path(path);
    fs::write(&side, json + "\n").map_err(|e| io_err(&side, e))
}

pub fn load_map(path: impl AsRef<Path>) -> Result<(AffineMap, MapSidecar), AlignError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
    let sidecar: MapSidecar =
        serde_json::from_str(&text).map_err(|e| AlignError::MalformedMap(format!("{}: {e}", side.display())))?;
    let (m, n) = (sidecar.input_dim, sidecar.output_dim);

    let mut offset = 0;
    let mut parts = Vec::with_capacity(6);
    for (name, (rows, dim)) in RECORD_ORDER.iter().zip([(n, m), (1, n), (1, m), (1, m), (1, n), (1, n)]) {
        let (rec, used) = read_record(&bytes[offset..])?;
        if rec.rows() != rows || rec.dim() != dim {
            return Err(AlignError::MalformedMap(format!(
                "record {name} is {}x{}, expected {rows}x{dim}",
                rec.rows(),
                rec.dim()
            )));
        }
        offset += used;
        parts.push(rec.data().iter().map(|&v| v as f64).collect::<Vec<f64>>());
    }
    if offset != bytes.len() {
        return Err(AlignError::MalformedMap(format!("{} trailing bytes", bytes.len() - offset)));
    }
    let mut it = parts.into_iter();
    let mut next = || it.next().expect("six records");
    let (weight, bias) = (next(), next());
    let input_scaler = StandardScaler { mean: next(), std: next(), flagged: sidecar.input_flagged.clone() };
    let output_scaler = StandardScaler { mean: next(), std: next(), flagged: sidecar.output_flagged.clone() };
    if input_scaler.std.iter().chain(&output_scaler.std).any(|s| *s <= 0.0) {
        return Err(AlignError::MalformedMap("scaler std must be positive".into()));
    }
    let map = AffineMap {
        input_dim: m,
        output_dim: n,
        weight,
        bias,
        input_scaler,
        output_scaler,
        l2_normalize_inputs: sidecar.l2_normalize_inputs,
    };
    Ok((map, sidecar))
}
