//! Embedding tables and the EMB1 binary format.
//!
//! EMB1 layout, all little-endian:
//!
//! ```text
//! offset 0   b"EMB1"
//! offset 4   rows  u32
//! offset 8   dim   u32
//! offset 12  rows * dim IEEE-754 f32, row-major
//! ```
//!
//! Several records may be concatenated into one file (used for affine maps).

mod stats;

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub use stats::{stats, EmbeddingStats};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("bad magic: expected EMB1, found {0:?}")]
    BadMagic([u8; 4]),
    #[error("size mismatch: header declares {rows}x{dim} ({expected} payload bytes) but {actual} bytes follow")]
    SizeMismatch { rows: u32, dim: u32, expected: usize, actual: usize },
    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize, value: f32 },
    #[error("data length {len} is not rows x dim = {rows} x {dim}")]
    ShapeMismatch { rows: usize, dim: usize, len: usize },
    #[error("matrix has no rows")]
    EmptyMatrix,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EmbeddingError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        EmbeddingError::Io { path: path.to_owned(), source }
    }
}

/// Dense row-major `rows x dim` table of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    pub label: String,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        if data.len() != rows * dim {
            return Err(EmbeddingError::ShapeMismatch { rows, dim, len: data.len() });
        }
        check_finite(&data, dim)?;
        Ok(Self { rows, dim, data, label: String::new() })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(EmbeddingError::ShapeMismatch { rows: i + 1, dim, len: data.len() + r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self { rows, dim, data: vec![0.0; rows * dim], label: String::new() }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Panics when `i >= rows`.
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact(0) panics, so zero-width tables are mapped by hand.
        (0..self.rows).map(move |i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Serialized EMB1 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(encoded_len(self.rows, self.dim));
        write_record(&mut out, self.rows, self.dim, &self.data).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let (m, used) = read_record(bytes)?;
        if used != bytes.len() {
            return Err(EmbeddingError::SizeMismatch {
                rows: m.rows as u32,
                dim: m.dim as u32,
                expected: m.rows * m.dim * 4,
                actual: bytes.len() - HEADER_LEN,
            });
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        load_matrix(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        save_matrix(self, path)
    }
}

/// File size of an EMB1 file holding a `rows x dim` matrix.
pub fn encoded_len(rows: usize, dim: usize) -> usize {
    HEADER_LEN + rows * dim * 4
}

fn check_finite(data: &[f32], dim: usize) -> Result<(), EmbeddingError> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(EmbeddingError::NonFiniteValue {
            row: i / dim.max(1),
            col: i % dim.max(1),
            value: data[i],
        }),
    }
}

/// Appends one EMB1 record.
pub fn write_record<W: Write>(out: &mut W, rows: usize, dim: usize, data: &[f32]) -> std::io::Result<()> {
    debug_assert_eq!(data.len(), rows * dim);
    let rows32 = u32::try_from(rows).map_err(|_| std::io::Error::other("row count exceeds u32"))?;
    let dim32 = u32::try_from(dim).map_err(|_| std::io::Error::other("dim exceeds u32"))?;
    out.write_all(MAGIC)?;
    out.write_all(&rows32.to_le_bytes())?;
    out.write_all(&dim32.to_le_bytes())?;
    let mut buf = Vec::with_capacity(data.len().min(1 << 16) * 4);
    for chunk in data.chunks(1 << 16) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

/// Decodes one EMB1 record from the front of `bytes`, returning it and the
/// number of bytes consumed. Trailing bytes are left to the caller.
pub fn read_record(bytes: &[u8]) -> Result<(EmbeddingMatrix, usize), EmbeddingError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(EmbeddingError::BadMagic(found));
    }
    if bytes.len() < HEADER_LEN {
        return Err(EmbeddingError::SizeMismatch { rows: 0, dim: 0, expected: HEADER_LEN, actual: bytes.len() });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let payload = (rows as usize) * (dim as usize) * 4;
    let available = bytes.len() - HEADER_LEN;
    if available < payload {
        return Err(EmbeddingError::SizeMismatch { rows, dim, expected: payload, actual: available });
    }
    let data: Vec<f32> = bytes[HEADER_LEN..HEADER_LEN + payload]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let m = EmbeddingMatrix::new(rows as usize, dim as usize, data)?;
    Ok((m, HEADER_LEN + payload))
}

/// Reads an EMB1 file; the payload must match the header exactly.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, EmbeddingError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| EmbeddingError::io(path, e))?;
    Ok(EmbeddingMatrix::from_bytes(&bytes)?.with_label(path.display().to_string()))
}

pub fn save_matrix(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    let path = path.as_ref();
    check_finite(&m.data, m.dim)?;
    let file = File::create(path).map_err(|e| EmbeddingError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_record(&mut w, m.rows, m.dim, &m.data)
        .and_then(|_| w.flush())
        .map_err(|e| EmbeddingError::io(path, e))
}
