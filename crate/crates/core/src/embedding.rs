//! Immutable token-embedding matrices and the `EMB1` file format.
//!
//! Layout: 4 bytes of ASCII `EMB1`, `vocab_size` and `dim` as little-endian
//! `u32`, then `vocab_size * dim` little-endian `f32` values in row-major
//! order. Row `i` is the embedding of token id `i`.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::rng;

pub const MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

/// Shape of the wide control: the largest probed width and a
/// fixed 100k-row vocabulary.
pub const WIDE_CONTROL_DIM: usize = 4096;
pub const WIDE_CONTROL_VOCAB: usize = 100_000;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("bad magic at byte 0: expected \"EMB1\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("truncated file at byte {offset}: header declares {expected} bytes, found {actual}")]
    TruncatedFile {
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{extra} trailing bytes after the declared matrix (byte {offset})")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("non-finite value {value} at byte {offset}")]
    NonFiniteValue { offset: usize, value: f32 },
    #[error("embedding tables need vocab_size >= 1 and dim >= 1 (got {vocab_size} x {dim})")]
    ZeroSize { vocab_size: usize, dim: usize },
    #[error("row data has {actual} values, expected {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A frozen `vocab_size x dim` matrix of token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab_size: usize,
    dim: usize,
    rows: Vec<f32>,
    source_name: String,
    is_control: bool,
}

impl EmbeddingTable {
    /// Wraps an existing row-major buffer. Rejects non-finite values.
    pub fn from_rows(
        vocab_size: usize,
        dim: usize,
        rows: Vec<f32>,
        source_name: impl Into<String>,
    ) -> Result<Self, EmbeddingError> {
        if vocab_size == 0 || dim == 0 {
            return Err(EmbeddingError::ZeroSize { vocab_size, dim });
        }
        if rows.len() != vocab_size * dim {
            return Err(EmbeddingError::ShapeMismatch {
                expected: vocab_size * dim,
                actual: rows.len(),
            });
        }
        if let Some(i) = rows.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFiniteValue {
                offset: HEADER_LEN + 4 * i,
                value: rows[i],
            });
        }
        Ok(Self {
            vocab_size,
            dim,
            rows,
            source_name: source_name.into(),
            is_control: false,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn is_control(&self) -> bool {
        self.is_control
    }

    pub fn row(&self, id: usize) -> &[f32] {
        &self.rows[id * self.dim..(id + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.rows
    }
}

/// Anything that can hand out a fixed-width real vector per token id.
pub trait FeatureProvider: Sync {
    fn dim(&self) -> usize;
    fn covers(&self, id: u32) -> bool;
    fn write_features(&self, id: u32, out: &mut [f32]);
}

impl FeatureProvider for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn covers(&self, id: u32) -> bool {
        (id as usize) < self.vocab_size
    }

    fn write_features(&self, id: u32, out: &mut [f32]) {
        out.copy_from_slice(self.row(id as usize));
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, EmbeddingError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode(&bytes, name)
}

/// Parses an in-memory `EMB1` image.
pub fn decode(bytes: &[u8], source_name: impl Into<String>) -> Result<EmbeddingTable, EmbeddingError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(EmbeddingError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(EmbeddingError::TruncatedFile {
            offset: bytes.len(),
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let vocab_size = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if vocab_size == 0 || dim == 0 {
        return Err(EmbeddingError::ZeroSize { vocab_size, dim });
    }
    let expected = HEADER_LEN + 4 * vocab_size * dim;
    if bytes.len() < expected {
        return Err(EmbeddingError::TruncatedFile {
            offset: bytes.len(),
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(EmbeddingError::TrailingBytes {
            offset: expected,
            extra: bytes.len() - expected,
        });
    }
    let mut rows = Vec::with_capacity(vocab_size * dim);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let value = f32::from_le_bytes(chunk.try_into().unwrap());
        if !value.is_finite() {
            return Err(EmbeddingError::NonFiniteValue {
                offset: HEADER_LEN + 4 * i,
                value,
            });
        }
        rows.push(value);
    }
    Ok(EmbeddingTable {
        vocab_size,
        dim,
        rows,
        source_name: source_name.into(),
        is_control: false,
    })
}

pub fn encode(table: &EmbeddingTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * table.rows.len());
    write_to(table, &mut out).expect("writing to a Vec cannot fail");
    out
}

fn write_to(table: &EmbeddingTable, w: &mut impl Write) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(table.vocab_size as u32).to_le_bytes())?;
    w.write_all(&(table.dim as u32).to_le_bytes())?;
    for v in &table.rows {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(table, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Random control embeddings: i.i.d. `N(0, 1/dim)`, deterministic per seed.
pub fn make_control(vocab_size: usize, dim: usize, seed: u64) -> Result<EmbeddingTable, EmbeddingError> {
    if vocab_size == 0 || dim == 0 {
        return Err(EmbeddingError::ZeroSize { vocab_size, dim });
    }
    let normal = Normal::new(0.0f32, (1.0 / dim as f32).sqrt()).expect("positive std");
    let mut r = rng::seeded(rng::derive(seed, &[0xC0_47_20_1]));
    let rows: Vec<f32> = (0..vocab_size * dim).map(|_| normal.sample(&mut r)).collect();
    Ok(EmbeddingTable {
        vocab_size,
        dim,
        rows,
        source_name: format!("control-seed{seed}"),
        is_control: true,
    })
}

/// How the control table is shaped relative to the probed table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlShape {
    /// Same `vocab_size x dim` as the probed table.
    #[default]
    Matched,
    /// 4096 wide, at least 100k rows.
    Wide,
}

impl ControlShape {
    pub fn shape_for(self, table: &EmbeddingTable) -> (usize, usize) {
        match self {
            ControlShape::Matched => (table.vocab_size, table.dim),
            ControlShape::Wide => (table.vocab_size.max(WIDE_CONTROL_VOCAB), WIDE_CONTROL_DIM),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(vocab: u32, dim: u32, values: &[f32]) -> Vec<u8> {
        let mut b = MAGIC.to_vec();
        b.extend(vocab.to_le_bytes());
        b.extend(dim.to_le_bytes());
        for v in values {
            b.extend(v.to_le_bytes());
        }
        b
    }

    #[test]
    fn minimal_file_loads() {
        let t = decode(&image(3, 2, &[1., 2., 3., 4., 5., 6.]), "t").unwrap();
        assert_eq!((t.vocab_size(), t.dim()), (3, 2));
        assert_eq!(t.row(2), &[5., 6.]);
        assert!(!t.is_control());
    }

    #[test]
    fn bad_magic() {
        let mut b = image(3, 2, &[0.; 6]);
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&b, "t"), Err(EmbeddingError::BadMagic { .. })));
    }

    #[test]
    fn truncated() {
        let err = decode(&image(3, 2, &[0.; 5]), "t").unwrap_err();
        match err {
            EmbeddingError::TruncatedFile { offset, expected, .. } => {
                assert_eq!(offset, 12 + 20);
                assert_eq!(expected, 12 + 24);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_finite_reports_offset() {
        let err = decode(&image(2, 2, &[0., 1., f32::NAN, 2.]), "t").unwrap_err();
        assert!(matches!(err, EmbeddingError::NonFiniteValue { offset: 20, .. }));
    }

    #[test]
    fn control_is_deterministic_and_seed_sensitive() {
        let a = make_control(5, 4, 7).unwrap();
        let b = make_control(5, 4, 7).unwrap();
        let c = make_control(5, 4, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.as_slice(), c.as_slice());
        assert!(a.is_control());
    }

    #[test]
    fn control_rejects_zero_size() {
        assert!(matches!(make_control(0, 4, 1), Err(EmbeddingError::ZeroSize { .. })));
        assert!(matches!(make_control(4, 0, 1), Err(EmbeddingError::ZeroSize { .. })));
    }

    #[test]
    fn control_rows_have_unit_scale() {
        let t = make_control(2000, 4096, 3).unwrap();
        let within = (0..t.vocab_size())
            .filter(|&i| {
                let n = t.row(i).iter().map(|v| v * v).sum::<f32>().sqrt();
                (0.8..=1.2).contains(&n)
            })
            .count();
        assert!(within as f64 >= 0.99 * t.vocab_size() as f64);
    }

    #[test]
    fn wide_shape() {
        let t = make_control(3, 2, 0).unwrap();
        assert_eq!(ControlShape::Matched.shape_for(&t), (3, 2));
        assert_eq!(ControlShape::Wide.shape_for(&t), (100_000, 4096));
    }
}
