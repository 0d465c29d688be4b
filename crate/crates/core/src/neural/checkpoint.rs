//! Probe checkpoints: `MLP1`, four little-endian u32 dims
//! (d_in, h1, h2, d_out), then every parameter as little-endian f32 in
//! w1, b1, w2, b2, w3, b3 order.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use super::mlp::Mlp;

const MAGIC: &[u8; 4] = b"MLP1";
/// Dropout assigned to loaded models; checkpoints only matter for inference.
pub const LOADED_DROPOUT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("expected {expected} bytes, found {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_checkpoint(m: &Mlp<f32>) -> Vec<u8> {
    let (h1, h2) = m.hidden();
    let mut out = Vec::with_capacity(20 + 4 * m.n_params());
    out.extend_from_slice(MAGIC);
    for d in [m.d_in(), h1, h2, m.d_out()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for t in m.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Mlp<f32>, CheckpointError> {
    if bytes.len() < 20 {
        return Err(CheckpointError::WrongLength {
            expected: 20,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().expect("4 bytes")) as usize;
    let (d_in, h1, h2, d_out) = (dim(0), dim(1), dim(2), dim(3));
    let n = h1 * d_in + h1 + h2 * h1 + h2 + d_out * h2 + d_out;
    if bytes.len() != 20 + 4 * n {
        return Err(CheckpointError::WrongLength {
            expected: 20 + 4 * n,
            actual: bytes.len(),
        });
    }
    let mut vals = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut take = |k: usize| vals.by_ref().take(k).collect::<Vec<f32>>();
    let mat = |r: usize, c: usize, v: Vec<f32>| Array2::from_shape_vec((r, c), v).expect("sized");
    let w1 = mat(h1, d_in, take(h1 * d_in));
    let b1 = Array1::from(take(h1));
    let w2 = mat(h2, h1, take(h2 * h1));
    let b2 = Array1::from(take(h2));
    let w3 = mat(d_out, h2, take(d_out * h2));
    let b3 = Array1::from(take(d_out));
    Ok(Mlp {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        dropout: LOADED_DROPOUT,
    })
}

pub fn write_checkpoint(m: &Mlp<f32>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    Ok(fs::write(path, encode_checkpoint(m))?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Mlp<f32>, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let m: Mlp<f32> = Mlp::new(5, 4, 3, 2, LOADED_DROPOUT, &mut crate::rng::seeded(1));
        let bytes = encode_checkpoint(&m);
        assert_eq!(&bytes[..4], b"MLP1");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), m);
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::WrongLength { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::BadMagic(_))));
    }
}
