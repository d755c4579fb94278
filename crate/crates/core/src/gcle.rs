//! GCLE binary embedding format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"GCLE" | u32 version (=1) | u32 rows | u32 dim | rows*dim f32, row-major
//! ```
//!
//! Per-row identity lives in a JSON sidecar at `<path>.meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::dataset::SliceMeta;
use crate::error::{io_err, Error, Result};

pub const MAGIC: &[u8; 4] = b"GCLE";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Serialize the matrix to GCLE bytes. Values are narrowed to f32.
pub fn encode(matrix: &Array2<f64>) -> Result<Vec<u8>> {
    let (rows, dim) = matrix.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + rows * dim * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for ((row, col), &v) in matrix.indexed_iter() {
        let v = v as f32;
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

/// Parse GCLE bytes. `source` is only used for error messages.
pub fn decode(bytes: &[u8], source: &Path) -> Result<Array2<f64>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic(source.to_path_buf()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = word(4);
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let rows = word(8) as usize;
    let dim = word(12) as usize;
    let expected = HEADER_LEN + rows * dim * 4;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(rows * dim);
    for (k, c) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: k / dim,
                col: k % dim,
            });
        }
        data.push(v as f64);
    }
    Ok(Array2::from_shape_vec((rows, dim), data).expect("length checked above"))
}

pub fn write_gcle(path: &Path, matrix: &Array2<f64>, metas: &[SliceMeta]) -> Result<()> {
    if metas.len() != matrix.nrows() {
        return Err(Error::CountMismatch {
            header: matrix.nrows(),
            meta: metas.len(),
        });
    }
    let bytes = encode(matrix)?;
    fs::write(path, bytes).map_err(io_err(path))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_vec_pretty(metas)?).map_err(io_err(&side))?;
    Ok(())
}

pub fn read_gcle(path: &Path) -> Result<(Array2<f64>, Vec<SliceMeta>)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let matrix = decode(&bytes, path)?;
    let side = sidecar_path(path);
    let metas: Vec<SliceMeta> = serde_json::from_slice(&fs::read(&side).map_err(io_err(&side))?)?;
    if metas.len() != matrix.nrows() {
        return Err(Error::CountMismatch {
            header: matrix.nrows(),
            meta: metas.len(),
        });
    }
    Ok((matrix, metas))
}
