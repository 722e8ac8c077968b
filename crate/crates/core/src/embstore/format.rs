use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: [u8; 4] = *b"LEMB";
pub const LABELS_MAGIC: [u8; 4] = *b"LLAB";
/// Unit-norm f32 embeddings.
pub const MATRIX_VERSION: u32 = 1;
/// Raw f64 parameter tensors (checkpoints). No norm constraint.
pub const PARAMS_VERSION: u32 = 2;

const HEADER_LEN: usize = 4 + 4 + 8 + 8;

fn header(version: u32, rows: usize, cols: usize, payload: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + payload);
    buf.extend_from_slice(&MATRIX_MAGIC);
    buf.extend_from_slice(&version.to_le_bytes());
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(cols as u64).to_le_bytes());
    buf
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => Err(Error::io(path, e)),
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn truncated(path: &Path, expected: u64, found: usize) -> Error {
    Error::Truncated {
        path: path.to_path_buf(),
        expected,
        found: found as u64,
    }
}

/// Parses the LEMB header; returns (rows, cols, payload offset).
fn parse_header(path: &Path, bytes: &[u8], version: u32, elem: usize) -> Result<(usize, usize)> {
    if bytes.len() < 4 {
        return Err(truncated(path, HEADER_LEN as u64, bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MATRIX_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MATRIX_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < 8 {
        return Err(truncated(path, HEADER_LEN as u64, bytes.len()));
    }
    let found = u32_at(bytes, 4);
    if found != version {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            expected: version,
            found,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(path, HEADER_LEN as u64, bytes.len()));
    }
    let rows = u64_at(bytes, 8);
    let cols = u64_at(bytes, 16);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(elem as u64))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| Error::Shape(format!("{}: header size overflows", path.display())))?;
    if (bytes.len() as u64) < expected {
        return Err(truncated(path, expected, bytes.len()));
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::Shape(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() as u64 - expected
        )));
    }
    Ok((rows as usize, cols as usize))
}

/// Writes `matrix` as a version-1 LEMB file.
pub fn write_matrix(path: impl AsRef<Path>, matrix: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    let payload = matrix.as_slice();
    if let Some(pos) = payload.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / matrix.dim(),
            col: pos % matrix.dim(),
        });
    }
    let mut buf = header(
        MATRIX_VERSION,
        matrix.rows(),
        matrix.dim(),
        payload.len() * 4,
    );
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &buf)
}

/// Reads and validates a version-1 LEMB file.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let (rows, cols) = parse_header(path, &bytes, MATRIX_VERSION, 4)?;
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let arr = Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Shape(format!("{}: {e}", path.display())))?;
    EmbeddingMatrix::new(arr)
}

/// Writes a raw f64 parameter tensor in the LEMB container (version 2).
pub fn write_params(path: impl AsRef<Path>, params: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = params.dim();
    let mut buf = header(PARAMS_VERSION, rows, cols, rows * cols * 8);
    for ((r, c), v) in params.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row: r, col: c });
        }
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &buf)
}

pub fn read_params(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let (rows, cols) = parse_header(path, &bytes, PARAMS_VERSION, 8)?;
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / cols.max(1),
            col: pos % cols.max(1),
        });
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Shape(format!("{}: {e}", path.display())))
}

/// Writes labels as LLAB: magic, u64 count, u32 LE per label.
pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(12 + labels.len() * 4);
    buf.extend_from_slice(&LABELS_MAGIC);
    buf.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    for &l in labels {
        let l = u32::try_from(l)
            .map_err(|_| Error::InvalidParameter(format!("label {l} does not fit in u32")))?;
        buf.extend_from_slice(&l.to_le_bytes());
    }
    write_bytes(path, &buf)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.len() < 4 {
        return Err(truncated(path, 12, bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < 12 {
        return Err(truncated(path, 12, bytes.len()));
    }
    let count = u64_at(&bytes, 4);
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| Error::Shape(format!("{}: label count overflows", path.display())))?;
    if (bytes.len() as u64) < expected {
        return Err(truncated(path, expected, bytes.len()));
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::Shape(format!(
            "{}: {} trailing bytes after labels",
            path.display(),
            bytes.len() as u64 - expected
        )));
    }
    Ok(bytes[12..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}
