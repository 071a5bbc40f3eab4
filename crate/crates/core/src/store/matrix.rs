use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::{read_magic, write_atomic};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"LEF1";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u16 = 1;
/// magic(4) + version(2) + dtype(2) + n_samples(8) + dim(8)
pub const EMBEDDING_HEADER_LEN: usize = 24;

/// Row-major `n_samples × dim` matrix of finite `f32` values, one row per
/// text sample, for a single (model, layer) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    n_samples: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n_samples: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        let expected = n_samples
            .checked_mul(dim)
            .ok_or(Error::Overflow("matrix size"))?;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} != {n_samples} x {dim}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self {
            n_samples,
            dim,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Shape(format!(
                "row {bad} has length {}, expected {dim}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
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

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact(0) panics, and a zero-dim matrix still has n_samples rows
        (0..self.n_samples).map(move |i| self.row(i))
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            n_samples: indices.len(),
            dim: self.dim,
            data,
        }
    }
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub version: u16,
    pub dtype: u16,
    pub n_samples: u64,
    pub dim: u64,
}

impl EmbeddingHeader {
    fn encode(&self) -> [u8; EMBEDDING_HEADER_LEN] {
        let mut out = [0u8; EMBEDDING_HEADER_LEN];
        out[0..4].copy_from_slice(&EMBEDDING_MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..8].copy_from_slice(&self.dtype.to_le_bytes());
        out[8..16].copy_from_slice(&self.n_samples.to_le_bytes());
        out[16..24].copy_from_slice(&self.dim.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        read_magic(bytes, path, EMBEDDING_MAGIC)?;
        if bytes.len() < EMBEDDING_HEADER_LEN {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: EMBEDDING_HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let header = Self {
            version: u16_at(4),
            dtype: u16_at(6),
            n_samples: u64_at(8),
            dim: u64_at(16),
        };
        if header.version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                expected: FORMAT_VERSION,
                found: header.version,
            });
        }
        if header.dtype != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(header.dtype));
        }
        Ok(header)
    }

    fn payload_len(&self) -> Result<u64> {
        self.n_samples
            .checked_mul(self.dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or(Error::Overflow("embedding payload size"))
    }
}

pub fn write_embedding_file(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // EmbeddingMatrix::new already rejects these, but the fields are
    // reachable from inside the crate.
    check_finite(&matrix.data)?;
    let header = EmbeddingHeader {
        version: FORMAT_VERSION,
        dtype: DTYPE_F32,
        n_samples: matrix.n_samples as u64,
        dim: matrix.dim as u64,
    };
    write_atomic(path, |w: &mut dyn Write| {
        w.write_all(&header.encode())?;
        let mut buf = Vec::with_capacity(matrix.data.len() * 4);
        for v in &matrix.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    })
}

/// Reads only the fixed-size header, without touching the payload.
pub fn read_embedding_header(path: impl AsRef<Path>) -> Result<EmbeddingHeader> {
    use std::io::Read;
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(EMBEDDING_HEADER_LEN);
    file.take(EMBEDDING_HEADER_LEN as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    EmbeddingHeader::decode(&buf, path)
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = EmbeddingHeader::decode(&bytes, path)?;
    let payload = &bytes[EMBEDDING_HEADER_LEN..];
    let expected = header.payload_len()?;
    if (payload.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: EMBEDDING_HEADER_LEN as u64 + expected,
            found: bytes.len() as u64,
        });
    }
    if payload.len() as u64 > expected {
        return Err(Error::Shape(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            payload.len() as u64 - expected
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(header.n_samples as usize, header.dim as usize, data)
}
