use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::{read_magic, write_atomic, FORMAT_VERSION};

pub const LABEL_MAGIC: [u8; 4] = *b"LBL1";
const HEADER_LEN: usize = 16;

/// Integer class targets for one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector {
    n_classes: u32,
    labels: Vec<u32>,
}

impl LabelVector {
    pub fn new(n_classes: u32, labels: Vec<u32>) -> Result<Self> {
        if n_classes == 0 || n_classes > u16::MAX as u32 {
            return Err(Error::InvalidConfig(format!(
                "n_classes must be in 1..=65535, got {n_classes}"
            )));
        }
        if let Some(index) = labels.iter().position(|&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label: labels[index],
                n_classes,
            });
        }
        Ok(Self { n_classes, labels })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes as usize
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            n_classes: self.n_classes,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

pub fn write_label_file(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, |w: &mut dyn Write| {
        w.write_all(&LABEL_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(labels.n_classes as u16).to_le_bytes())?;
        w.write_all(&(labels.labels.len() as u64).to_le_bytes())?;
        let buf: Vec<u8> = labels.labels.iter().flat_map(|l| l.to_le_bytes()).collect();
        w.write_all(&buf)
    })
}

pub fn read_label_file(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_magic(&bytes, path, LABEL_MAGIC)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let n_classes = u16::from_le_bytes([bytes[6], bytes[7]]) as u32;
    let n_samples = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = n_samples
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .ok_or(Error::Overflow("label payload size"))?;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 > expected {
        return Err(Error::Shape(format!(
            "{}: trailing bytes after labels",
            path.display()
        )));
    }
    let labels = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelVector::new(n_classes, labels)
}
