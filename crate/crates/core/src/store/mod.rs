//! On-disk embedding and label storage, the manifest catalog, and memory
//! accounting for fused embedding sets.
//!
//! Embedding files (`LEF1`) hold one row-major `f32` matrix per
//! (dataset, split, model, layer). Label files (`LBL1`) hold one class id per
//! sample. A JSON manifest ties them together and is validated against the
//! file headers on load.

mod labels;
mod manifest;
mod matrix;
mod memory;
pub mod registry;

pub use labels::{read_label_file, write_label_file, LabelVector, LABEL_MAGIC};
pub use manifest::{Manifest, ManifestEntry, Split};
pub use matrix::{
    read_embedding_file, read_embedding_header, write_embedding_file, EmbeddingHeader,
    EmbeddingMatrix, DTYPE_F32, EMBEDDING_HEADER_LEN, EMBEDDING_MAGIC, FORMAT_VERSION,
};
pub use memory::{estimate_memory, format_gib, GIB};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub(crate) fn read_magic(bytes: &[u8], path: &Path, expected: [u8; 4]) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: 4,
            found: bytes.len() as u64,
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let tmp = tmp_path(path);
    let result = (|| {
        let file = File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush()?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}
