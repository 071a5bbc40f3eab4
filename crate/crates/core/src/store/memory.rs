use crate::error::{Error, Result};

pub const GIB: f64 = (1u64 << 30) as f64;

/// Bytes needed to hold `n_samples` rows of the concatenated `dims` as f32.
pub fn estimate_memory(n_samples: u64, dims: &[usize]) -> Result<u64> {
    if dims.is_empty() {
        return Err(Error::InvalidConfig("estimate_memory needs at least one dim".into()));
    }
    let total_dim = dims
        .iter()
        .try_fold(0u64, |acc, &d| acc.checked_add(d as u64))
        .ok_or(Error::Overflow("memory estimate"))?;
    n_samples
        .checked_mul(total_dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or(Error::Overflow("memory estimate"))
}

/// Renders a byte count as GiB with one decimal, e.g. `1.3 GiB`.
pub fn format_gib(bytes: u64) -> String {
    format!("{:.1} GiB", bytes as f64 / GIB)
}
