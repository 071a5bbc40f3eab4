//! Versioned binary checkpoint for [`TrainedModel`].
//!
//! Layout: magic `LCK1` | version u16 | dtype u16 (1 = f32) | meta_len u64 |
//! meta (UTF-8 JSON) | parameters | Adam first moments | Adam second
//! moments. All integers and floats are little-endian; tensors are written
//! flat in the network's parameter order.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EpochStats, FusionClassifier, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::fusion::FusionSpec;
use crate::numeric::{AdamConfig, AdamState, Params};
use crate::store::{DTYPE_F32, FORMAT_VERSION};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LCK1";
const PREFIX_LEN: usize = 16;

#[derive(Serialize, Deserialize)]
struct Meta {
    spec: FusionSpec,
    config: TrainConfig,
    input_dims: Vec<usize>,
    n_classes: usize,
    n_params: usize,
    adam: AdamConfig,
    adam_t: u64,
    history: Vec<EpochStats>,
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &TrainedModel) -> Result<Vec<u8>> {
    let params = model.net.flatten();
    let meta = Meta {
        spec: model.spec.clone(),
        config: model.config.clone(),
        input_dims: model.input_dims().to_vec(),
        n_classes: model.n_classes(),
        n_params: params.len(),
        adam: model.adam.config,
        adam_t: model.adam.t,
        history: model.history.clone(),
    };
    let meta = serde_json::to_vec(&meta)?;
    let mut buf = Vec::with_capacity(PREFIX_LEN + meta.len() + 12 * params.len());
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&DTYPE_F32.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    push_f32s(&mut buf, &params);
    push_f32s(&mut buf, &model.adam.m.concat());
    push_f32s(&mut buf, &model.adam.v.concat());
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<TrainedModel> {
    crate::store::read_magic(bytes, path, CHECKPOINT_MAGIC)?;
    let truncated = |expected: usize| Error::Truncated {
        path: path.to_path_buf(),
        expected: expected as u64,
        found: bytes.len() as u64,
    };
    if bytes.len() < PREFIX_LEN {
        return Err(truncated(PREFIX_LEN));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let dtype = u16::from_le_bytes([bytes[6], bytes[7]]);
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let meta_end = PREFIX_LEN
        .checked_add(meta_len)
        .ok_or(Error::Overflow("checkpoint meta length"))?;
    if bytes.len() < meta_end {
        return Err(truncated(meta_end));
    }
    let meta: Meta = serde_json::from_slice(&bytes[PREFIX_LEN..meta_end])?;
    let expected = meta_end + 12 * meta.n_params;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::Shape(format!("{}: trailing bytes in checkpoint", path.display())));
    }
    let floats: Vec<f32> = bytes[meta_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (params, rest) = floats.split_at(meta.n_params);
    let (m, v) = rest.split_at(meta.n_params);

    // Shapes come from re-running the initialiser; values are overwritten.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = FusionClassifier::<f32>::init(&meta.spec, &meta.input_dims, meta.config.hidden, meta.n_classes, &mut rng)?;
    if net.n_params() != meta.n_params {
        return Err(Error::Shape(format!(
            "checkpoint declares {} parameters, architecture has {}",
            meta.n_params,
            net.n_params()
        )));
    }
    if let Some(i) = floats.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index: i });
    }
    net.assign_flat(params);
    let mut adam = AdamState::new(&net, meta.adam);
    adam.t = meta.adam_t;
    let mut offset = 0;
    for (mk, vk) in adam.m.iter_mut().zip(adam.v.iter_mut()) {
        let n = mk.len();
        mk.copy_from_slice(&m[offset..offset + n]);
        vk.copy_from_slice(&v[offset..offset + n]);
        offset += n;
    }
    Ok(TrainedModel {
        spec: meta.spec,
        config: meta.config,
        net,
        adam,
        history: meta.history,
    })
}

pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model)?;
    crate::store::write_atomic(path, |w: &mut dyn Write| w.write_all(&bytes))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
