//! C ABI over the layerfuse embedding store, the parameter-free fusion
//! operators, memory estimates and trained classifier checkpoints.
//!
//! Conventions:
//! - Every fallible function returns an [`LfStatus`]; results go through
//!   out-pointers, which are only written on success.
//! - Objects are opaque handles created by `*_new`/`*_read`/`*_load` and
//!   released with the matching `*_free`, which accepts NULL.
//! - After a non-`LF_STATUS_OK` status, [`lf_last_error`] returns a message for the
//!   calling thread, valid until that thread's next failing call.
//! - Panics never cross the boundary; they surface as `LF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use layerfuse::classifier::{load_checkpoint, predict, TrainedModel};
use layerfuse::fusion::{self, FusionMethod};
use layerfuse::store::{self, EmbeddingMatrix, Manifest, Split};
use layerfuse::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// An argument was malformed (bad UTF-8, unknown name, wrong length).
    InvalidArgument = 2,
    /// The operating system reported an I/O failure.
    Io = 3,
    /// A file was not a valid layerfuse file (magic, version, truncation).
    Format = 4,
    /// Inputs were readable but inconsistent (shapes, manifest, labels).
    Validation = 5,
    /// A value was NaN/infinite or an arithmetic result overflowed.
    Numeric = 6,
    /// The output buffer is too small; the required length was reported.
    BufferTooSmall = 7,
    /// An internal panic was caught.
    Panic = 8,
}

/// Opaque embedding matrix handle.
pub struct LfEmbedding(EmbeddingMatrix);

/// Opaque manifest handle.
pub struct LfManifest(Manifest);

/// Opaque trained-classifier handle.
pub struct LfModel(TrainedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> LfStatus {
    match e {
        Error::Io { .. } => LfStatus::Io,
        Error::BadMagic { .. } | Error::VersionMismatch { .. } | Error::UnsupportedDtype(_) | Error::Truncated { .. } => {
            LfStatus::Format
        }
        Error::NonFinite { .. } | Error::Overflow(_) | Error::NonFiniteLoss { .. } => LfStatus::Numeric,
        Error::InvalidSpec(_) | Error::InvalidConfig(_) => LfStatus::InvalidArgument,
        _ => LfStatus::Validation,
    }
}

struct Fail(LfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LfStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(LfStatus::NullPointer, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LfStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the calling thread's most recent failure, or NULL.
#[no_mangle]
pub extern "C" fn lf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `n_samples * dim` floats into a new embedding matrix.
///
/// # Safety
/// `data` must point to `n_samples * dim` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_embedding_new(
    n_samples: usize,
    dim: usize,
    data: *const f32,
    out: *mut *mut LfEmbedding,
) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        let len = n_samples
            .checked_mul(dim)
            .ok_or_else(|| Fail(LfStatus::Numeric, "n_samples * dim overflows".into()))?;
        let values = slice_arg(data, len, "data")?.to_vec();
        let m = EmbeddingMatrix::new(n_samples, dim, values)?;
        *out = Box::into_raw(Box::new(LfEmbedding(m)));
        Ok(())
    })
}

/// Reads an embedding file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_embedding_read(path: *const c_char, out: *mut *mut LfEmbedding) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        let m = store::read_embedding_file(path)?;
        *out = Box::into_raw(Box::new(LfEmbedding(m)));
        Ok(())
    })
}

/// Writes an embedding file atomically.
///
/// # Safety
/// `emb` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lf_embedding_write(emb: *const LfEmbedding, path: *const c_char) -> LfStatus {
    guard(|| {
        non_null(emb, "emb")?;
        let path = str_arg(path, "path")?;
        store::write_embedding_file(&(*emb).0, path)?;
        Ok(())
    })
}

/// Reports the matrix shape.
///
/// # Safety
/// `emb` must be a live handle; `n_samples` and `dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_embedding_shape(emb: *const LfEmbedding, n_samples: *mut usize, dim: *mut usize) -> LfStatus {
    guard(|| {
        non_null(emb, "emb")?;
        non_null(n_samples, "n_samples")?;
        non_null(dim, "dim")?;
        *n_samples = (*emb).0.n_samples();
        *dim = (*emb).0.dim();
        Ok(())
    })
}

/// Row-major values, valid for the lifetime of the handle. NULL if `emb` is.
///
/// # Safety
/// `emb` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lf_embedding_data(emb: *const LfEmbedding) -> *const f32 {
    if emb.is_null() {
        return ptr::null();
    }
    (*emb).0.data().as_ptr()
}

/// # Safety
/// `emb` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lf_embedding_free(emb: *mut LfEmbedding) {
    if !emb.is_null() {
        drop(Box::from_raw(emb));
    }
}

/// Bytes needed for `n_samples` rows of the concatenated `dims` as f32.
///
/// # Safety
/// `dims` must point to `n_dims` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_estimate_memory(n_samples: u64, dims: *const usize, n_dims: usize, out: *mut u64) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        let dims = slice_arg(dims, n_dims, "dims")?;
        *out = store::estimate_memory(n_samples, dims)?;
        Ok(())
    })
}

/// Loads and validates a manifest.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_manifest_load(path: *const c_char, out: *mut *mut LfManifest) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        let m = Manifest::load(path)?;
        *out = Box::into_raw(Box::new(LfManifest(m)));
        Ok(())
    })
}

/// Deepest layer recorded for `model`.
///
/// # Safety
/// `manifest` must be a live handle, `model` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lf_manifest_max_layer(manifest: *const LfManifest, model: *const c_char, out: *mut u32) -> LfStatus {
    guard(|| {
        non_null(manifest, "manifest")?;
        non_null(out, "out")?;
        let model = str_arg(model, "model")?;
        *out = (*manifest)
            .0
            .max_layer(model)
            .ok_or_else(|| Fail(LfStatus::InvalidArgument, format!("model '{model}' is not in the manifest")))?;
        Ok(())
    })
}

/// Loads one (split, model, layer) matrix. `split` is 0 for train, 1 for
/// test.
///
/// # Safety
/// `manifest` must be a live handle, `model` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lf_manifest_load_embedding(
    manifest: *const LfManifest,
    split: u32,
    model: *const c_char,
    layer: u32,
    out: *mut *mut LfEmbedding,
) -> LfStatus {
    guard(|| {
        non_null(manifest, "manifest")?;
        non_null(out, "out")?;
        let model = str_arg(model, "model")?;
        let split = match split {
            0 => Split::Train,
            1 => Split::Test,
            other => return Err(Fail(LfStatus::InvalidArgument, format!("split must be 0 or 1, got {other}"))),
        };
        let m = (*manifest).0.load_matrix(split, model, layer)?;
        *out = Box::into_raw(Box::new(LfEmbedding(m)));
        Ok(())
    })
}

/// # Safety
/// `manifest` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lf_manifest_free(manifest: *mut LfManifest) {
    if !manifest.is_null() {
        drop(Box::from_raw(manifest));
    }
}

/// Loads a classifier checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_model_load(path: *const c_char, out: *mut *mut LfModel) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let m = load_checkpoint(path)?;
        *out = Box::into_raw(Box::new(LfModel(m)));
        Ok(())
    })
}

/// Number of output classes, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lf_model_n_classes(model: *const LfModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).0.n_classes()
}

/// Number of embeddings the model fuses per sample, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lf_model_n_inputs(model: *const LfModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).0.input_dims().len()
}

/// Width of input `index`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lf_model_input_dim(model: *const LfModel, index: usize, out: *mut usize) -> LfStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let dims = (*model).0.input_dims();
        *out = *dims.get(index).ok_or_else(|| {
            Fail(LfStatus::InvalidArgument, format!("input index {index} out of range (model has {})", dims.len()))
        })?;
        Ok(())
    })
}

/// Predicts the class of one sample. `inputs[i]` points to
/// `lf_model_input_dim(model, i)` floats.
///
/// # Safety
/// `model` must be a live handle, `inputs` must hold `n_inputs` pointers to
/// correctly sized arrays, and `out_class` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_model_predict(
    model: *const LfModel,
    inputs: *const *const f32,
    n_inputs: usize,
    out_class: *mut usize,
) -> LfStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out_class, "out_class")?;
        let model = &(*model).0;
        let dims = model.input_dims();
        if n_inputs != dims.len() {
            return Err(Fail(
                LfStatus::InvalidArgument,
                format!("model fuses {} inputs, got {n_inputs}", dims.len()),
            ));
        }
        let ptrs = slice_arg(inputs, n_inputs, "inputs")?;
        let rows = ptrs
            .iter()
            .zip(dims)
            .enumerate()
            .map(|(i, (&p, &d))| slice_arg(p, d, &format!("inputs[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        *out_class = predict(model, &rows)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lf_model_free(model: *mut LfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Applies a parameter-free fusion operator to two already-aligned vectors
/// of length `dim`. `method` is one of `concat`, `sum`, `hadamard`,
/// `multiply`, `quaternion` or `all`.
///
/// The result is written to `out` (capacity `out_cap`) and its length to
/// `out_len`. If the buffer is too small, `out_len` receives the required
/// length and `LF_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `a` and `b` must point to `dim` floats, `method` must be a NUL-terminated
/// string, `out` must have room for `out_cap` floats and `out_len` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn lf_fuse_pair(
    method: *const c_char,
    a: *const f32,
    b: *const f32,
    dim: usize,
    out: *mut f32,
    out_cap: usize,
    out_len: *mut usize,
) -> LfStatus {
    guard(|| {
        non_null(out_len, "out_len")?;
        let name = str_arg(method, "method")?;
        let method: FusionMethod = name.parse()?;
        let a = slice_arg(a, dim, "a")?;
        let b = slice_arg(b, dim, "b")?;
        let pair = [a, b];
        let fused = match method {
            FusionMethod::Concat => fusion::fuse_concat(&pair)?,
            FusionMethod::Sum => fusion::fuse_sum(&pair)?,
            FusionMethod::Hadamard => fusion::fuse_hadamard(&pair)?,
            FusionMethod::Multiply => fusion::fuse_multiply(&pair)?,
            FusionMethod::Quaternion => fusion::fuse_quaternion(&pair)?,
            FusionMethod::All => fusion::fuse_all(&pair)?,
            other => {
                return Err(Fail(
                    LfStatus::InvalidArgument,
                    format!("method {other} has learned parameters; use a trained model"),
                ))
            }
        };
        *out_len = fused.len();
        if fused.len() > out_cap {
            return Err(Fail(
                LfStatus::BufferTooSmall,
                format!("output needs {} floats, buffer holds {out_cap}", fused.len()),
            ));
        }
        non_null(out, "out")?;
        ptr::copy_nonoverlapping(fused.as_ptr(), out, fused.len());
        Ok(())
    })
}
