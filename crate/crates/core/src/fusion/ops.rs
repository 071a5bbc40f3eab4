//! Stateless fusion operators and their vector-Jacobian products.
//!
//! Forward functions validate their inputs and return `Result`; the matching
//! `*_backward` functions assume the forward call succeeded with the same
//! operands and return one gradient per input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{linear_forward, lit, relu, Dense, Real};

pub fn project<T: Real>(embedding: &[T], p: &Dense<T>) -> Result<Vec<T>> {
    Ok(relu(&linear_forward(embedding, p)?))
}

fn same_dims<T>(inputs: &[&[T]], op: &str) -> Result<usize> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidSpec(format!("{op} needs at least one input")))?;
    let d = first.len();
    if let Some(bad) = inputs.iter().position(|x| x.len() != d) {
        return Err(Error::Shape(format!(
            "{op}: input {bad} has dim {}, expected {d}",
            inputs[bad].len()
        )));
    }
    Ok(d)
}

fn pair<'a, T>(inputs: &[&'a [T]], op: &str) -> Result<(&'a [T], &'a [T])> {
    match inputs {
        [a, b] => {
            if a.len() != b.len() {
                return Err(Error::Shape(format!(
                    "{op}: operand dims differ ({} vs {})",
                    a.len(),
                    b.len()
                )));
            }
            Ok((a, b))
        }
        _ => Err(Error::InvalidSpec(format!(
            "{op} fuses exactly 2 inputs, got {}",
            inputs.len()
        ))),
    }
}

pub fn fuse_concat<T: Real>(inputs: &[&[T]]) -> Result<Vec<T>> {
    if inputs.len() < 2 {
        return Err(Error::InvalidSpec(format!(
            "concat needs at least 2 inputs, got {}",
            inputs.len()
        )));
    }
    Ok(inputs.concat())
}

/// Splits `dy` back into per-input slices of the given dims.
pub fn fuse_concat_backward<T: Real>(dims: &[usize], dy: &[T]) -> Vec<Vec<T>> {
    let mut offset = 0;
    dims.iter()
        .map(|&d| {
            let part = dy[offset..offset + d].to_vec();
            offset += d;
            part
        })
        .collect()
}

pub fn fuse_sum<T: Real>(inputs: &[&[T]]) -> Result<Vec<T>> {
    let d = same_dims(inputs, "sum")?;
    let mut out = vec![T::zero(); d];
    for x in inputs {
        for (o, v) in out.iter_mut().zip(x.iter()) {
            *o += *v;
        }
    }
    Ok(out)
}

pub fn fuse_sum_backward<T: Real>(n_inputs: usize, dy: &[T]) -> Vec<Vec<T>> {
    vec![dy.to_vec(); n_inputs]
}

pub fn fuse_hadamard<T: Real>(inputs: &[&[T]]) -> Result<Vec<T>> {
    let d = same_dims(inputs, "hadamard")?;
    let mut out = vec![T::one(); d];
    for x in inputs {
        for (o, v) in out.iter_mut().zip(x.iter()) {
            *o *= *v;
        }
    }
    Ok(out)
}

/// Each input's gradient is `dy` times the product of the *other* inputs.
pub fn fuse_hadamard_backward<T: Real>(inputs: &[&[T]], dy: &[T]) -> Vec<Vec<T>> {
    (0..inputs.len())
        .map(|i| {
            let mut g = dy.to_vec();
            for (j, x) in inputs.iter().enumerate() {
                if j != i {
                    for (gv, xv) in g.iter_mut().zip(x.iter()) {
                        *gv *= *xv;
                    }
                }
            }
            g
        })
        .collect()
}

/// Side length `s` with `s * s == d`, if any.
pub fn square_side(d: usize) -> Option<usize> {
    let s = (d as f64).sqrt().round() as usize;
    (s * s == d && d > 0).then_some(s)
}

fn matmul_square<T: Real>(a: &[T], b: &[T], s: usize) -> Vec<T> {
    let mut out = vec![T::zero(); s * s];
    for i in 0..s {
        for k in 0..s {
            let aik = a[i * s + k];
            if aik == T::zero() {
                continue;
            }
            let brow = &b[k * s..(k + 1) * s];
            let orow = &mut out[i * s..(i + 1) * s];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * *bv;
            }
        }
    }
    out
}

/// Reshape both operands to `s × s` (row-major), multiply, flatten.
pub fn fuse_multiply<T: Real>(inputs: &[&[T]]) -> Result<Vec<T>> {
    let (a, b) = pair(inputs, "multiply")?;
    let s = square_side(a.len()).ok_or_else(|| {
        Error::InvalidSpec(format!(
            "multiply needs a perfect-square dim, got {}",
            a.len()
        ))
    })?;
    Ok(matmul_square(a, b, s))
}

/// For `C = A B`: `dA = dC Bᵀ`, `dB = Aᵀ dC`.
pub fn fuse_multiply_backward<T: Real>(a: &[T], b: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
    let s = square_side(a.len()).expect("multiply backward on non-square dim");
    let mut da = vec![T::zero(); s * s];
    let mut db = vec![T::zero(); s * s];
    for i in 0..s {
        for j in 0..s {
            let g = dy[i * s + j];
            if g == T::zero() {
                continue;
            }
            for k in 0..s {
                da[i * s + k] += g * b[k * s + j];
                db[k * s + j] += a[i * s + k] * g;
            }
        }
    }
    (da, db)
}

/// Hamilton product of `p = (w, x, y, z)` and `q`.
#[inline]
pub fn hamilton<T: Real>(p: [T; 4], q: [T; 4]) -> [T; 4] {
    let [a1, b1, c1, d1] = p;
    let [a2, b2, c2, d2] = q;
    [
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ]
}

fn quat<T: Copy>(v: &[T], k: usize) -> [T; 4] {
    [v[4 * k], v[4 * k + 1], v[4 * k + 2], v[4 * k + 3]]
}

/// Blockwise Hamilton product over consecutive groups of 4 components.
pub fn fuse_quaternion<T: Real>(inputs: &[&[T]]) -> Result<Vec<T>> {
    let (a, b) = pair(inputs, "quaternion")?;
    if a.is_empty() || a.len() % 4 != 0 {
        return Err(Error::InvalidSpec(format!(
            "quaternion needs a dim divisible by 4, got {}",
            a.len()
        )));
    }
    let mut out = Vec::with_capacity(a.len());
    for k in 0..a.len() / 4 {
        out.extend_from_slice(&hamilton(quat(a, k), quat(b, k)));
    }
    Ok(out)
}

pub fn fuse_quaternion_backward<T: Real>(a: &[T], b: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
    let mut da = Vec::with_capacity(a.len());
    let mut db = Vec::with_capacity(b.len());
    for k in 0..a.len() / 4 {
        let [a1, b1, c1, d1] = quat(a, k);
        let [a2, b2, c2, d2] = quat(b, k);
        let [gw, gx, gy, gz] = quat(dy, k);
        da.extend_from_slice(&[
            gw * a2 + gx * b2 + gy * c2 + gz * d2,
            -gw * b2 + gx * a2 - gy * d2 + gz * c2,
            -gw * c2 + gx * d2 + gy * a2 - gz * b2,
            -gw * d2 - gx * c2 + gy * b2 + gz * a2,
        ]);
        db.extend_from_slice(&[
            gw * a1 + gx * b1 + gy * c1 + gz * d1,
            -gw * b1 + gx * a1 + gy * d1 - gz * c1,
            -gw * c1 - gx * d1 + gy * a1 + gz * b1,
            -gw * d1 + gx * c1 - gy * b1 + gz * a1,
        ]);
    }
    (da, db)
}

/// Sum, Hadamard, multiply and quaternion outputs concatenated in that order.
pub fn fuse_all<T: Real>(inputs: &[&[T]]) -> Result<Vec<T>> {
    let (a, _) = pair(inputs, "all")?;
    let d = a.len();
    let mut out = Vec::with_capacity(4 * d);
    out.extend(fuse_sum(inputs)?);
    out.extend(fuse_hadamard(inputs)?);
    out.extend(fuse_multiply(inputs)?);
    out.extend(fuse_quaternion(inputs)?);
    Ok(out)
}

pub fn fuse_all_backward<T: Real>(a: &[T], b: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
    let d = a.len();
    let block = |k: usize| &dy[k * d..(k + 1) * d];
    let inputs = [a, b];
    let mut da = block(0).to_vec();
    let mut db = block(0).to_vec();
    let h = fuse_hadamard_backward(&inputs, block(1));
    let (ma, mb) = fuse_multiply_backward(a, b, block(2));
    let (qa, qb) = fuse_quaternion_backward(a, b, block(3));
    for i in 0..d {
        da[i] += h[0][i] + ma[i] + qa[i];
        db[i] += h[1][i] + mb[i] + qb[i];
    }
    (da, db)
}

/// `fused + mean(projected)`.
pub fn apply_residual<T: Real>(fused: &[T], projected: &[&[T]]) -> Result<Vec<T>> {
    let d = same_dims(projected, "residual")?;
    if fused.len() != d {
        return Err(Error::InvalidSpec(format!(
            "residual needs a fused dim equal to the projected dim {d}, got {}; \
             use the non-residual variant for concat and all",
            fused.len()
        )));
    }
    let inv_n: T = lit(1.0 / projected.len() as f64);
    let mut out = fused.to_vec();
    for x in projected {
        for (o, v) in out.iter_mut().zip(x.iter()) {
            *o += inv_n * *v;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateMode {
    Mean,
    Max,
    Min,
}

impl AggregateMode {
    pub const ALL: [AggregateMode; 3] = [AggregateMode::Mean, AggregateMode::Max, AggregateMode::Min];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregateMode::Mean => "mean",
            AggregateMode::Max => "max",
            AggregateMode::Min => "min",
        }
    }
}

impl std::fmt::Display for AggregateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AggregateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" | "avg" | "average" => Ok(AggregateMode::Mean),
            "max" => Ok(AggregateMode::Max),
            "min" => Ok(AggregateMode::Min),
            other => Err(Error::InvalidConfig(format!(
                "unknown aggregation mode '{other}' (expected mean, max, min)"
            ))),
        }
    }
}

/// Elementwise mean/max/min across several layers' embeddings of one sample.
pub fn aggregate_layers<T: Real>(layers: &[&[T]], mode: AggregateMode) -> Result<Vec<T>> {
    if layers.is_empty() {
        return Err(Error::InvalidConfig("aggregate_layers needs at least one layer".into()));
    }
    let d = same_dims(layers, "aggregate_layers")?;
    let mut out = layers[0].to_vec();
    for x in &layers[1..] {
        for (o, &v) in out.iter_mut().zip(x.iter()) {
            *o = match mode {
                AggregateMode::Mean => *o + v,
                AggregateMode::Max => o.max(v),
                AggregateMode::Min => o.min(v),
            };
        }
    }
    if mode == AggregateMode::Mean {
        let inv: T = lit(1.0 / layers.len() as f64);
        for o in &mut out[..d] {
            *o *= inv;
        }
    }
    Ok(out)
}
