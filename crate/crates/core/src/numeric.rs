//! Dense numeric kernel shared by every learnable component: affine maps,
//! ReLU, softmax cross-entropy, Adam, and finite-difference gradients.
//!
//! Everything is generic over [`Real`] so training can run in `f32` while
//! gradient checks run in `f64`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Default + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + 'static
{
}

#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).unwrap()
}

/// Affine map `y = W x + b` with `W` stored row-major as `d_out × d_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    d_in: usize,
    d_out: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            weight: vec![T::zero(); d_in * d_out],
            bias: vec![T::zero(); d_out],
        }
    }

    pub fn from_parts(d_in: usize, d_out: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != d_in * d_out || bias.len() != d_out {
            return Err(Error::Shape(format!(
                "dense {d_out}x{d_in} needs {} weights and {d_out} biases, got {} and {}",
                d_in * d_out,
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Shape("dense parameters must be finite".into()));
        }
        Ok(Self {
            d_in,
            d_out,
            weight,
            bias,
        })
    }

    pub fn identity(d: usize) -> Self {
        let mut p = Self::zeros(d, d);
        for i in 0..d {
            p.weight[i * d + i] = T::one();
        }
        p
    }

    /// Uniform init in ±sqrt(6 / (d_in + d_out)) with zero biases.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = init_bound(d_in, d_out);
        let weight = (0..d_in * d_out)
            .map(|_| lit(rng.random_range(-bound..=bound)))
            .collect();
        Self {
            d_in,
            d_out,
            weight,
            bias: vec![T::zero(); d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.d_in, self.d_out)
    }

    pub fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            d_in: self.d_in,
            d_out: self.d_out,
            weight: self.weight.iter().map(|v| U::from(*v).unwrap()).collect(),
            bias: self.bias.iter().map(|v| U::from(*v).unwrap()).collect(),
        }
    }

    /// Unchecked forward into a caller-provided buffer.
    pub(crate) fn forward_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.d_in);
        debug_assert_eq!(out.len(), self.d_out);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weight[i * self.d_in..(i + 1) * self.d_in];
            let mut acc = self.bias[i];
            for (w, xv) in row.iter().zip(x) {
                acc += *w * *xv;
            }
            *o = acc;
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.d_out];
        self.forward_into(x, &mut out);
        out
    }

    /// Accumulates `dW += dy xᵀ`, `db += dy`, and, when requested,
    /// `dx += Wᵀ dy`.
    pub fn backward(&self, x: &[T], dy: &[T], grad: &mut Dense<T>, dx: Option<&mut [T]>) {
        debug_assert_eq!(dy.len(), self.d_out);
        for (i, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grad.bias[i] += g;
            let row = &mut grad.weight[i * self.d_in..(i + 1) * self.d_in];
            for (w, xv) in row.iter_mut().zip(x) {
                *w += g * *xv;
            }
        }
        if let Some(dx) = dx {
            for (i, &g) in dy.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                let row = &self.weight[i * self.d_in..(i + 1) * self.d_in];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * *w;
                }
            }
        }
    }
}

pub fn init_bound(d_in: usize, d_out: usize) -> f64 {
    (6.0 / (d_in + d_out) as f64).sqrt()
}

pub fn linear_forward<T: Real>(x: &[T], p: &Dense<T>) -> Result<Vec<T>> {
    if x.len() != p.d_in {
        return Err(Error::Shape(format!(
            "linear layer expects input dim {}, got {}",
            p.d_in,
            x.len()
        )));
    }
    Ok(p.apply(x))
}

pub fn relu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

pub fn relu_in_place<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` by the sign of the pre-activation.
pub fn relu_backward_in_place<T: Real>(pre: &[T], grad: &mut [T]) {
    for (g, &z) in grad.iter_mut().zip(pre) {
        if z <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = out.iter().copied().sum();
    for v in &mut out {
        *v = *v / total;
    }
    out
}

/// Returns `(-log softmax(logits)[label], softmax(logits) - onehot(label))`.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if logits.len() < 2 {
        return Err(Error::Shape(format!(
            "cross-entropy needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            index: 0,
            label: label as u32,
            n_classes: logits.len() as u32,
        });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum_exp: T = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_z = max + sum_exp.ln();
    let loss = log_z - logits[label];
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - log_z).exp()).collect();
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// First index of the maximum; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Anything that exposes its trainable tensors in a fixed order.
pub trait Params<T> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<T>
    where
        T: Copy,
    {
        self.tensors().concat()
    }

    fn assign_flat(&mut self, flat: &[T])
    where
        T: Copy,
    {
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }
}

impl<T> Params<T> for Dense<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for every tensor of one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<P: Params<T> + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            config,
            t: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One bias-corrected Adam update of `params` using `grads`.
    pub fn step<P: Params<T> + ?Sized>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let beta1: T = lit(c.beta1);
        let beta2: T = lit(c.beta2);
        let one_m_b1 = T::one() - beta1;
        let one_m_b2 = T::one() - beta2;
        let bc1 = T::one() - beta1.powi(t);
        let bc2 = T::one() - beta2.powi(t);
        let lr: T = lit(c.lr);
        let eps: T = lit(c.eps);

        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        assert_eq!(params.len(), self.m.len(), "adam state does not match parameters");
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + one_m_b1 * gi;
                v[i] = beta2 * v[i] + one_m_b2 * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(eps > 0.0, "finite difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both are (numerically) zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}
