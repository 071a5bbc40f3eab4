use rand::Rng;

use super::moe::{MoeCache, MoeParams};
use super::ops::{self, fuse_all_backward, fuse_concat_backward, fuse_hadamard_backward, fuse_multiply_backward, fuse_quaternion_backward};
use super::{FusionMethod, FusionSpec};
use crate::error::{Error, Result};
use crate::numeric::{lit, relu_backward_in_place, relu_in_place, Dense, Params, Real};

/// Learnable projections plus one fusion operator: maps raw per-model
/// embeddings to the vector the classifier sees.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionHead<T> {
    method: FusionMethod,
    residual: bool,
    input_dims: Vec<usize>,
    target_dim: Option<usize>,
    fused_dim: usize,
    pub projections: Vec<Dense<T>>,
    pub moe: Option<MoeParams<T>>,
}

#[derive(Clone, Debug)]
pub struct HeadCache<T> {
    pub proj_pre: Vec<Vec<T>>,
    pub projected: Vec<Vec<T>>,
    pub moe: Option<MoeCache<T>>,
}

impl<T: Real> HeadCache<T> {
    /// Smallest |pre-activation| over every ReLU in the head.
    pub fn relu_margin(&self) -> T {
        let moe_pre = self.moe.iter().flat_map(|c| c.expert_pre.iter());
        self.proj_pre
            .iter()
            .chain(moe_pre)
            .flatten()
            .fold(T::infinity(), |m, v| m.min(v.abs()))
    }
}

impl<T: Real> FusionHead<T> {
    pub fn new<R: Rng + ?Sized>(spec: &FusionSpec, input_dims: &[usize], rng: &mut R) -> Result<Self> {
        let shape = spec.resolve(input_dims)?;
        let projections = match shape.target_dim {
            Some(t) => input_dims.iter().map(|&d| Dense::init(d, t, rng)).collect(),
            None => Vec::new(),
        };
        let moe = match (spec.method, shape.target_dim) {
            (FusionMethod::Moe, Some(t)) => Some(MoeParams::init(input_dims.len(), t, rng)),
            _ => None,
        };
        Ok(Self {
            method: spec.method,
            residual: spec.residual,
            input_dims: input_dims.to_vec(),
            target_dim: shape.target_dim,
            fused_dim: shape.fused_dim,
            projections,
            moe,
        })
    }

    pub fn method(&self) -> FusionMethod {
        self.method
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn target_dim(&self) -> Option<usize> {
        self.target_dim
    }

    pub fn fused_dim(&self) -> usize {
        self.fused_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            projections: self.projections.iter().map(Dense::zeros_like).collect(),
            moe: self.moe.as_ref().map(MoeParams::zeros_like),
            input_dims: self.input_dims.clone(),
            ..*self
        }
    }

    pub fn cast<U: Real>(&self) -> FusionHead<U> {
        FusionHead {
            method: self.method,
            residual: self.residual,
            input_dims: self.input_dims.clone(),
            target_dim: self.target_dim,
            fused_dim: self.fused_dim,
            projections: self.projections.iter().map(Dense::cast).collect(),
            moe: self.moe.as_ref().map(MoeParams::cast),
        }
    }

    pub fn check_inputs(&self, inputs: &[&[T]]) -> Result<()> {
        if inputs.len() != self.input_dims.len() {
            return Err(Error::Shape(format!(
                "fusion head expects {} inputs, got {}",
                self.input_dims.len(),
                inputs.len()
            )));
        }
        for (i, (x, &d)) in inputs.iter().zip(&self.input_dims).enumerate() {
            if x.len() != d {
                return Err(Error::Shape(format!("input {i} has dim {}, expected {d}", x.len())));
            }
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &[&[T]]) -> Result<(Vec<T>, HeadCache<T>)> {
        self.check_inputs(inputs)?;
        if !self.method.projects() {
            let fused = inputs.concat();
            let cache = HeadCache {
                proj_pre: Vec::new(),
                projected: Vec::new(),
                moe: None,
            };
            return Ok((fused, cache));
        }

        let mut proj_pre = Vec::with_capacity(inputs.len());
        let mut projected = Vec::with_capacity(inputs.len());
        for (x, p) in inputs.iter().zip(&self.projections) {
            let pre = p.apply(x);
            let mut act = pre.clone();
            relu_in_place(&mut act);
            proj_pre.push(pre);
            projected.push(act);
        }
        let refs: Vec<&[T]> = projected.iter().map(Vec::as_slice).collect();
        let mut moe_cache = None;
        let core = match self.method {
            FusionMethod::Sum => ops::fuse_sum(&refs)?,
            FusionMethod::Hadamard => ops::fuse_hadamard(&refs)?,
            FusionMethod::Multiply => ops::fuse_multiply(&refs)?,
            FusionMethod::Quaternion => ops::fuse_quaternion(&refs)?,
            FusionMethod::All => ops::fuse_all(&refs)?,
            FusionMethod::Moe => {
                let moe = self.moe.as_ref().expect("moe head without moe params");
                let (out, cache) = moe.forward(&refs)?;
                moe_cache = Some(cache);
                out
            }
            FusionMethod::None | FusionMethod::Concat => unreachable!(),
        };
        let fused = if self.residual {
            ops::apply_residual(&core, &refs)?
        } else {
            core
        };
        Ok((
            fused,
            HeadCache {
                proj_pre,
                projected,
                moe: moe_cache,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad`; returns input gradients
    /// when `want_inputs` is set.
    pub fn backward(
        &self,
        inputs: &[&[T]],
        cache: &HeadCache<T>,
        dy: &[T],
        grad: &mut FusionHead<T>,
        want_inputs: bool,
    ) -> Option<Vec<Vec<T>>> {
        if !self.method.projects() {
            return want_inputs.then(|| fuse_concat_backward(&self.input_dims, dy));
        }
        let refs: Vec<&[T]> = cache.projected.iter().map(Vec::as_slice).collect();
        let n = refs.len();
        let mut dproj: Vec<Vec<T>> = match self.method {
            FusionMethod::Sum => ops::fuse_sum_backward(n, dy),
            FusionMethod::Hadamard => fuse_hadamard_backward(&refs, dy),
            FusionMethod::Multiply => {
                let (a, b) = fuse_multiply_backward(refs[0], refs[1], dy);
                vec![a, b]
            }
            FusionMethod::Quaternion => {
                let (a, b) = fuse_quaternion_backward(refs[0], refs[1], dy);
                vec![a, b]
            }
            FusionMethod::All => {
                let (a, b) = fuse_all_backward(refs[0], refs[1], dy);
                vec![a, b]
            }
            FusionMethod::Moe => {
                let moe = self.moe.as_ref().unwrap();
                let moe_cache = cache.moe.as_ref().unwrap();
                moe.backward(&refs, moe_cache, dy, grad.moe.as_mut().unwrap())
            }
            FusionMethod::None | FusionMethod::Concat => unreachable!(),
        };
        if self.residual {
            let inv_n: T = lit(1.0 / n as f64);
            for d in &mut dproj {
                for (dv, g) in d.iter_mut().zip(dy) {
                    *dv += inv_n * *g;
                }
            }
        }

        let mut dinputs = want_inputs.then(|| Vec::with_capacity(n));
        for (i, mut d) in dproj.into_iter().enumerate() {
            relu_backward_in_place(&cache.proj_pre[i], &mut d);
            let p = &self.projections[i];
            match dinputs.as_mut() {
                Some(out) => {
                    let mut dx = vec![T::zero(); p.d_in()];
                    p.backward(inputs[i], &d, &mut grad.projections[i], Some(&mut dx));
                    out.push(dx);
                }
                None => p.backward(inputs[i], &d, &mut grad.projections[i], None),
            }
        }
        dinputs
    }
}

impl<T> Params<T> for FusionHead<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.projections.iter().flat_map(|p| p.tensors()).collect();
        if let Some(m) = &self.moe {
            out.extend(m.tensors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self.projections.iter_mut().flat_map(|p| p.tensors_mut()).collect();
        if let Some(m) = &mut self.moe {
            out.extend(m.tensors_mut());
        }
        out
    }
}
