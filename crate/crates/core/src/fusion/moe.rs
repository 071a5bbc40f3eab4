use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{relu_backward_in_place, relu_in_place, softmax, Dense, Params, Real};

/// One expert per fused input plus a softmax gate over the concatenated
/// inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct MoeParams<T> {
    pub experts: Vec<Dense<T>>,
    pub gate: Dense<T>,
}

#[derive(Clone, Debug)]
pub struct MoeCache<T> {
    pub joined: Vec<T>,
    pub weights: Vec<T>,
    pub expert_pre: Vec<Vec<T>>,
    pub expert_out: Vec<Vec<T>>,
}

impl<T: Real> MoeParams<T> {
    pub fn init<R: Rng + ?Sized>(n_inputs: usize, dim: usize, rng: &mut R) -> Self {
        let experts = (0..n_inputs).map(|_| Dense::init(dim, dim, rng)).collect();
        let gate = Dense::init(n_inputs * dim, n_inputs, rng);
        Self { experts, gate }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            experts: self.experts.iter().map(Dense::zeros_like).collect(),
            gate: self.gate.zeros_like(),
        }
    }

    pub fn cast<U: Real>(&self) -> MoeParams<U> {
        MoeParams {
            experts: self.experts.iter().map(Dense::cast).collect(),
            gate: self.gate.cast(),
        }
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn forward(&self, projected: &[&[T]]) -> Result<(Vec<T>, MoeCache<T>)> {
        if projected.len() != self.experts.len() {
            return Err(Error::InvalidSpec(format!(
                "moe has {} experts but got {} inputs",
                self.experts.len(),
                projected.len()
            )));
        }
        for (x, e) in projected.iter().zip(&self.experts) {
            if x.len() != e.d_in() {
                return Err(Error::Shape(format!(
                    "moe expert expects dim {}, got {}",
                    e.d_in(),
                    x.len()
                )));
            }
        }
        let joined = projected.concat();
        let weights = softmax(&self.gate.apply(&joined));
        let dim = self.experts.first().map_or(0, Dense::d_out);
        let mut out = vec![T::zero(); dim];
        let mut expert_pre = Vec::with_capacity(projected.len());
        let mut expert_out = Vec::with_capacity(projected.len());
        for ((x, e), &w) in projected.iter().zip(&self.experts).zip(&weights) {
            let pre = e.apply(x);
            let mut act = pre.clone();
            relu_in_place(&mut act);
            for (o, a) in out.iter_mut().zip(&act) {
                *o += w * *a;
            }
            expert_pre.push(pre);
            expert_out.push(act);
        }
        Ok((
            out,
            MoeCache {
                joined,
                weights,
                expert_pre,
                expert_out,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to each projected input.
    pub fn backward(&self, projected: &[&[T]], cache: &MoeCache<T>, dy: &[T], grad: &mut MoeParams<T>) -> Vec<Vec<T>> {
        let n = self.experts.len();
        let dim = dy.len();
        // d out / d weight_i = expert_out_i
        let dw: Vec<T> = cache
            .expert_out
            .iter()
            .map(|e| e.iter().zip(dy).map(|(a, g)| *a * *g).sum())
            .collect();
        let mean: T = cache.weights.iter().zip(&dw).map(|(w, d)| *w * *d).sum();
        let dlogits: Vec<T> = cache
            .weights
            .iter()
            .zip(&dw)
            .map(|(w, d)| *w * (*d - mean))
            .collect();
        let mut djoined = vec![T::zero(); cache.joined.len()];
        self.gate
            .backward(&cache.joined, &dlogits, &mut grad.gate, Some(&mut djoined));

        let mut dinputs: Vec<Vec<T>> = (0..n)
            .map(|i| djoined[i * dim..(i + 1) * dim].to_vec())
            .collect();
        for i in 0..n {
            let w = cache.weights[i];
            let mut dpre: Vec<T> = dy.iter().map(|g| w * *g).collect();
            relu_backward_in_place(&cache.expert_pre[i], &mut dpre);
            self.experts[i].backward(projected[i], &dpre, &mut grad.experts[i], Some(&mut dinputs[i]));
        }
        dinputs
    }
}

impl<T> Params<T> for MoeParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.experts.iter().flat_map(|e| e.tensors()).collect();
        out.extend(self.gate.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self.experts.iter_mut().flat_map(|e| e.tensors_mut()).collect();
        out.extend(self.gate.tensors_mut());
        out
    }
}

/// Gate probabilities alone, for inspection.
pub fn gate_weights<T: Real>(params: &MoeParams<T>, projected: &[&[T]]) -> Result<Vec<T>> {
    Ok(params.forward(projected)?.1.weights)
}
