use rand::Rng;

use crate::error::Result;
use crate::fusion::{FusionHead, FusionSpec, HeadCache};
use crate::numeric::{relu_backward_in_place, relu_in_place, softmax_cross_entropy, Dense, Params, Real};

/// Two-layer perceptron: `d_in → hidden (ReLU) → n_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layer1: Dense<T>,
    pub layer2: Dense<T>,
}

#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    pub hidden_pre: Vec<T>,
    pub hidden: Vec<T>,
}

impl<T: Real> Mlp<T> {
    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, n_classes: usize, rng: &mut R) -> Self {
        Self {
            layer1: Dense::init(d_in, hidden, rng),
            layer2: Dense::init(hidden, n_classes, rng),
        }
    }

    pub fn d_in(&self) -> usize {
        self.layer1.d_in()
    }

    pub fn hidden(&self) -> usize {
        self.layer1.d_out()
    }

    pub fn n_classes(&self) -> usize {
        self.layer2.d_out()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layer1: self.layer1.zeros_like(),
            layer2: self.layer2.zeros_like(),
        }
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layer1: self.layer1.cast(),
            layer2: self.layer2.cast(),
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, MlpCache<T>) {
        let hidden_pre = self.layer1.apply(x);
        let mut hidden = hidden_pre.clone();
        relu_in_place(&mut hidden);
        let logits = self.layer2.apply(&hidden);
        (logits, MlpCache { hidden_pre, hidden })
    }

    pub fn backward(&self, x: &[T], cache: &MlpCache<T>, dlogits: &[T], grad: &mut Mlp<T>, want_dx: bool) -> Option<Vec<T>> {
        let mut dh = vec![T::zero(); self.hidden()];
        self.layer2.backward(&cache.hidden, dlogits, &mut grad.layer2, Some(&mut dh));
        relu_backward_in_place(&cache.hidden_pre, &mut dh);
        if want_dx {
            let mut dx = vec![T::zero(); self.d_in()];
            self.layer1.backward(x, &dh, &mut grad.layer1, Some(&mut dx));
            Some(dx)
        } else {
            self.layer1.backward(x, &dh, &mut grad.layer1, None);
            None
        }
    }
}

impl<T> Params<T> for Mlp<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut out = self.layer1.tensors();
        out.extend(self.layer2.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.layer1.tensors_mut();
        out.extend(self.layer2.tensors_mut());
        out
    }
}

/// Full network: fusion head followed by the MLP classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionClassifier<T> {
    pub head: FusionHead<T>,
    pub mlp: Mlp<T>,
}

#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub head: HeadCache<T>,
    pub fused: Vec<T>,
    pub mlp: MlpCache<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Smallest |pre-activation| over every ReLU in the network.
    pub fn relu_margin(&self) -> T {
        let mlp = self
            .mlp
            .hidden_pre
            .iter()
            .fold(T::infinity(), |m, v| m.min(v.abs()));
        mlp.min(self.head.relu_margin())
    }
}

impl<T: Real> FusionClassifier<T> {
    /// Parameters are drawn from `rng` in a fixed order: projections, MoE,
    /// then the MLP.
    pub fn init<R: Rng + ?Sized>(
        spec: &FusionSpec,
        input_dims: &[usize],
        hidden: usize,
        n_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let head = FusionHead::new(spec, input_dims, rng)?;
        let mlp = Mlp::init(head.fused_dim(), hidden, n_classes, rng);
        Ok(Self { head, mlp })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            head: self.head.zeros_like(),
            mlp: self.mlp.zeros_like(),
        }
    }

    pub fn cast<U: Real>(&self) -> FusionClassifier<U> {
        FusionClassifier {
            head: self.head.cast(),
            mlp: self.mlp.cast(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.mlp.n_classes()
    }

    pub fn forward(&self, inputs: &[&[T]]) -> Result<(Vec<T>, ForwardCache<T>)> {
        let (fused, head) = self.head.forward(inputs)?;
        let (logits, mlp) = self.mlp.forward(&fused);
        Ok((logits, ForwardCache { head, fused, mlp }))
    }

    pub fn logits(&self, inputs: &[&[T]]) -> Result<Vec<T>> {
        Ok(self.forward(inputs)?.0)
    }

    /// Cross-entropy loss for one sample; accumulates parameter gradients
    /// into `grad` and returns `(loss, logits, input gradients if requested)`.
    pub fn loss_and_grad(
        &self,
        inputs: &[&[T]],
        label: usize,
        grad: &mut FusionClassifier<T>,
        want_inputs: bool,
    ) -> Result<(T, Vec<T>, Option<Vec<Vec<T>>>)> {
        let (logits, cache) = self.forward(inputs)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, label)?;
        let dfused = self
            .mlp
            .backward(&cache.fused, &cache.mlp, &dlogits, &mut grad.mlp, true)
            .unwrap();
        let dinputs = self
            .head
            .backward(inputs, &cache.head, &dfused, &mut grad.head, want_inputs);
        Ok((loss, logits, dinputs))
    }

    pub fn loss(&self, inputs: &[&[T]], label: usize) -> Result<T> {
        let logits = self.logits(inputs)?;
        Ok(softmax_cross_entropy(&logits, label)?.0)
    }
}

impl<T> Params<T> for FusionClassifier<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut out = self.head.tensors();
        out.extend(self.mlp.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.head.tensors_mut();
        out.extend(self.mlp.tensors_mut());
        out
    }
}
