//! MLP classification head over fused embeddings and its training loop.

mod checkpoint;
mod mlp;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use mlp::{FusionClassifier, ForwardCache, Mlp, MlpCache};

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionSpec;
use crate::numeric::{argmax, AdamConfig, AdamState, Params};
use crate::seed::derive_seed;
use crate::store::{EmbeddingMatrix, LabelVector};

fn default_batch_size() -> usize {
    100
}
fn default_lr() -> f64 {
    1e-4
}
fn default_epochs() -> usize {
    120
}
fn default_hidden() -> usize {
    256
}
fn default_shuffle() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shuffle")]
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            lr: default_lr(),
            epochs: default_epochs(),
            hidden: default_hidden(),
            seed: 0,
            shuffle: default_shuffle(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Aligned per-input embedding matrices plus labels for one split.
#[derive(Clone, Debug)]
pub struct Dataset {
    inputs: Vec<Arc<EmbeddingMatrix>>,
    labels: LabelVector,
}

impl Dataset {
    pub fn new(inputs: Vec<Arc<EmbeddingMatrix>>, labels: LabelVector) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidConfig("dataset needs at least one input matrix".into()));
        }
        let n = labels.n_samples();
        for (i, m) in inputs.iter().enumerate() {
            if m.n_samples() != n {
                return Err(Error::Alignment {
                    split: "dataset".into(),
                    detail: format!("input {i} has {} samples, labels have {n}", m.n_samples()),
                });
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.n_samples()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_classes(&self) -> usize {
        self.labels.n_classes()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.inputs.iter().map(|m| m.dim()).collect()
    }

    pub fn inputs(&self) -> &[Arc<EmbeddingMatrix>] {
        &self.inputs
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> Vec<&[f32]> {
        self.inputs.iter().map(|m| m.row(i)).collect()
    }

    /// Same data with samples reordered by `indices`.
    pub fn permuted(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self
                .inputs
                .iter()
                .map(|m| Arc::new(m.select_rows(indices)))
                .collect(),
            labels: self.labels.select(indices),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

/// A trained (or freshly initialised) fusion classifier with everything
/// needed to resume or reproduce it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub spec: FusionSpec,
    pub config: TrainConfig,
    pub net: FusionClassifier<f32>,
    pub adam: AdamState<f32>,
    pub history: Vec<EpochStats>,
}

impl TrainedModel {
    pub fn n_classes(&self) -> usize {
        self.net.n_classes()
    }

    pub fn input_dims(&self) -> &[usize] {
        self.net.head.input_dims()
    }

    pub fn fused_dim(&self) -> usize {
        self.net.head.fused_dim()
    }

    /// `epoch,loss,train_acc` rows.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc\n");
        for h in &self.history {
            let _ = writeln!(out, "{},{:.6},{:.4}", h.epoch, h.loss, h.train_acc);
        }
        out
    }
}

pub fn init_model(input_dims: &[usize], n_classes: usize, spec: &FusionSpec, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if n_classes < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 classes, got {n_classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init"));
    let net = FusionClassifier::init(spec, input_dims, config.hidden, n_classes, &mut rng)?;
    let adam = AdamState::new(&net, config.adam());
    Ok(TrainedModel {
        spec: spec.clone(),
        config: config.clone(),
        net,
        adam,
        history: Vec::new(),
    })
}

fn epoch_order(n: usize, config: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if config.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("epoch:{epoch}")));
        order.shuffle(&mut rng);
    }
    order
}

fn scale_grads(grad: &mut FusionClassifier<f32>, factor: f32) {
    for t in grad.tensors_mut() {
        for v in t {
            *v *= factor;
        }
    }
}

fn zero_grads(grad: &mut FusionClassifier<f32>) {
    for t in grad.tensors_mut() {
        t.fill(0.0);
    }
}

/// Mini-batch Adam over `epochs × ⌈N / batch⌉` steps, gradients flowing
/// through the MLP, the fusion operator and the projections. The final
/// partial batch is kept.
pub fn train(data: &Dataset, config: &TrainConfig, spec: &FusionSpec) -> Result<TrainedModel> {
    let mut model = init_model(&data.input_dims(), data.n_classes(), spec, config)?;
    continue_training(&mut model, data)?;
    Ok(model)
}

/// Runs the configured number of epochs on an initialised model.
pub fn continue_training(model: &mut TrainedModel, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    model.net.head.check_inputs(&data.sample(0))?;
    if data.n_classes() != model.n_classes() {
        return Err(Error::Shape(format!(
            "model has {} classes, labels declare {}",
            model.n_classes(),
            data.n_classes()
        )));
    }
    let config = model.config.clone();
    let n = data.len();
    let mut grad = model.net.zeros_like();
    let start = model.history.len();
    for epoch in start..start + config.epochs {
        let order = epoch_order(n, &config, epoch);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            zero_grads(&mut grad);
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let label = data.labels.get(i);
                let (loss, logits, _) = model.net.loss_and_grad(&data.sample(i), label, &mut grad, false)?;
                batch_loss += loss as f64;
                if argmax(&logits) == label {
                    correct += 1;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: b });
            }
            loss_sum += batch_loss;
            scale_grads(&mut grad, 1.0 / batch.len() as f32);
            model.adam.step(&mut model.net, &grad);
        }
        model.history.push(EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
        });
    }
    Ok(())
}

/// Argmax class for one sample; ties go to the lowest class id.
pub fn predict(model: &TrainedModel, inputs: &[&[f32]]) -> Result<usize> {
    Ok(argmax(&model.net.logits(inputs)?))
}

pub fn predictions(model: &TrainedModel, data: &Dataset) -> Result<Vec<usize>> {
    if let Some(first) = (!data.is_empty()).then(|| data.sample(0)) {
        model.net.head.check_inputs(&first)?;
    }
    (0..data.len()).map(|i| predict(model, &data.sample(i))).collect()
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate(model: &TrainedModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("cannot evaluate on an empty dataset".into()));
    }
    let preds = predictions(model, data)?;
    let correct = preds
        .iter()
        .zip(data.labels.labels())
        .filter(|(p, l)| **p == **l as usize)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
