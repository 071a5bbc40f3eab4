//! Synthetic per-layer embeddings with a planted best layer.
//!
//! Every class gets a latent prototype. Each model sees a subset of the
//! latent coordinates through an orthonormal embedding into its own width.
//! A layer's sample is
//!
//! ```text
//! x = s(l) · A u_y  +  nuisance · (1 − s(l)) · z  +  noise · ε
//! ```
//!
//! where `s(l) = decay^|l − peak|` is the layer's signal strength, `z` is
//! class-independent nuisance drawn afresh per layer and `ε` is isotropic
//! noise. At the peak layer the nuisance vanishes, so quality is highest
//! there and degrades with distance; the final layer can be further
//! penalised.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::store::{
    write_embedding_file, write_label_file, EmbeddingMatrix, LabelVector, Manifest, ManifestEntry, Split,
};

/// Which latent coordinates each model observes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Coverage {
    /// Every model sees every latent coordinate.
    Full,
    /// Latent coordinates are split into contiguous, non-overlapping blocks,
    /// one per model.
    Disjoint,
    /// Each model sees a random subset holding `fraction` of the coordinates.
    Random { fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dataset: String,
    pub n_models: usize,
    /// Deepest layer index per model; files are written for `0..=layers`.
    pub layers: Vec<u32>,
    pub dims: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub peak_layer: Vec<u32>,
    /// Standard deviation of the isotropic noise added to every layer.
    pub noise: f64,
    pub seed: u64,
    pub latent_dim: usize,
    /// Standard deviation of prototype coordinates.
    pub separation: f64,
    /// Scale of the class-independent component away from the peak.
    pub nuisance: f64,
    /// Signal retained per layer of distance from the peak, in `[0, 1)`.
    pub decay: f64,
    /// Extra fractional signal loss at the final layer when it isn't the peak.
    pub final_penalty: f64,
    pub coverage: Coverage,
    /// Write the peak layer's matrix for every layer.
    pub identical_layers: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::uniform(2, 12, 16, 8)
    }
}

impl SyntheticSpec {
    /// `n_models` models sharing depth, width and peak layer.
    pub fn uniform(n_models: usize, layers: u32, dim: usize, peak_layer: u32) -> Self {
        Self {
            dataset: "synthetic".into(),
            n_models,
            layers: vec![layers; n_models],
            dims: vec![dim; n_models],
            n_train: 400,
            n_test: 400,
            n_classes: 4,
            peak_layer: vec![peak_layer; n_models],
            noise: 0.1,
            seed: 0,
            latent_dim: 8,
            separation: 1.0,
            nuisance: 3.0,
            decay: 0.7,
            final_penalty: 0.3,
            coverage: Coverage::Full,
            identical_layers: false,
        }
    }

    pub fn model_name(&self, m: usize) -> String {
        format!("m{m}")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_models == 0 {
            return bad("n_models must be at least 1".into());
        }
        for (name, len) in [
            ("layers", self.layers.len()),
            ("dims", self.dims.len()),
            ("peak_layer", self.peak_layer.len()),
        ] {
            if len != self.n_models {
                return bad(format!("{name} has {len} entries for {} models", self.n_models));
            }
        }
        for m in 0..self.n_models {
            let (l, p) = (self.layers[m], self.peak_layer[m]);
            if p < 1 || p > l {
                return bad(format!("peak_layer {p} must lie in 1..={l} (the model's layer count)"));
            }
            if self.dims[m] == 0 {
                return bad("dims must be positive".into());
            }
        }
        if self.n_classes < 2 || self.n_classes > u16::MAX as usize {
            return bad(format!("n_classes must be in 2..=65535, got {}", self.n_classes));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive".into());
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        for (name, v) in [
            ("noise", self.noise),
            ("separation", self.separation),
            ("nuisance", self.nuisance),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.decay) {
            return bad(format!("decay must lie in [0, 1), got {}", self.decay));
        }
        if !(0.0..=1.0).contains(&self.final_penalty) {
            return bad(format!("final_penalty must lie in [0, 1], got {}", self.final_penalty));
        }
        match self.coverage {
            Coverage::Disjoint if self.latent_dim < self.n_models => {
                return bad(format!(
                    "disjoint coverage needs latent_dim >= n_models ({} < {})",
                    self.latent_dim, self.n_models
                ));
            }
            Coverage::Random { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
                return bad(format!("coverage fraction must lie in (0, 1], got {fraction}"));
            }
            _ => {}
        }
        for m in 0..self.n_models {
            let covered = self.covered(m).len();
            if self.dims[m] < covered {
                return bad(format!(
                    "model {m} has dim {} but observes {covered} latent coordinates",
                    self.dims[m]
                ));
            }
        }
        Ok(())
    }

    fn covered(&self, m: usize) -> Vec<usize> {
        let k = self.latent_dim;
        match self.coverage {
            Coverage::Full => (0..k).collect(),
            Coverage::Disjoint => (m * k / self.n_models..(m + 1) * k / self.n_models).collect(),
            Coverage::Random { fraction } => {
                let take = ((fraction * k as f64).round() as usize).clamp(1, k);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("coverage:{m}")));
                let mut all: Vec<usize> = (0..k).collect();
                all.shuffle(&mut rng);
                let mut picked = all[..take].to_vec();
                picked.sort_unstable();
                picked
            }
        }
    }

    /// Signal strength of `layer` for model `m`.
    pub fn signal(&self, m: usize, layer: u32) -> f64 {
        let peak = self.peak_layer[m];
        let mut s = self.decay.powi(layer.abs_diff(peak) as i32);
        if layer == self.layers[m] && layer != peak {
            s *= 1.0 - self.final_penalty;
        }
        s
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `rows × cols` matrix (row-major) with orthonormal columns.
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| gaussian(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (j, b) in basis.iter().enumerate() {
        for (i, x) in b.iter().enumerate() {
            out[i * cols + j] = *x;
        }
    }
    out
}

fn balanced_labels(spec: &SyntheticSpec, split: Split, n: usize) -> Result<LabelVector> {
    let mut labels: Vec<u32> = (0..n).map(|i| (i % spec.n_classes) as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("labels:{split}")));
    labels.shuffle(&mut rng);
    LabelVector::new(spec.n_classes as u32, labels)
}

fn layer_matrix(
    spec: &SyntheticSpec,
    m: usize,
    layer: u32,
    split: Split,
    labels: &LabelVector,
    clean: &[Vec<f64>],
) -> Result<EmbeddingMatrix> {
    let layer = if spec.identical_layers { spec.peak_layer[m] } else { layer };
    let d = spec.dims[m];
    let s = spec.signal(m, layer);
    let nuisance = spec.nuisance * (1.0 - s);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("sample:{m}:{layer}:{split}")));
    let mut data = Vec::with_capacity(labels.n_samples() * d);
    for &y in labels.labels() {
        let mean = &clean[y as usize];
        for v in mean {
            let z = gaussian(&mut rng);
            let e = gaussian(&mut rng);
            data.push((s * v + nuisance * z + spec.noise * e) as f32);
        }
    }
    EmbeddingMatrix::new(labels.n_samples(), d, data)
}

/// Writes embedding files for every (model, layer, split), both label files
/// and `manifest.json` under `out_dir`, and returns the loaded manifest.
pub fn gen_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut proto_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "prototypes"));
    let prototypes: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            (0..spec.latent_dim)
                .map(|_| spec.separation * gaussian(&mut proto_rng))
                .collect()
        })
        .collect();

    let splits = [(Split::Train, spec.n_train), (Split::Test, spec.n_test)];
    let mut label_paths = BTreeMap::new();
    let mut labels = Vec::new();
    for (split, n) in splits {
        let y = balanced_labels(spec, split, n)?;
        let rel = PathBuf::from(format!("labels_{split}.lbl"));
        write_label_file(&y, out_dir.join(&rel))?;
        label_paths.insert(split, rel);
        labels.push((split, y));
    }

    let mut entries = Vec::new();
    for m in 0..spec.n_models {
        let d = spec.dims[m];
        let covered = spec.covered(m);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("mixing:{m}")));
        let a = orthonormal_columns(d, covered.len(), &mut rng);
        // Class means in this model's space, before layer scaling.
        let clean: Vec<Vec<f64>> = prototypes
            .iter()
            .map(|p| {
                (0..d)
                    .map(|i| {
                        covered
                            .iter()
                            .enumerate()
                            .map(|(j, &c)| a[i * covered.len() + j] * p[c])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let name = spec.model_name(m);
        for layer in 0..=spec.layers[m] {
            for (split, y) in &labels {
                let matrix = layer_matrix(spec, m, layer, *split, y, &clean)?;
                let rel = PathBuf::from(format!("{name}_L{layer}_{split}.lef"));
                write_embedding_file(&matrix, out_dir.join(&rel))?;
                entries.push(ManifestEntry {
                    dataset: spec.dataset.clone(),
                    split: *split,
                    model: name.clone(),
                    layer,
                    dim: d,
                    n_samples: y.n_samples(),
                    path: rel,
                });
            }
        }
    }

    let metadata = serde_json::json!({ "generator": "synthetic", "spec": spec });
    let manifest = Manifest::new(out_dir, entries, label_paths).with_metadata(metadata);
    let path = out_dir.join("manifest.json");
    manifest.save(&path)?;
    Manifest::load(&path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_train: 20,
            n_test: 10,
            ..SyntheticSpec::uniform(2, 3, 8, 2)
        }
    }

    #[test]
    fn rejects_peak_outside_layers() {
        let mut s = small();
        s.peak_layer = vec![9, 2];
        assert!(matches!(s.validate(), Err(Error::InvalidConfig(_))));
        s.peak_layer = vec![0, 2];
        assert!(s.validate().is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = gen_synthetic(&small(), a.path()).unwrap();
        gen_synthetic(&small(), b.path()).unwrap();
        assert_eq!(ma.entries().len(), 2 * 4 * 2);
        for e in ma.entries() {
            let x = std::fs::read(a.path().join(&e.path)).unwrap();
            let y = std::fs::read(b.path().join(&e.path)).unwrap();
            assert_eq!(x, y, "{}", e.path.display());
        }
    }

    #[test]
    fn signal_peaks_and_final_layer_is_penalised() {
        let s = SyntheticSpec::uniform(1, 6, 8, 3);
        assert_eq!(s.signal(0, 3), 1.0);
        assert!(s.signal(0, 2) < 1.0);
        assert!((s.signal(0, 6) - 0.7f64.powi(3) * 0.7).abs() < 1e-12);
        let top = SyntheticSpec::uniform(1, 6, 8, 6);
        assert_eq!(top.signal(0, 6), 1.0);
    }

    #[test]
    fn disjoint_blocks_partition_latents() {
        let mut s = SyntheticSpec::uniform(2, 2, 8, 1);
        s.coverage = Coverage::Disjoint;
        assert_eq!(s.covered(0), vec![0, 1, 2, 3]);
        assert_eq!(s.covered(1), vec![4, 5, 6, 7]);
    }

    #[test]
    fn identical_layers_share_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = small();
        s.identical_layers = true;
        let m = gen_synthetic(&s, dir.path()).unwrap();
        let first = m.load_matrix(Split::Train, "m0", 0).unwrap();
        for l in 1..=3 {
            assert_eq!(m.load_matrix(Split::Train, "m0", l).unwrap(), first);
        }
    }

    #[test]
    fn orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = orthonormal_columns(6, 3, &mut rng);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..6).map(|r| a[r * 3 + i] * a[r * 3 + j]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
