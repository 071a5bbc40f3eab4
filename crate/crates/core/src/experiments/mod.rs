//! Experiment drivers: single-layer sweeps, multi-layer aggregation sweeps,
//! two-model fusion grids and N-model concatenation sweeps, plus the
//! synthetic data generator and result tables.
//!
//! Every grid is expanded into independent [`Cell`]s. A cell's training
//! seed is derived from the global seed and the cell's key, so results do
//! not depend on execution order or on how many cells run in parallel.

mod report;
mod synthetic;

pub use report::{emit_report, format_accuracy, parse_csv, read_csv, render_csv, render_json, write_timings, ReportFormat};
pub use synthetic::{gen_synthetic, Coverage, SyntheticSpec};

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate, train, Dataset, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::fusion::{AggregateMode, FusionMethod, FusionSpec, InputRef, LayerRef};
use crate::seed::derive_seed;
use crate::store::{estimate_memory, EmbeddingMatrix, Manifest, Split};

/// Layer aggregation applied to a single input before training: the last
/// `k` available layers up to and including the input's layer are combined
/// elementwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Aggregation {
    pub mode: AggregateMode,
    pub k: usize,
}

/// One train-and-evaluate run.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub spec: FusionSpec,
    pub aggregation: Option<Aggregation>,
}

impl Cell {
    pub fn new(spec: FusionSpec) -> Self {
        Self {
            spec,
            aggregation: None,
        }
    }

    /// Stable identity used for seeding. Aggregation mode and depth are
    /// deliberately left out: rows of one multi-layer sweep share a seed, so
    /// their differences come from the data alone, and `k = 1` coincides
    /// with the plain single-layer run.
    pub fn key(&self, dataset: &str) -> String {
        let mut key = format!(
            "{dataset}|{}|{}",
            self.spec.inputs_label(),
            self.spec.method_label()
        );
        if let Some(t) = self.spec.target_dim {
            key.push_str(&format!("|d={t}"));
        }
        key
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dataset: String,
    pub inputs: Vec<InputRef>,
    pub method: FusionMethod,
    pub residual: bool,
    pub aggregation: Option<Aggregation>,
    /// Test accuracy; `None` when the cell failed.
    pub accuracy: Option<f64>,
    /// Width of the vector handed to the classifier.
    pub fused_dim: Option<usize>,
    /// Bytes to hold the training split of every source embedding.
    pub memory_bytes: Option<u64>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none() && self.accuracy.is_some()
    }

    pub fn inputs_label(&self) -> String {
        self.inputs.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("+")
    }

    pub fn method_label(&self) -> String {
        if self.residual {
            format!("{}(R)", self.method)
        } else {
            self.method.to_string()
        }
    }
}

/// Accuracy spread over all successful rows fusing `size` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SizeSummary {
    pub size: usize,
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Index of the most accurate successful row; ties go to the earliest.
    pub fn best(&self) -> Option<usize> {
        self.best_where(|_| true)
    }

    pub fn best_where(&self, keep: impl Fn(&SweepRow) -> bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in self.rows.iter().enumerate() {
            if let (Some(acc), true) = (row.accuracy, keep(row)) {
                if best.is_none_or(|(_, b)| acc > b) {
                    best = Some((i, acc));
                }
            }
        }
        best.map(|(i, _)| i)
    }

    /// Layer of the best single-input row for `model`.
    pub fn argmax_layer(&self, model: &str) -> Option<(u32, f64)> {
        let i = self.best_where(|r| r.inputs.len() == 1 && r.inputs[0].model == model && r.aggregation.is_none())?;
        let row = &self.rows[i];
        Some((row.inputs[0].layer.index()?, row.accuracy?))
    }

    pub fn size_summary(&self) -> Vec<SizeSummary> {
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for row in &self.rows {
            if let Some(acc) = row.accuracy {
                groups.entry(row.inputs.len()).or_default().push(acc);
            }
        }
        groups
            .into_iter()
            .map(|(size, accs)| {
                let n = accs.len();
                let mean = accs.iter().sum::<f64>() / n as f64;
                let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
                SizeSummary {
                    size,
                    n,
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect()
    }
}

/// Two-model grid over layer choices, methods and residual flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairGrid {
    pub models: [String; 2],
    pub layers: [Vec<LayerRef>; 2],
    pub methods: Vec<FusionMethod>,
    pub residuals: Vec<bool>,
    #[serde(default)]
    pub target_dim: Option<usize>,
}

type CacheKey = (Split, String, u32);

/// Runs cells against one manifest, sharing loaded matrices between cells.
pub struct Runner<'a> {
    manifest: &'a Manifest,
    config: TrainConfig,
    jobs: usize,
    cache: Mutex<HashMap<CacheKey, Arc<EmbeddingMatrix>>>,
}

impl<'a> Runner<'a> {
    /// `config.seed` acts as the global seed from which cell seeds derive.
    pub fn new(manifest: &'a Manifest, config: TrainConfig) -> Self {
        Self {
            manifest,
            config,
            jobs: 1,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Number of cells trained concurrently (at least 1).
    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    pub fn manifest(&self) -> &Manifest {
        self.manifest
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Replaces `last` with the model's deepest layer.
    pub fn resolve_input(&self, input: &InputRef) -> Result<InputRef> {
        let layer = match input.layer {
            LayerRef::Index(l) => l,
            LayerRef::Last => self
                .manifest
                .max_layer(&input.model)
                .ok_or_else(|| Error::Manifest(format!("model '{}' is not in the manifest", input.model)))?,
        };
        Ok(InputRef::at(input.model.clone(), layer))
    }

    pub fn resolve_spec(&self, spec: &FusionSpec) -> Result<FusionSpec> {
        let inputs = spec
            .inputs
            .iter()
            .map(|i| self.resolve_input(i))
            .collect::<Result<_>>()?;
        Ok(FusionSpec { inputs, ..spec.clone() })
    }

    /// Training config for a cell: the shared config with the cell's seed.
    pub fn cell_config(&self, cell: &Cell) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.config.seed, &cell.key(self.manifest.dataset())),
            ..self.config.clone()
        }
    }

    fn matrix(&self, split: Split, model: &str, layer: u32) -> Result<Arc<EmbeddingMatrix>> {
        let key = (split, model.to_string(), layer);
        if let Some(m) = self.cache.lock().unwrap().get(&key) {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(self.manifest.load_matrix(split, model, layer)?);
        self.cache.lock().unwrap().insert(key, Arc::clone(&m));
        Ok(m)
    }

    /// Layers aggregated for `input` under `agg`: the last `k` available
    /// layers at or below the input's layer.
    fn window(&self, input: &InputRef, agg: &Aggregation) -> Result<Vec<u32>> {
        let top = input
            .layer
            .index()
            .ok_or_else(|| Error::InvalidSpec("unresolved layer".into()))?;
        let below: Vec<u32> = self
            .manifest
            .layers(&input.model, Split::Train)
            .into_iter()
            .filter(|&l| l <= top)
            .collect();
        if agg.k == 0 {
            return Err(Error::InvalidConfig("aggregation k must be at least 1".into()));
        }
        if below.len() < agg.k {
            return Err(Error::InvalidConfig(format!(
                "{input} has {} layers available, k = {}",
                below.len(),
                agg.k
            )));
        }
        Ok(below[below.len() - agg.k..].to_vec())
    }

    fn input_matrix(&self, split: Split, input: &InputRef, agg: Option<&Aggregation>) -> Result<Arc<EmbeddingMatrix>> {
        let top = input
            .layer
            .index()
            .ok_or_else(|| Error::InvalidSpec("unresolved layer".into()))?;
        let Some(agg) = agg else {
            return self.matrix(split, &input.model, top);
        };
        let layers = self.window(input, agg)?;
        let mats = layers
            .iter()
            .map(|&l| self.matrix(split, &input.model, l))
            .collect::<Result<Vec<_>>>()?;
        if mats.len() == 1 {
            return Ok(Arc::clone(&mats[0]));
        }
        Ok(Arc::new(aggregate_matrices(&mats, agg.mode)?))
    }

    /// Source dims per input, counting every aggregated layer.
    fn source_dims(&self, cell: &Cell) -> Result<Vec<usize>> {
        let mut dims = Vec::new();
        for input in &cell.spec.inputs {
            let layer = input
                .layer
                .index()
                .ok_or_else(|| Error::InvalidSpec("unresolved layer".into()))?;
            let d = self.manifest.require(Split::Train, &input.model, layer)?.dim;
            let copies = match &cell.aggregation {
                Some(agg) => self.window(input, agg)?.len(),
                None => 1,
            };
            dims.extend(std::iter::repeat_n(d, copies));
        }
        Ok(dims)
    }

    pub fn datasets(&self, cell: &Cell) -> Result<(Dataset, Dataset)> {
        let load = |split| -> Result<Dataset> {
            let inputs = cell
                .spec
                .inputs
                .iter()
                .map(|i| self.input_matrix(split, i, cell.aggregation.as_ref()))
                .collect::<Result<Vec<_>>>()?;
            Dataset::new(inputs, self.manifest.load_labels(split)?)
        };
        Ok((load(Split::Train)?, load(Split::Test)?))
    }

    /// Trains and evaluates one cell, returning the model and its row.
    pub fn train_cell(&self, cell: &Cell) -> Result<(TrainedModel, SweepRow)> {
        let start = Instant::now();
        let mut row = self.blank_row(cell);
        if cell.aggregation.is_some() && cell.spec.inputs.len() != 1 {
            return Err(Error::InvalidSpec("layer aggregation applies to a single input".into()));
        }
        let dims = self.source_dims(cell)?;
        let input_dims: Vec<usize> = cell
            .spec
            .inputs
            .iter()
            .map(|i| {
                let l = i.layer.index().unwrap_or(0);
                self.manifest.require(Split::Train, &i.model, l).map(|e| e.dim)
            })
            .collect::<Result<_>>()?;
        let shape = cell.spec.resolve(&input_dims)?;
        let n_train = self
            .manifest
            .n_samples(Split::Train)
            .ok_or_else(|| Error::Manifest("manifest has no training split".into()))?;
        row.fused_dim = Some(shape.fused_dim);
        row.memory_bytes = Some(estimate_memory(n_train as u64, &dims)?);
        let (train_set, test_set) = self.datasets(cell)?;
        let model = train(&train_set, &self.cell_config(cell), &cell.spec)?;
        row.accuracy = Some(evaluate(&model, &test_set)?);
        row.wall_time_s = start.elapsed().as_secs_f64();
        Ok((model, row))
    }

    fn blank_row(&self, cell: &Cell) -> SweepRow {
        SweepRow {
            dataset: self.manifest.dataset().to_string(),
            inputs: cell.spec.inputs.clone(),
            method: cell.spec.method,
            residual: cell.spec.residual,
            aggregation: cell.aggregation,
            accuracy: None,
            fused_dim: None,
            memory_bytes: None,
            wall_time_s: 0.0,
            error: None,
        }
    }

    /// Like [`Runner::train_cell`], but failures become an error row.
    pub fn run_cell(&self, cell: &Cell) -> SweepRow {
        let start = Instant::now();
        match self.train_cell(cell) {
            Ok((_, row)) => row,
            Err(e) => {
                let mut row = self.blank_row(cell);
                if let Ok(dims) = cell
                    .spec
                    .inputs
                    .iter()
                    .map(|i| {
                        self.manifest
                            .require(Split::Train, &i.model, i.layer.index().unwrap_or(0))
                            .map(|e| e.dim)
                    })
                    .collect::<Result<Vec<_>>>()
                {
                    row.fused_dim = cell.spec.resolve(&dims).ok().map(|s| s.fused_dim);
                }
                row.error = Some(e.to_string());
                row.wall_time_s = start.elapsed().as_secs_f64();
                row
            }
        }
    }

    /// Runs cells on `jobs` worker threads; rows keep the order of `cells`.
    pub fn run_cells(&self, cells: &[Cell]) -> Result<SweepResult> {
        let rows = if self.jobs <= 1 {
            cells.iter().map(|c| self.run_cell(c)).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.jobs)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            pool.install(|| cells.par_iter().map(|c| self.run_cell(c)).collect())
        };
        Ok(SweepResult { rows })
    }

    fn layers_of(&self, model: &str) -> Result<Vec<u32>> {
        let train = self.manifest.layers(model, Split::Train);
        if train.is_empty() {
            return Err(Error::Manifest(format!("model '{model}' is not in the manifest")));
        }
        let test = self.manifest.layers(model, Split::Test);
        if let Some(l) = train.iter().find(|l| !test.contains(l)) {
            return Err(Error::Manifest(format!("no test embedding for {model}:{l}")));
        }
        Ok(train)
    }

    /// One single-layer run per available layer of `model`, sorted by layer.
    pub fn layer_sweep(&self, model: &str) -> Result<SweepResult> {
        let layers = self.layers_of(model)?;
        let top = *layers.last().unwrap();
        if let Some(missing) = (0..=top).find(|l| !layers.contains(l)) {
            return Err(Error::Manifest(format!("missing embedding files for {model}:{missing}")));
        }
        let cells: Vec<Cell> = layers
            .iter()
            .map(|&l| Cell::new(FusionSpec::single(InputRef::at(model, l))))
            .collect();
        self.run_cells(&cells)
    }

    /// One run per (k, mode), aggregating the last `k` layers of `model`
    /// (capped at the available depth).
    pub fn multi_layer_sweep(&self, model: &str, ks: &[usize], modes: &[AggregateMode]) -> Result<SweepResult> {
        if ks.contains(&0) {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if ks.is_empty() || modes.is_empty() {
            return Err(Error::InvalidConfig("multi-layer sweep needs at least one k and one mode".into()));
        }
        let layers = self.layers_of(model)?;
        let top = *layers.last().unwrap();
        let mut cells = Vec::new();
        for &k in ks {
            for &mode in modes {
                cells.push(Cell {
                    spec: FusionSpec::single(InputRef::at(model, top)),
                    aggregation: Some(Aggregation {
                        mode,
                        k: k.min(layers.len()),
                    }),
                });
            }
        }
        self.run_cells(&cells)
    }

    /// Cartesian grid; cells violating a method's preconditions become
    /// error rows.
    pub fn pair_fusion_grid(&self, grid: &PairGrid) -> Result<SweepResult> {
        let [ma, mb] = &grid.models;
        let resolve_all = |model: &String, layers: &[LayerRef]| -> Result<Vec<InputRef>> {
            if layers.is_empty() {
                return Err(Error::InvalidConfig(format!("no layers given for {model}")));
            }
            layers
                .iter()
                .map(|&l| {
                    let r = self.resolve_input(&InputRef::new(model.clone(), l))?;
                    self.manifest.require(Split::Train, model, r.layer.index().unwrap())?;
                    Ok(r)
                })
                .collect()
        };
        let la = resolve_all(ma, &grid.layers[0])?;
        let lb = resolve_all(mb, &grid.layers[1])?;
        if grid.methods.is_empty() || grid.residuals.is_empty() {
            return Err(Error::InvalidConfig("pair grid needs at least one method and residual flag".into()));
        }
        let mut cells = Vec::new();
        for a in &la {
            for b in &lb {
                for &method in &grid.methods {
                    for &residual in &grid.residuals {
                        let spec = FusionSpec::new(method, vec![a.clone(), b.clone()])
                            .with_residual(residual)
                            .with_target_dim(grid.target_dim);
                        cells.push(Cell::new(spec));
                    }
                }
            }
        }
        self.run_cells(&cells)
    }

    /// Concatenation of every subset of `models` with each requested size.
    /// Each model contributes its deepest layer unless `layer_overrides`
    /// names another.
    pub fn combo_sweep(
        &self,
        models: &[String],
        sizes: &[usize],
        layer_overrides: &BTreeMap<String, u32>,
    ) -> Result<SweepResult> {
        if models.len() < 2 {
            return Err(Error::InvalidConfig("combo sweep needs at least 2 models".into()));
        }
        let mut inputs = Vec::with_capacity(models.len());
        for m in models {
            let layer = match layer_overrides.get(m) {
                Some(&l) => l,
                None => self
                    .manifest
                    .max_layer(m)
                    .ok_or_else(|| Error::Manifest(format!("model '{m}' is not in the manifest")))?,
            };
            self.manifest.require(Split::Train, m, layer)?;
            inputs.push(InputRef::at(m.clone(), layer));
        }
        let mut cells = Vec::new();
        for &size in sizes {
            if size == 0 || size > models.len() {
                return Err(Error::InvalidConfig(format!(
                    "subset size {size} outside 1..={}",
                    models.len()
                )));
            }
            for subset in combinations(models.len(), size) {
                let chosen = subset.iter().map(|&i| inputs[i].clone()).collect();
                cells.push(Cell::new(FusionSpec::new(FusionMethod::Concat, chosen)));
            }
        }
        self.run_cells(&cells)
    }
}

/// Elementwise aggregation of whole matrices. Means accumulate in f64 so
/// identical layers aggregate to exactly themselves.
pub fn aggregate_matrices(mats: &[Arc<EmbeddingMatrix>], mode: AggregateMode) -> Result<EmbeddingMatrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::InvalidConfig("nothing to aggregate".into()))?;
    let (n, d) = (first.n_samples(), first.dim());
    if let Some(bad) = mats.iter().find(|m| m.n_samples() != n || m.dim() != d) {
        return Err(Error::Shape(format!(
            "cannot aggregate {}x{} with {}x{}",
            n,
            d,
            bad.n_samples(),
            bad.dim()
        )));
    }
    let mut out = Vec::with_capacity(n * d);
    for idx in 0..n * d {
        let vals = mats.iter().map(|m| m.data()[idx] as f64);
        let v = match mode {
            AggregateMode::Mean => vals.sum::<f64>() / mats.len() as f64,
            AggregateMode::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            AggregateMode::Min => vals.fold(f64::INFINITY, f64::min),
        };
        out.push(v as f32);
    }
    EmbeddingMatrix::new(n, d, out)
}

/// All `k`-element index subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
