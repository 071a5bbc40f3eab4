//! `layerfuse` command-line front end.
//!
//! Exit codes: 0 on success, 1 when flags or inputs fail validation, 2 when
//! a run fails for any other reason (I/O, numerical failure).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use layerfuse::classifier::{save_checkpoint, TrainConfig};
use layerfuse::experiments::{
    emit_report, gen_synthetic, write_timings, Cell, Coverage, PairGrid, ReportFormat, Runner, SweepResult,
    SyntheticSpec,
};
use layerfuse::fusion::{AggregateMode, FusionMethod, FusionSpec, InputRef, LayerRef};
use layerfuse::store::{estimate_memory, format_gib, registry, Manifest};
use layerfuse::Error;

#[derive(Parser, Debug)]
#[command(name = "layerfuse", version, about = "Layer-aware embedding selection and multi-model fusion for text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
enum Command {
    /// Train and evaluate one fusion configuration.
    Train(TrainArgs),
    /// Train one classifier per layer of a model.
    LayerSweep(LayerSweepArgs),
    /// Aggregate the last k layers of a model (mean/max/min) for each k.
    MultiLayer(MultiLayerArgs),
    /// Two-model grid over layers, fusion methods and residual flags.
    PairGrid(PairGridArgs),
    /// Concatenate every subset of a model set for the requested sizes.
    Combo(ComboArgs),
    /// Memory needed to hold concatenated embeddings.
    Estimate(EstimateArgs),
    /// Write a synthetic dataset with a planted best layer.
    GenSynth(GenSynthArgs),
}

#[derive(Args, Debug, Serialize)]
struct RunArgs {
    /// Manifest describing the embedding and label files.
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Global seed; per-run seeds derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Runs trained concurrently.
    #[arg(long, env = "LAYERFUSE_JOBS", default_value_t = 1)]
    jobs: usize,
    /// JSON training config; explicit flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// `model:layer`, `model:last` or `model`; repeat for each fused input.
    #[arg(long = "input", required = true)]
    inputs: Vec<InputRef>,
    /// Fusion method; defaults to none for one input and concat otherwise.
    #[arg(long)]
    method: Option<FusionMethod>,
    /// Add the mean of the projected inputs to the fused vector.
    #[arg(long)]
    residual: bool,
    /// Projection width for methods that project.
    #[arg(long)]
    target_dim: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct LayerSweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    model: String,
}

#[derive(Args, Debug, Serialize)]
struct MultiLayerArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    model: String,
    /// Layer counts, as a range `1..10` (inclusive) or a list `1,2,4`.
    #[arg(long, default_value = "1..10", value_parser = parse_k_range)]
    k: KList,
    #[arg(long, value_delimiter = ',', default_value = "mean,max,min")]
    modes: Vec<AggregateMode>,
}

#[derive(Args, Debug, Serialize)]
struct PairGridArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Exactly two models, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<String>,
    /// Layers of the first model (numbers or `last`).
    #[arg(long, value_delimiter = ',', default_value = "last")]
    layers_a: Vec<LayerRef>,
    /// Layers of the second model (numbers or `last`).
    #[arg(long, value_delimiter = ',', default_value = "last")]
    layers_b: Vec<LayerRef>,
    #[arg(long, value_delimiter = ',', default_value = "concat,sum,multiply,hadamard,quaternion,moe,all")]
    methods: Vec<FusionMethod>,
    /// Residual flags to try.
    #[arg(long, value_delimiter = ',', default_value = "false,true")]
    residuals: Vec<bool>,
    #[arg(long)]
    target_dim: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct ComboArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<String>,
    /// Subset sizes; defaults to 2 through the number of models.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    /// Per-model layer override, `model=layer`; repeatable.
    #[arg(long = "layer", value_parser = parse_override)]
    layers: Vec<(String, u32)>,
}

#[derive(Args, Debug, Serialize)]
struct EstimateArgs {
    /// Number of samples.
    #[arg(long)]
    n: u64,
    /// Registry model names, comma-separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "dims", required_unless_present = "dims")]
    models: Vec<String>,
    /// Explicit embedding dims, comma-separated.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
}

#[derive(Args, Debug, Serialize)]
struct GenSynthArgs {
    /// Output directory for files and manifest.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    models: usize,
    /// Deepest layer index; layers 0..=L are written.
    #[arg(long, default_value_t = 12)]
    layers: u32,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Layer with the strongest class signal (1..=layers).
    #[arg(long, default_value_t = 8)]
    peak_layer: u32,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 400)]
    n_train: usize,
    #[arg(long, default_value_t = 400)]
    n_test: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    latent_dim: usize,
    #[arg(long, default_value_t = 0.7)]
    decay: f64,
    #[arg(long, default_value_t = 0.3)]
    final_penalty: f64,
    /// `full`, `disjoint`, or `random:FRACTION`.
    #[arg(long, default_value = "full", value_parser = parse_coverage)]
    coverage: Coverage,
    #[arg(long, default_value = "synthetic")]
    dataset: String,
}

#[derive(Clone, Debug, Serialize)]
struct KList(Vec<usize>);

fn parse_k_range(s: &str) -> Result<KList, String> {
    let ks: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|e| format!("bad range end: {e}"))?;
        if a > b {
            return Err(format!("empty range {s}"));
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|e| format!("bad k '{t}': {e}")))
            .collect::<Result<_, _>>()?
    };
    if ks.contains(&0) {
        return Err("k must be at least 1".into());
    }
    Ok(KList(ks))
}

fn parse_override(s: &str) -> Result<(String, u32), String> {
    let (m, l) = s.split_once('=').ok_or_else(|| format!("expected model=layer, got '{s}'"))?;
    Ok((m.to_string(), l.parse().map_err(|e| format!("bad layer in '{s}': {e}"))?))
}

fn parse_coverage(s: &str) -> Result<Coverage, String> {
    match s {
        "full" => Ok(Coverage::Full),
        "disjoint" => Ok(Coverage::Disjoint),
        other => match other.strip_prefix("random:") {
            Some(f) => Ok(Coverage::Random {
                fraction: f.parse().map_err(|e| format!("bad fraction '{f}': {e}"))?,
            }),
            None => Err(format!("unknown coverage '{other}' (expected full, disjoint, random:FRACTION)")),
        },
    }
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_validation() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

/// Attributes a library error to the flag that caused it.
fn flag(name: &'static str) -> impl Fn(Error) -> Failure {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{name}: {}", f.message);
        f
    }
}

type CmdResult = Result<(), Failure>;

fn train_config(run: &RunArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &run.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("--config {}: {e}", path.display())))?;
            serde_json::from_str::<TrainConfig>(&text).map_err(|e| Failure::usage(format!("--config: {e}")))?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = run.seed;
    if let Some(v) = run.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = run.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = run.lr {
        cfg.lr = v;
    }
    if let Some(v) = run.hidden {
        cfg.hidden = v;
    }
    cfg.validate().map_err(flag("training config"))?;
    if run.jobs == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    Ok(cfg)
}

fn create_dir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).map_err(|e| Failure {
        code: 2,
        message: format!("cannot create {}: {e}", path.display()),
    })
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text).map_err(|e| Failure {
        code: 2,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

/// Writes the config echo every run leaves next to its outputs.
fn echo_config(out: &Path, command: &Command, cfg: Option<&TrainConfig>) -> CmdResult {
    let doc = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "args": command,
        "train_config": cfg,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("config echo serialises");
    text.push('\n');
    write_text(&out.join("config.json"), &text)
}

fn emit_all(out: &Path, result: &SweepResult) -> CmdResult {
    emit_report(result, ReportFormat::Csv, out.join("results.csv"))?;
    emit_report(result, ReportFormat::Json, out.join("results.json"))?;
    write_timings(result, out.join("timings.csv"))?;
    Ok(())
}

fn print_rows(result: &SweepResult) {
    for row in &result.rows {
        match (&row.accuracy, &row.error) {
            (Some(acc), _) => println!(
                "{:<32} {:<16} {}",
                row.inputs_label(),
                row.method_label(),
                layerfuse::experiments::format_accuracy(*acc)
            ),
            (None, Some(err)) => println!("{:<32} {:<16} error: {err}", row.inputs_label(), row.method_label()),
            (None, None) => {}
        }
    }
    if let Some(i) = result.best() {
        let row = &result.rows[i];
        println!(
            "best: {} {} {}",
            row.inputs_label(),
            row.method_label(),
            layerfuse::experiments::format_accuracy(row.accuracy.unwrap_or(0.0))
        );
    }
}

fn load_manifest(path: &Path) -> Result<Manifest, Failure> {
    Manifest::load(path).map_err(|e| {
        let mut f = Failure::from(e);
        if f.code == 2 {
            // A manifest that can't be read is a bad flag, not a crash.
            f.code = 1;
        }
        f.message = format!("--manifest: {}", f.message);
        f
    })
}

fn cmd_train(args: &TrainArgs, command: &Command) -> CmdResult {
    let cfg = train_config(&args.run)?;
    let method = args.method.unwrap_or(if args.inputs.len() == 1 {
        FusionMethod::None
    } else {
        FusionMethod::Concat
    });
    let spec = FusionSpec::new(method, args.inputs.clone())
        .with_residual(args.residual)
        .with_target_dim(args.target_dim);
    spec.check_arity().map_err(flag("--method/--input"))?;
    let manifest = load_manifest(&args.run.manifest)?;
    let runner = Runner::new(&manifest, cfg.clone());
    let spec = runner.resolve_spec(&spec).map_err(flag("--input"))?;
    let cell = Cell::new(spec);
    create_dir(&args.run.out)?;
    echo_config(&args.run.out, command, Some(&runner.cell_config(&cell)))?;
    let (model, row) = runner.train_cell(&cell)?;
    let out = &args.run.out;
    save_checkpoint(&model, out.join("model.ckpt"))?;
    write_text(&out.join("history.csv"), &model.history_csv())?;
    let result = SweepResult { rows: vec![row] };
    emit_all(out, &result)?;
    print_rows(&result);
    Ok(())
}

fn run_sweep(run: &RunArgs, command: &Command, sweep: impl FnOnce(&Runner) -> layerfuse::Result<SweepResult>) -> Result<SweepResult, Failure> {
    let cfg = train_config(run)?;
    let manifest = load_manifest(&run.manifest)?;
    let runner = Runner::new(&manifest, cfg.clone()).with_jobs(run.jobs);
    create_dir(&run.out)?;
    echo_config(&run.out, command, Some(&cfg))?;
    let result = sweep(&runner)?;
    emit_all(&run.out, &result)?;
    print_rows(&result);
    Ok(result)
}

fn cmd_estimate(args: &EstimateArgs) -> CmdResult {
    let dims: Vec<usize> = if args.dims.is_empty() {
        args.models
            .iter()
            .map(|name| {
                registry::lookup(name).map(|m| m.dim).ok_or_else(|| {
                    Failure::usage(format!(
                        "--models: unknown model '{name}'; known models: {}",
                        registry::names().join(", ")
                    ))
                })
            })
            .collect::<Result<_, _>>()?
    } else {
        args.dims.clone()
    };
    let bytes = estimate_memory(args.n, &dims).map_err(flag("--dims"))?;
    println!("{bytes} bytes ({})", format_gib(bytes));
    println!("concatenated dim: {}", dims.iter().sum::<usize>());
    Ok(())
}

fn cmd_gen_synth(args: &GenSynthArgs) -> CmdResult {
    let mut spec = SyntheticSpec::uniform(args.models, args.layers, args.dim, args.peak_layer);
    spec.dataset = args.dataset.clone();
    spec.n_classes = args.classes;
    spec.n_train = args.n_train;
    spec.n_test = args.n_test;
    spec.noise = args.noise;
    spec.seed = args.seed;
    spec.latent_dim = args.latent_dim;
    spec.decay = args.decay;
    spec.final_penalty = args.final_penalty;
    spec.coverage = args.coverage;
    spec.validate().map_err(flag("synthetic spec"))?;
    let manifest = gen_synthetic(&spec, &args.out)?;
    println!(
        "wrote {} embedding files for {} models to {}",
        manifest.entries().len(),
        args.models,
        args.out.join("manifest.json").display()
    );
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    let command = &cli.command;
    match command {
        Command::Train(a) => cmd_train(a, command),
        Command::LayerSweep(a) => {
            let result = run_sweep(&a.run, command, |r| r.layer_sweep(&a.model))?;
            if let Some((layer, acc)) = result.argmax_layer(&a.model) {
                println!("argmax layer: {layer} ({})", layerfuse::experiments::format_accuracy(acc));
            }
            Ok(())
        }
        Command::MultiLayer(a) => run_sweep(&a.run, command, |r| r.multi_layer_sweep(&a.model, &a.k.0, &a.modes)).map(drop),
        Command::PairGrid(a) => {
            let [ma, mb] = a.models.as_slice() else {
                return Err(Failure::usage(format!("--models: expected exactly 2 models, got {}", a.models.len())));
            };
            let grid = PairGrid {
                models: [ma.clone(), mb.clone()],
                layers: [a.layers_a.clone(), a.layers_b.clone()],
                methods: a.methods.clone(),
                residuals: a.residuals.clone(),
                target_dim: a.target_dim,
            };
            run_sweep(&a.run, command, |r| r.pair_fusion_grid(&grid)).map(drop)
        }
        Command::Combo(a) => {
            let sizes = if a.sizes.is_empty() {
                (2..=a.models.len()).collect()
            } else {
                a.sizes.clone()
            };
            let overrides: BTreeMap<String, u32> = a.layers.iter().cloned().collect();
            let result = run_sweep(&a.run, command, |r| r.combo_sweep(&a.models, &sizes, &overrides))?;
            let mut text = String::from("size,n,mean,std\n");
            for s in result.size_summary() {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    s.size,
                    s.n,
                    layerfuse::experiments::format_accuracy(s.mean),
                    layerfuse::experiments::format_accuracy(s.std)
                ));
            }
            write_text(&a.run.out.join("summary.csv"), &text)?;
            print!("{text}");
            Ok(())
        }
        Command::Estimate(a) => cmd_estimate(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
