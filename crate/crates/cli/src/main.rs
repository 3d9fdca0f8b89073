use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use began_core::config::{RunConfig, ScalarKind};
use began_core::data::{
    export_image_grid, load_checkpoint, read_checkpoint_header, read_raw_tensor, save_checkpoint, CsvMetrics,
    Dataset, ShapeFamily, SyntheticSpec,
};
use began_core::engine::{TrainObserver, Trainer};
use began_core::latent::{decode_points, embed_image, interpolate, mirror_interpolate, sample_z_tensor, EmbedOptions};
use began_core::nn::{generate, ModelParams};
use began_core::rng::{streams, RunRng};
use began_core::tensor::Tensor;
use began_core::{Error, Scalar};
use clap::{Args, Parser, Subcommand};

const OUTPUT_DIR_ENV: &str = "BEGAN_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "began-out";
const SAMPLE_GRID: usize = 16;

#[derive(Parser)]
#[command(name = "began", version, about = "Train and probe boundary equilibrium GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics, checkpoints, sample grids and the effective config.
    Train(TrainArgs),
    /// Render a grid of samples from a checkpoint.
    Sample(SampleArgs),
    /// Embed images into the latent space and show their reconstructions.
    Embed(EmbedArgs),
    /// Interpolate between the embeddings of two images.
    Interpolate(InterpolateArgs),
    /// Interpolate between an image's embedding and its mirror's.
    Mirror(MirrorArgs),
    /// Print a checkpoint header.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: $BEGAN_OUTPUT_DIR or ./began-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run with the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "lambda-k")]
    lambda_k: Option<f64>,
    /// Loss exponent: 1 or 2.
    #[arg(long)]
    eta: Option<u32>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "image-size")]
    image_size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// Base filter count n.
    #[arg(long = "base-filters", visible_alias = "n")]
    base_filters: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Hidden-state dimension.
    #[arg(long)]
    nh: Option<usize>,
    /// Latent dimension.
    #[arg(long)]
    nz: Option<usize>,
    #[arg(long = "skip-connections")]
    skip_connections: Option<bool>,
    #[arg(long = "vanishing-residuals")]
    vanishing_residuals: Option<bool>,
    #[arg(long = "carry-decay-steps")]
    carry_decay_steps: Option<u64>,
    #[arg(long = "checkpoint-interval")]
    checkpoint_interval: Option<u64>,
    #[arg(long)]
    patience: Option<u64>,
    /// `synthetic:<family>` or `dir:<path>`.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long = "dataset-items")]
    dataset_items: Option<usize>,
    #[arg(long = "dataset-seed")]
    dataset_seed: Option<u64>,
    /// `f32` or `f64`.
    #[arg(long)]
    scalar: Option<String>,
    /// Any config key, as `key=value`; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("steps", self.steps.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("gamma", self.gamma.map(|v| v.to_string()));
        push("lambda_k", self.lambda_k.map(|v| v.to_string()));
        push("eta", self.eta.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("image_size", self.image_size.map(|v| v.to_string()));
        push("channels", self.channels.map(|v| v.to_string()));
        push("base_filters", self.base_filters.map(|v| v.to_string()));
        push("repeats_per_block", self.repeats.map(|v| v.to_string()));
        push("hidden_dim", self.nh.map(|v| v.to_string()));
        push("latent_dim", self.nz.map(|v| v.to_string()));
        push("skip_connections", self.skip_connections.map(|v| v.to_string()));
        push("vanishing_residuals", self.vanishing_residuals.map(|v| v.to_string()));
        push("carry_decay_steps", self.carry_decay_steps.map(|v| v.to_string()));
        push("checkpoint_interval", self.checkpoint_interval.map(|v| v.to_string()));
        push("patience", self.patience.map(|v| v.to_string()));
        push("dataset", self.dataset.clone());
        push("dataset_items", self.dataset_items.map(|v| v.to_string()));
        push("dataset_seed", self.dataset_seed.map(|v| v.to_string()));
        push("scalar", self.scalar.clone());
        push("output_dir", self.out.as_ref().map(|p| p.display().to_string()));
        out
    }
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 4)]
    columns: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SearchArgs {
    /// Adam steps per embedding.
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Random restarts per embedding; the best is kept.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SearchArgs {
    fn options(&self) -> EmbedOptions {
        EmbedOptions {
            steps: self.steps,
            learning_rate: self.lr,
            restarts: self.restarts,
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw tensor file or `synthetic:<family>:<seed>:<index>`; may repeat.
    #[arg(long = "input", required = true)]
    inputs: Vec<String>,
    #[command(flatten)]
    search: SearchArgs,
    /// Grid with one row per input: real image, reconstruction.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    a: String,
    #[arg(long)]
    b: String,
    /// Decoded points, endpoints included.
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MirrorArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: String,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    checkpoint: PathBuf,
}

/// Failure with its process exit code: 2 for bad input, 1 for runtime failures.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parse { .. } | Error::OutOfRange { .. } | Error::Shape { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => dispatch(&a.checkpoint.clone(), |s| match s {
            ScalarKind::F32 => cmd_sample::<f32>(&a),
            ScalarKind::F64 => cmd_sample::<f64>(&a),
        }),
        Command::Embed(a) => dispatch(&a.checkpoint.clone(), |s| match s {
            ScalarKind::F32 => cmd_embed::<f32>(&a),
            ScalarKind::F64 => cmd_embed::<f64>(&a),
        }),
        Command::Interpolate(a) => dispatch(&a.checkpoint.clone(), |s| match s {
            ScalarKind::F32 => cmd_interpolate::<f32>(&a),
            ScalarKind::F64 => cmd_interpolate::<f64>(&a),
        }),
        Command::Mirror(a) => dispatch(&a.checkpoint.clone(), |s| match s {
            ScalarKind::F32 => cmd_mirror::<f32>(&a),
            ScalarKind::F64 => cmd_mirror::<f64>(&a),
        }),
        Command::Inspect(a) => cmd_inspect(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("began: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn checkpoint_scalar(path: &Path) -> CliResult<ScalarKind> {
    let header = read_checkpoint_header(path)?;
    match header.get("scalar")? {
        "f32" => Ok(ScalarKind::F32),
        "f64" => Ok(ScalarKind::F64),
        other => Err(usage(format!("{}: unsupported scalar type {other}", path.display()))),
    }
}

fn dispatch(checkpoint: &Path, run: impl FnOnce(ScalarKind) -> CliResult) -> CliResult {
    run(checkpoint_scalar(checkpoint)?)
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Error::File {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let mut config = RunConfig::default();
    if let Some(path) = &args.config {
        config = RunConfig::load(path).map_err(|e| match e {
            Error::Parse { line, msg } => usage(format!("{}:{line}: {msg}", path.display())),
            other => other.into(),
        })?;
    }
    for (k, v) in args.overrides() {
        config.set(&k, &v).map_err(|e| usage(format!("--{k}: {e}")))?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k, v).map_err(|e| usage(format!("--set {kv}: {e}")))?;
    }
    config.validate()?;
    let out = config
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let arch = &config.train.arch;
    let dataset = config.dataset.open(arch.channels, arch.image_size)?;
    match config.scalar {
        ScalarKind::F32 => run_training::<f32>(&config, &*dataset, &out, args.resume.as_deref()),
        ScalarKind::F64 => run_training::<f64>(&config, &*dataset, &out, args.resume.as_deref()),
    }
}

/// Writes a checkpoint and a sample grid at every interval.
struct Artifacts {
    dir: PathBuf,
    z: Vec<f64>,
}

impl Artifacts {
    fn write<T: Scalar>(&self, trainer: &Trainer<T>) -> began_core::Result<()> {
        let step = trainer.step;
        let ck = trainer.checkpoint();
        save_checkpoint(&self.dir.join(format!("checkpoints/step_{step:08}.ckpt")), &ck)?;
        save_checkpoint(&self.dir.join("checkpoints/latest.ckpt"), &ck)?;
        let nz = trainer.params.config.latent_dim;
        let z = Tensor::<T>::from_f64(vec![SAMPLE_GRID, nz], &self.z)?;
        let images = generate(&trainer.params, &z, T::zero())?;
        export_image_grid(&images, 4, &self.dir.join(format!("samples/step_{step:08}.ppm")))
    }
}

impl<T: Scalar> TrainObserver<T> for Artifacts {
    fn on_interval(&mut self, trainer: &Trainer<T>) -> began_core::Result<()> {
        self.write(trainer)
    }
}

/// Keep the header and the rows of steps before `step`.
fn truncate_metrics(path: &Path, step: u64) -> CliResult {
    let text = fs::read_to_string(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .is_some_and(|s| s < step);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn run_training<T: Scalar>(config: &RunConfig, dataset: &dyn Dataset, out: &Path, resume: Option<&Path>) -> CliResult {
    create_dir(&out.join("checkpoints"))?;
    create_dir(&out.join("samples"))?;
    let config_path = out.join("config.txt");
    fs::write(&config_path, config.dump()).map_err(|e| Error::File {
        path: config_path,
        source: e,
    })?;

    let metrics_path = out.join("metrics.csv");
    let (mut trainer, mut sink) = match resume {
        None => (
            Trainer::<T>::new(config.train.clone(), dataset)?,
            CsvMetrics::create(&metrics_path)?,
        ),
        Some(path) => {
            let ck = load_checkpoint::<T>(path)?;
            let step = ck.step;
            let trainer = Trainer::resume(config.train.clone(), ck, dataset)?;
            let sink = if metrics_path.exists() {
                truncate_metrics(&metrics_path, step)?;
                began_core::data::append_metrics(&metrics_path)?
            } else {
                CsvMetrics::create(&metrics_path)?
            };
            (trainer, sink)
        }
    };

    let mut rng = RunRng::new(config.train.seed, streams::SAMPLING);
    let z = sample_z_tensor::<f64, _>(&mut rng, SAMPLE_GRID, config.train.arch.latent_dim).into_vec();
    let mut artifacts = Artifacts {
        dir: out.to_path_buf(),
        z,
    };
    let result = trainer.run(dataset, &mut sink, &mut artifacts);
    sink.flush()?;
    match result {
        Ok(()) => {
            let final_ck = out.join("checkpoints/final.ckpt");
            save_checkpoint(&final_ck, &trainer.checkpoint())?;
            println!(
                "trained {} steps; k = {}, lr = {}; checkpoint {}",
                trainer.step,
                trainer.controller.k,
                trainer.optimizers.learning_rate(),
                final_ck.display()
            );
            Ok(())
        }
        Err(Error::Diverged(record)) => Err(Failure {
            code: 1,
            message: format!(
                "aborted at step {}: non-finite values (L(x) = {}, L(G(z_D)) = {}, L(G(z_G)) = {}, k = {})",
                record.step, record.loss_real, record.loss_fake_d, record.loss_fake_g, record.k
            ),
        }),
        Err(e) => Err(e.into()),
    }
}

/// Load an input image: a raw tensor file or `synthetic:<family>:<seed>:<index>`.
fn load_input<T: Scalar>(spec: &str, params: &ModelParams<T>) -> CliResult<Tensor<T>> {
    let c = &params.config;
    let want = [c.channels, c.image_size, c.image_size];
    let (shape, data) = if let Some(rest) = spec.strip_prefix("synthetic:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [family, seed, index] = parts[..] else {
            return Err(usage(format!("expected synthetic:<family>:<seed>:<index>, got {spec:?}")));
        };
        let family: ShapeFamily = family.parse()?;
        let seed = seed.parse().map_err(|_| usage(format!("bad seed in {spec:?}")))?;
        let index = index.parse().map_err(|_| usage(format!("bad index in {spec:?}")))?;
        (want, SyntheticSpec::new(family, seed).render(index, c.channels, c.image_size))
    } else {
        read_raw_tensor(Path::new(spec))?
    };
    if shape != want {
        return Err(usage(format!(
            "{spec}: image shape {shape:?} does not match the checkpoint's {want:?}"
        )));
    }
    Ok(Tensor::from_f64(shape.to_vec(), &data)?)
}

fn load_params<T: Scalar>(path: &Path) -> CliResult<ModelParams<T>> {
    Ok(load_checkpoint::<T>(path)?.params)
}

fn grid<T: Scalar>(tiles: &[Tensor<T>], columns: usize, out: &Path) -> CliResult {
    let batch = Tensor::stack(tiles)?;
    export_image_grid(&batch, columns, out)?;
    Ok(())
}

fn cmd_sample<T: Scalar>(args: &SampleArgs) -> CliResult {
    if args.count == 0 || args.columns == 0 {
        return Err(usage("--count and --columns must be >= 1"));
    }
    let params = load_params::<T>(&args.checkpoint)?;
    let mut rng = RunRng::new(args.seed, streams::SAMPLING);
    let z = sample_z_tensor::<T, _>(&mut rng, args.count, params.config.latent_dim);
    let images = generate(&params, &z, T::zero())?;
    export_image_grid(&images, args.columns, &args.out)?;
    Ok(())
}

fn cmd_embed<T: Scalar>(args: &EmbedArgs) -> CliResult {
    let params = load_params::<T>(&args.checkpoint)?;
    let mut rng = RunRng::new(args.search.seed, streams::EMBEDDING);
    let mut tiles = Vec::new();
    println!("input\tinitial_e_r\tfinal_e_r");
    for input in &args.inputs {
        let x = load_input(input, &params)?;
        let r = embed_image(&params, &x, &args.search.options(), &mut rng)?;
        println!("{input}\t{}\t{}", r.initial_error(), r.error);
        tiles.push(x);
        tiles.extend(decode_points(&params, &[r.z])?);
    }
    grid(&tiles, 2, &args.out)
}

fn cmd_interpolate<T: Scalar>(args: &InterpolateArgs) -> CliResult {
    let params = load_params::<T>(&args.checkpoint)?;
    let mut rng = RunRng::new(args.search.seed, streams::EMBEDDING);
    let a = load_input(&args.a, &params)?;
    let b = load_input(&args.b, &params)?;
    let ea = embed_image(&params, &a, &args.search.options(), &mut rng)?;
    let eb = embed_image(&params, &b, &args.search.options(), &mut rng)?;
    println!("input\tinitial_e_r\tfinal_e_r");
    println!("{}\t{}\t{}", args.a, ea.initial_error(), ea.error);
    println!("{}\t{}\t{}", args.b, eb.initial_error(), eb.error);
    let frames = decode_points(&params, &interpolate(&ea.z, &eb.z, args.count)?)?;
    let mut tiles = vec![a];
    tiles.extend(frames);
    tiles.push(b);
    let columns = tiles.len();
    grid(&tiles, columns, &args.out)
}

fn cmd_mirror<T: Scalar>(args: &MirrorArgs) -> CliResult {
    let params = load_params::<T>(&args.checkpoint)?;
    let mut rng = RunRng::new(args.search.seed, streams::EMBEDDING);
    let x = load_input(&args.input, &params)?;
    let m = mirror_interpolate(&params, &x, &args.search.options(), args.count, &mut rng)?;
    println!("input\tinitial_e_r\tfinal_e_r");
    println!("{}\t{}\t{}", args.input, m.original.initial_error(), m.original.error);
    println!("{} (mirrored)\t{}\t{}", args.input, m.mirrored.initial_error(), m.mirrored.error);
    let mut tiles = vec![x.clone()];
    tiles.extend(m.frames);
    tiles.push(x.flip_horizontal()?);
    let columns = tiles.len();
    grid(&tiles, columns, &args.out)
}

fn cmd_inspect(args: &InspectArgs) -> CliResult {
    let header = read_checkpoint_header(&args.checkpoint)?;
    print!("{}", header.text());
    Ok(())
}
