//! Line-oriented `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{Dataset, ShapeFamily, SyntheticDataset, SyntheticSpec, TensorDirDataset};
use crate::engine::{Norm, TrainConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScalarKind {
    F32,
    #[default]
    F64,
}

impl ScalarKind {
    pub fn name(self) -> &'static str {
        match self {
            ScalarKind::F32 => "f32",
            ScalarKind::F64 => "f64",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic(ShapeFamily),
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    /// Item count for synthetic sources.
    pub items: usize,
    /// Seed for synthetic sources.
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            source: DatasetSource::Synthetic(ShapeFamily::Ellipses),
            items: 2000,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    /// Materialize the dataset at the configured image shape.
    pub fn open(&self, channels: usize, image_size: usize) -> Result<Box<dyn Dataset>> {
        match &self.source {
            DatasetSource::Synthetic(family) => {
                if self.items == 0 {
                    return Err(Error::EmptyDataset);
                }
                Ok(Box::new(SyntheticDataset {
                    spec: SyntheticSpec::new(*family, self.seed),
                    items: self.items,
                    channels,
                    image_size,
                }))
            }
            DatasetSource::Directory(dir) => Ok(Box::new(TensorDirDataset::open(dir, channels, image_size)?)),
        }
    }

    fn source_string(&self) -> String {
        match &self.source {
            DatasetSource::Synthetic(f) => format!("synthetic:{f}"),
            DatasetSource::Directory(p) => format!("dir:{}", p.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub output_dir: Option<PathBuf>,
    pub scalar: ScalarKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig {
                steps: 1000,
                checkpoint_interval: 500,
                ..TrainConfig::default()
            },
            dataset: DatasetSpec::default(),
            output_dir: None,
            scalar: ScalarKind::F64,
        }
    }
}

/// Recognised keys, in dump order.
pub const KEYS: &[&str] = &[
    "image_size",
    "channels",
    "base_filters",
    "repeats_per_block",
    "hidden_dim",
    "latent_dim",
    "skip_connections",
    "vanishing_residuals",
    "carry_decay_steps",
    "gamma",
    "lambda_k",
    "eta",
    "batch_size",
    "lr",
    "steps",
    "seed",
    "checkpoint_interval",
    "patience",
    "dataset",
    "dataset_items",
    "dataset_seed",
    "output_dir",
    "scalar",
];

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    /// Set one key. Aliases: `n` for base_filters, `nh`, `nz`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let a = &mut t.arch;
        let v = value.trim();
        match key.trim() {
            "image_size" => a.image_size = parse_value(key, v)?,
            "channels" => a.channels = parse_value(key, v)?,
            "base_filters" | "n" => a.base_filters = parse_value(key, v)?,
            "repeats_per_block" => a.repeats_per_block = parse_value(key, v)?,
            "hidden_dim" | "nh" => a.hidden_dim = parse_value(key, v)?,
            "latent_dim" | "nz" => a.latent_dim = parse_value(key, v)?,
            "skip_connections" => a.use_skip_connections = parse_bool(key, v)?,
            "vanishing_residuals" => a.use_vanishing_residuals = parse_bool(key, v)?,
            "carry_decay_steps" => a.carry_decay_steps = parse_value(key, v)?,
            "gamma" => t.gamma = parse_value(key, v)?,
            "lambda_k" => t.lambda_k = parse_value(key, v)?,
            "eta" => t.norm = Norm::from_exponent(parse_value(key, v)?)?,
            "batch_size" => t.batch_size = parse_value(key, v)?,
            "lr" => t.learning_rate = parse_value(key, v)?,
            "steps" => t.steps = parse_value(key, v)?,
            "seed" => t.seed = parse_value(key, v)?,
            "checkpoint_interval" => t.checkpoint_interval = parse_value(key, v)?,
            "patience" => t.patience = parse_value(key, v)?,
            "dataset" => {
                self.dataset.source = if let Some(f) = v.strip_prefix("synthetic:") {
                    DatasetSource::Synthetic(f.parse()?)
                } else if let Some(d) = v.strip_prefix("dir:") {
                    DatasetSource::Directory(PathBuf::from(d))
                } else {
                    return Err(Error::Config(format!(
                        "dataset: expected synthetic:<family> or dir:<path>, got {v:?}"
                    )));
                }
            }
            "dataset_items" => self.dataset.items = parse_value(key, v)?,
            "dataset_seed" => self.dataset.seed = parse_value(key, v)?,
            "output_dir" => self.output_dir = Some(PathBuf::from(v)),
            "scalar" => {
                self.scalar = match v {
                    "f32" => ScalarKind::F32,
                    "f64" => ScalarKind::F64,
                    _ => return Err(Error::Config(format!("scalar: expected f32 or f64, got {v:?}"))),
                }
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a config file's lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored. Errors carry the 1-based line number.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            self.set(k, v).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()
    }

    /// Every key with its effective value; parsing the result reproduces `self`.
    pub fn dump(&self) -> String {
        let t = &self.train;
        let a = &t.arch;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("image_size", a.image_size.to_string());
        kv("channels", a.channels.to_string());
        kv("base_filters", a.base_filters.to_string());
        kv("repeats_per_block", a.repeats_per_block.to_string());
        kv("hidden_dim", a.hidden_dim.to_string());
        kv("latent_dim", a.latent_dim.to_string());
        kv("skip_connections", a.use_skip_connections.to_string());
        kv("vanishing_residuals", a.use_vanishing_residuals.to_string());
        kv("carry_decay_steps", a.carry_decay_steps.to_string());
        kv("gamma", t.gamma.to_string());
        kv("lambda_k", t.lambda_k.to_string());
        kv("eta", t.norm.exponent().to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lr", t.learning_rate.to_string());
        kv("steps", t.steps.to_string());
        kv("seed", t.seed.to_string());
        kv("checkpoint_interval", t.checkpoint_interval.to_string());
        kv("patience", t.patience.to_string());
        kv("dataset", self.dataset.source_string());
        kv("dataset_items", self.dataset.items.to_string());
        kv("dataset_seed", self.dataset.seed.to_string());
        if let Some(dir) = &self.output_dir {
            kv("output_dir", dir.display().to_string());
        }
        kv("scalar", self.scalar.name().to_string());
        s
    }
}
