use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::SamplerState;
use crate::engine::{EquilibriumController, Norm, Optimizers, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{build_models, ArchConfig, ModelParams};
use crate::optim::StallDetector;
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"BEGANCK1";
pub const FORMAT_VERSION: u32 = 1;

/// Full training state: resuming from it continues a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub optimizers: Optimizers<T>,
    pub controller: EquilibriumController,
    pub stall: StallDetector,
    pub norm: Norm,
    pub batch_size: usize,
    pub seed: u64,
    /// Completed steps.
    pub step: u64,
    pub rng: RngState,
    pub sampler: SamplerState,
    pub dataset_len: usize,
}

impl<T: Scalar> Checkpoint<T> {
    /// The run configuration this state belongs to, with `steps` set to the
    /// completed step count and the current (possibly decayed) learning rate.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            arch: self.params.config.clone(),
            gamma: self.controller.gamma,
            lambda_k: self.controller.lambda_k,
            norm: self.norm,
            batch_size: self.batch_size,
            learning_rate: self.optimizers.learning_rate(),
            steps: self.step,
            seed: self.seed,
            checkpoint_interval: 0,
            patience: self.stall.patience,
        }
    }

    fn arrays(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (_, set) in self.params.sets() {
            out.extend(set.iter().map(|p| (format!("param.{}", p.name), &p.value)));
        }
        let d_names: Vec<&str> = self
            .params
            .encoder
            .iter()
            .chain(self.params.decoder.iter())
            .map(|p| p.name.as_str())
            .collect();
        let g_names: Vec<&str> = self.params.generator.iter().map(|p| p.name.as_str()).collect();
        for (tag, adam, names) in [
            ("d", &self.optimizers.discriminator, &d_names),
            ("g", &self.optimizers.generator, &g_names),
        ] {
            for (moment, list) in [("m", &adam.m), ("v", &adam.v)] {
                out.extend(
                    names
                        .iter()
                        .zip(list)
                        .map(|(n, t)| (format!("adam.{tag}.{moment}.{n}"), t)),
                );
            }
        }
        out
    }

    fn header(&self) -> String {
        let a = &self.params.config;
        let mut h = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(h, "{k} = {v}");
        };
        kv("version", &FORMAT_VERSION);
        kv("scalar", &T::NAME);
        kv("image_size", &a.image_size);
        kv("channels", &a.channels);
        kv("base_filters", &a.base_filters);
        kv("repeats_per_block", &a.repeats_per_block);
        kv("hidden_dim", &a.hidden_dim);
        kv("latent_dim", &a.latent_dim);
        kv("use_skip_connections", &a.use_skip_connections);
        kv("use_vanishing_residuals", &a.use_vanishing_residuals);
        kv("carry_decay_steps", &a.carry_decay_steps);
        kv("gamma", &self.controller.gamma);
        kv("lambda_k", &self.controller.lambda_k);
        kv("eta", &self.norm.exponent());
        kv("batch_size", &self.batch_size);
        kv("seed", &self.seed);
        kv("step", &self.step);
        kv("k", &self.controller.k);
        kv("lr", &self.optimizers.learning_rate());
        kv("adam_beta1", &self.optimizers.discriminator.beta1);
        kv("adam_beta2", &self.optimizers.discriminator.beta2);
        kv("adam_epsilon", &self.optimizers.discriminator.epsilon);
        kv("adam_t_d", &self.optimizers.discriminator.t);
        kv("adam_t_g", &self.optimizers.generator.t);
        kv("stall_best", &self.stall.best);
        kv("stall_count", &self.stall.steps_since_improvement);
        kv("stall_patience", &self.stall.patience);
        kv("rng_seed", &self.rng.seed_hex());
        kv("rng_stream", &self.rng.stream);
        kv("rng_word_pos", &self.rng.word_pos);
        kv("sampler_epoch", &self.sampler.epoch);
        kv("sampler_cursor", &self.sampler.cursor);
        kv("dataset_len", &self.dataset_len);
        for (name, t) in self.arrays() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            kv(&name, &dims.join("x"));
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let arrays = self.arrays();
        let n: usize = arrays.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, t) in arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_acc().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = Header::parse(bytes)?;
        if header.get("scalar")? != T::NAME {
            return Err(Error::Checkpoint(format!(
                "checkpoint stores {} values, loading as {}",
                header.get("scalar")?,
                T::NAME
            )));
        }
        let arch = ArchConfig {
            image_size: header.num("image_size")?,
            channels: header.num("channels")?,
            base_filters: header.num("base_filters")?,
            repeats_per_block: header.num("repeats_per_block")?,
            hidden_dim: header.num("hidden_dim")?,
            latent_dim: header.num("latent_dim")?,
            use_skip_connections: header.num("use_skip_connections")?,
            use_vanishing_residuals: header.num("use_vanishing_residuals")?,
            carry_decay_steps: header.num("carry_decay_steps")?,
        };
        arch.validate()?;
        let lr: f64 = header.num("lr")?;
        let mut params: ModelParams<T> = build_models(&arch, 0)?;
        let mut optimizers = Optimizers::new(&params, lr);
        for adam in [&mut optimizers.discriminator, &mut optimizers.generator] {
            adam.beta1 = header.num("adam_beta1")?;
            adam.beta2 = header.num("adam_beta2")?;
            adam.epsilon = header.num("adam_epsilon")?;
        }
        optimizers.discriminator.t = header.num("adam_t_d")?;
        optimizers.generator.t = header.num("adam_t_g")?;
        let mut controller = EquilibriumController::new(header.num("gamma")?, header.num("lambda_k")?)?;
        controller.k = header.num("k")?;
        if !(0.0..=1.0).contains(&controller.k) {
            return Err(Error::Checkpoint(format!("k = {} outside [0, 1]", controller.k)));
        }
        let rng = RngState {
            seed: RngState::parse_seed_hex(header.get("rng_seed")?)
                .ok_or_else(|| Error::Checkpoint("rng_seed is not 64 hex digits".into()))?,
            stream: header.num("rng_stream")?,
            word_pos: header.num("rng_word_pos")?,
        };

        let mut ck = Checkpoint {
            stall: StallDetector {
                best: header.num("stall_best")?,
                steps_since_improvement: header.num("stall_count")?,
                patience: header.num("stall_patience")?,
            },
            norm: Norm::from_exponent(header.num("eta")?)?,
            batch_size: header.num("batch_size")?,
            seed: header.num("seed")?,
            step: header.num("step")?,
            sampler: SamplerState {
                epoch: header.num("sampler_epoch")?,
                cursor: header.num("sampler_cursor")?,
            },
            dataset_len: header.num("dataset_len")?,
            rng,
            controller,
            params: params.clone(),
            optimizers,
        };

        // Expected layout from the architecture; the header must list exactly it.
        let expected: Vec<(String, Vec<usize>)> = ck
            .arrays()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if header.arrays.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "header lists {} arrays, architecture needs {}",
                header.arrays.len(),
                expected.len()
            )));
        }
        for ((name, shape), (hn, hs)) in expected.iter().zip(&header.arrays) {
            if name != hn || shape != hs {
                return Err(Error::shape(
                    "load_checkpoint",
                    format!("header declares {hn} {hs:?}, architecture expects {name} {shape:?}"),
                ));
            }
        }
        let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let body = &bytes[header.body_offset..];
        if body.len() < 8 * total {
            return Err(Error::Truncated(format!(
                "{} of {} array bytes present",
                body.len(),
                8 * total
            )));
        }
        if body.len() > 8 * total {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - 8 * total)));
        }

        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut fill = |t: &mut Tensor<T>| {
            for v in t.data_mut() {
                *v = T::from_acc(values.next().unwrap());
            }
        };
        for (_, set) in params.sets_mut() {
            set.tensors_mut().for_each(&mut fill);
        }
        for adam in [&mut ck.optimizers.discriminator, &mut ck.optimizers.generator] {
            adam.m.iter_mut().for_each(&mut fill);
            adam.v.iter_mut().for_each(&mut fill);
        }
        ck.params = params;
        Ok(ck)
    }
}

/// Parsed `key = value` header and the offset of the array payload.
#[derive(Clone, Debug)]
pub struct Header {
    pub entries: Vec<(String, String)>,
    pub arrays: Vec<(String, Vec<usize>)>,
    map: HashMap<String, String>,
    body_offset: usize,
}

impl Header {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Truncated("file shorter than the magic".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Version {
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
            });
        }
        if bytes.len() < 16 {
            return Err(Error::Truncated("missing header length".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let end = 16usize
            .checked_add(usize::try_from(len).unwrap_or(usize::MAX))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Truncated(format!("header of {len} bytes runs past end of file")))?;
        let text = std::str::from_utf8(&bytes[16..end])
            .map_err(|e| Error::Checkpoint(format!("header is not UTF-8: {e}")))?;
        let mut entries = Vec::new();
        let mut arrays = Vec::new();
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let (k, v) = line.split_once(" = ").ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            if k.starts_with("param.") || k.starts_with("adam.") {
                let shape = v
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("bad shape {v:?}"),
                    })?;
                arrays.push((k.to_string(), shape));
            } else if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate key {k}"),
                });
            }
            entries.push((k.to_string(), v.to_string()));
        }
        let header = Header {
            entries,
            arrays,
            map,
            body_offset: end,
        };
        let version: u32 = header.num("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                expected: FORMAT_VERSION.to_string(),
                found: version.to_string(),
            });
        }
        Ok(header)
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.map
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("header lacks {key}")))
    }

    pub fn num<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("{key} = {raw:?} does not parse")))
    }

    /// Header text as stored in the file.
    pub fn text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn save_checkpoint<T: Scalar>(path: &Path, checkpoint: &Checkpoint<T>) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Header of a checkpoint file without decoding the arrays.
pub fn read_checkpoint_header(path: &Path) -> Result<Header> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Header::parse(&bytes)
}
