use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArchConfig, DecoderLayout, EncoderLayout, BASE_RESOLUTION};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    pub params: Vec<Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.params.iter().map(|p| &p.value)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().map(|p| &mut p.value)
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.params.iter().map(|p| p.value.shape().to_vec()).collect()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    /// Put every tensor on the tape, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect()
    }

    fn push(&mut self, name: String, value: Tensor<T>) {
        self.params.push(Param { name, value });
    }
}

/// Discriminator (encoder + decoder) and generator parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ArchConfig,
    pub encoder: ParamSet<T>,
    pub decoder: ParamSet<T>,
    pub generator: ParamSet<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Encoder followed by decoder tensors: the discriminator's parameters in optimizer order.
    pub fn discriminator_tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.encoder.tensors().chain(self.decoder.tensors())
    }

    pub fn discriminator_tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.encoder.tensors_mut().chain(self.decoder.tensors_mut())
    }

    pub fn num_parameters(&self) -> usize {
        self.encoder.num_values() + self.decoder.num_values() + self.generator.num_values()
    }

    /// All sets in serialization order with their prefixes.
    pub fn sets(&self) -> [(&'static str, &ParamSet<T>); 3] {
        [
            ("enc", &self.encoder),
            ("dec", &self.decoder),
            ("gen", &self.generator),
        ]
    }

    pub fn sets_mut(&mut self) -> [(&'static str, &mut ParamSet<T>); 3] {
        [
            ("enc", &mut self.encoder),
            ("dec", &mut self.decoder),
            ("gen", &mut self.generator),
        ]
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    fn weights<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_acc((2.0 * self.rng.gen::<f64>() - 1.0) * bound))
            .collect();
        Tensor::from_vec(shape.to_vec(), data).expect("shape")
    }
}

fn encoder_params<T: Scalar>(layout: &EncoderLayout, init: &mut Init) -> ParamSet<T> {
    let mut set = ParamSet::default();
    for (i, level) in layout.levels.iter().enumerate() {
        for (r, c) in level.iter().enumerate() {
            let shape = [c.out_channels, c.in_channels, 3, 3];
            set.push(format!("enc.l{i}.c{r}.w"), init.weights(&shape, c.in_channels * 9));
            set.push(format!("enc.l{i}.c{r}.b"), Tensor::zeros(&[c.out_channels]));
        }
    }
    set.push(
        "enc.fc.w".into(),
        init.weights(&[layout.hidden_dim, layout.fc_in], layout.fc_in),
    );
    set.push("enc.fc.b".into(), Tensor::zeros(&[layout.hidden_dim]));
    set
}

fn decoder_params<T: Scalar>(prefix: &str, layout: &DecoderLayout, init: &mut Init) -> ParamSet<T> {
    let mut set = ParamSet::default();
    let proj = BASE_RESOLUTION * BASE_RESOLUTION * layout.base_filters;
    set.push(
        format!("{prefix}.fc.w"),
        init.weights(&[proj, layout.input_dim], layout.input_dim),
    );
    set.push(format!("{prefix}.fc.b"), Tensor::zeros(&[proj]));
    for (j, level) in layout.levels.iter().enumerate() {
        for (r, c) in level.iter().enumerate() {
            let shape = [c.out_channels, c.in_channels, 3, 3];
            set.push(format!("{prefix}.l{j}.c{r}.w"), init.weights(&shape, c.in_channels * 9));
            set.push(format!("{prefix}.l{j}.c{r}.b"), Tensor::zeros(&[c.out_channels]));
        }
    }
    let n = layout.base_filters;
    set.push(
        format!("{prefix}.out.w"),
        init.weights(&[layout.out_channels, n, 3, 3], n * 9),
    );
    set.push(format!("{prefix}.out.b"), Tensor::zeros(&[layout.out_channels]));
    set
}

/// Fresh discriminator and generator parameters, a pure function of `(config, seed)`.
pub fn build_models<T: Scalar>(config: &ArchConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let encoder = encoder_params(&config.encoder_layout(), &mut init);
    let decoder = decoder_params("dec", &config.decoder_layout(), &mut init);
    let generator = decoder_params("gen", &config.generator_layout(), &mut init);
    Ok(ModelParams {
        config: config.clone(),
        encoder,
        decoder,
        generator,
    })
}
