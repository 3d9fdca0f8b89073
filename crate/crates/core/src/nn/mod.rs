//! Encoder, decoder and generator networks.
//!
//! The discriminator is an auto-encoder: a convolutional encoder that
//! sub-samples down to an 8×8 map and projects to a hidden vector, followed
//! by a decoder that projects back to an 8×8×n map and up-samples to the
//! image size. The generator has the decoder's architecture with its own
//! weights.

mod forward;
mod params;

pub use forward::{
    carry_schedule, decode, discriminate, encode, generate, residual_mix, skip_concat, tape_residual_mix,
    tape_skip_concat,
};
pub use params::{build_models, ModelParams, Param, ParamSet};

use crate::error::{Error, Result};

/// Final spatial size of the encoder and starting size of the decoder.
pub const BASE_RESOLUTION: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub image_size: usize,
    pub channels: usize,
    pub base_filters: usize,
    pub repeats_per_block: usize,
    /// Dimension of the auto-encoder hidden state.
    pub hidden_dim: usize,
    /// Dimension of the generator input.
    pub latent_dim: usize,
    pub use_skip_connections: bool,
    pub use_vanishing_residuals: bool,
    pub carry_decay_steps: u64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_size: 16,
            channels: 1,
            base_filters: 8,
            repeats_per_block: 2,
            hidden_dim: 64,
            latent_dim: 64,
            use_skip_connections: false,
            use_vanishing_residuals: false,
            carry_decay_steps: 16000,
        }
    }
}

/// One 3×3 convolution followed by an ELU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Wrapped in a vanishing residual (input and output have the same shape).
    pub residual: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderLayout {
    /// Convolutions per resolution level, from `image_size` down to 8.
    pub levels: Vec<Vec<ConvLayer>>,
    pub fc_in: usize,
    pub hidden_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderLayout {
    pub input_dim: usize,
    pub base_filters: usize,
    /// Convolutions per resolution level, from 8 up to `image_size`.
    pub levels: Vec<Vec<ConvLayer>>,
    pub skip: bool,
    pub out_channels: usize,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.image_size;
        if s < 16 || !s.is_power_of_two() {
            return Err(Error::Config(format!(
                "image_size {s} must be a power of two >= 16"
            )));
        }
        if self.channels == 0 || self.base_filters == 0 || self.repeats_per_block == 0 {
            return Err(Error::Config(
                "channels, base_filters and repeats_per_block must be >= 1".into(),
            ));
        }
        if self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::Config("hidden_dim and latent_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of resolution levels: `image_size, image_size/2, ..., 8`.
    pub fn levels(&self) -> usize {
        (self.image_size / BASE_RESOLUTION).trailing_zeros() as usize + 1
    }

    pub fn encoder_layout(&self) -> EncoderLayout {
        let n = self.base_filters;
        let mut levels = Vec::new();
        let mut c_in = self.channels;
        for i in 0..self.levels() {
            let c = (i + 1) * n;
            let mut convs = Vec::new();
            for _ in 0..self.repeats_per_block {
                convs.push(ConvLayer {
                    in_channels: c_in,
                    out_channels: c,
                    residual: self.use_vanishing_residuals && c_in == c,
                });
                c_in = c;
            }
            levels.push(convs);
        }
        EncoderLayout {
            levels,
            fc_in: BASE_RESOLUTION * BASE_RESOLUTION * c_in,
            hidden_dim: self.hidden_dim,
        }
    }

    fn decoder_like(&self, input_dim: usize) -> DecoderLayout {
        let n = self.base_filters;
        let mut levels = Vec::new();
        for j in 0..self.levels() {
            let mut c_in = if j > 0 && self.use_skip_connections { 2 * n } else { n };
            let mut convs = Vec::new();
            for _ in 0..self.repeats_per_block {
                convs.push(ConvLayer {
                    in_channels: c_in,
                    out_channels: n,
                    residual: self.use_vanishing_residuals && c_in == n,
                });
                c_in = n;
            }
            levels.push(convs);
        }
        DecoderLayout {
            input_dim,
            base_filters: n,
            levels,
            skip: self.use_skip_connections,
            out_channels: self.channels,
        }
    }

    pub fn decoder_layout(&self) -> DecoderLayout {
        self.decoder_like(self.hidden_dim)
    }

    pub fn generator_layout(&self) -> DecoderLayout {
        self.decoder_like(self.latent_dim)
    }
}
