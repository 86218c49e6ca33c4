//! Generator and discriminator assemblies.
//!
//! Shapes and block widths follow fixed layer strings: the generator is
//! CBR(64)-CBR(128)-CBR(256)-Res(256)×5-DBL(128)-DBL(64)-SA(64)-CT(3) with a
//! tanh head; the discriminator stacks five spectrally normalized stride-2
//! convolutions (64, 128, 256, 512, 512), a spectrally normalized attention
//! layer, and a one-channel sigmoid patch head.
//!
//! Parameter access is name-keyed: `params()` / `params_mut()` walk the
//! trainable tensors in a fixed order, `buffers()` the non-trained state
//! (batch-norm running statistics, spectral power-iteration vectors). Names
//! are stable and serve as checkpoint keys.

pub mod discriminator;
pub mod generator;

pub use discriminator::{DiscCache, DiscWeights, Discriminator};
pub use generator::{GenCache, Generator};

use crate::error::{Error, Result};
use crate::nn::attention::AttentionMode;
use serde::{Deserialize, Serialize};

/// First generator block stride. `Preserve` (stride 1) keeps downsampling
/// at ×4 so the decoder restores the input size; `Literal` (stride 2) takes
/// the three stride-2 encoder text at face value and halves the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StemStride {
    Preserve,
    Literal,
}

impl StemStride {
    pub fn stride(self) -> usize {
        match self {
            StemStride::Preserve => 1,
            StemStride::Literal => 2,
        }
    }
}

fn default_image_size() -> usize {
    224
}
fn default_attention() -> AttentionMode {
    AttentionMode::Sagan
}
fn default_pool_cap() -> usize {
    1024
}
fn default_stem() -> StemStride {
    StemStride::Preserve
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_attention")]
    pub attention: AttentionMode,
    /// Key/value positions are average-pooled down to at most this many.
    /// The default reproduces factor-4 pooling at 64×64 feature maps.
    #[serde(default = "default_pool_cap")]
    pub attention_pool_cap: usize,
    #[serde(default = "default_stem")]
    pub stem_stride: StemStride,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            image_size: default_image_size(),
            attention: default_attention(),
            attention_pool_cap: default_pool_cap(),
            stem_stride: default_stem(),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let div = 4 * self.stem_stride.stride();
        if self.image_size % div != 0 {
            return Err(Error::Config(format!(
                "image size {} must be divisible by {}",
                self.image_size, div
            )));
        }
        if self.image_size < 64 {
            return Err(Error::Config(format!(
                "image size {} is below the discriminator minimum of 64",
                self.image_size
            )));
        }
        if self.attention_pool_cap == 0 {
            return Err(Error::Config("attention pool cap must be positive".into()));
        }
        Ok(())
    }
}
