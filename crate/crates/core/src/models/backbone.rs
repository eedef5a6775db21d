//! Frame-embedding backbones for the waveform models.
//!
//! An external self-supervised model is plugged in through
//! [`EmbeddingProvider`]; the toy backbone is a strided random projection
//! with the same output contract, used for tests and desk-scale runs.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Audio;
use crate::error::{Error, Result};
use crate::nn::{Grads, Linear, ParamSet};

pub const BACKBONE_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProviderKind {
    ExternalSsl,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub provider: ProviderKind,
    /// Registry name of the external provider.
    #[serde(default)]
    pub provider_name: Option<String>,
    pub embed_dim: usize,
    /// Depth of the external backbone; informational for the toy one,
    /// which is a single projection layer.
    pub num_layers: usize,
    /// Toy backbone frame length and hop in samples.
    pub stride: usize,
    /// Fixed seed of the toy projection, independent of run seeds.
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl BackboneConfig {
    pub fn toy() -> Self {
        Self {
            provider: ProviderKind::Toy,
            provider_name: None,
            embed_dim: 768,
            num_layers: 12,
            stride: 320,
            seed: 0x55_4C,
        }
    }

    pub fn external(name: impl Into<String>) -> Self {
        Self {
            provider: ProviderKind::ExternalSsl,
            provider_name: Some(name.into()),
            ..Self::toy()
        }
    }

    pub fn tiny() -> Self {
        Self {
            embed_dim: 6,
            stride: 32,
            ..Self::toy()
        }
    }
}

/// Supplies T′ × embed_dim frame embeddings for 16 kHz mono audio.
pub trait EmbeddingProvider: Send + Sync {
    fn embed_dim(&self) -> usize;
    fn embed(&self, audio: &Audio) -> Result<Array2<f64>>;
}

#[derive(Clone, Default)]
pub struct ProviderRegistry {
    providers: HashMap<String, Arc<dyn EmbeddingProvider>>,
}

impl fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderRegistry")
            .field("providers", &self.providers.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl ProviderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, provider: Arc<dyn EmbeddingProvider>) {
        self.providers.insert(name.into(), provider);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn EmbeddingProvider>> {
        self.providers
            .get(name)
            .cloned()
            .ok_or_else(|| Error::ProviderUnavailable { name: name.to_string() })
    }
}

/// `gelu(W · frame + b)` over non-overlapping `stride`-sample frames.
#[derive(Debug, Clone)]
pub struct ToyBackbone {
    pub proj: Linear,
    pub stride: usize,
}

pub struct ToyCache {
    frames: Array2<f64>,
    pre: Array2<f64>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4;

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl ToyBackbone {
    pub fn new(params: &mut ParamSet, prefix: &str, cfg: &BackboneConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bound = (3.0 / cfg.stride as f64).sqrt() * 4.0;
        Self {
            proj: Linear::with_bound(params, &format!("{prefix}.proj"), cfg.stride, cfg.embed_dim, bound, &mut rng),
            stride: cfg.stride,
        }
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        samples / self.stride
    }

    fn frames(&self, audio: &Audio) -> Result<Array2<f64>> {
        let audio = audio.resampled(BACKBONE_SAMPLE_RATE)?;
        let t = self.frame_count(audio.samples.len());
        if t == 0 {
            return Err(Error::AudioTooShort { samples: audio.samples.len(), window: self.stride });
        }
        Ok(Array2::from_shape_fn((t, self.stride), |(i, j)| audio.samples[i * self.stride + j]))
    }

    pub fn forward(&self, params: &ParamSet, audio: &Audio) -> Result<(Array2<f64>, ToyCache)> {
        let frames = self.frames(audio)?;
        let pre = self.proj.forward(params, &frames);
        Ok((pre.mapv(gelu), ToyCache { frames, pre }))
    }

    pub fn backward(&self, params: &ParamSet, cache: &ToyCache, demb: &Array2<f64>, grads: &mut Grads) {
        let dpre = demb * &cache.pre.mapv(gelu_grad);
        self.proj.backward(params, &cache.frames, &dpre, grads, false);
    }
}
