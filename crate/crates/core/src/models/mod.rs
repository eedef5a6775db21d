//! MOS predictors: NISQA, ConvMaxPool, w2vMOS and the two fusion variants,
//! all behind [`Model`].
//!
//! Every predictor ends in the same range head, `1 + 4·σ(z)`, so outputs
//! are bounded to (1, 5) and comparable across architectures.

pub mod backbone;
pub mod checkpoint;
pub mod cnn;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::Audio;
use crate::error::{Error, Result};
use crate::features::MelPatchSequence;
use crate::nn::attention::{positional_encoding, AttentionPool, AttentionPoolCache, TransformerCache, TransformerLayer};
use crate::nn::{range_head, range_head_grad, Grads, Linear, ParamCount, ParamSet};

pub use backbone::{BackboneConfig, EmbeddingProvider, ProviderKind, ProviderRegistry, ToyBackbone};
pub use cnn::{gap, FramewiseCnn, FramewiseCnnConfig, MirroredDecoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Architecture {
    Nisqa,
    #[serde(rename = "CONVMAXPOOL")]
    ConvMaxPool,
    #[serde(rename = "W2VMOS")]
    W2vMos,
    Fusion1,
    Fusion2,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Nisqa,
        Architecture::ConvMaxPool,
        Architecture::W2vMos,
        Architecture::Fusion1,
        Architecture::Fusion2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Nisqa => "NISQA",
            Architecture::ConvMaxPool => "CONVMAXPOOL",
            Architecture::W2vMos => "W2VMOS",
            Architecture::Fusion1 => "FUSION1",
            Architecture::Fusion2 => "FUSION2",
        }
    }

    pub fn needs_patches(self) -> bool {
        !matches!(self, Architecture::W2vMos)
    }

    pub fn needs_audio(self) -> bool {
        matches!(self, Architecture::W2vMos | Architecture::Fusion1 | Architecture::Fusion2)
    }

    pub fn is_fusion(self) -> bool {
        matches!(self, Architecture::Fusion1 | Architecture::Fusion2)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.to_ascii_uppercase().replace(['_', ' '], "");
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == up)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NisqaHeadConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub pool_hidden: usize,
}

impl Default for NisqaHeadConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 1,
            ff_dim: 32,
            pool_hidden: 32,
        }
    }
}

impl NisqaHeadConfig {
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            heads: 2,
            layers: 1,
            ff_dim: 8,
            pool_hidden: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    #[serde(default)]
    pub cnn: FramewiseCnnConfig,
    #[serde(default)]
    pub nisqa: NisqaHeadConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    /// Update backbone weights when training a standalone w2vMOS model.
    #[serde(default = "default_true")]
    pub fine_tune_backbone: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn reference(architecture: Architecture) -> Self {
        Self {
            architecture,
            cnn: FramewiseCnnConfig::reference(),
            nisqa: NisqaHeadConfig::default(),
            backbone: BackboneConfig::toy(),
            fine_tune_backbone: true,
        }
    }

    pub fn tiny(architecture: Architecture) -> Self {
        Self {
            architecture,
            cnn: FramewiseCnnConfig::tiny(),
            nisqa: NisqaHeadConfig::tiny(),
            backbone: BackboneConfig::tiny(),
            fine_tune_backbone: true,
        }
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// Input width of the final affine layer of a fusion model.
    pub fn fusion_input_dim(&self) -> usize {
        match self.architecture {
            Architecture::Fusion1 => self.cnn.out_channels() + 1,
            Architecture::Fusion2 => self.cnn.out_channels() + 1 + self.backbone.embed_dim,
            _ => 0,
        }
    }
}

/// Per-utterance model input. CNN models read `patches`, waveform models
/// read `audio`, fusion models read both.
#[derive(Debug, Clone, Default)]
pub struct Sample {
    pub utterance_id: String,
    pub patches: Option<MelPatchSequence>,
    pub audio: Option<Audio>,
}

impl Sample {
    fn patches(&self) -> Result<&MelPatchSequence> {
        let p = self
            .patches
            .as_ref()
            .ok_or_else(|| Error::EmptyInput(format!("{}: model needs mel patches", self.utterance_id)))?;
        if p.is_empty() {
            return Err(Error::EmptyInput(format!("{}: empty patch sequence", self.utterance_id)));
        }
        Ok(p)
    }

    fn audio(&self) -> Result<&Audio> {
        self.audio
            .as_ref()
            .ok_or_else(|| Error::EmptyInput(format!("{}: model needs audio", self.utterance_id)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mos: f64,
    /// Utterance-level embedding (ConvMaxPool: max-pooled GAP vector;
    /// w2vMOS: time-mean of frames; NISQA: attention-pooled vector).
    pub embedding: Option<Array1<f64>>,
    /// NISQA attention-pooling weights over patches.
    pub attention: Option<Vec<f64>>,
}

/// Coordinatewise maximum over a sequence of vectors, with the index of
/// the first patch attaining each maximum.
pub fn temporal_max_pool(vectors: &[Array1<f64>]) -> (Array1<f64>, Vec<usize>) {
    let dim = vectors[0].len();
    let mut out = vectors[0].clone();
    let mut arg = vec![0; dim];
    for (p, v) in vectors.iter().enumerate().skip(1) {
        for j in 0..dim {
            if v[j] > out[j] {
                out[j] = v[j];
                arg[j] = p;
            }
        }
    }
    (out, arg)
}

/// Trunk → GAP per patch → temporal max-pool.
#[derive(Debug, Clone)]
struct CnnEmbedder {
    trunk: FramewiseCnn,
}

struct EmbedCache {
    caches: Vec<cnn::CnnCache>,
    argmax: Vec<usize>,
    map_hw: (usize, usize),
}

impl CnnEmbedder {
    fn forward(&self, params: &ParamSet, patches: &MelPatchSequence) -> Result<(Array1<f64>, EmbedCache)> {
        let mut caches = Vec::with_capacity(patches.len());
        let mut gaps = Vec::with_capacity(patches.len());
        let mut map_hw = (0, 0);
        for p in &patches.patches {
            let (map, cache) = self.trunk.forward(params, p)?;
            map_hw = (map.h, map.w);
            gaps.push(gap(&map));
            caches.push(cache);
        }
        let (emb, argmax) = temporal_max_pool(&gaps);
        Ok((emb, EmbedCache { caches, argmax, map_hw }))
    }

    fn backward(&self, params: &ParamSet, cache: &EmbedCache, demb: &Array1<f64>, grads: &mut Grads) {
        let c = demb.len();
        let spatial = cache.map_hw.0 * cache.map_hw.1;
        for (p, pc) in cache.caches.iter().enumerate() {
            if !cache.argmax.contains(&p) {
                continue;
            }
            let mut dmap = Array2::zeros((c, spatial));
            for j in 0..c {
                if cache.argmax[j] == p {
                    dmap.row_mut(j).fill(demb[j] / spatial as f64);
                }
            }
            self.trunk.backward(params, pc, dmap, grads, false);
        }
    }
}

#[derive(Debug, Clone)]
struct NisqaNet {
    trunk: FramewiseCnn,
    proj: Linear,
    layers: Vec<TransformerLayer>,
    pool: AttentionPool,
}

#[derive(Debug, Clone)]
struct ConvMaxPoolNet {
    embedder: CnnEmbedder,
    head: Linear,
}

#[derive(Clone)]
enum Backbone {
    Toy(ToyBackbone),
    External(Arc<dyn EmbeddingProvider>),
}

#[derive(Clone)]
struct W2vNet {
    prefix: String,
    backbone: Backbone,
    head: Linear,
    embed_dim: usize,
}

enum BackboneCache {
    Toy(backbone::ToyCache),
    External,
}

struct W2vCache {
    backbone: BackboneCache,
    frames: usize,
    pooled: Array1<f64>,
}

impl W2vNet {
    fn new(params: &mut ParamSet, prefix: &str, cfg: &BackboneConfig, registry: &ProviderRegistry, rng: &mut ChaCha8Rng) -> Result<Self> {
        let backbone = match cfg.provider {
            ProviderKind::Toy => Backbone::Toy(ToyBackbone::new(params, &format!("{prefix}backbone"), cfg)),
            ProviderKind::ExternalSsl => {
                let name = cfg.provider_name.as_deref().unwrap_or("");
                let provider = registry.get(name)?;
                if provider.embed_dim() != cfg.embed_dim {
                    return Err(Error::shape("external provider embed_dim", cfg.embed_dim, provider.embed_dim()));
                }
                Backbone::External(provider)
            }
        };
        let head = Linear::new(params, &format!("{prefix}head"), cfg.embed_dim, 1, rng);
        Ok(Self {
            prefix: prefix.to_string(),
            backbone,
            head,
            embed_dim: cfg.embed_dim,
        })
    }

    fn embed(&self, params: &ParamSet, audio: &Audio) -> Result<(Array2<f64>, BackboneCache)> {
        match &self.backbone {
            Backbone::Toy(b) => {
                let (e, c) = b.forward(params, audio)?;
                Ok((e, BackboneCache::Toy(c)))
            }
            Backbone::External(p) => {
                let audio = audio.resampled(backbone::BACKBONE_SAMPLE_RATE)?;
                let e = p.embed(&audio)?;
                if e.ncols() != self.embed_dim || e.nrows() == 0 {
                    return Err(Error::shape(
                        "external frame embeddings",
                        format!("T'x{}", self.embed_dim),
                        format!("{}x{}", e.nrows(), e.ncols()),
                    ));
                }
                Ok((e, BackboneCache::External))
            }
        }
    }

    /// Returns (z, pooled embedding, cache).
    fn forward(&self, params: &ParamSet, audio: &Audio) -> Result<(f64, W2vCache)> {
        let (frames, bc) = self.embed(params, audio)?;
        let pooled = frames.mean_axis(ndarray::Axis(0)).expect("non-empty frames");
        let z = self.head.forward_vec(params, &pooled)[0];
        Ok((
            z,
            W2vCache { backbone: bc, frames: frames.nrows(), pooled },
        ))
    }

    fn backward(&self, params: &ParamSet, cache: &W2vCache, dz: f64, grads: &mut Grads) {
        let dpooled = self.head.backward_vec(params, &cache.pooled, &Array1::from(vec![dz]), grads);
        let backbone_group = format!("{}backbone", self.prefix);
        if let (Backbone::Toy(b), BackboneCache::Toy(c)) = (&self.backbone, &cache.backbone) {
            if params.group_is_trainable(&backbone_group) {
                let row = &dpooled / cache.frames as f64;
                let demb = Array2::from_shape_fn((cache.frames, self.embed_dim), |(_, j)| row[j]);
                b.backward(params, c, &demb, grads);
            }
        }
    }
}

#[derive(Clone)]
struct FusionNet {
    embedder: CnnEmbedder,
    w2v: W2vNet,
    head: Linear,
    with_features: bool,
}

#[derive(Clone)]
enum Net {
    Nisqa(NisqaNet),
    ConvMaxPool(ConvMaxPoolNet),
    W2vMos(W2vNet),
    Fusion(FusionNet),
}

/// A constructed predictor: configuration, parameters and network.
#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    net: Net,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("architecture", &self.config.architecture)
            .field("params", &self.params.count())
            .finish()
    }
}

pub const FUSION_W2V_GROUP: &str = "w2v";

impl Model {
    /// Builds a model with freshly initialized weights. `seed` drives every
    /// randomly initialized layer except the toy backbone, which has its
    /// own fixed seed.
    pub fn new(config: ModelConfig, seed: u64, registry: &ProviderRegistry) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let net = match config.architecture {
            Architecture::Nisqa => {
                let h = &config.nisqa;
                if h.d_model == 0 || h.heads == 0 || h.d_model % h.heads != 0 {
                    return Err(Error::InvalidArgument("nisqa: d_model must be a positive multiple of heads".into()));
                }
                let trunk = FramewiseCnn::new(&mut params, "trunk", config.cnn.clone(), &mut rng)?;
                let proj = Linear::new(&mut params, "nisqa.proj", config.cnn.flat_dim(), h.d_model, &mut rng);
                let layers = (0..h.layers)
                    .map(|i| TransformerLayer::new(&mut params, &format!("nisqa.layer{i}"), h.d_model, h.heads, h.ff_dim, &mut rng))
                    .collect();
                let pool = AttentionPool::new(&mut params, "nisqa.pool", h.d_model, h.pool_hidden, &mut rng);
                Net::Nisqa(NisqaNet { trunk, proj, layers, pool })
            }
            Architecture::ConvMaxPool => {
                let trunk = FramewiseCnn::new(&mut params, "trunk", config.cnn.clone(), &mut rng)?;
                let head = Linear::new(&mut params, "head", config.cnn.out_channels(), 1, &mut rng);
                Net::ConvMaxPool(ConvMaxPoolNet { embedder: CnnEmbedder { trunk }, head })
            }
            Architecture::W2vMos => {
                let net = W2vNet::new(&mut params, "", &config.backbone, registry, &mut rng)?;
                if !config.fine_tune_backbone {
                    params.set_trainable("backbone", false);
                }
                Net::W2vMos(net)
            }
            Architecture::Fusion1 | Architecture::Fusion2 => {
                let trunk = FramewiseCnn::new(&mut params, "trunk", config.cnn.clone(), &mut rng)?;
                let w2v = W2vNet::new(&mut params, "w2v.", &config.backbone, registry, &mut rng)?;
                let head = Linear::new(&mut params, "fusion_head", config.fusion_input_dim(), 1, &mut rng);
                params.set_trainable(FUSION_W2V_GROUP, false);
                Net::Fusion(FusionNet {
                    embedder: CnnEmbedder { trunk },
                    w2v,
                    head,
                    with_features: config.architecture == Architecture::Fusion2,
                })
            }
        };
        Ok(Self { config, params, net })
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn count_parameters(&self) -> ParamCount {
        self.params.count()
    }

    /// The framewise CNN trunk, for models that have one.
    pub fn trunk(&self) -> Option<&FramewiseCnn> {
        match &self.net {
            Net::Nisqa(n) => Some(&n.trunk),
            Net::ConvMaxPool(n) => Some(&n.embedder.trunk),
            Net::Fusion(n) => Some(&n.embedder.trunk),
            Net::W2vMos(_) => None,
        }
    }

    /// Loads pretrained trunk weights (tensors named `trunk.*`).
    pub fn load_trunk(&mut self, encoder: &ParamSet) -> Result<()> {
        if self.trunk().is_none() {
            return Err(Error::InvalidArgument(format!("{} has no CNN trunk", self.architecture())));
        }
        let n = self
            .params
            .copy_from(encoder, "trunk.", "trunk.")
            .map_err(|m| Error::shape("trunk transfer", "matching trunk layout", m))?;
        let expected = self.params.tensors().iter().filter(|t| t.group() == "trunk").count();
        if n != expected {
            return Err(Error::shape("trunk transfer", format!("{expected} tensors"), n));
        }
        Ok(())
    }

    /// Copies a trained standalone w2vMOS model into the frozen branch of a
    /// fusion model.
    pub fn load_w2v_branch(&mut self, w2v: &Model) -> Result<()> {
        if !self.architecture().is_fusion() || w2v.architecture() != Architecture::W2vMos {
            return Err(Error::InvalidArgument("load_w2v_branch needs a fusion model and a W2VMOS source".into()));
        }
        if w2v.config.backbone != self.config.backbone {
            return Err(Error::shape("w2v branch", "identical backbone config", "different backbone config"));
        }
        let mut copied = 0;
        for prefix in ["backbone.", "head."] {
            copied += self
                .params
                .copy_from(&w2v.params, prefix, &format!("w2v.{prefix}"))
                .map_err(|m| Error::shape("w2v branch", "matching layout", m))?;
        }
        if copied != w2v.params.len() {
            return Err(Error::shape("w2v branch", w2v.params.len(), copied));
        }
        Ok(())
    }

    pub fn predict(&self, sample: &Sample) -> Result<f64> {
        Ok(self.forward(sample)?.mos)
    }

    pub fn forward(&self, sample: &Sample) -> Result<Prediction> {
        let params = &self.params;
        match &self.net {
            Net::ConvMaxPool(n) => {
                let (emb, _) = n.embedder.forward(params, sample.patches()?)?;
                let z = n.head.forward_vec(params, &emb)[0];
                Ok(Prediction { mos: range_head(z), embedding: Some(emb), attention: None })
            }
            Net::Nisqa(n) => {
                let (z, cache) = self.nisqa_forward(n, sample.patches()?)?;
                Ok(Prediction {
                    mos: range_head(z),
                    embedding: None,
                    attention: Some(cache.pool.weights.clone()),
                })
            }
            Net::W2vMos(n) => {
                let (z, cache) = n.forward(params, sample.audio()?)?;
                Ok(Prediction { mos: range_head(z), embedding: Some(cache.pooled), attention: None })
            }
            Net::Fusion(n) => {
                let (input, _, _) = self.fusion_input(n, sample)?;
                let z = n.head.forward_vec(params, &input)[0];
                Ok(Prediction { mos: range_head(z), embedding: Some(input), attention: None })
            }
        }
    }

    /// Runs forward and backward for one sample. `dloss` maps the prediction
    /// to dLoss/dPrediction; parameter gradients are added into `grads`.
    /// Returns the prediction.
    pub fn backward(&self, sample: &Sample, grads: &mut Grads, dloss: impl FnOnce(f64) -> f64) -> Result<f64> {
        let params = &self.params;
        match &self.net {
            Net::ConvMaxPool(n) => {
                let (emb, cache) = n.embedder.forward(params, sample.patches()?)?;
                let z = n.head.forward_vec(params, &emb)[0];
                let pred = range_head(z);
                let dz = dloss(pred) * range_head_grad(z);
                let demb = n.head.backward_vec(params, &emb, &Array1::from(vec![dz]), grads);
                n.embedder.backward(params, &cache, &demb, grads);
                Ok(pred)
            }
            Net::Nisqa(n) => {
                let (z, cache) = self.nisqa_forward(n, sample.patches()?)?;
                let pred = range_head(z);
                let dz = dloss(pred) * range_head_grad(z);
                let mut dx = n.pool.backward(params, &cache.pool, dz, grads);
                for (layer, lc) in n.layers.iter().zip(&cache.layers).rev() {
                    dx = layer.backward(params, lc, &dx, grads);
                }
                let dflat = n.proj.backward(params, &cache.flat, &dx, grads, true).unwrap();
                let (_, _, c) = self.config.cnn.output_shape();
                for (row, tc) in dflat.rows().into_iter().zip(&cache.trunk) {
                    let dmap = Array2::from_shape_vec((c, row.len() / c), row.to_vec()).unwrap();
                    n.trunk.backward(params, tc, dmap, grads, false);
                }
                Ok(pred)
            }
            Net::W2vMos(n) => {
                let (z, cache) = n.forward(params, sample.audio()?)?;
                let pred = range_head(z);
                n.backward(params, &cache, dloss(pred) * range_head_grad(z), grads);
                Ok(pred)
            }
            Net::Fusion(n) => {
                let (input, ecache, cdim) = self.fusion_input(n, sample)?;
                let z = n.head.forward_vec(params, &input)[0];
                let pred = range_head(z);
                let dz = dloss(pred) * range_head_grad(z);
                let dinput = n.head.backward_vec(params, &input, &Array1::from(vec![dz]), grads);
                let demb = dinput.slice(ndarray::s![..cdim]).to_owned();
                n.embedder.backward(params, &ecache, &demb, grads);
                // The w2v branch is frozen: nothing flows into it.
                Ok(pred)
            }
        }
    }

    fn nisqa_forward(&self, n: &NisqaNet, patches: &MelPatchSequence) -> Result<(f64, NisqaCache)> {
        let params = &self.params;
        let flat_dim = self.config.cnn.flat_dim();
        let mut flat = Array2::zeros((patches.len(), flat_dim));
        let mut trunk = Vec::with_capacity(patches.len());
        for (i, p) in patches.patches.iter().enumerate() {
            let (map, cache) = n.trunk.forward(params, p)?;
            flat.row_mut(i).assign(&map.flatten());
            trunk.push(cache);
        }
        let mut x = n.proj.forward(params, &flat) + positional_encoding(patches.len(), self.config.nisqa.d_model);
        let mut layers = Vec::with_capacity(n.layers.len());
        for layer in &n.layers {
            let (y, c) = layer.forward(params, &x);
            layers.push(c);
            x = y;
        }
        let (z, pool) = n.pool.forward(params, &x);
        Ok((z, NisqaCache { trunk, flat, layers, pool }))
    }

    /// Concatenated fusion-head input, the trunk cache, and the CNN
    /// embedding width.
    fn fusion_input(&self, n: &FusionNet, sample: &Sample) -> Result<(Array1<f64>, EmbedCache, usize)> {
        let params = &self.params;
        let (emb, cache) = n.embedder.forward(params, sample.patches()?)?;
        let (z, w2v) = n.w2v.forward(params, sample.audio()?)?;
        let mut input: Vec<f64> = emb.to_vec();
        input.push(range_head(z));
        if n.with_features {
            input.extend(w2v.pooled.iter());
        }
        let expected = n.head.din;
        if input.len() != expected {
            return Err(Error::shape("fusion head input", expected, input.len()));
        }
        Ok((Array1::from(input), cache, emb.len()))
    }
}

struct NisqaCache {
    trunk: Vec<cnn::CnnCache>,
    flat: Array2<f64>,
    layers: Vec<TransformerCache>,
    pool: AttentionPoolCache,
}

#[cfg(test)]
mod tests;
