//! Framewise CNN trunk shared by the mel-spectrogram models, plus the
//! mirrored decoder used for autoencoder pretraining.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{relu_backward, relu_inplace, ConvCache, PoolCache};
use crate::nn::{Conv2d, Fmap, Grads, MaxPool2d, ParamSet, Upsample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramewiseCnnConfig {
    /// Patch height (mel bands).
    pub input_height: usize,
    /// Patch width (frames).
    pub input_width: usize,
    /// Output channels of each 3×3 convolution.
    pub channels: Vec<usize>,
    /// Optional (height, width) max-pool after each convolution.
    pub pools: Vec<Option<(usize, usize)>>,
}

impl Default for FramewiseCnnConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl FramewiseCnnConfig {
    /// Six 3×3 blocks taking a 48×15 patch to 6×1×64.
    pub fn reference() -> Self {
        Self {
            input_height: 48,
            input_width: 15,
            channels: vec![16, 16, 32, 32, 64, 64],
            pools: vec![None, Some((2, 2)), None, Some((2, 2)), None, Some((2, 3))],
        }
    }

    /// Narrow variant with the same spatial lattice, for fast tests.
    pub fn tiny() -> Self {
        Self {
            channels: vec![2, 2, 3, 3, 4, 4],
            ..Self::reference()
        }
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&1)
    }

    /// (height, width, channels) of the trunk output.
    pub fn output_shape(&self) -> (usize, usize, usize) {
        let (mut h, mut w) = (self.input_height, self.input_width);
        for (ph, pw) in self.pools.iter().flatten() {
            h /= ph;
            w /= pw;
        }
        (h, w, self.out_channels())
    }

    pub fn flat_dim(&self) -> usize {
        let (h, w, c) = self.output_shape();
        h * w * c
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.pools.len() {
            return Err(Error::InvalidArgument(
                "cnn: channels and pools must be non-empty and the same length".into(),
            ));
        }
        if self.channels.contains(&0) {
            return Err(Error::InvalidArgument("cnn: zero-width layer".into()));
        }
        let (h, w, _) = self.output_shape();
        if h == 0 || w == 0 || self.pools.iter().flatten().any(|&(a, b)| a == 0 || b == 0) {
            return Err(Error::InvalidArgument("cnn: pooling collapses the patch to nothing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FramewiseCnn {
    pub config: FramewiseCnnConfig,
    convs: Vec<Conv2d>,
    pools: Vec<Option<MaxPool2d>>,
}

struct LayerCache {
    conv: ConvCache,
    activated: Array2<f64>,
    pool: Option<PoolCache>,
}

pub struct CnnCache {
    layers: Vec<LayerCache>,
}

impl FramewiseCnn {
    pub fn new(params: &mut ParamSet, prefix: &str, config: FramewiseCnnConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut cin = 1;
        for (i, &cout) in config.channels.iter().enumerate() {
            convs.push(Conv2d::new(params, &format!("{prefix}.conv{i}"), cin, cout, rng));
            cin = cout;
        }
        let pools = config
            .pools
            .iter()
            .map(|p| p.map(|(ph, pw)| MaxPool2d { ph, pw }))
            .collect();
        Ok(Self { config, convs, pools })
    }

    pub fn check_patch(&self, patch: &Array2<f64>) -> Result<()> {
        let expected = (self.config.input_height, self.config.input_width);
        if patch.dim() != expected {
            return Err(Error::shape(
                "framewise cnn input",
                format!("{}x{}", expected.0, expected.1),
                format!("{}x{}", patch.nrows(), patch.ncols()),
            ));
        }
        Ok(())
    }

    /// Maps one patch to a (h × w × c) feature map.
    pub fn forward(&self, params: &ParamSet, patch: &Array2<f64>) -> Result<(Fmap, CnnCache)> {
        self.check_patch(patch)?;
        let mut x = Fmap::from_matrix(patch);
        let mut layers = Vec::with_capacity(self.convs.len());
        for (conv, pool) in self.convs.iter().zip(&self.pools) {
            let (mut y, conv_cache) = conv.forward(params, &x);
            relu_inplace(&mut y.data);
            let activated = y.data.clone();
            let (out, pool_cache) = match pool {
                Some(p) => {
                    let (o, c) = p.forward(&y);
                    (o, Some(c))
                }
                None => (y, None),
            };
            layers.push(LayerCache { conv: conv_cache, activated, pool: pool_cache });
            x = out;
        }
        Ok((x, CnnCache { layers }))
    }

    pub fn forward_map(&self, params: &ParamSet, patch: &Array2<f64>) -> Result<Fmap> {
        Ok(self.forward(params, patch)?.0)
    }

    /// Backpropagates d(output map) into the trunk parameters. Returns the
    /// gradient with respect to the input patch when `need_input`.
    pub fn backward(&self, params: &ParamSet, cache: &CnnCache, dout: Array2<f64>, grads: &mut Grads, need_input: bool) -> Option<Array2<f64>> {
        let mut d = dout;
        for (i, (conv, layer)) in self.convs.iter().zip(&cache.layers).enumerate().rev() {
            if let (Some(pool), Some(pc)) = (&self.pools[i], &layer.pool) {
                d = pool.backward(pc, &d);
            }
            relu_backward(&layer.activated, &mut d);
            let dx = conv.backward(params, &layer.conv, &d, grads, i > 0 || need_input);
            match dx {
                Some(fm) => d = fm.data,
                None => return None,
            }
        }
        Some(d)
    }
}

/// Spatial mean of each channel.
pub fn gap(map: &Fmap) -> Array1<f64> {
    let n = (map.h * map.w) as f64;
    map.data.rows().into_iter().map(|r| r.sum() / n).collect()
}

/// Decoder that mirrors the trunk: for each encoder block in reverse, an
/// upsample back to the pre-pool size followed by a 3×3 convolution.
#[derive(Debug, Clone)]
pub struct MirroredDecoder {
    convs: Vec<Conv2d>,
    ups: Vec<Option<Upsample>>,
}

pub struct DecoderCache {
    inputs: Vec<(usize, usize)>,
    convs: Vec<ConvCache>,
    activated: Vec<Array2<f64>>,
}

impl MirroredDecoder {
    pub fn new(params: &mut ParamSet, prefix: &str, config: &FramewiseCnnConfig, rng: &mut impl Rng) -> Self {
        // Spatial size before each encoder pool.
        let mut sizes = Vec::new();
        let (mut h, mut w) = (config.input_height, config.input_width);
        for p in &config.pools {
            sizes.push((h, w));
            if let Some((ph, pw)) = p {
                h /= ph;
                w /= pw;
            }
        }
        let n = config.channels.len();
        let mut convs = Vec::new();
        let mut ups = Vec::new();
        for (j, i) in (0..n).rev().enumerate() {
            let cin = config.channels[i];
            let cout = if i == 0 { 1 } else { config.channels[i - 1] };
            ups.push(config.pools[i].map(|_| Upsample { h: sizes[i].0, w: sizes[i].1 }));
            convs.push(Conv2d::new(params, &format!("{prefix}.conv{j}"), cin, cout, rng));
        }
        Self { convs, ups }
    }

    pub fn forward(&self, params: &ParamSet, code: &Fmap) -> (Array2<f64>, DecoderCache) {
        let mut x = code.clone();
        let mut cache = DecoderCache { inputs: Vec::new(), convs: Vec::new(), activated: Vec::new() };
        let last = self.convs.len() - 1;
        for (j, (conv, up)) in self.convs.iter().zip(&self.ups).enumerate() {
            cache.inputs.push((x.h, x.w));
            if let Some(u) = up {
                x = u.forward(&x);
            }
            let (mut y, c) = conv.forward(params, &x);
            if j != last {
                relu_inplace(&mut y.data);
            }
            cache.convs.push(c);
            cache.activated.push(y.data.clone());
            x = y;
        }
        let (h, w) = (x.h, x.w);
        let out = x.data.into_shape_with_order((h, w)).expect("single-channel output");
        (out, cache)
    }

    /// Returns d(code).
    pub fn backward(&self, params: &ParamSet, cache: &DecoderCache, dout: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        let (h, w) = dout.dim();
        let mut d = dout.to_shape((1, h * w)).unwrap().to_owned();
        let last = self.convs.len() - 1;
        for j in (0..self.convs.len()).rev() {
            if j != last {
                relu_backward(&cache.activated[j], &mut d);
            }
            d = self.convs[j]
                .backward(params, &cache.convs[j], &d, grads, true)
                .unwrap()
                .data;
            if let Some(u) = &self.ups[j] {
                let (sh, sw) = cache.inputs[j];
                d = u.backward(&d, sh, sw);
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_shape_lattice() {
        let cfg = FramewiseCnnConfig::reference();
        assert_eq!(cfg.output_shape(), (6, 1, 64));
        assert_eq!(cfg.flat_dim(), 384);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamSet::new();
        let cnn = FramewiseCnn::new(&mut p, "trunk", cfg, &mut rng).unwrap();
        let patch = Array2::from_shape_fn((48, 15), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let map = cnn.forward_map(&p, &patch).unwrap();
        assert_eq!(map.shape(), (6, 1, 64));
        assert_eq!(map.flatten().len(), 384);
        assert_eq!(p.count().total, 71_792);
    }

    #[test]
    fn zero_input_gives_zero_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        let cnn = FramewiseCnn::new(&mut p, "trunk", FramewiseCnnConfig::reference(), &mut rng).unwrap();
        let map = cnn.forward_map(&p, &Array2::zeros((48, 15))).unwrap();
        assert!(map.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_patch_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        let cnn = FramewiseCnn::new(&mut p, "trunk", FramewiseCnnConfig::tiny(), &mut rng).unwrap();
        let err = cnn.forward_map(&p, &Array2::zeros((40, 15))).unwrap_err();
        assert!(err.to_string().contains("48x15"), "{err}");
    }

    #[test]
    fn gap_means() {
        let ones = Fmap::new(Array2::ones((64, 6)), 6, 1);
        assert!(gap(&ones).iter().all(|&v| v == 1.0));
        let by_filter = Fmap::new(Array2::from_shape_fn((64, 6), |(f, _)| f as f64), 6, 1);
        assert_eq!(gap(&by_filter).to_vec(), (0..64).map(|f| f as f64).collect::<Vec<_>>());
    }

    #[test]
    fn decoder_reconstructs_input_shape() {
        let cfg = FramewiseCnnConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::new();
        let enc = FramewiseCnn::new(&mut p, "trunk", cfg.clone(), &mut rng).unwrap();
        let dec = MirroredDecoder::new(&mut p, "decoder", &cfg, &mut rng);
        let patch = Array2::from_shape_fn((48, 15), |(i, j)| (i as f64 - j as f64) / 10.0);
        let code = enc.forward_map(&p, &patch).unwrap();
        let (recon, _) = dec.forward(&p, &code);
        assert_eq!(recon.dim(), (48, 15));
    }
}
