//! Self-attention encoder and attention pooling over a patch sequence.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::layers::{relu_backward, relu_inplace, Linear};
use super::params::{Grads, ParamId, ParamSet};

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Backward of softmax: `w ⊙ (dw - <w, dw>)`.
fn softmax_backward(w: &[f64], dw: &[f64]) -> Vec<f64> {
    let dot: f64 = w.iter().zip(dw).map(|(a, b)| a * b).sum();
    w.iter().zip(dw).map(|(wi, di)| wi * (di - dot)).collect()
}

/// Sinusoidal position table, (len × dim).
pub fn positional_encoding(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(t, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let a = t as f64 * rate;
        if i % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        Self {
            gamma: params.filled(format!("{name}.gamma"), &[dim], 1.0),
            beta: params.zeros(format!("{name}.beta"), &[dim]),
            dim,
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let g = params.get(self.gamma);
        let b = params.get(self.beta);
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let mut y = xhat.clone();
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * g[j] + b[j];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, params: &ParamSet, cache: &LayerNormCache, dy: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        let g = params.get(self.gamma).to_vec();
        {
            let dg = grads.get_mut(self.gamma);
            for (dyr, xr) in dy.rows().into_iter().zip(cache.xhat.rows()) {
                for j in 0..self.dim {
                    dg[j] += dyr[j] * xr[j];
                }
            }
        }
        {
            let db = grads.get_mut(self.beta);
            for dyr in dy.rows() {
                for j in 0..self.dim {
                    db[j] += dyr[j];
                }
            }
        }
        let n = self.dim as f64;
        let mut dx = Array2::zeros(dy.dim());
        for (r, (dyr, xr)) in dy.rows().into_iter().zip(cache.xhat.rows()).enumerate() {
            let dxhat: Vec<f64> = (0..self.dim).map(|j| dyr[j] * g[j]).collect();
            let sum: f64 = dxhat.iter().sum();
            let sum_x: f64 = dxhat.iter().zip(xr.iter()).map(|(a, b)| a * b).sum();
            for j in 0..self.dim {
                dx[[r, j]] = cache.inv_std[r] / n * (n * dxhat[j] - sum - xr[j] * sum_x);
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct MhaCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

impl MultiHeadSelfAttention {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "attention width must divide into heads");
        Self {
            q: Linear::new(params, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(params, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(params, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(params, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &Array2<f64>) -> (Array2<f64>, MhaCache) {
        let q = self.q.forward(params, x);
        let k = self.k.forward(params, x);
        let v = self.v.forward(params, x);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let t = x.nrows();
        let mut concat = Array2::zeros((t, self.dim));
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let mut a = Array2::zeros((t, t));
            for (i, row) in scores.rows().into_iter().enumerate() {
                let w = softmax(&row.to_vec());
                a.row_mut(i).assign(&Array1::from(w));
            }
            concat.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            attn.push(a);
        }
        let out = self.o.forward(params, &concat);
        (
            out,
            MhaCache { x: x.clone(), q, k, v, attn, concat },
        )
    }

    pub fn backward(&self, params: &ParamSet, c: &MhaCache, dout: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        let dconcat = self.o.backward(params, &c.concat, dout, grads, true).unwrap();
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let t = c.x.nrows();
        let mut dq = Array2::zeros((t, self.dim));
        let mut dk = Array2::zeros((t, self.dim));
        let mut dv = Array2::zeros((t, self.dim));
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let a = &c.attn[h];
            let dho = dconcat.slice(cols);
            let da = dho.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&dho));
            let mut ds = Array2::zeros((t, t));
            for i in 0..t {
                let row = softmax_backward(&a.row(i).to_vec(), &da.row(i).to_vec());
                ds.row_mut(i).assign(&Array1::from(row));
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let mut dx = self.q.backward(params, &c.x, &dq, grads, true).unwrap();
        dx += &self.k.backward(params, &c.x, &dk, grads, true).unwrap();
        dx += &self.v.backward(params, &c.x, &dv, grads, true).unwrap();
        dx
    }
}

/// Post-norm transformer encoder layer with a ReLU feed-forward block.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub attn: MultiHeadSelfAttention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

pub struct TransformerCache {
    attn: MhaCache,
    norm1: LayerNormCache,
    h1: Array2<f64>,
    ff_hidden: Array2<f64>,
    norm2: LayerNormCache,
}

impl TransformerLayer {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize, heads: usize, ff_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            attn: MultiHeadSelfAttention::new(params, &format!("{name}.attn"), dim, heads, rng),
            norm1: LayerNorm::new(params, &format!("{name}.norm1"), dim),
            ff1: Linear::new(params, &format!("{name}.ff1"), dim, ff_dim, rng),
            ff2: Linear::new(params, &format!("{name}.ff2"), ff_dim, dim, rng),
            norm2: LayerNorm::new(params, &format!("{name}.norm2"), dim),
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &Array2<f64>) -> (Array2<f64>, TransformerCache) {
        let (a, attn) = self.attn.forward(params, x);
        let (h1, norm1) = self.norm1.forward(params, &(x + &a));
        let mut ff_hidden = self.ff1.forward(params, &h1);
        relu_inplace(&mut ff_hidden);
        let f = self.ff2.forward(params, &ff_hidden);
        let (out, norm2) = self.norm2.forward(params, &(&h1 + &f));
        (out, TransformerCache { attn, norm1, h1, ff_hidden, norm2 })
    }

    pub fn backward(&self, params: &ParamSet, c: &TransformerCache, dout: &Array2<f64>, grads: &mut Grads) -> Array2<f64> {
        let dsum2 = self.norm2.backward(params, &c.norm2, dout, grads);
        let mut dhidden = self.ff2.backward(params, &c.ff_hidden, &dsum2, grads, true).unwrap();
        relu_backward(&c.ff_hidden, &mut dhidden);
        let mut dh1 = self.ff1.backward(params, &c.h1, &dhidden, grads, true).unwrap();
        dh1 += &dsum2;
        let dsum1 = self.norm1.backward(params, &c.norm1, &dh1, grads);
        let mut dx = self.attn.backward(params, &c.attn, &dsum1, grads);
        dx += &dsum1;
        dx
    }
}

/// Scores each time step with a small MLP, softmax-normalizes over time and
/// maps the weighted mean through an affine value head to one scalar.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    pub score_hidden: Linear,
    pub score_out: Linear,
    pub value: Linear,
}

pub struct AttentionPoolCache {
    x: Array2<f64>,
    hidden: Array2<f64>,
    pub weights: Vec<f64>,
    pooled: Array1<f64>,
}

impl AttentionPool {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            score_hidden: Linear::new(params, &format!("{name}.score_hidden"), dim, hidden, rng),
            score_out: Linear::new(params, &format!("{name}.score_out"), hidden, 1, rng),
            value: Linear::new(params, &format!("{name}.value"), dim, 1, rng),
        }
    }

    pub fn forward(&self, params: &ParamSet, x: &Array2<f64>) -> (f64, AttentionPoolCache) {
        let mut hidden = self.score_hidden.forward(params, x);
        relu_inplace(&mut hidden);
        let scores = self.score_out.forward(params, &hidden);
        let weights = softmax(&scores.column(0).to_vec());
        let pooled = Array1::from(weights.clone()).dot(x);
        let z = self.value.forward_vec(params, &pooled)[0];
        (z, AttentionPoolCache { x: x.clone(), hidden, weights, pooled })
    }

    pub fn backward(&self, params: &ParamSet, c: &AttentionPoolCache, dz: f64, grads: &mut Grads) -> Array2<f64> {
        let dpooled = self.value.backward_vec(params, &c.pooled, &Array1::from(vec![dz]), grads);
        let dw: Vec<f64> = c.x.rows().into_iter().map(|r| r.dot(&dpooled)).collect();
        let dscores = softmax_backward(&c.weights, &dw);
        let t = c.x.nrows();
        let dscores = Array2::from_shape_vec((t, 1), dscores).unwrap();
        let mut dhidden = self.score_out.backward(params, &c.hidden, &dscores, grads, true).unwrap();
        relu_backward(&c.hidden, &mut dhidden);
        let mut dx = self.score_hidden.backward(params, &c.x, &dhidden, grads, true).unwrap();
        for (i, mut row) in dx.axis_iter_mut(Axis(0)).enumerate() {
            row.scaled_add(c.weights[i], &dpooled);
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_normalizes() {
        let w = softmax(&[1.0, 2.0, 3.0, 1000.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(softmax(&[4.2]), vec![1.0]);
    }

    #[test]
    fn positional_rows_differ() {
        let pe = positional_encoding(3, 8);
        assert_eq!(pe[[0, 0]], 0.0);
        assert_eq!(pe[[0, 1]], 1.0);
        assert_ne!(pe.row(1), pe.row(2));
    }
}
