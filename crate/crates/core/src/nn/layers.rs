//! Convolution, pooling and affine layers with explicit backward passes.
//!
//! Layers are stateless handles into a [`ParamSet`]; `forward` returns the
//! output together with whatever the matching `backward` needs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::params::{Grads, ParamId, ParamSet};

/// A multi-channel 2-D feature map stored as (channels × height·width).
#[derive(Debug, Clone, PartialEq)]
pub struct Fmap {
    pub data: Array2<f64>,
    pub h: usize,
    pub w: usize,
}

impl Fmap {
    pub fn new(data: Array2<f64>, h: usize, w: usize) -> Self {
        debug_assert_eq!(data.ncols(), h * w);
        Self { data, h, w }
    }

    /// Single-channel map from an (h × w) matrix.
    pub fn from_matrix(m: &Array2<f64>) -> Self {
        let (h, w) = m.dim();
        let data = m
            .to_shape((1, h * w))
            .expect("contiguous reshape")
            .to_owned();
        Self { data, h, w }
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::new(Array2::zeros((c, h * w)), h, w)
    }

    /// Channel-major flattening.
    pub fn flatten(&self) -> Array1<f64> {
        self.data.iter().copied().collect()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.channels())
    }
}

/// 3×3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
}

pub struct ConvCache {
    cols: Array2<f64>,
    h: usize,
    w: usize,
}

impl Conv2d {
    /// Kaiming-uniform weights (ReLU gain), zero bias.
    pub fn new(params: &mut ParamSet, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (cin * 9) as f64;
        let weight = params.uniform(format!("{name}.weight"), &[cout, cin, 3, 3], (6.0 / fan_in).sqrt(), rng);
        let bias = params.zeros(format!("{name}.bias"), &[cout]);
        Self { weight, bias, cin, cout }
    }

    fn weight_view<'a>(&self, params: &'a ParamSet) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.cout, self.cin * 9), params.get(self.weight)).expect("conv weight shape")
    }

    fn im2col(&self, x: &Fmap) -> Array2<f64> {
        let (h, w) = (x.h, x.w);
        let mut cols = Array2::zeros((self.cin * 9, h * w));
        for c in 0..self.cin {
            let src = x.data.row(c);
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut dst = cols.row_mut(c * 9 + ky * 3 + kx);
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        for xx in 0..w {
                            let sx = xx + kx;
                            if sx < 1 || sx > w {
                                continue;
                            }
                            dst[y * w + xx] = src[sy * w + sx - 1];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, h: usize, w: usize) -> Fmap {
        let mut out = Fmap::zeros(self.cin, h, w);
        for c in 0..self.cin {
            let mut dst = out.data.row_mut(c);
            for ky in 0..3 {
                for kx in 0..3 {
                    let src = cols.row(c * 9 + ky * 3 + kx);
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        for xx in 0..w {
                            let sx = xx + kx;
                            if sx < 1 || sx > w {
                                continue;
                            }
                            dst[sy * w + sx - 1] += src[y * w + xx];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, params: &ParamSet, x: &Fmap) -> (Fmap, ConvCache) {
        assert_eq!(x.channels(), self.cin, "conv input channels");
        let cols = self.im2col(x);
        let mut out = self.weight_view(params).dot(&cols);
        let bias = params.get(self.bias);
        for (mut row, b) in out.rows_mut().into_iter().zip(bias) {
            row += *b;
        }
        (
            Fmap::new(out, x.h, x.w),
            ConvCache { cols, h: x.h, w: x.w },
        )
    }

    /// Accumulates parameter gradients and returns d(input) when `need_input`.
    pub fn backward(&self, params: &ParamSet, cache: &ConvCache, dout: &Array2<f64>, grads: &mut Grads, need_input: bool) -> Option<Fmap> {
        let dw = dout.dot(&cache.cols.t());
        for (g, d) in grads.get_mut(self.weight).iter_mut().zip(dw.iter()) {
            *g += d;
        }
        for (g, row) in grads.get_mut(self.bias).iter_mut().zip(dout.rows()) {
            *g += row.sum();
        }
        need_input.then(|| {
            let dcols = self.weight_view(params).t().dot(dout);
            self.col2im(&dcols, cache.h, cache.w)
        })
    }
}

pub fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes gradient entries where the forward output was not positive.
pub fn relu_backward(out: &Array2<f64>, dout: &mut Array2<f64>) {
    ndarray::Zip::from(dout).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
}

/// Non-overlapping max pooling with floor semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub ph: usize,
    pub pw: usize,
}

pub struct PoolCache {
    argmax: Vec<usize>,
    h: usize,
    w: usize,
}

impl MaxPool2d {
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.ph, w / self.pw)
    }

    pub fn forward(&self, x: &Fmap) -> (Fmap, PoolCache) {
        let (oh, ow) = self.output_hw(x.h, x.w);
        let c = x.channels();
        let mut out = Array2::zeros((c, oh * ow));
        let mut argmax = vec![0; c * oh * ow];
        for ch in 0..c {
            let src = x.data.row(ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dy in 0..self.ph {
                        for dx in 0..self.pw {
                            let idx = (oy * self.ph + dy) * x.w + ox * self.pw + dx;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[[ch, oy * ow + ox]] = best;
                    argmax[ch * oh * ow + oy * ow + ox] = best_idx;
                }
            }
        }
        (Fmap::new(out, oh, ow), PoolCache { argmax, h: x.h, w: x.w })
    }

    pub fn backward(&self, cache: &PoolCache, dout: &Array2<f64>) -> Array2<f64> {
        let c = dout.nrows();
        let per = dout.ncols();
        let mut dx = Array2::zeros((c, cache.h * cache.w));
        for ch in 0..c {
            for j in 0..per {
                dx[[ch, cache.argmax[ch * per + j]]] += dout[[ch, j]];
            }
        }
        dx
    }
}

/// Nearest-neighbour upsampling to an explicit target size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Upsample {
    pub h: usize,
    pub w: usize,
}

impl Upsample {
    fn source(&self, y: usize, x: usize, sh: usize, sw: usize) -> usize {
        let sy = (y * sh / self.h).min(sh - 1);
        let sx = (x * sw / self.w).min(sw - 1);
        sy * sw + sx
    }

    pub fn forward(&self, x: &Fmap) -> Fmap {
        let c = x.channels();
        let mut out = Array2::zeros((c, self.h * self.w));
        for ch in 0..c {
            for y in 0..self.h {
                for xx in 0..self.w {
                    out[[ch, y * self.w + xx]] = x.data[[ch, self.source(y, xx, x.h, x.w)]];
                }
            }
        }
        Fmap::new(out, self.h, self.w)
    }

    pub fn backward(&self, dout: &Array2<f64>, sh: usize, sw: usize) -> Array2<f64> {
        let c = dout.nrows();
        let mut dx = Array2::zeros((c, sh * sw));
        for ch in 0..c {
            for y in 0..self.h {
                for xx in 0..self.w {
                    dx[[ch, self.source(y, xx, sh, sw)]] += dout[[ch, y * self.w + xx]];
                }
            }
        }
        dx
    }
}

/// Affine map `y = x W^T + b` applied row-wise.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    /// Uniform(±1/sqrt(fan_in)) weights, zero bias.
    pub fn new(params: &mut ParamSet, name: &str, din: usize, dout: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (din as f64).sqrt();
        Self::with_bound(params, name, din, dout, bound, rng)
    }

    pub fn with_bound(params: &mut ParamSet, name: &str, din: usize, dout: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let weight = params.uniform(format!("{name}.weight"), &[dout, din], bound, rng);
        let bias = params.zeros(format!("{name}.bias"), &[dout]);
        Self { weight, bias, din, dout }
    }

    pub fn weight_view<'a>(&self, params: &'a ParamSet) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.dout, self.din), params.get(self.weight)).expect("linear weight shape")
    }

    pub fn bias_view<'a>(&self, params: &'a ParamSet) -> ArrayView1<'a, f64> {
        ArrayView1::from(params.get(self.bias))
    }

    /// x: (n × din) → (n × dout)
    pub fn forward(&self, params: &ParamSet, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.din, "linear input width");
        x.dot(&self.weight_view(params).t()) + &self.bias_view(params)
    }

    pub fn forward_vec(&self, params: &ParamSet, x: &Array1<f64>) -> Array1<f64> {
        self.weight_view(params).dot(x) + &self.bias_view(params)
    }

    /// dy: (n × dout); accumulates dW, db and returns dx when requested.
    pub fn backward(&self, params: &ParamSet, x: &Array2<f64>, dy: &Array2<f64>, grads: &mut Grads, need_input: bool) -> Option<Array2<f64>> {
        let dw = dy.t().dot(x);
        for (g, d) in grads.get_mut(self.weight).iter_mut().zip(dw.iter()) {
            *g += d;
        }
        let db = dy.sum_axis(Axis(0));
        for (g, d) in grads.get_mut(self.bias).iter_mut().zip(db.iter()) {
            *g += d;
        }
        need_input.then(|| dy.dot(&self.weight_view(params)))
    }

    pub fn backward_vec(&self, params: &ParamSet, x: &Array1<f64>, dy: &Array1<f64>, grads: &mut Grads) -> Array1<f64> {
        {
            let g = grads.get_mut(self.weight);
            for o in 0..self.dout {
                for i in 0..self.din {
                    g[o * self.din + i] += dy[o] * x[i];
                }
            }
        }
        for (g, d) in grads.get_mut(self.bias).iter_mut().zip(dy.iter()) {
            *g += d;
        }
        self.weight_view(params).t().dot(dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        let conv = Conv2d::new(&mut p, "c", 2, 3, &mut rng);
        p.get_mut(conv.bias).copy_from_slice(&[0.1, -0.2, 0.3]);
        let x = Fmap::new(Array2::from_shape_fn((2, 20), |_| rng.random_range(-1.0..1.0)), 4, 5);
        let (y, _) = conv.forward(&p, &x);
        let w = p.get(conv.weight);
        let b = p.get(conv.bias);
        for co in 0..3 {
            for yy in 0..4i64 {
                for xx in 0..5i64 {
                    let mut acc = b[co];
                    for ci in 0..2 {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                                if (0..4).contains(&sy) && (0..5).contains(&sx) {
                                    acc += w[((co * 2 + ci) * 3 + ky as usize) * 3 + kx as usize]
                                        * x.data[[ci, (sy * 5 + sx) as usize]];
                                }
                            }
                        }
                    }
                    assert!((acc - y.data[[co, (yy * 5 + xx) as usize]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pool_floor_and_routing() {
        let x = Fmap::new(Array2::from_shape_fn((1, 15), |(_, j)| j as f64), 3, 5);
        let pool = MaxPool2d { ph: 2, pw: 2 };
        let (y, cache) = pool.forward(&x);
        assert_eq!((y.h, y.w), (1, 2));
        assert_eq!(y.data.row(0).to_vec(), vec![6.0, 8.0]);
        let dx = pool.backward(&cache, &Array2::from_elem((1, 2), 1.0));
        assert_eq!(dx.sum(), 2.0);
        assert_eq!(dx[[0, 6]], 1.0);
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let up = Upsample { h: 7, w: 5 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Fmap::new(Array2::from_shape_fn((2, 6), |_| rng.random::<f64>()), 3, 2);
        let dy = Array2::from_shape_fn((2, 35), |_| rng.random::<f64>());
        let y = up.forward(&x);
        let lhs = (&y.data * &dy).sum();
        let rhs = (&x.data * &up.backward(&dy, 3, 2)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
