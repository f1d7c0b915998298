//! Convolutional building blocks with explicit backward passes.
//!
//! Layers hold only shapes and offsets into a flat parameter vector; the
//! values themselves are passed in on every call, and gradients accumulate
//! into a vector of the same layout.

use super::gemm::gemm;
use super::params::{init_normal, ParamTable};
use super::tensor::{col2im, im2col, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    in_shape: (usize, usize, usize),
    cols: Vec<f64>,
}

impl Conv2d {
    pub fn new(table: &mut ParamTable, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        let w_off = table.alloc(format!("{name}.weight"), &[out_c, in_c, k, k]);
        let b_off = table.alloc(format!("{name}.bias"), &[out_c]);
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            w_off,
            b_off,
        }
    }

    fn patch(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn init(&self, params: &mut [f64], gain: f64, rng: &mut Rng) {
        let std = gain * (2.0 / self.patch() as f64).sqrt();
        init_normal(&mut params[self.w_off..self.w_off + self.out_c * self.patch()], std, rng);
        params[self.b_off..self.b_off + self.out_c].fill(0.0);
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, ConvCache) {
        debug_assert_eq!(x.c, self.in_c);
        let (cols, ho, wo) = im2col(x, self.k, self.stride, self.pad);
        let n = ho * wo;
        let mut y = Tensor::zeros(self.out_c, ho, wo);
        gemm(self.out_c, self.patch(), n, &p[self.w_off..], false, &cols, false, 0.0, &mut y.data);
        for (oc, row) in y.data.chunks_exact_mut(n).enumerate() {
            let b = p[self.b_off + oc];
            row.iter_mut().for_each(|v| *v += b);
        }
        (
            y,
            ConvCache {
                in_shape: x.shape(),
                cols,
            },
        )
    }

    pub fn backward(&self, p: &[f64], cache: &ConvCache, dy: &Tensor, g: &mut [f64]) -> Tensor {
        let (c, h, w) = cache.in_shape;
        let n = dy.plane();
        let kk = self.patch();
        gemm(self.out_c, n, kk, &dy.data, false, &cache.cols, true, 1.0, &mut g[self.w_off..self.w_off + self.out_c * kk]);
        for (oc, row) in dy.data.chunks_exact(n).enumerate() {
            g[self.b_off + oc] += row.iter().sum::<f64>();
        }
        let mut dcols = vec![0.0; kk * n];
        gemm(kk, self.out_c, n, &p[self.w_off..], true, &dy.data, false, 0.0, &mut dcols);
        col2im(&dcols, c, h, w, self.k, self.stride, self.pad)
    }
}

/// Transposed convolution; weights are stored `[in_c, out_c, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    w_off: usize,
    b_off: usize,
}

impl ConvTranspose2d {
    pub fn new(table: &mut ParamTable, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        let w_off = table.alloc(format!("{name}.weight"), &[in_c, out_c, k, k]);
        let b_off = table.alloc(format!("{name}.bias"), &[out_c]);
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            w_off,
            b_off,
        }
    }

    fn patch(&self) -> usize {
        self.out_c * self.k * self.k
    }

    pub fn init(&self, params: &mut [f64], gain: f64, rng: &mut Rng) {
        // Each output pixel receives about in_c * k^2 / stride^2 contributions.
        let fan_in = (self.in_c * self.k * self.k) as f64 / (self.stride * self.stride) as f64;
        let std = gain * (2.0 / fan_in).sqrt();
        init_normal(&mut params[self.w_off..self.w_off + self.in_c * self.patch()], std, rng);
        params[self.b_off..self.b_off + self.out_c].fill(0.0);
    }

    pub fn out_size(&self, size: usize) -> usize {
        (size - 1) * self.stride + self.k - 2 * self.pad
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> Tensor {
        debug_assert_eq!(x.c, self.in_c);
        let n = x.plane();
        let mut cols = vec![0.0; self.patch() * n];
        gemm(self.patch(), self.in_c, n, &p[self.w_off..], true, &x.data, false, 0.0, &mut cols);
        let (ho, wo) = (self.out_size(x.h), self.out_size(x.w));
        let mut y = col2im(&cols, self.out_c, ho, wo, self.k, self.stride, self.pad);
        let plane = ho * wo;
        for (oc, row) in y.data.chunks_exact_mut(plane).enumerate() {
            let b = p[self.b_off + oc];
            row.iter_mut().for_each(|v| *v += b);
        }
        y
    }

    pub fn backward(&self, p: &[f64], x: &Tensor, dy: &Tensor, g: &mut [f64]) -> Tensor {
        let (dcols, h, w) = im2col(dy, self.k, self.stride, self.pad);
        debug_assert_eq!((h, w), (x.h, x.w));
        let n = x.plane();
        let kk = self.patch();
        gemm(self.in_c, n, kk, &x.data, false, &dcols, true, 1.0, &mut g[self.w_off..self.w_off + self.in_c * kk]);
        let plane = dy.plane();
        for (oc, row) in dy.data.chunks_exact(plane).enumerate() {
            g[self.b_off + oc] += row.iter().sum::<f64>();
        }
        let mut dx = Tensor::zeros(self.in_c, x.h, x.w);
        gemm(self.in_c, kk, n, &p[self.w_off..], false, &dcols, false, 0.0, &mut dx.data);
        dx
    }
}

fn relu(mut x: Tensor) -> Tensor {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
    x
}

/// `dy` masked by where the ReLU output `y` was positive.
fn relu_backward(y: &Tensor, mut dy: Tensor) -> Tensor {
    for (d, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dy
}

/// `relu(conv_b(relu(conv_a(x))) + skip(x))`, with a 1x1 projection on the
/// skip path when the shape changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    a: Conv2d,
    b: Conv2d,
    skip: Option<Conv2d>,
}

#[derive(Debug, Clone)]
pub struct ResCache {
    ca: ConvCache,
    r1: Tensor,
    cb: ConvCache,
    cs: Option<ConvCache>,
    y: Tensor,
}

impl ResBlock {
    pub fn new(table: &mut ParamTable, name: &str, in_c: usize, out_c: usize, stride: usize) -> Self {
        let a = Conv2d::new(table, &format!("{name}.conv_a"), in_c, out_c, 3, stride, 1);
        let b = Conv2d::new(table, &format!("{name}.conv_b"), out_c, out_c, 3, 1, 1);
        let skip = (in_c != out_c || stride != 1)
            .then(|| Conv2d::new(table, &format!("{name}.skip"), in_c, out_c, 1, stride, 0));
        Self { a, b, skip }
    }

    pub fn init(&self, params: &mut [f64], rng: &mut Rng) {
        self.a.init(params, 1.0, rng);
        self.b.init(params, 0.5, rng);
        if let Some(s) = &self.skip {
            s.init(params, 0.5, rng);
        }
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, ResCache) {
        let (h1, ca) = self.a.forward(p, x);
        let r1 = relu(h1);
        let (mut h2, cb) = self.b.forward(p, &r1);
        let cs = match &self.skip {
            Some(s) => {
                let (sx, cs) = s.forward(p, x);
                h2.data.iter_mut().zip(&sx.data).for_each(|(a, b)| *a += b);
                Some(cs)
            }
            None => {
                h2.data.iter_mut().zip(&x.data).for_each(|(a, b)| *a += b);
                None
            }
        };
        let y = relu(h2);
        (
            y.clone(),
            ResCache {
                ca,
                r1,
                cb,
                cs,
                y,
            },
        )
    }

    pub fn backward(&self, p: &[f64], cache: &ResCache, dy: Tensor, g: &mut [f64]) -> Tensor {
        let dz = relu_backward(&cache.y, dy);
        let dr1 = self.b.backward(p, &cache.cb, &dz, g);
        let dh1 = relu_backward(&cache.r1, dr1);
        let mut dx = self.a.backward(p, &cache.ca, &dh1, g);
        let dskip = match (&self.skip, &cache.cs) {
            (Some(s), Some(cs)) => s.backward(p, cs, &dz, g),
            _ => dz,
        };
        dx.data.iter_mut().zip(&dskip.data).for_each(|(a, b)| *a += b);
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    ConvT(ConvTranspose2d),
    Relu,
    Res(ResBlock),
}

#[derive(Debug, Clone)]
pub enum Cache {
    Conv(ConvCache),
    ConvT(Tensor),
    Relu(Tensor),
    Res(Box<ResCache>),
}

impl Layer {
    pub fn init(&self, params: &mut [f64], rng: &mut Rng) {
        match self {
            Layer::Conv(c) => c.init(params, 1.0, rng),
            Layer::ConvT(c) => c.init(params, 1.0, rng),
            Layer::Relu => {}
            Layer::Res(r) => r.init(params, rng),
        }
    }

    pub fn forward(&self, p: &[f64], x: Tensor) -> (Tensor, Cache) {
        match self {
            Layer::Conv(c) => {
                let (y, cache) = c.forward(p, &x);
                (y, Cache::Conv(cache))
            }
            Layer::ConvT(c) => {
                let y = c.forward(p, &x);
                (y, Cache::ConvT(x))
            }
            Layer::Relu => {
                let y = relu(x);
                (y.clone(), Cache::Relu(y))
            }
            Layer::Res(r) => {
                let (y, cache) = r.forward(p, &x);
                (y, Cache::Res(Box::new(cache)))
            }
        }
    }

    /// Forward pass without keeping anything for backpropagation.
    pub fn infer(&self, p: &[f64], x: Tensor) -> Tensor {
        match self {
            Layer::Conv(c) => c.forward(p, &x).0,
            Layer::ConvT(c) => c.forward(p, &x),
            Layer::Relu => relu(x),
            Layer::Res(r) => r.forward(p, &x).0,
        }
    }

    pub fn backward(&self, p: &[f64], cache: &Cache, dy: Tensor, g: &mut [f64]) -> Tensor {
        match (self, cache) {
            (Layer::Conv(c), Cache::Conv(cc)) => c.backward(p, cc, &dy, g),
            (Layer::ConvT(c), Cache::ConvT(x)) => c.backward(p, x, &dy, g),
            (Layer::Relu, Cache::Relu(y)) => relu_backward(y, dy),
            (Layer::Res(r), Cache::Res(rc)) => r.backward(p, rc, dy, g),
            _ => unreachable!("cache does not belong to this layer"),
        }
    }
}

/// A straight chain of layers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn init(&self, params: &mut [f64], rng: &mut Rng) {
        for l in &self.layers {
            l.init(params, rng);
        }
    }

    pub fn forward(&self, p: &[f64], mut x: Tensor) -> (Tensor, Vec<Cache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (y, c) = l.forward(p, x);
            caches.push(c);
            x = y;
        }
        (x, caches)
    }

    pub fn infer(&self, p: &[f64], mut x: Tensor) -> Tensor {
        for l in &self.layers {
            x = l.infer(p, x);
        }
        x
    }

    pub fn backward(&self, p: &[f64], caches: &[Cache], mut dy: Tensor, g: &mut [f64]) -> Tensor {
        for (l, c) in self.layers.iter().zip(caches).rev() {
            dy = l.backward(p, c, dy, g);
        }
        dy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    /// Central-difference check of `sum(w * f(x))` against the analytic
    /// backward pass, for parameters and inputs.
    fn check_layer(layer: Layer, table: &ParamTable, x: Tensor) {
        let mut rng = rng_from_seed(1);
        let mut p = vec![0.0; table.total()];
        layer.init(&mut p, &mut rng);
        // Non-zero biases so ReLU kinks are not hit exactly.
        for e in &table.entries {
            if e.name.ends_with("bias") {
                init_normal(&mut p[e.range()], 0.1, &mut rng);
            }
        }
        let (y, cache) = layer.forward(&p, x.clone());
        let wts: Vec<f64> = (0..y.data.len()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let objective = |p: &[f64], x: &Tensor| -> f64 {
            layer.infer(p, x.clone()).data.iter().zip(&wts).map(|(a, b)| a * b).sum()
        };
        let mut g = vec![0.0; p.len()];
        let dy = Tensor::from_vec(y.c, y.h, y.w, wts.clone());
        let dx = layer.backward(&p, &cache, dy, &mut g);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut pp = p.clone();
            pp[i] += h;
            let up = objective(&pp, &x);
            pp[i] -= 2.0 * h;
            let down = objective(&pp, &x);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", g[i]);
        }
        for i in 0..x.data.len() {
            let mut xx = x.clone();
            xx.data[i] += h;
            let up = objective(&p, &xx);
            xx.data[i] -= 2.0 * h;
            let down = objective(&p, &xx);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "input {i}: fd {fd} vs {}", dx.data[i]);
        }
    }

    fn input(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|i| ((i as f64) * 0.613).sin()).collect())
    }

    #[test]
    fn conv_gradients() {
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
            let mut t = ParamTable::default();
            let conv = Conv2d::new(&mut t, "c", 2, 3, k, s, p);
            check_layer(Layer::Conv(conv), &t, input(2, 5, 6));
        }
    }

    #[test]
    fn conv_transpose_gradients_and_shape() {
        let mut t = ParamTable::default();
        let ct = ConvTranspose2d::new(&mut t, "t", 3, 2, 4, 2, 1);
        assert_eq!(ct.out_size(4), 8);
        check_layer(Layer::ConvT(ct), &t, input(3, 4, 4));
    }

    #[test]
    fn residual_gradients() {
        let mut t = ParamTable::default();
        let r = ResBlock::new(&mut t, "r", 2, 3, 2);
        check_layer(Layer::Res(r), &t, input(2, 6, 6));
        let mut t = ParamTable::default();
        let r = ResBlock::new(&mut t, "r", 3, 3, 1);
        check_layer(Layer::Res(r), &t, input(3, 4, 4));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut t = ParamTable::default();
        let conv = Conv2d::new(&mut t, "c", 2, 2, 3, 2, 1);
        let mut p = vec![0.0; t.total()];
        conv.init(&mut p, 1.0, &mut rng_from_seed(4));
        p[t.get("c.bias").unwrap().offset] = 0.25;
        let x = input(2, 5, 5);
        let (y, _) = conv.forward(&p, &x);
        for oc in 0..2 {
            for oy in 0..y.h {
                for ox in 0..y.w {
                    let mut s = if oc == 0 { 0.25 } else { 0.0 };
                    for ic in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy >= 0 && iy < 5 && ix >= 0 && ix < 5 {
                                    let w = p[((oc * 2 + ic) * 3 + ky) * 3 + kx];
                                    s += w * x.data[(ic * 5 + iy as usize) * 5 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data[(oc * y.h + oy) * y.w + ox] - s).abs() < 1e-12);
                }
            }
        }
    }
}
