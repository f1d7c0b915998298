//! The keypoint-bottleneck autoencoder.
//!
//! Encoder: two stride-2 residual blocks, two plain residual blocks and a 1x1
//! projection to `K` maps, followed by softplus. Each map is reduced to a
//! soft-argmax location and a mean intensity. Decoder: the keypoints are
//! redrawn as Gaussian blobs, then upsampled back to an RGB frame by two
//! transposed convolutions; a learned background logit image is added before
//! the output sigmoid.

use std::collections::BTreeMap;
use std::path::Path;

use super::checkpoint::Checkpoint;
use super::keypoints::{blob_into, frame_to_map, map_to_frame, softmax, MAP_STRIDE};
use super::layers::{Conv2d, ConvTranspose2d, Layer, ResBlock, Sequential};
use super::params::ParamTable;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::frame::{Keypoint, TactileFrame, FRAME_CHANNELS, FRAME_SIZE};
use crate::rng::Rng;

/// Network shape. `frame_size` is 64 for real frames; tests use smaller ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeArch {
    pub frame_size: usize,
    pub keypoints: usize,
    pub enc_channels: [usize; 2],
    pub dec_channels: [usize; 2],
    /// Blob width in map cells.
    pub blob_sigma: f64,
    pub softmax_tau: f64,
}

impl AeArch {
    pub fn map_size(&self) -> usize {
        self.frame_size / MAP_STRIDE as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.keypoints == 0 {
            return Err(Error::Config("need at least one keypoint".into()));
        }
        if self.frame_size % 4 != 0 || self.frame_size < 8 {
            return Err(Error::Config(format!("frame size {} must be a multiple of 4, >= 8", self.frame_size)));
        }
        if self.enc_channels.contains(&0) || self.dec_channels.contains(&0) {
            return Err(Error::Config("channel widths must be >= 1".into()));
        }
        if !(self.blob_sigma > 0.0) || !(self.softmax_tau > 0.0) {
            return Err(Error::Config("blob sigma and softmax temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// Layer graph of an [`AeArch`]; holds no parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct AeNet {
    pub arch: AeArch,
    pub table: ParamTable,
    encoder: Sequential,
    decoder: Sequential,
    background: usize,
}

impl AeNet {
    pub fn new(arch: AeArch) -> Self {
        let mut t = ParamTable::default();
        let [c1, c2] = arch.enc_channels;
        let [d1, d2] = arch.dec_channels;
        let k = arch.keypoints;
        let mut encoder = Sequential::default();
        encoder.push(Layer::Res(ResBlock::new(&mut t, "enc.block1", FRAME_CHANNELS, c1, 2)));
        encoder.push(Layer::Res(ResBlock::new(&mut t, "enc.block2", c1, c2, 2)));
        encoder.push(Layer::Res(ResBlock::new(&mut t, "enc.block3", c2, c2, 1)));
        encoder.push(Layer::Res(ResBlock::new(&mut t, "enc.block4", c2, c2, 1)));
        encoder.push(Layer::Conv(Conv2d::new(&mut t, "enc.head", c2, k, 1, 1, 0)));
        let mut decoder = Sequential::default();
        decoder.push(Layer::Conv(Conv2d::new(&mut t, "dec.stem", k, d2, 3, 1, 1)));
        decoder.push(Layer::Relu);
        decoder.push(Layer::Res(ResBlock::new(&mut t, "dec.block1", d2, d2, 1)));
        decoder.push(Layer::ConvT(ConvTranspose2d::new(&mut t, "dec.up1", d2, d1, 4, 2, 1)));
        decoder.push(Layer::Relu);
        decoder.push(Layer::Res(ResBlock::new(&mut t, "dec.block2", d1, d1, 1)));
        decoder.push(Layer::ConvT(ConvTranspose2d::new(&mut t, "dec.up2", d1, FRAME_CHANNELS, 4, 2, 1)));
        let s = arch.frame_size;
        let background = t.alloc("dec.background", &[FRAME_CHANNELS, s, s]);
        Self {
            arch,
            table: t,
            encoder,
            decoder,
            background,
        }
    }

    pub fn num_params(&self) -> usize {
        self.table.total()
    }

    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.num_params()];
        self.encoder.init(&mut p, rng);
        self.decoder.init(&mut p, rng);
        // Start the decoder close to the background image alone.
        let out = self.table.get("dec.up2.weight").expect("decoder output layer").range();
        p[out].iter_mut().for_each(|v| *v *= 0.1);
        p
    }

    fn plane(&self) -> usize {
        self.arch.frame_size * self.arch.frame_size
    }

    pub fn background_logits<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.background..self.background + FRAME_CHANNELS * self.plane()]
    }

    pub fn background_logits_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        let n = FRAME_CHANNELS * self.plane();
        &mut p[self.background..self.background + n]
    }

    /// Keypoints in map cells with raw (unnormalised) intensity.
    pub fn encode_raw(&self, p: &[f64], chw: &[f64]) -> Vec<RawKeypoint> {
        let s = self.arch.frame_size;
        let z = self.encoder.infer(p, Tensor::from_vec(FRAME_CHANNELS, s, s, chw.to_vec()));
        let maps = softplus_tensor(&z);
        let plane = maps.plane();
        let mut probs = vec![0.0; plane];
        (0..self.arch.keypoints)
            .map(|k| reduce_map(maps.channel(k), maps.w, self.arch.softmax_tau, &mut probs))
            .collect()
    }

    /// Output frame, channel-first, in `(0, 1)`.
    pub fn decode_raw(&self, p: &[f64], kps: &[RawKeypoint]) -> Vec<f64> {
        let blobs = self.blobs(kps);
        let h = self.decoder.infer(p, blobs);
        let mut out = h.data;
        for (o, &b) in out.iter_mut().zip(self.background_logits(p)) {
            *o = sigmoid(*o + b);
        }
        out
    }

    fn blobs(&self, kps: &[RawKeypoint]) -> Tensor {
        let m = self.arch.map_size();
        let mut t = Tensor::zeros(self.arch.keypoints, m, m);
        for (k, kp) in kps.iter().enumerate() {
            blob_into(kp.x, kp.y, kp.i, self.arch.blob_sigma, m, &mut t.data[k * m * m..(k + 1) * m * m]);
        }
        t
    }

    /// Loss of one sample and its gradient, accumulated into `grad` scaled by
    /// `scale`.
    pub fn loss_and_grad(
        &self,
        p: &[f64],
        input: &[f64],
        target: &[f64],
        w: &LossWeights,
        scale: f64,
        grad: &mut [f64],
    ) -> LossParts {
        let s = self.arch.frame_size;
        let kn = self.arch.keypoints;
        let tau = self.arch.softmax_tau;
        let sigma = self.arch.blob_sigma;

        let (z, enc_caches) = self.encoder.forward(p, Tensor::from_vec(FRAME_CHANNELS, s, s, input.to_vec()));
        let maps = softplus_tensor(&z);
        let m = maps.w;
        let plane = maps.plane();
        let mut probs = vec![0.0; kn * plane];
        let kps: Vec<RawKeypoint> = (0..kn)
            .map(|k| reduce_map(maps.channel(k), m, tau, &mut probs[k * plane..(k + 1) * plane]))
            .collect();
        let blobs = self.blobs(&kps);
        let (h, dec_caches) = self.decoder.forward(p, blobs.clone());
        let mut out = h.data;
        for (o, &b) in out.iter_mut().zip(self.background_logits(p)) {
            *o = sigmoid(*o + b);
        }

        let parts = loss_parts(&out, target, &kps, w);

        // Reconstruction gradient through the sigmoid.
        let n = out.len() as f64;
        let mut dlogit = Tensor::zeros(FRAME_CHANNELS, s, s);
        for ((d, &y), &t) in dlogit.data.iter_mut().zip(&out).zip(target) {
            *d = scale * w.rec * 2.0 * (y - t) / n * y * (1.0 - y);
        }
        for (g, &d) in self.background_logits_mut(grad).iter_mut().zip(&dlogit.data) {
            *g += d;
        }
        let dblobs = self.decoder.backward(p, &dec_caches, dlogit, grad);

        // Gradients w.r.t. keypoint (x, y, i) in map units.
        let mut dk = vec![[0.0f64; 3]; kn];
        let inv_s2 = 1.0 / (sigma * sigma);
        for (k, kp) in kps.iter().enumerate() {
            let (mut dx, mut dy, mut di) = (0.0, 0.0, 0.0);
            let b = &blobs.data[k * plane..(k + 1) * plane];
            let db = &dblobs.data[k * plane..(k + 1) * plane];
            for idx in 0..plane {
                if db[idx] == 0.0 || b[idx] == 0.0 {
                    continue;
                }
                let u = (idx % m) as f64 - kp.x;
                let v = (idx / m) as f64 - kp.y;
                // b = i * g, so g = b / i; written via b to avoid dividing by i.
                let g_over = b[idx] * inv_s2;
                dx += db[idx] * g_over * u;
                dy += db[idx] * g_over * v;
            }
            let gauss_sum: f64 = (0..plane)
                .map(|idx| {
                    let u = (idx % m) as f64 - kp.x;
                    let v = (idx / m) as f64 - kp.y;
                    db[idx] * (-(u * u + v * v) * 0.5 * inv_s2).exp()
                })
                .sum();
            di += gauss_sum;
            di += scale * w.sparse;
            dk[k] = [dx, dy, di];
        }
        let inv_sep = 1.0 / (w.sep_sigma * w.sep_sigma);
        for a in 0..kn {
            for b in 0..kn {
                if a == b {
                    continue;
                }
                let (ux, uy) = (kps[a].x - kps[b].x, kps[a].y - kps[b].y);
                let e = (-(ux * ux + uy * uy) * 0.5 * inv_sep).exp();
                // Each unordered pair appears twice in the sum.
                let c = scale * w.sep * 2.0 * e * inv_sep;
                dk[a][0] -= c * ux;
                dk[a][1] -= c * uy;
            }
        }

        // Back to the maps, then through softplus.
        let mut dz = Tensor::zeros(kn, m, m);
        for (k, kp) in kps.iter().enumerate() {
            let pr = &probs[k * plane..(k + 1) * plane];
            let [dx, dy, di] = dk[k];
            let zk = z.channel(k);
            let out = &mut dz.data[k * plane..(k + 1) * plane];
            for idx in 0..plane {
                let u = (idx % m) as f64 - kp.x;
                let v = (idx / m) as f64 - kp.y;
                let dmap = di / plane as f64 + pr[idx] * (u * dx + v * dy) / tau;
                out[idx] = dmap * sigmoid(zk[idx]);
            }
        }
        self.encoder.backward(p, &enc_caches, dz, grad);
        parts
    }
}

/// A keypoint in map cells with raw intensity, as seen inside the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawKeypoint {
    pub x: f64,
    pub y: f64,
    pub i: f64,
}

impl RawKeypoint {
    /// Frame-pixel keypoint with intensity `(i - offset) / scale`.
    pub fn to_frame(self, offset: f64, scale: f64) -> Keypoint {
        Keypoint::new(map_to_frame(self.x), map_to_frame(self.y), (self.i - offset) / scale).clipped()
    }

    pub fn from_frame(k: &Keypoint, offset: f64, scale: f64) -> Self {
        Self {
            x: frame_to_map(k.x),
            y: frame_to_map(k.y),
            i: k.i * scale + offset,
        }
    }
}

fn reduce_map(map: &[f64], w: usize, tau: f64, probs: &mut [f64]) -> RawKeypoint {
    softmax(map, tau, probs);
    let (mut x, mut y) = (0.0, 0.0);
    for (idx, &pi) in probs.iter().enumerate() {
        x += pi * (idx % w) as f64;
        y += pi * (idx / w) as f64;
    }
    RawKeypoint {
        x,
        y,
        i: map.iter().sum::<f64>() / map.len() as f64,
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

fn softplus_tensor(z: &Tensor) -> Tensor {
    Tensor::from_vec(z.c, z.h, z.w, z.data.iter().map(|&v| softplus(v)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rec: f64,
    pub sparse: f64,
    pub sep: f64,
    /// Repulsion width in map cells.
    pub sep_sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            sparse: 1e-5,
            sep: 1e-4,
            sep_sigma: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub rec: f64,
    pub sparse: f64,
    pub sep: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.rec + self.sparse + self.sep
    }
}

pub(crate) fn loss_parts(recon: &[f64], frame: &[f64], kps: &[RawKeypoint], w: &LossWeights) -> LossParts {
    let mse = recon.iter().zip(frame).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / frame.len().max(1) as f64;
    let sparse: f64 = kps.iter().map(|k| k.i).sum();
    let mut sep = 0.0;
    for (a, ka) in kps.iter().enumerate() {
        for (b, kb) in kps.iter().enumerate() {
            if a != b {
                let d2 = (ka.x - kb.x).powi(2) + (ka.y - kb.y).powi(2);
                sep += (-d2 / (2.0 * w.sep_sigma * w.sep_sigma)).exp();
            }
        }
    }
    LossParts {
        rec: w.rec * mse,
        sparse: w.sparse * sparse,
        sep: w.sep * sep,
    }
}

/// Training objective for one frame. `frame` and `reconstruction` are flat
/// pixel arrays of equal length; keypoint distances are measured in feature
/// map cells.
pub fn loss(frame: &[f64], reconstruction: &[f64], keypoints: &[Keypoint], w: &LossWeights) -> f64 {
    let raw: Vec<RawKeypoint> = keypoints.iter().map(|k| RawKeypoint::from_frame(k, 0.0, 1.0)).collect();
    loss_parts(reconstruction, frame, &raw, w).total()
}

/// Trained autoencoder: architecture plus flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub net: AeNet,
    pub values: Vec<f64>,
    /// Raw intensity that maps to `i = 0`.
    pub intensity_offset: f64,
    /// Raw intensity span that maps to a unit step in `i`.
    pub intensity_scale: f64,
}

impl NetParams {
    pub fn new(arch: AeArch, rng: &mut Rng) -> Self {
        let net = AeNet::new(arch);
        let values = net.init(rng);
        Self {
            net,
            values,
            intensity_offset: 0.0,
            intensity_scale: 1.0,
        }
    }

    pub fn arch(&self) -> &AeArch {
        &self.net.arch
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    fn check_frame_size(&self) -> Result<()> {
        if self.net.arch.frame_size != FRAME_SIZE {
            return Err(Error::Shape(format!(
                "network expects {0}x{0} frames, tactile frames are {FRAME_SIZE}x{FRAME_SIZE}",
                self.net.arch.frame_size
            )));
        }
        Ok(())
    }

    pub fn encode(&self, frame: &TactileFrame) -> Result<Vec<Keypoint>> {
        self.check_frame_size()?;
        Ok(self
            .net
            .encode_raw(&self.values, &frame.to_chw())
            .into_iter()
            .map(|k| k.to_frame(self.intensity_offset, self.intensity_scale))
            .collect())
    }

    pub fn decode(&self, keypoints: &[Keypoint]) -> Result<TactileFrame> {
        self.check_frame_size()?;
        if keypoints.len() != self.net.arch.keypoints {
            return Err(Error::Shape(format!(
                "decoder takes {} keypoints, got {}",
                self.net.arch.keypoints,
                keypoints.len()
            )));
        }
        let raw: Vec<RawKeypoint> = keypoints
            .iter()
            .map(|k| RawKeypoint::from_frame(k, self.intensity_offset, self.intensity_scale))
            .collect();
        Ok(TactileFrame::from_chw(&self.net.decode_raw(&self.values, &raw)))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let a = &self.net.arch;
        let mut meta = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            meta.insert(k.to_string(), v);
        };
        put("kind", "autoencoder".into());
        put("frame_size", a.frame_size.to_string());
        put("keypoints", a.keypoints.to_string());
        put("enc_channels_1", a.enc_channels[0].to_string());
        put("enc_channels_2", a.enc_channels[1].to_string());
        put("dec_channels_1", a.dec_channels[0].to_string());
        put("dec_channels_2", a.dec_channels[1].to_string());
        put("blob_sigma", format!("{:?}", a.blob_sigma));
        put("softmax_tau", format!("{:?}", a.softmax_tau));
        put("intensity_offset", format!("{:?}", self.intensity_offset));
        put("intensity_scale", format!("{:?}", self.intensity_scale));
        Checkpoint {
            meta,
            table: self.net.table.clone(),
            values: self.values.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint, path: &Path) -> Result<Self> {
        if c.meta_str("kind", path)? != "autoencoder" {
            return Err(Error::format(path, "not an autoencoder checkpoint"));
        }
        let arch = AeArch {
            frame_size: c.meta_parse("frame_size", path)?,
            keypoints: c.meta_parse("keypoints", path)?,
            enc_channels: [c.meta_parse("enc_channels_1", path)?, c.meta_parse("enc_channels_2", path)?],
            dec_channels: [c.meta_parse("dec_channels_1", path)?, c.meta_parse("dec_channels_2", path)?],
            blob_sigma: c.meta_parse("blob_sigma", path)?,
            softmax_tau: c.meta_parse("softmax_tau", path)?,
        };
        arch.validate()?;
        let net = AeNet::new(arch);
        c.check_table(&net.table, path)?;
        Ok(Self {
            net,
            intensity_offset: c.meta_parse("intensity_offset", path)?,
            intensity_scale: c.meta_parse("intensity_scale", path)?,
            values: c.values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?, path)
    }
}

/// Relative error `|fd - g| / max(|fd|, |g|)` per parameter group between
/// central differences and the analytic gradient of the training loss.
pub fn gradient_check(arch: AeArch, seed: u64) -> Vec<(String, f64)> {
    let mut rng = crate::rng::rng_from_seed(seed);
    let net = AeNet::new(arch);
    let mut p = net.init(&mut rng);
    // Biases and background away from zero so every path is exercised.
    for e in &net.table.entries {
        if e.name.ends_with("bias") || e.name.ends_with("background") {
            super::params::init_normal(&mut p[e.range()], 0.2, &mut rng);
        }
    }
    let n = FRAME_CHANNELS * arch.frame_size * arch.frame_size;
    let input: Vec<f64> = (0..n).map(|i| 0.5 + 0.4 * ((i as f64) * 0.37).sin()).collect();
    let target: Vec<f64> = (0..n).map(|i| 0.5 + 0.3 * ((i as f64) * 0.11).cos()).collect();
    let w = LossWeights {
        rec: 1.0,
        sparse: 0.3,
        sep: 0.5,
        sep_sigma: 1.0,
    };
    let mut g = vec![0.0; p.len()];
    net.loss_and_grad(&p, &input, &target, &w, 1.0, &mut g);
    let f = |p: &[f64]| {
        let kps = net.encode_raw(p, &input);
        let out = net.decode_raw(p, &kps);
        loss_parts(&out, &target, &kps, &w).total()
    };
    let h = 1e-5;
    let mut q = p.clone();
    net.table
        .entries
        .iter()
        .map(|e| {
            let (mut num, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
            for i in e.range() {
                q[i] = p[i] + h;
                let up = f(&q);
                q[i] = p[i] - h;
                let down = f(&q);
                q[i] = p[i];
                let fd = (up - down) / (2.0 * h);
                num += (fd - g[i]).powi(2);
                na += fd * fd;
                nb += g[i] * g[i];
            }
            (e.name.clone(), num.sqrt() / na.max(nb).sqrt().max(1e-12))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn tiny_arch() -> AeArch {
        AeArch {
            frame_size: 8,
            keypoints: 3,
            enc_channels: [2, 3],
            dec_channels: [2, 3],
            blob_sigma: 0.8,
            softmax_tau: 0.7,
        }
    }

    #[test]
    fn loss_special_cases() {
        let w = LossWeights::default();
        let frame = vec![0.2, 0.4, 0.6, 0.8];
        let zeros = vec![Keypoint::new(0.0, 0.0, 0.0), Keypoint::new(63.0, 63.0, 0.0)];
        assert!(loss(&frame, &frame, &zeros, &w) < 1e-20);

        let recon = vec![0.1, 0.4, 0.9, 0.8];
        let plain = LossWeights {
            rec: 1.0,
            sparse: 0.0,
            sep: 0.0,
            sep_sigma: 2.0,
        };
        let mse = (0.01 + 0.0 + 0.09 + 0.0) / 4.0;
        assert!((loss(&frame, &recon, &zeros, &plain) - mse).abs() < 1e-15);

        let together = vec![Keypoint::new(20.0, 20.0, 0.5), Keypoint::new(20.0, 20.0, 0.5)];
        let apart = vec![Keypoint::new(5.0, 5.0, 0.5), Keypoint::new(60.0, 60.0, 0.5)];
        assert!(loss(&frame, &recon, &together, &w) > loss(&frame, &recon, &apart, &w));
    }

    #[test]
    fn encode_decode_shapes_and_determinism() {
        let arch = AeArch {
            frame_size: 64,
            ..tiny_arch()
        };
        let net = NetParams::new(arch, &mut rng_from_seed(3));
        let frame = TactileFrame::from_fn(|x, y, c| ((x * 3 + y * 5 + c) % 17) as f64 / 17.0);
        let a = net.encode(&frame).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, net.encode(&frame).unwrap());
        for k in &a {
            assert!((0.0..=63.0).contains(&k.x) && (0.0..=63.0).contains(&k.y) && k.i >= 0.0);
        }
        let d = net.decode(&a).unwrap();
        assert_eq!(d, net.decode(&a).unwrap());
        assert!(matches!(net.decode(&a[..2]), Err(Error::Shape(_))));

        let small = NetParams::new(tiny_arch(), &mut rng_from_seed(3));
        assert!(matches!(small.encode(&frame), Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut net = NetParams::new(tiny_arch(), &mut rng_from_seed(5));
        net.intensity_offset = 1.25;
        net.intensity_scale = 0.37;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.bin");
        net.save(&path).unwrap();
        assert_eq!(NetParams::load(&path).unwrap(), net);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for (name, err) in gradient_check(tiny_arch(), 11) {
            assert!(err < 1e-4, "{name}: relative error {err:e}");
        }
    }
}
