use rand::seq::SliceRandom;

use super::augment::{augment_image, AugmentParams};
use super::autoencoder::{logit, AeArch, LossParts, LossWeights, NetParams, RawKeypoint};
use super::params::{clip_grad_norm, Adam};
use crate::config::kv_section;
use crate::error::{Error, Result};
use crate::frame::{PackedFrame, FRAME_LEN};
use crate::rng::{derive_rng, derive_seed, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Frames drawn per epoch; 0 means every training frame.
    pub samples_per_epoch: usize,
    pub keypoints: usize,
    pub blob_sigma: f64,
    pub softmax_tau: f64,
    pub w_rec: f64,
    pub w_sparse: f64,
    pub w_sep: f64,
    pub sep_sigma: f64,
    pub jitter: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub enc_channels_1: usize,
    pub enc_channels_2: usize,
    pub dec_channels_1: usize,
    pub dec_channels_2: usize,
    pub grad_clip: f64,
    /// The sparsity and separation weights ramp up linearly from zero over
    /// this many epochs.
    pub aux_warmup_epochs: usize,
    /// Validation frames scored per epoch.
    pub val_samples: usize,
    pub seed: u64,
}

kv_section!(TrainConfig {
    learning_rate,
    batch_size,
    epochs,
    samples_per_epoch,
    keypoints,
    blob_sigma,
    softmax_tau,
    w_rec,
    w_sparse,
    w_sep,
    sep_sigma,
    jitter,
    gamma_min,
    gamma_max,
    enc_channels_1,
    enc_channels_2,
    dec_channels_1,
    dec_channels_2,
    grad_clip,
    aux_warmup_epochs,
    val_samples,
    seed,
});

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            batch_size: 16,
            epochs: 8,
            samples_per_epoch: 1600,
            keypoints: 8,
            blob_sigma: 1.0,
            softmax_tau: 0.1,
            w_rec: 1.0,
            w_sparse: 1e-5,
            w_sep: 1e-4,
            sep_sigma: 2.0,
            jitter: 0.1,
            gamma_min: 0.8,
            gamma_max: 1.25,
            enc_channels_1: 16,
            enc_channels_2: 32,
            dec_channels_1: 16,
            dec_channels_2: 32,
            grad_clip: 1.0,
            aux_warmup_epochs: 3,
            val_samples: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn arch(&self) -> AeArch {
        AeArch {
            frame_size: crate::frame::FRAME_SIZE,
            keypoints: self.keypoints,
            enc_channels: [self.enc_channels_1, self.enc_channels_2],
            dec_channels: [self.dec_channels_1, self.dec_channels_2],
            blob_sigma: self.blob_sigma,
            softmax_tau: self.softmax_tau,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            rec: self.w_rec,
            sparse: self.w_sparse,
            sep: self.w_sep,
            sep_sigma: self.sep_sigma,
        }
    }

    pub fn augment(&self) -> AugmentParams {
        AugmentParams {
            jitter: self.jitter,
            gamma_min: self.gamma_min,
            gamma_max: self.gamma_max,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        self.arch().validate()?;
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("learning_rate must be > 0 and batch_size >= 1".into()));
        }
        if [self.w_rec, self.w_sparse, self.w_sep].iter().any(|w| !(*w >= 0.0)) || !(self.sep_sigma > 0.0) {
            return Err(Error::Config("loss weights must be >= 0 and sep_sigma > 0".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) || !(self.gamma_min > 0.0) || self.gamma_max < self.gamma_min {
            return Err(Error::Config("jitter must lie in [0, 1) and 0 < gamma_min <= gamma_max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Per-epoch losses; entry 0 holds the losses of the initial parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub epochs: Vec<EpochLoss>,
}

impl LossLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            s += &format!("{},{:?},{:?}\n", e.epoch, e.train_loss, e.val_loss);
        }
        s
    }

    pub fn initial(&self) -> Option<&EpochLoss> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochLoss> {
        self.epochs.last()
    }
}

fn evenly_spaced(n: usize, count: usize) -> Vec<usize> {
    if count == 0 || count >= n {
        return (0..n).collect();
    }
    (0..count).map(|i| i * n / count).collect()
}

fn mean_loss(params: &NetParams, frames: &[PackedFrame], idx: &[usize], w: &LossWeights) -> f64 {
    let mut sum = 0.0;
    for &i in idx {
        let chw = frames[i].unpack().to_chw();
        let kps = params.net.encode_raw(&params.values, &chw);
        let out = params.net.decode_raw(&params.values, &kps);
        sum += super::autoencoder::loss_parts(&out, &chw, &kps, w).total();
    }
    sum / idx.len().max(1) as f64
}

/// Trains the autoencoder on `train` frames; `val` may be empty, in which case
/// the validation column repeats the training subset score.
pub fn train_autoencoder(train: &[PackedFrame], val: &[PackedFrame], config: &TrainConfig) -> Result<(NetParams, LossLog)> {
    config.check()?;
    if train.is_empty() {
        return Err(Error::Config("autoencoder training set is empty".into()));
    }
    let mut rng = derive_rng(config.seed, streams::AE_INIT, 0);
    let mut params = NetParams::new(config.arch(), &mut rng);
    init_background(&mut params, train);
    let weights = config.weights();
    let aug = config.augment();

    let (val_frames, val_idx) = if val.is_empty() {
        (train, evenly_spaced(train.len(), config.val_samples))
    } else {
        (val, evenly_spaced(val.len(), config.val_samples))
    };
    let probe_idx = evenly_spaced(train.len(), config.val_samples);
    let mut log = LossLog::default();
    log.epochs.push(EpochLoss {
        epoch: 0,
        train_loss: mean_loss(&params, train, &probe_idx, &weights),
        val_loss: mean_loss(&params, val_frames, &val_idx, &weights),
    });

    let n = params.num_params();
    let mut adam = Adam::new(n, config.learning_rate);
    let per_epoch = if config.samples_per_epoch == 0 {
        train.len()
    } else {
        config.samples_per_epoch
    };
    let steps_per_epoch = per_epoch.div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut step = 0usize;
    let mut grad = vec![0.0; n];
    let mut order: Vec<usize> = Vec::new();
    for epoch in 1..=config.epochs {
        let mut erng = derive_rng(config.seed, streams::AE_SHUFFLE, epoch as u64);
        // Draw without replacement, refilling the pool when it runs out.
        let mut picks = Vec::with_capacity(per_epoch);
        while picks.len() < per_epoch {
            if order.is_empty() {
                order = (0..train.len()).collect();
                order.shuffle(&mut erng);
            }
            picks.push(order.pop().expect("non-empty pool"));
        }
        let ramp = if config.aux_warmup_epochs == 0 {
            1.0
        } else {
            ((epoch - 1) as f64 / config.aux_warmup_epochs as f64).min(1.0)
        };
        let epoch_weights = LossWeights {
            sparse: weights.sparse * ramp,
            sep: weights.sep * ramp,
            ..weights
        };
        let mut epoch_loss = 0.0;
        for (b, batch) in picks.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for (j, &i) in batch.iter().enumerate() {
                let clean = train[i].unpack();
                let sample_seed = derive_seed(config.seed, streams::AE_AUGMENT, (epoch * per_epoch + b * config.batch_size + j) as u64);
                let input = augment_image(&clean, &aug, &mut crate::rng::rng_from_seed(sample_seed));
                let parts: LossParts = params.net.loss_and_grad(&params.values, &input.to_chw(), &clean.to_chw(), &epoch_weights, scale, &mut grad);
                let l = parts.total();
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("autoencoder loss at epoch {epoch}, frame {i}: {l}")));
                }
                epoch_loss += l;
            }
            let norm = clip_grad_norm(&mut grad, config.grad_clip);
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("autoencoder gradient norm at epoch {epoch}")));
            }
            // Cosine decay to a tenth of the initial rate.
            let frac = step as f64 / total_steps as f64;
            adam.lr = config.learning_rate * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * frac).cos()));
            adam.step(&mut params.values, &grad);
            step += 1;
        }
        let val_loss = mean_loss(&params, val_frames, &val_idx, &weights);
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("autoencoder validation loss at epoch {epoch}")));
        }
        log.epochs.push(EpochLoss {
            epoch,
            train_loss: epoch_loss / per_epoch as f64,
            val_loss,
        });
    }
    (params.intensity_offset, params.intensity_scale) = intensity_range(&params, train, 2000);
    Ok((params, log))
}

/// Sets the background logits to the mean training frame.
fn init_background(params: &mut NetParams, frames: &[PackedFrame]) {
    let idx = evenly_spaced(frames.len(), 1000);
    let mut mean = vec![0.0; FRAME_LEN];
    for &i in &idx {
        for (m, v) in mean.iter_mut().zip(frames[i].unpack().to_chw()) {
            *m += v;
        }
    }
    let bg = params.net.background_logits_mut(&mut params.values);
    for (b, m) in bg.iter_mut().zip(&mean) {
        *b = logit(m / idx.len() as f64);
    }
}

/// Offset and scale that send the smallest raw intensity of the most intense
/// keypoint to 0 and its 99th percentile to 1, over (a subset of) the
/// training frames. The active map carries a near-constant baseline, so a
/// pure scale would leave almost no depth signal in `i`.
fn intensity_range(params: &NetParams, frames: &[PackedFrame], max_frames: usize) -> (f64, f64) {
    let mut vals: Vec<f64> = evenly_spaced(frames.len(), max_frames)
        .into_iter()
        .map(|i| {
            let kps: Vec<RawKeypoint> = params.net.encode_raw(&params.values, &frames[i].unpack().to_chw());
            kps.iter().map(|k| k.i).fold(0.0, f64::max)
        })
        .collect();
    vals.sort_by(f64::total_cmp);
    let lo = vals[0];
    let span = vals[((vals.len() - 1) as f64 * 0.99).round() as usize] - lo;
    if span > 1e-9 {
        (lo, span)
    } else {
        (0.0, if lo > 0.0 { lo } else { 1.0 })
    }
}
