//! A minimal convolutional network core and the keypoint autoencoder built
//! on it. Everything runs in `f64` on the CPU with hand-written backward
//! passes.

mod augment;
mod autoencoder;
mod checkpoint;
mod gemm;
mod keypoints;
mod layers;
mod params;
mod tensor;
mod train;

pub use augment::{apply_lighting, augment_image, AugmentParams};
pub use autoencoder::{gradient_check, loss, AeArch, AeNet, LossParts, LossWeights, NetParams, RawKeypoint};
pub use checkpoint::Checkpoint;
pub use keypoints::{
    active_index, active_keypoint, frame_to_map, hard_argmax, intensity, map_to_frame, render_blob, soft_argmax,
    FeatureMap, SoftArgmax, MAP_SIZE, MAP_STRIDE,
};
pub use params::{Adam, ParamEntry, ParamTable};
pub use train::{train_autoencoder, EpochLoss, LossLog, TrainConfig};

pub(crate) use gemm::gemm;
pub(crate) use params::{clip_grad_norm, init_normal};
