//! Simulated two-finger tactile marble manipulation.
//!
//! The pipeline has five parts:
//!
//! * [`sim`]: a seedable planar simulator of a marble held between two tactile
//!   fingertips, with a synthetic tactile-image renderer.
//! * [`nn`]: a small hand-written convolutional network core and the
//!   keypoint-bottleneck autoencoder that compresses a tactile frame into
//!   `(x, y, intensity)` keypoints.
//! * [`dynamics`]: the 14-D state `[k_left, k_right, joints]` and a feed-forward
//!   model `s' = f(s, a)` trained on encoded transitions.
//! * [`control`]: cross-entropy-method MPC in the 14-D state space and a
//!   proportional baseline.
//! * [`harness`]: episode storage, dataset building, evaluation, timing
//!   benchmarks and the command-line front end.

pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod frame;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use frame::{Keypoint, PackedFrame, TactileFrame, FRAME_SIZE};
