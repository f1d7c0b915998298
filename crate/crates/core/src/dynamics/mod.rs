//! The 14-D system state and a feed-forward model of its dynamics.

mod mlp;
mod train;

use serde::{Deserialize, Serialize};

use crate::frame::{Keypoint, FRAME_MAX_COORD};
use crate::sim::{Finger, SimConfig, NUM_JOINTS};

pub use mlp::{gradient_check, rollout, DynParams, Workspace};
pub use train::{
    augment_transitions, train_dynamics, transitions_to_csv, DynLossLog, DynTrainConfig, Transition,
    TRANSITION_CSV_HEADER,
};

pub const STATE_DIM: usize = 14;
pub const ACTION_DIM: usize = NUM_JOINTS;
pub const INPUT_DIM: usize = STATE_DIM + ACTION_DIM;

/// Packed, normalised state vector.
pub type PackedState = [f64; STATE_DIM];

const COORD_CENTRE: f64 = FRAME_MAX_COORD / 2.0;

/// Joint range used to normalise joint angles to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub min: [f64; NUM_JOINTS],
    pub max: [f64; NUM_JOINTS],
}

impl JointLimits {
    pub fn from_sim(config: &SimConfig) -> Self {
        Self {
            min: config.joint_min,
            max: config.joint_max,
        }
    }

    fn normalise(&self, j: usize, a: f64) -> f64 {
        let half = (self.max[j] - self.min[j]) / 2.0;
        if half > 0.0 {
            (a - self.min[j]) / half - 1.0
        } else {
            0.0
        }
    }

    fn denormalise(&self, j: usize, v: f64) -> f64 {
        self.min[j] + (v + 1.0) * (self.max[j] - self.min[j]) / 2.0
    }
}

/// Both fingers' keypoints (frame pixels, normalised intensity) and the eight
/// joint angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub k_left: Keypoint,
    pub k_right: Keypoint,
    pub joints: [f64; NUM_JOINTS],
}

pub fn build_state(k_left: Keypoint, k_right: Keypoint, joints: [f64; NUM_JOINTS]) -> SystemState {
    SystemState {
        k_left,
        k_right,
        joints,
    }
}

impl SystemState {
    pub fn keypoint(&self, finger: Finger) -> Keypoint {
        match finger {
            Finger::Left => self.k_left,
            Finger::Right => self.k_right,
        }
    }

    /// `(x_l, y_l, i_l, x_r, y_r, i_r, j_1..j_8)` with pixel coordinates
    /// mapped to `[-1, 1]` and joints normalised by their limits.
    pub fn pack(&self, limits: &JointLimits) -> PackedState {
        let mut v = [0.0; STATE_DIM];
        for (o, k) in [(0, &self.k_left), (3, &self.k_right)] {
            v[o] = (k.x - COORD_CENTRE) / COORD_CENTRE;
            v[o + 1] = (k.y - COORD_CENTRE) / COORD_CENTRE;
            v[o + 2] = k.i;
        }
        for j in 0..NUM_JOINTS {
            v[6 + j] = limits.normalise(j, self.joints[j]);
        }
        v
    }

    pub fn unpack(v: &PackedState, limits: &JointLimits) -> Self {
        let kp = |o: usize| Keypoint::new(v[o] * COORD_CENTRE + COORD_CENTRE, v[o + 1] * COORD_CENTRE + COORD_CENTRE, v[o + 2]);
        Self {
            k_left: kp(0),
            k_right: kp(3),
            joints: std::array::from_fn(|j| limits.denormalise(j, v[6 + j])),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.k_left, self.k_right].iter().all(|k| k.x.is_finite() && k.y.is_finite() && k.i.is_finite())
            && self.joints.iter().all(|j| j.is_finite())
    }

    /// Keypoints inside the frame, intensities non-negative, joints within limits.
    pub fn clipped(&self, limits: &JointLimits) -> Self {
        Self {
            k_left: self.k_left.clipped(),
            k_right: self.k_right.clipped(),
            joints: std::array::from_fn(|j| self.joints[j].clamp(limits.min[j], limits.max[j])),
        }
    }

    /// Distance in keypoint space between both fingers' `(x, y, w_i * i)`,
    /// in pixels.
    pub fn keypoint_distance(&self, other: &SystemState, intensity_weight: f64) -> f64 {
        let mut s = 0.0;
        for f in Finger::BOTH {
            let (a, b) = (self.keypoint(f), other.keypoint(f));
            s += (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (intensity_weight * (a.i - b.i)).powi(2);
        }
        s.sqrt()
    }
}

/// Clips a packed state the same way [`SystemState::clipped`] clips the
/// unpacked one.
pub(crate) fn clip_packed(v: &mut PackedState) {
    for o in [0, 3] {
        v[o] = v[o].clamp(-1.0, 1.0);
        v[o + 1] = v[o + 1].clamp(-1.0, 1.0);
        v[o + 2] = v[o + 2].max(0.0);
    }
    for x in &mut v[6..] {
        *x = x.clamp(-1.0, 1.0);
    }
}
