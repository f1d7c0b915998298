//! A planar two-finger gripper holding a marble between two tactile pads.
//!
//! Each finger is a 4-link revolute chain in the grip plane. The left finger
//! is rooted at `(-base_separation / 2, 0)` pointing along `+x`, the right one
//! at `(+base_separation / 2, 0)` pointing along `-x`, so the distal pads face
//! each other. The marble is described by its contact point on each pad, in
//! millimetres relative to the centre of the pad's sensing field, and by how
//! deep it is squeezed into the gel.

mod contact;
mod episode;
mod kinematics;
mod render;

use serde::{Deserialize, Serialize};

use crate::config::kv_section;
use crate::error::{Error, Result};

pub use contact::{advance_contacts, step, surface_displacements, SurfaceDisplacement};
pub use episode::{collect_episode, reset, Episode};
pub use kinematics::{chain_poses, fk, gap, FingerPoses, Pose};
pub use render::{
    background, contact_to_pixel, disk_radius_px, ground_truth_keypoint, render, render_noiseless,
};

pub const JOINTS_PER_FINGER: usize = 4;
pub const NUM_JOINTS: usize = 2 * JOINTS_PER_FINGER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Left,
    Right,
}

impl Finger {
    pub const BOTH: [Finger; 2] = [Finger::Left, Finger::Right];

    pub fn index(self) -> usize {
        match self {
            Finger::Left => 0,
            Finger::Right => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Finger::Left => "left",
            Finger::Right => "right",
        }
    }
}

/// Eight joint angles in radians: left finger base to tip, then right finger
/// base to tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub angles: [f64; NUM_JOINTS],
}

impl JointState {
    pub fn new(angles: [f64; NUM_JOINTS]) -> Self {
        Self { angles }
    }

    pub fn clamped(mut self, config: &SimConfig) -> Self {
        for (j, a) in self.angles.iter_mut().enumerate() {
            *a = a.clamp(config.joint_min[j], config.joint_max[j]);
        }
        self
    }

    pub fn finger(&self, finger: Finger) -> [f64; JOINTS_PER_FINGER] {
        let o = finger.index() * JOINTS_PER_FINGER;
        [self.angles[o], self.angles[o + 1], self.angles[o + 2], self.angles[o + 3]]
    }

    pub fn within_limits(&self, config: &SimConfig) -> bool {
        self.angles
            .iter()
            .enumerate()
            .all(|(j, &a)| a >= config.joint_min[j] && a <= config.joint_max[j])
    }
}

/// Eight angular displacement commands in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub displacements: [f64; NUM_JOINTS],
}

impl Action {
    pub const ZERO: Action = Action {
        displacements: [0.0; NUM_JOINTS],
    };

    pub fn new(displacements: [f64; NUM_JOINTS]) -> Self {
        Self { displacements }
    }

    pub fn clamped(mut self, a_max: f64) -> Self {
        for d in &mut self.displacements {
            *d = d.clamp(-a_max, a_max);
        }
        self
    }

    pub fn is_zero(&self) -> bool {
        self.displacements.iter().all(|&d| d == 0.0)
    }
}

/// Contact state of the marble. When `held` is false the marble has been
/// dropped and `depth` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarbleState {
    /// `(u, v)` on the left pad, mm from the sensing-field centre.
    pub contact_left: [f64; 2],
    pub contact_right: [f64; 2],
    /// Squeeze depth in mm.
    pub depth: f64,
    pub held: bool,
}

impl MarbleState {
    pub fn contact(&self, finger: Finger) -> [f64; 2] {
        match finger {
            Finger::Left => self.contact_left,
            Finger::Right => self.contact_right,
        }
    }

    pub fn dropped(self) -> Self {
        Self {
            depth: 0.0,
            held: false,
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Link lengths of the left finger in mm, base to tip.
    pub link_lengths_left: [f64; 4],
    pub link_lengths_right: [f64; 4],
    /// Distance between the two finger bases in mm.
    pub base_separation: f64,
    /// Joint angles of the reset grip pose.
    pub nominal_joints: [f64; NUM_JOINTS],
    pub joint_min: [f64; NUM_JOINTS],
    pub joint_max: [f64; NUM_JOINTS],
    pub marble_diameter: f64,
    /// Fraction of the mean pad motion transferred to the marble.
    pub roll_slip_ratio: f64,
    pub slip_noise_std: f64,
    pub drop_depth_threshold: f64,
    /// Depth mapped to unit ground-truth intensity.
    pub max_depth: f64,
    /// Converts a pad orientation change into out-of-plane pad travel (mm/rad).
    pub fingertip_radius: f64,
    pub field_width: f64,
    pub field_height: f64,
    /// Per-component action bound in radians.
    pub a_max: f64,
    pub reset_joint_noise: f64,
    pub reset_contact_spread_u: f64,
    pub reset_contact_spread_v: f64,
    pub pixel_noise_std: f64,
    /// Contact disk radius `base + gain * sqrt(depth)` in pixels.
    pub disk_radius_base: f64,
    pub disk_radius_gain: f64,
    pub seed: u64,
}

kv_section!(SimConfig {
    link_lengths_left,
    link_lengths_right,
    base_separation,
    nominal_joints,
    joint_min,
    joint_max,
    marble_diameter,
    roll_slip_ratio,
    slip_noise_std,
    drop_depth_threshold,
    max_depth,
    fingertip_radius,
    field_width,
    field_height,
    a_max,
    reset_joint_noise,
    reset_contact_spread_u,
    reset_contact_spread_v,
    pixel_noise_std,
    disk_radius_base,
    disk_radius_gain,
    seed,
});

/// Reset squeeze depth used to place the finger bases.
pub const NOMINAL_DEPTH: f64 = 2.0;

impl Default for SimConfig {
    fn default() -> Self {
        let left = [-0.35, 0.25, 0.2, -0.1];
        let mut nominal = [0.0; NUM_JOINTS];
        for j in 0..4 {
            nominal[j] = left[j];
            nominal[j + 4] = -left[j];
        }
        let mut c = Self {
            link_lengths_left: [10.0, 8.0, 6.0, 4.0],
            link_lengths_right: [10.0, 8.0, 6.0, 4.0],
            base_separation: 0.0,
            nominal_joints: nominal,
            joint_min: [-0.9; NUM_JOINTS],
            joint_max: [0.9; NUM_JOINTS],
            marble_diameter: 12.0,
            roll_slip_ratio: 0.9,
            slip_noise_std: 0.05,
            drop_depth_threshold: 0.2,
            max_depth: 4.0,
            fingertip_radius: 8.0,
            field_width: 19.0,
            field_height: 16.0,
            a_max: 0.05,
            reset_joint_noise: 0.03,
            reset_contact_spread_u: 6.0,
            reset_contact_spread_v: 5.0,
            pixel_noise_std: 0.01,
            disk_radius_base: 2.0,
            disk_radius_gain: 3.5,
            seed: 0,
        };
        c.base_separation = c.separation_for_depth(NOMINAL_DEPTH);
        c
    }
}

impl SimConfig {
    /// Base separation at which the nominal pose squeezes the marble by `depth`.
    pub fn separation_for_depth(&self, depth: f64) -> f64 {
        let probe = Self {
            base_separation: 0.0,
            ..self.clone()
        };
        let g0 = gap(&JointState::new(self.nominal_joints), &probe);
        self.marble_diameter - depth - g0
    }

    pub fn nominal_joint_state(&self) -> JointState {
        JointState::new(self.nominal_joints)
    }

    pub fn field_contains(&self, c: [f64; 2]) -> bool {
        c[0].abs() <= self.field_width / 2.0 && c[1].abs() <= self.field_height / 2.0
    }

    pub(crate) fn check(&self) -> Result<()> {
        let links = self.link_lengths_left.iter().chain(&self.link_lengths_right);
        if links.clone().any(|&l| !(l > 0.0)) {
            return Err(Error::Config("link lengths must be > 0".into()));
        }
        if !(self.marble_diameter > 0.0) {
            return Err(Error::Config("marble_diameter must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.roll_slip_ratio) {
            return Err(Error::Config("roll_slip_ratio must lie in [0, 1]".into()));
        }
        if self.slip_noise_std < 0.0 || self.pixel_noise_std < 0.0 || self.reset_joint_noise < 0.0 {
            return Err(Error::Config("noise scales must be >= 0".into()));
        }
        if !(self.a_max > 0.0) || !(self.max_depth > 0.0) {
            return Err(Error::Config("a_max and max_depth must be > 0".into()));
        }
        if !(self.field_width > 0.0 && self.field_height > 0.0) {
            return Err(Error::Config("sensing field must have positive size".into()));
        }
        for j in 0..NUM_JOINTS {
            if self.joint_min[j] > self.joint_max[j] {
                return Err(Error::Config(format!("joint {j}: min > max")));
            }
            if !(self.joint_min[j]..=self.joint_max[j]).contains(&self.nominal_joints[j]) {
                return Err(Error::Config(format!("joint {j}: nominal pose outside limits")));
            }
        }
        Ok(())
    }
}
