use std::f64::consts::PI;

use super::{Finger, JointState, SimConfig, JOINTS_PER_FINGER};

/// Planar pose: position in mm, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    /// Pose composed with a revolute joint of angle `angle` followed by a
    /// link of length `length`.
    fn then(self, angle: f64, length: f64) -> Pose {
        let heading = self.heading + angle;
        Pose {
            x: self.x + length * heading.cos(),
            y: self.y + length * heading.sin(),
            heading,
        }
    }
}

/// Pad poses of both fingertips.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerPoses {
    pub left: Pose,
    pub right: Pose,
}

impl FingerPoses {
    pub fn get(&self, finger: Finger) -> Pose {
        match finger {
            Finger::Left => self.left,
            Finger::Right => self.right,
        }
    }

    /// Pad tilt measured so that mirrored joint motions give equal tilts.
    pub fn tilt(&self, finger: Finger) -> f64 {
        match finger {
            Finger::Left => self.left.heading,
            Finger::Right => PI - self.right.heading,
        }
    }
}

pub(crate) fn base_pose(finger: Finger, config: &SimConfig) -> Pose {
    let half = config.base_separation / 2.0;
    match finger {
        Finger::Left => Pose {
            x: -half,
            y: 0.0,
            heading: 0.0,
        },
        Finger::Right => Pose {
            x: half,
            y: 0.0,
            heading: PI,
        },
    }
}

/// Base pose followed by the pose after each of the four links.
pub fn chain_poses(
    base: Pose,
    lengths: &[f64; JOINTS_PER_FINGER],
    angles: &[f64; JOINTS_PER_FINGER],
) -> [Pose; JOINTS_PER_FINGER + 1] {
    let mut out = [base; JOINTS_PER_FINGER + 1];
    for k in 0..JOINTS_PER_FINGER {
        out[k + 1] = out[k].then(angles[k], lengths[k]);
    }
    out
}

/// Fingertip pad poses for a joint configuration.
pub fn fk(joints: &JointState, config: &SimConfig) -> FingerPoses {
    let tip = |finger: Finger, lengths: &[f64; 4]| {
        chain_poses(base_pose(finger, config), lengths, &joints.finger(finger))[JOINTS_PER_FINGER]
    };
    FingerPoses {
        left: tip(Finger::Left, &config.link_lengths_left),
        right: tip(Finger::Right, &config.link_lengths_right),
    }
}

/// Pad separation along the grip axis.
pub fn gap(joints: &JointState, config: &SimConfig) -> f64 {
    let p = fk(joints, config);
    p.right.x - p.left.x
}
