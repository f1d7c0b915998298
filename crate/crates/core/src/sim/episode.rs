use rand::Rng as _;

use super::{render, step, Action, Finger, JointState, MarbleState, SimConfig};
use crate::frame::PackedFrame;
use crate::rng::Rng;

/// Places the marble back in the grip: nominal pose plus a uniform joint
/// perturbation, marble near the middle of both sensing fields.
pub fn reset(config: &SimConfig, rng: &mut Rng) -> (JointState, MarbleState) {
    let nominal = config.nominal_joint_state();
    let mut joints = nominal;
    for _ in 0..64 {
        let mut candidate = nominal;
        for a in &mut candidate.angles {
            *a += config.reset_joint_noise * rng.gen_range(-1.0..=1.0);
        }
        joints = candidate.clamped(config);
        if squeeze(&joints, config) > config.drop_depth_threshold {
            break;
        }
        joints = nominal;
    }
    let mut contact = || {
        [
            config.reset_contact_spread_u * rng.gen_range(-1.0..=1.0),
            config.reset_contact_spread_v * rng.gen_range(-1.0..=1.0),
        ]
    };
    let contact_left = contact();
    let contact_right = contact();
    let marble = MarbleState {
        contact_left,
        contact_right,
        depth: squeeze(&joints, config),
        held: true,
    };
    (joints, marble)
}

fn squeeze(joints: &JointState, config: &SimConfig) -> f64 {
    (config.marble_diameter - super::gap(joints, config)).max(0.0)
}

/// One recorded trial. Index `t` of the per-step vectors is the state before
/// action `t`; the frame and joint vectors hold one more entry than `actions`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: u64,
    pub seed: u64,
    pub frames_left: Vec<PackedFrame>,
    pub frames_right: Vec<PackedFrame>,
    pub joints: Vec<JointState>,
    pub actions: Vec<Action>,
    /// Ground-truth marble state per frame.
    pub marbles: Vec<MarbleState>,
    /// Index of the first frame in which the marble is no longer held.
    pub drop_step: Option<usize>,
}

impl Episode {
    pub fn num_frames(&self) -> usize {
        self.frames_left.len()
    }

    pub fn frames(&self, finger: Finger) -> &[PackedFrame] {
        match finger {
            Finger::Left => &self.frames_left,
            Finger::Right => &self.frames_right,
        }
    }
}

/// Resets, then issues `n_commands` uniformly random commands, recording both
/// tactile frames after every command. Stops at the first drop.
pub fn collect_episode(config: &SimConfig, n_commands: usize, rng: &mut Rng) -> Episode {
    assert!(n_commands >= 1, "an episode needs at least one command");
    let (mut joints, mut marble) = reset(config, rng);
    let mut ep = Episode {
        id: 0,
        seed: 0,
        frames_left: Vec::with_capacity(n_commands + 1),
        frames_right: Vec::with_capacity(n_commands + 1),
        joints: Vec::with_capacity(n_commands + 1),
        actions: Vec::with_capacity(n_commands),
        marbles: Vec::with_capacity(n_commands + 1),
        drop_step: None,
    };
    let record = |ep: &mut Episode, joints: &JointState, marble: &MarbleState, rng: &mut Rng| {
        ep.frames_left.push(render(marble, Finger::Left, config, rng).pack());
        ep.frames_right.push(render(marble, Finger::Right, config, rng).pack());
        ep.joints.push(*joints);
        ep.marbles.push(*marble);
    };
    record(&mut ep, &joints, &marble, rng);
    for t in 0..n_commands {
        let action = Action::new(std::array::from_fn(|_| rng.gen_range(-config.a_max..=config.a_max)));
        (joints, marble) = step(&joints, &marble, &action, config, rng);
        ep.actions.push(action);
        record(&mut ep, &joints, &marble, rng);
        if !marble.held {
            ep.drop_step = Some(t + 1);
            break;
        }
    }
    ep
}
