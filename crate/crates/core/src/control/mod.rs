//! Goals, the CEM model-predictive planner and the proportional baseline.

mod cem;
mod episode;

use rand::Rng as _;

use crate::config::{kv_section, KvMap, KvSection};
use crate::dynamics::SystemState;
use crate::error::{Error, Result};
use crate::frame::{Keypoint, FRAME_MAX_COORD};
use crate::rng::Rng;
use crate::sim::{Action, Finger, NUM_JOINTS};

pub use cem::{cem_optimize, cem_plan, cem_plan_from, mpc_step, CemConfig, CemOutcome, PlanResult};
pub use episode::{
    run_episode, run_episode_mpc, run_episode_p, EvalConfig, StepRecord, TrialLog, METRICS_CSV_HEADER,
};

/// Default weight of intensity in the cost, in pixels per unit intensity.
pub const INTENSITY_WEIGHT: f64 = 32.0;
/// Minimum distance between a sampled goal and the current keypoint.
pub const MIN_GOAL_DISTANCE: f64 = 16.0;
/// Goals are sampled this many pixels away from the frame border.
pub const GOAL_MARGIN: f64 = 8.0;

/// A target keypoint for one finger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Goal {
    pub finger: Finger,
    pub target: Keypoint,
}

impl Default for Goal {
    fn default() -> Self {
        Self {
            finger: Finger::Left,
            target: Keypoint::new(FRAME_MAX_COORD / 2.0, FRAME_MAX_COORD / 2.0, 1.0),
        }
    }
}

impl Goal {
    pub fn new(finger: Finger, target: Keypoint) -> Result<Self> {
        let g = Self { finger, target };
        g.check()?;
        Ok(g)
    }

    fn check(&self) -> Result<()> {
        let t = &self.target;
        let inside = |v: f64| (0.0..=FRAME_MAX_COORD).contains(&v);
        if !(inside(t.x) && inside(t.y)) || !(t.i >= 0.0) {
            return Err(Error::Config(format!("goal {t:?} outside the frame or negative intensity")));
        }
        Ok(())
    }

    /// Reads `finger`, `x`, `y` and `i` keys under `prefix`.
    pub fn from_kv(kv: &mut KvMap, prefix: &str) -> Result<Self> {
        let mut g = Self::default();
        crate::config::read_field(kv, format!("{prefix}finger"), &mut g.finger)?;
        crate::config::read_field(kv, format!("{prefix}x"), &mut g.target.x)?;
        crate::config::read_field(kv, format!("{prefix}y"), &mut g.target.y)?;
        crate::config::read_field(kv, format!("{prefix}i"), &mut g.target.i)?;
        g.check()?;
        Ok(g)
    }
}

/// Sum over the states of the distance between the goal finger's
/// `(x, y, w * i)` and the target's.
pub fn cost(states: &[SystemState], goal: &Goal, intensity_weight: f64) -> f64 {
    assert!(!states.is_empty(), "cost needs at least one state");
    states
        .iter()
        .map(|s| {
            let k = s.keypoint(goal.finger);
            let t = &goal.target;
            ((k.x - t.x).powi(2) + (k.y - t.y).powi(2) + (intensity_weight * (k.i - t.i)).powi(2)).sqrt()
        })
        .sum()
}

/// Uniform over the margin-inset frame, rejecting points closer than
/// [`MIN_GOAL_DISTANCE`] to `current`; intensity 1.
pub fn sample_goal(finger: Finger, current: &Keypoint, rng: &mut Rng) -> Goal {
    let (lo, hi) = (GOAL_MARGIN, FRAME_MAX_COORD - GOAL_MARGIN);
    for _ in 0..100_000 {
        let x = rng.gen_range(lo..=hi);
        let y = rng.gen_range(lo..=hi);
        if (x - current.x).hypot(y - current.y) >= MIN_GOAL_DISTANCE {
            return Goal {
                finger,
                target: Keypoint::new(x, y, 1.0),
            };
        }
    }
    panic!("no goal at least {MIN_GOAL_DISTANCE} px from {current:?}");
}

/// A 3x8 gain matrix, row-major: row `c` maps displacement component `c` of
/// `(dx, dy, di)` to the eight joint commands.
pub type PGain = [f64; 3 * NUM_JOINTS];

/// Gains used when the goal is on the left or on the right finger.
#[derive(Debug, Clone, PartialEq)]
pub struct PGainSet {
    pub left: PGain,
    pub right: PGain,
}

kv_section!(PGainSet { left, right });

impl Default for PGainSet {
    fn default() -> Self {
        let text = include_str!("../../../../configs/p_gains.txt");
        let mut kv = KvMap::parse(text).expect("shipped P gains parse");
        let mut g = Self {
            left: [0.0; 3 * NUM_JOINTS],
            right: [0.0; 3 * NUM_JOINTS],
        };
        g.read_fields(&mut kv, "p.").expect("shipped P gains parse");
        g
    }
}

impl PGainSet {
    pub(crate) fn check(&self) -> Result<()> {
        if self.left.iter().chain(&self.right).any(|g| !g.is_finite()) {
            return Err(Error::Config("P gains must be finite".into()));
        }
        Ok(())
    }

    pub fn for_finger(&self, finger: Finger) -> &PGain {
        match finger {
            Finger::Left => &self.left,
            Finger::Right => &self.right,
        }
    }
}

/// Gain matrix times the goal displacement, before clamping.
pub fn p_control_raw(gain: &PGain, s: &SystemState, goal: &Goal) -> [f64; NUM_JOINTS] {
    let k = s.keypoint(goal.finger);
    let d = [goal.target.x - k.x, goal.target.y - k.y, goal.target.i - k.i];
    std::array::from_fn(|j| (0..3).map(|c| d[c] * gain[c * NUM_JOINTS + j]).sum())
}

pub fn p_control(gain: &PGain, s: &SystemState, goal: &Goal, a_max: f64) -> Action {
    Action::new(p_control_raw(gain, s, goal)).clamped(a_max)
}
