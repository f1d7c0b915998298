use rand::Rng as _;

use super::cem::{cem_plan_from, CemConfig};
use super::{p_control, sample_goal, Goal, PGainSet};
use crate::config::kv_section;
use crate::dynamics::{build_state, DynParams, SystemState};
use crate::error::{Error, Result};
use crate::frame::Keypoint;
use crate::nn::{active_keypoint, NetParams};
use crate::rng::{derive_rng, derive_seed, streams, Rng};
use crate::sim::{ground_truth_keypoint, render, reset, step, Action, Finger, JointState, MarbleState, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub n_trials: usize,
    /// Commands per trial.
    pub n_steps: usize,
    /// Planner budget used during evaluation; the remaining planner settings
    /// come from the `cem` section.
    pub particles: usize,
    pub horizon: usize,
    pub max_iters: usize,
    pub seed: u64,
}

kv_section!(EvalConfig {
    n_trials,
    n_steps,
    particles,
    horizon,
    max_iters,
    seed,
});

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_trials: 50,
            n_steps: 20,
            particles: 100,
            horizon: 5,
            max_iters: 10,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub(crate) fn check(&self) -> Result<()> {
        if self.n_trials == 0 || self.n_steps == 0 {
            return Err(Error::Config("evaluation needs n_trials >= 1 and n_steps >= 1".into()));
        }
        Ok(())
    }

    pub fn planner(&self, base: &CemConfig) -> CemConfig {
        CemConfig {
            particles: self.particles,
            horizon: self.horizon,
            max_iters: self.max_iters,
            ..base.clone()
        }
    }
}

/// State of one trial before the command issued at `step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Encoded active keypoint of the goal finger.
    pub keypoint: Keypoint,
    /// Simulator marble pixel on the goal finger.
    pub truth: Keypoint,
    /// `(x, y)` distance from the keypoint to the goal. After a drop the
    /// last held value is kept.
    pub dist_px: f64,
    pub intensity: f64,
    pub dropped: bool,
    /// Command issued from this state, if any.
    pub action: Option<Action>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub trial_id: u64,
    pub goal: Goal,
    pub records: Vec<StepRecord>,
    pub drop_step: Option<usize>,
}

pub const METRICS_CSV_HEADER: &str = "trial_id,step,dist_px,intensity,dropped";

impl TrialLog {
    pub fn csv_rows(&self, out: &mut String) {
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{:?},{:?},{}\n",
                self.trial_id, r.step, r.dist_px, r.intensity, r.dropped as u8
            ));
        }
    }

    pub fn final_distance(&self) -> f64 {
        self.records.last().expect("at least one record").dist_px
    }

    /// Distance at `step`, holding the last value after the trial ended.
    pub fn distance_at(&self, step: usize) -> f64 {
        self.records.get(step).unwrap_or_else(|| self.records.last().expect("record")).dist_px
    }
}

fn observe(
    ae: &NetParams,
    joints: &JointState,
    marble: &MarbleState,
    sim: &SimConfig,
    rng: &mut Rng,
) -> Result<SystemState> {
    let mut ks = [Keypoint::default(); 2];
    for f in Finger::BOTH {
        // Quantised like the recorded training frames.
        let frame = render(marble, f, sim, rng).pack().unpack();
        ks[f.index()] = active_keypoint(&ae.encode(&frame)?);
    }
    Ok(build_state(ks[0], ks[1], joints.angles))
}

/// One closed-loop trial. The simulator, sensor noise and goal streams depend
/// only on `(seed, trial_id)`, so different controllers see identical resets
/// and goals.
pub fn run_episode(
    sim: &SimConfig,
    ae: &NetParams,
    trial_id: u64,
    seed: u64,
    n_steps: usize,
    controller: &mut dyn FnMut(&SystemState, &Goal, usize) -> Result<Action>,
) -> Result<TrialLog> {
    let mut rng = derive_rng(seed, streams::TRIAL, trial_id);
    let mut goal_rng = derive_rng(seed, streams::GOAL, trial_id);
    let (mut joints, mut marble) = reset(sim, &mut rng);
    let finger = if goal_rng.gen_bool(0.5) { Finger::Left } else { Finger::Right };
    let mut s = observe(ae, &joints, &marble, sim, &mut rng)?;
    let goal = sample_goal(finger, &s.keypoint(finger), &mut goal_rng);
    let mut log = TrialLog {
        trial_id,
        goal,
        records: Vec::with_capacity(n_steps + 1),
        drop_step: None,
    };
    let record = |s: &SystemState, marble: &MarbleState, t: usize, prev: Option<&StepRecord>| {
        let k = s.keypoint(finger);
        let dist = match prev {
            Some(p) if !marble.held => p.dist_px,
            _ => k.xy_dist(&goal.target),
        };
        StepRecord {
            step: t,
            keypoint: k,
            truth: ground_truth_keypoint(marble, finger, sim),
            dist_px: dist,
            intensity: k.i,
            dropped: !marble.held,
            action: None,
        }
    };
    log.records.push(record(&s, &marble, 0, None));
    for t in 0..n_steps {
        let a = controller(&s, &goal, t)?.clamped(sim.a_max);
        log.records[t].action = Some(a);
        (joints, marble) = step(&joints, &marble, &a, sim, &mut rng);
        s = observe(ae, &joints, &marble, sim, &mut rng)?;
        let r = record(&s, &marble, t + 1, log.records.last());
        log.records.push(r);
        if !marble.held {
            log.drop_step = Some(t + 1);
            break;
        }
    }
    Ok(log)
}

/// MPC trial: the planner seed for step `t` of trial `k` is derived from
/// `(seed, k, t)`.
pub fn run_episode_mpc(
    sim: &SimConfig,
    ae: &NetParams,
    dynamics: &DynParams,
    cem: &CemConfig,
    trial_id: u64,
    seed: u64,
    n_steps: usize,
) -> Result<TrialLog> {
    let mut prev: Option<Vec<Action>> = None;
    let mut controller = |s: &SystemState, goal: &Goal, t: usize| -> Result<Action> {
        let cfg = CemConfig {
            seed: derive_seed(seed ^ cem.seed, streams::PLAN, (trial_id << 16) | t as u64),
            ..cem.clone()
        };
        let init = if cem.warm_start { prev.as_deref() } else { None };
        let plan = cem_plan_from(dynamics, s, goal, &cfg, init)?;
        let first = plan.best_actions[0];
        if cem.warm_start {
            let mut shifted = plan.best_actions[1..].to_vec();
            shifted.push(Action::ZERO);
            prev = Some(shifted);
        }
        Ok(first)
    };
    run_episode(sim, ae, trial_id, seed, n_steps, &mut controller)
}

pub fn run_episode_p(
    sim: &SimConfig,
    ae: &NetParams,
    gains: &PGainSet,
    trial_id: u64,
    seed: u64,
    n_steps: usize,
) -> Result<TrialLog> {
    let mut controller =
        |s: &SystemState, goal: &Goal, _t: usize| Ok(p_control(gains.for_finger(goal.finger), s, goal, sim.a_max));
    run_episode(sim, ae, trial_id, seed, n_steps, &mut controller)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::JointLimits;
    use crate::rng::rng_from_seed;

    fn models() -> (SimConfig, NetParams, DynParams) {
        let sim = SimConfig::default();
        let arch = crate::nn::TrainConfig {
            enc_channels_1: 4,
            enc_channels_2: 4,
            dec_channels_1: 4,
            dec_channels_2: 4,
            ..Default::default()
        }
        .arch();
        let ae = NetParams::new(arch, &mut rng_from_seed(0));
        let dynp = DynParams::new(8, 1, JointLimits::from_sim(&sim), sim.a_max, &mut rng_from_seed(1));
        (sim, ae, dynp)
    }

    #[test]
    fn records_and_pairing() {
        let (sim, ae, dynp) = models();
        let cem = CemConfig {
            particles: 10,
            horizon: 2,
            max_iters: 2,
            ..CemConfig::default()
        };
        let m = run_episode_mpc(&sim, &ae, &dynp, &cem, 3, 9, 4).unwrap();
        let p = run_episode_p(&sim, &ae, &PGainSet::default(), 3, 9, 4).unwrap();
        assert_eq!(m.goal, p.goal);
        assert_eq!(m.records[0].keypoint, p.records[0].keypoint);
        for log in [&m, &p] {
            let executed = log.records.iter().filter(|r| r.action.is_some()).count();
            assert_eq!(log.records.len(), executed + 1);
            assert!(log.goal.target.xy_dist(&log.records[0].keypoint) >= 16.0);
        }
        assert_eq!(m, run_episode_mpc(&sim, &ae, &dynp, &cem, 3, 9, 4).unwrap());
        let mut csv = String::new();
        m.csv_rows(&mut csv);
        assert_eq!(csv.lines().count(), m.records.len());
        assert!(csv.starts_with("3,0,"));
    }
}
