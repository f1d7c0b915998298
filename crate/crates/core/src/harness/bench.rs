//! Timing of keypoint-space planning against a pixel-space stand-in.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::median;
use crate::config::kv_section;
use crate::control::{cem_optimize, cem_plan, CemConfig, Goal};
use crate::dynamics::{build_state, DynParams, SystemState, ACTION_DIM};
use crate::error::{Error, Result};
use crate::frame::Keypoint;
use crate::nn::{active_index, LossWeights, NetParams};
use crate::rng::{derive_seed, rng_from_seed, streams};
use crate::sim::{Action, Finger};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub reps: usize,
    /// Planner budget of the timed MPC steps. The pixel-space step is slow,
    /// so both steps use this reduced budget and the report extrapolates to
    /// the full planner per forward pass.
    pub particles: usize,
    pub horizon: usize,
    pub max_iters: usize,
    pub parallel: bool,
    pub seed: u64,
}

kv_section!(BenchConfig {
    reps,
    particles,
    horizon,
    max_iters,
    parallel,
    seed,
});

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            reps: 20,
            particles: 20,
            horizon: 4,
            max_iters: 2,
            parallel: false,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub(crate) fn check(&self) -> Result<()> {
        if self.reps < 20 {
            return Err(Error::Config("benchmark medians need reps >= 20".into()));
        }
        if self.particles < 2 || self.horizon == 0 || self.max_iters == 0 {
            return Err(Error::Config("benchmark planner needs particles >= 2, horizon and iters >= 1".into()));
        }
        Ok(())
    }

    pub fn planner(&self, base: &CemConfig) -> CemConfig {
        CemConfig {
            particles: self.particles,
            horizon: self.horizon,
            max_iters: self.max_iters,
            parallel: self.parallel,
            early_stop: false,
            ..base.clone()
        }
    }
}

/// Median wall-clock seconds; every field is measured over `reps` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub reps: usize,
    pub dynamics_params: usize,
    pub autoencoder_params: usize,
    pub total_params: usize,
    pub dynamics_forward_s: f64,
    pub dynamics_forward_backward_s: f64,
    pub encode_s: f64,
    pub autoencoder_forward_backward_s: f64,
    /// Forward passes of one timed MPC step, as counted by the planner.
    pub forward_passes_per_step: u64,
    pub keypoint_mpc_step_s: f64,
    pub pixel_mpc_step_s: f64,
    /// `pixel_mpc_step_s / keypoint_mpc_step_s`.
    pub speedup: f64,
    /// Both step times scaled to the full planner budget.
    pub full_budget_forward_passes: u64,
    pub keypoint_full_step_s: f64,
    pub pixel_full_step_s: f64,
}

fn time_median(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    let samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    median(&samples)
}

/// Pixel-space rollout cost: after every dynamics step both predicted active
/// keypoints are drawn back into full frames by the decoder and re-encoded, as
/// an image-space model would have to.
#[allow(clippy::too_many_arguments)]
fn pixel_costs(
    ae: &NetParams,
    dynamics: &DynParams,
    s0: &SystemState,
    keypoints: &[Vec<Keypoint>; 2],
    goal: &Goal,
    config: &CemConfig,
    samples: &[f64],
    costs: &mut [f64],
) {
    let dim = config.horizon * ACTION_DIM;
    for (row, c) in samples.chunks_exact(dim).zip(costs.iter_mut()) {
        let mut s = *s0;
        let mut kps = keypoints.clone();
        *c = 0.0;
        for a in row.chunks_exact(ACTION_DIM) {
            let a = Action::new(a.try_into().expect("action"));
            let pred = match dynamics.predict(&s, &a) {
                Ok(p) => p,
                Err(_) => {
                    *c = f64::INFINITY;
                    break;
                }
            };
            let mut next = [Keypoint::default(); 2];
            for f in Finger::BOTH {
                let set = &mut kps[f.index()];
                let idx = active_index(set);
                set[idx] = pred.keypoint(f);
                let image = ae.decode(set).expect("decoder shape");
                *set = ae.encode(&image).expect("encoder shape");
                next[f.index()] = set[active_index(set)];
            }
            s = build_state(next[0], next[1], pred.joints);
            *c += crate::control::cost(&[s], goal, config.intensity_weight);
        }
    }
}

pub fn bench_timing(
    ae: &NetParams,
    dynamics: &DynParams,
    base: &CemConfig,
    config: &BenchConfig,
    s0: &SystemState,
    keypoints: &[Vec<Keypoint>; 2],
    goal: &Goal,
) -> Result<BenchResult> {
    config.check()?;
    let planner = config.planner(base);
    let reps = config.reps;
    let a = Action::new([0.01; ACTION_DIM]);

    let dynamics_forward_s = time_median(reps, || {
        std::hint::black_box(dynamics.predict(s0, &a).expect("finite"));
    });
    let input = {
        let mut v = Vec::new();
        dynamics.input_rows(&[s0.pack(&dynamics.limits)], &[a.displacements], &mut v);
        v
    };
    let target = [0.0; 14];
    let mut grad = vec![0.0; dynamics.num_params()];
    let mut acts = Vec::new();
    let dynamics_forward_backward_s = time_median(reps, || {
        std::hint::black_box(dynamics.loss_and_grad(&dynamics.values, &input, &target, &mut grad, &mut acts));
    });

    let frame = ae.decode(&keypoints[0])?;
    let encode_s = time_median(reps, || {
        std::hint::black_box(ae.encode(&frame).expect("shape"));
    });
    let chw = frame.to_chw();
    let mut ae_grad = vec![0.0; ae.num_params()];
    let weights = LossWeights::default();
    let autoencoder_forward_backward_s = time_median(reps, || {
        std::hint::black_box(ae.net.loss_and_grad(&ae.values, &chw, &chw, &weights, 1.0, &mut ae_grad));
    });

    let mut passes = 0;
    let keypoint_mpc_step_s = time_median(reps, || {
        let r = cem_plan(dynamics, s0, goal, &planner).expect("plan");
        passes = r.forward_passes;
    });
    let dim = planner.horizon * ACTION_DIM;
    let pixel_mpc_step_s = time_median(reps, || {
        let mut rng = rng_from_seed(derive_seed(config.seed, streams::BENCH, 0));
        let out = cem_optimize(dim, dynamics.a_max, &vec![0.0; dim], &planner, &mut rng, |s, c| {
            pixel_costs(ae, dynamics, s0, keypoints, goal, &planner, s, c)
        });
        std::hint::black_box(out);
    });

    let full = (base.particles * base.horizon * base.max_iters) as u64;
    let scale = full as f64 / passes as f64;
    Ok(BenchResult {
        reps,
        dynamics_params: dynamics.num_params(),
        autoencoder_params: ae.num_params(),
        total_params: dynamics.num_params() + ae.num_params(),
        dynamics_forward_s,
        dynamics_forward_backward_s,
        encode_s,
        autoencoder_forward_backward_s,
        forward_passes_per_step: passes,
        keypoint_mpc_step_s,
        pixel_mpc_step_s,
        speedup: pixel_mpc_step_s / keypoint_mpc_step_s,
        full_budget_forward_passes: full,
        keypoint_full_step_s: keypoint_mpc_step_s * scale,
        pixel_full_step_s: pixel_mpc_step_s * scale,
    })
}
