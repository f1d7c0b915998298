use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{Goal, INTENSITY_WEIGHT};
use crate::config::kv_section;
use crate::dynamics::{DynParams, PackedState, SystemState, Workspace, ACTION_DIM};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::sim::{Action, Finger};

#[derive(Debug, Clone, PartialEq)]
pub struct CemConfig {
    pub particles: usize,
    pub horizon: usize,
    pub max_iters: usize,
    pub elite_fraction: f64,
    /// Initial sampling std per action component, radians.
    pub init_std: f64,
    pub min_std: f64,
    /// Weight of the previous mean/std when refitting.
    pub smoothing: f64,
    pub intensity_weight: f64,
    /// Stop once the elite std is below `min_std` on every component.
    pub early_stop: bool,
    /// Start each MPC step from the previous plan shifted by one step.
    pub warm_start: bool,
    /// Evaluate particles on the rayon pool.
    pub parallel: bool,
    pub seed: u64,
}

kv_section!(CemConfig {
    particles,
    horizon,
    max_iters,
    elite_fraction,
    init_std,
    min_std,
    smoothing,
    intensity_weight,
    early_stop,
    warm_start,
    parallel,
    seed,
});

impl Default for CemConfig {
    fn default() -> Self {
        let a_max = 0.05;
        Self {
            particles: 250,
            horizon: 10,
            max_iters: 120,
            elite_fraction: 0.1,
            init_std: a_max / 2.0,
            min_std: a_max / 50.0,
            smoothing: 0.25,
            intensity_weight: INTENSITY_WEIGHT,
            early_stop: false,
            warm_start: false,
            parallel: false,
            seed: 0,
        }
    }
}

impl CemConfig {
    pub(crate) fn check(&self) -> Result<()> {
        if self.particles < 2 || self.horizon < 1 || self.max_iters < 1 {
            return Err(Error::Config("CEM needs particles >= 2, horizon >= 1, max_iters >= 1".into()));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return Err(Error::Config("elite_fraction must lie in (0, 1)".into()));
        }
        if !(self.init_std > 0.0) || !(self.min_std > 0.0) || self.min_std > self.init_std {
            return Err(Error::Config("need 0 < min_std <= init_std".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) || !(self.intensity_weight >= 0.0) {
            return Err(Error::Config("smoothing must lie in [0, 1) and intensity_weight >= 0".into()));
        }
        Ok(())
    }

    pub fn elites(&self) -> usize {
        ((self.elite_fraction * self.particles as f64).round() as usize).clamp(1, self.particles)
    }
}

/// Result of a generic CEM minimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct CemOutcome {
    pub best: Vec<f64>,
    pub best_cost: f64,
    /// Best-so-far cost after each iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Minimises over `[-bound, bound]^dim` with a diagonal Gaussian. `eval`
/// receives `particles x dim` samples row-major and writes one cost each.
pub fn cem_optimize(
    dim: usize,
    bound: f64,
    init_mean: &[f64],
    config: &CemConfig,
    rng: &mut Rng,
    mut eval: impl FnMut(&[f64], &mut [f64]),
) -> CemOutcome {
    assert_eq!(init_mean.len(), dim);
    let n = config.particles;
    let n_elite = config.elites();
    let mut mean = init_mean.to_vec();
    let mut std = vec![config.init_std; dim];
    let mut samples = vec![0.0; n * dim];
    let mut costs = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut out = CemOutcome {
        best: mean.iter().map(|m| m.clamp(-bound, bound)).collect(),
        best_cost: f64::INFINITY,
        trace: Vec::with_capacity(config.max_iters),
        iterations: 0,
    };
    for _ in 0..config.max_iters {
        for row in samples.chunks_exact_mut(dim) {
            for (d, v) in row.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                *v = (mean[d] + std[d] * z).clamp(-bound, bound);
            }
        }
        eval(&samples, &mut costs);
        out.iterations += 1;
        // NaN costs sort last.
        order.sort_by(|&a, &b| {
            let key = |i: usize| if costs[i].is_nan() { f64::INFINITY } else { costs[i] };
            key(a).total_cmp(&key(b)).then(a.cmp(&b))
        });
        let top = order[0];
        if costs[top] < out.best_cost {
            out.best_cost = costs[top];
            out.best.copy_from_slice(&samples[top * dim..(top + 1) * dim]);
        }
        out.trace.push(out.best_cost);

        let mut collapsed = true;
        for d in 0..dim {
            let e_mean = order[..n_elite].iter().map(|&i| samples[i * dim + d]).sum::<f64>() / n_elite as f64;
            let e_var = order[..n_elite]
                .iter()
                .map(|&i| (samples[i * dim + d] - e_mean).powi(2))
                .sum::<f64>()
                / n_elite as f64;
            let e_std = e_var.sqrt();
            collapsed &= e_std < config.min_std;
            mean[d] = config.smoothing * mean[d] + (1.0 - config.smoothing) * e_mean;
            std[d] = (config.smoothing * std[d] + (1.0 - config.smoothing) * e_std).max(config.min_std);
        }
        if config.early_stop && collapsed {
            break;
        }
    }
    out
}

/// A planned action sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub best_actions: Vec<Action>,
    pub best_cost: f64,
    pub trace: Vec<f64>,
    pub forward_passes: u64,
}

/// Cost of each particle's rollout, accumulated in packed coordinates.
fn rollout_costs(
    params: &DynParams,
    s0: &PackedState,
    goal: &Goal,
    w_i: f64,
    horizon: usize,
    samples: &[f64],
    costs: &mut [f64],
    ws: &mut Workspace,
) {
    let n = costs.len();
    let dim = horizon * ACTION_DIM;
    let o = match goal.finger {
        Finger::Left => 0,
        Finger::Right => 3,
    };
    let c = crate::frame::FRAME_MAX_COORD / 2.0;
    let (gx, gy) = ((goal.target.x - c) / c, (goal.target.y - c) / c);
    let mut states = vec![*s0; n];
    let mut actions = vec![[0.0; ACTION_DIM]; n];
    costs.iter_mut().for_each(|v| *v = 0.0);
    for t in 0..horizon {
        for (p, a) in actions.iter_mut().enumerate() {
            a.copy_from_slice(&samples[p * dim + t * ACTION_DIM..p * dim + (t + 1) * ACTION_DIM]);
        }
        params.predict_packed_batch(&mut states, &actions, ws);
        for (cost, s) in costs.iter_mut().zip(&states) {
            let dx = (s[o] - gx) * c;
            let dy = (s[o + 1] - gy) * c;
            let di = (s[o + 2] - goal.target.i) * w_i;
            *cost += (dx * dx + dy * dy + di * di).sqrt();
        }
    }
}

/// Particles per rayon task; the per-particle arithmetic does not depend on
/// how particles are grouped, so parallel and serial runs agree bit for bit.
const CHUNK: usize = 32;

pub fn cem_plan(params: &DynParams, s0: &SystemState, goal: &Goal, config: &CemConfig) -> Result<PlanResult> {
    cem_plan_from(params, s0, goal, config, None)
}

/// [`cem_plan`] with an optional initial mean sequence (for warm starts).
pub fn cem_plan_from(
    params: &DynParams,
    s0: &SystemState,
    goal: &Goal,
    config: &CemConfig,
    init: Option<&[Action]>,
) -> Result<PlanResult> {
    config.check()?;
    if !s0.is_finite() {
        return Err(Error::NonFinite(format!("planner start state {s0:?}")));
    }
    let t = config.horizon;
    let dim = t * ACTION_DIM;
    let mut mean = vec![0.0; dim];
    if let Some(init) = init {
        for (k, a) in init.iter().take(t).enumerate() {
            mean[k * ACTION_DIM..(k + 1) * ACTION_DIM].copy_from_slice(&a.displacements);
        }
    }
    let packed = s0.pack(&params.limits);
    let w_i = config.intensity_weight;
    let mut rng = rng_from_seed(config.seed);
    let mut ws = Workspace::default();
    let outcome = cem_optimize(dim, params.a_max, &mean, config, &mut rng, |samples, costs| {
        if config.parallel {
            costs
                .par_chunks_mut(CHUNK)
                .zip(samples.par_chunks(CHUNK * dim))
                .for_each_init(Workspace::default, |ws, (c, s)| {
                    rollout_costs(params, &packed, goal, w_i, t, s, c, ws)
                });
        } else {
            for (c, s) in costs.chunks_mut(CHUNK).zip(samples.chunks(CHUNK * dim)) {
                rollout_costs(params, &packed, goal, w_i, t, s, c, &mut ws);
            }
        }
    });
    if !outcome.best_cost.is_finite() {
        return Err(Error::NonFinite("every planned rollout had a non-finite cost".into()));
    }
    Ok(PlanResult {
        best_actions: outcome
            .best
            .chunks_exact(ACTION_DIM)
            .map(|c| Action::new(c.try_into().expect("action chunk")))
            .collect(),
        best_cost: outcome.best_cost,
        trace: outcome.trace,
        forward_passes: (config.particles * t * outcome.iterations) as u64,
    })
}

/// First action of the planned sequence.
pub fn mpc_step(params: &DynParams, s0: &SystemState, goal: &Goal, config: &CemConfig) -> Result<Action> {
    Ok(cem_plan(params, s0, goal, config)?.best_actions[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::cost;
    use crate::dynamics::{build_state, rollout, JointLimits};
    use crate::frame::Keypoint;
    use crate::sim::SimConfig;

    fn small() -> CemConfig {
        CemConfig {
            particles: 40,
            horizon: 3,
            max_iters: 8,
            ..CemConfig::default()
        }
    }

    fn model(seed: u64) -> DynParams {
        let limits = JointLimits::from_sim(&SimConfig::default());
        let mut p = DynParams::new(16, 2, limits, 0.05, &mut rng_from_seed(seed));
        p.delta_scale = [0.05; 14];
        p
    }

    fn start() -> SystemState {
        build_state(Keypoint::new(20.0, 25.0, 0.5), Keypoint::new(40.0, 30.0, 0.4), SimConfig::default().nominal_joints)
    }

    #[test]
    fn quadratic_objective() {
        let target = [0.3, -0.2, 0.05];
        let f = |s: &[f64], c: &mut [f64]| {
            for (row, c) in s.chunks_exact(3).zip(c.iter_mut()) {
                *c = row.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
            }
        };
        let cfg = CemConfig {
            particles: 100,
            max_iters: 60,
            init_std: 0.3,
            min_std: 1e-4,
            ..CemConfig::default()
        };
        let out = cem_optimize(3, 1.0, &[0.0; 3], &cfg, &mut rng_from_seed(0), f);
        assert!(out.best_cost < 1e-5, "{}", out.best_cost);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));

        // Starting at the optimum with no spread returns it.
        let still = CemConfig {
            init_std: 1e-12,
            min_std: 1e-12,
            max_iters: 3,
            ..cfg
        };
        let out = cem_optimize(3, 1.0, &target, &still, &mut rng_from_seed(0), f);
        for (a, b) in out.best.iter().zip(&target) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn early_stop_on_collapse() {
        let cfg = CemConfig {
            particles: 20,
            max_iters: 120,
            init_std: 0.02,
            min_std: 0.01,
            early_stop: true,
            ..CemConfig::default()
        };
        let f = |s: &[f64], c: &mut [f64]| {
            for (row, c) in s.chunks_exact(2).zip(c.iter_mut()) {
                *c = row[0].powi(2) + row[1].powi(2);
            }
        };
        let out = cem_optimize(2, 1.0, &[0.0; 2], &cfg, &mut rng_from_seed(4), f);
        assert!(out.iterations < 120);
        assert_eq!(out.trace.len(), out.iterations);
    }

    #[test]
    fn plan_accounting_and_bounds() {
        let p = model(1);
        let goal = Goal::new(Finger::Left, Keypoint::new(40.0, 40.0, 1.0)).unwrap();
        let cfg = small();
        let r = cem_plan(&p, &start(), &goal, &cfg).unwrap();
        assert_eq!(r.forward_passes, 40 * 3 * 8);
        assert_eq!(r.best_actions.len(), 3);
        assert_eq!(r.trace.len(), 8);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.best_actions.iter().flat_map(|a| a.displacements).all(|v| v.abs() <= 0.05));
        // The reported cost is the cost of rolling out the reported plan.
        let states = rollout(&p, &start(), &r.best_actions).unwrap();
        let c = cost(&states, &goal, cfg.intensity_weight);
        assert!((c - r.best_cost).abs() < 1e-9 * c.max(1.0), "{c} vs {}", r.best_cost);
        assert_eq!(mpc_step(&p, &start(), &goal, &cfg).unwrap(), r.best_actions[0]);
    }

    #[test]
    fn deterministic_and_parallel_matches_serial() {
        let p = model(2);
        let goal = Goal::new(Finger::Right, Keypoint::new(10.0, 50.0, 1.0)).unwrap();
        let cfg = CemConfig {
            particles: 100,
            ..small()
        };
        let a = cem_plan(&p, &start(), &goal, &cfg).unwrap();
        let b = cem_plan(&p, &start(), &goal, &cfg).unwrap();
        let c = cem_plan(&p, &start(), &goal, &CemConfig { parallel: true, ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn paper_defaults_give_300k_forward_passes() {
        let p = model(3);
        let cfg = CemConfig::default();
        let goal = Goal::new(Finger::Left, Keypoint::new(50.0, 10.0, 1.0)).unwrap();
        let r = cem_plan(&p, &start(), &goal, &cfg).unwrap();
        assert_eq!(r.forward_passes, 300_000);
    }

    #[test]
    fn beats_the_action_grid_on_one_step() {
        let p = model(5);
        let goal = Goal::new(Finger::Left, Keypoint::new(35.0, 12.0, 1.0)).unwrap();
        let cfg = CemConfig {
            horizon: 1,
            max_iters: 40,
            ..CemConfig::default()
        };
        let r = cem_plan(&p, &start(), &goal, &cfg).unwrap();
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(8) {
            let mut a = [0.0; 8];
            let mut c = code;
            for v in &mut a {
                *v = [-0.05, 0.0, 0.05][c % 3];
                c /= 3;
            }
            let s = p.predict(&start(), &Action::new(a)).unwrap();
            best = best.min(cost(&[s], &goal, cfg.intensity_weight));
        }
        assert!(r.best_cost <= best * 1.05, "cem {} grid {best}", r.best_cost);
    }
}
