use rand::seq::SliceRandom;
use rand::Rng as _;

use super::mlp::DynParams;
use super::{JointLimits, SystemState, ACTION_DIM, STATE_DIM};
use crate::config::kv_section;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam};
use crate::rng::{derive_rng, streams, Rng};
use crate::sim::Action;

/// One `(s, a, s')` sample with the episode and step it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub episode: u64,
    pub step: usize,
    pub s: SystemState,
    pub a: Action,
    pub s_next: SystemState,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.s_next.is_finite() && self.a.displacements.iter().all(|v| v.is_finite())
    }
}

/// Appends `ceil(zero_fraction * N)` tuples `(s, 0, s)` whose states are drawn
/// uniformly from the inputs.
pub fn augment_transitions(tuples: &[Transition], zero_fraction: f64, rng: &mut Rng) -> Vec<Transition> {
    assert!((0.0..1.0).contains(&zero_fraction), "zero_fraction must lie in [0, 1)");
    let mut out = tuples.to_vec();
    if tuples.is_empty() {
        return out;
    }
    // The epsilon keeps exact products such as 0.1 * 100 from rounding up.
    let extra = (zero_fraction * tuples.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    for _ in 0..extra {
        let src = &tuples[rng.gen_range(0..tuples.len())];
        out.push(Transition {
            episode: src.episode,
            step: src.step,
            s: src.s,
            a: Action::ZERO,
            s_next: src.s,
        });
    }
    out
}

pub const TRANSITION_CSV_HEADER: &str = "episode,step,\
s_xl,s_yl,s_il,s_xr,s_yr,s_ir,s_j1,s_j2,s_j3,s_j4,s_j5,s_j6,s_j7,s_j8,\
a_1,a_2,a_3,a_4,a_5,a_6,a_7,a_8,\
n_xl,n_yl,n_il,n_xr,n_yr,n_ir,n_j1,n_j2,n_j3,n_j4,n_j5,n_j6,n_j7,n_j8";

fn state_fields(s: &SystemState, out: &mut Vec<String>) {
    for k in [s.k_left, s.k_right] {
        out.extend([k.x, k.y, k.i].iter().map(|v| format!("{v:?}")));
    }
    out.extend(s.joints.iter().map(|v| format!("{v:?}")));
}

/// States in pixels / radians, actions in radians.
pub fn transitions_to_csv(tuples: &[Transition]) -> String {
    let mut s = String::from(TRANSITION_CSV_HEADER);
    s.push('\n');
    for t in tuples {
        let mut f = vec![t.episode.to_string(), t.step.to_string()];
        state_fields(&t.s, &mut f);
        f.extend(t.a.displacements.iter().map(|v| format!("{v:?}")));
        state_fields(&t.s_next, &mut f);
        s += &f.join(",");
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynTrainConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub zero_fraction: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

kv_section!(DynTrainConfig {
    hidden,
    hidden_layers,
    learning_rate,
    batch_size,
    epochs,
    zero_fraction,
    grad_clip,
    seed,
});

impl Default for DynTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            hidden_layers: 3,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 150,
            zero_fraction: 0.2,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl DynTrainConfig {
    pub(crate) fn check(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("dynamics hidden width and batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("dynamics learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.zero_fraction) {
            return Err(Error::Config("zero_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DynLossLog {
    /// `(epoch, train_mse, val_mse)` in normalised delta units; epoch 0 is
    /// the untrained model.
    pub epochs: Vec<(usize, f64, f64)>,
}

impl DynLossLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for (e, t, v) in &self.epochs {
            s += &format!("{e},{t:?},{v:?}\n");
        }
        s
    }
}

struct Batches {
    input: Vec<f64>,
    target: Vec<f64>,
}

fn encode(params: &DynParams, tuples: &[Transition]) -> Batches {
    let states: Vec<_> = tuples.iter().map(|t| t.s.pack(&params.limits)).collect();
    let actions: Vec<[f64; ACTION_DIM]> = tuples.iter().map(|t| t.a.displacements).collect();
    let mut input = Vec::new();
    params.input_rows(&states, &actions, &mut input);
    let mut target = Vec::with_capacity(tuples.len() * STATE_DIM);
    for (t, s) in tuples.iter().zip(&states) {
        let n = t.s_next.pack(&params.limits);
        target.extend((0..STATE_DIM).map(|d| (n[d] - s[d]) / params.delta_scale[d]));
    }
    Batches { input, target }
}

fn mean_loss(params: &DynParams, data: &Batches, acts: &mut Vec<Vec<f64>>) -> f64 {
    if data.target.is_empty() {
        return 0.0;
    }
    let mut scratch = vec![0.0; params.num_params()];
    params.loss_and_grad(&params.values, &data.input, &data.target, &mut scratch, acts)
}

/// Root mean square of each packed delta, floored so no output is scaled to
/// zero.
fn delta_scale(tuples: &[Transition], limits: &JointLimits) -> [f64; STATE_DIM] {
    let n = tuples.len().max(1) as f64;
    let mut sq = [0.0; STATE_DIM];
    for t in tuples {
        let (a, b) = (t.s.pack(limits), t.s_next.pack(limits));
        for d in 0..STATE_DIM {
            sq[d] += (b[d] - a[d]).powi(2) / n;
        }
    }
    sq.map(|v| v.sqrt().max(1e-3))
}

/// Fits the residual MLP to `train` (already augmented) by minibatch Adam on
/// the mean squared normalised delta error.
pub fn train_dynamics(
    train: &[Transition],
    val: &[Transition],
    limits: JointLimits,
    a_max: f64,
    config: &DynTrainConfig,
) -> Result<(DynParams, DynLossLog)> {
    config.check()?;
    if train.is_empty() {
        return Err(Error::Config("dynamics training set is empty".into()));
    }
    if let Some(t) = train.iter().chain(val).find(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!("transition episode {} step {}", t.episode, t.step)));
    }
    let mut rng = derive_rng(config.seed, streams::DYN_INIT, 0);
    let mut params = DynParams::new(config.hidden, config.hidden_layers, limits, a_max, &mut rng);
    params.delta_scale = delta_scale(train, &limits);
    let train_data = encode(&params, train);
    let val_data = encode(&params, val);
    let mut acts = Vec::new();
    let mut log = DynLossLog::default();
    log.epochs.push((0, mean_loss(&params, &train_data, &mut acts), mean_loss(&params, &val_data, &mut acts)));

    let n = params.num_params();
    let mut adam = Adam::new(n, config.learning_rate);
    let mut grad = vec![0.0; n];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let (mut bin, mut btg) = (Vec::new(), Vec::new());
    let total_steps = (config.epochs * train.len().div_ceil(config.batch_size)).max(1);
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut derive_rng(config.seed, streams::DYN_SHUFFLE, epoch as u64));
        let mut sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            bin.clear();
            btg.clear();
            for &i in batch {
                bin.extend_from_slice(&train_data.input[i * super::INPUT_DIM..(i + 1) * super::INPUT_DIM]);
                btg.extend_from_slice(&train_data.target[i * STATE_DIM..(i + 1) * STATE_DIM]);
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            let l = params.loss_and_grad(&params.values, &bin, &btg, &mut grad, &mut acts);
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("dynamics loss at epoch {epoch}: {l}")));
            }
            sum += l * batch.len() as f64;
            clip_grad_norm(&mut grad, config.grad_clip);
            let frac = step as f64 / total_steps as f64;
            adam.lr = config.learning_rate * (0.05 + 0.475 * (1.0 + (std::f64::consts::PI * frac).cos()));
            adam.step(&mut params.values, &grad);
            step += 1;
        }
        let val_loss = mean_loss(&params, &val_data, &mut acts);
        log.epochs.push((epoch, sum / train.len() as f64, val_loss));
    }
    Ok((params, log))
}
