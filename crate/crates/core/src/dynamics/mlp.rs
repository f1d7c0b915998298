use std::path::Path;

use super::{clip_packed, JointLimits, PackedState, SystemState, ACTION_DIM, INPUT_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::nn::{gemm, init_normal, Checkpoint, ParamTable};
use crate::rng::Rng;
use crate::sim::Action;

/// Residual MLP: `s' = clip(s + scale * g([s, a / a_max]))` in packed
/// coordinates, with `tanh` hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DynParams {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub table: ParamTable,
    pub values: Vec<f64>,
    pub limits: JointLimits,
    pub a_max: f64,
    /// Per-dimension scale of the network output (typical packed delta).
    pub delta_scale: PackedState,
}

/// Scratch buffers for batched evaluation.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    input: Vec<f64>,
    acts: Vec<Vec<f64>>,
}

impl DynParams {
    pub fn new(hidden: usize, hidden_layers: usize, limits: JointLimits, a_max: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(hidden, hidden_layers, limits, a_max);
        let dims = p.dims();
        for (l, &(i, _)) in dims.iter().enumerate() {
            let w = p.table.get(&format!("layer{l}.weight")).expect("layer weight").range();
            // Small output layer: the untrained model starts near "no change".
            let gain = if l + 1 == dims.len() { 0.1 } else { 1.0 };
            init_normal(&mut p.values[w], gain / (i as f64).sqrt(), rng);
        }
        p
    }

    /// All weights and biases zero: the model predicts "no change".
    pub fn zeros(hidden: usize, hidden_layers: usize, limits: JointLimits, a_max: f64) -> Self {
        let mut table = ParamTable::default();
        let mut dims = Vec::new();
        let mut fan_in = INPUT_DIM;
        for _ in 0..hidden_layers {
            dims.push((fan_in, hidden));
            fan_in = hidden;
        }
        dims.push((fan_in, STATE_DIM));
        for (l, &(i, o)) in dims.iter().enumerate() {
            table.alloc(format!("layer{l}.weight"), &[o, i]);
            table.alloc(format!("layer{l}.bias"), &[o]);
        }
        Self {
            hidden,
            hidden_layers,
            values: vec![0.0; table.total()],
            table,
            limits,
            a_max,
            delta_scale: [1.0; STATE_DIM],
        }
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    fn dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = INPUT_DIM;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden));
            fan_in = self.hidden;
        }
        dims.push((fan_in, STATE_DIM));
        dims
    }

    /// Writes the network input rows `[s, a / a_max]` into `out`.
    pub(crate) fn input_rows(&self, states: &[PackedState], actions: &[[f64; ACTION_DIM]], out: &mut Vec<f64>) {
        out.clear();
        for (s, a) in states.iter().zip(actions) {
            out.extend_from_slice(s);
            out.extend(a.iter().map(|v| v / self.a_max));
        }
    }

    /// Raw network output (`b x 14`) for `b` input rows; hidden activations
    /// are kept in `ws.acts`.
    fn forward(&self, p: &[f64], input: &[f64], b: usize, acts: &mut Vec<Vec<f64>>) {
        let dims = self.dims();
        acts.resize(dims.len(), Vec::new());
        for (l, &(i, o)) in dims.iter().enumerate() {
            let (prev, rest) = acts.split_at_mut(l);
            let x: &[f64] = if l == 0 { input } else { &prev[l - 1] };
            let y = &mut rest[0];
            y.clear();
            y.resize(b * o, 0.0);
            let w = &p[self.table.entries[2 * l].range()];
            let bias = &p[self.table.entries[2 * l + 1].range()];
            gemm(b, i, o, x, false, w, true, 0.0, y);
            let last = l + 1 == dims.len();
            for row in y.chunks_exact_mut(o) {
                for (v, bv) in row.iter_mut().zip(bias) {
                    *v += bv;
                    if !last {
                        *v = v.tanh();
                    }
                }
            }
        }
    }

    /// Advances every packed state by one step in place.
    pub fn predict_packed_batch(&self, states: &mut [PackedState], actions: &[[f64; ACTION_DIM]], ws: &mut Workspace) {
        assert_eq!(states.len(), actions.len(), "one action per state");
        let b = states.len();
        let mut input = std::mem::take(&mut ws.input);
        self.input_rows(states, actions, &mut input);
        self.forward(&self.values, &input, b, &mut ws.acts);
        let out = ws.acts.last().expect("output layer");
        for (s, row) in states.iter_mut().zip(out.chunks_exact(STATE_DIM)) {
            for d in 0..STATE_DIM {
                s[d] += self.delta_scale[d] * row[d];
            }
            clip_packed(s);
        }
        ws.input = input;
    }

    pub fn predict(&self, s: &SystemState, a: &Action) -> Result<SystemState> {
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("dynamics input state {s:?}")));
        }
        if a.displacements.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dynamics input action {a:?}")));
        }
        let mut v = [s.pack(&self.limits)];
        self.predict_packed_batch(&mut v, &[a.displacements], &mut Workspace::default());
        Ok(SystemState::unpack(&v[0], &self.limits))
    }

    /// Mean squared error between network outputs and `targets` (`b x 14`,
    /// already divided by `delta_scale`); the gradient is added to `grad`.
    pub(crate) fn loss_and_grad(&self, p: &[f64], input: &[f64], targets: &[f64], grad: &mut [f64], acts: &mut Vec<Vec<f64>>) -> f64 {
        let b = targets.len() / STATE_DIM;
        self.forward(p, input, b, acts);
        let dims = self.dims();
        let out = acts.last().expect("output layer");
        let n = (b * STATE_DIM) as f64;
        let mut loss = 0.0;
        let mut dy: Vec<f64> = out
            .iter()
            .zip(targets)
            .map(|(o, t)| {
                loss += (o - t) * (o - t);
                2.0 * (o - t) / n
            })
            .collect();
        for l in (0..dims.len()).rev() {
            let (i, o) = dims[l];
            if l + 1 != dims.len() {
                for (d, a) in dy.iter_mut().zip(&acts[l]) {
                    *d *= 1.0 - a * a;
                }
            }
            let x: &[f64] = if l == 0 { input } else { &acts[l - 1] };
            let wr = self.table.entries[2 * l].range();
            let br = self.table.entries[2 * l + 1].range();
            gemm(o, b, i, &dy, true, x, false, 1.0, &mut grad[wr.clone()]);
            for row in dy.chunks_exact(o) {
                for (g, d) in grad[br.clone()].iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                let mut dx = vec![0.0; b * i];
                gemm(b, o, i, &dy, false, &p[wr], false, 0.0, &mut dx);
                dy = dx;
            }
        }
        loss / n
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint {
            table: self.table.clone(),
            values: self.values.clone(),
            ..Checkpoint::default()
        };
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        c.meta.insert("kind".into(), "dynamics".into());
        c.meta.insert("hidden".into(), self.hidden.to_string());
        c.meta.insert("hidden_layers".into(), self.hidden_layers.to_string());
        c.meta.insert("a_max".into(), format!("{:?}", self.a_max));
        c.meta.insert("joint_min".into(), fmt(&self.limits.min));
        c.meta.insert("joint_max".into(), fmt(&self.limits.max));
        c.meta.insert("delta_scale".into(), fmt(&self.delta_scale));
        c
    }

    pub fn from_checkpoint(c: Checkpoint, path: &Path) -> Result<Self> {
        if c.meta_str("kind", path)? != "dynamics" {
            return Err(Error::format(path, "not a dynamics checkpoint"));
        }
        fn floats<const N: usize>(c: &Checkpoint, key: &str, path: &Path) -> Result<[f64; N]> {
            let v: Vec<f64> = c
                .meta_str(key, path)?
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(path, format!("metadata `{key}` is not a float list")))?;
            v.try_into()
                .map_err(|_| Error::format(path, format!("metadata `{key}` needs {N} values")))
        }
        let limits = JointLimits {
            min: floats(&c, "joint_min", path)?,
            max: floats(&c, "joint_max", path)?,
        };
        let mut p = Self::zeros(c.meta_parse("hidden", path)?, c.meta_parse("hidden_layers", path)?, limits, c.meta_parse("a_max", path)?);
        c.check_table(&p.table, path)?;
        p.delta_scale = floats(&c, "delta_scale", path)?;
        p.values = c.values;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?, path)
    }
}

/// `s_{t+1} = predict(s_t, a_t)`; returns `s_1..s_T`.
pub fn rollout(params: &DynParams, s0: &SystemState, actions: &[Action]) -> Result<Vec<SystemState>> {
    let mut out = Vec::with_capacity(actions.len());
    let mut s = *s0;
    for a in actions {
        s = params.predict(&s, a)?;
        out.push(s);
    }
    Ok(out)
}

/// Relative error `|fd - g| / max(|fd|, |g|)` per parameter tensor of the
/// training loss on a random batch.
pub fn gradient_check(hidden: usize, hidden_layers: usize, seed: u64) -> Vec<(String, f64)> {
    use rand::Rng as _;
    let mut rng = crate::rng::rng_from_seed(seed);
    let limits = JointLimits::from_sim(&crate::sim::SimConfig::default());
    let mut p = DynParams::new(hidden, hidden_layers, limits, 0.05, &mut rng);
    for e in &p.table.entries.clone() {
        init_normal(&mut p.values[e.range()], 0.4, &mut rng);
    }
    let b = 5;
    let input: Vec<f64> = (0..b * INPUT_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..b * STATE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut acts = Vec::new();
    let mut g = vec![0.0; p.num_params()];
    p.loss_and_grad(&p.values, &input, &targets, &mut g, &mut acts);
    let h = 1e-6;
    let mut q = p.values.clone();
    let mut scratch = vec![0.0; p.num_params()];
    p.table
        .entries
        .iter()
        .map(|e| {
            let (mut num, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
            for i in e.range() {
                q[i] = p.values[i] + h;
                let up = p.loss_and_grad(&q, &input, &targets, &mut scratch, &mut acts);
                q[i] = p.values[i] - h;
                let down = p.loss_and_grad(&q, &input, &targets, &mut scratch, &mut acts);
                q[i] = p.values[i];
                let fd = (up - down) / (2.0 * h);
                num += (fd - g[i]).powi(2);
                na += fd * fd;
                nb += g[i] * g[i];
            }
            (e.name.clone(), num.sqrt() / na.max(nb).sqrt().max(1e-12))
        })
        .collect()
}
