//! The steps behind each CLI subcommand. Every step reads its inputs from
//! disk, writes its outputs under `out`, and is deterministic given the
//! config and seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bench::{bench_timing, BenchResult};
use super::collect::run_collection;
use super::dataset::{build_transition_dataset, encode_frames, held_states, tracking_report, TrackingReport};
use super::eval::{eval_manipulation, write_eval, EvalResult};
use super::store::{load_dataset, DatasetManifest};
use crate::config::LabConfig;
use crate::control::sample_goal;
use crate::dynamics::{
    augment_transitions, build_state, train_dynamics, transitions_to_csv, DynParams, JointLimits, SystemState, Transition,
};
use crate::error::{Error, Result};
use crate::frame::PackedFrame;
use crate::nn::{active_keypoint, train_autoencoder, NetParams};
use crate::rng::{derive_rng, streams};
use crate::sim::{ground_truth_keypoint, render, reset, Action, Finger};

pub const AE_CHECKPOINT: &str = "ae.ckpt";
pub const DYN_CHECKPOINT: &str = "dyn.ckpt";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value).expect("serialisable") + "\n"))
}

pub fn collect(config: &LabConfig, seed: Option<u64>, out: &Path) -> Result<DatasetManifest> {
    let mut c = config.collect.clone();
    c.seed = seed.unwrap_or(c.seed);
    run_collection(&config.sim, &c, out)
}

fn all_frames(episodes: &[crate::sim::Episode]) -> Vec<PackedFrame> {
    episodes
        .iter()
        .flat_map(|e| Finger::BOTH.into_iter().flat_map(move |f| e.frames(f).iter().cloned()))
        .collect()
}

/// Trains the autoencoder on the training split; writes the checkpoint, the
/// loss log and a tracking report on the validation split.
pub fn train_ae(config: &LabConfig, seed: Option<u64>, data: &Path, out: &Path) -> Result<(NetParams, TrackingReport)> {
    let ds = load_dataset(data)?;
    let mut c = config.ae.clone();
    c.seed = seed.unwrap_or(c.seed);
    let (net, log) = train_autoencoder(&all_frames(&ds.train), &all_frames(&ds.val), &c)?;
    let report = tracking_report(&net, &ds.val, &config.sim, 200)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    net.save(&out.join(AE_CHECKPOINT))?;
    write(&out.join("ae_loss.csv"), &log.to_csv())?;
    write_json(&out.join("ae_report.json"), &report)?;
    Ok((net, report))
}

/// Quality of a trained dynamics model on validation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynReport {
    pub train_tuples: usize,
    pub zero_action_tuples: usize,
    pub val_tuples: usize,
    /// RMS one-step `(x, y)` error of both fingers' keypoints, px.
    pub one_step_rmse_px: f64,
    /// RMS one-step error of the "no change" predictor, for reference.
    pub persistence_rmse_px: f64,
    /// Mean `||f(s, 0) - s||` over both fingers' `(x, y, w * i)`.
    pub zero_action_drift: f64,
    pub intensity_weight: f64,
}

pub fn dynamics_report(
    params: &DynParams,
    val: &[Transition],
    val_states: &[SystemState],
    intensity_weight: f64,
) -> Result<(f64, f64, f64)> {
    let mut se = 0.0;
    let mut se0 = 0.0;
    for t in val {
        let p = params.predict(&t.s, &t.a)?;
        for f in Finger::BOTH {
            let (a, b, c) = (p.keypoint(f), t.s_next.keypoint(f), t.s.keypoint(f));
            se += (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
            se0 += (c.x - b.x).powi(2) + (c.y - b.y).powi(2);
        }
    }
    let n = (2 * val.len()).max(1) as f64;
    let mut drift = 0.0;
    for s in val_states {
        drift += params.predict(s, &Action::ZERO)?.keypoint_distance(s, intensity_weight);
    }
    Ok(((se / n).sqrt(), (se0 / n).sqrt(), drift / val_states.len().max(1) as f64))
}

pub fn train_dyn(
    config: &LabConfig,
    seed: Option<u64>,
    data: &Path,
    ae_path: &Path,
    out: &Path,
) -> Result<(DynParams, DynReport)> {
    let ds = load_dataset(data)?;
    let ae = NetParams::load(ae_path)?;
    let mut c = config.dynamics.clone();
    c.seed = seed.unwrap_or(c.seed);
    let raw = build_transition_dataset(&ae, &ds.train)?;
    let train = augment_transitions(&raw, c.zero_fraction, &mut derive_rng(c.seed, streams::ZERO_ACTION, 0));
    let val = build_transition_dataset(&ae, &ds.val)?;
    let limits = JointLimits::from_sim(&config.sim);
    let (params, log) = train_dynamics(&train, &val, limits, config.sim.a_max, &c)?;
    let w_i = config.cem.intensity_weight;
    let (rmse, persist, drift) = dynamics_report(&params, &val, &held_states(&ae, &ds.val)?, w_i)?;
    let report = DynReport {
        train_tuples: raw.len(),
        zero_action_tuples: train.len() - raw.len(),
        val_tuples: val.len(),
        one_step_rmse_px: rmse,
        persistence_rmse_px: persist,
        zero_action_drift: drift,
        intensity_weight: w_i,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    params.save(&out.join(DYN_CHECKPOINT))?;
    write(&out.join("dyn_loss.csv"), &log.to_csv())?;
    write(&out.join("transitions.csv"), &transitions_to_csv(&train))?;
    write_json(&out.join("dyn_report.json"), &report)?;
    Ok((params, report))
}

pub const KEYPOINT_CSV_HEADER: &str = "episode,step,finger,active,x,y,i,true_x,true_y,true_i";

/// Writes the active keypoint of every frame, next to the simulator truth.
pub fn encode(config: &LabConfig, data: &Path, ae_path: &Path, out: &Path) -> Result<usize> {
    let ds = load_dataset(data)?;
    let ae = NetParams::load(ae_path)?;
    let mut s = format!("{KEYPOINT_CSV_HEADER}\n");
    let mut rows = 0;
    let mut episodes: Vec<_> = ds.train.iter().chain(&ds.val).collect();
    episodes.sort_by_key(|e| e.id);
    for ep in episodes {
        for f in Finger::BOTH {
            for (t, ks) in encode_frames(&ae, ep.frames(f))?.iter().enumerate() {
                let idx = crate::nn::active_index(ks);
                let k = ks[idx];
                let g = ground_truth_keypoint(&ep.marbles[t], f, &config.sim);
                s += &format!(
                    "{},{t},{},{idx},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                    ep.id,
                    f.as_str(),
                    k.x,
                    k.y,
                    k.i,
                    g.x,
                    g.y,
                    g.i
                );
                rows += 1;
            }
        }
    }
    write(&out.join("keypoints.csv"), &s)?;
    Ok(rows)
}

pub fn eval(
    config: &LabConfig,
    seed: Option<u64>,
    ae_path: &Path,
    dyn_path: &Path,
    out: &Path,
) -> Result<EvalResult> {
    let ae = NetParams::load(ae_path)?;
    let dynamics = DynParams::load(dyn_path)?;
    let mut e = config.eval.clone();
    e.seed = seed.unwrap_or(e.seed);
    let planner = e.planner(&config.cem);
    let result = eval_manipulation(&config.sim, &ae, &dynamics, &planner, &config.p, &e)?;
    write_eval(&result, out)?;
    Ok(result)
}

pub fn bench(
    config: &LabConfig,
    seed: Option<u64>,
    ae_path: &Path,
    dyn_path: &Path,
    out: &Path,
) -> Result<BenchResult> {
    let ae = NetParams::load(ae_path)?;
    let dynamics = DynParams::load(dyn_path)?;
    let mut b = config.bench.clone();
    b.seed = seed.unwrap_or(b.seed);
    // A representative start: one reset, encoded, with a sampled goal.
    let mut rng = derive_rng(b.seed, streams::BENCH, 1);
    let (joints, marble) = reset(&config.sim, &mut rng);
    let mut sets = [Vec::new(), Vec::new()];
    for f in Finger::BOTH {
        let frame = render(&marble, f, &config.sim, &mut rng).pack().unpack();
        sets[f.index()] = ae.encode(&frame)?;
    }
    let s0 = build_state(active_keypoint(&sets[0]), active_keypoint(&sets[1]), joints.angles);
    let goal = sample_goal(Finger::Left, &s0.k_left, &mut rng);
    let result = bench_timing(&ae, &dynamics, &config.cem, &b, &s0, &sets, &goal)?;
    write_json(&out.join("bench.json"), &result)?;
    Ok(result)
}
