//! End-to-end acceptance run. Trains the full-size pipeline twice through the
//! binary with the default config, then checks every criterion on the first
//! run's artefacts. Prints one `[PASS]` / `[FAIL]` line per criterion.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng as _;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tactile_mpc::config::LabConfig;
use tactile_mpc::control::{cem_plan, cost, sample_goal, CemConfig, Goal, MIN_GOAL_DISTANCE};
use tactile_mpc::dynamics::{DynParams, SystemState};
use tactile_mpc::harness::{load_dataset, Dataset};
use tactile_mpc::nn::{active_index, AeArch, NetParams};
use tactile_mpc::rng::rng_from_seed;
use tactile_mpc::sim::{ground_truth_keypoint, Action, Finger, SimConfig};
use tactile_mpc::Keypoint;

const SEED: &str = "0";
const W_I: f64 = 32.0;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(out: &mut Vec<Outcome>, name: &'static str, pass: bool, detail: String) {
    // Written past the test harness capture so the lines always show.
    let _ = writeln!(std::io::stderr(), "[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { name, pass, detail });
}

fn bin(args: &[&str], cwd: &Path) {
    let o = Command::new(env!("CARGO_BIN_EXE_tactile-mpc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs");
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

/// collect, train-ae, train-dyn, eval-mpc with the default config into `run`.
fn pipeline(root: &Path, run: &str) {
    let p = |s: &str| format!("{run}/{s}");
    bin(&["collect", "--seed", SEED, "--out", &p("data")], root);
    bin(&["train-ae", "--seed", SEED, "--data", &p("data"), "--out", &p("models")], root);
    bin(&["train-dyn", "--seed", SEED, "--data", &p("data"), "--ae", &p("models/ae.ckpt"), "--out", &p("models")], root);
    bin(
        &["eval-mpc", "--seed", SEED, "--ae", &p("models/ae.ckpt"), "--dyn", &p("models/dyn.ckpt"), "--out", &p("eval")],
        root,
    );
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn sorted_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c1_gradients(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let arch = AeArch {
        frame_size: 8,
        keypoints: 3,
        enc_channels: [2, 3],
        dec_channels: [3, 2],
        blob_sigma: 0.8,
        softmax_tau: 0.7,
    };
    let ae = tactile_mpc::nn::gradient_check(arch, 1);
    let dynamics = tactile_mpc::dynamics::gradient_check(8, 3, 2);
    let worst = ae.iter().chain(&dynamics).map(|(_, e)| *e).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    report(
        out,
        "C1 gradient correctness",
        worst < 1e-4 && secs < 60.0,
        format!("max relative error {worst:.2e} over {} tensors, {secs:.1} s", ae.len() + dynamics.len()),
    );
}

struct Held {
    finger_index: Vec<usize>,
    errors: Vec<f64>,
    intensity: Vec<f64>,
    depth: Vec<f64>,
    states: Vec<SystemState>,
}

fn held_val(ae: &NetParams, ds: &Dataset, sim: &SimConfig) -> Held {
    let mut h = Held {
        finger_index: Vec::new(),
        errors: Vec::new(),
        intensity: Vec::new(),
        depth: Vec::new(),
        states: Vec::new(),
    };
    for ep in &ds.val {
        let mut per_finger = [Vec::new(), Vec::new()];
        for f in Finger::BOTH {
            for (t, frame) in ep.frames(f).iter().enumerate() {
                let ks = ae.encode(&frame.unpack()).unwrap();
                let idx = active_index(&ks);
                per_finger[f.index()].push(ks[idx]);
                let m = &ep.marbles[t];
                if m.held {
                    let truth = ground_truth_keypoint(m, f, sim);
                    h.errors.push(ks[idx].xy_dist(&truth));
                    h.finger_index.push(idx);
                    h.intensity.push(ks[idx].i);
                    h.depth.push(m.depth);
                }
            }
        }
        for t in 0..ep.num_frames() {
            if ep.marbles[t].held {
                h.states.push(tactile_mpc::dynamics::build_state(
                    per_finger[0][t],
                    per_finger[1][t],
                    ep.joints[t].angles,
                ));
            }
        }
    }
    h
}

fn c2_c3_tracking(out: &mut Vec<Outcome>, h: &Held, secs: f64) {
    let med = sorted_median(h.errors.clone());
    let mut counts = std::collections::BTreeMap::new();
    for &i in &h.finger_index {
        *counts.entry(i).or_insert(0usize) += 1;
    }
    let (modal, n) = counts.iter().max_by_key(|(_, &n)| n).map(|(&i, &n)| (i, n)).unwrap();
    let frac = n as f64 / h.finger_index.len() as f64;
    report(
        out,
        "C2 keypoint tracking",
        med <= 3.0 && frac >= 0.95 && secs < 1800.0,
        format!(
            "median error {med:.2} px over {} held frames, index {modal} active on {:.1}%, pipeline {secs:.0} s",
            h.errors.len(),
            100.0 * frac
        ),
    );
    let r = pearson(&h.intensity, &h.depth);
    report(out, "C3 intensity-depth", r > 0.8, format!("Pearson r = {r:.3}"));
}

fn c4_zero_action(out: &mut Vec<Outcome>, dynamics: &DynParams, h: &Held) {
    let mut total = 0.0;
    for s in &h.states {
        let p = dynamics.predict(s, &Action::ZERO).unwrap();
        let mut sq = 0.0;
        for f in Finger::BOTH {
            let (a, b) = (p.keypoint(f), s.keypoint(f));
            sq += (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (W_I * (a.i - b.i)).powi(2);
        }
        total += sq.sqrt();
    }
    let drift = total / h.states.len() as f64;
    report(
        out,
        "C4 zero-action fixed point",
        drift < 0.5,
        format!("mean drift {drift:.3} px-equivalent over {} validation states", h.states.len()),
    );
}

fn c5_cem_oracle(out: &mut Vec<Outcome>, dynamics: &DynParams, h: &Held) {
    let t = Instant::now();
    let a_max = dynamics.a_max;
    let cfg = CemConfig {
        horizon: 1,
        ..CemConfig::default()
    };
    let mut rng = rng_from_seed(55);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let s0 = h.states[rng.gen_range(0..h.states.len())];
        let finger = if trial % 2 == 0 { Finger::Left } else { Finger::Right };
        let goal = sample_goal(finger, &s0.keypoint(finger), &mut rng);
        let plan = cem_plan(dynamics, &s0, &goal, &CemConfig { seed: trial, ..cfg.clone() }).unwrap();
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(8) {
            let mut a = [0.0; 8];
            let mut c = code;
            for v in &mut a {
                *v = [-a_max, 0.0, a_max][c % 3];
                c /= 3;
            }
            let s1 = dynamics.predict(&s0, &Action::new(a)).unwrap();
            best = best.min(cost(&[s1], &goal, cfg.intensity_weight));
        }
        worst = worst.max(plan.best_cost / best - 1.0);
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        out,
        "C5 CEM optimality oracle",
        worst <= 0.05 && secs < 300.0,
        format!("worst CEM/grid excess {:+.2}% over 20 starts, {secs:.1} s", 100.0 * worst),
    );
}

fn c6_accounting(out: &mut Vec<Outcome>, dynamics: &DynParams, h: &Held) {
    let s0 = h.states[0];
    let goal = sample_goal(Finger::Left, &s0.keypoint(Finger::Left), &mut rng_from_seed(6));
    let plan = cem_plan(dynamics, &s0, &goal, &CemConfig::default()).unwrap();
    report(
        out,
        "C6 planner accounting",
        plan.forward_passes == 300_000,
        format!("{} forward passes per MPC step", plan.forward_passes),
    );
}

fn c7_manipulation(out: &mut Vec<Outcome>, summary: &serde_json::Value) {
    let f = |c: &str, k: &str| summary[c][k].as_f64().unwrap();
    let (m0, m20, p20) = (f("mpc", "initial_median_px"), f("mpc", "final_median_px"), f("p", "final_median_px"));
    let n = summary["n_trials"].as_u64().unwrap();
    report(
        out,
        "C7 manipulation",
        n == 50 && m20 <= 0.5 * m0 && m20 <= p20,
        format!(
            "{n} trials; MPC median {m0:.1} -> {m20:.1} px ({:.0}%), P final {p20:.1} px; drop rate MPC {:.0}%, P {:.0}%",
            100.0 * m20 / m0,
            100.0 * f("mpc", "drop_rate"),
            100.0 * f("p", "drop_rate")
        ),
    );
}

fn c8_timing(out: &mut Vec<Outcome>, root: &Path) {
    bin(
        &["bench", "--ae", "r1/models/ae.ckpt", "--dyn", "r1/models/dyn.ckpt", "--out", "r1/bench"],
        root,
    );
    let b = json(&root.join("r1/bench/bench.json"));
    let speedup = b["speedup"].as_f64().unwrap();
    let params = b["total_params"].as_u64().unwrap();
    report(
        out,
        "C8 timing",
        speedup >= 10.0 && params < 4_000_000,
        format!(
            "keypoint step {:.2e} s, pixel step {:.2e} s, speedup {speedup:.0}x; {params} parameters",
            b["keypoint_mpc_step_s"].as_f64().unwrap(),
            b["pixel_mpc_step_s"].as_f64().unwrap()
        ),
    );
}

fn c9_reproducibility(out: &mut Vec<Outcome>, root: &Path) {
    pipeline(root, "r2");
    let mut diffs = Vec::new();
    for sub in ["data", "models", "eval"] {
        let (a, b) = (files(&root.join("r1").join(sub)), files(&root.join("r2").join(sub)));
        if a.len() != b.len() {
            diffs.push(format!("{sub}: {} vs {} files", a.len(), b.len()));
        }
        for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
            if pa != pb || ba != bb {
                diffs.push(format!("{sub}/{}", pa.display()));
            }
        }
    }
    let n = files(&root.join("r1")).len();
    report(
        out,
        "C9 reproducibility",
        diffs.is_empty(),
        if diffs.is_empty() {
            format!("collect, train-ae, train-dyn, eval-mpc byte-identical across two runs ({n} files)")
        } else {
            format!("differing: {}", diffs.join(", "))
        },
    );
}

fn c10_goals(out: &mut Vec<Outcome>) {
    let mut rng = rng_from_seed(10);
    let mut ok = true;
    let bins = 8usize;
    let mut counts = vec![0usize; bins * bins];
    // With the current keypoint in a corner the 16 px exclusion disc only
    // clips the first cell, which is left out of the uniformity test.
    let cur = Keypoint::new(0.0, 0.0, 0.5);
    for k in 0..10_000 {
        let finger = if k % 2 == 0 { Finger::Left } else { Finger::Right };
        let g: Goal = sample_goal(finger, &cur, &mut rng);
        ok &= g.target.xy_dist(&cur) >= MIN_GOAL_DISTANCE && g.target.i == 1.0 && g.finger == finger;
        let cell = |v: f64| (((v - 8.0) / 47.0 * bins as f64) as usize).min(bins - 1);
        counts[cell(g.target.y) * bins + cell(g.target.x)] += 1;
    }
    let mut near_ok = true;
    for k in 0..10_000u64 {
        let cur = Keypoint::new(rng.gen_range(0.0..63.0), rng.gen_range(0.0..63.0), 0.3);
        let g = sample_goal(Finger::Left, &cur, &mut rng_from_seed(k));
        near_ok &= g.target.xy_dist(&cur) >= MIN_GOAL_DISTANCE && g.target.i == 1.0;
    }
    let kept = &counts[1..];
    let expected = kept.iter().sum::<usize>() as f64 / kept.len() as f64;
    let chi2: f64 = kept.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((kept.len() - 1) as f64).unwrap().cdf(chi2);
    report(
        out,
        "C10 goal sampling",
        ok && near_ok && p > 1e-3,
        format!("2 x 10^4 goals satisfy distance >= 16 px and i = 1; uniformity chi2 p = {p:.3}"),
    );
}

/// Not a numbered criterion. With the goal at the current keypoint, the
/// plan's mean per-step cost stays within a pixel.
fn satisfied_goal(dynamics: &DynParams, h: &Held) {
    let planner = CemConfig {
        particles: 100,
        horizon: 5,
        max_iters: 20,
        ..CemConfig::default()
    };
    let mut worst = 0.0f64;
    for (k, s) in h.states.iter().step_by(97).take(10).enumerate() {
        let goal = Goal::new(Finger::Left, s.keypoint(Finger::Left)).unwrap();
        let plan = cem_plan(dynamics, s, &goal, &CemConfig { seed: k as u64, ..planner.clone() }).unwrap();
        worst = worst.max(plan.best_cost / planner.horizon as f64);
    }
    let _ = writeln!(std::io::stderr(), "satisfied goal: worst mean planned cost {worst:.3} px over 10 states");
    assert!(worst < 1.0, "satisfied goal drifts: {worst:.3} px");
}

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut out = Vec::new();

    c1_gradients(&mut out);
    c10_goals(&mut out);

    let t = Instant::now();
    pipeline(root, "r1");
    let pipeline_secs = t.elapsed().as_secs_f64();
    let cfg = LabConfig::default();
    let ds = load_dataset(&root.join("r1/data")).unwrap();
    let ae = NetParams::load(&root.join("r1/models/ae.ckpt")).unwrap();
    let dynamics = DynParams::load(&root.join("r1/models/dyn.ckpt")).unwrap();
    let held = held_val(&ae, &ds, &cfg.sim);

    c2_c3_tracking(&mut out, &held, pipeline_secs);
    c4_zero_action(&mut out, &dynamics, &held);
    c5_cem_oracle(&mut out, &dynamics, &held);
    c6_accounting(&mut out, &dynamics, &held);
    c7_manipulation(&mut out, &json(&root.join("r1/eval/summary.json")));
    c8_timing(&mut out, root);
    c9_reproducibility(&mut out, root);

    satisfied_goal(&dynamics, &held);

    out.sort_by_key(|o| o.name[1..].split_whitespace().next().unwrap().parse::<u32>().unwrap());
    let mut summary = String::from("\nacceptance summary\n");
    for o in &out {
        summary += &format!("  [{}] {}: {}\n", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let _ = std::io::stderr().write_all(summary.as_bytes());
    let failed: Vec<&str> = out.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
