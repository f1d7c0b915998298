//! Hand-tuning of the P-controller gains.
//!
//! 1. Probe the noiseless simulator: from a set of reset states, nudge each
//!    joint by +-h and record how each finger's marble keypoint (x, y, i)
//!    moves. The averaged central differences form a 3x8 Jacobian per finger.
//! 2. Hand mapping: for x, y and i in turn, pick the joint that moves it the
//!    most (and is not taken yet) and give it gain 1 / J. Every other entry
//!    is 0. With `--pinv` the damped pseudo-inverse of the Jacobian is used
//!    instead: a dense, system-identified gain.
//! 3. Sweep a scalar gain on tuning trials (their own seed, not the
//!    evaluation seed) with the trained encoder in the loop, and keep the
//!    scale with the lowest median final distance. A dropped trial scores as
//!    a failure, not as the distance it had when the marble fell.
//!
//! Usage: cargo run --release --example tune_p_gains -- [models/ae.ckpt] [--pinv]
//! Prints `p.left` / `p.right` lines for configs/p_gains.txt.

use std::path::PathBuf;

use tactile_mpc::control::{run_episode_p, PGain, PGainSet};
use tactile_mpc::harness::median;
use tactile_mpc::nn::NetParams;
use tactile_mpc::rng::derive_rng;
use tactile_mpc::sim::{ground_truth_keypoint, reset, step, Action, Finger, SimConfig, NUM_JOINTS};

const PROBE_STATES: u64 = 50;
const TUNE_SEED: u64 = 7_000;
const TUNE_TRIALS: u64 = 20;
const DAMPING: f64 = 1e-3;

fn jacobian(sim: &SimConfig, finger: Finger) -> [[f64; NUM_JOINTS]; 3] {
    let quiet = SimConfig {
        slip_noise_std: 0.0,
        ..sim.clone()
    };
    let h = sim.a_max / 2.0;
    let mut jac = [[0.0; NUM_JOINTS]; 3];
    let mut n = [0usize; NUM_JOINTS];
    for k in 0..PROBE_STATES {
        let (joints, marble) = reset(sim, &mut derive_rng(TUNE_SEED, 1, k));
        for j in 0..NUM_JOINTS {
            let probe = |sign: f64| {
                let mut a = [0.0; NUM_JOINTS];
                a[j] = sign * h;
                let (_, m) = step(&joints, &marble, &Action::new(a), &quiet, &mut derive_rng(0, 0, 0));
                m.held.then(|| ground_truth_keypoint(&m, finger, &quiet))
            };
            if let (Some(p), Some(m)) = (probe(1.0), probe(-1.0)) {
                let d = [p.x - m.x, p.y - m.y, p.i - m.i];
                for c in 0..3 {
                    jac[c][j] += d[c] / (2.0 * h);
                }
                n[j] += 1;
            }
        }
    }
    for row in &mut jac {
        for (v, &cnt) in row.iter_mut().zip(&n) {
            *v /= cnt.max(1) as f64;
        }
    }
    jac
}

fn inverse3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r: usize, s: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (s1, s2) = ((s + 1) % 3, (s + 2) % 3);
        m[r1][s1] * m[r2][s2] - m[r1][s2] * m[r2][s1]
    };
    let det: f64 = (0..3).map(|s| m[0][s] * c(0, s)).sum();
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for s in 0..3 {
            inv[s][r] = c(r, s) / det;
        }
    }
    inv
}

/// `J^T (J J^T + lambda I)^-1`, stored row-major as rows (dx, dy, di).
fn pseudo_inverse_gain(jac: &[[f64; NUM_JOINTS]; 3]) -> PGain {
    let mut jjt = [[0.0; 3]; 3];
    for r in 0..3 {
        for s in 0..3 {
            jjt[r][s] = (0..NUM_JOINTS).map(|j| jac[r][j] * jac[s][j]).sum::<f64>();
        }
        jjt[r][r] += DAMPING;
    }
    let inv = inverse3(jjt);
    let mut gain = [0.0; 3 * NUM_JOINTS];
    for c in 0..3 {
        for j in 0..NUM_JOINTS {
            gain[c * NUM_JOINTS + j] = (0..3).map(|r| jac[r][j] * inv[r][c]).sum();
        }
    }
    gain
}

fn hand_gain(jac: &[[f64; NUM_JOINTS]; 3]) -> PGain {
    let mut gain = [0.0; 3 * NUM_JOINTS];
    let mut taken = [false; NUM_JOINTS];
    for c in 0..3 {
        let j = (0..NUM_JOINTS)
            .filter(|&j| !taken[j])
            .max_by(|&a, &b| jac[c][a].abs().total_cmp(&jac[c][b].abs()))
            .expect("a free joint");
        taken[j] = true;
        gain[c * NUM_JOINTS + j] = 1.0 / jac[c][j];
    }
    gain
}

fn scaled(g: &PGain, k: f64) -> PGain {
    g.map(|v| v * k)
}

fn fmt(g: &PGain) -> String {
    g.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let pinv = args.iter().any(|a| a == "--pinv");
    let ae_path = args
        .iter()
        .find(|a| !a.starts_with("--"))
        .map(PathBuf::from)
        .unwrap_or_else(|| "models/ae.ckpt".into());
    let ae = NetParams::load(&ae_path).expect("autoencoder checkpoint");
    let sim = SimConfig::default();
    let gain = |f| {
        let jac = jacobian(&sim, f);
        for (c, row) in ["x", "y", "i"].iter().zip(&jac) {
            println!("# {} d{c}/dq: {}", f.as_str(), row.map(|v| format!("{v:8.2}")).join(" "));
        }
        if pinv {
            pseudo_inverse_gain(&jac)
        } else {
            hand_gain(&jac)
        }
    };
    let base = [gain(Finger::Left), gain(Finger::Right)];
    let mut best = (f64::INFINITY, 0.0);
    for k in [0.005, 0.01, 0.02, 0.03, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0] {
        let gains = PGainSet {
            left: scaled(&base[0], k),
            right: scaled(&base[1], k),
        };
        let finals: Vec<f64> = (0..TUNE_TRIALS)
            .map(|t| {
                let log = run_episode_p(&sim, &ae, &gains, t, TUNE_SEED, 20).expect("trial");
                if log.drop_step.is_some() {
                    f64::INFINITY
                } else {
                    log.final_distance()
                }
            })
            .collect();
        let m = median(&finals);
        let drops = finals.iter().filter(|d| d.is_infinite()).count();
        println!("# scale {k:>5}: median final distance {m:.2} px, {drops}/{TUNE_TRIALS} dropped");
        if m < best.0 {
            best = (m, k);
        }
    }
    println!("# scale {} (median final distance {:.2} px on tuning trials)", best.1, best.0);
    println!("p.left = {}", fmt(&scaled(&base[0], best.1)));
    println!("p.right = {}", fmt(&scaled(&base[1], best.1)));
}
