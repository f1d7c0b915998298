use serde::{Deserialize, Serialize};

use crate::dynamics::{build_state, SystemState, Transition};
use crate::error::Result;
use crate::frame::{Keypoint, PackedFrame};
use crate::nn::{active_index, NetParams};
use crate::sim::{ground_truth_keypoint, Episode, Finger, SimConfig};

/// All keypoints of every frame of one finger.
pub fn encode_frames(ae: &NetParams, frames: &[PackedFrame]) -> Result<Vec<Vec<Keypoint>>> {
    frames.iter().map(|f| ae.encode(&f.unpack())).collect()
}

/// System state of every frame, built from the active keypoints.
pub fn encode_episode(ae: &NetParams, ep: &Episode) -> Result<Vec<SystemState>> {
    let left = encode_frames(ae, &ep.frames_left)?;
    let right = encode_frames(ae, &ep.frames_right)?;
    Ok((0..ep.num_frames())
        .map(|t| {
            build_state(
                left[t][active_index(&left[t])],
                right[t][active_index(&right[t])],
                ep.joints[t].angles,
            )
        })
        .collect())
}

/// Consecutive `(s, a, s')` tuples. A tuple is kept only when the marble is
/// held in both of its frames, so nothing crosses a drop.
pub fn build_transition_dataset(ae: &NetParams, episodes: &[Episode]) -> Result<Vec<Transition>> {
    let mut out = Vec::new();
    for ep in episodes {
        let states = encode_episode(ae, ep)?;
        for t in 0..ep.actions.len() {
            if ep.marbles[t].held && ep.marbles[t + 1].held {
                out.push(Transition {
                    episode: ep.id,
                    step: t,
                    s: states[t],
                    a: ep.actions[t],
                    s_next: states[t + 1],
                });
            }
        }
    }
    Ok(out)
}

/// How well the active keypoint follows the simulated marble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub frames: usize,
    /// Median `(x, y)` distance between active keypoint and marble pixel.
    pub median_error_px: f64,
    /// Index that is most often the active one.
    pub modal_index: usize,
    /// Fraction of frames on which the modal index is the active one.
    pub active_consistency: f64,
    /// Pearson correlation between active intensity and squeeze depth.
    pub intensity_depth_corr: f64,
    pub reconstruction_rmse: f64,
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolated quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if v[lo] == v[hi] {
        // Also keeps infinite samples from turning into NaN.
        return v[lo];
    }
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Evaluated on every frame in which the marble is held. Reconstruction error
/// uses at most `recon_frames` frames.
pub fn tracking_report(ae: &NetParams, episodes: &[Episode], sim: &SimConfig, recon_frames: usize) -> Result<TrackingReport> {
    let mut errors = Vec::new();
    let mut indices = Vec::new();
    let mut intensities = Vec::new();
    let mut depths = Vec::new();
    let mut recon_se = 0.0;
    let mut recon_n = 0usize;
    for ep in episodes {
        for f in Finger::BOTH {
            for (t, frame) in ep.frames(f).iter().enumerate() {
                let m = &ep.marbles[t];
                if !m.held {
                    continue;
                }
                let image = frame.unpack();
                let ks = ae.encode(&image)?;
                let idx = active_index(&ks);
                let truth = ground_truth_keypoint(m, f, sim);
                errors.push(ks[idx].xy_dist(&truth));
                indices.push(idx);
                intensities.push(ks[idx].i);
                depths.push(m.depth);
                if recon_n < recon_frames {
                    let r = ae.decode(&ks)?;
                    recon_se += image.rmse(&r).powi(2);
                    recon_n += 1;
                }
            }
        }
    }
    let k = ae.arch().keypoints;
    let mut counts = vec![0usize; k];
    for &i in &indices {
        counts[i] += 1;
    }
    let modal = (0..k).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap_or(0);
    Ok(TrackingReport {
        frames: errors.len(),
        median_error_px: if errors.is_empty() { f64::NAN } else { median(&errors) },
        modal_index: modal,
        active_consistency: counts[modal] as f64 / indices.len().max(1) as f64,
        intensity_depth_corr: pearson(&intensities, &depths),
        reconstruction_rmse: (recon_se / recon_n.max(1) as f64).sqrt(),
    })
}

/// Encoded state of every frame in which the marble is held.
pub fn held_states(ae: &NetParams, episodes: &[Episode]) -> Result<Vec<SystemState>> {
    let mut out = Vec::new();
    for ep in episodes {
        let states = encode_episode(ae, ep)?;
        out.extend(states.into_iter().zip(&ep.marbles).filter(|(_, m)| m.held).map(|(s, _)| s));
    }
    Ok(out)
}
