//! Synthetic tactile images: a fixed three-colour illumination gradient with
//! a bright dome where the marble presses into the gel.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{Finger, MarbleState, SimConfig};
use crate::frame::{Keypoint, TactileFrame, FRAME_MAX_COORD, FRAME_SIZE};
use crate::rng::Rng;

const CENTRE: f64 = (FRAME_SIZE as f64 - 1.0) / 2.0;

/// Maps a pad contact in mm to frame pixel coordinates. The field centre
/// lands on `(31.5, 31.5)` and the field edges on the outer pixel borders.
pub fn contact_to_pixel(contact: [f64; 2], config: &SimConfig) -> (f64, f64) {
    let n = FRAME_SIZE as f64;
    let px = (contact[0] / config.field_width + 0.5) * n - 0.5;
    let py = (contact[1] / config.field_height + 0.5) * n - 0.5;
    (px, py)
}

pub fn disk_radius_px(depth: f64, config: &SimConfig) -> f64 {
    config.disk_radius_base + config.disk_radius_gain * depth.max(0.0).sqrt()
}

fn disk_amplitude(depth: f64, config: &SimConfig) -> f64 {
    0.1 + 0.35 * (1.0 - (-1.5 * depth.max(0.0) / config.max_depth).exp())
}

fn background_rgb(x: f64, y: f64) -> [f64; 3] {
    let r = (x - CENTRE).hypot(y - CENTRE);
    [
        0.25 + 0.25 * x / FRAME_MAX_COORD,
        0.25 + 0.25 * y / FRAME_MAX_COORD,
        0.45 - 0.15 * r / 45.0,
    ]
}

/// The no-contact image, without noise.
pub fn background(_config: &SimConfig) -> TactileFrame {
    TactileFrame::from_fn(|x, y, c| background_rgb(x as f64, y as f64)[c])
}

pub fn render_noiseless(marble: &MarbleState, finger: Finger, config: &SimConfig) -> TactileFrame {
    if !marble.held {
        return background(config);
    }
    let (cx, cy) = contact_to_pixel(marble.contact(finger), config);
    let radius = disk_radius_px(marble.depth, config);
    let amp = disk_amplitude(marble.depth, config);
    let tint = [1.0, 1.0, 0.85];
    TactileFrame::from_fn(|x, y, c| {
        let (xf, yf) = (x as f64, y as f64);
        let t = (xf - cx).hypot(yf - cy) / radius;
        let dome = (1.0 - t * t).max(0.0).sqrt();
        background_rgb(xf, yf)[c] + amp * tint[c] * dome
    })
}

/// Renders one pad's tactile frame with additive Gaussian pixel noise.
pub fn render(marble: &MarbleState, finger: Finger, config: &SimConfig, rng: &mut Rng) -> TactileFrame {
    let clean = render_noiseless(marble, finger, config);
    if config.pixel_noise_std == 0.0 {
        return clean;
    }
    let sigma = config.pixel_noise_std;
    let noisy = clean
        .pixels()
        .iter()
        .map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    TactileFrame::from_pixels(noisy)
}

/// Where the renderer puts the marble, with depth normalised by `max_depth`.
pub fn ground_truth_keypoint(marble: &MarbleState, finger: Finger, config: &SimConfig) -> Keypoint {
    let (x, y) = contact_to_pixel(marble.contact(finger), config);
    let i = if marble.held {
        (marble.depth / config.max_depth).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Keypoint::new(x, y, i).clipped()
}
