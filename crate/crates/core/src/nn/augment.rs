use rand::Rng as _;

use crate::frame::{TactileFrame, FRAME_CHANNELS};
use crate::rng::Rng;

/// Lighting perturbation: per-channel gain in `[1 - jitter, 1 + jitter]`,
/// then a gamma drawn uniformly from `[gamma_min, gamma_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub jitter: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            jitter: 0.1,
            gamma_min: 0.8,
            gamma_max: 1.25,
        }
    }
}

pub fn apply_lighting(frame: &TactileFrame, gains: [f64; FRAME_CHANNELS], gamma: f64) -> TactileFrame {
    let px = frame
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v * gains[i % FRAME_CHANNELS]).clamp(0.0, 1.0).powf(gamma))
        .collect();
    TactileFrame::from_pixels(px)
}

pub fn augment_image(frame: &TactileFrame, params: &AugmentParams, rng: &mut Rng) -> TactileFrame {
    let gains: [f64; FRAME_CHANNELS] = std::array::from_fn(|_| {
        if params.jitter > 0.0 {
            rng.gen_range(1.0 - params.jitter..=1.0 + params.jitter)
        } else {
            1.0
        }
    });
    let gamma = if params.gamma_max > params.gamma_min {
        rng.gen_range(params.gamma_min..=params.gamma_max)
    } else {
        params.gamma_min
    };
    apply_lighting(frame, gains, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn identity_without_perturbation() {
        let f = TactileFrame::from_fn(|x, y, c| ((x + y + c) % 9) as f64 / 9.0);
        let p = AugmentParams {
            jitter: 0.0,
            gamma_min: 1.0,
            gamma_max: 1.0,
        };
        assert_eq!(augment_image(&f, &p, &mut rng_from_seed(0)), f);
    }

    #[test]
    fn gamma_two_squares() {
        let out = apply_lighting(&TactileFrame::filled(0.5), [1.0; 3], 2.0);
        assert!(out.pixels().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let mut rng = rng_from_seed(8);
        let p = AugmentParams::default();
        for _ in 0..10_000 {
            let base: f64 = rng.gen_range(0.0..=1.0);
            let tilt: f64 = rng.gen_range(-1.0..=1.0);
            let f = TactileFrame::from_fn(|x, y, _| base + tilt * (x as f64 - y as f64) / 63.0);
            let out = augment_image(&f, &p, &mut rng);
            assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
