//! Feature maps, the spatial soft-argmax, and Gaussian blob rendering.

use crate::frame::Keypoint;

/// Downsampling factor between frame pixels and feature-map cells.
pub const MAP_STRIDE: f64 = 4.0;
/// Side length of a feature map for a 64x64 frame.
pub const MAP_SIZE: usize = 16;

/// Frame pixel coordinate of the centre of map cell `u`.
pub fn map_to_frame(u: f64) -> f64 {
    u * MAP_STRIDE + (MAP_STRIDE - 1.0) / 2.0
}

pub fn frame_to_map(x: f64) -> f64 {
    (x - (MAP_STRIDE - 1.0) / 2.0) / MAP_STRIDE
}

/// One non-negative activation map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), h * w, "feature map size");
        Self { h, w, values }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self::new(h, w, vec![0.0; h * w])
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.w + x]
    }
}

/// Result of a soft-argmax. `degenerate` is set for all-zero maps, whose
/// location is reported as the map centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftArgmax {
    pub x: f64,
    pub y: f64,
    pub degenerate: bool,
}

/// Softmax weights of `values / tau`, computed stably.
pub(crate) fn softmax(values: &[f64], tau: f64, out: &mut [f64]) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(values) {
        *o = ((v - max) / tau).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Expected cell coordinates under the softmax of the map at temperature `tau`.
pub fn soft_argmax(map: &FeatureMap, tau: f64) -> SoftArgmax {
    let (cx, cy) = ((map.w as f64 - 1.0) / 2.0, (map.h as f64 - 1.0) / 2.0);
    if map.values.iter().all(|&v| v == 0.0) {
        return SoftArgmax {
            x: cx,
            y: cy,
            degenerate: true,
        };
    }
    let mut p = vec![0.0; map.values.len()];
    softmax(&map.values, tau, &mut p);
    let (mut x, mut y) = (0.0, 0.0);
    for (idx, &pi) in p.iter().enumerate() {
        x += pi * (idx % map.w) as f64;
        y += pi * (idx / map.w) as f64;
    }
    SoftArgmax {
        x: x.clamp(0.0, map.w as f64 - 1.0),
        y: y.clamp(0.0, map.h as f64 - 1.0),
        degenerate: false,
    }
}

/// Hard argmax cell, first occurrence on ties.
pub fn hard_argmax(map: &FeatureMap) -> (usize, usize) {
    let mut best = 0;
    for (i, &v) in map.values.iter().enumerate() {
        if v > map.values[best] {
            best = i;
        }
    }
    (best % map.w, best / map.w)
}

pub fn intensity(map: &FeatureMap) -> f64 {
    map.values.iter().sum::<f64>() / map.values.len() as f64
}

/// Gaussian bump of height `k.i` centred on the keypoint. `k` is in frame
/// pixels; `sigma` is in map cells.
pub fn render_blob(k: &Keypoint, sigma: f64, h: usize, w: usize) -> FeatureMap {
    let (mx, my) = (frame_to_map(k.x), frame_to_map(k.y));
    let mut out = FeatureMap::zeros(h, w);
    blob_into(mx, my, k.i, sigma, w, &mut out.values);
    out
}

pub(crate) fn blob_into(mx: f64, my: f64, amp: f64, sigma: f64, w: usize, out: &mut [f64]) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (idx, o) in out.iter_mut().enumerate() {
        let dx = (idx % w) as f64 - mx;
        let dy = (idx / w) as f64 - my;
        *o = amp * (-(dx * dx + dy * dy) * inv).exp();
    }
}

/// Index of the most intense keypoint; the lowest index wins ties.
pub fn active_index(keypoints: &[Keypoint]) -> usize {
    let mut best = 0;
    for (i, k) in keypoints.iter().enumerate() {
        if k.i > keypoints[best].i {
            best = i;
        }
    }
    best
}

pub fn active_keypoint(keypoints: &[Keypoint]) -> Keypoint {
    keypoints[active_index(keypoints)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_hot_at_low_temperature() {
        let mut m = FeatureMap::zeros(16, 16);
        m.values[12 * 16 + 10] = 1.0;
        let s = soft_argmax(&m, 0.01);
        assert!((s.x - 10.0).abs() < 0.1 && (s.y - 12.0).abs() < 0.1);
        assert!(!s.degenerate);
    }

    #[test]
    fn uniform_and_zero_maps_give_centre() {
        let s = soft_argmax(&FeatureMap::new(16, 16, vec![0.3; 256]), 1.0);
        assert!((s.x - 7.5).abs() < 1e-12 && (s.y - 7.5).abs() < 1e-12);
        let z = soft_argmax(&FeatureMap::zeros(16, 16), 1.0);
        assert_eq!((z.x, z.y, z.degenerate), (7.5, 7.5, true));
    }

    #[test]
    fn two_equal_peaks_average() {
        let mut m = FeatureMap::zeros(16, 16);
        m.values[4 * 16 + 4] = 50.0;
        m.values[4 * 16 + 12] = 50.0;
        let s = soft_argmax(&m, 1.0);
        assert!((s.x - 8.0).abs() < 1e-9);
        assert!((s.y - 4.0).abs() < 1e-9);
    }

    #[test]
    fn intensity_is_the_mean() {
        assert_eq!(intensity(&FeatureMap::zeros(16, 16)), 0.0);
        assert!((intensity(&FeatureMap::new(16, 16, vec![0.7; 256])) - 0.7).abs() < 1e-12);
        let mut m = FeatureMap::zeros(16, 16);
        m.values[37] = 1.0;
        assert_eq!(intensity(&m), 1.0 / 256.0);
    }

    #[test]
    fn blob_mass_matches_gaussian_integral() {
        let sigma = 1.5;
        let k = Keypoint::new(map_to_frame(7.3), map_to_frame(8.1), 0.8);
        let b = render_blob(&k, sigma, 16, 16);
        let mass: f64 = b.values.iter().sum();
        let expect = 0.8 * 2.0 * std::f64::consts::PI * sigma * sigma;
        assert!((mass / expect - 1.0).abs() < 0.02, "{mass} vs {expect}");
    }

    #[test]
    fn coordinate_maps_invert() {
        for u in [0.0, 3.25, 15.0] {
            assert!((frame_to_map(map_to_frame(u)) - u).abs() < 1e-12);
        }
        assert_eq!(map_to_frame(0.0), 1.5);
        assert_eq!(map_to_frame(15.0), 61.5);
    }

    #[test]
    fn active_keypoint_tie_rule() {
        let mut ks = vec![Keypoint::new(1.0, 1.0, 0.0); 8];
        ks[1].i = 0.9;
        ks[2].i = 0.1;
        assert_eq!(active_index(&ks), 1);
        let same = vec![Keypoint::new(2.0, 2.0, 0.4); 8];
        assert_eq!(active_index(&same), 0);
    }

    proptest! {
        #[test]
        fn soft_argmax_inside_map(values in proptest::collection::vec(0.0f64..30.0, 64), tau in 0.01f64..5.0) {
            let s = soft_argmax(&FeatureMap::new(8, 8, values), tau);
            prop_assert!((0.0..=7.0).contains(&s.x) && (0.0..=7.0).contains(&s.y));
        }

        #[test]
        fn soft_argmax_tends_to_hard_argmax(values in proptest::collection::vec(0.0f64..1.0, 64), peak in 0usize..64) {
            let mut v = values;
            v[peak] = 2.0;
            let m = FeatureMap::new(8, 8, v);
            let s = soft_argmax(&m, 0.005);
            let (hx, hy) = hard_argmax(&m);
            prop_assert!((s.x - hx as f64).abs() < 1e-3 && (s.y - hy as f64).abs() < 1e-3);
        }

        #[test]
        fn blob_peak_and_amplitude(x in 6.0f64..58.0, y in 6.0f64..58.0, i in 0.01f64..3.0, sigma in 0.2f64..4.0) {
            let k = Keypoint::new(x, y, i);
            let b = render_blob(&k, sigma, 16, 16);
            let (px, py) = hard_argmax(&b);
            prop_assert!((px as f64 - frame_to_map(x)).abs() <= 0.5 + 1e-9);
            prop_assert!((py as f64 - frame_to_map(y)).abs() <= 0.5 + 1e-9);
            prop_assert!(b.values.iter().all(|&v| v <= i && v >= 0.0));
            // Centred exactly on a cell, the peak equals the intensity.
            let c = Keypoint::new(map_to_frame(px as f64), map_to_frame(py as f64), i);
            let bc = render_blob(&c, sigma, 16, 16);
            prop_assert!((bc.get(px, py) - i).abs() < 1e-12);
        }
    }
}
