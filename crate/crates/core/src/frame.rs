//! Tactile frames and keypoints shared by every module.

use serde::{Deserialize, Serialize};

/// Side length of a tactile frame in pixels.
pub const FRAME_SIZE: usize = 64;
pub const FRAME_CHANNELS: usize = 3;
pub const FRAME_LEN: usize = FRAME_SIZE * FRAME_SIZE * FRAME_CHANNELS;
/// Largest valid keypoint coordinate.
pub const FRAME_MAX_COORD: f64 = (FRAME_SIZE - 1) as f64;

/// A 64x64 RGB frame with values in `[0, 1]`, stored row-major, channel last.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame {
    pixels: Vec<f64>,
}

impl TactileFrame {
    pub fn from_fn(mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(FRAME_LEN);
        for y in 0..FRAME_SIZE {
            for x in 0..FRAME_SIZE {
                for c in 0..FRAME_CHANNELS {
                    pixels.push(f(x, y, c).clamp(0.0, 1.0));
                }
            }
        }
        Self { pixels }
    }

    pub fn filled(v: f64) -> Self {
        Self::from_fn(|_, _, _| v)
    }

    /// Values are clipped to `[0, 1]`.
    pub fn from_pixels(mut pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), FRAME_LEN, "frame must hold 64x64x3 values");
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Self { pixels }
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * FRAME_SIZE + x) * FRAME_CHANNELS + c]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / FRAME_LEN as f64
    }

    pub fn rmse(&self, other: &TactileFrame) -> f64 {
        let se: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (se / FRAME_LEN as f64).sqrt()
    }

    /// 8-bit quantization, `round(v * 255)`.
    pub fn pack(&self) -> PackedFrame {
        PackedFrame {
            bytes: self.pixels.iter().map(|&v| (v * 255.0).round() as u8).collect(),
        }
    }

    /// Planar channel-first copy, the layout the networks consume.
    pub fn to_chw(&self) -> Vec<f64> {
        let n = FRAME_SIZE * FRAME_SIZE;
        let mut out = vec![0.0; FRAME_LEN];
        for (i, px) in self.pixels.chunks_exact(FRAME_CHANNELS).enumerate() {
            for c in 0..FRAME_CHANNELS {
                out[c * n + i] = px[c];
            }
        }
        out
    }

    pub fn from_chw(chw: &[f64]) -> Self {
        let n = FRAME_SIZE * FRAME_SIZE;
        assert_eq!(chw.len(), FRAME_LEN);
        let mut pixels = vec![0.0; FRAME_LEN];
        for i in 0..n {
            for c in 0..FRAME_CHANNELS {
                pixels[i * FRAME_CHANNELS + c] = chw[c * n + i];
            }
        }
        Self::from_pixels(pixels)
    }
}

/// The on-disk form of a frame: 8 bits per channel, same layout as
/// [`TactileFrame`] (which is also the PPM P6 byte order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedFrame {
    bytes: Vec<u8>,
}

impl PackedFrame {
    pub fn from_bytes(bytes: Vec<u8>) -> Option<Self> {
        (bytes.len() == FRAME_LEN).then_some(Self { bytes })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn unpack(&self) -> TactileFrame {
        TactileFrame {
            pixels: self.bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }
}

/// A keypoint in frame pixel coordinates plus an intensity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub i: f64,
}

impl Keypoint {
    pub const fn new(x: f64, y: f64, i: f64) -> Self {
        Self { x, y, i }
    }

    /// Coordinates clipped to the frame, intensity to `>= 0`.
    pub fn clipped(self) -> Self {
        Self {
            x: self.x.clamp(0.0, FRAME_MAX_COORD),
            y: self.y.clamp(0.0, FRAME_MAX_COORD),
            i: self.i.max(0.0),
        }
    }

    pub fn xy_dist(&self, other: &Keypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chw_round_trip() {
        let f = TactileFrame::from_fn(|x, y, c| (x + 2 * y + 3 * c) as f64 / 400.0);
        assert_eq!(TactileFrame::from_chw(&f.to_chw()), f);
    }

    #[test]
    fn pack_is_idempotent_after_one_pass() {
        let f = TactileFrame::from_fn(|x, y, c| ((x * 7 + y * 13 + c) % 97) as f64 / 96.3);
        let once = f.pack().unpack();
        assert_eq!(once.pack().unpack(), once);
        assert!(f.rmse(&once) <= 0.5 / 255.0);
    }

    #[test]
    fn values_clipped() {
        let f = TactileFrame::from_fn(|x, _, _| x as f64 - 1.0);
        assert!(f.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
