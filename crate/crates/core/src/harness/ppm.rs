//! Binary PPM (P6, maxval 255) frames.

use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{PackedFrame, FRAME_LEN, FRAME_SIZE};

pub fn encode_ppm(frame: &PackedFrame) -> Vec<u8> {
    let mut out = format!("P6\n{FRAME_SIZE} {FRAME_SIZE}\n255\n").into_bytes();
    out.extend_from_slice(frame.bytes());
    out
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<PackedFrame> {
    let bad = |r: &str| Error::format(path, r);
    let mut pos = 0;
    if token(bytes, &mut pos) != Some(b"P6") {
        return Err(bad("not a binary PPM (P6)"));
    }
    let mut num = || -> Result<usize> {
        let t = token(bytes, &mut pos).ok_or_else(|| bad("truncated header"))?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if (w, h) != (FRAME_SIZE, FRAME_SIZE) {
        return Err(bad(&format!("expected {FRAME_SIZE}x{FRAME_SIZE}, got {w}x{h}")));
    }
    if maxval != 255 {
        return Err(bad(&format!("expected maxval 255, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if data.len() != FRAME_LEN {
        return Err(bad(&format!("raster has {} bytes, expected {FRAME_LEN}", data.len())));
    }
    Ok(PackedFrame::from_bytes(data.to_vec()).expect("length checked"))
}

pub fn write_ppm(path: &Path, frame: &PackedFrame) -> Result<()> {
    std::fs::write(path, encode_ppm(frame)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<PackedFrame> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}
