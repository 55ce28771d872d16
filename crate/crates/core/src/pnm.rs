//! Binary PGM (P5) and PPM (P6) encoders, maxval 255.
//!
//! Values are clamped to `[0, 1]` and quantized as `round(255 v)`, rows top
//! to bottom.

use std::io::{self, Write};
use std::path::Path;

use crate::error::{dims_mismatch, Result};
use crate::grid::{FeatureGrid, ScalarMap};

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(map: &ScalarMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend(map.values().iter().map(|&v| quantize(v)));
    out
}

/// Encodes a three-channel grid as RGB.
pub fn encode_ppm(image: &FeatureGrid) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(dims_mismatch("3 channels", format!("{} channels", image.channels())));
    }
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.values().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn write_pgm(path: &Path, map: &ScalarMap) -> io::Result<()> {
    std::fs::File::create(path)?.write_all(&encode_pgm(map))
}

pub fn write_ppm(path: &Path, image: &FeatureGrid) -> io::Result<()> {
    let bytes = encode_ppm(image).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    std::fs::File::create(path)?.write_all(&bytes)
}
