//! Box rasterization and transmittance-map construction.

use crate::error::{Error, Result};
use crate::graph::BBox;
use crate::grid::ScalarMap;

/// Binary mask whose cell `(r, c)` is 1 iff its center
/// `((c + 0.5) / width, (r + 0.5) / height)` lies in the half-open box.
pub fn rasterize_bbox(bbox: &BBox, width: usize, height: usize) -> Result<ScalarMap> {
    if width == 0 || height == 0 {
        return Err(Error::Config(format!("grid must be at least 1x1, got {width}x{height}")));
    }
    let mut mask = ScalarMap::zeros(width, height);
    let mut covered = false;
    for r in 0..height {
        let y = (r as f64 + 0.5) / height as f64;
        for c in 0..width {
            let x = (c as f64 + 0.5) / width as f64;
            if bbox.contains(x, y) {
                mask.set(r, c, 1.0);
                covered = true;
            }
        }
    }
    if !covered {
        return Err(Error::DegenerateBox {
            bbox: bbox.to_array(),
            width,
            height,
        });
    }
    Ok(mask)
}

/// Min-max rescale to `[0, 1]` over the whole map. A constant map has no
/// spatial preference and becomes all ones.
pub fn normalize_attention_map(raw: &ScalarMap) -> ScalarMap {
    let (lo, hi) = (raw.min(), raw.max());
    let range = hi - lo;
    if range <= 0.0 {
        return ScalarMap::ones(raw.width(), raw.height());
    }
    raw.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
}

pub fn transmittance_map(norm_attn: &ScalarMap, box_mask: &ScalarMap) -> Result<ScalarMap> {
    norm_attn.zip_with(box_mask, |a, m| a * m)
}

/// Transmittance without attention shaping: the box mask itself.
pub fn box_only_transmittance_map(box_mask: &ScalarMap) -> ScalarMap {
    box_mask.clone()
}
