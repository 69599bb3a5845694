//! Saliency overlays.
//!
//! The colormap is a four-anchor linear ramp:
//! `0 → blue (0,0,1)`, `1/3 → cyan (0,1,1)`, `2/3 → yellow (1,1,0)`,
//! `1 → red (1,0,0)`. Any client rendering overlays must use the same anchors.

use alloc::vec::Vec;

use crate::domain::{DomainError, ImageTensor, SaliencyMap};

pub const COLORMAP_ANCHORS: [(f64, [f64; 3]); 4] = [
    (0.0, [0.0, 0.0, 1.0]),
    (1.0 / 3.0, [0.0, 1.0, 1.0]),
    (2.0 / 3.0, [1.0, 1.0, 0.0]),
    (1.0, [1.0, 0.0, 0.0]),
];

/// Maps `v` (clamped to `[0, 1]`) through the anchor ramp.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    for pair in COLORMAP_ANCHORS.windows(2) {
        let (v0, c0) = pair[0];
        let (v1, c1) = pair[1];
        if v <= v1 {
            if v == v1 {
                return c1;
            }
            let t = (v - v0) / (v1 - v0);
            return [
                c0[0] + (c1[0] - c0[0]) * t,
                c0[1] + (c1[1] - c0[1]) * t,
                c0[2] + (c1[2] - c0[2]) * t,
            ];
        }
    }
    COLORMAP_ANCHORS[3].1
}

/// `(1 − alpha)·image + alpha·colormap(map)`, clamped to `[0, 1]`.
///
/// The output is RGB; grayscale inputs are replicated across channels.
/// `alpha == 0` returns the input unchanged.
pub fn render_overlay(
    image: &ImageTensor,
    map: &SaliencyMap,
    alpha: f64,
) -> Result<ImageTensor, DomainError> {
    if map.height() != image.height() || map.width() != image.width() {
        return Err(DomainError::DimensionMismatch {
            expected: image.height() * image.width(),
            actual: map.height() * map.width(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DomainError::ValueOutOfRange {
            index: 0,
            value: alpha,
        });
    }
    if alpha == 0.0 {
        return Ok(image.clone());
    }
    let c = image.channels();
    let mut data = Vec::with_capacity(image.height() * image.width() * 3);
    for (i, &s) in map.values().iter().enumerate() {
        let color = colormap(s);
        let px = &image.data()[i * c..(i + 1) * c];
        for ch in 0..3 {
            let base = if c == 1 { px[0] } else { px[ch] };
            data.push(((1.0 - alpha) * base + alpha * color[ch]).clamp(0.0, 1.0));
        }
    }
    ImageTensor::new(image.height(), image.width(), 3, data)
}
