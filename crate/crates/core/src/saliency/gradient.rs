//! Gradient-mechanism attribution: GradCAM, GradCAM++ and HiResCAM.
//!
//! Each method forms a raw map at feature resolution, bilinearly upsamples
//! it to the requested output size and min-max normalizes the result.

use alloc::format;
use alloc::vec::Vec;

use super::SaliencyError;
use crate::domain::{Mechanism, SaliencyMap, TargetSpec};
use crate::grid::Grid;
use crate::model::FeatureBundle;

pub const GRAD_CAM: &str = "grad_cam";
pub const GRAD_CAM_PP: &str = "grad_cam_pp";
pub const HIRES_CAM: &str = "hires_cam";

fn check(bundle: &FeatureBundle) -> Result<(), SaliencyError> {
    bundle
        .check()
        .map_err(|e| SaliencyError::ShapeMismatch(format!("{e}")))
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `ReLU(Σ_k w_k A^k)` for per-channel weights `w`.
fn weighted_sum(bundle: &FeatureBundle, weights: &[f64]) -> Grid {
    let (h, w) = bundle.spatial();
    let mut out = Grid::zeros(h, w);
    for (a, &wk) in bundle.feature_maps.iter().zip(weights) {
        for (o, &v) in out.values.iter_mut().zip(&a.values) {
            *o += wk * v;
        }
    }
    out.values.iter_mut().for_each(|v| *v = relu(*v));
    out
}

/// GradCAM raw map: channel weights are the spatial mean of the gradients.
pub fn grad_cam_raw(bundle: &FeatureBundle) -> Result<Grid, SaliencyError> {
    check(bundle)?;
    let weights: Vec<f64> = bundle.gradients.iter().map(Grid::mean).collect();
    Ok(weighted_sum(bundle, &weights))
}

/// GradCAM++ raw map.
///
/// Pixel weights are `g² / (2g² + Σ_ab A_ab · g³)` (zero where the gradient
/// or the denominator vanishes); the channel weight sums them against the
/// positive part of the gradient.
pub fn grad_cam_pp_raw(bundle: &FeatureBundle) -> Result<Grid, SaliencyError> {
    check(bundle)?;
    let weights: Vec<f64> = bundle
        .feature_maps
        .iter()
        .zip(&bundle.gradients)
        .map(|(a, g)| {
            let sum_a = a.sum();
            g.values
                .iter()
                .map(|&gij| {
                    let g2 = gij * gij;
                    let denom = 2.0 * g2 + sum_a * g2 * gij;
                    let alpha = if gij == 0.0 || denom == 0.0 { 0.0 } else { g2 / denom };
                    alpha * relu(gij)
                })
                .sum()
        })
        .collect();
    Ok(weighted_sum(bundle, &weights))
}

/// HiResCAM raw map: `ReLU(Σ_k g_k ⊙ A^k)` without spatial averaging.
pub fn hires_cam_raw(bundle: &FeatureBundle) -> Result<Grid, SaliencyError> {
    check(bundle)?;
    let (h, w) = bundle.spatial();
    let mut out = Grid::zeros(h, w);
    for (a, g) in bundle.feature_maps.iter().zip(&bundle.gradients) {
        for ((o, &av), &gv) in out.values.iter_mut().zip(&a.values).zip(&g.values) {
            *o += av * gv;
        }
    }
    out.values.iter_mut().for_each(|v| *v = relu(*v));
    Ok(out)
}

fn finish(
    raw: Grid,
    out_size: (usize, usize),
    method_id: &str,
    target: &TargetSpec,
) -> Result<SaliencyMap, SaliencyError> {
    let up = upsample_map(&raw, out_size)?;
    let norm = normalize_map(&up)?;
    Ok(SaliencyMap::new(
        norm,
        method_id,
        target.clone(),
        Mechanism::Gradient,
    )?)
}

pub fn grad_cam(
    bundle: &FeatureBundle,
    out_size: (usize, usize),
    target: &TargetSpec,
) -> Result<SaliencyMap, SaliencyError> {
    finish(grad_cam_raw(bundle)?, out_size, GRAD_CAM, target)
}

pub fn grad_cam_pp(
    bundle: &FeatureBundle,
    out_size: (usize, usize),
    target: &TargetSpec,
) -> Result<SaliencyMap, SaliencyError> {
    finish(grad_cam_pp_raw(bundle)?, out_size, GRAD_CAM_PP, target)
}

pub fn hires_cam(
    bundle: &FeatureBundle,
    out_size: (usize, usize),
    target: &TargetSpec,
) -> Result<SaliencyMap, SaliencyError> {
    finish(hires_cam_raw(bundle)?, out_size, HIRES_CAM, target)
}

/// Min-max normalization to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_map(raw: &Grid) -> Result<Grid, SaliencyError> {
    if raw.values.iter().any(|v| !v.is_finite()) {
        return Err(SaliencyError::NonFiniteInput);
    }
    let (lo, hi) = (raw.min(), raw.max());
    let mut out = raw.clone();
    if raw.is_empty() || hi == lo {
        out.values.iter_mut().for_each(|v| *v = 0.0);
        return Ok(out);
    }
    let span = hi - lo;
    for v in &mut out.values {
        *v = ((*v - lo) / span).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Bilinear upsampling with the pixel-centre convention (corners not
/// aligned); samples beyond the edge clamp to the border.
pub fn upsample_map(map: &Grid, out: (usize, usize)) -> Result<Grid, SaliencyError> {
    let (oh, ow) = out;
    let (h, w) = (map.height, map.width);
    if h == 0 || w == 0 || oh == 0 || ow == 0 || h > oh || w > ow || map.len() != h * w {
        return Err(SaliencyError::ShapeMismatch(format!(
            "cannot upsample {h}x{w} to {oh}x{ow}"
        )));
    }
    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let s = (dst as f64 + 0.5) * (src_len as f64 / dst_len as f64) - 0.5;
        let s = s.clamp(0.0, (src_len - 1) as f64);
        let i0 = libm::floor(s) as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..ow).map(|x| axis(x, w, ow)).collect();
    let mut result = Grid::zeros(oh, ow);
    for y in 0..oh {
        let (y0, y1, fy) = axis(y, h, oh);
        for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
            let top = lerp(map.get(y0, x0), map.get(y0, x1), fx);
            let bottom = lerp(map.get(y1, x0), map.get(y1, x1), fx);
            result.set(y, x, lerp(top, bottom, fy));
        }
    }
    Ok(result)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a * (1.0 - t) + b * t
    }
}
