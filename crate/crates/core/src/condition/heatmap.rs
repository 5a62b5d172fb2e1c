//! Keypoint-to-heatmap rendering.
//!
//! A joint at normalized `(x, y)` sits at pixel coordinate `(x·W, y·H)`,
//! where pixel `(i, j)` has coordinate `(j, i)`. Each channel is an
//! isotropic Gaussian divided by its own maximum, so visible joints peak at
//! exactly 1 on the pixel nearest to the joint.

use ndarray::Array3;
use tch::{Kind, Tensor};

use super::pose::Pose;
use crate::error::{arg_err, Result};
use crate::residual::MotionMap;

pub const DEFAULT_SIGMA: f64 = 1.5;

/// Pixel `(row, col)` nearest to a normalized joint position.
pub fn joint_pixel(joint: [f32; 2], height: usize, width: usize) -> (usize, usize) {
    let col = (joint[0] as f64 * width as f64).round().clamp(0.0, (width - 1) as f64);
    let row = (joint[1] as f64 * height as f64).round().clamp(0.0, (height - 1) as f64);
    (row as usize, col as usize)
}

pub fn render_heatmaps(pose: &Pose, height: usize, width: usize, sigma: f64) -> Result<MotionMap> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(arg_err!("heatmap sigma must be positive, got {sigma}"));
    }
    if height == 0 || width == 0 {
        return Err(arg_err!("heatmap grid must be non-empty"));
    }
    let j = pose.num_joints();
    let mut maps = Array3::<f32>::zeros((height, width, j));
    let denom = 2.0 * sigma * sigma;
    for (idx, (p, &vis)) in pose.joints().iter().zip(pose.visibility()).enumerate() {
        if !vis {
            continue;
        }
        let cx = p[0] as f64 * width as f64;
        let cy = p[1] as f64 * height as f64;
        let mut peak = 0.0f64;
        let mut channel = vec![0.0f64; height * width];
        for r in 0..height {
            for c in 0..width {
                let d2 = (c as f64 - cx).powi(2) + (r as f64 - cy).powi(2);
                let v = (-d2 / denom).exp();
                channel[r * width + c] = v;
                peak = peak.max(v);
            }
        }
        if peak > 0.0 {
            for r in 0..height {
                for c in 0..width {
                    maps[[r, c, idx]] = (channel[r * width + c] / peak) as f32;
                }
            }
        }
    }
    MotionMap::new(maps)
}

/// Batched rendering: `coords` is `[N, J, 2]` (x, y), `visible` is `[N, J]`.
/// Returns `[N, J, H, W]` float heatmaps.
pub fn render_heatmaps_tensor(
    coords: &Tensor,
    visible: &Tensor,
    height: i64,
    width: i64,
    sigma: f64,
) -> Tensor {
    let opts = (Kind::Double, coords.device());
    let coords = coords.to_kind(Kind::Double);
    let cx = (coords.select(2, 0) * width as f64).unsqueeze(-1).unsqueeze(-1);
    let cy = (coords.select(2, 1) * height as f64).unsqueeze(-1).unsqueeze(-1);
    let gx = Tensor::arange(width, opts).view([1, 1, 1, width]);
    let gy = Tensor::arange(height, opts).view([1, 1, height, 1]);
    let d2 = (gx - cx).square() + (gy - cy).square();
    let g = (-d2 / (2.0 * sigma * sigma)).exp();
    let peak = g.amax([2, 3], true);
    let safe = peak.clamp_min(f64::MIN_POSITIVE);
    let g = (&g / &safe) * peak.gt(0.0).to_kind(Kind::Double);
    let vis = visible.to_kind(Kind::Double).unsqueeze(-1).unsqueeze(-1);
    (g * vis).to_kind(Kind::Float)
}
