//! Pinhole camera model.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Depth below which the projective division is considered degenerate; such
/// points project with clamped z and are flagged not-in-front.
pub const Z_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// Intrinsics of pyramid level `l` under center-aligned 2x2 pooling:
    /// a level-l pixel x_l maps to level-0 coordinate 2^l (x_l + 0.5) - 0.5.
    pub fn at_level(&self, l: usize) -> CameraIntrinsics {
        let s = (1u64 << l) as f64;
        CameraIntrinsics {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx + 0.5) / s - 0.5,
            cy: (self.cy + 0.5) / s - 0.5,
        }
    }

    /// Ray direction through pixel (x, y) at unit depth.
    #[inline]
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }
}

/// Lifts pixel (x, y) with the given depth into the camera frame.
pub fn backproject(x: f64, y: f64, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::NonPositiveDepth {
            value: depth,
            x: x as usize,
            y: y as usize,
        });
    }
    Ok(k.ray(x, y) * depth)
}

/// Projects a camera-frame point to the image plane. Points with z <= Z_MIN
/// return the clamped-z projection and in_front = false.
pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> (f64, f64, bool) {
    let in_front = p.z > Z_MIN;
    let z = p.z.max(Z_MIN);
    (k.fx * p.x / z + k.cx, k.fy * p.y / z + k.cy, in_front)
}
