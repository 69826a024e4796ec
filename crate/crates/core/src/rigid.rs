//! Rigid flow: the 2D displacement field induced by camera motion over a
//! static depth map, together with its reverse-mode derivatives.
//!
//! Per pixel p of the target frame, the camera-frame point D(p) K^-1 p is
//! transformed by the relative pose and reprojected; the flow is the
//! reprojection minus p. The homogeneous division is carried out explicitly,
//! guarded by [`crate::camera::Z_MIN`]; pixels landing at or behind the
//! camera plane are flagged invalid.

use nalgebra::Vector3;

use crate::camera::{project, CameraIntrinsics, Z_MIN};
use crate::error::{Error, Result};
use crate::grid::{DepthMap, FlowField, Grid, Mask};
use crate::se3::{euler_rotation_partials, PoseSE3};

/// Flow field plus the in-front validity mask.
pub fn rigid_flow(
    depth: &DepthMap,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
) -> Result<(FlowField, Mask)> {
    let (w, h) = (depth.width, depth.height);
    // The identity transform reprojects every pixel onto itself; bypass the
    // projective round trip so the flow is exactly zero, not rounding noise.
    let identity = pose.rotation == [0.0; 3] && pose.translation == [0.0; 3];
    if identity {
        for (i, d) in depth.data.iter().enumerate() {
            if !(*d > 0.0 && d.is_finite()) {
                return Err(Error::NonPositiveDepth {
                    value: *d,
                    x: i % w,
                    y: i / w,
                });
            }
        }
        return Ok((FlowField::zeros(w, h), Mask::ones(w, h)));
    }
    let r = pose.rotation_matrix();
    let t = pose.translation_vector();
    let mut u = vec![0.0; w * h];
    let mut v = vec![0.0; w * h];
    let mut valid = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let d = depth.data[i];
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::NonPositiveDepth { value: d, x, y });
            }
            let ray = k.ray(x as f64, y as f64);
            let p_cam = r * (ray * d) + t;
            let (px, py, in_front) = project(&p_cam, k);
            u[i] = px - x as f64;
            v[i] = py - y as f64;
            valid[i] = if in_front && px.is_finite() && py.is_finite() {
                1.0
            } else {
                0.0
            };
        }
    }
    Ok((FlowField::new(w, h, u, v)?, Mask::new(w, h, valid)?))
}

/// Gradients of a scalar objective w.r.t. the rigid-flow inputs, given the
/// upstream cotangent on the flow field.
#[derive(Debug, Clone)]
pub struct RigidFlowGrads {
    /// d loss / d depth, one scalar per pixel.
    pub depth: Grid,
    /// d loss / d Euler angles.
    pub rotation: [f64; 3],
    /// d loss / d translation.
    pub translation: [f64; 3],
}

/// Reverse-mode derivative of [`rigid_flow`].
///
/// `upstream` carries (du, dv) cotangents per pixel. Pixels whose transformed
/// depth is clamped at `Z_MIN` propagate no gradient through the projective
/// division, matching the clamped forward value.
pub fn rigid_flow_vjp(
    depth: &DepthMap,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    upstream: &FlowField,
) -> Result<RigidFlowGrads> {
    if upstream.width != depth.width || upstream.height != depth.height {
        return Err(Error::DimensionMismatch {
            what: "rigid_flow_vjp upstream",
            expected_w: depth.width,
            expected_h: depth.height,
            got_w: upstream.width,
            got_h: upstream.height,
        });
    }
    let (w, h) = (depth.width, depth.height);
    let r = pose.rotation_matrix();
    let t = pose.translation_vector();
    let dr = euler_rotation_partials(&pose.rotation);
    let mut grad_depth = Grid::zeros(w, h, 1);
    let mut grad_rot = [0.0; 3];
    let mut grad_trans = [0.0; 3];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let d = depth.data[i];
            let ray = k.ray(x as f64, y as f64);
            let p_cam = r * (ray * d) + t;
            let clamped = p_cam.z <= Z_MIN;
            let z = p_cam.z.max(Z_MIN);
            let (gu, gv) = (upstream.u[i], upstream.v[i]);
            // d(flow)/d(p_cam) rows for u and v; z frozen when clamped.
            let dz_u = if clamped { 0.0 } else { -k.fx * p_cam.x / (z * z) };
            let dz_v = if clamped { 0.0 } else { -k.fy * p_cam.y / (z * z) };
            let gp = Vector3::new(
                gu * k.fx / z,
                gv * k.fy / z,
                gu * dz_u + gv * dz_v,
            );
            // p_cam = R ray d + t.
            grad_depth.data[i] = gp.dot(&(r * ray));
            for a in 0..3 {
                grad_rot[a] += gp.dot(&(dr[a] * (ray * d)));
            }
            grad_trans[0] += gp.x;
            grad_trans[1] += gp.y;
            grad_trans[2] += gp.z;
        }
    }
    Ok(RigidFlowGrads {
        depth: grad_depth,
        rotation: grad_rot,
        translation: grad_trans,
    })
}
