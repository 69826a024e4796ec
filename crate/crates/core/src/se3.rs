//! SE(3) pose algebra with an Euler-angle rotation parameterization.
//!
//! Rotations compose as R = Rz(yaw) * Ry(pitch) * Rx(roll), i.e. fixed-axis
//! X-then-Y-then-Z. The paper family this follows never fixes an order; any
//! fixed order works for small-motion optimization, but this one is the
//! convention throughout the crate, including the pose Jacobians.

use nalgebra::{Matrix3, Vector3};

/// Relative 6-DoF camera motion: Euler angles (radians) plus translation.
/// A pose maps points from its "source" frame into its "destination" frame:
/// x_dst = R x_src + t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl PoseSE3 {
    pub fn identity() -> Self {
        PoseSE3 {
            rotation: [0.0; 3],
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: [f64; 3], translation: [f64; 3]) -> Self {
        PoseSE3 {
            rotation,
            translation,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        euler_to_rotation(&self.rotation)
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation_vector()
    }

    /// Group inverse: x_src = R^T (x_dst - t).
    pub fn inverse(&self) -> PoseSE3 {
        let r = self.rotation_matrix();
        let rt = r.transpose();
        let t = -(rt * self.translation_vector());
        PoseSE3 {
            rotation: rotation_to_euler(&rt),
            translation: [t.x, t.y, t.z],
        }
    }

    /// `self` after `other`: (self * other)(x) = self(other(x)).
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        let ra = self.rotation_matrix();
        let rb = other.rotation_matrix();
        let r = ra * rb;
        let t = ra * other.translation_vector() + self.translation_vector();
        PoseSE3 {
            rotation: rotation_to_euler(&r),
            translation: [t.x, t.y, t.z],
        }
    }

    /// Max absolute deviation from the identity transform, over the rotation
    /// matrix entries and translation components.
    pub fn deviation_from_identity(&self) -> f64 {
        let r = self.rotation_matrix();
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                d = d.max((r[(i, j)] - target).abs());
            }
            d = d.max(self.translation[i].abs());
        }
        d
    }
}

/// R = Rz(g) * Ry(b) * Rx(a).
pub fn euler_to_rotation(angles: &[f64; 3]) -> Matrix3<f64> {
    let (a, b, g) = (angles[0], angles[1], angles[2]);
    rz(g) * ry(b) * rx(a)
}

/// Euler angles of a rotation matrix under the Rz*Ry*Rx convention.
/// Near the pitch singularity (|cos b| ~ 0) roll is fixed to zero.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> [f64; 3] {
    let sb = -r[(2, 0)];
    let b = sb.clamp(-1.0, 1.0).asin();
    let cb = (r[(0, 0)] * r[(0, 0)] + r[(1, 0)] * r[(1, 0)]).sqrt();
    if cb < 1e-12 {
        // Gimbal lock: only the sum/difference of roll and yaw is defined.
        let a = 0.0;
        let g = (-r[(0, 1)]).atan2(r[(1, 1)]);
        [a, b, g]
    } else {
        let a = r[(2, 1)].atan2(r[(2, 2)]);
        let g = r[(1, 0)].atan2(r[(0, 0)]);
        [a, b, g]
    }
}

/// Partial derivatives of R w.r.t. each Euler angle.
pub fn euler_rotation_partials(angles: &[f64; 3]) -> [Matrix3<f64>; 3] {
    let (a, b, g) = (angles[0], angles[1], angles[2]);
    [
        rz(g) * ry(b) * drx(a),
        rz(g) * dry(b) * rx(a),
        drz(g) * ry(b) * rx(a),
    ]
}

fn rx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn ry(b: f64) -> Matrix3<f64> {
    let (s, c) = b.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rz(g: f64) -> Matrix3<f64> {
    let (s, c) = g.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn dry(b: f64) -> Matrix3<f64> {
    let (s, c) = b.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drz(g: f64) -> Matrix3<f64> {
    let (s, c) = g.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}
