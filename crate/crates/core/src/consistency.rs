//! Forward-backward flow consistency: the flow difference field and the
//! adaptive inlier/outlier mask derived from it.
//!
//! The backward flow is resampled bilinearly at the forward-displaced
//! position; pixels whose resample leaves the grid count as outliers, the
//! same treatment as occlusion (out-of-frame motion is unobservable).

use crate::error::{Error, Result};
use crate::grid::{FlowField, Mask};
use crate::sample::{sample_channel, Taps};

/// Thresholds of the adaptive consistency condition
/// ||df||_2 < max(alpha_px, beta_rel * ||f||_2).
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyParams {
    /// Absolute threshold in pixels.
    pub alpha_px: f64,
    /// Relative threshold (dimensionless).
    pub beta_rel: f64,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        ConsistencyParams {
            alpha_px: 3.0,
            beta_rel: 0.05,
        }
    }
}

impl ConsistencyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_px > 0.0) || self.beta_rel < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "consistency thresholds must satisfy alpha > 0, beta >= 0, got ({}, {})",
                self.alpha_px, self.beta_rel
            )));
        }
        Ok(())
    }
}

fn check_dims(a: &FlowField, b: &FlowField, what: &'static str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            what,
            expected_w: a.width,
            expected_h: a.height,
            got_w: b.width,
            got_h: b.height,
        });
    }
    Ok(())
}

/// df(p) = f_fwd(p) + f_bwd(p + f_fwd(p)); the mask flags where the bilinear
/// resample stayed in bounds.
pub fn flow_difference(f_fwd: &FlowField, f_bwd: &FlowField) -> Result<(FlowField, Mask)> {
    check_dims(f_fwd, f_bwd, "flow_difference")?;
    let (w, h) = (f_fwd.width, f_fwd.height);
    let mut du = vec![0.0; w * h];
    let mut dv = vec![0.0; w * h];
    let mut valid = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 + f_fwd.u[i];
            let sy = y as f64 + f_fwd.v[i];
            let taps = Taps::compute(w, h, sx, sy);
            let bu = taps.blend(sample_channel(&f_bwd.u, w, 1, &taps, 0));
            let bv = taps.blend(sample_channel(&f_bwd.v, w, 1, &taps, 0));
            du[i] = f_fwd.u[i] + bu;
            dv[i] = f_fwd.v[i] + bv;
            valid[i] = if taps.in_bounds { 1.0 } else { 0.0 };
        }
    }
    Ok((FlowField::new(w, h, du, dv)?, Mask::new(w, h, valid)?))
}

/// Reverse-mode derivative of [`flow_difference`] given the cotangent on df.
/// Returns (grad_f_fwd, grad_f_bwd).
pub fn flow_difference_vjp(
    f_fwd: &FlowField,
    f_bwd: &FlowField,
    upstream: &FlowField,
) -> Result<(FlowField, FlowField)> {
    check_dims(f_fwd, f_bwd, "flow_difference_vjp")?;
    check_dims(f_fwd, upstream, "flow_difference_vjp upstream")?;
    let (w, h) = (f_fwd.width, f_fwd.height);
    let mut g_fwd = FlowField::zeros(w, h);
    let mut g_bwd = FlowField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (gu, gv) = (upstream.u[i], upstream.v[i]);
            if gu == 0.0 && gv == 0.0 {
                continue;
            }
            let sx = x as f64 + f_fwd.u[i];
            let sy = y as f64 + f_fwd.v[i];
            let taps = Taps::compute(w, h, sx, sy);
            // Identity term of df w.r.t. f_fwd(p).
            g_fwd.u[i] += gu;
            g_fwd.v[i] += gv;
            // Through the sampling position: d bu/d(sx,sy) and d bv/d(sx,sy).
            let vu = sample_channel(&f_bwd.u, w, 1, &taps, 0);
            let vv = sample_channel(&f_bwd.v, w, 1, &taps, 0);
            let (du_dx, du_dy) = taps.blend_grad(vu, w, h, sx, sy);
            let (dv_dx, dv_dy) = taps.blend_grad(vv, w, h, sx, sy);
            g_fwd.u[i] += gu * du_dx + gv * dv_dx;
            g_fwd.v[i] += gu * du_dy + gv * dv_dy;
            // Scatter into the backward field.
            let weights = taps.weights();
            let coords = [
                (taps.x0, taps.y0),
                (taps.x1, taps.y0),
                (taps.x0, taps.y1),
                (taps.x1, taps.y1),
            ];
            for (k, &(tx, ty)) in coords.iter().enumerate() {
                let j = ty * w + tx;
                g_bwd.u[j] += gu * weights[k];
                g_bwd.v[j] += gv * weights[k];
            }
        }
    }
    Ok((g_fwd, g_bwd))
}

/// Adaptive inlier mask of the consistency check; strict inequality, and
/// invalid resamples are outliers.
pub fn inlier_mask(
    delta: &FlowField,
    f_fwd: &FlowField,
    delta_valid: &Mask,
    params: &ConsistencyParams,
) -> Mask {
    assert!(delta.same_shape(f_fwd));
    let n = delta.width * delta.height;
    let mut data = vec![0.0; n];
    for i in 0..n {
        let dn = (delta.u[i] * delta.u[i] + delta.v[i] * delta.v[i]).sqrt();
        let fn_ = (f_fwd.u[i] * f_fwd.u[i] + f_fwd.v[i] * f_fwd.v[i]).sqrt();
        let thresh = params.alpha_px.max(params.beta_rel * fn_);
        data[i] = if delta_valid.data[i] > 0.0 && dn < thresh {
            1.0
        } else {
            0.0
        };
    }
    Mask {
        width: delta.width,
        height: delta.height,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flows_give_zero_delta() {
        let z = FlowField::zeros(6, 4);
        let (d, valid) = flow_difference(&z, &z).unwrap();
        assert!(d.u.iter().chain(d.v.iter()).all(|&x| x == 0.0));
        assert_eq!(valid.count_nonzero(), 24);
    }

    #[test]
    fn exact_inverse_flows_cancel() {
        let fwd = FlowField::uniform(10, 6, 5.0, 0.0);
        let bwd = FlowField::uniform(10, 6, -5.0, 0.0);
        let (d, valid) = flow_difference(&fwd, &bwd).unwrap();
        for y in 0..6 {
            for x in 0..10 {
                let i = y * 10 + x;
                assert!(d.u[i].abs() < 1e-15 && d.v[i].abs() < 1e-15);
                // Columns displaced past the right border flag invalid.
                assert_eq!(valid.at(x, y), if x < 5 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn mismatched_inverse_flows_leave_residual() {
        let fwd = FlowField::uniform(10, 4, 5.0, 0.0);
        let bwd = FlowField::uniform(10, 4, -3.0, 0.0);
        let (d, _) = flow_difference(&fwd, &bwd).unwrap();
        assert!((d.u[0] - 2.0).abs() < 1e-15);
        assert!(d.v[0].abs() < 1e-15);
    }

    #[test]
    fn inlier_threshold_is_strict() {
        // ||df|| = 3.0 exactly with flow magnitude 10: threshold is
        // max(3.0, 0.5) = 3.0 and the strict < makes it an outlier.
        let delta = FlowField::uniform(4, 4, 3.0, 0.0);
        let fwd = FlowField::uniform(4, 4, 10.0, 0.0);
        let m = inlier_mask(&delta, &fwd, &Mask::ones(4, 4), &ConsistencyParams::default());
        assert_eq!(m.count_nonzero(), 0);
    }

    #[test]
    fn relative_threshold_admits_large_flows() {
        // ||df|| = 4.0 with flow magnitude 100: threshold max(3.0, 5.0) = 5.
        let delta = FlowField::uniform(4, 4, 4.0, 0.0);
        let fwd = FlowField::uniform(4, 4, 100.0, 0.0);
        let m = inlier_mask(&delta, &fwd, &Mask::ones(4, 4), &ConsistencyParams::default());
        assert_eq!(m.count_nonzero(), 16);
    }

    #[test]
    fn zero_delta_all_inlier() {
        let delta = FlowField::zeros(4, 4);
        let fwd = FlowField::uniform(4, 4, 2.0, 1.0);
        let m = inlier_mask(&delta, &fwd, &Mask::ones(4, 4), &ConsistencyParams::default());
        assert_eq!(m.count_nonzero(), 16);
    }

    #[test]
    fn invalid_resample_is_outlier() {
        let delta = FlowField::zeros(4, 4);
        let fwd = FlowField::zeros(4, 4);
        let mut valid = Mask::ones(4, 4);
        valid.data[5] = 0.0;
        let m = inlier_mask(&delta, &fwd, &valid, &ConsistencyParams::default());
        assert_eq!(m.count_nonzero(), 15);
        assert_eq!(m.data[5], 0.0);
    }

    #[test]
    fn raising_alpha_is_monotone() {
        let delta = FlowField::new(
            8,
            8,
            (0..64).map(|i| (i % 7) as f64 * 0.8).collect(),
            (0..64).map(|i| (i % 5) as f64 * 0.6).collect(),
        )
        .unwrap();
        let fwd = FlowField::uniform(8, 8, 1.0, 2.0);
        let ones = Mask::ones(8, 8);
        let lo = inlier_mask(&delta, &fwd, &ones, &ConsistencyParams { alpha_px: 2.0, beta_rel: 0.05 });
        let hi = inlier_mask(&delta, &fwd, &ones, &ConsistencyParams { alpha_px: 4.0, beta_rel: 0.05 });
        for i in 0..64 {
            assert!(hi.data[i] >= lo.data[i]);
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let (w, h) = (8, 6);
        let n = w * h;
        let fwd = FlowField::new(
            w,
            h,
            (0..n).map(|i| 0.25 + 0.5 * ((i * 7 % 9) as f64 / 9.0)).collect(),
            (0..n).map(|i| -0.7 + 0.4 * ((i * 5 % 11) as f64 / 11.0)).collect(),
        )
        .unwrap();
        let bwd = FlowField::new(
            w,
            h,
            (0..n).map(|i| -0.3 + 0.2 * ((i * 3 % 7) as f64 / 7.0)).collect(),
            (0..n).map(|i| 0.6 - 0.3 * ((i * 11 % 5) as f64 / 5.0)).collect(),
        )
        .unwrap();
        let up = FlowField::new(
            w,
            h,
            (0..n).map(|i| 0.1 + (i % 4) as f64 * 0.3).collect(),
            (0..n).map(|i| -0.2 + (i % 3) as f64 * 0.25).collect(),
        )
        .unwrap();
        let (gf, gb) = flow_difference_vjp(&fwd, &bwd, &up).unwrap();
        let loss = |f: &FlowField, b: &FlowField| -> f64 {
            let (d, _) = flow_difference(f, b).unwrap();
            d.u.iter()
                .zip(&up.u)
                .chain(d.v.iter().zip(&up.v))
                .map(|(a, b)| a * b)
                .sum()
        };
        let eps = 1e-5;
        for &i in &[0usize, 13, 27, 44] {
            for field in 0..2 {
                let mut fp = fwd.clone();
                let mut fm = fwd.clone();
                let gp = if field == 0 {
                    fp.u[i] += eps;
                    fm.u[i] -= eps;
                    gf.u[i]
                } else {
                    fp.v[i] += eps;
                    fm.v[i] -= eps;
                    gf.v[i]
                };
                let fd = (loss(&fp, &bwd) - loss(&fm, &bwd)) / (2.0 * eps);
                assert!(
                    (gp - fd).abs() <= 1e-4 * gp.abs().max(fd.abs()).max(1e-6),
                    "fwd[{i}] field {field}: {gp} vs {fd}"
                );
            }
            let mut bp = bwd.clone();
            let mut bm = bwd.clone();
            bp.u[i] += eps;
            bm.u[i] -= eps;
            let fd = (loss(&fwd, &bp) - loss(&fwd, &bm)) / (2.0 * eps);
            assert!(
                (gb.u[i] - fd).abs() <= 1e-4 * gb.u[i].abs().max(fd.abs()).max(1e-6),
                "bwd[{i}]: {} vs {fd}",
                gb.u[i]
            );
        }
    }
}
