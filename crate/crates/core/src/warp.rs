//! Differentiable inverse warping: reconstructs the target view by sampling
//! the source image at flow-displaced coordinates.

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid, Image, Mask};
use crate::sample::{sample_channel, Taps};

/// Inverse-warped image plus a hard validity mask (1 where all four bilinear
/// taps were in bounds).
#[derive(Debug, Clone)]
pub struct WarpResult {
    pub warped: Image,
    pub valid: Mask,
}

fn check_dims(source: &Image, flow: &FlowField) -> Result<()> {
    if source.width() != flow.width || source.height() != flow.height {
        return Err(Error::DimensionMismatch {
            what: "inverse_warp",
            expected_w: source.width(),
            expected_h: source.height(),
            got_w: flow.width,
            got_h: flow.height,
        });
    }
    Ok(())
}

/// warped(p) = source(p + flow(p)) via bilinear sampling with clamp-to-border.
pub fn inverse_warp(source: &Image, flow: &FlowField) -> Result<WarpResult> {
    check_dims(source, flow)?;
    let (w, h, c) = (source.width(), source.height(), source.channels());
    let mut data = vec![0.0; w * h * c];
    let mut valid = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 + flow.u[i];
            let sy = y as f64 + flow.v[i];
            let taps = Taps::compute(w, h, sx, sy);
            for ch in 0..c {
                data[i * c + ch] = taps.blend(sample_channel(source.data(), w, c, &taps, ch));
            }
            valid[i] = if taps.in_bounds { 1.0 } else { 0.0 };
        }
    }
    Ok(WarpResult {
        warped: Image::new(w, h, c, data)?,
        valid: Mask::new(w, h, valid)?,
    })
}

/// Vector-Jacobian product of [`inverse_warp`].
///
/// `upstream` has the warped image's shape. Returns the cotangents on the
/// flow (via the sampling coordinates) and on the source image (bilinear
/// weights scattered to the taps). The scatter runs in row-major order, so
/// results are deterministic.
pub fn inverse_warp_vjp(
    source: &Image,
    flow: &FlowField,
    upstream: &Grid,
) -> Result<(FlowField, Grid)> {
    check_dims(source, flow)?;
    let (w, h, c) = (source.width(), source.height(), source.channels());
    if upstream.width != w || upstream.height != h || upstream.channels != c {
        return Err(Error::DimensionMismatch {
            what: "inverse_warp_vjp upstream",
            expected_w: w,
            expected_h: h,
            got_w: upstream.width,
            got_h: upstream.height,
        });
    }
    let mut grad_u = vec![0.0; w * h];
    let mut grad_v = vec![0.0; w * h];
    let mut grad_source = Grid::zeros(w, h, c);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 + flow.u[i];
            let sy = y as f64 + flow.v[i];
            let taps = Taps::compute(w, h, sx, sy);
            let weights = taps.weights();
            let (mut gu, mut gv) = (0.0, 0.0);
            for ch in 0..c {
                let up = upstream.at(x, y, ch);
                if up == 0.0 {
                    continue;
                }
                let v = sample_channel(source.data(), w, c, &taps, ch);
                let (dx, dy) = taps.blend_grad(v, w, h, sx, sy);
                gu += up * dx;
                gv += up * dy;
                *grad_source.at_mut(taps.x0, taps.y0, ch) += up * weights[0];
                *grad_source.at_mut(taps.x1, taps.y0, ch) += up * weights[1];
                *grad_source.at_mut(taps.x0, taps.y1, ch) += up * weights[2];
                *grad_source.at_mut(taps.x1, taps.y1, ch) += up * weights[3];
            }
            grad_u[i] = gu;
            grad_v[i] = gv;
        }
    }
    Ok((FlowField::new(w, h, grad_u, grad_v)?, grad_source))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_is_identity() {
        let img = Image::from_fn(6, 5, 1, |x, y, _| ((x * 7 + y * 3) % 10) as f64 / 10.0).unwrap();
        let res = inverse_warp(&img, &FlowField::zeros(6, 5)).unwrap();
        assert_eq!(res.warped, img);
        assert_eq!(res.valid.count_nonzero(), 30);
    }

    #[test]
    fn unit_shift_takes_right_neighbor() {
        let cols = [10.0, 20.0, 30.0, 40.0];
        let img = Image::from_fn(4, 2, 1, |x, _, _| cols[x] / 255.0).unwrap();
        let res = inverse_warp(&img, &FlowField::uniform(4, 2, 1.0, 0.0)).unwrap();
        for y in 0..2 {
            for x in 0..3 {
                assert!((res.warped.at(x, y, 0) - cols[x + 1] / 255.0).abs() < 1e-15);
                assert_eq!(res.valid.at(x, y), 1.0);
            }
            // Last column clamps and is flagged invalid.
            assert!((res.warped.at(3, y, 0) - cols[3] / 255.0).abs() < 1e-15);
            assert_eq!(res.valid.at(3, y), 0.0);
        }
    }

    #[test]
    fn half_pixel_shift_blends() {
        let row = [0.0, 0.2, 0.4, 0.6];
        let img = Image::from_fn(4, 1, 1, |x, _, _| row[x]).unwrap();
        let res = inverse_warp(&img, &FlowField::uniform(4, 1, 0.5, 0.0)).unwrap();
        let expect = [0.1, 0.3, 0.5];
        for x in 0..3 {
            assert!((res.warped.at(x, 0, 0) - expect[x]).abs() < 1e-15);
        }
        assert_eq!(res.valid.at(3, 0), 0.0);
    }

    #[test]
    fn constant_image_warps_to_constant() {
        let img = Image::constant(5, 4, 3, 0.37);
        let flow = FlowField::uniform(5, 4, -1.3, 0.8);
        let res = inverse_warp(&img, &flow).unwrap();
        assert!(res.warped.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let img = Image::constant(4, 4, 1, 0.5);
        assert!(inverse_warp(&img, &FlowField::zeros(3, 4)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let img = Image::constant(4, 4, 1, 0.5);
        let flow = FlowField::uniform(4, 4, 0.3, -0.2);
        let (gf, gs) = inverse_warp_vjp(&img, &flow, &Grid::zeros(4, 4, 1)).unwrap();
        assert!(gf.u.iter().chain(gf.v.iter()).all(|&x| x == 0.0));
        assert!(gs.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn integer_tap_upstream_is_one_hot_in_source() {
        let img = Image::from_fn(5, 5, 1, |x, y, _| ((x + y) % 2) as f64).unwrap();
        let flow = FlowField::uniform(5, 5, 2.0, 1.0);
        let mut up = Grid::zeros(5, 5, 1);
        *up.at_mut(1, 2, 0) = 1.0;
        let (_, gs) = inverse_warp_vjp(&img, &flow, &up).unwrap();
        // Sampling position (3, 3) exactly.
        for y in 0..5 {
            for x in 0..5 {
                let expect = if (x, y) == (3, 3) { 1.0 } else { 0.0 };
                assert_eq!(gs.at(x, y, 0), expect, "at ({x},{y})");
            }
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        // Keep samples away from the [0,1] clamp so finite differences of the
        // perturbed image stay two-sided.
        let img = Image::from_fn(6, 6, 1, |x, y, _| {
            0.05 + 0.9 * ((x * 11 + y * 5) % 13) as f64 / 13.0
        })
        .unwrap();
        // Off-knot fractional flow.
        let flow = FlowField::new(
            6,
            6,
            (0..36).map(|i| 0.25 + 0.5 * (((i * 7) % 9) as f64 / 9.0)).collect(),
            (0..36).map(|i| -0.6 + 0.33 * (((i * 5) % 7) as f64 / 7.0)).collect(),
        )
        .unwrap();
        let up = Grid::from_fn(6, 6, 1, |x, y, _| 0.1 + ((x + 2 * y) % 5) as f64 * 0.2);
        let (gf, gs) = inverse_warp_vjp(&img, &flow, &up).unwrap();

        let loss = |im: &Image, fl: &FlowField| -> f64 {
            let res = inverse_warp(im, fl).unwrap();
            res.warped
                .data()
                .iter()
                .zip(&up.data)
                .map(|(a, b)| a * b)
                .sum()
        };
        let eps = 1e-5;
        for &i in &[0usize, 7, 14, 21, 35] {
            let mut fp = flow.clone();
            let mut fm = flow.clone();
            fp.u[i] += eps;
            fm.u[i] -= eps;
            let fd = (loss(&img, &fp) - loss(&img, &fm)) / (2.0 * eps);
            assert!((gf.u[i] - fd).abs() <= 1e-4 * gf.u[i].abs().max(fd.abs()).max(1e-6));
        }
        // Source gradient at a few pixels via raw-data perturbation.
        for &i in &[3usize, 17, 30] {
            let mut dp = img.data().to_vec();
            let mut dm = img.data().to_vec();
            dp[i] += eps;
            dm[i] -= eps;
            let ip = Image::new(6, 6, 1, dp).unwrap();
            let im = Image::new(6, 6, 1, dm).unwrap();
            let fd = (loss(&ip, &flow) - loss(&im, &flow)) / (2.0 * eps);
            assert!((gs.data[i] - fd).abs() <= 1e-4 * gs.data[i].abs().max(fd.abs()).max(1e-6));
        }
    }
}
