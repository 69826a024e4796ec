//! Bilinear sampling with a total, deterministic sub-pixel convention.
//!
//! Pixel (i, j) sits at continuous coordinate (x = j, y = i), x rightward and
//! y downward. Coordinates outside [0, W-1] x [0, H-1] are clamped to the
//! border and flagged out-of-bounds. The derivative w.r.t. the coordinates is
//! piecewise constant per unit cell; at exact integer coordinates the
//! right-sided cell applies (tie-break toward the larger index), except at the
//! far border where only the left-sided cell exists.

/// Support of one bilinear lookup: the four tap indices and their fractions.
#[derive(Debug, Clone, Copy)]
pub struct Taps {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    /// Fraction toward x1 / y1 in [0, 1].
    pub fx: f64,
    pub fy: f64,
    /// True when the unclamped coordinate lies inside [0, W-1] x [0, H-1].
    pub in_bounds: bool,
}

impl Taps {
    pub fn compute(width: usize, height: usize, x: f64, y: f64) -> Taps {
        debug_assert!(width >= 1 && height >= 1);
        let max_x = (width - 1) as f64;
        let max_y = (height - 1) as f64;
        let in_bounds = x >= 0.0 && x <= max_x && y >= 0.0 && y <= max_y;
        let xc = x.clamp(0.0, max_x);
        let yc = y.clamp(0.0, max_y);
        // Cell origin; pull the far border into the last interior cell so the
        // derivative stays defined there.
        let x0 = (xc.floor() as usize).min(width.saturating_sub(2));
        let y0 = (yc.floor() as usize).min(height.saturating_sub(2));
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        Taps {
            x0,
            x1,
            y0,
            y1,
            fx: xc - x0 as f64,
            fy: yc - y0 as f64,
            in_bounds,
        }
    }

    /// The four bilinear weights in tap order (x0y0, x1y0, x0y1, x1y1).
    #[inline]
    pub fn weights(&self) -> [f64; 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ]
    }

    /// Blend of four tap values laid out as in [`Taps::weights`].
    #[inline]
    pub fn blend(&self, v: [f64; 4]) -> f64 {
        let w = self.weights();
        w[0] * v[0] + w[1] * v[1] + w[2] * v[2] + w[3] * v[3]
    }

    /// Partial derivatives of the blend w.r.t. (x, y). Zero outside the grid
    /// because clamping freezes the coordinate there.
    #[inline]
    pub fn blend_grad(&self, v: [f64; 4], width: usize, height: usize, x: f64, y: f64) -> (f64, f64) {
        let (fx, fy) = (self.fx, self.fy);
        let mut dx = (1.0 - fy) * (v[1] - v[0]) + fy * (v[3] - v[2]);
        let mut dy = (1.0 - fx) * (v[2] - v[0]) + fx * (v[3] - v[1]);
        if x < 0.0 || x > (width - 1) as f64 {
            dx = 0.0;
        }
        if y < 0.0 || y > (height - 1) as f64 {
            dy = 0.0;
        }
        (dx, dy)
    }
}

/// Samples one channel of a row-major interleaved buffer.
#[inline]
pub fn sample_channel(
    data: &[f64],
    width: usize,
    channels: usize,
    taps: &Taps,
    ch: usize,
) -> [f64; 4] {
    let idx = |x: usize, y: usize| (y * width + x) * channels + ch;
    [
        data[idx(taps.x0, taps.y0)],
        data[idx(taps.x1, taps.y0)],
        data[idx(taps.x0, taps.y1)],
        data[idx(taps.x1, taps.y1)],
    ]
}

/// Bilinear sample of every channel at (x, y); returns the per-channel values
/// and the in-bounds flag. Out-of-range coordinates clamp to the border.
pub fn bilinear_sample(
    data: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    x: f64,
    y: f64,
) -> (Vec<f64>, bool) {
    let taps = Taps::compute(width, height, x, y);
    let values = (0..channels)
        .map(|ch| taps.blend(sample_channel(data, width, channels, &taps, ch)))
        .collect();
    (values, taps.in_bounds)
}

/// Bilinear sample plus analytic partials w.r.t. the coordinates, single channel.
pub fn bilinear_sample_grad(
    data: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    ch: usize,
    x: f64,
    y: f64,
) -> (f64, f64, f64, bool) {
    let taps = Taps::compute(width, height, x, y);
    let v = sample_channel(data, width, channels, &taps, ch);
    let value = taps.blend(v);
    let (dx, dy) = taps.blend_grad(v, width, height, x, y);
    (value, dx, dy, taps.in_bounds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_row() -> Vec<f64> {
        vec![0.0, 1.0, 2.0, 3.0]
    }

    #[test]
    fn exact_at_integer_coordinates() {
        let data = vec![0.1, 0.5, 0.9, 0.2, 0.7, 0.3];
        let (v, inb) = bilinear_sample(&data, 3, 2, 1, 2.0, 1.0);
        assert_eq!(v[0], 0.3);
        assert!(inb);
    }

    #[test]
    fn ramp_midpoint() {
        let data = ramp_row();
        let (v, inb) = bilinear_sample(&data, 4, 1, 1, 1.5, 0.0);
        assert!((v[0] - 1.5).abs() < 1e-15);
        assert!(inb);
    }

    #[test]
    fn clamps_and_flags_out_of_bounds() {
        let data = ramp_row();
        let (v, inb) = bilinear_sample(&data, 4, 1, 1, -0.5, 0.0);
        assert_eq!(v[0], 0.0);
        assert!(!inb);
        let (v, inb) = bilinear_sample(&data, 4, 1, 1, 5.0, 0.0);
        assert_eq!(v[0], 3.0);
        assert!(!inb);
    }

    #[test]
    fn gradient_right_sided_at_integers() {
        // Values 0,1,2,3: slope is 1 in every cell, so the tie-break is
        // invisible; use an uneven row to see it.
        let data = vec![0.0, 1.0, 3.0, 6.0];
        let (_, dx, _, _) = bilinear_sample_grad(&data, 4, 1, 1, 0, 1.0, 0.0);
        assert_eq!(dx, 2.0); // cell [1,2], not [0,1]
        // Far border uses the only existing cell.
        let (_, dx, _, _) = bilinear_sample_grad(&data, 4, 1, 1, 0, 3.0, 0.0);
        assert_eq!(dx, 3.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data: Vec<f64> = (0..30).map(|i| ((i * 37) % 17) as f64 / 17.0).collect();
        let (w, h) = (6, 5);
        let eps = 1e-5;
        for &(x, y) in &[(1.3, 2.6), (0.4, 0.3), (4.55, 3.4), (2.26, 1.74)] {
            let (_, dx, dy, _) = bilinear_sample_grad(&data, w, h, 1, 0, x, y);
            let fd_x = (bilinear_sample(&data, w, h, 1, x + eps, y).0[0]
                - bilinear_sample(&data, w, h, 1, x - eps, y).0[0])
                / (2.0 * eps);
            let fd_y = (bilinear_sample(&data, w, h, 1, x, y + eps).0[0]
                - bilinear_sample(&data, w, h, 1, x, y - eps).0[0])
                / (2.0 * eps);
            assert!((dx - fd_x).abs() <= 1e-9 * dx.abs().max(1.0), "dx {dx} vs {fd_x}");
            assert!((dy - fd_y).abs() <= 1e-9 * dy.abs().max(1.0), "dy {dy} vs {fd_y}");
        }
    }

    #[test]
    fn output_is_convex_combination_of_support() {
        let data: Vec<f64> = (0..20).map(|i| ((i * 13) % 7) as f64).collect();
        for &(x, y) in &[(0.2, 0.9), (3.7, 2.2), (1.5, 1.5)] {
            let taps = Taps::compute(5, 4, x, y);
            let v = sample_channel(&data, 5, 1, &taps, 0);
            let s = taps.blend(v);
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
        }
    }
}
