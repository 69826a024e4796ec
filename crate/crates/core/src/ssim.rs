//! Structural similarity over a 3x3 box window with replicate padding.
//!
//! The window statistics use the standard stabilizers C1 = 0.01^2 and
//! C2 = 0.03^2. Multi-channel images produce the per-channel SSIM averaged
//! over channels. The per-pixel map lives in [-1, 1].

use crate::error::{Error, Result};
use crate::grid::{Grid, Image};

pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

/// 3x3 box filter with replicate padding, channel-wise.
pub fn box3(g: &Grid) -> Grid {
    let (w, h, c) = (g.width, g.height, g.channels);
    let mut out = Grid::zeros(w, h, c);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut s = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        s += g.at(clamp(x as isize + dx, w), clamp(y as isize + dy, h), ch);
                    }
                }
                *out.at_mut(x, y, ch) = s / 9.0;
            }
        }
    }
    out
}

/// Adjoint of [`box3`]: scatters upstream/9 to the same replicate-clamped taps.
pub fn box3_adjoint(upstream: &Grid) -> Grid {
    let (w, h, c) = (upstream.width, upstream.height, upstream.channels);
    let mut out = Grid::zeros(w, h, c);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let g = upstream.at(x, y, ch) / 9.0;
                if g == 0.0 {
                    continue;
                }
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        *out.at_mut(clamp(x as isize + dx, w), clamp(y as isize + dy, h), ch) += g;
                    }
                }
            }
        }
    }
    out
}

struct SsimTerms {
    mu_a: Grid,
    mu_b: Grid,
    e_aa: Grid,
    e_bb: Grid,
    e_ab: Grid,
}

fn ssim_terms(a: &Grid, b: &Grid) -> SsimTerms {
    let prod = |x: &Grid, y: &Grid| {
        let mut g = x.clone();
        for (v, w) in g.data.iter_mut().zip(&y.data) {
            *v *= w;
        }
        g
    };
    SsimTerms {
        mu_a: box3(a),
        mu_b: box3(b),
        e_aa: box3(&prod(a, a)),
        e_bb: box3(&prod(b, b)),
        e_ab: box3(&prod(a, b)),
    }
}

#[inline]
fn ssim_at(t: &SsimTerms, i: usize) -> (f64, f64, f64, f64, f64) {
    let (ma, mb) = (t.mu_a.data[i], t.mu_b.data[i]);
    let va = t.e_aa.data[i] - ma * ma;
    let vb = t.e_bb.data[i] - mb * mb;
    let cab = t.e_ab.data[i] - ma * mb;
    let num1 = 2.0 * ma * mb + C1;
    let num2 = 2.0 * cab + C2;
    let den1 = ma * ma + mb * mb + C1;
    let den2 = va + vb + C2;
    let s = (num1 * num2) / (den1 * den2);
    (s, num1, num2, den1, den2)
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(Error::DimensionMismatch {
            what: "ssim_map",
            expected_w: a.width(),
            expected_h: a.height(),
            got_w: b.width(),
            got_h: b.height(),
        });
    }
    Ok(())
}

/// Per-pixel SSIM of two images: channel-mean, clamped into [-1, 1].
pub fn ssim_map(a: &Image, b: &Image) -> Result<Grid> {
    check_dims(a, b)?;
    let t = ssim_terms(a.grid(), b.grid());
    let (w, h, c) = (a.width(), a.height(), a.channels());
    let mut out = Grid::zeros(w, h, 1);
    for p in 0..w * h {
        let mut acc = 0.0;
        for ch in 0..c {
            acc += ssim_at(&t, p * c + ch).0;
        }
        out.data[p] = (acc / c as f64).clamp(-1.0, 1.0);
    }
    Ok(out)
}

/// Reverse-mode derivative of [`ssim_map`] w.r.t. both images.
/// `upstream` is a 1-channel cotangent on the per-pixel SSIM.
pub fn ssim_map_vjp(a: &Image, b: &Image, upstream: &Grid) -> Result<(Grid, Grid)> {
    check_dims(a, b)?;
    let (w, h, c) = (a.width(), a.height(), a.channels());
    let t = ssim_terms(a.grid(), b.grid());
    // Per-pixel per-channel cotangents on the five windowed statistics.
    let mut g_mu_a = Grid::zeros(w, h, c);
    let mut g_mu_b = Grid::zeros(w, h, c);
    let mut g_e_aa = Grid::zeros(w, h, c);
    let mut g_e_bb = Grid::zeros(w, h, c);
    let mut g_e_ab = Grid::zeros(w, h, c);
    let cn = c as f64;
    for p in 0..w * h {
        let up = upstream.data[p] / cn;
        if up == 0.0 {
            continue;
        }
        for ch in 0..c {
            let i = p * c + ch;
            let (s, num1, num2, den1, den2) = ssim_at(&t, i);
            if !(-1.0..=1.0).contains(&s) {
                // Clamp active: flat region, no gradient.
                continue;
            }
            let (ma, mb) = (t.mu_a.data[i], t.mu_b.data[i]);
            let dd = den1 * den2;
            // dS/dx = (dN/dx - S dD/dx) / D with N = num1*num2, D = den1*den2.
            // The mean cotangents fold in the -mu terms of variance/covariance.
            let ds_dma = {
                let dn = 2.0 * mb * num2 + num1 * (-2.0 * mb);
                let dd_ = 2.0 * ma * den2 + den1 * (-2.0 * ma);
                (dn - s * dd_) / dd
            };
            let ds_dmb = {
                let dn = 2.0 * ma * num2 + num1 * (-2.0 * ma);
                let dd_ = 2.0 * mb * den2 + den1 * (-2.0 * mb);
                (dn - s * dd_) / dd
            };
            let ds_de_aa = -s / den2;
            let ds_de_bb = -s / den2;
            let ds_de_ab = 2.0 * num1 / dd;
            g_mu_a.data[i] = up * ds_dma;
            g_mu_b.data[i] = up * ds_dmb;
            g_e_aa.data[i] = up * ds_de_aa;
            g_e_bb.data[i] = up * ds_de_bb;
            g_e_ab.data[i] = up * ds_de_ab;
        }
    }
    // Chain through the box filters.
    let adj_mu_a = box3_adjoint(&g_mu_a);
    let adj_mu_b = box3_adjoint(&g_mu_b);
    let adj_e_aa = box3_adjoint(&g_e_aa);
    let adj_e_bb = box3_adjoint(&g_e_bb);
    let adj_e_ab = box3_adjoint(&g_e_ab);
    let mut grad_a = Grid::zeros(w, h, c);
    let mut grad_b = Grid::zeros(w, h, c);
    let (da, db) = (a.data(), b.data());
    for i in 0..w * h * c {
        grad_a.data[i] = adj_mu_a.data[i] + 2.0 * da[i] * adj_e_aa.data[i] + db[i] * adj_e_ab.data[i];
        grad_b.data[i] = adj_mu_b.data[i] + 2.0 * db[i] * adj_e_bb.data[i] + da[i] * adj_e_ab.data[i];
    }
    Ok((grad_a, grad_b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_similarity_is_one() {
        let img = Image::from_fn(8, 6, 1, |x, y, _| ((x * 3 + y * 5) % 9) as f64 / 9.0).unwrap();
        let s = ssim_map(&img, &img).unwrap();
        assert!(s.data.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_images_closed_form() {
        // mu_a = 0.2, mu_b = 0.8, zero variances:
        // SSIM = (2*0.16 + 1e-4) / (0.04 + 0.64 + 1e-4)
        let a = Image::constant(5, 5, 1, 0.2);
        let b = Image::constant(5, 5, 1, 0.8);
        let expected = (2.0 * 0.16 + C1) / (0.04 + 0.64 + C1);
        let s = ssim_map(&a, &b).unwrap();
        assert!(s.data.iter().all(|&v| (v - expected).abs() < 1e-12));
        assert!((expected - 0.4707).abs() < 1e-4);
    }

    #[test]
    fn anti_correlated_pattern_goes_negative() {
        // b mirrors a's contrast around the shared mean 0.5.
        let a = Image::from_fn(8, 8, 1, |x, y, _| 0.5 + 0.3 * (((x + y) % 2) as f64 * 2.0 - 1.0))
            .unwrap();
        let b = Image::from_fn(8, 8, 1, |x, y, _| 0.5 - 0.3 * (((x + y) % 2) as f64 * 2.0 - 1.0))
            .unwrap();
        let s = ssim_map(&a, &b).unwrap();
        // Interior pixels see a fully anti-correlated window.
        assert!(s.at(4, 4, 0) < 0.0);
    }

    #[test]
    fn map_stays_in_range() {
        let a = Image::from_fn(9, 7, 3, |x, y, ch| ((x * 7 + y * 11 + ch * 3) % 13) as f64 / 13.0)
            .unwrap();
        let b = Image::from_fn(9, 7, 3, |x, y, ch| ((x * 5 + y * 3 + ch * 7) % 11) as f64 / 11.0)
            .unwrap();
        let s = ssim_map(&a, &b).unwrap();
        assert!(s.data.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = Image::constant(4, 4, 1, 0.5);
        let b = Image::constant(4, 5, 1, 0.5);
        assert!(ssim_map(&a, &b).is_err());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let a = Image::from_fn(7, 6, 1, |x, y, _| ((x * 5 + y * 3) % 8) as f64 / 10.0 + 0.05)
            .unwrap();
        let b = Image::from_fn(7, 6, 1, |x, y, _| ((x * 3 + y * 7) % 9) as f64 / 12.0 + 0.1)
            .unwrap();
        let up = Grid::from_fn(7, 6, 1, |x, y, _| 0.3 + ((x + y) % 3) as f64 * 0.25);
        let (ga, gb) = ssim_map_vjp(&a, &b, &up).unwrap();
        let loss = |a: &Image, b: &Image| -> f64 {
            ssim_map(a, b)
                .unwrap()
                .data
                .iter()
                .zip(&up.data)
                .map(|(s, u)| s * u)
                .sum()
        };
        let eps = 1e-6;
        for &i in &[0usize, 9, 20, 41] {
            let mut ap = a.data().to_vec();
            let mut am = a.data().to_vec();
            ap[i] += eps;
            am[i] -= eps;
            let fd = (loss(&Image::new(7, 6, 1, ap).unwrap(), &b)
                - loss(&Image::new(7, 6, 1, am).unwrap(), &b))
                / (2.0 * eps);
            assert!(
                (ga.data[i] - fd).abs() <= 1e-4 * ga.data[i].abs().max(fd.abs()).max(1e-6),
                "grad_a[{i}] {} vs fd {}",
                ga.data[i],
                fd
            );
            let mut bp = b.data().to_vec();
            let mut bm = b.data().to_vec();
            bp[i] += eps;
            bm[i] -= eps;
            let fd = (loss(&a, &Image::new(7, 6, 1, bp).unwrap())
                - loss(&a, &Image::new(7, 6, 1, bm).unwrap()))
                / (2.0 * eps);
            assert!(
                (gb.data[i] - fd).abs() <= 1e-4 * gb.data[i].abs().max(fd.abs()).max(1e-6),
                "grad_b[{i}] {} vs fd {}",
                gb.data[i],
                fd
            );
        }
    }
}
