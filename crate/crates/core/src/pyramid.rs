//! Image pyramids built by 2x2 average pooling.
//!
//! Level 0 is full resolution; level l has dimensions floor(level0 / 2^l).
//! Average pooling (rather than strided subsampling) keeps the photometric
//! losses free of aliasing. Flow pyramids additionally halve the displacement
//! vectors per level so they stay in level-local pixels.

use crate::error::{Error, Result};
use crate::grid::{DepthMap, FlowField, Grid, Image, Mask};

#[derive(Debug, Clone)]
pub struct Pyramid<T> {
    pub levels: Vec<T>,
}

impl<T> Pyramid<T> {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &T {
        &self.levels[l]
    }
}

fn check_levels(what: &'static str, w: usize, h: usize, num_scales: usize) -> Result<()> {
    if num_scales < 1 {
        return Err(Error::DimensionTooSmall {
            what,
            w,
            h,
            levels: num_scales,
        });
    }
    if (w >> (num_scales - 1)) == 0 || (h >> (num_scales - 1)) == 0 {
        return Err(Error::DimensionTooSmall {
            what,
            w,
            h,
            levels: num_scales,
        });
    }
    Ok(())
}

/// 2x2 average pooling of an interleaved grid; output dims are floor(in/2).
pub fn avg_pool2(g: &Grid) -> Grid {
    let (w, h, c) = (g.width / 2, g.height / 2, g.channels);
    let mut out = Grid::zeros(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let s = g.at(2 * x, 2 * y, ch)
                    + g.at(2 * x + 1, 2 * y, ch)
                    + g.at(2 * x, 2 * y + 1, ch)
                    + g.at(2 * x + 1, 2 * y + 1, ch);
                *out.at_mut(x, y, ch) = 0.25 * s;
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool2`]: scatters upstream/4 back to the 2x2 parents.
pub fn avg_pool2_adjoint(upstream: &Grid, parent_w: usize, parent_h: usize) -> Grid {
    let mut out = Grid::zeros(parent_w, parent_h, upstream.channels);
    for y in 0..upstream.height {
        for x in 0..upstream.width {
            for ch in 0..upstream.channels {
                let g = 0.25 * upstream.at(x, y, ch);
                *out.at_mut(2 * x, 2 * y, ch) += g;
                *out.at_mut(2 * x + 1, 2 * y, ch) += g;
                *out.at_mut(2 * x, 2 * y + 1, ch) += g;
                *out.at_mut(2 * x + 1, 2 * y + 1, ch) += g;
            }
        }
    }
    out
}

pub fn build_image_pyramid(img: &Image, num_scales: usize) -> Result<Pyramid<Image>> {
    check_levels("image pyramid", img.width(), img.height(), num_scales)?;
    let mut levels = vec![img.clone()];
    for _ in 1..num_scales {
        let prev = levels.last().unwrap();
        let g = avg_pool2(prev.grid());
        levels.push(Image::new(g.width, g.height, g.channels, g.data)?);
    }
    Ok(Pyramid { levels })
}

pub fn build_depth_pyramid(depth: &DepthMap, num_scales: usize) -> Result<Pyramid<DepthMap>> {
    check_levels("depth pyramid", depth.width, depth.height, num_scales)?;
    let mut levels = vec![depth.clone()];
    for _ in 1..num_scales {
        let prev = levels.last().unwrap();
        let g = avg_pool2(&Grid::from_vec(prev.width, prev.height, 1, prev.data.clone()));
        levels.push(DepthMap::new(g.width, g.height, g.data)?);
    }
    Ok(Pyramid { levels })
}

/// Flow pyramid: average pool then halve the vectors, keeping displacements
/// in level-local pixel units.
pub fn build_flow_pyramid(flow: &FlowField, num_scales: usize) -> Result<Pyramid<FlowField>> {
    check_levels("flow pyramid", flow.width, flow.height, num_scales)?;
    let mut levels = vec![flow.clone()];
    for _ in 1..num_scales {
        let prev = levels.last().unwrap();
        let mut gu = avg_pool2(&Grid::from_vec(prev.width, prev.height, 1, prev.u.clone()));
        let mut gv = avg_pool2(&Grid::from_vec(prev.width, prev.height, 1, prev.v.clone()));
        gu.scale(0.5);
        gv.scale(0.5);
        levels.push(FlowField::new(gu.width, gu.height, gu.data, gv.data)?);
    }
    Ok(Pyramid { levels })
}

/// Masks pool like plain grids (values stay within [0,1] under averaging).
pub fn build_mask_pyramid(mask: &Mask, num_scales: usize) -> Result<Pyramid<Mask>> {
    check_levels("mask pyramid", mask.width, mask.height, num_scales)?;
    let mut levels = vec![mask.clone()];
    for _ in 1..num_scales {
        let prev = levels.last().unwrap();
        let g = avg_pool2(&Grid::from_vec(prev.width, prev.height, 1, prev.data.clone()));
        levels.push(Mask::new(g.width, g.height, g.data)?);
    }
    Ok(Pyramid { levels })
}

/// Bilinear resize with center-aligned coordinates:
/// src_x = (dst_x + 0.5) * w_src / w_dst - 0.5.
pub fn bilinear_resize(g: &Grid, w2: usize, h2: usize) -> Grid {
    use crate::sample::{sample_channel, Taps};
    let mut out = Grid::zeros(w2, h2, g.channels);
    let sx = g.width as f64 / w2 as f64;
    let sy = g.height as f64 / h2 as f64;
    for y in 0..h2 {
        for x in 0..w2 {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            let taps = Taps::compute(g.width, g.height, src_x, src_y);
            for ch in 0..g.channels {
                *out.at_mut(x, y, ch) =
                    taps.blend(sample_channel(&g.data, g.width, g.channels, &taps, ch));
            }
        }
    }
    out
}

/// Largest scale count such that every level keeps both dimensions >= min_dim.
pub fn max_scales(w: usize, h: usize, requested: usize, min_dim: usize) -> usize {
    let mut n = 1;
    let (mut cw, mut ch) = (w, h);
    while n < requested && cw / 2 >= min_dim && ch / 2 >= min_dim {
        cw /= 2;
        ch /= 2;
        n += 1;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::constant(8, 8, 1, 0.5);
        let pyr = build_image_pyramid(&img, 3).unwrap();
        assert_eq!(pyr.num_levels(), 3);
        let dims: Vec<_> = pyr.levels.iter().map(|l| (l.width(), l.height())).collect();
        assert_eq!(dims, vec![(8, 8), (4, 4), (2, 2)]);
        for lvl in &pyr.levels {
            assert!(lvl.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn uniform_flow_halves_per_level() {
        let f = FlowField::uniform(8, 8, 4.0, 0.0);
        let pyr = build_flow_pyramid(&f, 2).unwrap();
        assert_eq!(pyr.level(1).at(1, 1), (2.0, 0.0));
    }

    #[test]
    fn half_and_half_image_pools_to_rows() {
        // 4x4, top half 0, bottom half 1 -> level 1 rows are 0 and 1.
        let img = Image::from_fn(4, 4, 1, |_, y, _| if y < 2 { 0.0 } else { 1.0 }).unwrap();
        let pyr = build_image_pyramid(&img, 2).unwrap();
        let l1 = pyr.level(1);
        for x in 0..2 {
            assert_eq!(l1.at(x, 0, 0), 0.0);
            assert_eq!(l1.at(x, 1, 0), 1.0);
        }
    }

    #[test]
    fn too_small_grid_is_rejected() {
        let img = Image::constant(4, 4, 1, 0.1);
        assert!(build_image_pyramid(&img, 4).is_err());
        assert!(build_image_pyramid(&img, 3).is_ok());
    }

    #[test]
    fn mean_preserved_for_power_of_two_dims() {
        let img = Image::from_fn(16, 8, 1, |x, y, _| ((x * 7 + y * 3) % 11) as f64 / 11.0).unwrap();
        let pyr = build_image_pyramid(&img, 3).unwrap();
        let mean = |im: &Image| im.data().iter().sum::<f64>() / im.data().len() as f64;
        let m0 = mean(pyr.level(0));
        for l in 1..3 {
            assert!((mean(pyr.level(l)) - m0).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_adjoint_is_transpose() {
        // <pool(x), y> == <x, pool_adjoint(y)> for random-ish x, y.
        let x = Grid::from_fn(6, 4, 1, |i, j, _| ((i * 5 + j * 11) % 13) as f64);
        let y = Grid::from_fn(3, 2, 1, |i, j, _| ((i * 3 + j * 7) % 5) as f64);
        let px = avg_pool2(&x);
        let ay = avg_pool2_adjoint(&y, 6, 4);
        let lhs: f64 = px.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&ay.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
