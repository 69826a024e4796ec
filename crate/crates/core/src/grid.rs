//! Dense grid containers shared by every stage of the pipeline.
//!
//! All pixel data is stored row-major in `f64`. `Grid` is the raw tensor
//! (used for gradients, cost maps and other unconstrained per-pixel data);
//! the domain types `Image`, `DepthMap`, `FlowField` and `Mask` validate
//! their invariants on construction.

use crate::error::{Error, Result};

/// Raw row-major tensor with interleaved channels: `data[(y*w + x)*c + ch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Grid {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * channels, "grid data length");
        Grid {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for ch in 0..channels {
                    data.push(f(x, y, ch));
                }
            }
        }
        Grid {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, ch: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize, ch: usize) -> &mut f64 {
        &mut self.data[(y * self.width + x) * self.channels + ch]
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Grid) {
        assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Intensity image with values clamped to [0, 1] on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    grid: Grid,
}

impl Image {
    /// Builds an image, clamping every sample into [0, 1].
    /// Non-finite input is rejected.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidSpec(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch {
                what: "image data",
                expected_w: width * height * channels,
                expected_h: 1,
                got_w: data.len(),
                got_h: 1,
            });
        }
        for v in &data {
            if !v.is_finite() {
                return Err(Error::InvalidSpec("non-finite image sample".into()));
            }
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Image {
            grid: Grid::from_vec(width, height, channels, data),
        })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image::new(width, height, channels, vec![value; width * height * channels])
            .expect("constant image")
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let g = Grid::from_fn(width, height, channels, f);
        Image::new(width, height, channels, g.data)
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }
    pub fn height(&self) -> usize {
        self.grid.height
    }
    pub fn channels(&self) -> usize {
        self.grid.channels
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, ch: usize) -> f64 {
        self.grid.at(x, y, ch)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.grid.data
    }
}

/// Per-pixel scene depth; every value strictly positive and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                what: "depth data",
                expected_w: width * height,
                expected_h: 1,
                got_w: data.len(),
                got_h: 1,
            });
        }
        for (i, v) in data.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::NonPositiveDepth {
                    value: *v,
                    x: i % width,
                    y: i / width,
                });
            }
        }
        Ok(DepthMap {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        DepthMap::new(width, height, vec![value; width * height]).expect("constant depth")
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        DepthMap::new(width, height, data)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Dense 2D displacement field in pixels; `u` is horizontal, `v` vertical.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::DimensionMismatch {
                what: "flow data",
                expected_w: width * height,
                expected_h: 1,
                got_w: u.len().max(v.len()),
                got_h: 1,
            });
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec("non-finite flow vector".into()));
        }
        Ok(FlowField {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Self {
        FlowField {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn same_shape(&self, other: &FlowField) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Per-pixel sum of two fields of equal shape.
    pub fn add(&self, other: &FlowField) -> FlowField {
        assert!(self.same_shape(other));
        FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().zip(&other.u).map(|(a, b)| a + b).collect(),
            v: self.v.iter().zip(&other.v).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Per-pixel weights in [0, 1]; hard masks use {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                what: "mask data",
                expected_w: width * height,
                expected_h: 1,
                got_w: data.len(),
                got_h: 1,
            });
        }
        if data.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
            return Err(Error::InvalidSpec("mask value outside [0,1]".into()));
        }
        Ok(Mask {
            width,
            height,
            data,
        })
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![1.0; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pointwise product, used to combine validity with weighting masks.
    pub fn intersect(&self, other: &Mask) -> Mask {
        assert_eq!(self.width, other.width);
        assert_eq!(self.height, other.height);
        Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v > 0.0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_clamps_on_construction() {
        let img = Image::new(2, 1, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.at(0, 0, 0), 0.0);
        assert_eq!(img.at(1, 0, 0), 1.0);
    }

    #[test]
    fn image_rejects_nan() {
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn image_rejects_bad_channel_count() {
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn depth_rejects_nonpositive() {
        let err = DepthMap::new(2, 1, vec![1.0, 0.0]).unwrap_err();
        match err {
            Error::NonPositiveDepth { x, y, .. } => {
                assert_eq!((x, y), (1, 0));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn flow_add_is_elementwise() {
        let a = FlowField::uniform(2, 2, 1.0, 2.0);
        let b = FlowField::uniform(2, 2, 3.0, -1.0);
        let c = a.add(&b);
        assert_eq!(c.at(1, 1), (4.0, 1.0));
    }

    #[test]
    fn mask_rejects_out_of_range() {
        assert!(Mask::new(1, 1, vec![1.1]).is_err());
        assert!(Mask::new(1, 1, vec![-0.1]).is_err());
    }
}
