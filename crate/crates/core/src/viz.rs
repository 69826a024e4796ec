//! Flow visualization with the Middlebury color wheel: hue encodes
//! direction, saturation encodes magnitude, white is zero motion.

use crate::grid::{FlowField, Image};

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
const NCOLS: usize = RY + YG + GC + CB + BM + MR;

fn color_wheel() -> [[f64; 3]; NCOLS] {
    let mut wheel = [[0.0; 3]; NCOLS];
    let mut k = 0;
    for i in 0..RY {
        wheel[k] = [255.0, 255.0 * i as f64 / RY as f64, 0.0];
        k += 1;
    }
    for i in 0..YG {
        wheel[k] = [255.0 - 255.0 * i as f64 / YG as f64, 255.0, 0.0];
        k += 1;
    }
    for i in 0..GC {
        wheel[k] = [0.0, 255.0, 255.0 * i as f64 / GC as f64];
        k += 1;
    }
    for i in 0..CB {
        wheel[k] = [0.0, 255.0 - 255.0 * i as f64 / CB as f64, 255.0];
        k += 1;
    }
    for i in 0..BM {
        wheel[k] = [255.0 * i as f64 / BM as f64, 0.0, 255.0];
        k += 1;
    }
    for i in 0..MR {
        wheel[k] = [255.0, 0.0, 255.0 - 255.0 * i as f64 / MR as f64];
        k += 1;
    }
    wheel
}

/// The normalization magnitude used by default: the 99th percentile of the
/// flow magnitudes.
pub fn p99_magnitude(flow: &FlowField) -> f64 {
    let mut mags: Vec<f64> = flow
        .u
        .iter()
        .zip(&flow.v)
        .map(|(u, v)| (u * u + v * v).sqrt())
        .collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((mags.len() - 1) as f64 * 0.99).floor() as usize;
    mags[idx]
}

/// Renders the flow as an RGB image. `max_magnitude` overrides the p99
/// normalization; magnitudes above it desaturate toward the wheel color.
pub fn flow_to_color(flow: &FlowField, max_magnitude: Option<f64>) -> Image {
    let wheel = color_wheel();
    let norm = match max_magnitude {
        Some(m) if m > 0.0 => m,
        _ => {
            let p = p99_magnitude(flow);
            if p > 1e-12 {
                p
            } else {
                1.0
            }
        }
    };
    let (w, h) = (flow.width, flow.height);
    let mut data = vec![0.0; w * h * 3];
    for i in 0..w * h {
        let u = flow.u[i] / norm;
        let v = flow.v[i] / norm;
        let rad = (u * u + v * v).sqrt();
        let angle = (-v).atan2(-u) / std::f64::consts::PI;
        let fk = (angle + 1.0) / 2.0 * (NCOLS - 1) as f64;
        let k0 = (fk.floor() as usize).min(NCOLS - 1);
        let k1 = (k0 + 1) % NCOLS;
        let f = fk - k0 as f64;
        for ch in 0..3 {
            let col0 = wheel[k0][ch] / 255.0;
            let col1 = wheel[k1][ch] / 255.0;
            let mut col = (1.0 - f) * col0 + f * col1;
            if rad <= 1.0 {
                col = 1.0 - rad * (1.0 - col);
            } else {
                col *= 0.75;
            }
            data[i * 3 + ch] = col;
        }
    }
    Image::new(w, h, 3, data).expect("flow color image")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_is_white() {
        let img = flow_to_color(&FlowField::zeros(6, 4), None);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn uniform_flow_is_uniform_color() {
        let img = flow_to_color(&FlowField::uniform(6, 4, 3.0, -1.0), Some(5.0));
        let first: Vec<f64> = (0..3).map(|c| img.at(0, 0, c)).collect();
        for y in 0..4 {
            for x in 0..6 {
                for c in 0..3 {
                    assert_eq!(img.at(x, y, c), first[c]);
                }
            }
        }
        // Saturated, not white.
        assert!(first.iter().any(|&v| v < 0.9));
    }

    #[test]
    fn scale_invariant_under_p99() {
        let flow = FlowField::new(
            8,
            6,
            (0..48).map(|i| (i % 7) as f64 - 3.0).collect(),
            (0..48).map(|i| (i % 5) as f64 - 2.0).collect(),
        )
        .unwrap();
        let mut scaled = flow.clone();
        for t in scaled.u.iter_mut().chain(scaled.v.iter_mut()) {
            *t *= 4.0;
        }
        let a = flow_to_color(&flow, None);
        let b = flow_to_color(&scaled, None);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
