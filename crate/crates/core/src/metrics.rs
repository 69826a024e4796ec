//! Evaluation metrics for recovered depth, flow and camera trajectories.

use crate::error::{Error, Result};
use crate::grid::{DepthMap, FlowField, Mask};

/// Standard monocular depth error/accuracy measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    pub fn to_text(&self) -> String {
        format!(
            "abs_rel = {}\nsq_rel = {}\nrmse = {}\nrmse_log = {}\ndelta1 = {}\ndelta2 = {}\ndelta3 = {}\n",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3
        )
    }
}

/// Depth error metrics over the valid pixels, optionally median-scaling the
/// prediction (median(gt)/median(pred)) and clamping both into (0, cap].
pub fn depth_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    valid: Option<&Mask>,
    cap: f64,
    median_scale: bool,
) -> Result<DepthMetrics> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::DimensionMismatch {
            what: "depth_metrics",
            expected_w: gt.width,
            expected_h: gt.height,
            got_w: pred.width,
            got_h: pred.height,
        });
    }
    let n = gt.width * gt.height;
    let idx: Vec<usize> = (0..n)
        .filter(|&i| valid.map_or(true, |m| m.data[i] > 0.0))
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyValidSet {
            what: "depth_metrics",
        });
    }
    let scale = if median_scale {
        let med = |v: &mut Vec<f64>| -> f64 {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = v.len() / 2;
            if v.len() % 2 == 1 {
                v[m]
            } else {
                0.5 * (v[m - 1] + v[m])
            }
        };
        let mut p: Vec<f64> = idx.iter().map(|&i| pred.data[i]).collect();
        let mut g: Vec<f64> = idx.iter().map(|&i| gt.data[i]).collect();
        med(&mut g) / med(&mut p)
    } else {
        1.0
    };

    let (mut abs_rel, mut sq_rel, mut se, mut se_log) = (0.0, 0.0, 0.0, 0.0);
    let (mut d1, mut d2, mut d3) = (0usize, 0usize, 0usize);
    for &i in &idx {
        let p = (pred.data[i] * scale).min(cap).max(f64::MIN_POSITIVE);
        let g = gt.data[i].min(cap);
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        se += diff * diff;
        let dl = p.ln() - g.ln();
        se_log += dl * dl;
        let ratio = (p / g).max(g / p);
        if ratio < 1.25 {
            d1 += 1;
        }
        if ratio < 1.25 * 1.25 {
            d2 += 1;
        }
        if ratio < 1.25 * 1.25 * 1.25 {
            d3 += 1;
        }
    }
    let m = idx.len() as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / m,
        sq_rel: sq_rel / m,
        rmse: (se / m).sqrt(),
        rmse_log: (se_log / m).sqrt(),
        delta1: d1 as f64 / m,
        delta2: d2 as f64 / m,
        delta3: d3 as f64 / m,
    })
}

/// Mean end-point error over the region: mean ||pred - gt||_2.
pub fn flow_epe(pred: &FlowField, gt: &FlowField, region: Option<&Mask>) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::DimensionMismatch {
            what: "flow_epe",
            expected_w: gt.width,
            expected_h: gt.height,
            got_w: pred.width,
            got_h: pred.height,
        });
    }
    let n = gt.width * gt.height;
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        if let Some(m) = region {
            if m.data[i] <= 0.0 {
                continue;
            }
        }
        let du = pred.u[i] - gt.u[i];
        let dv = pred.v[i] - gt.v[i];
        acc += (du * du + dv * dv).sqrt();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyValidSet { what: "flow_epe" });
    }
    Ok(acc / count as f64)
}

/// Camera positions of one snippet (fixed frame count, default 5).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<[f64; 3]>,
}

impl Trajectory {
    pub fn new(positions: Vec<[f64; 3]>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidConfig(
                "trajectory needs at least two positions".into(),
            ));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite trajectory position".into()));
        }
        Ok(Trajectory { positions })
    }
}

/// Absolute trajectory error of one snippet after translating both
/// trajectories to the origin at their first frame and aligning a single
/// least-squares scale s* = <pred, gt> / <pred, pred>.
pub fn ate(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    if pred.positions.len() != gt.positions.len() {
        return Err(Error::DimensionMismatch {
            what: "ate",
            expected_w: gt.positions.len(),
            expected_h: 1,
            got_w: pred.positions.len(),
            got_h: 1,
        });
    }
    let origin = |t: &Trajectory| -> Vec<[f64; 3]> {
        let o = t.positions[0];
        t.positions
            .iter()
            .map(|p| [p[0] - o[0], p[1] - o[1], p[2] - o[2]])
            .collect()
    };
    let p = origin(pred);
    let g = origin(gt);
    let mut dot = 0.0;
    let mut norm2 = 0.0;
    let mut gt_norm2 = 0.0;
    for (a, b) in p.iter().zip(&g) {
        for k in 0..3 {
            dot += a[k] * b[k];
            norm2 += a[k] * a[k];
            gt_norm2 += b[k] * b[k];
        }
    }
    if norm2 == 0.0 {
        if gt_norm2 == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::DegenerateTrajectory);
    }
    let s = dot / norm2;
    let mut acc = 0.0;
    for (a, b) in p.iter().zip(&g) {
        let mut e2 = 0.0;
        for k in 0..3 {
            let d = s * a[k] - b[k];
            e2 += d * d;
        }
        acc += e2.sqrt();
    }
    Ok(acc / p.len() as f64)
}

/// Mean and standard deviation of [`ate`] over a set of snippets.
pub fn ate_over_snippets(snippets: &[(Trajectory, Trajectory)]) -> Result<(f64, f64)> {
    if snippets.is_empty() {
        return Err(Error::EmptyValidSet { what: "ate" });
    }
    let errors: Vec<f64> = snippets
        .iter()
        .map(|(p, g)| ate(p, g))
        .collect::<Result<_>>()?;
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / errors.len() as f64;
    Ok((mean, var.sqrt()))
}

/// Per-bin mean EPE, binned by the ground-truth residual magnitude
/// ||gt_full - gt_rigid||_2. Returns (bin_lo, bin_hi, mean_epe, count) for
/// non-empty bins.
pub fn epe_vs_residual_histogram(
    pred: &FlowField,
    gt_full: &FlowField,
    gt_rigid: &FlowField,
    bins: &[f64],
) -> Result<Vec<(f64, f64, f64, usize)>> {
    if !pred.same_shape(gt_full) || !pred.same_shape(gt_rigid) {
        return Err(Error::DimensionMismatch {
            what: "epe_vs_residual_histogram",
            expected_w: pred.width,
            expected_h: pred.height,
            got_w: gt_full.width,
            got_h: gt_full.height,
        });
    }
    if bins.len() < 2 {
        return Err(Error::InvalidConfig("need at least two bin edges".into()));
    }
    let mut acc = vec![0.0; bins.len() - 1];
    let mut count = vec![0usize; bins.len() - 1];
    let n = pred.width * pred.height;
    for i in 0..n {
        let ru = gt_full.u[i] - gt_rigid.u[i];
        let rv = gt_full.v[i] - gt_rigid.v[i];
        let rmag = (ru * ru + rv * rv).sqrt();
        let du = pred.u[i] - gt_full.u[i];
        let dv = pred.v[i] - gt_full.v[i];
        let epe = (du * du + dv * dv).sqrt();
        for b in 0..bins.len() - 1 {
            let hi_inclusive = b == bins.len() - 2;
            if rmag >= bins[b] && (rmag < bins[b + 1] || (hi_inclusive && rmag <= bins[b + 1])) {
                acc[b] += epe;
                count[b] += 1;
                break;
            }
        }
    }
    Ok((0..bins.len() - 1)
        .filter(|&b| count[b] > 0)
        .map(|b| (bins[b], bins[b + 1], acc[b] / count[b] as f64, count[b]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn depth_of(vals: &[f64], w: usize, h: usize) -> DepthMap {
        DepthMap::new(w, h, vals.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_zero_errors() {
        let gt = DepthMap::from_fn(6, 4, |x, y| 2.0 + (x + y) as f64).unwrap();
        let m = depth_metrics(&gt, &gt, None, 80.0, false).unwrap();
        assert_eq!(m.abs_rel, 0.0);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.delta1, 1.0);
    }

    #[test]
    fn constant_ratio_closed_form() {
        // pred = 1.2 * gt, no median scaling: abs_rel = 0.2 exactly,
        // rmse_log = ln 1.2, delta1 = 1.
        let gt = DepthMap::from_fn(5, 5, |x, y| 1.0 + ((x * 3 + y) % 7) as f64).unwrap();
        let pred = depth_of(
            &gt.data.iter().map(|v| v * 1.2).collect::<Vec<_>>(),
            5,
            5,
        );
        let m = depth_metrics(&pred, &gt, None, 1e6, false).unwrap();
        assert!((m.abs_rel - 0.2).abs() < 1e-12);
        assert!((m.rmse_log - 1.2f64.ln()).abs() < 1e-12);
        assert_eq!(m.delta1, 1.0);
    }

    #[test]
    fn median_scaling_cancels_global_scale() {
        let gt = DepthMap::from_fn(6, 6, |x, y| 3.0 + ((x + 2 * y) % 5) as f64).unwrap();
        let pred = depth_of(&gt.data.iter().map(|v| v * 2.0).collect::<Vec<_>>(), 6, 6);
        let m = depth_metrics(&pred, &gt, None, 1e6, true).unwrap();
        assert!(m.abs_rel < 1e-12);
        assert!(m.rmse < 1e-12);
        // And the metrics are invariant to any further positive rescaling.
        let pred2 = depth_of(&gt.data.iter().map(|v| v * 13.7).collect::<Vec<_>>(), 6, 6);
        let m2 = depth_metrics(&pred2, &gt, None, 1e6, true).unwrap();
        assert!((m.abs_rel - m2.abs_rel).abs() < 1e-12);
    }

    #[test]
    fn empty_valid_set_is_error() {
        let gt = DepthMap::constant(4, 4, 2.0);
        let zeros = Mask::zeros(4, 4);
        assert!(matches!(
            depth_metrics(&gt, &gt, Some(&zeros), 10.0, false),
            Err(Error::EmptyValidSet { .. })
        ));
    }

    #[test]
    fn epe_uniform_offset() {
        let gt = FlowField::uniform(8, 8, 1.0, -2.0);
        let pred = FlowField::uniform(8, 8, 4.0, 2.0);
        // offset (3, 4) -> EPE 5.
        let e = flow_epe(&pred, &gt, None).unwrap();
        assert!((e - 5.0).abs() < 1e-12);
    }

    #[test]
    fn epe_triangle_bound() {
        let a = FlowField::new(4, 4, (0..16).map(|i| i as f64 * 0.3).collect(), vec![0.5; 16])
            .unwrap();
        let b = FlowField::new(4, 4, (0..16).map(|i| (i % 5) as f64).collect(), vec![0.1; 16])
            .unwrap();
        let mid = FlowField::uniform(4, 4, 1.0, 1.0);
        let ab = flow_epe(&a, &b, None).unwrap();
        let am = flow_epe(&a, &mid, None).unwrap();
        let mb = flow_epe(&mid, &b, None).unwrap();
        assert!(ab <= am + mb + 1e-12);
    }

    #[test]
    fn ate_scale_alignment_exact() {
        let gt = Trajectory::new(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.5, 0.0],
            [2.0, 1.0, 0.1],
            [3.0, 1.2, 0.2],
            [4.0, 1.0, 0.3],
        ])
        .unwrap();
        let pred = Trajectory::new(gt.positions.iter().map(|p| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]).collect()).unwrap();
        let e = ate(&pred, &gt).unwrap();
        assert!(e < 1e-12);
    }

    #[test]
    fn ate_offset_after_origin_alignment() {
        // gt along x, pred offset by h in y from frame 1 on:
        // s* = 30/(30 + 4 h^2), per-frame error sqrt((s-1)^2 i^2 + s^2 h^2).
        let h = 0.5;
        let gt = Trajectory::new((0..5).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
        let pred = Trajectory::new(
            (0..5)
                .map(|i| [i as f64, if i > 0 { h } else { 0.0 }, 0.0])
                .collect(),
        )
        .unwrap();
        let s = 30.0 / (30.0 + 4.0 * h * h);
        let expected: f64 = (0..5)
            .map(|i| {
                let i = i as f64;
                let ey = if i > 0.0 { s * h } else { 0.0 };
                (((s - 1.0) * i).powi(2) + ey * ey).sqrt()
            })
            .sum::<f64>()
            / 5.0;
        let e = ate(&pred, &gt).unwrap();
        assert!(e > 0.0);
        assert!((e - expected).abs() < 1e-12);
    }

    #[test]
    fn ate_degenerate_prediction() {
        let gt = Trajectory::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let pred = Trajectory::new(vec![[5.0, 5.0, 5.0], [5.0, 5.0, 5.0]]).unwrap();
        assert!(matches!(ate(&pred, &gt), Err(Error::DegenerateTrajectory)));
    }

    #[test]
    fn histogram_zero_for_perfect_prediction() {
        let gt_full = FlowField::uniform(6, 6, 2.0, 0.0);
        let gt_rigid = FlowField::uniform(6, 6, 1.0, 0.0);
        let bins = [0.0, 0.5, 1.0, 2.0];
        let h = epe_vs_residual_histogram(&gt_full, &gt_full, &gt_rigid, &bins).unwrap();
        // All pixels share residual magnitude 1.0 -> one non-empty bin.
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].3, 36);
        assert_eq!(h[0].2, 0.0);
    }

    #[test]
    fn histogram_epe_matches_residual_when_pred_is_rigid() {
        let gt_rigid = FlowField::uniform(6, 6, 1.0, 0.0);
        let mut gt_full = gt_rigid.clone();
        for i in 0..18 {
            gt_full.u[i] += 3.0;
        }
        let bins = [0.0, 1.0, 2.0, 4.0];
        let h = epe_vs_residual_histogram(&gt_rigid, &gt_full, &gt_rigid, &bins).unwrap();
        for (lo, hi, epe, _) in h {
            if lo >= 2.0 {
                assert!((epe - 3.0).abs() < 1e-12);
            } else {
                assert!(epe < 1e-12);
                let _ = hi;
            }
        }
    }

    #[test]
    fn metrics_permutation_invariant() {
        let gt = DepthMap::from_fn(4, 4, |x, y| 1.0 + (x * 4 + y) as f64).unwrap();
        let pred = DepthMap::from_fn(4, 4, |x, y| 1.5 + (x * 4 + y) as f64).unwrap();
        let m1 = depth_metrics(&pred, &gt, None, 1e6, false).unwrap();
        // Reverse both in the same way: a relabeling of pixels.
        let rev = |d: &DepthMap| {
            let mut v = d.data.clone();
            v.reverse();
            DepthMap::new(4, 4, v).unwrap()
        };
        let m2 = depth_metrics(&rev(&pred), &rev(&gt), None, 1e6, false).unwrap();
        assert!((m1.abs_rel - m2.abs_rel).abs() < 1e-15);
        assert!((m1.rmse - m2.rmse).abs() < 1e-15);
    }
}
