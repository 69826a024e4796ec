//! Finite-difference audits of every differentiable operation.
//!
//! Each op is checked on seeded random 8x12 instances in double precision:
//! analytic reverse-mode gradients against central finite differences, with
//! sampling coordinates kept at least 0.25 from integer knots and flow
//! differences bounded away from the absolute-value kink. All randomness is
//! ChaCha-seeded, so a passing audit is reproducible bit-for-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraIntrinsics;
use crate::consistency::{flow_difference, flow_difference_vjp, inlier_mask, ConsistencyParams};
use crate::grid::{DepthMap, FlowField, Grid, Image, Mask};
use crate::loss::{
    edge_aware_smoothness, edge_aware_smoothness_vjp, geometric_consistency_vjp,
    photometric_loss, photometric_loss_vjp,
};
use crate::objective::{adjacent_pairs, ObjectiveConfig, ObjectiveContext, Stage, Variables};
use crate::rigid::{rigid_flow, rigid_flow_vjp};
use crate::sample::{bilinear_sample, bilinear_sample_grad};
use crate::se3::PoseSE3;
use crate::warp::{inverse_warp, inverse_warp_vjp, WarpResult};

pub const DEFAULT_TRIALS: usize = 20;
pub const PASS_THRESHOLD: f64 = 1e-4;
const W: usize = 12;
const H: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    BilinearSample,
    InverseWarp,
    RigidFlow,
    Photometric,
    Smoothness,
    Consistency,
    TotalObjective,
}

impl Op {
    pub const ALL: [Op; 7] = [
        Op::BilinearSample,
        Op::InverseWarp,
        Op::RigidFlow,
        Op::Photometric,
        Op::Smoothness,
        Op::Consistency,
        Op::TotalObjective,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Op::BilinearSample => "bilinear_sample",
            Op::InverseWarp => "inverse_warp",
            Op::RigidFlow => "rigid_flow",
            Op::Photometric => "photometric",
            Op::Smoothness => "smoothness",
            Op::Consistency => "consistency",
            Op::TotalObjective => "total_objective",
        }
    }

    pub fn from_name(name: &str) -> Option<Op> {
        Op::ALL.iter().copied().find(|o| o.name() == name)
    }
}

#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: Op,
    pub trials: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub ops: Vec<OpReport>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.ops {
            out.push_str(&format!(
                "{:<16} trials={:<3} checked={:<6} max_rel_err={:.3e} {}\n",
                r.op.name(),
                r.trials,
                r.checked,
                r.max_rel_err,
                if r.pass { "PASS" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "gradcheck: {}\n",
            if self.pass { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Gradient magnitudes below this are treated as zero agreement; finite
/// differences bottom out around 1e-11 at the steps used here.
const FLOOR: f64 = 1e-7;

struct ErrTracker {
    max_rel: f64,
    checked: usize,
    corrupt: f64,
}

impl ErrTracker {
    fn new(corrupt: bool) -> Self {
        ErrTracker {
            max_rel: 0.0,
            checked: 0,
            // The corruption hook inflates analytic gradients by 10%, which a
            // working detector must flag.
            corrupt: if corrupt { 1.1 } else { 1.0 },
        }
    }

    fn record(&mut self, analytic: f64, fd: f64) {
        let a = analytic * self.corrupt;
        let denom = a.abs().max(fd.abs());
        self.checked += 1;
        if denom > FLOOR {
            self.max_rel = self.max_rel.max((a - fd).abs() / denom);
        }
    }

    fn report(self, op: Op, trials: usize) -> OpReport {
        OpReport {
            op,
            trials,
            checked: self.checked,
            max_rel_err: self.max_rel,
            pass: self.max_rel < PASS_THRESHOLD,
        }
    }
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, channels: usize) -> Image {
    // Values bounded away from [0,1] so finite differences stay two-sided
    // under the construction clamp.
    Image::from_fn(w, h, channels, |_, _, _| 0.1 + 0.8 * rng.gen::<f64>()).unwrap()
}

/// Smooth low-frequency field; the difference between a value and the
/// bilinear blend of its neighbors stays small.
fn smooth_field(rng: &mut ChaCha8Rng, w: usize, h: usize, amp: f64) -> Vec<f64> {
    let (a, b, c) = (rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
    (0..w * h)
        .map(|i| {
            let x = (i % w) as f64 / w as f64;
            let y = (i / w) as f64 / h as f64;
            amp * ((2.0 * x + a * 3.0).sin() * 0.6 + (1.5 * y + b * 2.0).cos() * 0.4 + c - 0.5)
        })
        .collect()
}

/// Fractional flow whose sample positions stay >= 0.25 from integer knots.
fn off_knot_flow(rng: &mut ChaCha8Rng, w: usize, h: usize) -> FlowField {
    let gen = |rng: &mut ChaCha8Rng| {
        (0..w * h)
            .map(|_| {
                let int_part = rng.gen_range(-1i32..=1) as f64;
                int_part + 0.25 + 0.5 * rng.gen::<f64>()
            })
            .collect()
    };
    FlowField::new(w, h, gen(rng), gen(rng)).unwrap()
}

fn check_bilinear(rng: &mut ChaCha8Rng, trials: usize, corrupt: bool) -> OpReport {
    let mut t = ErrTracker::new(corrupt);
    let eps = 1e-5;
    for _ in 0..trials {
        let img = random_image(rng, W, H, 1);
        for _ in 0..8 {
            let x = rng.gen_range(0..W - 1) as f64 + 0.25 + 0.5 * rng.gen::<f64>();
            let y = rng.gen_range(0..H - 1) as f64 + 0.25 + 0.5 * rng.gen::<f64>();
            let (_, dx, dy, _) = bilinear_sample_grad(img.data(), W, H, 1, 0, x, y);
            let fx = (bilinear_sample(img.data(), W, H, 1, x + eps, y).0[0]
                - bilinear_sample(img.data(), W, H, 1, x - eps, y).0[0])
                / (2.0 * eps);
            let fy = (bilinear_sample(img.data(), W, H, 1, x, y + eps).0[0]
                - bilinear_sample(img.data(), W, H, 1, x, y - eps).0[0])
                / (2.0 * eps);
            t.record(dx, fx);
            t.record(dy, fy);
        }
    }
    t.report(Op::BilinearSample, trials)
}

fn check_inverse_warp(rng: &mut ChaCha8Rng, trials: usize, corrupt: bool) -> OpReport {
    let mut t = ErrTracker::new(corrupt);
    let eps = 1e-5;
    for _ in 0..trials {
        let img = random_image(rng, W, H, 1);
        let flow = off_knot_flow(rng, W, H);
        let up = Grid::from_fn(W, H, 1, |_, _, _| rng.gen::<f64>() - 0.5);
        let (gf, gs) = inverse_warp_vjp(&img, &flow, &up).unwrap();
        let loss = |im: &Image, fl: &FlowField| -> f64 {
            inverse_warp(im, fl)
                .unwrap()
                .warped
                .data()
                .iter()
                .zip(&up.data)
                .map(|(a, b)| a * b)
                .sum()
        };
        for _ in 0..6 {
            let i = rng.gen_range(0..W * H);
            let mut fp = flow.clone();
            let mut fm = flow.clone();
            fp.u[i] += eps;
            fm.u[i] -= eps;
            t.record(gf.u[i], (loss(&img, &fp) - loss(&img, &fm)) / (2.0 * eps));
            let mut fp = flow.clone();
            let mut fm = flow.clone();
            fp.v[i] += eps;
            fm.v[i] -= eps;
            t.record(gf.v[i], (loss(&img, &fp) - loss(&img, &fm)) / (2.0 * eps));
            let mut dp = img.data().to_vec();
            let mut dm = img.data().to_vec();
            dp[i] += eps;
            dm[i] -= eps;
            let fd = (loss(&Image::new(W, H, 1, dp).unwrap(), &flow)
                - loss(&Image::new(W, H, 1, dm).unwrap(), &flow))
                / (2.0 * eps);
            t.record(gs.data[i], fd);
        }
    }
    t.report(Op::InverseWarp, trials)
}

fn random_pose(rng: &mut ChaCha8Rng) -> PoseSE3 {
    PoseSE3::new(
        [
            0.05 * (rng.gen::<f64>() - 0.5),
            0.05 * (rng.gen::<f64>() - 0.5),
            0.05 * (rng.gen::<f64>() - 0.5),
        ],
        [
            0.4 * (rng.gen::<f64>() - 0.5),
            0.4 * (rng.gen::<f64>() - 0.5),
            0.2 * (rng.gen::<f64>() - 0.5),
        ],
    )
}

fn check_rigid_flow(rng: &mut ChaCha8Rng, trials: usize, corrupt: bool) -> OpReport {
    let mut t = ErrTracker::new(corrupt);
    let eps = 1e-6;
    let k = CameraIntrinsics::new(20.0, 20.0, 5.5, 3.5).unwrap();
    for _ in 0..trials {
        let depth = DepthMap::from_fn(W, H, |_, _| 5.0 + 5.0 * rng.gen::<f64>()).unwrap();
        let pose = random_pose(rng);
        let up = FlowField::new(
            W,
            H,
            (0..W * H).map(|_| rng.gen::<f64>() - 0.5).collect(),
            (0..W * H).map(|_| rng.gen::<f64>() - 0.5).collect(),
        )
        .unwrap();
        let grads = rigid_flow_vjp(&depth, &pose, &k, &up).unwrap();
        let loss = |d: &DepthMap, p: &PoseSE3| -> f64 {
            let (f, _) = rigid_flow(d, p, &k).unwrap();
            f.u.iter()
                .zip(&up.u)
                .chain(f.v.iter().zip(&up.v))
                .map(|(a, b)| a * b)
                .sum()
        };
        for _ in 0..4 {
            let i = rng.gen_range(0..W * H);
            let mut dp = depth.clone();
            let mut dm = depth.clone();
            dp.data[i] += eps;
            dm.data[i] -= eps;
            t.record(
                grads.depth.data[i],
                (loss(&dp, &pose) - loss(&dm, &pose)) / (2.0 * eps),
            );
        }
        for j in 0..3 {
            let mut pp = pose;
            let mut pm = pose;
            pp.rotation[j] += eps;
            pm.rotation[j] -= eps;
            t.record(
                grads.rotation[j],
                (loss(&depth, &pp) - loss(&depth, &pm)) / (2.0 * eps),
            );
            let mut pp = pose;
            let mut pm = pose;
            pp.translation[j] += eps;
            pm.translation[j] -= eps;
            t.record(
                grads.translation[j],
                (loss(&depth, &pp) - loss(&depth, &pm)) / (2.0 * eps),
            );
        }
    }
    t.report(Op::RigidFlow, trials)
}

fn check_photometric(rng: &mut ChaCha8Rng, trials: usize, corrupt: bool) -> OpReport {
    let mut t = ErrTracker::new(corrupt);
    let eps = 1e-6;
    for _ in 0..trials {
        let target = random_image(rng, W, H, 1);
        let warped_img = random_image(rng, W, H, 1);
        let warped = WarpResult {
            warped: warped_img.clone(),
            valid: Mask::ones(W, H),
        };
        let (_, grad) = photometric_loss_vjp(&target, &warped, None, 0.85).unwrap();
        for _ in 0..8 {
            let i = rng.gen_range(0..W * H);
            let mut dp = warped_img.data().to_vec();
            let mut dm = warped_img.data().to_vec();
            dp[i] += eps;
            dm[i] -= eps;
            let lp = photometric_loss(
                &target,
                &WarpResult {
                    warped: Image::new(W, H, 1, dp).unwrap(),
                    valid: Mask::ones(W, H),
                },
                None,
                0.85,
            )
            .unwrap();
            let lm = photometric_loss(
                &target,
                &WarpResult {
                    warped: Image::new(W, H, 1, dm).unwrap(),
                    valid: Mask::ones(W, H),
                },
                None,
                0.85,
            )
            .unwrap();
            t.record(grad.data[i], (lp - lm) / (2.0 * eps));
        }
    }
    t.report(Op::Photometric, trials)
}

fn check_smoothness(rng: &mut ChaCha8Rng, trials: usize, corrupt: bool) -> OpReport {
    let mut t = ErrTracker::new(corrupt);
    let eps = 1e-6;
    for trial in 0..trials {
        let guide = random_image(rng, W, H, 1);
        let channels = if trial % 2 == 0 { 1 } else { 2 };
        let field = Grid::from_fn(W, H, channels, |_, _, _| 4.0 * rng.gen::<f64>());
        let (_, grad) = edge_aware_smoothness_vjp(&field, &guide, 1.0).unwrap();
        for _ in 0..8 {
            let i = rng.gen_range(0..field.data.len());
            let mut fp = field.clone();
            let mut fm = field.clone();
            fp.data[i] += eps;
            fm.data[i] -= eps;
            let fd = (edge_aware_smoothness(&fp, &guide).unwrap()
                - edge_aware_smoothness(&fm, &guide).unwrap())
                / (2.0 * eps);
            t.record(grad.data[i], fd);
        }
    }
    t.report(Op::Smoothness, trials)
}

fn check_consistency(rng: &mut ChaCha8Rng, trials: usize, corrupt: bool) -> OpReport {
    let mut t = ErrTracker::new(corrupt);
    let eps = 1e-5;
    for _ in 0..trials {
        // Smooth forward flow; backward flow = -fwd + positive offset keeps
        // every |delta| component well above the kink at zero.
        let fu = smooth_field(rng, W, H, 0.8);
        let fv = smooth_field(rng, W, H, 0.8);
        let fwd = FlowField::new(W, H, fu.clone(), fv.clone()).unwrap();
        let off_u = 0.4 + 0.4 * rng.gen::<f64>();
        let off_v = 0.4 + 0.4 * rng.gen::<f64>();
        let bwd = FlowField::new(
            W,
            H,
            fu.iter().map(|u| -u + off_u).collect(),
            fv.iter().map(|v| -v + off_v).collect(),
        )
        .unwrap();
        // The mask is an indicator (piecewise constant): hold it fixed for
        // the differentiable part of the check.
        let (delta0, valid0) = flow_difference(&fwd, &bwd).unwrap();
        let mask = inlier_mask(&delta0, &fwd, &valid0, &ConsistencyParams::default());
        let loss = |f: &FlowField, b: &FlowField| -> f64 {
            let (d, _) = flow_difference(f, b).unwrap();
            let wsum: f64 = mask.data.iter().sum();
            d.u.iter()
                .zip(&d.v)
                .zip(&mask.data)
                .map(|((u, v), m)| m * (u.abs() + v.abs()))
                .sum::<f64>()
                / wsum
        };
        let (_, g_delta) = {
            let (d, _) = flow_difference(&fwd, &bwd).unwrap();
            geometric_consistency_vjp(&d, &mask, 1.0).unwrap()
        };
        let (gf, gb) = flow_difference_vjp(&fwd, &bwd, &g_delta).unwrap();
        for _ in 0..6 {
            let i = rng.gen_range(0..W * H);
            let mut fp = fwd.clone();
            let mut fm = fwd.clone();
            fp.u[i] += eps;
            fm.u[i] -= eps;
            t.record(gf.u[i], (loss(&fp, &bwd) - loss(&fm, &bwd)) / (2.0 * eps));
            let mut bp = bwd.clone();
            let mut bm = bwd.clone();
            bp.v[i] += eps;
            bm.v[i] -= eps;
            t.record(gb.v[i], (loss(&fwd, &bp) - loss(&fwd, &bm)) / (2.0 * eps));
        }
    }
    t.report(Op::Consistency, trials)
}

fn check_total_objective(rng: &mut ChaCha8Rng, trials: usize, corrupt: bool) -> OpReport {
    let mut t = ErrTracker::new(corrupt);
    let eps = 1e-6;
    let k = CameraIntrinsics::new(20.0, 20.0, 5.5, 3.5).unwrap();
    let cfg = ObjectiveConfig {
        stage: Stage::Joint,
        ..Default::default()
    };
    for _ in 0..trials {
        let frames: Vec<Image> = (0..2).map(|_| random_smooth_image(rng, W, H)).collect();
        let ctx =
            ObjectiveContext::new(&frames, k, adjacent_pairs(2), cfg.clone()).unwrap();
        let vars = Variables {
            log_depth: (0..2)
                .map(|_| Grid::from_fn(W, H, 1, |_, _, _| (7.0 + 2.0 * rng.gen::<f64>()).ln()))
                .collect(),
            poses: (0..2).map(|_| random_pose(rng)).collect(),
            residual: (0..2)
                .map(|_| {
                    FlowField::new(
                        W,
                        H,
                        smooth_field(rng, W, H, 0.3),
                        smooth_field(rng, W, H, 0.3),
                    )
                    .unwrap()
                })
                .collect(),
        };
        let (_, grads) = ctx.evaluate(&vars, true).unwrap();
        let g = grads.unwrap();
        let objective = |v: &Variables| -> f64 {
            let (b, _) = ctx.evaluate(v, false).unwrap();
            Stage::Joint.objective(&b.terms, &cfg.weights)
        };
        for _ in 0..4 {
            let f = rng.gen_range(0..2);
            let i = rng.gen_range(0..W * H);
            let mut vp = vars.clone();
            let mut vm = vars.clone();
            vp.log_depth[f].data[i] += eps;
            vm.log_depth[f].data[i] -= eps;
            t.record(
                g.log_depth[f].data[i],
                (objective(&vp) - objective(&vm)) / (2.0 * eps),
            );
        }
        for p in 0..2 {
            let j = rng.gen_range(0..3);
            let mut vp = vars.clone();
            let mut vm = vars.clone();
            vp.poses[p].rotation[j] += eps;
            vm.poses[p].rotation[j] -= eps;
            t.record(
                g.rotation[p][j],
                (objective(&vp) - objective(&vm)) / (2.0 * eps),
            );
            let mut vp = vars.clone();
            let mut vm = vars.clone();
            vp.poses[p].translation[j] += eps;
            vm.poses[p].translation[j] -= eps;
            t.record(
                g.translation[p][j],
                (objective(&vp) - objective(&vm)) / (2.0 * eps),
            );
        }
        for _ in 0..4 {
            let p = rng.gen_range(0..2);
            let i = rng.gen_range(0..W * H);
            let mut vp = vars.clone();
            let mut vm = vars.clone();
            vp.residual[p].u[i] += eps;
            vm.residual[p].u[i] -= eps;
            t.record(
                g.residual[p].u[i],
                (objective(&vp) - objective(&vm)) / (2.0 * eps),
            );
        }
    }
    t.report(Op::TotalObjective, trials)
}

fn random_smooth_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let (a, b, c, d) = (
        rng.gen::<f64>() * 6.0,
        rng.gen::<f64>() * 6.0,
        rng.gen::<f64>() * 6.0,
        rng.gen::<f64>() * 6.0,
    );
    Image::from_fn(w, h, 1, |x, y, _| {
        let fx = x as f64 / w as f64;
        let fy = y as f64 / h as f64;
        0.5 + 0.2 * (a + 5.0 * fx + 2.0 * fy).sin() + 0.15 * (b + 3.0 * fy + c * fx).cos()
            + 0.05 * (d + 9.0 * fx).sin()
    })
    .unwrap()
}

/// Runs the audit. `ops` filters which operations run (all by default);
/// `corrupt` names an op whose analytic gradient is deliberately inflated,
/// exercising the detector itself.
pub fn run_gradcheck(
    seed: u64,
    trials: usize,
    ops: Option<&[Op]>,
    corrupt: Option<Op>,
) -> GradCheckReport {
    let selected: Vec<Op> = match ops {
        Some(list) => list.to_vec(),
        None => Op::ALL.to_vec(),
    };
    let mut reports = Vec::new();
    for (i, op) in selected.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64 * 7919));
        let bad = corrupt == Some(*op);
        let r = match op {
            Op::BilinearSample => check_bilinear(&mut rng, trials, bad),
            Op::InverseWarp => check_inverse_warp(&mut rng, trials, bad),
            Op::RigidFlow => check_rigid_flow(&mut rng, trials, bad),
            Op::Photometric => check_photometric(&mut rng, trials, bad),
            Op::Smoothness => check_smoothness(&mut rng, trials, bad),
            Op::Consistency => check_consistency(&mut rng, trials, bad),
            Op::TotalObjective => check_total_objective(&mut rng, trials, bad),
        };
        reports.push(r);
    }
    let pass = reports.iter().all(|r| r.pass);
    GradCheckReport { ops: reports, pass }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_audit_passes() {
        let report = run_gradcheck(42, 5, None, None);
        assert!(report.pass, "{}", report.to_text());
    }

    #[test]
    fn corrupted_gradient_detected() {
        let report = run_gradcheck(42, 3, Some(&[Op::InverseWarp]), Some(Op::InverseWarp));
        assert!(!report.pass);
    }
}
