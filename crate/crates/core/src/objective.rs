//! The full multi-scale training objective and its gradients.
//!
//! For every ordered frame pair (t, s) and pyramid scale, the objective sums
//! the rigid warping loss, depth smoothness, full-flow warping loss, flow
//! smoothness and geometric consistency:
//!
//!   total = sum_l sum_(t,s) [ L_rw + lambda_ds L_ds + L_fw
//!                             + lambda_fs L_fs + lambda_gc L_gc ]
//!
//! The rigid terms see only the rigid flow; the full-flow terms see
//! rigid + residual. L_fw and L_gc are gated per pixel by the adaptive
//! consistency mask (recomputed on every evaluation and treated as a
//! constant in the gradient); L_fs applies everywhere, outliers included.
//! Every reduction runs in row-major order, so results are reproducible.

use crate::camera::CameraIntrinsics;
use crate::consistency::{flow_difference, flow_difference_vjp, inlier_mask, ConsistencyParams};
use crate::error::{Error, Result};
use crate::grid::{DepthMap, FlowField, Grid, Image, Mask};
use crate::loss::{
    edge_aware_smoothness_vjp, geometric_consistency_vjp, photometric_loss_vjp, LossBreakdown,
    LossTerms, LossWeights,
};
use crate::pyramid::{avg_pool2, avg_pool2_adjoint, build_image_pyramid, max_scales, Pyramid};
use crate::rigid::{rigid_flow, rigid_flow_vjp};
use crate::se3::PoseSE3;
use crate::warp::{inverse_warp, inverse_warp_vjp};

/// Ordered frame pair: losses are formed on the target frame, warping the
/// source into it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramePair {
    pub target: usize,
    pub source: usize,
}

/// All adjacent pairs in both directions: (0,1), (1,0), (1,2), (2,1), ...
pub fn adjacent_pairs(num_frames: usize) -> Vec<FramePair> {
    let mut pairs = Vec::new();
    for i in 0..num_frames.saturating_sub(1) {
        pairs.push(FramePair {
            target: i,
            source: i + 1,
        });
        pairs.push(FramePair {
            target: i + 1,
            source: i,
        });
    }
    pairs
}

/// Index of the opposite direction for every pair.
fn reverse_indices(pairs: &[FramePair]) -> Result<Vec<usize>> {
    let mut rev = vec![usize::MAX; pairs.len()];
    for (i, p) in pairs.iter().enumerate() {
        for (j, q) in pairs.iter().enumerate() {
            if q.target == p.source && q.source == p.target {
                rev[i] = j;
                break;
            }
        }
        if rev[i] == usize::MAX {
            return Err(Error::InvalidConfig(format!(
                "pair ({}, {}) has no reverse direction",
                p.target, p.source
            )));
        }
    }
    Ok(rev)
}

/// The optimized quantities: per-frame log-depth, per-pair pose and
/// per-pair residual flow (all at the evaluation resolution).
#[derive(Debug, Clone)]
pub struct Variables {
    pub log_depth: Vec<Grid>,
    pub poses: Vec<PoseSE3>,
    pub residual: Vec<FlowField>,
}

impl Variables {
    /// Zero-residual, identity-pose state with constant depth.
    pub fn flat(num_frames: usize, num_pairs: usize, w: usize, h: usize, depth: f64) -> Self {
        let log_d = depth.ln();
        Variables {
            log_depth: (0..num_frames)
                .map(|_| Grid::from_fn(w, h, 1, |_, _, _| log_d))
                .collect(),
            poses: vec![PoseSE3::identity(); num_pairs],
            residual: (0..num_pairs).map(|_| FlowField::zeros(w, h)).collect(),
        }
    }
}

/// Which loss terms drive the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// L_rw + lambda_ds L_ds (depth and pose).
    Rigid,
    /// L_fw + lambda_fs L_fs + lambda_gc L_gc (residual flow).
    Residual,
    /// All five terms.
    Joint,
}

impl Stage {
    pub fn rigid_terms(&self) -> bool {
        matches!(self, Stage::Rigid | Stage::Joint)
    }
    pub fn residual_terms(&self) -> bool {
        matches!(self, Stage::Residual | Stage::Joint)
    }

    /// The stage-restricted objective value from a full term set.
    pub fn objective(&self, terms: &LossTerms, w: &LossWeights) -> f64 {
        let mut v = 0.0;
        if self.rigid_terms() {
            v += terms.l_rw + w.lambda_ds * terms.l_ds;
        }
        if self.residual_terms() {
            v += terms.l_fw + w.lambda_fs * terms.l_fs + w.lambda_gc * terms.l_gc;
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub consistency: ConsistencyParams,
    /// Ablation switch: force the consistency mask to all-ones.
    pub naive_consistency: bool,
    pub stage: Stage,
    /// Pyramid levels stop before either dimension would drop below this.
    pub min_level_dim: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            weights: LossWeights::default(),
            consistency: ConsistencyParams::default(),
            naive_consistency: false,
            stage: Stage::Joint,
            min_level_dim: 3,
        }
    }
}

/// Gradients of the stage objective w.r.t. every variable group.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub log_depth: Vec<Grid>,
    pub rotation: Vec<[f64; 3]>,
    pub translation: Vec<[f64; 3]>,
    pub residual: Vec<FlowField>,
}

impl Gradients {
    fn zeros(num_frames: usize, num_pairs: usize, w: usize, h: usize) -> Self {
        Gradients {
            log_depth: (0..num_frames).map(|_| Grid::zeros(w, h, 1)).collect(),
            rotation: vec![[0.0; 3]; num_pairs],
            translation: vec![[0.0; 3]; num_pairs],
            residual: (0..num_pairs).map(|_| FlowField::zeros(w, h)).collect(),
        }
    }

    /// Index of the first non-finite component across all groups, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        let mut idx = 0;
        for g in &self.log_depth {
            for v in &g.data {
                if !v.is_finite() {
                    return Some(idx);
                }
                idx += 1;
            }
        }
        for r in self.rotation.iter().chain(self.translation.iter()) {
            for v in r {
                if !v.is_finite() {
                    return Some(idx);
                }
                idx += 1;
            }
        }
        for f in &self.residual {
            for v in f.u.iter().chain(f.v.iter()) {
                if !v.is_finite() {
                    return Some(idx);
                }
                idx += 1;
            }
        }
        None
    }
}

/// Precomputed inputs for repeated objective evaluations at one resolution.
pub struct ObjectiveContext {
    pub frames: Vec<Pyramid<Image>>,
    pub intrinsics: CameraIntrinsics,
    pub pairs: Vec<FramePair>,
    reverse: Vec<usize>,
    pub num_scales: usize,
    pub width: usize,
    pub height: usize,
    pub cfg: ObjectiveConfig,
}

impl ObjectiveContext {
    pub fn new(
        frames: &[Image],
        intrinsics: CameraIntrinsics,
        pairs: Vec<FramePair>,
        cfg: ObjectiveConfig,
    ) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidConfig("need at least two frames".into()));
        }
        cfg.weights.validate()?;
        cfg.consistency.validate()?;
        let (w, h) = (frames[0].width(), frames[0].height());
        for f in frames {
            if f.width() != w || f.height() != h {
                return Err(Error::DimensionMismatch {
                    what: "objective frames",
                    expected_w: w,
                    expected_h: h,
                    got_w: f.width(),
                    got_h: f.height(),
                });
            }
        }
        for p in &pairs {
            if p.target >= frames.len() || p.source >= frames.len() {
                return Err(Error::InvalidConfig(format!(
                    "pair ({}, {}) out of range for {} frames",
                    p.target,
                    p.source,
                    frames.len()
                )));
            }
        }
        let reverse = reverse_indices(&pairs)?;
        let num_scales = max_scales(w, h, cfg.weights.num_scales, cfg.min_level_dim.max(1));
        let frame_pyramids = frames
            .iter()
            .map(|f| build_image_pyramid(f, num_scales))
            .collect::<Result<Vec<_>>>()?;
        Ok(ObjectiveContext {
            frames: frame_pyramids,
            intrinsics,
            pairs,
            reverse,
            num_scales,
            width: w,
            height: h,
            cfg,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    fn check_vars(&self, vars: &Variables) -> Result<()> {
        if vars.log_depth.len() != self.frames.len()
            || vars.poses.len() != self.pairs.len()
            || vars.residual.len() != self.pairs.len()
        {
            return Err(Error::InvalidConfig(
                "variable group counts do not match frames/pairs".into(),
            ));
        }
        for g in &vars.log_depth {
            if g.width != self.width || g.height != self.height {
                return Err(Error::DimensionMismatch {
                    what: "log_depth",
                    expected_w: self.width,
                    expected_h: self.height,
                    got_w: g.width,
                    got_h: g.height,
                });
            }
        }
        for f in &vars.residual {
            if f.width != self.width || f.height != self.height {
                return Err(Error::DimensionMismatch {
                    what: "residual flow",
                    expected_w: self.width,
                    expected_h: self.height,
                    got_w: f.width,
                    got_h: f.height,
                });
            }
        }
        Ok(())
    }

    /// Forward (and optionally reverse) pass. The breakdown always carries
    /// all five terms; the gradient covers the stage-active terms only.
    pub fn evaluate(
        &self,
        vars: &Variables,
        want_grads: bool,
    ) -> Result<(LossBreakdown, Option<Gradients>)> {
        self.check_vars(vars)?;
        let cfg = &self.cfg;
        let n_frames = self.frames.len();
        let n_pairs = self.pairs.len();
        let scales = self.num_scales;

        // Depth pyramids from exp(log_depth); every level kept for chaining.
        let mut depth_levels: Vec<Vec<Grid>> = Vec::with_capacity(n_frames);
        for ld in &vars.log_depth {
            let mut d0 = ld.clone();
            for v in &mut d0.data {
                *v = v.exp();
            }
            let mut levels = vec![d0];
            for l in 1..scales {
                let next = avg_pool2(&levels[l - 1]);
                levels.push(next);
            }
            depth_levels.push(levels);
        }
        // Residual pyramids: average pool then halve the vectors.
        let mut res_levels: Vec<Vec<FlowField>> = Vec::with_capacity(n_pairs);
        for r in &vars.residual {
            let mut levels = vec![r.clone()];
            for _ in 1..scales {
                let prev = levels.last().unwrap();
                let mut gu = avg_pool2(&Grid::from_vec(prev.width, prev.height, 1, prev.u.clone()));
                let mut gv = avg_pool2(&Grid::from_vec(prev.width, prev.height, 1, prev.v.clone()));
                gu.scale(0.5);
                gv.scale(0.5);
                levels.push(FlowField::new(gu.width, gu.height, gu.data, gv.data)?);
            }
            res_levels.push(levels);
        }

        let mut per_scale = Vec::with_capacity(scales);
        let mut grads =
            want_grads.then(|| Gradients::zeros(n_frames, n_pairs, self.width, self.height));
        // Per-level gradient accumulators, folded down after the scale loop.
        let mut g_depth: Vec<Vec<Grid>> = Vec::new();
        let mut g_res: Vec<Vec<FlowField>> = Vec::new();
        if want_grads {
            for levels in &depth_levels {
                g_depth.push(
                    levels
                        .iter()
                        .map(|d| Grid::zeros(d.width, d.height, 1))
                        .collect(),
                );
            }
            for levels in &res_levels {
                g_res.push(
                    levels
                        .iter()
                        .map(|f| FlowField::zeros(f.width, f.height))
                        .collect(),
                );
            }
        }

        let w_ds = cfg.weights.lambda_ds;
        let w_fs = cfg.weights.lambda_fs;
        let w_gc = cfg.weights.lambda_gc;
        let rigid_active = cfg.stage.rigid_terms();
        let residual_active = cfg.stage.residual_terms();

        for l in 0..scales {
            let k_l = self.intrinsics.at_level(l);
            // Flows for every pair first; consistency needs both directions.
            let mut f_rig = Vec::with_capacity(n_pairs);
            let mut rig_valid = Vec::with_capacity(n_pairs);
            let mut f_full = Vec::with_capacity(n_pairs);
            for (pi, pair) in self.pairs.iter().enumerate() {
                let d = &depth_levels[pair.target][l];
                let depth = DepthMap::new(d.width, d.height, d.data.clone())?;
                let (fr, valid) = rigid_flow(&depth, &vars.poses[pi], &k_l)?;
                f_full.push(fr.add(&res_levels[pi][l]));
                f_rig.push(fr);
                rig_valid.push(valid);
            }

            let mut terms = LossTerms::default();
            for (pi, pair) in self.pairs.iter().enumerate() {
                let target = self.frames[pair.target].level(l);
                let source = self.frames[pair.source].level(l);
                let qi = self.reverse[pi];

                let (delta, delta_valid) = flow_difference(&f_full[pi], &f_full[qi])?;
                let inlier = if cfg.naive_consistency {
                    Mask::ones(delta.width, delta.height)
                } else {
                    inlier_mask(&delta, &f_full[pi], &delta_valid, &cfg.consistency)
                };

                let warp_rig = inverse_warp(source, &f_rig[pi])?;
                let (l_rw, g_warp_rig) = photometric_loss_vjp(
                    target,
                    &warp_rig,
                    Some(&rig_valid[pi]),
                    cfg.weights.alpha_ssim,
                )?;
                let d_grid = &depth_levels[pair.target][l];
                let (l_ds, g_ds) = edge_aware_smoothness_vjp(d_grid, target, 1.0)?;

                let fw_mask = rig_valid[pi].intersect(&inlier);
                let warp_full = inverse_warp(source, &f_full[pi])?;
                let (l_fw, g_warp_full) = photometric_loss_vjp(
                    target,
                    &warp_full,
                    Some(&fw_mask),
                    cfg.weights.alpha_ssim,
                )?;
                let full_grid = flow_to_grid(&f_full[pi]);
                let (l_fs, g_fs) = edge_aware_smoothness_vjp(&full_grid, target, 1.0)?;
                let (l_gc, g_gc) = geometric_consistency_vjp(&delta, &inlier, 1.0)?;

                terms.add(&LossTerms {
                    l_rw,
                    l_ds,
                    l_fw,
                    l_fs,
                    l_gc,
                });

                if grads.is_none() {
                    continue;
                }

                // Cotangent on this pair's full flow from the residual-stage
                // terms; the reverse pair picks up the consistency scatter.
                let mut g_full = FlowField::zeros(delta.width, delta.height);
                // Cotangent reaching the rigid flow only (L_rw path).
                let mut g_rig_only = FlowField::zeros(delta.width, delta.height);

                if residual_active {
                    let (gf, _) = inverse_warp_vjp(source, &f_full[pi], &g_warp_full)?;
                    add_flow(&mut g_full, &gf, 1.0);
                    add_flow(&mut g_full, &grid_to_flow(&g_fs), w_fs);
                    let mut g_delta = g_gc;
                    scale_flow(&mut g_delta, w_gc);
                    let (g_fwd, g_bwd) = flow_difference_vjp(&f_full[pi], &f_full[qi], &g_delta)?;
                    add_flow(&mut g_full, &g_fwd, 1.0);
                    let g = grads.as_mut().unwrap();
                    add_flow(&mut g_res[qi][l], &g_bwd, 1.0);
                    push_rigid(
                        &depth_levels[self.pairs[qi].target][l],
                        &vars.poses[qi],
                        &k_l,
                        &g_bwd,
                        g,
                        qi,
                        self.pairs[qi].target,
                        &mut g_depth,
                        l,
                    )?;
                }
                if rigid_active {
                    let (gf, _) = inverse_warp_vjp(source, &f_rig[pi], &g_warp_rig)?;
                    add_flow(&mut g_rig_only, &gf, 1.0);
                    let gd = &mut g_depth[pair.target][l];
                    for (a, b) in gd.data.iter_mut().zip(&g_ds.data) {
                        *a += w_ds * b;
                    }
                }

                let g = grads.as_mut().unwrap();
                add_flow(&mut g_res[pi][l], &g_full, 1.0);
                add_flow(&mut g_rig_only, &g_full, 1.0);
                push_rigid(
                    &depth_levels[pair.target][l],
                    &vars.poses[pi],
                    &k_l,
                    &g_rig_only,
                    g,
                    pi,
                    pair.target,
                    &mut g_depth,
                    l,
                )?;
            }
            per_scale.push(terms);
        }

        // Fold per-level gradients down to the variable resolution.
        if let Some(g) = grads.as_mut() {
            for f in 0..n_frames {
                for l in (1..scales).rev() {
                    let up = g_depth[f][l].clone();
                    let parent = &depth_levels[f][l - 1];
                    let adj = avg_pool2_adjoint(&up, parent.width, parent.height);
                    g_depth[f][l - 1].add_assign(&adj);
                }
                // Chain through exp: d/d log_depth = d/d depth * depth.
                let d0 = &depth_levels[f][0];
                for i in 0..d0.data.len() {
                    g.log_depth[f].data[i] = g_depth[f][0].data[i] * d0.data[i];
                }
            }
            for p in 0..n_pairs {
                for l in (1..scales).rev() {
                    let up = g_res[p][l].clone();
                    let (pw, ph) = (g_res[p][l - 1].width, g_res[p][l - 1].height);
                    let adj_u =
                        avg_pool2_adjoint(&Grid::from_vec(up.width, up.height, 1, up.u), pw, ph);
                    let adj_v =
                        avg_pool2_adjoint(&Grid::from_vec(up.width, up.height, 1, up.v), pw, ph);
                    let dst = &mut g_res[p][l - 1];
                    for i in 0..dst.u.len() {
                        dst.u[i] += 0.5 * adj_u.data[i];
                        dst.v[i] += 0.5 * adj_v.data[i];
                    }
                }
                g.residual[p] = g_res[p][0].clone();
            }
        }

        let breakdown = LossBreakdown::from_scales(per_scale, &cfg.weights);
        Ok((breakdown, grads))
    }
}

/// One-call total loss over a frame set with adjacent bidirectional pairs.
pub fn total_loss(
    frames: &[Image],
    intrinsics: CameraIntrinsics,
    vars: &Variables,
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    let ctx = ObjectiveContext::new(
        frames,
        intrinsics,
        adjacent_pairs(frames.len()),
        cfg.clone(),
    )?;
    let (breakdown, _) = ctx.evaluate(vars, false)?;
    Ok(breakdown)
}

#[allow(clippy::too_many_arguments)]
fn push_rigid(
    depth_grid: &Grid,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    g_flow: &FlowField,
    grads: &mut Gradients,
    pair_idx: usize,
    frame_idx: usize,
    g_depth: &mut [Vec<Grid>],
    level: usize,
) -> Result<()> {
    let depth = DepthMap::new(depth_grid.width, depth_grid.height, depth_grid.data.clone())?;
    let rg = rigid_flow_vjp(&depth, pose, k, g_flow)?;
    g_depth[frame_idx][level].add_assign(&rg.depth);
    for a in 0..3 {
        grads.rotation[pair_idx][a] += rg.rotation[a];
        grads.translation[pair_idx][a] += rg.translation[a];
    }
    Ok(())
}

fn flow_to_grid(f: &FlowField) -> Grid {
    let mut g = Grid::zeros(f.width, f.height, 2);
    for i in 0..f.u.len() {
        g.data[2 * i] = f.u[i];
        g.data[2 * i + 1] = f.v[i];
    }
    g
}

fn grid_to_flow(g: &Grid) -> FlowField {
    debug_assert_eq!(g.channels, 2);
    let n = g.width * g.height;
    let mut f = FlowField::zeros(g.width, g.height);
    for i in 0..n {
        f.u[i] = g.data[2 * i];
        f.v[i] = g.data[2 * i + 1];
    }
    f
}

fn add_flow(dst: &mut FlowField, src: &FlowField, s: f64) {
    for (a, b) in dst.u.iter_mut().zip(&src.u) {
        *a += s * b;
    }
    for (a, b) in dst.v.iter_mut().zip(&src.v) {
        *a += s * b;
    }
}

fn scale_flow(f: &mut FlowField, s: f64) {
    for v in f.u.iter_mut().chain(f.v.iter_mut()) {
        *v *= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured_frames(w: usize, h: usize, seed: u64) -> Vec<Image> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..2)
            .map(|_| {
                Image::from_fn(w, h, 1, |x, y, _| {
                    let fx = x as f64 / w as f64;
                    let fy = y as f64 / h as f64;
                    0.5 + 0.2 * (6.0 * fx + 4.0 * fy + rng.gen::<f64>() * 0.1).sin()
                        + 0.15 * (3.0 * fx - 5.0 * fy).cos()
                })
                .unwrap()
            })
            .collect()
    }

    fn random_vars(ctx: &ObjectiveContext, seed: u64) -> Variables {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (ctx.width, ctx.height);
        Variables {
            log_depth: (0..ctx.num_frames())
                .map(|_| Grid::from_fn(w, h, 1, |_, _, _| (8.0 + rng.gen::<f64>()).ln()))
                .collect(),
            poses: ctx
                .pairs
                .iter()
                .map(|_| {
                    PoseSE3::new(
                        [
                            0.01 * rng.gen::<f64>(),
                            0.01 * rng.gen::<f64>(),
                            0.01 * rng.gen::<f64>(),
                        ],
                        [
                            0.2 * rng.gen::<f64>(),
                            0.1 * rng.gen::<f64>(),
                            0.05 * rng.gen::<f64>(),
                        ],
                    )
                })
                .collect(),
            residual: ctx
                .pairs
                .iter()
                .map(|_| {
                    FlowField::new(
                        w,
                        h,
                        (0..w * h).map(|_| 0.3 * (rng.gen::<f64>() - 0.5)).collect(),
                        (0..w * h).map(|_| 0.3 * (rng.gen::<f64>() - 0.5)).collect(),
                    )
                    .unwrap()
                })
                .collect(),
        }
    }

    #[test]
    fn breakdown_identity_holds() {
        let frames = textured_frames(12, 8, 3);
        let k = CameraIntrinsics::new(20.0, 20.0, 5.5, 3.5).unwrap();
        let cfg = ObjectiveConfig::default();
        let ctx =
            ObjectiveContext::new(&frames, k, adjacent_pairs(frames.len()), cfg.clone()).unwrap();
        let vars = random_vars(&ctx, 11);
        let (b, _) = ctx.evaluate(&vars, false).unwrap();
        let recomputed = b.terms.weighted_total(&cfg.weights);
        assert!((b.total - recomputed).abs() < 1e-12);
        let mut sum = LossTerms::default();
        for s in &b.per_scale {
            sum.add(s);
        }
        assert!((sum.l_rw - b.terms.l_rw).abs() < 1e-12);
    }

    #[test]
    fn weight_scaling_is_linear() {
        let frames = textured_frames(12, 8, 5);
        let k = CameraIntrinsics::new(20.0, 20.0, 5.5, 3.5).unwrap();
        let mut cfg = ObjectiveConfig::default();
        let ctx =
            ObjectiveContext::new(&frames, k, adjacent_pairs(frames.len()), cfg.clone()).unwrap();
        let vars = random_vars(&ctx, 7);
        let (b1, _) = ctx.evaluate(&vars, false).unwrap();
        cfg.weights.lambda_gc *= 2.0;
        let ctx2 = ObjectiveContext::new(&frames, k, adjacent_pairs(frames.len()), cfg).unwrap();
        let (b2, _) = ctx2.evaluate(&vars, false).unwrap();
        // Raw terms unchanged; only the weighting in total differs.
        assert_eq!(b1.terms.l_gc, b2.terms.l_gc);
        let diff = b2.total - b1.total;
        assert!((diff - 0.2 * b1.terms.l_gc).abs() < 1e-12);
    }

    #[test]
    fn joint_gradients_match_finite_differences() {
        let frames = textured_frames(12, 8, 9);
        let k = CameraIntrinsics::new(20.0, 20.0, 5.5, 3.5).unwrap();
        let cfg = ObjectiveConfig {
            stage: Stage::Joint,
            ..Default::default()
        };
        let ctx =
            ObjectiveContext::new(&frames, k, adjacent_pairs(frames.len()), cfg.clone()).unwrap();
        let vars = random_vars(&ctx, 13);
        let (b0, grads) = ctx.evaluate(&vars, true).unwrap();
        let g = grads.unwrap();
        let objective = |v: &Variables| -> f64 {
            let (b, _) = ctx.evaluate(v, false).unwrap();
            cfg.stage.objective(&b.terms, &cfg.weights)
        };
        assert!(b0.total.is_finite());
        let eps = 1e-6;
        let mut checked = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        // log-depth entries
        for _ in 0..6 {
            let f = rng.gen_range(0..2);
            let i = rng.gen_range(0..ctx.width * ctx.height);
            let mut vp = vars.clone();
            let mut vm = vars.clone();
            vp.log_depth[f].data[i] += eps;
            vm.log_depth[f].data[i] -= eps;
            let fd = (objective(&vp) - objective(&vm)) / (2.0 * eps);
            let a = g.log_depth[f].data[i];
            let denom = a.abs().max(fd.abs());
            assert!(
                (a - fd).abs() <= 1e-4 * denom.max(1e-7),
                "log_depth[{f}][{i}]: {a} vs {fd}"
            );
            checked += 1;
        }
        // poses
        for pi in 0..ctx.pairs.len() {
            for j in 0..3 {
                let mut vp = vars.clone();
                let mut vm = vars.clone();
                vp.poses[pi].rotation[j] += eps;
                vm.poses[pi].rotation[j] -= eps;
                let fd = (objective(&vp) - objective(&vm)) / (2.0 * eps);
                let a = g.rotation[pi][j];
                assert!(
                    (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-7),
                    "rot[{pi}][{j}]: {a} vs {fd}"
                );
                let mut vp = vars.clone();
                let mut vm = vars.clone();
                vp.poses[pi].translation[j] += eps;
                vm.poses[pi].translation[j] -= eps;
                let fd = (objective(&vp) - objective(&vm)) / (2.0 * eps);
                let a = g.translation[pi][j];
                assert!(
                    (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-7),
                    "trans[{pi}][{j}]: {a} vs {fd}"
                );
                checked += 2;
            }
        }
        // residual flow entries
        for _ in 0..6 {
            let p = rng.gen_range(0..ctx.pairs.len());
            let i = rng.gen_range(0..ctx.width * ctx.height);
            let mut vp = vars.clone();
            let mut vm = vars.clone();
            vp.residual[p].u[i] += eps;
            vm.residual[p].u[i] -= eps;
            let fd = (objective(&vp) - objective(&vm)) / (2.0 * eps);
            let a = g.residual[p].u[i];
            assert!(
                (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-7),
                "residual[{p}].u[{i}]: {a} vs {fd}"
            );
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn stage_gating_controls_gradients() {
        let frames = textured_frames(12, 8, 21);
        let k = CameraIntrinsics::new(20.0, 20.0, 5.5, 3.5).unwrap();
        let cfg = ObjectiveConfig {
            stage: Stage::Rigid,
            ..Default::default()
        };
        let ctx =
            ObjectiveContext::new(&frames, k, adjacent_pairs(frames.len()), cfg).unwrap();
        let vars = random_vars(&ctx, 31);
        let (_, grads) = ctx.evaluate(&vars, true).unwrap();
        let g = grads.unwrap();
        // Rigid stage: no gradient reaches the residual flow.
        for f in &g.residual {
            assert!(f.u.iter().chain(f.v.iter()).all(|&x| x == 0.0));
        }
        // But depth and pose receive signal.
        assert!(g.log_depth[0].data.iter().any(|&x| x != 0.0));
    }
}
