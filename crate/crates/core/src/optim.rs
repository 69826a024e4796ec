//! Direct gradient-based recovery of log-depth, pose and residual flow by
//! minimizing the multi-scale objective with Adam.
//!
//! Optimization runs coarse-to-fine: the variables live at a pyramid level,
//! are optimized there, then upsampled to the next finer level. Local
//! photometric gradients cannot see displacements beyond roughly a texture
//! period, so solving coarse levels first keeps large motions inside the
//! basin of attraction. A backtracking guard halves the step (up to 5 times
//! per iteration) whenever the stage objective would increase.

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid, Image};
use crate::loss::LossTerms;
use crate::objective::{
    adjacent_pairs, FramePair, Gradients, ObjectiveContext, Stage, Variables,
};
use crate::pyramid::{avg_pool2, bilinear_resize, build_image_pyramid, max_scales};

/// Adam hyper-parameters plus the stage selector.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Iteration budget per coarse-to-fine level.
    pub max_iters: usize,
    pub stage: Stage,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iters: 2000,
            stage: Stage::Rigid,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::InvalidConfig(format!(
                "adam wants lr > 0 and betas in [0, 1), got lr={} b1={} b2={}",
                self.lr, self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

/// Which variable groups the update step touches.
#[derive(Debug, Clone, Copy)]
pub struct UpdateGates {
    pub depth: bool,
    pub pose: bool,
    pub residual: bool,
}

impl UpdateGates {
    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Rigid => UpdateGates {
                depth: true,
                pose: true,
                residual: false,
            },
            Stage::Residual => UpdateGates {
                depth: false,
                pose: false,
                residual: true,
            },
            Stage::Joint => UpdateGates {
                depth: true,
                pose: true,
                residual: true,
            },
        }
    }
}

/// First and second Adam moments, shaped like the gradient set.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    m: Gradients,
    v: Gradients,
}

fn zero_grads(vars: &Variables) -> Gradients {
    Gradients {
        log_depth: vars
            .log_depth
            .iter()
            .map(|g| Grid::zeros(g.width, g.height, 1))
            .collect(),
        rotation: vec![[0.0; 3]; vars.poses.len()],
        translation: vec![[0.0; 3]; vars.poses.len()],
        residual: vars
            .residual
            .iter()
            .map(|f| FlowField::zeros(f.width, f.height))
            .collect(),
    }
}

impl AdamState {
    pub fn new(like: &Variables) -> Self {
        AdamState {
            t: 0,
            m: zero_grads(like),
            v: zero_grads(like),
        }
    }

    /// Advances the moments and returns the (negative) update at the given
    /// learning rate. Scaling the returned delta scales the step linearly,
    /// which is what the backtracking guard relies on.
    pub fn compute_delta(&mut self, grads: &Gradients, params: &AdamParams) -> Result<Gradients> {
        if let Some(idx) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient {
                what: "adam_step",
                index: idx,
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - params.beta1.powi(t);
        let bc2 = 1.0 - params.beta2.powi(t);
        let mut delta = zero_grads_like(grads);
        let upd = |m: &mut f64, v: &mut f64, g: f64, d: &mut f64| {
            *m = params.beta1 * *m + (1.0 - params.beta1) * g;
            *v = params.beta2 * *v + (1.0 - params.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *d = params.lr * mhat / (vhat.sqrt() + params.epsilon);
        };
        for f in 0..grads.log_depth.len() {
            for i in 0..grads.log_depth[f].data.len() {
                upd(
                    &mut self.m.log_depth[f].data[i],
                    &mut self.v.log_depth[f].data[i],
                    grads.log_depth[f].data[i],
                    &mut delta.log_depth[f].data[i],
                );
            }
        }
        for p in 0..grads.rotation.len() {
            for k in 0..3 {
                upd(
                    &mut self.m.rotation[p][k],
                    &mut self.v.rotation[p][k],
                    grads.rotation[p][k],
                    &mut delta.rotation[p][k],
                );
                upd(
                    &mut self.m.translation[p][k],
                    &mut self.v.translation[p][k],
                    grads.translation[p][k],
                    &mut delta.translation[p][k],
                );
            }
        }
        for p in 0..grads.residual.len() {
            for i in 0..grads.residual[p].u.len() {
                upd(
                    &mut self.m.residual[p].u[i],
                    &mut self.v.residual[p].u[i],
                    grads.residual[p].u[i],
                    &mut delta.residual[p].u[i],
                );
                upd(
                    &mut self.m.residual[p].v[i],
                    &mut self.v.residual[p].v[i],
                    grads.residual[p].v[i],
                    &mut delta.residual[p].v[i],
                );
            }
        }
        Ok(delta)
    }
}

fn zero_grads_like(g: &Gradients) -> Gradients {
    Gradients {
        log_depth: g
            .log_depth
            .iter()
            .map(|d| Grid::zeros(d.width, d.height, 1))
            .collect(),
        rotation: vec![[0.0; 3]; g.rotation.len()],
        translation: vec![[0.0; 3]; g.translation.len()],
        residual: g
            .residual
            .iter()
            .map(|f| FlowField::zeros(f.width, f.height))
            .collect(),
    }
}

/// vars - scale * delta on the gated groups, with log-depth projected into
/// [ln depth_min, ln depth_max].
pub fn apply_delta(
    vars: &Variables,
    delta: &Gradients,
    scale: f64,
    gates: &UpdateGates,
    depth_bounds: (f64, f64),
) -> Variables {
    let mut out = vars.clone();
    let (lo, hi) = (depth_bounds.0.ln(), depth_bounds.1.ln());
    if gates.depth {
        for f in 0..out.log_depth.len() {
            for i in 0..out.log_depth[f].data.len() {
                let v = out.log_depth[f].data[i] - scale * delta.log_depth[f].data[i];
                out.log_depth[f].data[i] = v.clamp(lo, hi);
            }
        }
    }
    if gates.pose {
        for p in 0..out.poses.len() {
            for k in 0..3 {
                out.poses[p].rotation[k] -= scale * delta.rotation[p][k];
                out.poses[p].translation[k] -= scale * delta.translation[p][k];
            }
        }
    }
    if gates.residual {
        for p in 0..out.residual.len() {
            for i in 0..out.residual[p].u.len() {
                out.residual[p].u[i] -= scale * delta.residual[p].u[i];
                out.residual[p].v[i] -= scale * delta.residual[p].v[i];
            }
        }
    }
    out
}

/// One trace record per accepted iteration (full loss breakdown).
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iteration: u64,
    pub level: usize,
    pub stage: Stage,
    pub terms: LossTerms,
    pub total: f64,
    /// The stage-restricted objective actually being minimized.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeConfig {
    pub adam: AdamParams,
    pub objective: crate::objective::ObjectiveConfig,
    /// Coarse-to-fine levels (1 = full resolution only).
    pub levels: usize,
    pub gates: UpdateGates,
    pub depth_min: f64,
    pub depth_max: f64,
    /// Early stop: relative best-loss improvement below this for `patience`
    /// consecutive iterations ends the level.
    pub tol: f64,
    pub patience: usize,
}

impl OptimizeConfig {
    pub fn for_stage(stage: Stage) -> Self {
        OptimizeConfig {
            adam: AdamParams {
                stage,
                ..Default::default()
            },
            objective: crate::objective::ObjectiveConfig {
                stage,
                ..Default::default()
            },
            levels: 4,
            gates: UpdateGates::for_stage(stage),
            depth_min: 0.1,
            depth_max: 100.0,
            tol: 1e-10,
            patience: 50,
        }
    }

    pub fn rigid() -> Self {
        Self::for_stage(Stage::Rigid)
    }

    pub fn residual() -> Self {
        Self::for_stage(Stage::Residual)
    }
}

/// Result of an optimization run: final full-resolution variables, the full
/// trace, and the last loss breakdown.
#[derive(Debug, Clone)]
pub struct OptimRun {
    pub vars: Variables,
    pub trace: Vec<TraceRow>,
    pub final_terms: LossTerms,
    pub final_total: f64,
}

/// Called after each coarse-to-fine level with the next level index and the
/// variables already resampled to that level's resolution. `next_level` is
/// `None` after the finest level.
pub type LevelCallback<'a> = &'a mut dyn FnMut(Option<usize>, &Variables) -> Result<()>;

fn pool_grid_times(g: &Grid, times: usize) -> Grid {
    let mut out = g.clone();
    for _ in 0..times {
        out = avg_pool2(&out);
    }
    out
}

fn pool_flow_times(f: &FlowField, times: usize) -> FlowField {
    let mut out = f.clone();
    for _ in 0..times {
        let mut gu = avg_pool2(&Grid::from_vec(out.width, out.height, 1, out.u.clone()));
        let mut gv = avg_pool2(&Grid::from_vec(out.width, out.height, 1, out.v.clone()));
        gu.scale(0.5);
        gv.scale(0.5);
        out = FlowField::new(gu.width, gu.height, gu.data, gv.data).expect("pooled flow");
    }
    out
}

/// Downsamples a full-resolution variable set to a pyramid level.
pub fn vars_at_level(init: &Variables, level: usize) -> Variables {
    Variables {
        log_depth: init
            .log_depth
            .iter()
            .map(|g| pool_grid_times(g, level))
            .collect(),
        poses: init.poses.clone(),
        residual: init
            .residual
            .iter()
            .map(|f| pool_flow_times(f, level))
            .collect(),
    }
}

/// Upsamples variables to the given target dims; flow vectors scale by the
/// per-axis resolution ratio. Frozen groups are re-pooled from the
/// full-resolution init so they keep full fidelity instead of surviving a
/// down-up resampling round trip.
fn vars_upsample(
    vars: &Variables,
    w2: usize,
    h2: usize,
    gates: &UpdateGates,
    frozen: &Variables,
    level: usize,
) -> Variables {
    let up_grid = |g: &Grid| bilinear_resize(g, w2, h2);
    let up_flow = |f: &FlowField| {
        let gu = bilinear_resize(&Grid::from_vec(f.width, f.height, 1, f.u.clone()), w2, h2);
        let gv = bilinear_resize(&Grid::from_vec(f.width, f.height, 1, f.v.clone()), w2, h2);
        let sx = w2 as f64 / f.width as f64;
        let sy = h2 as f64 / f.height as f64;
        FlowField::new(
            w2,
            h2,
            gu.data.iter().map(|u| u * sx).collect(),
            gv.data.iter().map(|v| v * sy).collect(),
        )
        .expect("upsampled flow")
    };
    let frozen_at = vars_at_level(frozen, level);
    Variables {
        log_depth: if gates.depth {
            vars.log_depth.iter().map(up_grid).collect()
        } else {
            frozen_at.log_depth
        },
        poses: vars.poses.clone(),
        residual: if gates.residual {
            vars.residual.iter().map(up_flow).collect()
        } else {
            frozen_at.residual
        },
    }
}

/// Runs the configured stage coarse-to-fine over the frame set.
///
/// `init` provides full-resolution initial values for every variable group;
/// frozen groups keep their (per-level pooled) init throughout. `resume`
/// optionally restarts at a level with the given variables already at that
/// level's resolution.
pub fn optimize(
    frames: &[Image],
    intrinsics: CameraIntrinsics,
    init: &Variables,
    cfg: &OptimizeConfig,
    mut resume: Option<(usize, Variables)>,
    mut on_level: Option<LevelCallback<'_>>,
) -> Result<OptimRun> {
    cfg.adam.validate()?;
    let (w, h) = (frames[0].width(), frames[0].height());
    let levels = max_scales(w, h, cfg.levels.max(1), cfg.objective.min_level_dim.max(2));
    let pyramids: Vec<_> = frames
        .iter()
        .map(|f| build_image_pyramid(f, levels))
        .collect::<Result<Vec<_>>>()?;
    let pairs = adjacent_pairs(frames.len());

    let start_level = resume.as_ref().map_or(levels - 1, |(l, _)| *l);
    let mut vars = match resume.take() {
        Some((_, v)) => v,
        None => vars_at_level(init, start_level),
    };

    let mut trace = Vec::new();
    let mut iteration = 0u64;
    let mut final_terms = LossTerms::default();
    let mut final_total = 0.0;

    for level in (0..=start_level).rev() {
        let level_frames: Vec<Image> = pyramids.iter().map(|p| p.level(level).clone()).collect();
        let k_level = intrinsics.at_level(level);
        let mut obj_cfg = cfg.objective.clone();
        obj_cfg.stage = cfg.adam.stage;
        let ctx = ObjectiveContext::new(&level_frames, k_level, pairs.clone(), obj_cfg)?;

        let (terms, total) = run_level(&ctx, &mut vars, cfg, level, &mut iteration, &mut trace)?;
        final_terms = terms;
        final_total = total;

        if level > 0 {
            let (w2, h2) = (
                pyramids[0].level(level - 1).width(),
                pyramids[0].level(level - 1).height(),
            );
            vars = vars_upsample(&vars, w2, h2, &cfg.gates, init, level - 1);
            if let Some(cb) = on_level.as_mut() {
                cb(Some(level - 1), &vars)?;
            }
        } else if let Some(cb) = on_level.as_mut() {
            cb(None, &vars)?;
        }
    }

    Ok(OptimRun {
        vars,
        trace,
        final_terms,
        final_total,
    })
}

fn run_level(
    ctx: &ObjectiveContext,
    vars: &mut Variables,
    cfg: &OptimizeConfig,
    level: usize,
    iteration: &mut u64,
    trace: &mut Vec<TraceRow>,
) -> Result<(LossTerms, f64)> {
    let stage = cfg.adam.stage;
    let weights = &cfg.objective.weights;
    let bounds = (cfg.depth_min, cfg.depth_max);
    let mut adam = AdamState::new(vars);

    let (mut breakdown, grads) = ctx.evaluate(vars, true)?;
    let mut grads = grads.expect("gradients requested");
    let mut current = stage.objective(&breakdown.terms, weights);
    let mut best = current;
    let mut stall = 0usize;
    trace.push(TraceRow {
        iteration: *iteration,
        level,
        stage,
        terms: breakdown.terms,
        total: breakdown.total,
        objective: current,
    });

    for _ in 0..cfg.adam.max_iters {
        let delta = adam.compute_delta(&grads, &cfg.adam)?;
        let mut accepted: Option<(Variables, f64)> = None;
        // Try the full step, then halve up to 5 times. If every trial raises
        // the objective the step is rejected outright, so the accepted loss
        // sequence never increases; the moments still advance, and the
        // patience counter ends a level that stops improving.
        for half in 0..=5 {
            let scale = 0.5f64.powi(half);
            let cand = apply_delta(vars, &delta, scale, &cfg.gates, bounds);
            let (b, _) = ctx.evaluate(&cand, false)?;
            let obj = stage.objective(&b.terms, weights);
            if obj <= current {
                accepted = Some((cand, obj));
                break;
            }
        }
        let prev_best = best;
        if let Some((cand, obj)) = accepted {
            *vars = cand;
            current = obj;
            best = best.min(current);
            if current > 10.0 * best.max(1e-9) {
                return Err(Error::Divergence {
                    loss: current,
                    best,
                });
            }
            let (b, g) = ctx.evaluate(vars, true)?;
            breakdown = b;
            grads = g.expect("gradients requested");
        }
        *iteration += 1;
        trace.push(TraceRow {
            iteration: *iteration,
            level,
            stage,
            terms: breakdown.terms,
            total: breakdown.total,
            objective: current,
        });
        if prev_best - best <= cfg.tol * best.abs().max(1e-12) {
            stall += 1;
            if stall >= cfg.patience {
                break;
            }
        } else {
            stall = 0;
        }
    }
    Ok((breakdown.terms, breakdown.total))
}

/// Stage-1 entry point: recovers depth and pose under the rigid objective.
pub fn optimize_rigid(
    frames: &[Image],
    intrinsics: CameraIntrinsics,
    init: &Variables,
    cfg: &OptimizeConfig,
) -> Result<OptimRun> {
    let mut cfg = cfg.clone();
    cfg.adam.stage = Stage::Rigid;
    cfg.objective.stage = Stage::Rigid;
    optimize(frames, intrinsics, init, &cfg, None, None)
}

/// Stage-2 entry point: the rigid quantities in `rigid_vars` stay frozen and
/// the residual flows are optimized under the full-flow objective.
pub fn optimize_residual(
    frames: &[Image],
    intrinsics: CameraIntrinsics,
    rigid_vars: &Variables,
    cfg: &OptimizeConfig,
) -> Result<OptimRun> {
    let mut cfg = cfg.clone();
    cfg.adam.stage = Stage::Residual;
    cfg.objective.stage = Stage::Residual;
    cfg.gates = UpdateGates::for_stage(Stage::Residual);
    optimize(frames, intrinsics, rigid_vars, &cfg, None, None)
}

/// Frame pairs an optimization over `n` frames uses (adjacent, both
/// directions), exposed for callers that need to line up per-pair data.
pub fn optimization_pairs(num_frames: usize) -> Vec<FramePair> {
    adjacent_pairs(num_frames)
}
