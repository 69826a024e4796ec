//! optimize: run the stage schedule over a scene directory, with
//! checkpoint/resume, and write every recovered quantity.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpflow_core::consistency::{flow_difference, inlier_mask};
use warpflow_core::grid::{DepthMap, FlowField, Grid};
use warpflow_core::io::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, LEVEL_FRESH};
use warpflow_core::io::scene_dir::{load_scene, LoadedScene};
use warpflow_core::io::{flo, pfm, pnm, poses, trace};
use warpflow_core::loss::LossBreakdown;
use warpflow_core::objective::{Stage, Variables};
use warpflow_core::optim::{optimization_pairs, optimize, OptimizeConfig, TraceRow};
use warpflow_core::rigid::rigid_flow;
use warpflow_core::se3::PoseSE3;
use warpflow_core::Error;

use crate::config::OptimizeFileConfig;
use crate::{CmdError, CmdResult};

pub struct Request {
    pub scene_dir: PathBuf,
    pub out_dir: PathBuf,
    pub config_path: Option<PathBuf>,
    pub stage_override: Option<String>,
    pub max_iters_override: Option<usize>,
    pub lr_override: Option<f64>,
    pub levels_override: Option<usize>,
    pub seed_override: Option<u64>,
    pub resume: bool,
    pub naive_consistency: bool,
    pub lambda_gc_override: Option<f64>,
    pub halt_after_levels: Option<usize>,
}

/// Sentinel threaded out of the level callback by the halt test hook.
const HALT: &str = "__halt_after_levels__";

pub fn run(req: Request) -> CmdResult {
    let scene = load_scene(&req.scene_dir)?;
    let mut cfg = match &req.config_path {
        Some(p) => OptimizeFileConfig::load(p)?,
        None => OptimizeFileConfig::default(),
    };
    if let Some(s) = &req.stage_override {
        cfg.stage = s.clone();
    }
    if let Some(v) = req.max_iters_override {
        cfg.max_iters = v;
    }
    if let Some(v) = req.lr_override {
        cfg.lr = v;
    }
    if let Some(v) = req.levels_override {
        cfg.levels = v;
    }
    if let Some(v) = req.seed_override {
        cfg.seed = v;
    }
    if req.naive_consistency {
        cfg.naive_consistency = true;
    }
    if let Some(v) = req.lambda_gc_override {
        cfg.lambda_gc = v;
    }

    std::fs::create_dir_all(&req.out_dir).map_err(Error::from)?;
    let failed_marker = req.out_dir.join("FAILED");
    let _ = std::fs::remove_file(&failed_marker);

    let mut result = run_inner(&scene, &cfg, &req);
    if let Err(CmdError::Core(Error::InvalidConfig(msg))) = &result {
        if msg == HALT {
            println!("halted at the requested level boundary; resume with --resume");
            result = Ok(());
        }
    }
    if let Err(e) = &result {
        let msg = match e {
            CmdError::Core(err) => err.to_string(),
            CmdError::VerificationFailed(m) => m.clone(),
        };
        let _ = std::fs::write(&failed_marker, format!("{msg}\n"));
    }
    result
}

fn run_inner(scene: &LoadedScene, cfg: &OptimizeFileConfig, req: &Request) -> CmdResult {
    let stages = cfg.stages()?;
    let pairs = optimization_pairs(scene.frames.len());
    let pair_ids: Vec<(u32, u32)> = pairs
        .iter()
        .map(|p| (p.target as u32, p.source as u32))
        .collect();
    let ck_path = req.out_dir.join("checkpoint.bin");

    // Resume point: which stage, and how far into it.
    let loaded_ck = if req.resume && ck_path.exists() {
        let ck = read_checkpoint(&ck_path)?;
        if ck.pairs != pair_ids {
            return Err(Error::InvalidConfig(
                "checkpoint does not match the scene's frame pairs".into(),
            )
            .into());
        }
        Some(ck)
    } else {
        None
    };

    let mut stage_init = build_init(scene, cfg, &pairs)?;
    let mut start_stage = 0usize;
    let mut mid_stage_resume: Option<(usize, Variables)> = None;
    let mut final_vars = stage_init.clone();
    if let Some(ck) = loaded_ck {
        start_stage = ck.stage_index as usize;
        if start_stage >= stages.len() {
            // Finished run: re-emit outputs from the stored state.
            final_vars = ck.vars;
            write_outputs(scene, cfg, &stages, &final_vars, &[], &req.out_dir)?;
            println!("run already complete; outputs rewritten");
            return Ok(());
        }
        stage_init = ck.init;
        if ck.level != LEVEL_FRESH {
            mid_stage_resume = Some((ck.level as usize, ck.vars));
        }
    }

    let mut all_rows: Vec<TraceRow> = Vec::new();
    let mut iter_offset = 0u64;
    for (si, &stage) in stages.iter().enumerate().skip(start_stage) {
        let opt_cfg: OptimizeConfig = cfg.to_optimize_config(stage)?;
        let init = stage_init.clone();
        let resume_arg = if si == start_stage {
            mid_stage_resume.take()
        } else {
            None
        };
        let ck_pairs = pair_ids.clone();
        let ck_init = init.clone();
        let ck_file = ck_path.clone();
        let halt_after = req.halt_after_levels;
        let mut boundaries = 0usize;
        let mut on_level = move |next: Option<usize>, vars: &Variables| {
            if let Some(level) = next {
                write_checkpoint(
                    &ck_file,
                    &Checkpoint {
                        stage_index: si as u32,
                        level: level as u32,
                        pairs: ck_pairs.clone(),
                        vars: vars.clone(),
                        init: ck_init.clone(),
                    },
                )?;
            }
            boundaries += 1;
            if halt_after.is_some_and(|n| boundaries >= n) {
                return Err(Error::InvalidConfig(HALT.into()));
            }
            Ok(())
        };
        let run = optimize(
            &scene.frames,
            scene.spec.intrinsics,
            &init,
            &opt_cfg,
            resume_arg,
            Some(&mut on_level),
        )?;
        for row in &run.trace {
            let mut r = *row;
            r.iteration += iter_offset;
            all_rows.push(r);
        }
        iter_offset = all_rows.last().map_or(0, |r| r.iteration + 1);
        final_vars = run.vars;
        stage_init = final_vars.clone();
        // Stage boundary checkpoint: the next stage starts fresh from here.
        write_checkpoint(
            &ck_path,
            &Checkpoint {
                stage_index: (si + 1) as u32,
                level: LEVEL_FRESH,
                pairs: pair_ids.clone(),
                vars: final_vars.clone(),
                init: final_vars.clone(),
            },
        )?;
        println!(
            "stage {:?} done: objective {:.6e} after {} iterations",
            stage,
            run.trace.last().map_or(f64::NAN, |r| r.objective),
            run.trace.len()
        );
    }

    write_outputs(scene, cfg, &stages, &final_vars, &all_rows, &req.out_dir)?;
    Ok(())
}

/// Initial variables per the config's init_depth / init_pose policies.
fn build_init(
    scene: &LoadedScene,
    cfg: &OptimizeFileConfig,
    pairs: &[warpflow_core::objective::FramePair],
) -> Result<Variables, Error> {
    let (w, h) = (scene.spec.width, scene.spec.height);
    let n = scene.frames.len();

    let log_depth = match cfg.init_depth.split_once(':') {
        Some(("constant", v)) => {
            let d: f64 = v.parse().map_err(|_| {
                Error::InvalidConfig(format!("init_depth constant: bad number {v:?}"))
            })?;
            if d <= 0.0 {
                return Err(Error::InvalidConfig("init_depth must be positive".into()));
            }
            (0..n)
                .map(|_| Grid::from_fn(w, h, 1, |_, _, _| d.ln()))
                .collect()
        }
        Some(("file", path)) => {
            let mut grids = Vec::with_capacity(n);
            for i in 0..n {
                let p = path.replace("{}", &format!("{i:03}"));
                let d = pfm::read_depth(Path::new(&p))?;
                grids.push(Grid::from_vec(
                    d.width,
                    d.height,
                    1,
                    d.data.iter().map(|v| v.ln()).collect(),
                ));
            }
            grids
        }
        None if cfg.init_depth == "gt" => scene
            .gt_depth
            .iter()
            .map(|d| Grid::from_vec(d.width, d.height, 1, d.data.iter().map(|v| v.ln()).collect()))
            .collect(),
        _ => {
            return Err(Error::InvalidConfig(format!(
                "init_depth must be constant:<v>, gt, or file:<path>, got {:?}",
                cfg.init_depth
            )))
        }
    };

    let poses: Vec<PoseSE3> = if cfg.init_pose == "identity" {
        vec![PoseSE3::identity(); pairs.len()]
    } else if cfg.init_pose == "gt" {
        pairs
            .iter()
            .map(|p| scene.relative_pose(p.target, p.source))
            .collect()
    } else if let Some(rest) = cfg.init_pose.strip_prefix("gt-perturbed:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 2 {
            return Err(Error::InvalidConfig(
                "init_pose gt-perturbed wants gt-perturbed:<rot>:<trans>".into(),
            ));
        }
        let rot: f64 = parts[0]
            .parse()
            .map_err(|_| Error::InvalidConfig("bad perturbation rotation".into()))?;
        let trans: f64 = parts[1]
            .parse()
            .map_err(|_| Error::InvalidConfig("bad perturbation translation".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        pairs
            .iter()
            .map(|p| {
                let gt = scene.relative_pose(p.target, p.source);
                perturb_pose(&gt, rot, trans, &mut rng)
            })
            .collect()
    } else {
        return Err(Error::InvalidConfig(format!(
            "init_pose must be identity, gt, or gt-perturbed:<rot>:<trans>, got {:?}",
            cfg.init_pose
        )));
    };

    Ok(Variables {
        log_depth,
        poses,
        residual: pairs.iter().map(|_| FlowField::zeros(w, h)).collect(),
    })
}

/// Adds a perturbation of the given total rotation (radians, L2 over Euler
/// angles) and translation norm, in a seeded random direction.
pub fn perturb_pose(pose: &PoseSE3, rot: f64, trans: f64, rng: &mut ChaCha8Rng) -> PoseSE3 {
    let dir = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        loop {
            let v = [
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-3 && n <= 1.0 {
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        }
    };
    let dr = dir(rng);
    let dt = dir(rng);
    let mut out = *pose;
    for k in 0..3 {
        out.rotation[k] += rot * dr[k];
        out.translation[k] += trans * dt[k];
    }
    out
}

fn write_outputs(
    scene: &LoadedScene,
    cfg: &OptimizeFileConfig,
    stages: &[Stage],
    vars: &Variables,
    rows: &[TraceRow],
    out: &Path,
) -> CmdResult {
    let pairs = optimization_pairs(scene.frames.len());
    let k = scene.spec.intrinsics;

    // Depth maps.
    let mut depths = Vec::new();
    for (i, ld) in vars.log_depth.iter().enumerate() {
        let depth = DepthMap::new(
            ld.width,
            ld.height,
            ld.data.iter().map(|v| v.exp()).collect(),
        )?;
        pfm::write_depth(&out.join(format!("depth_pred_{i:03}.pfm")), &depth)?;
        depths.push(depth);
    }

    // Trajectory from the forward-pair poses: camera-to-world per frame.
    let mut trajectory = vec![PoseSE3::identity()];
    for i in 0..scene.frames.len() - 1 {
        let pi = pairs
            .iter()
            .position(|p| p.target == i && p.source == i + 1)
            .expect("forward pair");
        let t_fwd = vars.poses[pi];
        let prev = trajectory[i];
        trajectory.push(prev.compose(&t_fwd.inverse()));
    }
    poses::write_poses(&out.join("poses_pred.txt"), &trajectory)?;

    // Flows and consistency masks.
    let residual_ran = stages
        .iter()
        .any(|s| matches!(s, Stage::Residual | Stage::Joint));
    let mut fulls: Vec<FlowField> = Vec::with_capacity(pairs.len());
    for (pi, pair) in pairs.iter().enumerate() {
        let (rigid, _) = rigid_flow(&depths[pair.target], &vars.poses[pi], &k)?;
        let full = rigid.add(&vars.residual[pi]);
        flo::write_flow(
            &out.join(format!("flow_rigid_pred_{:03}_{:03}.flo", pair.target, pair.source)),
            &rigid,
        )?;
        flo::write_flow(
            &out.join(format!("flow_full_pred_{:03}_{:03}.flo", pair.target, pair.source)),
            &full,
        )?;
        if residual_ran {
            flo::write_flow(
                &out.join(format!(
                    "flow_residual_pred_{:03}_{:03}.flo",
                    pair.target, pair.source
                )),
                &vars.residual[pi],
            )?;
        }
        fulls.push(full);
    }
    let opt_cfg = cfg.to_optimize_config(*stages.last().expect("at least one stage"))?;
    for (pi, pair) in pairs.iter().enumerate() {
        let qi = pairs
            .iter()
            .position(|q| q.target == pair.source && q.source == pair.target)
            .expect("reverse pair");
        let (delta, valid) = flow_difference(&fulls[pi], &fulls[qi])?;
        let mask = inlier_mask(&delta, &fulls[pi], &valid, &opt_cfg.objective.consistency);
        pnm::write_mask(
            &out.join(format!("mask_inlier_{:03}_{:03}.pgm", pair.target, pair.source)),
            &mask,
        )?;
    }

    // Loss trace and final breakdown.
    let rows_csv: Vec<trace::TraceRow> = rows
        .iter()
        .map(|r| trace::TraceRow {
            iteration: r.iteration,
            terms: r.terms,
            total: r.total,
        })
        .collect();
    trace::write_trace(&out.join("trace.csv"), &rows_csv)?;
    if let Some(last) = rows.last() {
        let breakdown = LossBreakdown {
            terms: last.terms,
            total: last.total,
            per_scale: vec![],
        };
        std::fs::write(out.join("breakdown.txt"), breakdown.to_text()).map_err(Error::from)?;
    }
    println!("outputs written to {}", out.display());
    Ok(())
}
