use std::time::Instant;
use warpflow_core::camera::CameraIntrinsics;
use warpflow_core::consistency::{flow_difference, inlier_mask, ConsistencyParams};
use warpflow_core::grid::{FlowField, Grid};
use warpflow_core::metrics::flow_epe;
use warpflow_core::objective::{adjacent_pairs, Stage, Variables};
use warpflow_core::optim::{optimize, OptimizeConfig};
use warpflow_core::scene::*;
use warpflow_core::se3::PoseSE3;

fn gt_vars(scene: &Scene) -> Variables {
    let pairs = adjacent_pairs(scene.frames.len());
    Variables {
        log_depth: scene
            .gt_depth
            .iter()
            .map(|d| Grid::from_vec(d.width, d.height, 1, d.data.iter().map(|v| v.ln()).collect()))
            .collect(),
        poses: pairs
            .iter()
            .map(|p| scene.pair(p.target, p.source).unwrap().pose)
            .collect(),
        residual: pairs
            .iter()
            .map(|_| FlowField::zeros(scene.spec.width, scene.spec.height))
            .collect(),
    }
}

fn rot_angle(a: &PoseSE3, b: &PoseSE3) -> f64 {
    let r = a.rotation_matrix() * b.rotation_matrix().transpose();
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

fn a3() {
    let spec = SceneSpec {
        width: 96, height: 64, channels: 1, num_frames: 2,
        intrinsics: CameraIntrinsics::new(80.0, 80.0, 47.5, 31.5).unwrap(),
        layout: Layout::Slanted { base_depth: 10.0, slope_x: 0.1, slope_y: 0.05 },
        texture: TextureSpec { num_sinusoids: 5, amplitude: 0.42, min_period_px: 12.0 },
        poses: vec![PoseSE3::identity(), PoseSE3::new([0.005, -0.008, 0.004], [0.3, 0.1, 0.0])],
        objects: vec![], seed: 101,
    };
    let scene = generate_scene(&spec).unwrap();
    let mut init = gt_vars(&scene);
    // perturb poses by 0.05 rad / 0.2 units
    let dr = [0.05 / 3f64.sqrt(); 3];
    let dt = [0.2 / 3f64.sqrt(); 3];
    for p in &mut init.poses {
        for k in 0..3 { p.rotation[k] += dr[k]; p.translation[k] += dt[k]; }
    }
    let mut cfg = OptimizeConfig::rigid();
    cfg.gates.depth = false;
    cfg.adam.lr = 5e-3;
    cfg.adam.max_iters = 600;
    cfg.tol = 1e-9;
    cfg.patience = 150;
    cfg.levels = 4;
    let t0 = Instant::now();
    let run = optimize(&scene.frames, spec.intrinsics, &init, &cfg, None, None).unwrap();
    let dt_s = t0.elapsed().as_secs_f64();
    let gt = gt_vars(&scene);
    for (i, (rec, g)) in run.vars.poses.iter().zip(&gt.poses).enumerate() {
        let ra = rot_angle(rec, g);
        let te = (0..3).map(|k| (rec.translation[k] - g.translation[k]).powi(2)).sum::<f64>().sqrt();
        println!("A3 pair {i}: rot_err={ra:.2e} rad, trans_err={te:.2e} units");
    }
    println!("A3 iters={} time={dt_s:.1}s", run.trace.len());
}

fn a4() {
    let spec = SceneSpec {
        width: 96, height: 64, channels: 1, num_frames: 2,
        intrinsics: CameraIntrinsics::new(100.0, 100.0, 47.5, 31.5).unwrap(),
        layout: Layout::Slanted { base_depth: 10.0, slope_x: 0.04, slope_y: 0.02 },
        texture: TextureSpec::default(),
        poses: vec![PoseSE3::identity(), PoseSE3::new([0.0; 3], [0.5, 0.15, 0.0])],
        objects: vec![], seed: 202,
    };
    let scene = generate_scene(&spec).unwrap();
    let gt = gt_vars(&scene);
    let pairs = adjacent_pairs(2);
    let mut init = Variables::flat(2, pairs.len(), 96, 64, 8.0);
    init.poses = gt.poses.clone();
    let mut cfg = OptimizeConfig::rigid();
    cfg.gates.pose = false;
    cfg.adam.lr = 0.02;
    cfg.adam.max_iters = 600;
    cfg.levels = 4;
    let t0 = Instant::now();
    let run = optimize(&scene.frames, spec.intrinsics, &init, &cfg, None, None).unwrap();
    let dt_s = t0.elapsed().as_secs_f64();
    // median abs_rel over interior (margin 8) of frame 0
    let m = 8usize;
    let mut rels = Vec::new();
    for y in m..64 - m {
        for x in m..96 - m {
            let i = y * 96 + x;
            let p = run.vars.log_depth[0].data[i].exp();
            let g = scene.gt_depth[0].data[i];
            rels.push((p - g).abs() / g);
        }
    }
    rels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("A4 median abs_rel = {:.4} (p90 {:.4}) iters={} time={dt_s:.1}s",
        rels[rels.len()/2], rels[rels.len()*9/10], run.trace.len());
}

fn a5() {
    let spec = SceneSpec {
        width: 96, height: 64, channels: 1, num_frames: 2,
        intrinsics: CameraIntrinsics::new(100.0, 100.0, 47.5, 31.5).unwrap(),
        layout: Layout::FrontoParallel { depth: 10.0 },
        texture: TextureSpec::default(),
        poses: vec![PoseSE3::identity(), PoseSE3::new([0.0; 3], [0.2, 0.0, 0.0])],
        objects: vec![MovingObject { rect: [30.0, 20.0, 20.0, 14.0], velocity: [6.0, 0.0] }],
        seed: 303,
    };
    let scene = generate_scene(&spec).unwrap();
    let gt = gt_vars(&scene);
    let mut cfg = OptimizeConfig::residual();
    cfg.adam.lr = 0.05;
    cfg.adam.max_iters = 600;
    cfg.levels = 4;
    let t0 = Instant::now();
    let run = optimize(&scene.frames, spec.intrinsics, &gt, &cfg, None, None).unwrap();
    let dt_s = t0.elapsed().as_secs_f64();
    let pairs = adjacent_pairs(2);
    for (pi, pr) in pairs.iter().enumerate().take(1) {
        let sp = scene.pair(pr.target, pr.source).unwrap();
        let full_pred = sp.rigid.add(&run.vars.residual[pi]);
        // object mask at frame 0
        let mut obj = warpflow_core::grid::Mask::zeros(96, 64);
        for y in 20..34 { for x in 30..50 { obj.data[y*96+x] = 1.0; } }
        let not_obj = warpflow_core::grid::Mask::new(96, 64, obj.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let epe_obj_pred = flow_epe(&full_pred, &sp.full, Some(&obj)).unwrap();
        let epe_obj_rigid = flow_epe(&sp.rigid, &sp.full, Some(&obj)).unwrap();
        let res_out: f64 = {
            let mut acc = 0.0; let mut n = 0;
            for i in 0..96*64 {
                if not_obj.data[i] > 0.0 {
                    acc += (run.vars.residual[pi].u[i].powi(2) + run.vars.residual[pi].v[i].powi(2)).sqrt();
                    n += 1;
                }
            }
            acc / n as f64
        };
        println!("A5 pair{pi}: epe_obj pred={epe_obj_pred:.3} rigid={epe_obj_rigid:.3} ratio={:.2} res_outside={res_out:.3}px",
            epe_obj_pred / epe_obj_rigid);
    }
    println!("A5 time={dt_s:.1}s iters={}", run.trace.len());
}

fn a6() {
    let spec = SceneSpec {
        width: 96, height: 64, channels: 1, num_frames: 2,
        intrinsics: CameraIntrinsics::new(100.0, 100.0, 47.5, 31.5).unwrap(),
        layout: Layout::FrontoParallel { depth: 10.0 },
        texture: TextureSpec::default(),
        poses: vec![PoseSE3::identity(); 2],
        objects: vec![MovingObject { rect: [30.0, 20.0, 20.0, 14.0], velocity: [5.0, 0.0] }],
        seed: 404,
    };
    let scene = generate_scene(&spec).unwrap();
    let gt = gt_vars(&scene);
    let run_cfg = |lgc: f64, naive: bool| -> f64 {
        let mut cfg = OptimizeConfig::residual();
        cfg.adam.lr = 0.05;
        cfg.adam.max_iters = 400;
        cfg.levels = 4;
        cfg.objective.weights.lambda_gc = lgc;
        cfg.objective.naive_consistency = naive;
        let run = optimize(&scene.frames, spec.intrinsics, &gt, &cfg, None, None).unwrap();
        let pairs = adjacent_pairs(2);
        let mut acc = 0.0;
        for (pi, pr) in pairs.iter().enumerate() {
            let sp = scene.pair(pr.target, pr.source).unwrap();
            let full_pred = sp.rigid.add(&run.vars.residual[pi]);
            acc += flow_epe(&full_pred, &sp.full, None).unwrap();
        }
        acc / pairs.len() as f64
    };
    let t0 = Instant::now();
    let default = run_cfg(0.2, false);
    let nogc = run_cfg(0.0, false);
    let naive = run_cfg(0.2, true);
    println!("A6 EPE-All: default={default:.4} nogc={nogc:.4} naive={naive:.4} time={:.1}s", t0.elapsed().as_secs_f64());
}

fn a7() {
    for (name, poses, vel) in [
        ("static", vec![PoseSE3::identity(); 2], [4.0, 0.0]),
        ("moving", vec![PoseSE3::identity(), PoseSE3::new([0.0; 3], [0.25, 0.0, 0.0])], [12.0, 0.0]),
    ] {
        let spec = SceneSpec {
            width: 96, height: 64, channels: 1, num_frames: 2,
            intrinsics: CameraIntrinsics::new(100.0, 100.0, 47.5, 31.5).unwrap(),
            layout: Layout::FrontoParallel { depth: 10.0 },
            texture: TextureSpec::default(),
            poses, objects: vec![MovingObject { rect: [24.0, 20.0, 24.0, 14.0], velocity: vel }],
            seed: 505,
        };
        let scene = generate_scene(&spec).unwrap();
        let p01 = scene.pair(0, 1).unwrap();
        let p10 = scene.pair(1, 0).unwrap();
        let (delta, valid) = flow_difference(&p01.full, &p10.full).unwrap();
        let mask = inlier_mask(&delta, &p01.full, &valid, &ConsistencyParams::default());
        let (mut occ_out, mut occ_tot) = (0, 0);
        let (mut int_in, mut int_tot) = (0, 0);
        for y in 0..64 {
            for x in 0..96 {
                let i = y * 96 + x;
                if p01.occlusion.data[i] > 0.0 {
                    occ_tot += 1;
                    if mask.data[i] == 0.0 { occ_out += 1; }
                } else {
                    // static interior: 5px from border, outside object rects at both frames
                    let inside_obj = (22..62).contains(&x) && (18..36).contains(&y);
                    if x >= 5 && x < 91 && y >= 5 && y < 59 && !inside_obj {
                        int_tot += 1;
                        if mask.data[i] == 1.0 { int_in += 1; }
                    }
                }
            }
        }
        println!("A7 {name}: recall={:.4} ({occ_out}/{occ_tot}) interior inlier rate={:.4} ({int_in}/{int_tot})",
            occ_out as f64 / occ_tot as f64, int_in as f64 / int_tot as f64);
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    if which == "a3" || which == "all" { a3(); }
    if which == "a4" || which == "all" { a4(); }
    if which == "a5" || which == "all" { a5(); }
    if which == "a6" || which == "all" { a6(); }
    if which == "a7" || which == "all" { a7(); }
}
