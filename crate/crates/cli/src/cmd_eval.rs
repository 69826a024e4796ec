//! eval-depth / eval-flow / eval-pose: metric reports as text and CSV.

use std::path::Path;

use warpflow_core::grid::Mask;
use warpflow_core::io::{flo, pfm, pnm, poses};
use warpflow_core::metrics::{ate_over_snippets, depth_metrics, flow_epe, Trajectory};
use warpflow_core::Error;

use crate::CmdResult;

pub fn depth(
    pred: &Path,
    gt: &Path,
    valid: Option<&Path>,
    cap: f64,
    median_scale: bool,
    csv: Option<&Path>,
) -> CmdResult {
    let pred_map = pfm::read_depth(pred)?;
    let gt_map = pfm::read_depth(gt)?;
    let valid_mask = valid.map(pnm::read_mask).transpose()?;
    let m = depth_metrics(&pred_map, &gt_map, valid_mask.as_ref(), cap, median_scale)?;
    print!("{}", m.to_text());
    if let Some(path) = csv {
        let csv_text = format!(
            "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3\n{},{},{},{},{},{},{}\n",
            m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3
        );
        std::fs::write(path, csv_text).map_err(Error::from)?;
    }
    Ok(())
}

pub fn flow(pred: &Path, gt: &Path, occlusion: Option<&Path>, csv: Option<&Path>) -> CmdResult {
    let pred_flow = flo::read_flow(pred)?;
    let gt_flow = flo::read_flow(gt)?;
    let epe_all = flow_epe(&pred_flow, &gt_flow, None)?;
    let epe_noc = match occlusion {
        Some(path) => {
            let occ = pnm::read_mask(path)?;
            let noc = Mask::new(
                occ.width,
                occ.height,
                occ.data.iter().map(|v| 1.0 - v).collect(),
            )?;
            Some(flow_epe(&pred_flow, &gt_flow, Some(&noc))?)
        }
        None => None,
    };
    println!("epe_all = {epe_all}");
    if let Some(noc) = epe_noc {
        println!("epe_noc = {noc}");
    }
    if let Some(path) = csv {
        let text = match epe_noc {
            Some(noc) => format!("epe_all,epe_noc\n{epe_all},{noc}\n"),
            None => format!("epe_all\n{epe_all}\n"),
        };
        std::fs::write(path, text).map_err(Error::from)?;
    }
    Ok(())
}

pub fn pose(pred: &Path, gt: &Path, snippet: usize, csv: Option<&Path>) -> CmdResult {
    let pred_mats = poses::read_pose_mats(pred)?;
    let gt_mats = poses::read_pose_mats(gt)?;
    if pred_mats.len() != gt_mats.len() {
        return Err(Error::DimensionMismatch {
            what: "eval-pose trajectories",
            expected_w: gt_mats.len(),
            expected_h: 1,
            got_w: pred_mats.len(),
            got_h: 1,
        }
        .into());
    }
    if snippet < 2 || pred_mats.len() < snippet {
        return Err(Error::InvalidConfig(format!(
            "snippet length {snippet} does not fit {} poses",
            pred_mats.len()
        ))
        .into());
    }
    let mut snippets = Vec::new();
    for start in 0..=pred_mats.len() - snippet {
        let window = |mats: &[poses::PoseMat]| {
            Trajectory::new(
                mats[start..start + snippet]
                    .iter()
                    .map(|m| m.position())
                    .collect(),
            )
        };
        snippets.push((window(&pred_mats)?, window(&gt_mats)?));
    }
    let (mean, std) = ate_over_snippets(&snippets)?;
    println!("ate_mean = {mean}");
    println!("ate_std = {std}");
    println!("snippets = {}", snippets.len());
    if let Some(path) = csv {
        std::fs::write(path, format!("ate_mean,ate_std,snippets\n{mean},{std},{}\n", snippets.len()))
            .map_err(Error::from)?;
    }
    Ok(())
}
