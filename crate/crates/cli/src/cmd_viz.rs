//! viz-flow: render a .flo file as a color-wheel PPM.

use std::path::Path;

use warpflow_core::io::{flo, pnm};
use warpflow_core::viz::flow_to_color;

use crate::CmdResult;

pub fn run(flow_path: &Path, out_dir: &Path, max_flow: Option<f64>) -> CmdResult {
    let flow = flo::read_flow(flow_path)?;
    let img = flow_to_color(&flow, max_flow);
    std::fs::create_dir_all(out_dir).map_err(warpflow_core::Error::from)?;
    let stem = flow_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "flow".into());
    let out = out_dir.join(format!("{stem}.ppm"));
    pnm::write_image(&out, &img)?;
    println!("wrote {}", out.display());
    Ok(())
}
