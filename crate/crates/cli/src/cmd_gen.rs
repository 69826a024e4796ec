//! gen-scene: spec file -> scene directory (+ generator self-check).

use std::path::Path;

use warpflow_core::io::scene_dir::export_scene;
use warpflow_core::scene::{generate_scene, scene_self_check, SceneSpec};

use crate::{CmdError, CmdResult};

pub fn run(config: &Path, out_dir: &Path, self_check: bool) -> CmdResult {
    let text = std::fs::read_to_string(config).map_err(warpflow_core::Error::from)?;
    let spec = SceneSpec::from_toml_str(&text)?;
    let scene = generate_scene(&spec)?;
    if self_check {
        let report = scene_self_check(&scene);
        if !report.pass {
            return Err(CmdError::VerificationFailed(format!(
                "scene self-check: max photometric residual {:.3e}, messages: {:?}",
                report.max_photometric_residual, report.messages
            )));
        }
        println!(
            "self-check pass: max photometric residual {:.3e} over {} samples",
            report.max_photometric_residual, report.checked_pixels
        );
    }
    let files = export_scene(out_dir, &scene)?;
    println!("wrote {} files to {}", files.len(), out_dir.display());
    Ok(())
}
