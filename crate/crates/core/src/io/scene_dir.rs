//! Scene directory layout: frames as PGM/PPM, depths as PFM, flows as .flo,
//! occlusion masks as PGM, a camera trajectory text file, the resolved spec,
//! and a manifest listing every file.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{DepthMap, FlowField, Image, Mask};
use crate::io::{flo, pfm, pnm, poses};
use crate::scene::{Scene, SceneSpec};
use crate::se3::PoseSE3;

pub const SPEC_FILE: &str = "spec.toml";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TRAJECTORY_FILE: &str = "poses.txt";

pub fn frame_file(i: usize, channels: usize) -> String {
    if channels == 3 {
        format!("frame_{i:03}.ppm")
    } else {
        format!("frame_{i:03}.pgm")
    }
}

pub fn depth_file(i: usize) -> String {
    format!("depth_{i:03}.pfm")
}

pub fn flow_file(kind: &str, t: usize, s: usize) -> String {
    format!("flow_{kind}_{t:03}_{s:03}.flo")
}

pub fn occlusion_file(t: usize, s: usize) -> String {
    format!("occlusion_{t:03}_{s:03}.pgm")
}

/// Writes the scene and returns the manifest (relative file names).
pub fn export_scene(dir: &Path, scene: &Scene) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let spec = &scene.spec;

    fs::write(dir.join(SPEC_FILE), spec.to_toml_string())?;
    files.push(SPEC_FILE.to_string());

    for (i, frame) in scene.frames.iter().enumerate() {
        let name = frame_file(i, spec.channels);
        pnm::write_image(&dir.join(&name), frame)?;
        files.push(name);
    }
    for (i, depth) in scene.gt_depth.iter().enumerate() {
        let name = depth_file(i);
        pfm::write_depth(&dir.join(&name), depth)?;
        files.push(name);
    }
    for pair in &scene.pairs {
        for (kind, flow) in [
            ("rigid", &pair.rigid),
            ("residual", &pair.residual),
            ("full", &pair.full),
        ] {
            let name = flow_file(kind, pair.target, pair.source);
            flo::write_flow(&dir.join(&name), flow)?;
            files.push(name);
        }
        let name = occlusion_file(pair.target, pair.source);
        pnm::write_mask(&dir.join(&name), &pair.occlusion)?;
        files.push(name);
    }
    // Camera trajectory: camera-to-world per frame.
    let trajectory: Vec<PoseSE3> = (0..spec.num_frames)
        .map(|i| spec.pose_of(i).inverse())
        .collect();
    poses::write_poses(&dir.join(TRAJECTORY_FILE), &trajectory)?;
    files.push(TRAJECTORY_FILE.to_string());

    let mut manifest = String::new();
    for f in &files {
        manifest.push_str(f);
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    files.push(MANIFEST_FILE.to_string());
    Ok(files)
}

/// Ground truth of one ordered pair as read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub target: usize,
    pub source: usize,
    pub rigid: FlowField,
    pub residual: FlowField,
    pub full: FlowField,
    pub occlusion: Mask,
}

/// A scene read back from a directory. Frames carry the 8-bit quantization
/// of the image files; ground truth flows/depths carry f32 precision.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub spec: SceneSpec,
    pub frames: Vec<Image>,
    pub gt_depth: Vec<DepthMap>,
    pub pairs: Vec<LoadedPair>,
    /// Camera-to-world pose per frame.
    pub trajectory: Vec<PoseSE3>,
}

impl LoadedScene {
    /// Relative camera motion T_{t->s} from the stored trajectory.
    pub fn relative_pose(&self, t: usize, s: usize) -> PoseSE3 {
        // world-to-camera of a frame is the inverse of its trajectory pose.
        self.trajectory[s].inverse().compose(&self.trajectory[t])
    }

    pub fn pair(&self, target: usize, source: usize) -> Option<&LoadedPair> {
        self.pairs
            .iter()
            .find(|p| p.target == target && p.source == source)
    }
}

pub fn load_scene(dir: &Path) -> Result<LoadedScene> {
    let spec_path = dir.join(SPEC_FILE);
    if !spec_path.exists() {
        return Err(Error::Parse {
            path: spec_path.display().to_string(),
            msg: "scene directory has no spec.toml".into(),
        });
    }
    let spec = SceneSpec::from_toml_str(&fs::read_to_string(&spec_path)?)?;
    let mut frames = Vec::with_capacity(spec.num_frames);
    let mut gt_depth = Vec::with_capacity(spec.num_frames);
    for i in 0..spec.num_frames {
        frames.push(pnm::read_image(&dir.join(frame_file(i, spec.channels)))?);
        gt_depth.push(pfm::read_depth(&dir.join(depth_file(i)))?);
    }
    let mut pairs = Vec::new();
    for i in 0..spec.num_frames - 1 {
        for &(t, s) in &[(i, i + 1), (i + 1, i)] {
            pairs.push(LoadedPair {
                target: t,
                source: s,
                rigid: flo::read_flow(&dir.join(flow_file("rigid", t, s)))?,
                residual: flo::read_flow(&dir.join(flow_file("residual", t, s)))?,
                full: flo::read_flow(&dir.join(flow_file("full", t, s)))?,
                occlusion: pnm::read_mask(&dir.join(occlusion_file(t, s)))?,
            });
        }
    }
    let trajectory = poses::read_poses(&dir.join(TRAJECTORY_FILE))?;
    if trajectory.len() != spec.num_frames {
        return Err(Error::Parse {
            path: dir.join(TRAJECTORY_FILE).display().to_string(),
            msg: format!(
                "expected {} poses, got {}",
                spec.num_frames,
                trajectory.len()
            ),
        });
    }
    Ok(LoadedScene {
        spec,
        frames,
        gt_depth,
        pairs,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraIntrinsics;
    use crate::scene::{generate_scene, Layout, TextureSpec};
    use tempfile::tempdir;

    fn spec() -> SceneSpec {
        SceneSpec {
            width: 24,
            height: 16,
            channels: 1,
            num_frames: 3,
            intrinsics: CameraIntrinsics::new(30.0, 30.0, 11.5, 7.5).unwrap(),
            layout: Layout::FrontoParallel { depth: 8.0 },
            texture: TextureSpec::default(),
            poses: vec![
                PoseSE3::identity(),
                PoseSE3::new([0.0, 0.01, 0.0], [0.1, 0.0, 0.0]),
                PoseSE3::new([0.0, 0.02, 0.0], [0.2, 0.0, 0.0]),
            ],
            objects: vec![],
            seed: 3,
        }
    }

    #[test]
    fn export_and_reload() {
        let dir = tempdir().unwrap();
        let scene = generate_scene(&spec()).unwrap();
        let files = export_scene(dir.path(), &scene).unwrap();
        assert!(files.iter().any(|f| f == "frame_000.pgm"));
        let loaded = load_scene(dir.path()).unwrap();
        assert_eq!(loaded.spec, scene.spec);
        assert_eq!(loaded.frames.len(), 3);
        assert_eq!(loaded.pairs.len(), 4);
        // Relative pose from the trajectory matches the generated pair pose.
        let rel = loaded.relative_pose(0, 1);
        let gt = scene.pair(0, 1).unwrap().pose;
        assert!((rel.rotation_matrix() - gt.rotation_matrix()).abs().max() < 1e-10);
        for k in 0..3 {
            assert!((rel.translation[k] - gt.translation[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        let scene1 = generate_scene(&spec()).unwrap();
        let scene2 = generate_scene(&spec()).unwrap();
        export_scene(d1.path(), &scene1).unwrap();
        export_scene(d2.path(), &scene2).unwrap();
        for entry in fs::read_dir(d1.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let a = fs::read(d1.path().join(&name)).unwrap();
            let b = fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name:?} differs");
        }
    }
}
