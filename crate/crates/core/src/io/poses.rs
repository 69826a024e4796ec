//! Pose text files: one line per pose, 12 numbers forming the row-major
//! 3x4 [R | t] matrix (KITTI odometry layout). Numbers use the shortest
//! decimal form that parses back to the identical f64, and the parsed type
//! keeps the literal matrix so read-then-write reproduces the file
//! byte-for-byte.

use std::fs;
use std::path::Path;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::se3::{rotation_to_euler, PoseSE3};

/// A pose as stored on disk: the raw 3x4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseMat {
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl PoseMat {
    pub fn from_pose(pose: &PoseSE3) -> Self {
        let m = pose.rotation_matrix();
        PoseMat {
            r: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            t: pose.translation,
        }
    }

    pub fn to_pose(&self) -> PoseSE3 {
        let m = Matrix3::new(
            self.r[0][0], self.r[0][1], self.r[0][2], self.r[1][0], self.r[1][1], self.r[1][2],
            self.r[2][0], self.r[2][1], self.r[2][2],
        );
        PoseSE3::new(rotation_to_euler(&m), self.t)
    }

    /// Camera position when this is a camera-to-world pose.
    pub fn position(&self) -> [f64; 3] {
        self.t
    }
}

pub fn format_pose(p: &PoseMat) -> String {
    let mut parts = Vec::with_capacity(12);
    for row in 0..3 {
        for col in 0..3 {
            parts.push(format!("{}", p.r[row][col]));
        }
        parts.push(format!("{}", p.t[row]));
    }
    parts.join(" ")
}

pub fn write_pose_mats(path: &Path, poses: &[PoseMat]) -> Result<()> {
    let mut out = String::new();
    for p in poses {
        out.push_str(&format_pose(p));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_poses(path: &Path, poses: &[PoseSE3]) -> Result<()> {
    let mats: Vec<PoseMat> = poses.iter().map(PoseMat::from_pose).collect();
    write_pose_mats(path, &mats)
}

pub fn parse_pose(line: &str) -> Option<PoseMat> {
    let n: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    if n.len() != 12 {
        return None;
    }
    Some(PoseMat {
        r: [[n[0], n[1], n[2]], [n[4], n[5], n[6]], [n[8], n[9], n[10]]],
        t: [n[3], n[7], n[11]],
    })
}

pub fn read_pose_mats(path: &Path) -> Result<Vec<PoseMat>> {
    let text = fs::read_to_string(path)?;
    let mut poses = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_pose(line) {
            Some(p) => poses.push(p),
            None => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    msg: format!("line {}: expected 12 numbers", ln + 1),
                })
            }
        }
    }
    Ok(poses)
}

pub fn read_poses(path: &Path) -> Result<Vec<PoseSE3>> {
    Ok(read_pose_mats(path)?.iter().map(PoseMat::to_pose).collect())
}
