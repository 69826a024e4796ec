//! Binary optimizer checkpoints, written at coarse-to-fine level boundaries.
//! Little-endian throughout. A checkpoint carries the stage position, the
//! variables at the working resolution, and the stage's full-resolution
//! init (frozen groups are re-pooled from it at every level), which is all
//! a bit-identical resume needs — Adam moments reset at each level.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid};
use crate::objective::Variables;
use crate::se3::PoseSE3;

const MAGIC: &[u8; 8] = b"WARPCKP2";

/// Marks a stage that has not started a level yet (vars == init, full res).
pub const LEVEL_FRESH: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Index into the run's stage list; equal to the stage count when done.
    pub stage_index: u32,
    /// Next coarse-to-fine level to run (0 = full resolution), or
    /// [`LEVEL_FRESH`].
    pub level: u32,
    pub pairs: Vec<(u32, u32)>,
    /// Variables at the working resolution of `level`.
    pub vars: Variables,
    /// Full-resolution init of the current stage.
    pub init: Variables,
}

fn push_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_vars(out: &mut Vec<u8>, vars: &Variables) {
    let (w, h) = (vars.log_depth[0].width, vars.log_depth[0].height);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for g in &vars.log_depth {
        push_f64s(out, &g.data);
    }
    for p in &vars.poses {
        push_f64s(out, &p.rotation);
        push_f64s(out, &p.translation);
    }
    for f in &vars.residual {
        push_f64s(out, &f.u);
        push_f64s(out, &f.v);
    }
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ck.stage_index.to_le_bytes());
    out.extend_from_slice(&ck.level.to_le_bytes());
    out.extend_from_slice(&(ck.vars.log_depth.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ck.pairs.len() as u32).to_le_bytes());
    for &(t, s) in &ck.pairs {
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&s.to_le_bytes());
    }
    push_vars(&mut out, &ck.vars);
    push_vars(&mut out, &ck.init);
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Parse {
                path: self.path.clone(),
                msg: "truncated checkpoint".into(),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }

    fn vars(&mut self, num_frames: usize, num_pairs: usize) -> Result<Variables> {
        let w = self.u32()? as usize;
        let h = self.u32()? as usize;
        let mut log_depth = Vec::with_capacity(num_frames);
        for _ in 0..num_frames {
            log_depth.push(Grid::from_vec(w, h, 1, self.f64s(w * h)?));
        }
        let mut poses = Vec::with_capacity(num_pairs);
        for _ in 0..num_pairs {
            let rot = self.f64s(3)?;
            let tr = self.f64s(3)?;
            poses.push(PoseSE3::new(
                [rot[0], rot[1], rot[2]],
                [tr[0], tr[1], tr[2]],
            ));
        }
        let mut residual = Vec::with_capacity(num_pairs);
        for _ in 0..num_pairs {
            let u = self.f64s(w * h)?;
            let v = self.f64s(w * h)?;
            residual.push(FlowField::new(w, h, u, v)?);
        }
        Ok(Variables {
            log_depth,
            poses,
            residual,
        })
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = fs::read(path)?;
    let mut r = Reader {
        data: &data,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(8)? != MAGIC {
        return Err(Error::Parse {
            path: path.display().to_string(),
            msg: "bad checkpoint magic".into(),
        });
    }
    let stage_index = r.u32()?;
    let level = r.u32()?;
    let num_frames = r.u32()? as usize;
    let num_pairs = r.u32()? as usize;
    let mut pairs = Vec::with_capacity(num_pairs);
    for _ in 0..num_pairs {
        pairs.push((r.u32()?, r.u32()?));
    }
    let vars = r.vars(num_frames, num_pairs)?;
    let init = r.vars(num_frames, num_pairs)?;
    Ok(Checkpoint {
        stage_index,
        level,
        pairs,
        vars,
        init,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let coarse = Variables {
            log_depth: vec![Grid::from_fn(3, 2, 1, |x, y, _| (x + y) as f64 * 0.1)],
            poses: vec![PoseSE3::new([0.1, 0.2, 0.3], [1.0, 2.0, 3.0]); 2],
            residual: vec![FlowField::uniform(3, 2, 0.5, -0.25); 2],
        };
        let full = Variables {
            log_depth: vec![Grid::from_fn(6, 4, 1, |x, y, _| (x * y) as f64 * 0.01)],
            poses: coarse.poses.clone(),
            residual: vec![FlowField::zeros(6, 4); 2],
        };
        let ck = Checkpoint {
            stage_index: 1,
            level: 2,
            pairs: vec![(0, 1), (1, 0)],
            vars: coarse,
            init: full,
        };
        write_checkpoint(&path, &ck).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.stage_index, 1);
        assert_eq!(back.level, 2);
        assert_eq!(back.pairs, ck.pairs);
        assert_eq!(back.vars.log_depth[0].data, ck.vars.log_depth[0].data);
        assert_eq!(back.vars.residual[1].u, ck.vars.residual[1].u);
        assert_eq!(back.init.log_depth[0].width, 6);
        assert_eq!(back.init.log_depth[0].data, ck.init.log_depth[0].data);
    }
}
