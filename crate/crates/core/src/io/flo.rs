//! Middlebury `.flo` optical flow files: float magic 202021.25, int32 width
//! and height, then interleaved (u, v) float32 pairs, row-major,
//! little-endian throughout.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let (w, h) = (flow.width, flow.height);
    let mut out = Vec::with_capacity(12 + w * h * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for i in 0..w * h {
        out.extend_from_slice(&(flow.u[i] as f32).to_le_bytes());
        out.extend_from_slice(&(flow.v[i] as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let data = fs::read(path)?;
    let err = |msg: String| Error::Parse {
        path: path.display().to_string(),
        msg,
    };
    if data.len() < 12 {
        return Err(err("file too short for a .flo header".into()));
    }
    let magic = f32::from_le_bytes([data[0], data[1], data[2], data[3]]);
    if magic != FLO_MAGIC {
        return Err(err(format!("bad magic {magic} (want {FLO_MAGIC})")));
    }
    let w = i32::from_le_bytes([data[4], data[5], data[6], data[7]]);
    let h = i32::from_le_bytes([data[8], data[9], data[10], data[11]]);
    if w <= 0 || h <= 0 || w > 1 << 20 || h > 1 << 20 {
        return Err(err(format!("implausible dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let need = w * h * 8;
    if data.len() < 12 + need {
        return Err(err(format!("raster too short: {} < {need}", data.len() - 12)));
    }
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    let mut off = 12;
    for _ in 0..w * h {
        u.push(f32::from_le_bytes([data[off], data[off + 1], data[off + 2], data[off + 3]]) as f64);
        v.push(f32::from_le_bytes([data[off + 4], data[off + 5], data[off + 6], data[off + 7]]) as f64);
        off += 8;
    }
    FlowField::new(w, h, u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let flow = FlowField::new(
            5,
            4,
            (0..20).map(|i| i as f64 * 0.25 - 2.0).collect(),
            (0..20).map(|i| (i % 3) as f64 * 1.5).collect(),
        )
        .unwrap();
        write_flow(&path, &flow).unwrap();
        let bytes1 = fs::read(&path).unwrap();
        let back = read_flow(&path).unwrap();
        write_flow(&path, &back).unwrap();
        assert_eq!(bytes1, fs::read(&path).unwrap());
        assert_eq!(flow, back); // values here are exact in f32
    }

    #[test]
    fn magic_checked() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.flo");
        fs::write(&path, [0u8; 16]).unwrap();
        assert!(read_flow(&path).is_err());
    }
}
