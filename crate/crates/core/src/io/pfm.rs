//! PFM scalar grids: `Pf` grayscale, little-endian (scale -1.0), rows stored
//! bottom-to-top as the format prescribes.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid};

pub fn write_grid(path: &Path, grid: &Grid) -> Result<()> {
    if grid.channels != 1 {
        return Err(Error::InvalidSpec(
            "PFM writer handles single-channel grids".into(),
        ));
    }
    let (w, h) = (grid.width, grid.height);
    let mut out = Vec::with_capacity(w * h * 4 + 32);
    write!(out, "Pf\n{w} {h}\n-1.0\n")?;
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(grid.at(x, y, 0) as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    write_grid(
        path,
        &Grid::from_vec(depth.width, depth.height, 1, depth.data.clone()),
    )
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    let data = fs::read(path)?;
    let err = |msg: String| Error::Parse {
        path: path.display().to_string(),
        msg,
    };
    // Header: three whitespace-terminated tokens.
    let mut pos = 0;
    let mut token = |data: &[u8]| -> Result<String> {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated PFM header".into()));
        }
        Ok(std::str::from_utf8(&data[start..pos])
            .map_err(|_| err("bad header bytes".into()))?
            .to_string())
    };
    let magic = token(&data)?;
    if magic != "Pf" {
        return Err(err(format!("unsupported PFM magic {magic:?} (want Pf)")));
    }
    let w: usize = token(&data)?.parse().map_err(|_| err("bad width".into()))?;
    let h: usize = token(&data)?.parse().map_err(|_| err("bad height".into()))?;
    let scale: f64 = token(&data)?.parse().map_err(|_| err("bad scale".into()))?;
    if scale >= 0.0 {
        return Err(err("big-endian PFM not supported (scale must be < 0)".into()));
    }
    pos += 1; // single whitespace after the scale line
    let need = w * h * 4;
    if data.len() < pos + need {
        return Err(err(format!("raster too short: {} < {need}", data.len() - pos)));
    }
    let mut grid = Grid::zeros(w, h, 1);
    let mut off = pos;
    for y in (0..h).rev() {
        for x in 0..w {
            let b = [data[off], data[off + 1], data[off + 2], data[off + 3]];
            *grid.at_mut(x, y, 0) = f32::from_le_bytes(b) as f64;
            off += 4;
        }
    }
    Ok(grid)
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let g = read_grid(path)?;
    DepthMap::new(g.width, g.height, g.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_bit_exact_at_f32() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let depth = DepthMap::from_fn(9, 6, |x, y| 1.0 + (x as f64 * 0.37 + y as f64 * 0.11))
            .unwrap();
        write_depth(&path, &depth).unwrap();
        let bytes1 = fs::read(&path).unwrap();
        let back = read_depth(&path).unwrap();
        write_depth(&path, &back).unwrap();
        assert_eq!(bytes1, fs::read(&path).unwrap());
        for (a, b) in depth.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= (*a as f32).abs() as f64 * 1e-7);
        }
    }

    #[test]
    fn rejects_positive_scale() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("be.pfm");
        fs::write(&path, b"Pf\n2 2\n1.0\n0000000000000000").unwrap();
        assert!(read_grid(&path).is_err());
    }
}
