//! Binary PGM (P5) and PPM (P6) images, 8-bit, mapped linearly to [0, 1].

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::InvalidSpec(format!(
                "cannot encode {c}-channel image as PGM/PPM"
            )))
        }
    };
    let mut out = Vec::with_capacity(img.data().len() + 32);
    write!(out, "{magic}\n{} {}\n255\n", img.width(), img.height())?;
    out.extend(img.data().iter().map(|&v| quantize(v)));
    fs::write(path, out)?;
    Ok(())
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let img = Image::new(mask.width, mask.height, 1, mask.data.clone())?;
    write_image(path, &img)
}

/// Reads the header tokens of a PNM file, skipping whitespace and comments.
fn read_header(data: &[u8], path: &Path) -> Result<(usize, [usize; 3], usize)> {
    let err = |msg: &str| Error::Parse {
        path: path.display().to_string(),
        msg: msg.into(),
    };
    if data.len() < 2 || data[0] != b'P' {
        return Err(err("not a PNM file"));
    }
    let channels = match data[1] {
        b'5' => 1,
        b'6' => 3,
        _ => return Err(err("unsupported PNM magic (want P5 or P6)")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        *field = std::str::from_utf8(&data[start..pos])
            .map_err(|_| err("bad header bytes"))?
            .parse()
            .map_err(|_| err("bad header number"))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(err("missing raster separator"));
    }
    pos += 1;
    Ok((channels, fields, pos))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let data = fs::read(path)?;
    let (channels, [w, h, maxval], start) = read_header(&data, path)?;
    if maxval != 255 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            msg: format!("only 8-bit PNM supported, maxval {maxval}"),
        });
    }
    let need = w * h * channels;
    let raster = &data[start..];
    if raster.len() < need {
        return Err(Error::Parse {
            path: path.display().to_string(),
            msg: format!("raster too short: {} < {need}", raster.len()),
        });
    }
    let values: Vec<f64> = raster[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(w, h, channels, values)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = read_image(path)?;
    if img.channels() != 1 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            msg: "mask must be single channel".into(),
        });
    }
    Mask::new(img.width(), img.height(), img.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn pgm_round_trip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let img = Image::from_fn(7, 5, 1, |x, y, _| ((x * 37 + y * 11) % 256) as f64 / 255.0)
            .unwrap();
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(img, back);
        // File-level round trip.
        let bytes1 = std::fs::read(&path).unwrap();
        write_image(&path, &back).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        let img = Image::from_fn(4, 3, 3, |x, y, c| ((x + y * 4 + c * 12) * 19 % 256) as f64 / 255.0)
            .unwrap();
        write_image(&path, &img).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"hello world").unwrap();
        assert!(read_image(&path).is_err());
    }
}
