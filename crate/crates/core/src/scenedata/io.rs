use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};

use super::scene::Image;
use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Round-half-up quantization to 8 bits.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes an 8-bit RGB image. `.png` paths are PNG-encoded; anything else is
/// written as binary PPM.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let bytes: Vec<u8> = image.data.iter().map(|&v| quantize(v)).collect();
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let encoded = if is_png {
        let buf = RgbImage::from_raw(image.width as u32, image.height as u32, bytes)
            .ok_or_else(|| Error::format(path, "pixel buffer does not match dimensions"))?;
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::format(path, e.to_string()))?;
        out.into_inner()
    } else {
        let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
        out.extend_from_slice(&bytes);
        out
    };
    write_atomic(path, &encoded)
}

/// Reads a PNG or PPM image into `[0, 1]` floats, compositing any alpha
/// channel over `background`.
pub fn read_image(path: &Path, background: [f64; 3]) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    let rgba = decoded.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let has_alpha = decoded.color().has_alpha();
    let mut data = Vec::with_capacity(w * h * 3);
    for px in rgba.pixels() {
        let a = if has_alpha { px[3] as f64 / 255.0 } else { 1.0 };
        for k in 0..3 {
            data.push(px[k] as f64 / 255.0 * a + background[k] * (1.0 - a));
        }
    }
    Image::new(w, h, data)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".txt");
    path.with_file_name(name)
}

/// Writes a depth map as raw little-endian f32 plus a text sidecar
/// (`<path>.txt`) with width, height, min and max.
pub fn write_depth(path: &Path, width: usize, height: usize, depth: &[f32]) -> Result<()> {
    if depth.len() != width * height {
        return Err(Error::format(path, format!("{} depths for a {width}x{height} map", depth.len())));
    }
    let bytes: Vec<u8> = depth.iter().flat_map(|v| v.to_le_bytes()).collect();
    let min = depth.iter().copied().fold(f32::INFINITY, f32::min);
    let max = depth.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    write_atomic(path, &bytes)?;
    let header = format!("width {width}\nheight {height}\nmin {min}\nmax {max}\n");
    write_atomic(&sidecar(path), header.as_bytes())
}

/// Reads a depth map written by [`write_depth`]; returns `(width, height,
/// values)`.
pub fn read_depth(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let side = sidecar(path);
    let header = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let field = |key: &str| -> Result<usize> {
        header
            .lines()
            .find_map(|l| l.strip_prefix(key)?.trim().parse().ok())
            .ok_or_else(|| Error::format(&side, format!("missing or invalid `{key}`")))
    };
    let (w, h) = (field("width")?, field("height")?);
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * w * h {
        return Err(Error::format(path, format!("expected {} bytes, found {}", 4 * w * h, bytes.len())));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((w, h, values))
}
