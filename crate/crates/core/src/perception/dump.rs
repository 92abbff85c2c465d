use std::path::Path;

use image::{ImageBuffer, Luma};

use super::PerceptionError;

/// Largest range representable in a millimeter-quantized 16-bit pixel.
pub const PNG16_SATURATION_M: f64 = 65.535;

/// Writes a range grid as a 16-bit grayscale PNG in millimeters (top row =
/// highest elevation) plus a `.txt` sidecar with the given header entries.
pub fn write_depth_png16(
    path: &Path,
    width: usize,
    height: usize,
    data: &[f64],
    header: &[(&str, String)],
) -> Result<(), PerceptionError> {
    let mut img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(width as u32, height as u32);
    for row in 0..height {
        for col in 0..width {
            let mm = (data[row * width + col] * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16;
            img.put_pixel(col as u32, (height - 1 - row) as u32, Luma([mm]));
        }
    }
    img.save(path).map_err(|e| PerceptionError::Io(format!("{}: {}", path.display(), e)))?;
    let mut text = format!("width = {}\nheight = {}\nunits = \"mm\"\nsaturation_m = {}\n", width, height, PNG16_SATURATION_M);
    for (k, v) in header {
        text.push_str(&format!("{} = {}\n", k, v));
    }
    let side = path.with_extension("txt");
    std::fs::write(&side, text).map_err(|e| PerceptionError::Io(format!("{}: {}", side.display(), e)))
}

/// Reads back a PNG written by [`write_depth_png16`], in meters, row 0 =
/// lowest elevation.
pub fn read_depth_png16(path: &Path) -> Result<(usize, usize, Vec<f64>), PerceptionError> {
    let img = image::open(path).map_err(|e| PerceptionError::Io(format!("{}: {}", path.display(), e)))?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0.0; w * h];
    for (x, y, p) in img.enumerate_pixels() {
        out[(h - 1 - y as usize) * w + x as usize] = p[0] as f64 / 1000.0;
    }
    Ok((w, h, out))
}
