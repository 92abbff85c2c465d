use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::config::Config;
use crate::sim::{Scenario, Vec3};

use super::{BenchError, ResultRow};

pub fn write_rows_csv(path: &Path, rows: &[ResultRow]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<ResultRow>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?)
}

/// Structured-text report: build id, the full resolved config and the
/// results.
pub fn write_report<T: Serialize>(path: &Path, build_id: &str, config: &Config, results: &T) -> Result<(), BenchError> {
    let mut root = toml::Table::new();
    root.insert("build_id".into(), toml::Value::String(build_id.to_string()));
    root.insert("config".into(), toml::Value::try_from(config).map_err(|e| BenchError::Io(e.to_string()))?);
    root.insert("results".into(), toml::Value::try_from(results).map_err(|e| BenchError::Io(e.to_string()))?);
    let text = toml::to_string(&root).map_err(|e| BenchError::Io(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| BenchError::Io(format!("{}: {}", path.display(), e)))
}

/// Writes `text` as the run manifest of `dir`.
pub fn write_manifest(dir: &Path, text: &str) -> Result<PathBuf, BenchError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("manifest.toml");
    std::fs::write(&path, text).map_err(|e| BenchError::Io(format!("{}: {}", path.display(), e)))?;
    Ok(path)
}

const RASTER: u32 = 256;
const TILE_SCALE: u32 = 2;

/// Per-step PNG frames: an overhead raster of obstacles, trails and agents
/// (frozen agents in red) above per-agent input tiles, plus an index.
#[derive(Debug)]
pub struct FrameWriter {
    dir: PathBuf,
    tile_dims: Option<[usize; 2]>,
    files: Vec<(usize, String)>,
}

impl FrameWriter {
    /// `tile_dims` is `[height, width]` of the per-agent inputs, if any.
    pub fn new(dir: &Path, tile_dims: Option<[usize; 2]>) -> Result<Self, BenchError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), tile_dims, files: Vec::new() })
    }

    pub fn count(&self) -> usize {
        self.files.len()
    }

    pub fn write(
        &mut self,
        step: usize,
        scenario: &Scenario,
        history: &[Vec<Vec3>],
        current: &[Vec3],
        frozen_at: &[Option<usize>],
        inputs: Option<&[f64]>,
    ) -> Result<(), BenchError> {
        let n = current.len();
        let tiles = self.tile_dims.filter(|_| inputs.is_some());
        let (tw, th) = tiles.map_or((0, 0), |[h, w]| (w as u32 * TILE_SCALE, h as u32 * TILE_SCALE));
        let width = RASTER.max(tw);
        let per_row = if tw == 0 { 1 } else { (width / tw).max(1) };
        let tile_rows = if tw == 0 { 0 } else { (n as u32).div_ceil(per_row) };
        let mut img = RgbImage::from_pixel(width, RASTER + tile_rows * th, Rgb([255, 255, 255]));

        let half = scenario.arena_half_extent.max(1.0);
        let to_px = |p: Vec3| -> (f64, f64) {
            let s = RASTER as f64 / (2.0 * half);
            ((p[0] + half) * s, (half - p[1]) * s)
        };
        let disk = |img: &mut RgbImage, c: (f64, f64), r: f64, color: Rgb<u8>| {
            let r = r.max(0.5);
            let (x0, x1) = ((c.0 - r).floor().max(0.0) as u32, (c.0 + r).ceil().min(RASTER as f64 - 1.0).max(0.0) as u32);
            let (y0, y1) = ((c.1 - r).floor().max(0.0) as u32, (c.1 + r).ceil().min(RASTER as f64 - 1.0).max(0.0) as u32);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (dx, dy) = (x as f64 + 0.5 - c.0, y as f64 + 0.5 - c.1);
                    if dx * dx + dy * dy <= r * r {
                        img.put_pixel(x, y, color);
                    }
                }
            }
        };
        let px_per_m = RASTER as f64 / (2.0 * half);
        for o in &scenario.obstacles {
            disk(&mut img, to_px(o.center), o.radius * px_per_m, Rgb([150, 150, 150]));
        }
        for a in &scenario.agents {
            disk(&mut img, to_px(a.goal), 1.5, Rgb([40, 170, 60]));
        }
        for frame in history {
            for &p in frame {
                disk(&mut img, to_px(p), 0.5, Rgb([170, 190, 235]));
            }
        }
        for (i, &p) in current.iter().enumerate() {
            let color = if frozen_at[i].is_some() { Rgb([220, 30, 30]) } else { Rgb([30, 60, 200]) };
            disk(&mut img, to_px(p), 2.5, color);
        }

        if let (Some([h, w]), Some(x)) = (tiles, inputs) {
            for i in 0..n {
                let (ox, oy) = ((i as u32 % per_row) * tw, RASTER + (i as u32 / per_row) * th);
                for row in 0..h {
                    for col in 0..w {
                        let val = x[i * h * w + row * w + col].clamp(0.0, 1.0);
                        let g = (val * 255.0).round() as u8;
                        for dy in 0..TILE_SCALE {
                            for dx in 0..TILE_SCALE {
                                // Row 0 is the lowest elevation: draw it at the bottom.
                                let y = oy + (h - 1 - row) as u32 * TILE_SCALE + dy;
                                img.put_pixel(ox + col as u32 * TILE_SCALE + dx, y, Rgb([g, g, g]));
                            }
                        }
                    }
                }
            }
        }

        let name = format!("frame_{:05}.png", step);
        let path = self.dir.join(&name);
        img.save(&path).map_err(|e| BenchError::Io(format!("{}: {}", path.display(), e)))?;
        self.files.push((step, name));
        Ok(())
    }

    /// Writes `index.csv` (step, file) and returns the frame count.
    pub fn finish(self) -> Result<usize, BenchError> {
        let mut w = csv::Writer::from_path(self.dir.join("index.csv"))?;
        w.write_record(["step", "file"])?;
        for (s, f) in &self.files {
            w.write_record([s.to_string(), f.clone()])?;
        }
        w.flush()?;
        Ok(self.files.len())
    }
}
