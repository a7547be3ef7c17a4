//! PNG/CSV export of reconstruction products for visual inspection.
//! All images are 8-bit; quantization here is for viewing only — exact
//! data travels through the tensor container instead.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::math::Real;
use crate::scene::{AlbedoMap, NormalMap, PatternSet};
use crate::stereo::AngularError;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a normal map in the usual RGB encoding: x and y map [-1, 1] to
/// [0, 255] and the toward-camera z component is negated first, so a
/// fronto-parallel surface renders as (128, 128, 255). Invalid pixels are
/// black.
pub fn write_normal_png<T: Real>(map: &NormalMap<T>, path: &Path) -> Result<()> {
    let (h, w) = map.resolution();
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = if map.valid_mask[[y, x]] {
                let n = map.normal(y, x);
                Rgb([
                    to_u8((n.x.to_f64_lossy() + 1.0) / 2.0),
                    to_u8((n.y.to_f64_lossy() + 1.0) / 2.0),
                    to_u8((-n.z.to_f64_lossy() + 1.0) / 2.0),
                ])
            } else {
                Rgb([0, 0, 0])
            };
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    img.save(path)?;
    Ok(())
}

/// Writes an albedo map scaled so the brightest channel maps to 255
/// (identity if everything is within [0, 1]). Invalid pixels are black.
pub fn write_albedo_png<T: Real>(map: &AlbedoMap<T>, path: &Path) -> Result<()> {
    let shape = map.values.shape();
    let (h, w) = (shape[0], shape[1]);
    let mut scale = 1.0f64;
    for v in map.values.iter() {
        scale = scale.max(v.to_f64_lossy());
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = if map.valid_mask[[y, x]] {
                Rgb([
                    to_u8(map.values[[y, x, 0]].to_f64_lossy() / scale),
                    to_u8(map.values[[y, x, 1]].to_f64_lossy() / scale),
                    to_u8(map.values[[y, x, 2]].to_f64_lossy() / scale),
                ])
            } else {
                Rgb([0, 0, 0])
            };
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    img.save(path)?;
    Ok(())
}

/// Writes one PNG per pattern, upscaling the rows x cols superpixel grid
/// with nearest-neighbor so the files are inspectable. `grid` gives the
/// display layout; `b` must equal `grid.0 * grid.1`.
pub fn write_pattern_pngs<T: Real>(
    patterns: &PatternSet<T>,
    grid: (usize, usize),
    cell_px: usize,
    dir: &Path,
    stem: &str,
) -> Result<Vec<std::path::PathBuf>> {
    let (rows, cols) = grid;
    if rows * cols != patterns.b() {
        return Err(Error::shape(format!(
            "display grid {rows}x{cols} does not cover b = {}",
            patterns.b()
        )));
    }
    if cell_px == 0 {
        return Err(Error::invalid("cell_px must be positive"));
    }
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(patterns.k());
    for i in 0..patterns.k() {
        let mut img = RgbImage::new((cols * cell_px) as u32, (rows * cell_px) as u32);
        for r in 0..rows {
            for c in 0..cols {
                let j = r * cols + c;
                let px = Rgb([
                    to_u8(patterns.values[[i, j, 0]].to_f64_lossy()),
                    to_u8(patterns.values[[i, j, 1]].to_f64_lossy()),
                    to_u8(patterns.values[[i, j, 2]].to_f64_lossy()),
                ]);
                for dy in 0..cell_px {
                    for dx in 0..cell_px {
                        img.put_pixel((c * cell_px + dx) as u32, (r * cell_px + dy) as u32, px);
                    }
                }
            }
        }
        let path = dir.join(format!("{stem}_{i:03}.png"));
        img.save(&path)?;
        out.push(path);
    }
    Ok(out)
}

/// Writes an angular-error heat map (black = 0, white = `max_error`,
/// invalid pixels dark blue).
pub fn write_error_png<T: Real>(err: &AngularError<T>, max_error: f64, path: &Path) -> Result<()> {
    if !(max_error > 0.0) {
        return Err(Error::invalid("max_error must be positive"));
    }
    let shape = err.map.shape();
    let (h, w) = (shape[0], shape[1]);
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = if err.valid[[y, x]] {
                let g = to_u8(err.map[[y, x]].to_f64_lossy() / max_error);
                Rgb([g, g, g])
            } else {
                Rgb([0, 0, 64])
            };
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    img.save(path)?;
    Ok(())
}

/// Writes a plain RGB radiance image with a fixed linear scale (values
/// clamp at `white`).
pub fn write_radiance_png<T: Real>(values: &Array3<T>, white: f64, path: &Path) -> Result<()> {
    if !(white > 0.0) {
        return Err(Error::invalid("white level must be positive"));
    }
    let shape = values.shape();
    let (h, w) = (shape[0], shape[1]);
    if shape[2] != 3 {
        return Err(Error::shape("radiance image must have 3 channels"));
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(
                x as u32,
                y as u32,
                Rgb([
                    to_u8(values[[y, x, 0]].to_f64_lossy() / white),
                    to_u8(values[[y, x, 1]].to_f64_lossy() / white),
                    to_u8(values[[y, x, 2]].to_f64_lossy() / white),
                ]),
            );
        }
    }
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use tempfile::tempdir;

    #[test]
    fn normal_png_encodes_fronto_parallel_as_lavender() {
        let dir = tempdir().unwrap();
        let values = Array3::from_shape_fn((2, 2, 3), |(_, _, c)| if c == 2 { -1.0 } else { 0.0 });
        let mut mask = Array2::from_elem((2, 2), true);
        mask[[1, 1]] = false;
        let map = NormalMap {
            values,
            valid_mask: mask,
        };
        let path = dir.path().join("n.png");
        write_normal_png(&map, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(0, 0), &Rgb([128, 128, 255]));
        assert_eq!(img.get_pixel(1, 1), &Rgb([0, 0, 0]));
    }

    #[test]
    fn pattern_pngs_upscale_and_count() {
        let dir = tempdir().unwrap();
        let mut v = Array3::zeros((2, 4, 3));
        v[[0, 0, 0]] = 1.0;
        v[[1, 3, 2]] = 1.0;
        let p = PatternSet::new(v).unwrap();
        let files = write_pattern_pngs(&p, (2, 2), 8, dir.path(), "pat").unwrap();
        assert_eq!(files.len(), 2);
        let img = image::open(&files[0]).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (16, 16));
        assert_eq!(img.get_pixel(0, 0), &Rgb([255, 0, 0]));
        assert_eq!(img.get_pixel(15, 15), &Rgb([0, 0, 0]));
    }

    #[test]
    fn pattern_pngs_reject_bad_grid() {
        let dir = tempdir().unwrap();
        let p = PatternSet::new(Array3::<f64>::zeros((1, 4, 3))).unwrap();
        assert!(write_pattern_pngs(&p, (3, 2), 4, dir.path(), "pat").is_err());
    }

    #[test]
    fn albedo_png_scales_to_peak() {
        let dir = tempdir().unwrap();
        let mut values = Array3::zeros((1, 1, 3));
        values[[0, 0, 0]] = 2.0;
        values[[0, 0, 1]] = 1.0;
        let map = AlbedoMap {
            values,
            valid_mask: Array2::from_elem((1, 1), true),
        };
        let path = dir.path().join("a.png");
        write_albedo_png(&map, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(0, 0), &Rgb([255, 128, 0]));
    }
}
