//! PNG reading/writing and the unit-range image convention.
//!
//! Images live in memory as `[H, W, C]` arrays of `f64` in `[0, 1]`,
//! channel-last. 8-bit files are converted by dividing by 255.

use std::path::Path;

use image::{ImageBuffer, Rgb};
use ndarray::{Array3, ArrayView3};

use crate::error::{AmqfError, Result};

/// Load an RGB PNG into a unit-range `[H, W, 3]` array.
pub fn load_image(path: &Path) -> Result<Array3<f64>> {
    if !path.exists() {
        return Err(AmqfError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let img = image::open(path)
        .map_err(|e| AmqfError::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[(y as usize, x as usize, c)] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Write a unit-range `[H, W, 3]` (or `[H, W, 1]`, replicated) array as PNG.
pub fn save_image(path: &Path, img: &ArrayView3<f64>) -> Result<()> {
    let (h, w, c) = img.dim();
    if c != 3 && c != 1 {
        return Err(AmqfError::validation(format!(
            "save_image expects 1 or 3 channels, got {c}"
        )));
    }
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| {
            let v = img[(y as usize, x as usize, if c == 1 { 0 } else { ch })];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([px(0), px(1), px(2)])
    });
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| AmqfError::io(parent, e))?;
    }
    buf.save(path).map_err(|e| AmqfError::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Check every value lies in `[0, 1]`.
pub fn validate_unit_range(img: &ArrayView3<f64>) -> Result<()> {
    for &v in img.iter() {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(AmqfError::validation(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
    }
    Ok(())
}
