//! Paired cropping: reference and distorted must see the same window.

use ndarray::{s, Array3, ArrayView3};
use rand::Rng;

use crate::error::{AmqfError, Result};
use crate::rng::rng_for;

use super::ImagePair;

/// Crop the same randomly chosen `size x size` window from both images of a
/// pair. Deterministic per seed; errors when either image is smaller than
/// `size` (there is no implicit upscaling).
pub fn paired_random_crop(pair: &ImagePair, size: usize, seed: u64) -> Result<ImagePair> {
    let (h, w, _) = pair.reference.dim();
    if h < size || w < size {
        return Err(AmqfError::validation(format!(
            "image {h}x{w} smaller than crop size {size}"
        )));
    }
    let mut rng = rng_for(seed, &[h as u64, w as u64]);
    let oy = rng.random_range(0..=h - size);
    let ox = rng.random_range(0..=w - size);
    Ok(ImagePair {
        reference: crop_at(&pair.reference.view(), oy, ox, size),
        distorted: crop_at(&pair.distorted.view(), oy, ox, size),
        mos: pair.mos,
        kind: pair.kind.clone(),
        level: pair.level,
    })
}

/// Deterministic center crop used at inference time.
pub fn center_crop(image: &ArrayView3<f64>, size: usize) -> Result<Array3<f64>> {
    let (h, w, _) = image.dim();
    if h < size || w < size {
        return Err(AmqfError::validation(format!(
            "image {h}x{w} smaller than crop size {size}"
        )));
    }
    let oy = (h - size) / 2;
    let ox = (w - size) / 2;
    Ok(crop_at(image, oy, ox, size))
}

fn crop_at(image: &ArrayView3<f64>, oy: usize, ox: usize, size: usize) -> Array3<f64> {
    image
        .slice(s![oy..oy + size, ox..ox + size, ..])
        .to_owned()
}
