//! Seed-deterministic synthetic dataset generation.
//!
//! Each reference image mixes a color gradient, solid shapes and a smoothed
//! noise texture, then every `(kind, level)` combination produces one
//! distorted variant with pseudo-MOS `1 - level / levels`.

use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{AmqfError, Result};
use crate::filters::gaussian_blur_image;
use crate::rng::{derive_seed, rng_for};

use super::distortion::{apply_distortion, DistortionKind, DistortionSpec};
use super::image_io::save_image;
use super::{DatasetManifest, ManifestEntry};

/// Generate a procedural reference image: gradient background, random
/// rectangles and disks, plus band-limited noise.
pub fn procedural_reference(size: usize, seed: u64) -> Array3<f64> {
    let mut rng = rng_for(seed, &[0xA11CE]);
    let mut img = Array3::zeros((size, size, 3));

    // Gradient background between two random colors along a random direction.
    let c0: [f64; 3] = [0.0; 3].map(|_| rng.random_range(0.1..0.9));
    let c1: [f64; 3] = [0.0; 3].map(|_| rng.random_range(0.1..0.9));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dy, dx) = (angle.sin(), angle.cos());
    for y in 0..size {
        for x in 0..size {
            let t = 0.5 + 0.5 * (dy * (y as f64 / size as f64 - 0.5) + dx * (x as f64 / size as f64 - 0.5));
            for c in 0..3 {
                img[(y, x, c)] = c0[c] + t * (c1[c] - c0[c]);
            }
        }
    }

    // Solid shapes.
    let n_rects = rng.random_range(3..=6);
    for _ in 0..n_rects {
        paint_rect(&mut img, &mut rng);
    }
    let n_disks = rng.random_range(2..=4);
    for _ in 0..n_disks {
        paint_disk(&mut img, &mut rng);
    }

    // Band-limited noise texture.
    let raw = Array3::from_shape_simple_fn((size, size, 3), || rng.random_range(-0.5..0.5));
    let smooth = gaussian_blur_image(&raw.view(), 1.5);
    img += &smooth.mapv(|v| 0.5 * v);
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

fn paint_rect(img: &mut Array3<f64>, rng: &mut ChaCha8Rng) {
    let (h, w, _) = img.dim();
    let y0 = rng.random_range(0..h);
    let x0 = rng.random_range(0..w);
    let hh = rng.random_range(h / 8..=h / 2);
    let ww = rng.random_range(w / 8..=w / 2);
    let color: [f64; 3] = [0.0; 3].map(|_| rng.random_range(0.05..0.95));
    for y in y0..(y0 + hh).min(h) {
        for x in x0..(x0 + ww).min(w) {
            for c in 0..3 {
                img[(y, x, c)] = color[c];
            }
        }
    }
}

fn paint_disk(img: &mut Array3<f64>, rng: &mut ChaCha8Rng) {
    let (h, w, _) = img.dim();
    let cy = rng.random_range(0..h) as f64;
    let cx = rng.random_range(0..w) as f64;
    let r = rng.random_range(h as f64 / 10.0..h as f64 / 3.0);
    let color: [f64; 3] = [0.0; 3].map(|_| rng.random_range(0.05..0.95));
    for y in 0..h {
        for x in 0..w {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            if d <= r {
                for c in 0..3 {
                    img[(y, x, c)] = color[c];
                }
            }
        }
    }
}

/// Generate `n_refs` reference images, distort each by every
/// `(kind, level)` pair and write images plus `manifest.csv` under
/// `out_dir`. Pseudo-MOS is `1 - level / levels`. Fully deterministic in
/// `seed`.
pub fn synth_dataset(
    n_refs: usize,
    kinds: &[DistortionKind],
    levels: u32,
    image_size: usize,
    out_dir: &Path,
    seed: u64,
) -> Result<DatasetManifest> {
    if n_refs < 1 {
        return Err(AmqfError::validation("n_refs must be at least 1"));
    }
    if levels < 1 {
        return Err(AmqfError::validation("levels must be at least 1"));
    }
    if kinds.is_empty() {
        return Err(AmqfError::validation("at least one distortion kind required"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| AmqfError::io(out_dir, e))?;

    let mut entries = Vec::with_capacity(n_refs * kinds.len() * levels as usize);
    for r in 0..n_refs {
        let reference = procedural_reference(image_size, derive_seed(seed, &[r as u64]));
        let ref_path = out_dir.join(format!("ref_{r:03}.png"));
        save_image(&ref_path, &reference.view())?;
        for (ki, kind) in kinds.iter().enumerate() {
            for level in 1..=levels {
                let spec = DistortionSpec::from_level(*kind, level);
                let dist_seed = derive_seed(seed, &[r as u64, ki as u64, level as u64]);
                let distorted = apply_distortion(&reference.view(), &spec, dist_seed);
                let dist_path = out_dir.join(format!("dist_{r:03}_{kind}_l{level}.png"));
                save_image(&dist_path, &distorted.view())?;
                entries.push(ManifestEntry {
                    ref_path: ref_path.clone(),
                    dist_path,
                    mos: (levels - level) as f64 / levels as f64,
                    kind: Some(kind.name().to_string()),
                    level: Some(level),
                });
            }
        }
    }
    let manifest = DatasetManifest {
        entries,
        mos_scale: (0.0, 1.0),
        source_tag: "synthetic".into(),
    };
    super::write_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_count_is_refs_times_kinds_times_levels() {
        let dir = tempfile::tempdir().unwrap();
        let kinds = [DistortionKind::GaussianBlur, DistortionKind::GaussianNoise];
        let m = synth_dataset(2, &kinds, 3, 32, dir.path(), 7).unwrap();
        assert_eq!(m.len(), 12);
    }

    #[test]
    fn pseudo_mos_follows_the_level_formula() {
        let dir = tempfile::tempdir().unwrap();
        let kinds = [DistortionKind::GaussianBlur];
        let m = synth_dataset(1, &kinds, 3, 32, dir.path(), 1).unwrap();
        let by_level: Vec<f64> = m.entries.iter().map(|e| e.mos).collect();
        assert_eq!(by_level, vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);
        // Strictly decreasing in level for a fixed (ref, kind).
        assert!(by_level.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn same_seed_produces_identical_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let kinds = [DistortionKind::GaussianNoise];
        synth_dataset(1, &kinds, 2, 24, dir_a.path(), 99).unwrap();
        synth_dataset(1, &kinds, 2, 24, dir_b.path(), 99).unwrap();
        for name in ["manifest.csv", "ref_000.png", "dist_000_gaussian_noise_l1.png"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical seeds");
        }
    }

    #[test]
    fn references_are_textured() {
        let img = procedural_reference(48, 3);
        let grad = super::super::distortion::mean_gradient_magnitude(&img.view());
        assert!(grad > 0.005, "reference too flat: {grad}");
    }

    #[test]
    fn unwritable_out_dir_is_io_error() {
        let kinds = [DistortionKind::GaussianBlur];
        let err = synth_dataset(1, &kinds, 1, 16, Path::new("/proc/forbidden/x"), 0).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
