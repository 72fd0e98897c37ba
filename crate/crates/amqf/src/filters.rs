//! Grayscale conversion and separable Gaussian filtering.
//!
//! The same local-statistics machinery backs the factor target maps, the
//! SSIM baseline, and the blur distortion. Boundaries use reflect padding.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

/// Rec.601 luma weights.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Convert `[H,W,3]` (or `[H,W,1]`) to a `[H,W]` grayscale plane.
pub fn to_grayscale(img: &ArrayView3<f64>) -> Array2<f64> {
    let (h, w, c) = img.dim();
    match c {
        1 => img.index_axis(ndarray::Axis(2), 0).to_owned(),
        3 => {
            let mut out = Array2::zeros((h, w));
            for y in 0..h {
                for x in 0..w {
                    out[(y, x)] = LUMA[0] * img[(y, x, 0)]
                        + LUMA[1] * img[(y, x, 1)]
                        + LUMA[2] * img[(y, x, 2)];
                }
            }
            out
        }
        other => panic!("grayscale conversion expects 1 or 3 channels, got {other}"),
    }
}

/// Normalized 1-D Gaussian taps for the given sigma and radius.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    assert!(sigma > 0.0);
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

fn reflect(i: isize, n: usize) -> usize {
    // Symmetric reflection without edge repetition: -1 -> 0? No: -1 -> 1.
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// Separable Gaussian filter of a single plane with reflect padding.
pub fn gaussian_filter(plane: &ArrayView2<f64>, sigma: f64, radius: usize) -> Array2<f64> {
    let taps = gaussian_taps(sigma, radius);
    let (h, w) = plane.dim();
    let r = radius as isize;
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xi = reflect(x as isize + k as isize - r, w);
                acc += t * plane[(y, xi)];
            }
            tmp[(y, x)] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yi = reflect(y as isize + k as isize - r, h);
                acc += t * tmp[(yi, x)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}

/// Gaussian blur of every channel of an `[H,W,C]` image.
pub fn gaussian_blur_image(img: &ArrayView3<f64>, sigma: f64) -> Array3<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let (h, w, c) = img.dim();
    let mut out = Array3::zeros((h, w, c));
    for ch in 0..c {
        let plane = img.index_axis(ndarray::Axis(2), ch);
        let blurred = gaussian_filter(&plane, sigma, radius);
        out.index_axis_mut(ndarray::Axis(2), ch).assign(&blurred);
    }
    out
}

/// Gaussian-weighted local mean and standard deviation of a plane.
///
/// Uses the SSIM-style 11x11 window (sigma 1.5) when called with
/// `sigma = 1.5, radius = 5`. The variance is clamped at zero before the
/// square root to absorb rounding.
pub fn local_mean_std(
    plane: &ArrayView2<f64>,
    sigma: f64,
    radius: usize,
) -> (Array2<f64>, Array2<f64>) {
    let mean = gaussian_filter(plane, sigma, radius);
    let sq = plane.mapv(|v| v * v);
    let mean_sq = gaussian_filter(&sq.view(), sigma, radius);
    let mut std = Array2::zeros(plane.dim());
    for (s, (m, m2)) in std.iter_mut().zip(mean.iter().zip(mean_sq.iter())) {
        *s = (m2 - m * m).max(0.0).sqrt();
    }
    (mean, std)
}
