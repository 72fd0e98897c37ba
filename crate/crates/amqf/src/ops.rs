//! Forward array kernels and their gradient counterparts.
//!
//! Everything here is a pure function over `ndarray` arrays in channel-last
//! layout (`[batch, height, width, channels]`). The autodiff graph wraps
//! these; they are also callable on their own, which is what the
//! finite-difference oracles rely on.

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4};

/// Norm guard for L2 normalization and cosine denominators.
pub const NORM_EPS: f64 = 1e-12;

/// 2-D convolution with zero padding. `w` is `[kh, kw, c_in, c_out]`.
pub fn conv2d(
    x: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    bias: &Array1<f64>,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (bsz, h, wd, cin) = x.dim();
    let (kh, kw, wcin, cout) = w.dim();
    assert_eq!(cin, wcin, "conv2d channel mismatch");
    assert_eq!(bias.len(), cout, "conv2d bias mismatch");
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Array4::zeros((bsz, oh, ow, cout));
    for b in 0..bsz {
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        for ic in 0..cin {
                            let xv = x[(b, iy as usize, ix as usize, ic)];
                            if xv == 0.0 {
                                continue;
                            }
                            for oc in 0..cout {
                                out[(b, oy, ox, oc)] += xv * w[(ky, kx, ic, oc)];
                            }
                        }
                    }
                }
                for oc in 0..cout {
                    out[(b, oy, ox, oc)] += bias[oc];
                }
            }
        }
    }
    out
}

/// Gradient of `conv2d` w.r.t. its input.
pub fn conv2d_grad_input(
    gout: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    stride: usize,
    pad: usize,
    in_shape: (usize, usize, usize, usize),
) -> Array4<f64> {
    let (bsz, oh, ow, cout) = gout.dim();
    let (kh, kw, cin, wcout) = w.dim();
    assert_eq!(cout, wcout);
    let (_, h, wd, _) = in_shape;
    let mut gin = Array4::zeros(in_shape);
    for b in 0..bsz {
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        for ic in 0..cin {
                            let mut acc = 0.0;
                            for oc in 0..cout {
                                acc += gout[(b, oy, ox, oc)] * w[(ky, kx, ic, oc)];
                            }
                            gin[(b, iy as usize, ix as usize, ic)] += acc;
                        }
                    }
                }
            }
        }
    }
    gin
}

/// Gradient of `conv2d` w.r.t. the kernel.
pub fn conv2d_grad_weight(
    gout: &ArrayView4<f64>,
    x: &ArrayView4<f64>,
    stride: usize,
    pad: usize,
    kernel: (usize, usize),
) -> Array4<f64> {
    let (bsz, oh, ow, cout) = gout.dim();
    let (_, h, wd, cin) = x.dim();
    let (kh, kw) = kernel;
    let mut gw = Array4::zeros((kh, kw, cin, cout));
    for b in 0..bsz {
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        for ic in 0..cin {
                            let xv = x[(b, iy as usize, ix as usize, ic)];
                            if xv == 0.0 {
                                continue;
                            }
                            for oc in 0..cout {
                                gw[(ky, kx, ic, oc)] += xv * gout[(b, oy, ox, oc)];
                            }
                        }
                    }
                }
            }
        }
    }
    gw
}

/// Transposed 2-D convolution (fractionally strided upsampling).
/// Output spatial size is `(in - 1) * stride + k - 2 * pad`.
pub fn conv_transpose2d(
    x: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    bias: &Array1<f64>,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (bsz, h, wd, cin) = x.dim();
    let (kh, kw, wcin, cout) = w.dim();
    assert_eq!(cin, wcin, "conv_transpose2d channel mismatch");
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (wd - 1) * stride + kw - 2 * pad;
    let mut out = Array4::zeros((bsz, oh, ow, cout));
    for b in 0..bsz {
        for iy in 0..h {
            for ix in 0..wd {
                for ky in 0..kh {
                    let oy = (iy * stride + ky) as isize - pad as isize;
                    if oy < 0 || oy >= oh as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ox = (ix * stride + kx) as isize - pad as isize;
                        if ox < 0 || ox >= ow as isize {
                            continue;
                        }
                        for ic in 0..cin {
                            let xv = x[(b, iy, ix, ic)];
                            if xv == 0.0 {
                                continue;
                            }
                            for oc in 0..cout {
                                out[(b, oy as usize, ox as usize, oc)] += xv * w[(ky, kx, ic, oc)];
                            }
                        }
                    }
                }
            }
        }
    }
    for b in 0..bsz {
        for oy in 0..oh {
            for ox in 0..ow {
                for oc in 0..cout {
                    out[(b, oy, ox, oc)] += bias[oc];
                }
            }
        }
    }
    out
}

/// Gradient of `conv_transpose2d` w.r.t. its input (a strided gather).
pub fn conv_transpose2d_grad_input(
    gout: &ArrayView4<f64>,
    w: &ArrayView4<f64>,
    stride: usize,
    pad: usize,
    in_shape: (usize, usize, usize, usize),
) -> Array4<f64> {
    let (bsz, oh, ow, cout) = gout.dim();
    let (kh, kw, cin, wcout) = w.dim();
    assert_eq!(cout, wcout);
    let (_, h, wd, _) = in_shape;
    let mut gin = Array4::zeros(in_shape);
    for b in 0..bsz {
        for iy in 0..h {
            for ix in 0..wd {
                for ky in 0..kh {
                    let oy = (iy * stride + ky) as isize - pad as isize;
                    if oy < 0 || oy >= oh as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ox = (ix * stride + kx) as isize - pad as isize;
                        if ox < 0 || ox >= ow as isize {
                            continue;
                        }
                        for ic in 0..cin {
                            let mut acc = 0.0;
                            for oc in 0..cout {
                                acc += gout[(b, oy as usize, ox as usize, oc)]
                                    * w[(ky, kx, ic, oc)];
                            }
                            gin[(b, iy, ix, ic)] += acc;
                        }
                    }
                }
            }
        }
    }
    gin
}

/// Gradient of `conv_transpose2d` w.r.t. the kernel.
pub fn conv_transpose2d_grad_weight(
    gout: &ArrayView4<f64>,
    x: &ArrayView4<f64>,
    stride: usize,
    pad: usize,
    kernel: (usize, usize),
) -> Array4<f64> {
    let (bsz, h, wd, cin) = x.dim();
    let (_, oh, ow, cout) = gout.dim();
    let (kh, kw) = kernel;
    let mut gw = Array4::zeros((kh, kw, cin, cout));
    for b in 0..bsz {
        for iy in 0..h {
            for ix in 0..wd {
                for ky in 0..kh {
                    let oy = (iy * stride + ky) as isize - pad as isize;
                    if oy < 0 || oy >= oh as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ox = (ix * stride + kx) as isize - pad as isize;
                        if ox < 0 || ox >= ow as isize {
                            continue;
                        }
                        for ic in 0..cin {
                            let xv = x[(b, iy, ix, ic)];
                            if xv == 0.0 {
                                continue;
                            }
                            for oc in 0..cout {
                                gw[(ky, kx, ic, oc)] +=
                                    xv * gout[(b, oy as usize, ox as usize, oc)];
                            }
                        }
                    }
                }
            }
        }
    }
    gw
}

/// Per-location linear map over the channel axis: `[B,H,W,Ci] x [Ci,Co] -> [B,H,W,Co]`.
pub fn pointwise(x: &ArrayView4<f64>, w: &ArrayView2<f64>) -> Array4<f64> {
    let (bsz, h, wd, cin) = x.dim();
    let (wcin, cout) = w.dim();
    assert_eq!(cin, wcin, "pointwise channel mismatch");
    let flat = x
        .to_shape((bsz * h * wd, cin))
        .expect("contiguous channel-last tensor");
    let out = flat.dot(w);
    out.into_shape_with_order((bsz, h, wd, cout)).unwrap()
}

/// Per-word projection responses: `[B,H,W,D] x words [N,D] -> [B,H,W,N]`.
pub fn respond_kernel(features: &ArrayView4<f64>, words: &ArrayView2<f64>) -> Array4<f64> {
    let (bsz, h, wd, dim) = features.dim();
    let (n_words, wdim) = words.dim();
    assert_eq!(dim, wdim, "respond dimension mismatch");
    let flat = features
        .to_shape((bsz * h * wd, dim))
        .expect("contiguous channel-last tensor");
    let out = flat.dot(&words.t());
    out.into_shape_with_order((bsz, h, wd, n_words)).unwrap()
}

/// L2-normalize every channel vector; `v / max(|v|, 1e-12)`, zeros pass through.
pub fn l2_normalize_last(x: &ArrayView4<f64>) -> Array4<f64> {
    let mut out = x.to_owned();
    for mut lane in out.rows_mut() {
        let norm = lane.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm.max(NORM_EPS);
        lane.mapv_inplace(|v| v / denom);
    }
    out
}

/// Gradient of `l2_normalize_last`.
pub fn l2_normalize_last_grad(gout: &ArrayView4<f64>, x: &ArrayView4<f64>) -> Array4<f64> {
    let mut gin = Array4::zeros(x.dim());
    for ((mut gi, g), v) in gin.rows_mut().into_iter().zip(gout.rows()).zip(x.rows()) {
        let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm > NORM_EPS {
            let gy_dot_y = g.dot(&v) / (norm * norm);
            for k in 0..v.len() {
                gi[k] = (g[k] - gy_dot_y * v[k]) / norm;
            }
        } else {
            for k in 0..v.len() {
                gi[k] = g[k] / NORM_EPS;
            }
        }
    }
    gin
}

/// Mean over the two spatial axes: `[B,H,W,N] -> [B,N]`.
pub fn spatial_mean(x: &ArrayView4<f64>) -> Array2<f64> {
    let (bsz, h, wd, n) = x.dim();
    let mut out = Array2::zeros((bsz, n));
    for b in 0..bsz {
        for y in 0..h {
            for xi in 0..wd {
                for k in 0..n {
                    out[(b, k)] += x[(b, y, xi, k)];
                }
            }
        }
    }
    out / (h * wd) as f64
}

/// Stabilizer inside the square root of the diagonal term of the
/// decorrelation loss.
pub const DECOV_EPS: f64 = 1e-6;

/// Population covariance of the columns of `x` (`[M, D] -> [D, D]`).
pub fn column_covariance(x: &ArrayView2<f64>) -> Array2<f64> {
    let (m, d) = x.dim();
    assert!(m >= 2, "covariance needs at least two samples");
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
    let centered = x - &mean;
    let mut cov = centered.t().dot(&centered);
    cov.mapv_inplace(|v| v / m as f64);
    let _ = d;
    cov
}

/// Decorrelation penalty: Frobenius norm of the covariance minus the
/// stabilized norm of its diagonal.
pub fn decorrelation_kernel(x: &ArrayView2<f64>) -> f64 {
    let cov = column_covariance(x);
    let fro = cov.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diag_sq: f64 = cov.diag().iter().map(|v| v * v).sum();
    fro - (diag_sq + DECOV_EPS).sqrt()
}

/// Gradient of `decorrelation_kernel` w.r.t. the sample matrix.
pub fn decorrelation_grad(x: &ArrayView2<f64>) -> Array2<f64> {
    let (m, _d) = x.dim();
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
    let centered = x - &mean;
    let mut cov = centered.t().dot(&centered);
    cov.mapv_inplace(|v| v / m as f64);
    let fro = cov.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diag_sq: f64 = cov.diag().iter().map(|v| v * v).sum();
    let diag_norm = (diag_sq + DECOV_EPS).sqrt();
    // dL/dC: C / |C|_F on every entry, minus C_kk / diag_norm on the diagonal.
    let mut dldc = if fro > 0.0 {
        &cov / fro
    } else {
        Array2::zeros(cov.dim())
    };
    for (k, v) in cov.diag().iter().enumerate() {
        dldc[(k, k)] -= v / diag_norm;
    }
    // C is symmetric and so is dL/dC: dL/dXc = 2 * Xc * dL/dC / M.
    let dldxc = centered.dot(&dldc).mapv(|v| 2.0 * v / m as f64);
    // Centering adjoint: subtract the column means.
    let col_mean = dldxc.mean_axis(ndarray::Axis(0)).unwrap();
    dldxc - &col_mean
}

/// Forward difference along the row (vertical) axis; last row is zero.
pub fn diff_rows(x: &ArrayView4<f64>) -> Array4<f64> {
    let (bsz, h, wd, c) = x.dim();
    let mut out = Array4::zeros((bsz, h, wd, c));
    for b in 0..bsz {
        for y in 0..h.saturating_sub(1) {
            for xi in 0..wd {
                for ch in 0..c {
                    out[(b, y, xi, ch)] = x[(b, y + 1, xi, ch)] - x[(b, y, xi, ch)];
                }
            }
        }
    }
    out
}

/// Forward difference along the column (horizontal) axis; last column is zero.
pub fn diff_cols(x: &ArrayView4<f64>) -> Array4<f64> {
    let (bsz, h, wd, c) = x.dim();
    let mut out = Array4::zeros((bsz, h, wd, c));
    for b in 0..bsz {
        for y in 0..h {
            for xi in 0..wd.saturating_sub(1) {
                for ch in 0..c {
                    out[(b, y, xi, ch)] = x[(b, y, xi + 1, ch)] - x[(b, y, xi, ch)];
                }
            }
        }
    }
    out
}

/// Adjoint of `diff_rows`: scatter a difference-domain gradient back to pixels.
pub fn diff_rows_grad(gout: &ArrayView4<f64>) -> Array4<f64> {
    let (bsz, h, wd, c) = gout.dim();
    let mut gin = Array4::zeros((bsz, h, wd, c));
    for b in 0..bsz {
        for y in 0..h.saturating_sub(1) {
            for xi in 0..wd {
                for ch in 0..c {
                    let g = gout[(b, y, xi, ch)];
                    gin[(b, y + 1, xi, ch)] += g;
                    gin[(b, y, xi, ch)] -= g;
                }
            }
        }
    }
    gin
}

/// Adjoint of `diff_cols`.
pub fn diff_cols_grad(gout: &ArrayView4<f64>) -> Array4<f64> {
    let (bsz, h, wd, c) = gout.dim();
    let mut gin = Array4::zeros((bsz, h, wd, c));
    for b in 0..bsz {
        for y in 0..h {
            for xi in 0..wd.saturating_sub(1) {
                for ch in 0..c {
                    let g = gout[(b, y, xi, ch)];
                    gin[(b, y, xi + 1, ch)] += g;
                    gin[(b, y, xi, ch)] -= g;
                }
            }
        }
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use ndarray::{array, Array};
    use rand::Rng;

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = rng_for(seed, &[]);
        Array::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn conv2d_hand_example() {
        // 1x1 kernel acts per pixel; 3x3 averaging-kernel on a delta image
        // spreads the kernel, both checked by hand.
        let mut x = Array4::zeros((1, 3, 3, 1));
        x[(0, 1, 1, 0)] = 2.0;
        let w = Array::from_shape_vec(
            (3, 3, 1, 1),
            vec![1., 2., 3., 4., 5., 6., 7., 8., 9.],
        )
        .unwrap();
        let out = conv2d(&x.view(), &w.view(), &Array1::zeros(1), 1, 1);
        // out[y,x] = 2 * w[1 + (1-y), 1 + (1-x)] (correlation of delta, flipped offsets)
        assert_eq!(out.dim(), (1, 3, 3, 1));
        assert_eq!(out[(0, 0, 0, 0)], 2.0 * 9.0);
        assert_eq!(out[(0, 1, 1, 0)], 2.0 * 5.0);
        assert_eq!(out[(0, 2, 2, 0)], 2.0 * 1.0);
        assert_eq!(out[(0, 0, 2, 0)], 2.0 * 7.0);
    }

    #[test]
    fn conv2d_stride2_halves_even_inputs() {
        let x = rand4((2, 8, 8, 3), 1);
        let w = rand4((3, 3, 3, 4), 2);
        let out = conv2d(&x.view(), &w.view(), &Array1::zeros(4), 2, 1);
        assert_eq!(out.dim(), (2, 4, 4, 4));
    }

    #[test]
    fn conv_transpose2d_doubles_size() {
        let x = rand4((1, 4, 4, 3), 3);
        let w = rand4((4, 4, 3, 2), 4);
        let out = conv_transpose2d(&x.view(), &w.view(), &Array1::zeros(2), 2, 1);
        assert_eq!(out.dim(), (1, 8, 8, 2));
    }

    #[test]
    fn conv_grad_input_is_adjoint_of_forward() {
        // <conv(x), y> == <x, conv_grad_input(y)> for random tensors.
        let x = rand4((2, 6, 6, 3), 5);
        let w = rand4((3, 3, 3, 4), 6);
        let y = rand4((2, 3, 3, 4), 7);
        let fx = conv2d(&x.view(), &w.view(), &Array1::zeros(4), 2, 1);
        let aty = conv2d_grad_input(&y.view(), &w.view(), 2, 1, x.dim());
        let lhs: f64 = (&fx * &y).sum();
        let rhs: f64 = (&x * &aty).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_transpose_grad_input_is_adjoint_of_forward() {
        let x = rand4((1, 4, 4, 3), 8);
        let w = rand4((4, 4, 3, 2), 9);
        let y = rand4((1, 8, 8, 2), 10);
        let fx = conv_transpose2d(&x.view(), &w.view(), &Array1::zeros(2), 2, 1);
        let aty = conv_transpose2d_grad_input(&y.view(), &w.view(), 2, 1, x.dim());
        let lhs: f64 = (&fx * &y).sum();
        let rhs: f64 = (&x * &aty).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn pointwise_matches_manual_dot() {
        let x = rand4((1, 2, 2, 3), 11);
        let w = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64 * 0.5 - 1.0);
        let out = pointwise(&x.view(), &w.view());
        for y in 0..2 {
            for xi in 0..2 {
                for oc in 0..2 {
                    let want: f64 = (0..3).map(|ic| x[(0, y, xi, ic)] * w[(ic, oc)]).sum();
                    assert!((out[(0, y, xi, oc)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn normalize_unit_norm_and_zero_passthrough() {
        let mut x = Array4::zeros((1, 1, 2, 2));
        x[(0, 0, 0, 0)] = 3.0;
        x[(0, 0, 0, 1)] = 4.0;
        let out = l2_normalize_last(&x.view());
        assert!((out[(0, 0, 0, 0)] - 0.6).abs() < 1e-12);
        assert!((out[(0, 0, 0, 1)] - 0.8).abs() < 1e-12);
        assert_eq!(out[(0, 0, 1, 0)], 0.0);
        assert_eq!(out[(0, 0, 1, 1)], 0.0);
    }

    #[test]
    fn spatial_mean_of_known_map() {
        let x = Array::from_shape_vec((1, 2, 2, 1), vec![1., 3., 5., 7.]).unwrap();
        let out = spatial_mean(&x.view());
        assert_eq!(out[(0, 0)], 4.0);
    }

    #[test]
    fn forward_diffs_zero_trailing_edge() {
        let x = array![[[[0.], [1.]], [[0.], [1.]]]];
        let dc = diff_cols(&x.view());
        assert_eq!(dc[(0, 0, 0, 0)], 1.0);
        assert_eq!(dc[(0, 0, 1, 0)], 0.0);
        let dr = diff_rows(&x.view());
        assert_eq!(dr[(0, 0, 0, 0)], 0.0);
        assert_eq!(dr[(0, 1, 0, 0)], 0.0);
    }

    #[test]
    fn diff_grads_are_adjoint() {
        let x = rand4((1, 5, 4, 2), 12);
        let y = rand4((1, 5, 4, 2), 13);
        let lhs: f64 = (&diff_rows(&x.view()) * &y).sum();
        let rhs: f64 = (&x * &diff_rows_grad(&y.view())).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let lhs: f64 = (&diff_cols(&x.view()) * &y).sum();
        let rhs: f64 = (&x * &diff_cols_grad(&y.view())).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
