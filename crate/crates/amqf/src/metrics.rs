//! Correlation metrics, logistic calibration and classical baselines.

use ndarray::ArrayView3;
use serde::{Deserialize, Serialize};

use crate::error::{AmqfError, Result};
use crate::filters::{local_mean_std, to_grayscale};

/// Spearman rank-order correlation with average ranks for ties.
pub fn srocc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry).map_err(|_| {
        AmqfError::validation("srocc undefined: an input has constant ranks")
    })
}

/// Pearson linear correlation.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y)?;
    pearson(x, y)
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(AmqfError::validation(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(AmqfError::validation("need at least two samples"));
    }
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AmqfError::validation(
            "correlation undefined for constant input",
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks with ties assigned their average rank (1-based).
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// A fitted monotone 4-parameter logistic map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticFit {
    /// `b`: `f(x) = b0 * (1/2 - 1 / (1 + exp(b1 * (x - b2)))) + b3`.
    pub params: [f64; 4],
    pub calibrated: Vec<f64>,
    /// False when the fit fell back to the identity mapping.
    pub converged: bool,
}

/// Evaluate the 4-parameter logistic at `x`.
pub fn logistic_value(x: f64, b: &[f64; 4]) -> f64 {
    let t = (b[1] * (x - b[2])).clamp(-500.0, 500.0);
    b[0] * (0.5 - 1.0 / (1.0 + t.exp())) + b[3]
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn sse(pred: &[f64], mos: &[f64], b: &[f64; 4]) -> f64 {
    pred.iter()
        .zip(mos)
        .map(|(&x, &y)| {
            let r = logistic_value(x, b) - y;
            r * r
        })
        .sum()
}

/// Levenberg-Marquardt from one start; returns the refined parameters.
fn lm_fit(pred: &[f64], mos: &[f64], mut b: [f64; 4], max_iter: usize) -> [f64; 4] {
    let mut lambda = 1e-3;
    let mut current = sse(pred, mos, &b);
    for _ in 0..max_iter {
        // Accumulate J^T J and J^T r for the current parameters.
        let mut jtj = [[0.0f64; 4]; 4];
        let mut jtr = [0.0f64; 4];
        for (&x, &y) in pred.iter().zip(mos) {
            let t = (b[1] * (x - b[2])).clamp(-500.0, 500.0);
            let g = sigmoid(t) * sigmoid(-t);
            let row = [
                0.5 - 1.0 / (1.0 + t.exp()),
                b[0] * g * (x - b[2]),
                -b[0] * g * b[1],
                1.0,
            ];
            let r = logistic_value(x, &b) - y;
            for i in 0..4 {
                jtr[i] += row[i] * r;
                for j in 0..4 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        // Damped normal equations.
        let mut a = jtj;
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += lambda * jtj[i][i].max(1e-12);
        }
        let rhs = [-jtr[0], -jtr[1], -jtr[2], -jtr[3]];
        let Some(step) = solve4(a, rhs) else {
            lambda *= 10.0;
            continue;
        };
        let candidate = [b[0] + step[0], b[1] + step[1], b[2] + step[2], b[3] + step[3]];
        let candidate_sse = sse(pred, mos, &candidate);
        if candidate_sse.is_finite() && candidate_sse < current {
            let improvement = current - candidate_sse;
            b = candidate;
            current = candidate_sse;
            lambda = (lambda * 0.3).max(1e-12);
            if improvement < 1e-14 * (1.0 + current) {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    b
}

/// Gaussian elimination with partial pivoting for a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut rhs: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        })?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut acc = rhs[row];
        for k in row + 1..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Least-squares fit of the monotone 4-parameter logistic used before PLCC.
///
/// Two starts are refined with Levenberg-Marquardt: a sigmoid-shaped init
/// from the data ranges and a near-affine init from linear regression (the
/// family's flat limit). The lower-error fit wins; a fit that is not
/// monotone increasing over the data falls back to the identity mapping
/// with `converged = false`, so `SROCC(pred, mos)` is always preserved.
pub fn logistic_calibrate(pred: &[f64], mos: &[f64]) -> Result<LogisticFit> {
    check_lengths(pred, mos)?;
    if pred.len() < 5 {
        return Err(AmqfError::validation(
            "logistic calibration needs at least 5 samples",
        ));
    }
    let identity = |warning: bool| LogisticFit {
        params: [4.0 / 1e-6, 1e-6, 0.0, 0.0],
        calibrated: pred.to_vec(),
        converged: !warning,
    };
    let (xmin, xmax) = min_max(pred);
    let (ymin, ymax) = min_max(mos);
    if xmax - xmin < 1e-12 {
        return Ok(identity(true));
    }
    let xmean = pred.iter().sum::<f64>() / pred.len() as f64;
    let ymean = mos.iter().sum::<f64>() / mos.len() as f64;

    // Start 1: sigmoid spanning the observed ranges.
    let spread = (ymax - ymin).max(1e-6);
    let start_sigmoid = [spread, 4.0 / (xmax - xmin), xmean, ymean];

    // Start 2: near-affine seed from simple linear regression.
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in pred.iter().zip(mos) {
        sxx += (x - xmean) * (x - xmean);
        sxy += (x - xmean) * (y - ymean);
    }
    let slope = sxy / sxx;
    let kappa = 1e-3 / (xmax - xmin);
    let start_affine = [4.0 * slope / kappa, kappa, xmean, ymean];

    let fit_a = lm_fit(pred, mos, start_sigmoid, 200);
    let fit_b = lm_fit(pred, mos, start_affine, 200);
    let best = if sse(pred, mos, &fit_a) <= sse(pred, mos, &fit_b) {
        fit_a
    } else {
        fit_b
    };
    if !best.iter().all(|v| v.is_finite()) || best[0] * best[1] <= 0.0 {
        return Ok(identity(true));
    }
    let calibrated: Vec<f64> = pred.iter().map(|&x| logistic_value(x, &best)).collect();
    Ok(LogisticFit {
        params: best,
        calibrated,
        converged: true,
    })
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

/// Classical baseline metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Psnr,
    Ssim,
}

/// PSNR on the unit scale, capped at 100 dB; SSIM with the standard 11x11
/// Gaussian window (sigma 1.5) and constants `C1 = 0.01^2`, `C2 = 0.03^2`,
/// computed on the Rec.601 grayscale plane.
pub fn baseline_metric(
    kind: BaselineKind,
    reference: &ArrayView3<f64>,
    distorted: &ArrayView3<f64>,
) -> Result<f64> {
    if reference.dim() != distorted.dim() {
        return Err(AmqfError::validation(format!(
            "baseline shape mismatch: {:?} vs {:?}",
            reference.dim(),
            distorted.dim()
        )));
    }
    match kind {
        BaselineKind::Psnr => Ok(psnr(reference, distorted)),
        BaselineKind::Ssim => Ok(ssim(reference, distorted)),
    }
}

fn psnr(a: &ArrayView3<f64>, b: &ArrayView3<f64>) -> f64 {
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return 100.0;
    }
    (10.0 * (1.0 / mse).log10()).min(100.0)
}

fn ssim(a: &ArrayView3<f64>, b: &ArrayView3<f64>) -> f64 {
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let ga = to_grayscale(a);
    let gb = to_grayscale(b);
    let (mu_a, std_a) = local_mean_std(&ga.view(), 1.5, 5);
    let (mu_b, std_b) = local_mean_std(&gb.view(), 1.5, 5);
    let prod = &ga * &gb;
    let mean_prod = crate::filters::gaussian_filter(&prod.view(), 1.5, 5);
    let mut acc = 0.0;
    for idx in 0..ga.len() {
        let ma = mu_a.as_slice().unwrap()[idx];
        let mb = mu_b.as_slice().unwrap()[idx];
        let va = std_a.as_slice().unwrap()[idx].powi(2);
        let vb = std_b.as_slice().unwrap()[idx].powi(2);
        let cov = mean_prod.as_slice().unwrap()[idx] - ma * mb;
        let num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
        let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
        acc += num / den;
    }
    acc / ga.len() as f64
}

/// Correlation summary for one method's predictions against MOS.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub n: usize,
    pub srocc: Option<f64>,
    pub plcc_raw: Option<f64>,
    pub plcc_calibrated: Option<f64>,
    pub logistic_params: Option<[f64; 4]>,
    /// Set when correlations could not be computed (e.g. constant input).
    pub degenerate: Option<String>,
    /// `(prediction, mos)` per sample, in manifest order.
    pub samples: Vec<(f64, f64)>,
}

/// Correlations (raw and logistic-calibrated) of predictions against MOS.
/// Constant inputs are recorded as a degeneracy instead of failing.
pub fn evaluate_predictions(pred: &[f64], mos: &[f64]) -> Result<EvalResult> {
    check_lengths(pred, mos)?;
    let mut result = EvalResult {
        n: pred.len(),
        srocc: None,
        plcc_raw: None,
        plcc_calibrated: None,
        logistic_params: None,
        degenerate: None,
        samples: pred.iter().copied().zip(mos.iter().copied()).collect(),
    };
    match (srocc(pred, mos), plcc(pred, mos)) {
        (Ok(s), Ok(p)) => {
            result.srocc = Some(s);
            result.plcc_raw = Some(p);
        }
        (s, p) => {
            let err = s.err().or(p.err()).unwrap();
            result.degenerate = Some(err.to_string());
            return Ok(result);
        }
    }
    if pred.len() >= 5 {
        let fit = logistic_calibrate(pred, mos)?;
        result.plcc_calibrated = plcc(&fit.calibrated, mos).ok();
        result.logistic_params = Some(fit.params);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use ndarray::Array3;
    use rand::Rng;

    #[test]
    fn srocc_ordered_and_reversed() {
        assert_eq!(srocc(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(srocc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn srocc_single_swap_is_exactly_point_eight() {
        let s = srocc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(s, 0.8);
    }

    #[test]
    fn srocc_rejects_constant_input() {
        let err = srocc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn srocc_handles_ties_with_average_ranks() {
        let ranks = average_ranks(&[2.0, 1.0, 2.0, 5.0]);
        assert_eq!(ranks, vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn plcc_affine_cases() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((plcc(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let yn: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((plcc(&x, &yn).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn plcc_hand_computed_value() {
        let r = plcc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        let want = 9.0 / 84f64.sqrt();
        assert!((r - want).abs() < 1e-5, "{r} vs {want}");
    }

    #[test]
    fn plcc_zero_variance_is_validation_error() {
        assert!(plcc(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn logistic_recovers_a_sigmoid_relation() {
        let mut rng = rng_for(42, &[]);
        let mos: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
        let pred: Vec<f64> = mos
            .iter()
            .map(|&m| sigmoid(m) + rng.random_range(-1e-3..1e-3))
            .collect();
        let fit = logistic_calibrate(&pred, &mos).unwrap();
        assert!(fit.converged);
        let p = plcc(&fit.calibrated, &mos).unwrap();
        assert!(p > 0.999, "calibrated plcc {p}");
    }

    #[test]
    fn logistic_recovers_an_in_family_relation() {
        let mut rng = rng_for(47, &[]);
        let truth = [0.8, 8.0, 0.5, 0.4];
        let pred: Vec<f64> = (0..80).map(|i| i as f64 / 79.0).collect();
        let mos: Vec<f64> = pred
            .iter()
            .map(|&x| logistic_value(x, &truth) + rng.random_range(-1e-4..1e-4))
            .collect();
        let fit = logistic_calibrate(&pred, &mos).unwrap();
        assert!(fit.converged);
        let p = plcc(&fit.calibrated, &mos).unwrap();
        assert!(p > 0.9999, "calibrated plcc {p}");
    }

    #[test]
    fn logistic_does_not_hurt_affine_predictions() {
        let mos: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let pred: Vec<f64> = mos.iter().map(|&m| 0.6 * m + 0.2).collect();
        let before = plcc(&pred, &mos).unwrap();
        let fit = logistic_calibrate(&pred, &mos).unwrap();
        let after = plcc(&fit.calibrated, &mos).unwrap();
        assert!(after >= before - 1e-6, "{after} vs {before}");
    }

    #[test]
    fn monotone_calibration_preserves_srocc() {
        let mut rng = rng_for(43, &[]);
        let mos: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
        let pred: Vec<f64> = mos
            .iter()
            .map(|&m| 0.8 * m + rng.random_range(-0.05..0.05))
            .collect();
        let fit = logistic_calibrate(&pred, &mos).unwrap();
        let before = srocc(&pred, &mos).unwrap();
        let after = srocc(&fit.calibrated, &mos).unwrap();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn psnr_identity_capped_at_100() {
        let img = Array3::from_elem((8, 8, 3), 0.5);
        let v = baseline_metric(BaselineKind::Psnr, &img.view(), &img.view()).unwrap();
        assert_eq!(v, 100.0);
    }

    #[test]
    fn psnr_uniform_one_over_255_error() {
        let a = Array3::from_elem((16, 16, 3), 0.5);
        let b = a.mapv(|v| v + 1.0 / 255.0);
        let v = baseline_metric(BaselineKind::Psnr, &a.view(), &b.view()).unwrap();
        assert!((v - 48.1308).abs() < 1e-3, "psnr {v}");
    }

    #[test]
    fn psnr_decreases_with_noise_level() {
        use crate::data::distortion::{apply_distortion, DistortionKind, DistortionParams, DistortionSpec};
        let mut rng = rng_for(44, &[]);
        let img = Array3::from_shape_simple_fn((32, 32, 3), || rng.random_range(0.2..0.8));
        let mut last = f64::MAX;
        for (i, sigma) in [0.01, 0.05, 0.1].into_iter().enumerate() {
            let spec = DistortionSpec::with_params(
                DistortionKind::GaussianNoise,
                (i + 1) as u32,
                DistortionParams::GaussianNoise { sigma },
            );
            let noisy = apply_distortion(&img.view(), &spec, 7);
            let v = baseline_metric(BaselineKind::Psnr, &img.view(), &noisy.view()).unwrap();
            assert!(v < last, "psnr must fall with noise: {v} !< {last}");
            last = v;
        }
    }

    #[test]
    fn ssim_self_similarity_is_one() {
        let mut rng = rng_for(45, &[]);
        let img = Array3::from_shape_simple_fn((24, 24, 3), || rng.random_range(0.0..1.0));
        let v = baseline_metric(BaselineKind::Ssim, &img.view(), &img.view()).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "ssim {v}");
    }

    #[test]
    fn ssim_is_symmetric_and_bounded() {
        let mut rng = rng_for(46, &[]);
        let a = Array3::from_shape_simple_fn((20, 20, 3), || rng.random_range(0.0..1.0));
        let b = Array3::from_shape_simple_fn((20, 20, 3), || rng.random_range(0.0..1.0));
        let ab = baseline_metric(BaselineKind::Ssim, &a.view(), &b.view()).unwrap();
        let ba = baseline_metric(BaselineKind::Ssim, &b.view(), &a.view()).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn baseline_shape_mismatch_is_validation_error() {
        let a = Array3::zeros((4, 4, 3));
        let b = Array3::zeros((5, 4, 3));
        assert!(baseline_metric(BaselineKind::Psnr, &a.view(), &b.view()).is_err());
    }

    #[test]
    fn evaluate_predictions_records_degeneracy() {
        let pred = [1.0, 1.0, 1.0, 1.0, 1.0];
        let mos = [0.1, 0.2, 0.3, 0.4, 0.5];
        let r = evaluate_predictions(&pred, &mos).unwrap();
        assert!(r.degenerate.is_some());
        assert!(r.srocc.is_none());
        assert_eq!(r.n, 5);
    }

    proptest::proptest! {
        /// SROCC is invariant under strictly increasing transforms.
        #[test]
        fn srocc_monotone_invariance(seed in 0u64..300) {
            let mut rng = rng_for(seed, &[3]);
            let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x_t: Vec<f64> = x.iter().map(|v| (3.0 * v).exp()).collect();
            let a = srocc(&x, &y).unwrap();
            let b = srocc(&x_t, &y).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-12);
        }

        /// PLCC is invariant under positive affine maps and negates under
        /// negative scaling.
        #[test]
        fn plcc_affine_invariance(seed in 0u64..300) {
            let mut rng = rng_for(seed, &[4]);
            let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x_t: Vec<f64> = x.iter().map(|v| 2.5 * v + 0.7).collect();
            let x_n: Vec<f64> = x.iter().map(|v| -1.5 * v).collect();
            let a = plcc(&x, &y).unwrap();
            proptest::prop_assert!((plcc(&x_t, &y).unwrap() - a).abs() < 1e-9);
            proptest::prop_assert!((plcc(&x_n, &y).unwrap() + a).abs() < 1e-9);
        }
    }
}
