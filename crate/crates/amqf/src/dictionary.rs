//! Learnable visual-word dictionary: response projection, pooling, cosine
//! scoring and the decorrelation penalty.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4};
use rand_distr::{Distribution, Normal};

use crate::adapter::Factor;
use crate::autodiff::cosine_with_flag;
use crate::error::{AmqfError, Result};
use crate::ops;
use crate::rng::rng_for;

/// `N x D` matrix of visual words.
#[derive(Debug, Clone)]
pub struct Dictionary {
    pub words: Array2<f64>,
    pub seed: u64,
}

impl Dictionary {
    pub fn n_words(&self) -> usize {
        self.words.dim().0
    }

    pub fn dim(&self) -> usize {
        self.words.dim().1
    }
}

/// Kaiming-normal initialization: i.i.d. `N(0, 2 / dim)`, deterministic
/// per seed.
pub fn init_dictionary(n_words: usize, dim: usize, seed: u64) -> Result<Dictionary> {
    if n_words == 0 || dim == 0 {
        return Err(AmqfError::validation(
            "dictionary sizes must be positive",
        ));
    }
    let normal = Normal::new(0.0, (2.0 / dim as f64).sqrt()).unwrap();
    let mut rng = rng_for(seed, &[0xD1C7]);
    let words = Array2::from_shape_simple_fn((n_words, dim), || normal.sample(&mut rng));
    Ok(Dictionary { words, seed })
}

/// L2-normalize every feature vector along the channel axis.
pub fn normalize_features(features: &ArrayView4<f64>) -> Array4<f64> {
    ops::l2_normalize_last(features)
}

/// Project normalized features onto every visual word:
/// `R_k[i,j] = <f[i,j], v_k>`, producing `[B, H_l, W_l, N]`.
pub fn respond(features: &ArrayView4<f64>, dict: &Dictionary) -> Result<Array4<f64>> {
    if features.dim().3 != dict.dim() {
        return Err(AmqfError::validation(format!(
            "feature dimension {} does not match dictionary dimension {}",
            features.dim().3,
            dict.dim()
        )));
    }
    Ok(ops::respond_kernel(features, &dict.words.view()))
}

/// Average-pool response maps over space: `[B, H, W, N] -> [B, N]`.
pub fn pool_responses(maps: &ArrayView4<f64>) -> Array2<f64> {
    ops::spatial_mean(maps)
}

/// Cosine similarity between two coordinate vectors. Degenerate vectors
/// (norm below 1e-12) score 0 and set the flag instead of erroring.
pub fn cosine_score(p_ref: &Array1<f64>, p_dist: &Array1<f64>) -> Result<(f64, bool)> {
    if p_ref.len() != p_dist.len() {
        return Err(AmqfError::validation(format!(
            "coordinate vector lengths differ: {} vs {}",
            p_ref.len(),
            p_dist.len()
        )));
    }
    Ok(cosine_with_flag(
        p_ref.as_slice().unwrap(),
        p_dist.as_slice().unwrap(),
    ))
}

/// Decorrelation penalty over a sample matrix `[M, D_f]`: Frobenius norm of
/// the column covariance minus the stabilized norm of its diagonal.
pub fn decorrelation_loss(samples: &ArrayView2<f64>) -> Result<f64> {
    if samples.dim().0 < 2 {
        return Err(AmqfError::validation(
            "decorrelation needs at least two samples",
        ));
    }
    Ok(ops::decorrelation_kernel(samples))
}

/// Weighted arithmetic mean of per-factor scores.
pub fn fuse_factor_scores(
    scores: &BTreeMap<Factor, f64>,
    weights: &BTreeMap<Factor, f64>,
) -> Result<f64> {
    if scores.is_empty() {
        return Err(AmqfError::validation("no factor scores to fuse"));
    }
    let score_keys: Vec<_> = scores.keys().collect();
    let weight_keys: Vec<_> = weights.keys().collect();
    if score_keys != weight_keys {
        return Err(AmqfError::validation(format!(
            "factor keys mismatch: scores {score_keys:?} vs weights {weight_keys:?}"
        )));
    }
    if weights.values().any(|w| *w < 0.0) {
        return Err(AmqfError::validation("fusion weights must be nonnegative"));
    }
    let total: f64 = weights.values().sum();
    if total <= 0.0 {
        return Err(AmqfError::validation("fusion weights must not all be zero"));
    }
    Ok(scores
        .iter()
        .map(|(f, s)| weights[f] * s)
        .sum::<f64>()
        / total)
}

/// Uniform fusion weights over the canonical factors.
pub fn uniform_weights() -> BTreeMap<Factor, f64> {
    crate::adapter::FACTORS.iter().map(|f| (*f, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use ndarray::{array, Array4};
    use rand::Rng;

    #[test]
    fn init_shape_and_determinism() {
        let d = init_dictionary(1024, 512, 3).unwrap();
        assert_eq!(d.words.dim(), (1024, 512));
        let d2 = init_dictionary(1024, 512, 3).unwrap();
        assert_eq!(d.words, d2.words);
        assert_ne!(d.words, init_dictionary(1024, 512, 4).unwrap().words);
    }

    #[test]
    fn init_statistics_match_kaiming_normal() {
        // 4096 x 64 = 262144 draws; std should be sqrt(2/64) ~ 0.1768.
        let d = init_dictionary(4096, 64, 9).unwrap();
        let n = d.words.len() as f64;
        let mean = d.words.sum() / n;
        let var = d.words.mapv(|v| (v - mean) * (v - mean)).sum() / n;
        let std = var.sqrt();
        let want = (2.0f64 / 64.0).sqrt();
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((std - want).abs() < 0.05 * want, "std {std} vs {want}");
    }

    #[test]
    fn non_positive_sizes_are_rejected() {
        assert!(init_dictionary(0, 4, 0).is_err());
        assert!(init_dictionary(4, 0, 0).is_err());
    }

    #[test]
    fn normalize_three_four_five_triangle() {
        let f = Array4::from_shape_vec((1, 1, 1, 2), vec![3.0, 4.0]).unwrap();
        let out = normalize_features(&f.view());
        assert!((out[(0, 0, 0, 0)] - 0.6).abs() < 1e-12);
        assert!((out[(0, 0, 0, 1)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalize_zero_vector_passes_through() {
        let f = Array4::zeros((1, 1, 1, 3));
        let out = normalize_features(&f.view());
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn normalized_vectors_have_unit_norm() {
        let mut rng = rng_for(5, &[]);
        let f = Array4::from_shape_simple_fn((2, 3, 3, 8), || rng.random_range(-2.0..2.0));
        let out = normalize_features(&f.view());
        for lane in out.rows() {
            let norm = lane.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn respond_unit_axis_words() {
        let f = Array4::from_shape_vec((1, 1, 1, 2), vec![0.6, 0.8]).unwrap();
        let dict = Dictionary {
            words: array![[1.0, 0.0], [0.0, 1.0]],
            seed: 0,
        };
        let r = respond(&f.view(), &dict).unwrap();
        assert_eq!(r[(0, 0, 0, 0)], 0.6);
        assert_eq!(r[(0, 0, 0, 1)], 0.8);
    }

    #[test]
    fn respond_orthogonal_feature_gives_zero() {
        let f = Array4::from_shape_vec((1, 1, 1, 3), vec![0.0, 0.0, 1.0]).unwrap();
        let dict = Dictionary {
            words: array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            seed: 0,
        };
        let r = respond(&f.view(), &dict).unwrap();
        assert_eq!(r[(0, 0, 0, 0)], 0.0);
        assert_eq!(r[(0, 0, 0, 1)], 0.0);
    }

    #[test]
    fn respond_matches_triple_loop_oracle() {
        let mut rng = rng_for(6, &[]);
        let f = Array4::from_shape_simple_fn((1, 4, 4, 8), || rng.random_range(-1.0..1.0));
        let dict = init_dictionary(16, 8, 7).unwrap();
        let r = respond(&f.view(), &dict).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                for k in 0..16 {
                    let mut want = 0.0;
                    for d in 0..8 {
                        want += f[(0, y, x, d)] * dict.words[(k, d)];
                    }
                    assert!((r[(0, y, x, k)] - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn respond_dimension_mismatch_is_validation_error() {
        let f = Array4::zeros((1, 2, 2, 4));
        let dict = init_dictionary(8, 6, 0).unwrap();
        assert_eq!(respond(&f.view(), &dict).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn pooling_of_constant_and_known_maps() {
        let constant = Array4::from_elem((1, 3, 3, 2), 0.7);
        let p = pool_responses(&constant.view());
        assert!((p[(0, 0)] - 0.7).abs() < 1e-12);
        let known = Array4::from_shape_vec((1, 2, 2, 1), vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let p = pool_responses(&known.view());
        assert_eq!(p[(0, 0)], 4.0);
        // Output length is always N.
        let maps = Array4::zeros((3, 5, 7, 11));
        assert_eq!(pool_responses(&maps.view()).dim(), (3, 11));
    }

    #[test]
    fn cosine_parallel_orthogonal_and_diagonal() {
        let p = Array1::from_vec(vec![0.3, -0.2, 0.9]);
        let (q, flag) = cosine_score(&p, &p).unwrap();
        assert!((q - 1.0).abs() < 1e-12 && !flag);
        let (q, _) = cosine_score(
            &Array1::from_vec(vec![1.0, 0.0]),
            &Array1::from_vec(vec![0.0, 1.0]),
        )
        .unwrap();
        assert_eq!(q, 0.0);
        let (q, _) = cosine_score(
            &Array1::from_vec(vec![1.0, 1.0]),
            &Array1::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        assert!((q - 0.70710678).abs() < 1e-8);
    }

    #[test]
    fn cosine_degenerate_vector_flags_and_scores_zero() {
        let zero = Array1::zeros(3);
        let p = Array1::from_vec(vec![1.0, 2.0, 3.0]);
        let (q, flag) = cosine_score(&zero, &p).unwrap();
        assert_eq!(q, 0.0);
        assert!(flag);
    }

    #[test]
    fn cosine_length_mismatch_is_validation_error() {
        let a = Array1::zeros(3);
        let b = Array1::zeros(4);
        assert_eq!(cosine_score(&a, &b).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn decorrelation_identity_covariance() {
        let samples = array![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let loss = decorrelation_loss(&samples.view()).unwrap();
        let want = 2f64.sqrt() - (2f64 + 1e-6).sqrt();
        assert!((loss - want).abs() < 1e-9, "{loss} vs {want}");
    }

    #[test]
    fn decorrelation_correlated_pairs() {
        // Columns built as Z * L^T with chol([[1, .5], [.5, 1]]) so the
        // population covariance is exactly [[1, 0.5], [0.5, 1]].
        let r = 0.75f64.sqrt();
        let samples = array![
            [1.0, 0.5 + r],
            [1.0, 0.5 - r],
            [-1.0, -0.5 + r],
            [-1.0, -0.5 - r]
        ];
        let loss = decorrelation_loss(&samples.view()).unwrap();
        let want = 2.5f64.sqrt() - (2f64 + 1e-6).sqrt();
        assert!((loss - want).abs() < 1e-12);
        assert!((loss - 0.16690).abs() < 1e-4, "{loss}");
    }

    #[test]
    fn decorrelation_constant_columns() {
        let samples = array![[2.0, -1.0], [2.0, -1.0], [2.0, -1.0]];
        let loss = decorrelation_loss(&samples.view()).unwrap();
        assert!((loss - (-1e-3)).abs() < 1e-15);
    }

    #[test]
    fn decorrelation_needs_two_samples() {
        let samples = array![[1.0, 2.0]];
        assert_eq!(
            decorrelation_loss(&samples.view()).unwrap_err().exit_code(),
            2
        );
    }

    #[test]
    fn decorrelation_lower_bound_and_positivity() {
        let mut rng = rng_for(10, &[]);
        for _ in 0..20 {
            let samples = Array2::from_shape_simple_fn((16, 6), || rng.random_range(-1.0..1.0));
            let loss = decorrelation_loss(&samples.view()).unwrap();
            assert!(loss >= -1e-3 - 1e-12);
        }
    }

    #[test]
    fn fuse_uniform_and_selector_weights() {
        let scores: BTreeMap<Factor, f64> = [
            (Factor::Luminance, 0.9),
            (Factor::Contrast, 0.6),
            (Factor::Structure, 0.3),
        ]
        .into();
        let q = fuse_factor_scores(&scores, &uniform_weights()).unwrap();
        assert!((q - 0.6).abs() < 1e-12);

        let ones: BTreeMap<Factor, f64> =
            crate::adapter::FACTORS.iter().map(|f| (*f, 1.0)).collect();
        let all_one: BTreeMap<Factor, f64> =
            crate::adapter::FACTORS.iter().map(|f| (*f, 1.0)).collect();
        let q = fuse_factor_scores(&all_one, &ones).unwrap();
        assert!((q - 1.0).abs() < 1e-12);

        let selector: BTreeMap<Factor, f64> = [
            (Factor::Luminance, 1.0),
            (Factor::Contrast, 0.0),
            (Factor::Structure, 0.0),
        ]
        .into();
        let q = fuse_factor_scores(&scores, &selector).unwrap();
        assert!((q - 0.9).abs() < 1e-12);
    }

    #[test]
    fn fuse_rejects_bad_weights() {
        let scores: BTreeMap<Factor, f64> = [(Factor::Luminance, 0.5)].into();
        let missing: BTreeMap<Factor, f64> = [(Factor::Contrast, 1.0)].into();
        assert!(fuse_factor_scores(&scores, &missing).is_err());
        let zeros: BTreeMap<Factor, f64> = [(Factor::Luminance, 0.0)].into();
        assert!(fuse_factor_scores(&scores, &zeros).is_err());
    }
}
