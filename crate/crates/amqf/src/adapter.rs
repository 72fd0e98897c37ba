//! Adaptive decomposition of deep features into quality factors.
//!
//! Each factor (luminance, contrast, structure) gets a pointwise linear
//! projection; a bank of pointwise heads produces residual features that
//! supplement the factors. All maps are bias-free, so the decomposition is
//! exactly linear in the input features.

use ndarray::{Array2, Array4, ArrayD};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::encoder::FeatureTensor;
use crate::error::{AmqfError, Result};
use crate::rng::rng_for;

/// The quality factors, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Luminance,
    Contrast,
    Structure,
}

pub const FACTORS: [Factor; 3] = [Factor::Luminance, Factor::Contrast, Factor::Structure];

impl Factor {
    pub fn name(&self) -> &'static str {
        match self {
            Factor::Luminance => "luminance",
            Factor::Contrast => "contrast",
            Factor::Structure => "structure",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl std::fmt::Display for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How the multi-head residual features attach to the factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// The mean over all heads is added to every factor.
    #[default]
    SharedMean,
    /// Each factor owns its own bank of heads.
    PerFactor,
}

/// Per-factor feature tensors, each `[B, H_l, W_l, D]`.
#[derive(Debug, Clone)]
pub struct QualityFactorFeatures {
    pub factors: [Array4<f64>; 3],
}

impl QualityFactorFeatures {
    pub fn get(&self, f: Factor) -> &Array4<f64> {
        &self.factors[f.index()]
    }

    pub fn factor_names() -> [&'static str; 3] {
        [
            Factor::Luminance.name(),
            Factor::Contrast.name(),
            Factor::Structure.name(),
        ]
    }
}

/// Bias-free pointwise projections for factors and heads.
#[derive(Debug, Clone)]
pub struct AdapterParams {
    /// One `[C_l, D]` projection per factor.
    pub projections: Vec<Array2<f64>>,
    /// `[C_l, D]` head maps; `head_count` of them in shared mode,
    /// `3 * head_count` (factor-major) in per-factor mode.
    pub heads: Vec<Array2<f64>>,
    pub head_count: usize,
    pub head_mode: HeadMode,
}

pub struct AdapterVars {
    projections: Vec<Var>,
    heads: Vec<Var>,
}

impl AdapterVars {
    pub fn named(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        for (f, proj) in FACTORS.iter().zip(&self.projections) {
            out.push((format!("adapter.{f}.proj"), *proj));
        }
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("adapter.head{i}"), *h));
        }
        out
    }
}

impl AdapterParams {
    pub fn init(c_in: usize, dim: usize, head_count: usize, head_mode: HeadMode, seed: u64) -> Self {
        assert!(head_count >= 1, "head_count must be at least 1");
        let normal = Normal::new(0.0, (1.0 / c_in as f64).sqrt()).unwrap();
        let make = |tag: u64| {
            let mut rng = rng_for(seed, &[0xADA7, tag]);
            Array2::from_shape_simple_fn((c_in, dim), || normal.sample(&mut rng))
        };
        let projections = (0..3).map(|i| make(i as u64)).collect();
        let n_heads = match head_mode {
            HeadMode::SharedMean => head_count,
            HeadMode::PerFactor => 3 * head_count,
        };
        let heads = (0..n_heads).map(|i| make(100 + i as u64)).collect();
        AdapterParams {
            projections,
            heads,
            head_count,
            head_mode,
        }
    }

    /// Identity projections and zero heads; only valid when `C_l == D`.
    pub fn identity(channels: usize, head_count: usize) -> Self {
        AdapterParams {
            projections: (0..3).map(|_| Array2::eye(channels)).collect(),
            heads: (0..head_count).map(|_| Array2::zeros((channels, channels))).collect(),
            head_count,
            head_mode: HeadMode::SharedMean,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.projections[0].dim().0
    }

    pub fn dim(&self) -> usize {
        self.projections[0].dim().1
    }

    pub fn vars(&self, g: &mut Graph, trainable: bool) -> AdapterVars {
        let mut leaf = |w: &Array2<f64>| {
            let w = w.clone().into_dyn();
            if trainable {
                g.param(w)
            } else {
                g.constant(w)
            }
        };
        AdapterVars {
            projections: self.projections.iter().map(&mut leaf).collect(),
            heads: self.heads.iter().map(&mut leaf).collect(),
        }
    }

    /// Decompose features into the three factor tensors.
    pub fn forward(&self, g: &mut Graph, vars: &AdapterVars, features: Var) -> [Var; 3] {
        let head_mean = |g: &mut Graph, heads: &[Var]| {
            let mapped: Vec<Var> = heads.iter().map(|&h| g.pointwise(features, h)).collect();
            let c = 1.0 / mapped.len() as f64;
            let terms: Vec<(f64, Var)> = mapped.into_iter().map(|v| (c, v)).collect();
            g.lincomb(&terms)
        };
        match self.head_mode {
            HeadMode::SharedMean => {
                let residual = head_mean(g, &vars.heads);
                std::array::from_fn(|i| {
                    let projected = g.pointwise(features, vars.projections[i]);
                    g.add(projected, residual)
                })
            }
            HeadMode::PerFactor => std::array::from_fn(|i| {
                let own = &vars.heads[i * self.head_count..(i + 1) * self.head_count];
                let residual = head_mean(g, own);
                let projected = g.pointwise(features, vars.projections[i]);
                g.add(projected, residual)
            }),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, ArrayD<f64>)> {
        let mut out = Vec::new();
        for (f, proj) in FACTORS.iter().zip(&self.projections) {
            out.push((format!("adapter.{f}.proj"), proj.clone().into_dyn()));
        }
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("adapter.head{i}"), h.clone().into_dyn()));
        }
        out
    }
}

/// Decompose a feature tensor into per-factor features (inference path).
pub fn decompose_factors(
    features: &FeatureTensor,
    params: &AdapterParams,
) -> Result<QualityFactorFeatures> {
    let c = features.data.dim().3;
    if c != params.in_channels() {
        return Err(AmqfError::validation(format!(
            "adapter expects {} channels, features have {c}",
            params.in_channels()
        )));
    }
    let mut g = Graph::forward_only();
    let x = g.constant4(features.data.clone());
    let vars = params.vars(&mut g, false);
    let outs = params.forward(&mut g, &vars, x);
    Ok(QualityFactorFeatures {
        factors: outs.map(|v| g.value4(v).to_owned()),
    })
}
