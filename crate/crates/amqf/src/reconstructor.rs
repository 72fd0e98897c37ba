//! Single-channel reconstruction of quality factors and its loss.
//!
//! Factor targets come from SSIM-style local statistics of the grayscale
//! image: luminance is the local Gaussian mean, contrast the local Gaussian
//! standard deviation, structure the normalized deviation
//! `(x - mu) / (sigma + 1e-8)`, all with an 11x11 window of sigma 1.5.

use ndarray::{s, Array2, Array3, Array4, ArrayD, ArrayView2, ArrayView3};

use crate::autodiff::{Graph, Var};
use crate::encoder::{Activation, ConvLayer};
use crate::error::{AmqfError, Result};
use crate::filters::{local_mean_std, to_grayscale};
use crate::ops;

pub const STRUCTURE_EPS: f64 = 1e-8;
const WINDOW_SIGMA: f64 = 1.5;
const WINDOW_RADIUS: usize = 5;

/// Analytic single-channel target maps for the three factors.
#[derive(Debug, Clone)]
pub struct FactorMaps {
    pub luminance: Array2<f64>,
    pub contrast: Array2<f64>,
    pub structure: Array2<f64>,
}

impl FactorMaps {
    pub fn get(&self, f: crate::adapter::Factor) -> &Array2<f64> {
        match f {
            crate::adapter::Factor::Luminance => &self.luminance,
            crate::adapter::Factor::Contrast => &self.contrast,
            crate::adapter::Factor::Structure => &self.structure,
        }
    }
}

/// Compute the luminance/contrast/structure target maps of an image.
pub fn factor_target_maps(image: &ArrayView3<f64>) -> FactorMaps {
    let gray = to_grayscale(image);
    let (mean, std) = local_mean_std(&gray.view(), WINDOW_SIGMA, WINDOW_RADIUS);
    let mut structure = Array2::zeros(gray.dim());
    for ((s, &x), (&m, &sd)) in structure
        .iter_mut()
        .zip(gray.iter())
        .zip(mean.iter().zip(std.iter()))
    {
        *s = (x - m) / (sd + STRUCTURE_EPS);
    }
    FactorMaps {
        luminance: mean,
        contrast: std,
        structure,
    }
}

/// Transposed-convolution decoder: three stride-2 stages from feature
/// resolution back to the crop resolution, linear final output.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub layers: Vec<ConvLayer>,
}

pub struct DecoderVars {
    layers: Vec<(Var, Var)>,
}

impl DecoderVars {
    pub fn named(&self, prefix: &str) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.stage{i}.weight"), *w));
            out.push((format!("{prefix}.stage{i}.bias"), *b));
        }
        out
    }
}

impl DecoderParams {
    /// Stages `dim -> 16 -> 8 -> 1`, kernel 4, stride 2, pad 1.
    pub fn init(dim: usize, seed: u64) -> Self {
        let widths = [dim, 16, 8, 1];
        let layers = (0..3)
            .map(|i| {
                ConvLayer::init(
                    4,
                    widths[i],
                    widths[i + 1],
                    2,
                    1,
                    if i == 2 { Activation::Linear } else { Activation::Tanh },
                    crate::rng::derive_seed(seed, &[0xDEC0, i as u64]),
                )
            })
            .collect();
        DecoderParams { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map(|l| l.weight.dim().2).unwrap_or(0)
    }

    /// Spatial upsampling factor of the stack.
    pub fn upsample_factor(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    pub fn vars(&self, g: &mut Graph, trainable: bool) -> DecoderVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (w, b) = (l.weight.clone().into_dyn(), l.bias.clone().into_dyn());
                if trainable {
                    (g.param(w), g.param(b))
                } else {
                    (g.constant(w), g.constant(b))
                }
            })
            .collect();
        DecoderVars { layers }
    }

    pub fn forward(&self, g: &mut Graph, vars: &DecoderVars, features: Var) -> Var {
        let mut x = features;
        for (layer, (w, b)) in self.layers.iter().zip(&vars.layers) {
            x = g.conv_transpose2d(x, *w, *b, layer.stride, layer.pad);
            if layer.activation == Activation::Tanh {
                x = g.tanh(x);
            }
        }
        x
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, ArrayD<f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.stage{i}.weight"), l.weight.clone().into_dyn()));
            out.push((format!("{prefix}.stage{i}.bias"), l.bias.clone().into_dyn()));
        }
        out
    }
}

/// Decode factor features `[B, H_l, W_l, D]` into `[B, H, W, 1]` images.
pub fn decode_factor(features: &Array4<f64>, params: &DecoderParams) -> Result<Array4<f64>> {
    if features.dim().3 != params.in_dim() {
        return Err(AmqfError::validation(format!(
            "decoder expects {} channels, features have {}",
            params.in_dim(),
            features.dim().3
        )));
    }
    let mut g = Graph::forward_only();
    let x = g.constant4(features.clone());
    let vars = params.vars(&mut g, false);
    let y = params.forward(&mut g, &vars, x);
    Ok(g.value4(y).to_owned())
}

/// Reconstruction loss between two single-channel images: L1 intensity plus
/// L1 of forward-difference gradients (replicate padding, zero trailing
/// edge), each averaged over all pixels.
///
/// Returns `(total, grad_part, intensity_part)`.
pub fn reconstruction_loss(
    i1: &ArrayView2<f64>,
    i2: &ArrayView2<f64>,
) -> Result<(f64, f64, f64)> {
    if i1.dim() != i2.dim() {
        return Err(AmqfError::validation(format!(
            "reconstruction_loss shape mismatch: {:?} vs {:?}",
            i1.dim(),
            i2.dim()
        )));
    }
    let wrap = |img: &ArrayView2<f64>| -> Array4<f64> {
        let (h, w) = img.dim();
        img.to_owned().into_shape_with_order((1, h, w, 1)).unwrap()
    };
    let a = wrap(i1);
    let b = wrap(i2);
    let l1 = |x: &Array4<f64>, y: &Array4<f64>| -> f64 {
        x.iter()
            .zip(y.iter())
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
            / x.len() as f64
    };
    let intensity = l1(&a, &b);
    let grad = l1(&ops::diff_rows(&a.view()), &ops::diff_rows(&b.view()))
        + l1(&ops::diff_cols(&a.view()), &ops::diff_cols(&b.view()));
    Ok((grad + intensity, grad, intensity))
}

/// Graph version of the reconstruction loss against a constant target
/// batch; same decomposition as [`reconstruction_loss`].
pub fn reconstruction_loss_graph(g: &mut Graph, decoded: Var, target: &Array4<f64>) -> Var {
    let intensity = g.l1_mean_const(decoded, &target.clone().into_dyn());
    let dr = g.diff_rows(decoded);
    let dc = g.diff_cols(decoded);
    let target_dr = ops::diff_rows(&target.view()).into_dyn();
    let target_dc = ops::diff_cols(&target.view()).into_dyn();
    let grad_r = g.l1_mean_const(dr, &target_dr);
    let grad_c = g.l1_mean_const(dc, &target_dc);
    g.lincomb(&[(1.0, intensity), (1.0, grad_r), (1.0, grad_c)])
}

/// Stack per-sample factor maps into a `[B, H, W, 1]` target batch.
pub fn target_batch(maps: &[FactorMaps], factor: crate::adapter::Factor) -> Array4<f64> {
    let (h, w) = maps[0].get(factor).dim();
    let mut out = Array4::zeros((maps.len(), h, w, 1));
    for (b, m) in maps.iter().enumerate() {
        let plane = m.get(factor);
        out.slice_mut(s![b, .., .., 0]).assign(plane);
    }
    out
}

/// Grayscale plane of an image batch `[B, H, W, C]` -> per-sample maps.
pub fn batch_factor_targets(batch: &Array4<f64>) -> Vec<FactorMaps> {
    (0..batch.dim().0)
        .map(|b| {
            let img: Array3<f64> = batch.slice(s![b, .., .., ..]).to_owned();
            factor_target_maps(&img.view())
        })
        .collect()
}
