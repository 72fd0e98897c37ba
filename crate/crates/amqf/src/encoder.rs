//! Deep feature extraction from image batches.
//!
//! The scratch variant is a three-stage strided CNN built for desk-scale
//! experiments; the imported variant replays a convolution stack exported
//! to a tensor archive, frozen by default.

use std::path::PathBuf;

use ndarray::{Array1, Array4, ArrayD};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{AmqfError, Result};
use crate::rng::rng_for;
use crate::store::TensorStore;

/// Spatial deep-feature block for a batch, `[B, H_l, W_l, C_l]`.
#[derive(Debug, Clone)]
pub struct FeatureTensor {
    pub data: Array4<f64>,
    pub layer_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    ScratchCnn,
    ImportedBackbone,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    /// Channel count of the produced features.
    pub out_channels: usize,
    /// Ratio of input to feature resolution; 8 for the scratch stack.
    pub downsample_factor: usize,
    pub trainable: bool,
    pub weights_path: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variant: EncoderVariant::ScratchCnn,
            out_channels: 32,
            downsample_factor: 8,
            trainable: true,
            weights_path: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0 {
            return Err(AmqfError::config("encoder out_channels must be positive"));
        }
        match self.variant {
            EncoderVariant::ScratchCnn => {
                if self.downsample_factor != 8 {
                    return Err(AmqfError::config(
                        "scratch encoder has three stride-2 stages; downsample_factor must be 8",
                    ));
                }
            }
            EncoderVariant::ImportedBackbone => {
                if self.weights_path.is_none() {
                    return Err(AmqfError::config(
                        "imported_backbone requires weights_path",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Linear,
}

/// One convolution stage: kernel `[kh, kw, c_in, c_out]` plus bias.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
    pub pad: usize,
    pub activation: Activation,
}

impl ConvLayer {
    /// Fan-in scaled normal init, zero bias.
    pub fn init(
        kernel: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        pad: usize,
        activation: Activation,
        seed: u64,
    ) -> Self {
        let fan_in = (kernel * kernel * c_in) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        let mut rng = rng_for(seed, &[kernel as u64, c_in as u64, c_out as u64]);
        let weight =
            Array4::from_shape_simple_fn((kernel, kernel, c_in, c_out), || normal.sample(&mut rng));
        ConvLayer {
            weight,
            bias: Array1::zeros(c_out),
            stride,
            pad,
            activation,
        }
    }
}

/// Parameters of either encoder variant: an ordered convolution stack.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub layers: Vec<ConvLayer>,
    pub layer_tag: String,
}

/// Graph leaves for the encoder stack.
pub struct EncoderVars {
    layers: Vec<(Var, Var)>,
}

impl EncoderVars {
    /// Leaves with their checkpoint names, in stack order.
    pub fn named(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            out.push((format!("encoder.stage{i}.weight"), *w));
            out.push((format!("encoder.stage{i}.bias"), *b));
        }
        out
    }
}

impl EncoderParams {
    /// Three stride-2 stages, widths 3 -> 16 -> 32 -> `out_channels`.
    pub fn init_scratch(out_channels: usize, seed: u64) -> Self {
        let widths = [3, 16, 32, out_channels];
        let layers = (0..3)
            .map(|i| {
                ConvLayer::init(
                    3,
                    widths[i],
                    widths[i + 1],
                    2,
                    1,
                    Activation::Tanh,
                    crate::rng::derive_seed(seed, &[0xE4C0, i as u64]),
                )
            })
            .collect();
        EncoderParams {
            layers,
            layer_tag: "scratch_stage3".into(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map(|l| l.weight.dim().3).unwrap_or(0)
    }

    pub fn downsample_factor(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    /// Insert the stack as graph leaves; trainable stacks become params.
    pub fn vars(&self, g: &mut Graph, trainable: bool) -> EncoderVars {
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
        EncoderVars { layers }
    }

    pub fn forward(&self, g: &mut Graph, vars: &EncoderVars, images: Var) -> Var {
        let mut x = images;
        for (layer, (w, b)) in self.layers.iter().zip(&vars.layers) {
            x = g.conv2d(x, *w, *b, layer.stride, layer.pad);
            if layer.activation == Activation::Tanh {
                x = g.tanh(x);
            }
        }
        x
    }

    /// Export the stack as an importable backbone archive.
    pub fn export_backbone(&self, path: &std::path::Path) -> Result<()> {
        let layer_meta: Vec<serde_json::Value> = self
            .layers
            .iter()
            .map(|l| {
                serde_json::json!({
                    "stride": l.stride,
                    "pad": l.pad,
                    "activation": match l.activation {
                        Activation::Tanh => "tanh",
                        Activation::Linear => "linear",
                    },
                })
            })
            .collect();
        let mut store = TensorStore::new(serde_json::json!({
            "kind": "amqf-backbone",
            "layer_tag": self.layer_tag,
            "layers": layer_meta,
        }));
        for (i, l) in self.layers.iter().enumerate() {
            store.insert(format!("backbone.stage{i}.weight"), l.weight.clone().into_dyn());
            store.insert(format!("backbone.stage{i}.bias"), l.bias.clone().into_dyn());
        }
        store.save(path)
    }

    /// Load a backbone archive written by [`EncoderParams::export_backbone`].
    pub fn import_backbone(path: &std::path::Path) -> Result<Self> {
        let store = TensorStore::load(path)?;
        if store.meta["kind"] != "amqf-backbone" {
            return Err(AmqfError::validation(format!(
                "{} is not a backbone archive",
                path.display()
            )));
        }
        let layer_tag = store.meta["layer_tag"]
            .as_str()
            .unwrap_or("imported")
            .to_string();
        let metas = store.meta["layers"]
            .as_array()
            .ok_or_else(|| AmqfError::validation("backbone meta missing layers"))?
            .clone();
        let mut layers = Vec::with_capacity(metas.len());
        for (i, m) in metas.iter().enumerate() {
            let weight: Array4<f64> = store
                .require(&format!("backbone.stage{i}.weight"))?
                .clone()
                .into_dimensionality()
                .map_err(|e| AmqfError::validation(format!("stage{i} weight: {e}")))?;
            let bias: Array1<f64> = store
                .require(&format!("backbone.stage{i}.bias"))?
                .clone()
                .into_dimensionality()
                .map_err(|e| AmqfError::validation(format!("stage{i} bias: {e}")))?;
            let activation = match m["activation"].as_str() {
                Some("linear") => Activation::Linear,
                _ => Activation::Tanh,
            };
            layers.push(ConvLayer {
                weight,
                bias,
                stride: m["stride"].as_u64().unwrap_or(2) as usize,
                pad: m["pad"].as_u64().unwrap_or(1) as usize,
                activation,
            });
        }
        Ok(EncoderParams { layers, layer_tag })
    }

    /// Build params for a config: scratch init or an imported archive.
    pub fn from_config(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        match config.variant {
            EncoderVariant::ScratchCnn => Ok(Self::init_scratch(config.out_channels, seed)),
            EncoderVariant::ImportedBackbone => {
                let path = config.weights_path.as_ref().unwrap();
                if !path.exists() {
                    return Err(AmqfError::io(
                        path,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
                    ));
                }
                let params = Self::import_backbone(path)?;
                if params.out_channels() != config.out_channels {
                    return Err(AmqfError::config(format!(
                        "imported backbone produces {} channels, config expects {}",
                        params.out_channels(),
                        config.out_channels
                    )));
                }
                Ok(params)
            }
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, ArrayD<f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("encoder.stage{i}.weight"), l.weight.clone().into_dyn()));
            out.push((format!("encoder.stage{i}.bias"), l.bias.clone().into_dyn()));
        }
        out
    }
}

/// Run the encoder over an image batch `[B, H, W, 3]`.
///
/// Deterministic in inference; differentiable when built through a
/// recording graph via [`EncoderParams::forward`].
pub fn extract_features(
    images: &Array4<f64>,
    config: &EncoderConfig,
    params: &EncoderParams,
) -> Result<FeatureTensor> {
    config.validate()?;
    let (_, h, w, c) = images.dim();
    if c != 3 {
        return Err(AmqfError::validation(format!(
            "encoder expects 3-channel input, got {c}"
        )));
    }
    let factor = params.downsample_factor();
    if h % factor != 0 || w % factor != 0 {
        return Err(AmqfError::validation(format!(
            "input {h}x{w} is not divisible by the downsample factor {factor}"
        )));
    }
    let mut g = Graph::forward_only();
    let x = g.constant4(images.clone());
    let vars = params.vars(&mut g, false);
    let y = params.forward(&mut g, &vars, x);
    let data = g.value4(y).to_owned();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(AmqfError::numeric("encoder produced non-finite features"));
    }
    Ok(FeatureTensor {
        data,
        layer_tag: params.layer_tag.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    fn images(b: usize, s: usize, seed: u64) -> Array4<f64> {
        let mut rng = rng_for(seed, &[1]);
        Array4::from_shape_simple_fn((b, s, s, 3), || rng.random_range(0.0..1.0))
    }

    #[test]
    fn scratch_shape_contract() {
        let config = EncoderConfig {
            out_channels: 64,
            ..EncoderConfig::default()
        };
        let params = EncoderParams::init_scratch(64, 0);
        let feats = extract_features(&images(2, 64, 2), &config, &params).unwrap();
        assert_eq!(feats.data.dim(), (2, 8, 8, 64));
        assert_eq!(feats.layer_tag, "scratch_stage3");
    }

    #[test]
    fn inference_is_deterministic() {
        let config = EncoderConfig::default();
        let params = EncoderParams::init_scratch(config.out_channels, 3);
        let x = images(1, 32, 4);
        let a = extract_features(&x, &config, &params).unwrap();
        let b = extract_features(&x, &config, &params).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn zero_image_yields_finite_features() {
        let config = EncoderConfig::default();
        let params = EncoderParams::init_scratch(config.out_channels, 5);
        let x = Array4::zeros((1, 16, 16, 3));
        let feats = extract_features(&x, &config, &params).unwrap();
        assert!(feats.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn non_divisible_shape_is_rejected() {
        let config = EncoderConfig::default();
        let params = EncoderParams::init_scratch(config.out_channels, 6);
        let err = extract_features(&images(1, 20, 7), &config, &params).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn translation_by_one_stride_shifts_features_one_cell() {
        let config = EncoderConfig::default();
        let params = EncoderParams::init_scratch(config.out_channels, 8);
        let x = images(1, 64, 9);
        // Shift the content by a full downsample stride along x.
        let stride = params.downsample_factor();
        let mut shifted = Array4::zeros(x.dim());
        for y in 0..64 {
            for xi in stride..64 {
                for c in 0..3 {
                    shifted[(0, y, xi, c)] = x[(0, y, xi - stride, c)];
                }
            }
        }
        let fa = extract_features(&x, &config, &params).unwrap().data;
        let fb = extract_features(&shifted, &config, &params).unwrap().data;
        let (_, fh, fw, fc) = fa.dim();
        // Interior cells move one position; boundary columns are excluded.
        let mut checked = 0;
        for y in 1..fh - 1 {
            for xi in 1..fw - 2 {
                for c in 0..fc {
                    let a = fa[(0, y, xi, c)];
                    let b = fb[(0, y, xi + 1, c)];
                    assert!(
                        (a - b).abs() < 1e-9,
                        "feature not shift-consistent at ({y},{xi},{c}): {a} vs {b}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn backbone_export_import_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("backbone.amqt");
        let params = EncoderParams::init_scratch(16, 11);
        params.export_backbone(&path).unwrap();
        let config = EncoderConfig {
            variant: EncoderVariant::ImportedBackbone,
            out_channels: 16,
            downsample_factor: 8,
            trainable: false,
            weights_path: Some(path),
        };
        let imported = EncoderParams::from_config(&config, 0).unwrap();
        let x = images(1, 32, 12);
        let a = extract_features(&x, &EncoderConfig::default(), &params).unwrap();
        let b = extract_features(&x, &config, &imported).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn missing_weights_file_is_io_error() {
        let config = EncoderConfig {
            variant: EncoderVariant::ImportedBackbone,
            out_channels: 16,
            downsample_factor: 8,
            trainable: false,
            weights_path: Some(PathBuf::from("/no/such/backbone.amqt")),
        };
        let err = EncoderParams::from_config(&config, 0).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn imported_without_path_is_config_error() {
        let config = EncoderConfig {
            variant: EncoderVariant::ImportedBackbone,
            out_channels: 16,
            downsample_factor: 8,
            trainable: false,
            weights_path: None,
        };
        assert_eq!(config.validate().unwrap_err().exit_code(), 2);
    }
}
