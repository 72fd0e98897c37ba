//! Objective assembly, the optimization loop and checkpoint scoring.

pub mod checkpoint;
pub mod loss;
pub mod optimizer;
pub mod pipeline;

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Array4, ArrayD, ArrayView3, IxDyn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterParams, HeadMode, FACTORS};
use crate::data::{center_crop, paired_random_crop, DatasetManifest, ImagePair};
use crate::dictionary::{init_dictionary, Dictionary};
use crate::encoder::{Activation, ConvLayer, EncoderConfig, EncoderParams};
use crate::error::{AmqfError, Result};
use crate::ops::NORM_EPS;
use crate::reconstructor::DecoderParams;
use crate::rng::{derive_seed, rng_for};

pub use checkpoint::{Checkpoint, EpochStats};
pub use loss::{assemble_loss, LossBreakdown};
pub use optimizer::Adam;

fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    8
}
fn default_lr() -> f64 {
    1e-3
}
fn default_lambda_re() -> f64 {
    0.1
}
fn default_lambda_decov() -> f64 {
    0.01
}
fn default_crop() -> usize {
    224
}
fn default_dict_words() -> usize {
    1024
}
fn default_dict_dim() -> usize {
    512
}
fn default_head_count() -> usize {
    4
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Optional hard cap on optimizer steps, cutting the last epoch short.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub lambda_re: f64,
    pub lambda_decov: f64,
    pub crop_size: usize,
    pub encoder: EncoderConfig,
    pub dict_words: usize,
    pub dict_dim: usize,
    pub dict_trainable: bool,
    pub head_count: usize,
    pub head_mode: HeadMode,
    /// One decoder shared across factors instead of one per factor.
    pub shared_decoder: bool,
    pub enable_amqf: bool,
    pub enable_rfds: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            max_steps: None,
            batch_size: default_batch(),
            learning_rate: default_lr(),
            seed: 0,
            lambda_re: default_lambda_re(),
            lambda_decov: default_lambda_decov(),
            crop_size: default_crop(),
            encoder: EncoderConfig::default(),
            dict_words: default_dict_words(),
            dict_dim: default_dict_dim(),
            dict_trainable: default_true(),
            head_count: default_head_count(),
            head_mode: HeadMode::SharedMean,
            shared_decoder: false,
            enable_amqf: default_true(),
            enable_rfds: default_true(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(AmqfError::config("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(AmqfError::config("learning_rate must be positive"));
        }
        if !(self.lambda_re >= 0.0 && self.lambda_re.is_finite())
            || !(self.lambda_decov >= 0.0 && self.lambda_decov.is_finite())
        {
            return Err(AmqfError::config("loss weights must be finite and nonnegative"));
        }
        if self.dict_words == 0 || self.dict_dim == 0 || self.head_count == 0 {
            return Err(AmqfError::config(
                "dict_words, dict_dim and head_count must be positive",
            ));
        }
        self.encoder.validate()?;
        if self.crop_size % self.encoder.downsample_factor != 0 || self.crop_size < 8 {
            return Err(AmqfError::config(format!(
                "crop_size {} must be a positive multiple of {}",
                self.crop_size, self.encoder.downsample_factor
            )));
        }
        if !self.enable_amqf && !self.enable_rfds {
            return Err(AmqfError::config(
                "enable_amqf and enable_rfds cannot both be false: nothing left to score with",
            ));
        }
        if !self.enable_amqf && self.encoder.out_channels != self.dict_dim {
            return Err(AmqfError::config(format!(
                "with enable_amqf=false raw features feed the dictionary, so \
                 encoder.out_channels ({}) must equal dict_dim ({})",
                self.encoder.out_channels, self.dict_dim
            )));
        }
        Ok(())
    }
}

/// All learnable state of the scoring pipeline.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub adapter: AdapterParams,
    /// One decoder per factor, or a single shared decoder.
    pub decoders: Vec<DecoderParams>,
    pub dictionary: Dictionary,
    pub calib_a: f64,
    pub calib_b: f64,
}

impl ModelParams {
    pub fn init(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let encoder = EncoderParams::from_config(&config.encoder, derive_seed(config.seed, &[1]))?;
        let adapter = AdapterParams::init(
            config.encoder.out_channels,
            config.dict_dim,
            config.head_count,
            config.head_mode,
            derive_seed(config.seed, &[2]),
        );
        let n_decoders = if config.shared_decoder { 1 } else { 3 };
        let decoders = (0..n_decoders)
            .map(|i| DecoderParams::init(config.dict_dim, derive_seed(config.seed, &[3, i as u64])))
            .collect();
        let dict_seed = derive_seed(config.seed, &[4]);
        let dictionary = init_dictionary(config.dict_words, config.dict_dim, dict_seed)?;
        Ok(ModelParams {
            encoder,
            adapter,
            decoders,
            dictionary,
            calib_a: 1.0,
            calib_b: 0.0,
        })
    }

    pub fn decoder_prefixes(&self) -> Vec<String> {
        if self.decoders.len() == 1 {
            vec!["decoder.shared".to_string()]
        } else {
            FACTORS.iter().map(|f| format!("decoder.{f}")).collect()
        }
    }

    /// All tensors under their checkpoint names. Calibration scalars are
    /// zero-rank tensors.
    pub fn named_tensors(&self) -> Vec<(String, ArrayD<f64>)> {
        let mut out = self.encoder.named_tensors();
        out.extend(self.adapter.named_tensors());
        for (decoder, prefix) in self.decoders.iter().zip(self.decoder_prefixes()) {
            out.extend(decoder.named_tensors(&prefix));
        }
        out.push((
            "dictionary.words".to_string(),
            self.dictionary.words.clone().into_dyn(),
        ));
        out.push(("calib.a".to_string(), ArrayD::from_elem(IxDyn(&[]), self.calib_a)));
        out.push(("calib.b".to_string(), ArrayD::from_elem(IxDyn(&[]), self.calib_b)));
        out
    }

    /// Write updated tensors back by name; absent names are left alone.
    pub fn set_named_tensors(&mut self, map: &BTreeMap<String, ArrayD<f64>>) -> Result<()> {
        fn cast4(name: &str, t: &ArrayD<f64>) -> Result<Array4<f64>> {
            t.clone()
                .into_dimensionality()
                .map_err(|e| AmqfError::validation(format!("{name}: {e}")))
        }
        fn cast2(name: &str, t: &ArrayD<f64>) -> Result<Array2<f64>> {
            t.clone()
                .into_dimensionality()
                .map_err(|e| AmqfError::validation(format!("{name}: {e}")))
        }
        fn cast1(name: &str, t: &ArrayD<f64>) -> Result<Array1<f64>> {
            t.clone()
                .into_dimensionality()
                .map_err(|e| AmqfError::validation(format!("{name}: {e}")))
        }
        fn scalar(name: &str, t: &ArrayD<f64>) -> Result<f64> {
            t.iter()
                .next()
                .copied()
                .ok_or_else(|| AmqfError::validation(format!("{name}: empty tensor")))
        }
        for (i, layer) in self.encoder.layers.iter_mut().enumerate() {
            if let Some(t) = map.get(&format!("encoder.stage{i}.weight")) {
                layer.weight = cast4("encoder weight", t)?;
            }
            if let Some(t) = map.get(&format!("encoder.stage{i}.bias")) {
                layer.bias = cast1("encoder bias", t)?;
            }
        }
        for (f, proj) in FACTORS.iter().zip(self.adapter.projections.iter_mut()) {
            if let Some(t) = map.get(&format!("adapter.{f}.proj")) {
                *proj = cast2("adapter projection", t)?;
            }
        }
        for (i, head) in self.adapter.heads.iter_mut().enumerate() {
            if let Some(t) = map.get(&format!("adapter.head{i}")) {
                *head = cast2("adapter head", t)?;
            }
        }
        let prefixes = self.decoder_prefixes();
        for (decoder, prefix) in self.decoders.iter_mut().zip(prefixes) {
            for (i, layer) in decoder.layers.iter_mut().enumerate() {
                if let Some(t) = map.get(&format!("{prefix}.stage{i}.weight")) {
                    layer.weight = cast4("decoder weight", t)?;
                }
                if let Some(t) = map.get(&format!("{prefix}.stage{i}.bias")) {
                    layer.bias = cast1("decoder bias", t)?;
                }
            }
        }
        if let Some(t) = map.get("dictionary.words") {
            self.dictionary.words = cast2("dictionary.words", t)?;
        }
        if let Some(t) = map.get("calib.a") {
            self.calib_a = scalar("calib.a", t)?;
        }
        if let Some(t) = map.get("calib.b") {
            self.calib_b = scalar("calib.b", t)?;
        }
        Ok(())
    }

    /// Skeleton for checkpoint loading: layer geometry comes from the
    /// archive meta, tensor contents are filled in afterwards.
    pub fn from_archive_meta(config: &TrainConfig, meta: &serde_json::Value) -> Result<Self> {
        let layer_metas = meta["encoder_layers"]
            .as_array()
            .ok_or_else(|| AmqfError::validation("checkpoint meta missing encoder_layers"))?;
        let layers = layer_metas
            .iter()
            .map(|m| ConvLayer {
                weight: Array4::zeros((1, 1, 1, 1)),
                bias: Array1::zeros(1),
                stride: m["stride"].as_u64().unwrap_or(2) as usize,
                pad: m["pad"].as_u64().unwrap_or(1) as usize,
                activation: match m["activation"].as_str() {
                    Some("linear") => Activation::Linear,
                    _ => Activation::Tanh,
                },
            })
            .collect();
        let encoder = EncoderParams {
            layers,
            layer_tag: meta["layer_tag"].as_str().unwrap_or("imported").to_string(),
        };
        let adapter = AdapterParams::init(
            config.encoder.out_channels,
            config.dict_dim,
            config.head_count,
            config.head_mode,
            0,
        );
        let n_decoders = if config.shared_decoder { 1 } else { 3 };
        let decoders = (0..n_decoders)
            .map(|_| DecoderParams::init(config.dict_dim, 0))
            .collect();
        let dict = &meta["dictionary"];
        let dictionary = Dictionary {
            words: Array2::zeros((
                dict["n_words"].as_u64().unwrap_or(config.dict_words as u64) as usize,
                dict["dim"].as_u64().unwrap_or(config.dict_dim as u64) as usize,
            )),
            seed: dict["seed"].as_u64().unwrap_or(0),
        };
        Ok(ModelParams {
            encoder,
            adapter,
            decoders,
            dictionary,
            calib_a: 1.0,
            calib_b: 0.0,
        })
    }
}

/// Run mini-batch gradient descent over the manifest; deterministic in
/// the config seed. Crops are re-sampled every epoch from epoch-derived
/// seeds.
pub fn train_model(manifest: &DatasetManifest, config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    if manifest.is_empty() {
        return Err(AmqfError::validation("manifest has no entries"));
    }
    let pairs: Vec<ImagePair> = (0..manifest.len())
        .map(|i| manifest.load_pair(i))
        .collect::<Result<_>>()?;
    for pair in &pairs {
        let (h, w, _) = pair.reference.dim();
        if h < config.crop_size || w < config.crop_size {
            return Err(AmqfError::validation(format!(
                "image {h}x{w} smaller than crop_size {}",
                config.crop_size
            )));
        }
    }

    let mut model = ModelParams::init(config)?;
    let mut adam = Adam::new(config.learning_rate);
    let mut history = Vec::new();
    let mut steps_done = 0usize;
    let mut stop = false;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng_for(config.seed, &[0xE90C, epoch as u64]));
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;

        for chunk in order.chunks(config.batch_size) {
            let breakdown = train_step(&mut model, &mut adam, &pairs, chunk, config, epoch)
                .map_err(|e| match e {
                    AmqfError::Numeric(msg) => {
                        AmqfError::numeric(format!("epoch {epoch}: {msg}"))
                    }
                    other => other,
                })?;
            sums.0 += breakdown.total;
            sums.1 += breakdown.mos_term;
            sums.2 += breakdown.recon_term;
            sums.3 += breakdown.decov_term;
            batches += 1;
            steps_done += 1;
            if config.max_steps.is_some_and(|m| steps_done >= m) {
                stop = true;
                break;
            }
        }
        if batches > 0 {
            let n = batches as f64;
            history.push(EpochStats {
                epoch,
                total: sums.0 / n,
                mos_term: sums.1 / n,
                recon_term: sums.2 / n,
                decov_term: sums.3 / n,
            });
        }
        if stop {
            break;
        }
    }

    Ok(Checkpoint {
        model,
        config: config.clone(),
        history,
    })
}

fn train_step(
    model: &mut ModelParams,
    adam: &mut Adam,
    pairs: &[ImagePair],
    chunk: &[usize],
    config: &TrainConfig,
    epoch: usize,
) -> Result<LossBreakdown> {
    let crop = config.crop_size;
    let mut refs = Array4::zeros((chunk.len(), crop, crop, 3));
    let mut dists = Array4::zeros((chunk.len(), crop, crop, 3));
    let mut mos = Vec::with_capacity(chunk.len());
    for (bi, &idx) in chunk.iter().enumerate() {
        let seed = derive_seed(config.seed, &[0xC409, epoch as u64, idx as u64]);
        let cropped = paired_random_crop(&pairs[idx], crop, seed)?;
        refs.slice_mut(s![bi, .., .., ..]).assign(&cropped.reference);
        dists.slice_mut(s![bi, .., .., ..]).assign(&cropped.distorted);
        mos.push(cropped.mos);
    }

    let mut g = crate::autodiff::Graph::recording();
    let vars = pipeline::build_vars(&mut g, model, config, true);
    let outputs = pipeline::build_forward(&mut g, model, &vars, config, &refs, &dists, true);
    let (total, mos_t, re_t, dv_t) = pipeline::build_loss(&mut g, &vars, &outputs, &mos, config);
    let breakdown = LossBreakdown {
        total: g.scalar(total),
        mos_term: g.scalar(mos_t),
        recon_term: g.scalar(re_t),
        decov_term: g.scalar(dv_t),
    };
    if !breakdown.total.is_finite() {
        return Err(AmqfError::numeric(format!(
            "total loss diverged ({})",
            breakdown.total
        )));
    }

    let grads = g.backward(total);
    let mut params: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
    let mut gmap: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
    for (name, var) in &vars.named {
        params.insert(name.clone(), g.value(*var).clone());
        if let Some(grad) = grads.get(*var) {
            gmap.insert(name.clone(), grad.clone());
        }
    }
    adam.step(&mut params, &gmap);
    model.set_named_tensors(&params)?;
    Ok(breakdown)
}

/// Score of one reference/distorted pair under a checkpoint.
#[derive(Debug, Clone)]
pub struct PairScore {
    /// Fused cosine similarity in `[-1, 1]`.
    pub q: f64,
    /// `calib_a * q + calib_b`, the training-time regression target.
    pub q_calibrated: f64,
    /// Per-factor cosine before fusion ("raw" when AMQF is disabled).
    pub per_factor: BTreeMap<String, f64>,
    /// True when a pooled vector was numerically degenerate.
    pub degenerate: bool,
}

/// Deterministically score a pair with center crops.
pub fn score_pair(
    ckpt: &Checkpoint,
    reference: &ArrayView3<f64>,
    distorted: &ArrayView3<f64>,
) -> Result<PairScore> {
    if reference.dim() != distorted.dim() {
        return Err(AmqfError::validation(format!(
            "pair shape mismatch: {:?} vs {:?}",
            reference.dim(),
            distorted.dim()
        )));
    }
    let crop = ckpt.config.crop_size;
    let r = center_crop(reference, crop)?;
    let d = center_crop(distorted, crop)?;
    let mut refs = Array4::zeros((1, crop, crop, 3));
    let mut dists = Array4::zeros((1, crop, crop, 3));
    refs.slice_mut(s![0, .., .., ..]).assign(&r);
    dists.slice_mut(s![0, .., .., ..]).assign(&d);

    let mut g = crate::autodiff::Graph::forward_only();
    let vars = pipeline::build_vars(&mut g, &ckpt.model, &ckpt.config, false);
    let outputs =
        pipeline::build_forward(&mut g, &ckpt.model, &vars, &ckpt.config, &refs, &dists, false);

    let q = g.value(outputs.q_fused)[[0]].clamp(-1.0, 1.0);
    let mut per_factor = BTreeMap::new();
    let mut degenerate = false;
    for score in &outputs.factor_scores {
        per_factor.insert(score.name.to_string(), g.value(score.q)[[0]]);
        for pooled in [score.pooled_ref, score.pooled_dist] {
            let v = g.value2(pooled);
            let norm = v.row(0).dot(&v.row(0)).sqrt();
            if norm < NORM_EPS {
                degenerate = true;
            }
        }
    }
    Ok(PairScore {
        q,
        q_calibrated: ckpt.model.calib_a * q + ckpt.model.calib_b,
        per_factor,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::data::DistortionKind;

    /// Small configuration for fast loop tests.
    pub(crate) fn desk_config() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 4,
            learning_rate: 2e-3,
            seed: 7,
            crop_size: 32,
            encoder: EncoderConfig {
                out_channels: 8,
                ..EncoderConfig::default()
            },
            dict_words: 16,
            dict_dim: 8,
            head_count: 2,
            ..TrainConfig::default()
        }
    }

    fn tiny_manifest(dir: &std::path::Path) -> DatasetManifest {
        synth_dataset(
            2,
            &[DistortionKind::GaussianBlur, DistortionKind::GaussianNoise],
            3,
            40,
            dir,
            11,
        )
        .unwrap()
    }

    #[test]
    fn ablation_conflict_is_config_error() {
        let config = TrainConfig {
            enable_amqf: false,
            enable_rfds: false,
            ..desk_config()
        };
        assert_eq!(config.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn amqf_off_requires_matching_dims() {
        let config = TrainConfig {
            enable_amqf: false,
            dict_dim: 16,
            ..desk_config()
        };
        assert!(config.validate().is_err());
        let ok = TrainConfig {
            enable_amqf: false,
            dict_dim: 8,
            ..desk_config()
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn training_reduces_the_loss_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path());
        let config = desk_config();
        let ckpt = train_model(&manifest, &config).unwrap();
        let first = ckpt.history.first().unwrap().total;
        let last = ckpt.history.last().unwrap().total;
        assert!(last < first, "loss should fall: {first} -> {last}");

        let again = train_model(&manifest, &config).unwrap();
        for ((a, b), (c, d)) in ckpt
            .model
            .named_tensors()
            .into_iter()
            .zip(again.model.named_tensors())
        {
            assert_eq!(a, c);
            assert_eq!(b, d, "tensor {a} differs between identical runs");
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path());
        let config = TrainConfig {
            epochs: 1,
            ..desk_config()
        };
        let ckpt = train_model(&manifest, &config).unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        ckpt.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        for ((na, ta), (nb, tb)) in ckpt
            .model
            .named_tensors()
            .into_iter()
            .zip(loaded.model.named_tensors())
        {
            assert_eq!(na, nb);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn identical_images_score_one() {
        let config = TrainConfig {
            epochs: 1,
            ..desk_config()
        };
        let model = ModelParams::init(&config).unwrap();
        let ckpt = Checkpoint {
            model,
            config,
            history: Vec::new(),
        };
        let img = crate::data::synth::procedural_reference(48, 5);
        let score = score_pair(&ckpt, &img.view(), &img.view()).unwrap();
        assert!((score.q - 1.0).abs() < 1e-6, "q = {}", score.q);
        assert!(!score.degenerate);
        for (_, v) in &score.per_factor {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn max_steps_caps_the_loop() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path());
        let config = TrainConfig {
            epochs: 100,
            max_steps: Some(3),
            ..desk_config()
        };
        let ckpt = train_model(&manifest, &config).unwrap();
        assert_eq!(ckpt.history.len(), 1, "3 steps of 3 batches is one epoch");
    }

    #[test]
    fn ablation_runs_complete() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_manifest(dir.path());
        for (amqf, rfds) in [(false, true), (true, false)] {
            let config = TrainConfig {
                epochs: 2,
                enable_amqf: amqf,
                enable_rfds: rfds,
                ..desk_config()
            };
            let ckpt = train_model(&manifest, &config).unwrap();
            let img = crate::data::synth::procedural_reference(48, 6);
            let score = score_pair(&ckpt, &img.view(), &img.view()).unwrap();
            assert!((score.q - 1.0).abs() < 1e-6);
            if !amqf {
                assert!(score.per_factor.contains_key("raw"));
            }
        }
    }
}
