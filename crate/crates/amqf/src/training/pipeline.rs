//! Assembly of the full scoring/training graph for one batch.

use ndarray::Array4;

use crate::adapter::{AdapterVars, FACTORS};
use crate::autodiff::{Graph, Var};
use crate::encoder::EncoderVars;
use crate::reconstructor::{batch_factor_targets, reconstruction_loss_graph, target_batch, DecoderVars};

use super::{ModelParams, TrainConfig};

/// Graph leaves for every model part, plus the registry of trainable
/// leaves by checkpoint name.
pub struct PipelineVars {
    pub encoder: EncoderVars,
    pub adapter: Option<AdapterVars>,
    pub decoders: Vec<DecoderVars>,
    pub dict_words: Option<Var>,
    pub calib_a: Var,
    pub calib_b: Var,
    pub named: Vec<(String, Var)>,
}

/// Insert the model into the graph. In training mode each part is
/// trainable according to the configuration; inference inserts constants.
pub fn build_vars(g: &mut Graph, model: &ModelParams, config: &TrainConfig, training: bool) -> PipelineVars {
    let mut named = Vec::new();

    let encoder_trainable = training && config.encoder.trainable;
    let encoder = model.encoder.vars(g, encoder_trainable);
    if encoder_trainable {
        named.extend(encoder.named());
    }

    let (adapter, decoders) = if config.enable_amqf {
        let adapter_trainable = training;
        let adapter = model.adapter.vars(g, adapter_trainable);
        if adapter_trainable {
            named.extend(adapter.named());
        }
        let mut decoders = Vec::new();
        if training {
            for (decoder, prefix) in model.decoders.iter().zip(model.decoder_prefixes()) {
                let vars = decoder.vars(g, true);
                named.extend(vars.named(&prefix));
                decoders.push(vars);
            }
        }
        (Some(adapter), decoders)
    } else {
        (None, Vec::new())
    };

    let dict_words = if config.enable_rfds {
        let trainable = training && config.dict_trainable;
        let words = model.dictionary.words.clone().into_dyn();
        let var = if trainable { g.param(words) } else { g.constant(words) };
        if trainable {
            named.push(("dictionary.words".to_string(), var));
        }
        Some(var)
    } else {
        None
    };

    let (calib_a, calib_b) = if training {
        let a = g.param_scalar(model.calib_a);
        let b = g.param_scalar(model.calib_b);
        named.push(("calib.a".to_string(), a));
        named.push(("calib.b".to_string(), b));
        (a, b)
    } else {
        (
            g.constant_scalar(model.calib_a),
            g.constant_scalar(model.calib_b),
        )
    };

    PipelineVars {
        encoder,
        adapter,
        decoders,
        dict_words,
        calib_a,
        calib_b,
        named,
    }
}

/// One factor's scoring chain.
pub struct FactorScore {
    pub name: &'static str,
    /// Per-sample cosine, `[B]`.
    pub q: Var,
    pub pooled_ref: Var,
    pub pooled_dist: Var,
}

pub struct ForwardOutputs {
    /// Fused per-sample score, `[B]`.
    pub q_fused: Var,
    pub factor_scores: Vec<FactorScore>,
    /// Per-(factor, image-stream) reconstruction losses, scalars.
    pub recon_losses: Vec<Var>,
    /// Per-factor decorrelation losses, scalars.
    pub decov_losses: Vec<Var>,
}

/// Build the forward graph for a batch of crops.
///
/// With AMQF disabled the raw encoder features act as a single factor and
/// no reconstruction branch exists; with RFDS disabled the pooled factor
/// features are compared directly instead of dictionary responses.
pub fn build_forward(
    g: &mut Graph,
    model: &ModelParams,
    vars: &PipelineVars,
    config: &TrainConfig,
    ref_batch: &Array4<f64>,
    dist_batch: &Array4<f64>,
    with_recon: bool,
) -> ForwardOutputs {
    let x_ref = g.constant4(ref_batch.clone());
    let x_dist = g.constant4(dist_batch.clone());
    let f_ref = model.encoder.forward(g, &vars.encoder, x_ref);
    let f_dist = model.encoder.forward(g, &vars.encoder, x_dist);

    let (factor_names, factors_ref, factors_dist): (Vec<&'static str>, Vec<Var>, Vec<Var>) =
        match &vars.adapter {
            Some(adapter_vars) => {
                let fr = model.adapter.forward(g, adapter_vars, f_ref);
                let fd = model.adapter.forward(g, adapter_vars, f_dist);
                (
                    FACTORS.iter().map(|f| f.name()).collect(),
                    fr.to_vec(),
                    fd.to_vec(),
                )
            }
            None => (vec!["raw"], vec![f_ref], vec![f_dist]),
        };

    // Decorrelation over all spatial feature vectors of both streams.
    let mut decov_losses = Vec::new();
    for (fr, fd) in factors_ref.iter().zip(&factors_dist) {
        let sr = g.flatten_samples(*fr);
        let sd = g.flatten_samples(*fd);
        let samples = g.concat_rows(sr, sd);
        decov_losses.push(g.decorrelation(samples));
    }

    // Score each factor.
    let mut factor_scores = Vec::new();
    for ((name, fr), fd) in factor_names.iter().zip(&factors_ref).zip(&factors_dist) {
        let (pooled_ref, pooled_dist) = match vars.dict_words {
            Some(words) => {
                let nr = g.l2_normalize_last(*fr);
                let nd = g.l2_normalize_last(*fd);
                let rr = g.respond(nr, words);
                let rd = g.respond(nd, words);
                (g.spatial_mean(rr), g.spatial_mean(rd))
            }
            None => (g.spatial_mean(*fr), g.spatial_mean(*fd)),
        };
        let q = g.cosine_rows(pooled_ref, pooled_dist);
        factor_scores.push(FactorScore {
            name,
            q,
            pooled_ref,
            pooled_dist,
        });
    }
    let weight = 1.0 / factor_scores.len() as f64;
    let terms: Vec<(f64, Var)> = factor_scores.iter().map(|f| (weight, f.q)).collect();
    let q_fused = g.lincomb(&terms);

    // Reconstruction constraint on both streams.
    let mut recon_losses = Vec::new();
    if with_recon && config.enable_amqf && !vars.decoders.is_empty() {
        let targets_ref = batch_factor_targets(ref_batch);
        let targets_dist = batch_factor_targets(dist_batch);
        for (i, factor) in FACTORS.iter().enumerate() {
            let decoder_idx = if model.decoders.len() == 1 { 0 } else { i };
            let decoder = &model.decoders[decoder_idx];
            let decoder_vars = &vars.decoders[decoder_idx];
            let decoded_ref = decoder.forward(g, decoder_vars, factors_ref[i]);
            let decoded_dist = decoder.forward(g, decoder_vars, factors_dist[i]);
            let t_ref = target_batch(&targets_ref, *factor);
            let t_dist = target_batch(&targets_dist, *factor);
            recon_losses.push(reconstruction_loss_graph(g, decoded_ref, &t_ref));
            recon_losses.push(reconstruction_loss_graph(g, decoded_dist, &t_dist));
        }
    }

    ForwardOutputs {
        q_fused,
        factor_scores,
        recon_losses,
        decov_losses,
    }
}

/// Attach calibration and the weighted loss terms; returns
/// `(total, mos_term, recon_term, decov_term)` scalar nodes.
pub fn build_loss(
    g: &mut Graph,
    vars: &PipelineVars,
    outputs: &ForwardOutputs,
    mos: &[f64],
    config: &TrainConfig,
) -> (Var, Var, Var, Var) {
    let q_cal = g.affine(outputs.q_fused, vars.calib_a, vars.calib_b);
    let mos_term = g.mse_const(q_cal, mos);
    let zero = g.constant_scalar(0.0);
    let recon_term = if outputs.recon_losses.is_empty() {
        zero
    } else {
        g.mean_scalars(&outputs.recon_losses)
    };
    let decov_term = if outputs.decov_losses.is_empty() {
        zero
    } else {
        g.mean_scalars(&outputs.decov_losses)
    };
    let lambda_re = if config.enable_amqf { config.lambda_re } else { 0.0 };
    let total = g.lincomb(&[
        (1.0, mos_term),
        (lambda_re, recon_term),
        (config.lambda_decov, decov_term),
    ]);
    (total, mos_term, recon_term, decov_term)
}
