//! Configuration files, the evaluation report and the command entry
//! points behind the `amqf` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_image, load_manifest, synth_dataset, DatasetManifest, DistortionKind};
use crate::error::{AmqfError, Result};
use crate::metrics::{self, evaluate_predictions, BaselineKind, EvalResult};
use crate::training::{score_pair, train_model, Checkpoint, TrainConfig};

/// Environment variable consulted when no seed is configured anywhere.
pub const SEED_ENV: &str = "AMQF_SEED";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub paths: PathsConfig,
    pub report: ReportConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub mos_scale: (f64, f64),
    pub invert_mos: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            mos_scale: (0.0, 1.0),
            invert_mos: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub baselines: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { baselines: true }
    }
}

impl RunConfig {
    /// Load a TOML config with `key=value` overrides applied on top
    /// (precedence: overrides > file > defaults). Unknown keys are
    /// rejected; a missing `train.seed` falls back to `AMQF_SEED`.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AmqfError::io(path, e))?;
        let mut tree: toml::Value = toml::from_str(&text)
            .map_err(|e| AmqfError::config(format!("{}: {e}", path.display())))?;
        for item in overrides {
            apply_override(&mut tree, item)?;
        }
        if lookup(&tree, "train.seed").is_none() {
            if let Ok(seed) = std::env::var(SEED_ENV) {
                let seed: i64 = seed
                    .parse()
                    .map_err(|e| AmqfError::config(format!("bad {SEED_ENV}: {e}")))?;
                apply_override(&mut tree, &format!("train.seed={seed}"))?;
            }
        }
        let config: RunConfig = tree
            .try_into()
            .map_err(|e| AmqfError::config(format!("{}: {e}", path.display())))?;
        config.train.validate()?;
        Ok(config)
    }
}

fn lookup<'a>(tree: &'a toml::Value, path: &str) -> Option<&'a toml::Value> {
    let mut node = tree;
    for key in path.split('.') {
        node = node.as_table()?.get(key)?;
    }
    Some(node)
}

fn apply_override(tree: &mut toml::Value, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| AmqfError::config(format!("override '{item}' is not key=value")))?;
    // Parse the value as a TOML literal; bare words fall back to strings.
    let parsed: toml::Value = match toml::from_str::<toml::Value>(&format!("v = {raw}")) {
        Ok(t) => t.as_table().unwrap()["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    if keys.is_empty() {
        return Err(AmqfError::config(format!("override '{item}' has no key")));
    }
    let mut node = tree;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| AmqfError::config(format!("'{key}' is not a table")))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| AmqfError::config(format!("'{path}' is not assignable")))?;
    table.insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}

/// One row of the per-sample evaluation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRow {
    pub ref_path: String,
    pub dist_path: String,
    pub mos: f64,
    pub q: f64,
    pub q_calibrated: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub factor_l: f64,
    pub factor_c: f64,
    pub factor_s: f64,
}

/// One summary line per method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub plcc_raw: Option<f64>,
    pub plcc_calibrated: Option<f64>,
    pub srocc: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Correlations of the fused score against MOS.
    pub amqf: EvalResult,
    pub summaries: Vec<MethodSummary>,
    pub samples: Vec<SampleRow>,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

fn summary_of(method: &str, result: &EvalResult) -> MethodSummary {
    MethodSummary {
        method: method.to_string(),
        plcc_raw: result.plcc_raw,
        plcc_calibrated: result.plcc_calibrated,
        srocc: result.srocc,
        n: result.n,
    }
}

/// Score every manifest pair with the checkpoint, attach PSNR/SSIM
/// baselines, compute correlation summaries and write the report files
/// (`per_sample.csv`, `summary.csv`, `result.json`) under `out_dir`.
///
/// Unreadable samples are skipped with a warning; more than 10% skipped is
/// a hard error. Degenerate correlation inputs (e.g. a manifest where every
/// distorted image equals its reference) are recorded, not fatal.
pub fn run_eval_report(
    manifest: &DatasetManifest,
    ckpt: &Checkpoint,
    out_dir: &Path,
    baselines: bool,
) -> Result<EvalReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| AmqfError::io(out_dir, e))?;
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    let mut skipped = 0usize;

    for (idx, entry) in manifest.entries.iter().enumerate() {
        let loaded = manifest.load_pair(idx);
        let pair = match loaded {
            Ok(p) => p,
            Err(e) => {
                warnings.push(format!("sample {idx} skipped: {e}"));
                skipped += 1;
                continue;
            }
        };
        let score = score_pair(ckpt, &pair.reference.view(), &pair.distorted.view())?;
        if score.degenerate {
            warnings.push(format!("sample {idx}: degenerate pooled vector, score forced to 0"));
        }
        let psnr = metrics::baseline_metric(
            BaselineKind::Psnr,
            &pair.reference.view(),
            &pair.distorted.view(),
        )?;
        let ssim = metrics::baseline_metric(
            BaselineKind::Ssim,
            &pair.reference.view(),
            &pair.distorted.view(),
        )?;
        let factor = |name: &str| {
            score
                .per_factor
                .get(name)
                .or_else(|| score.per_factor.get("raw"))
                .copied()
                .unwrap_or(f64::NAN)
        };
        samples.push(SampleRow {
            ref_path: entry.ref_path.display().to_string(),
            dist_path: entry.dist_path.display().to_string(),
            mos: entry.mos,
            q: score.q,
            q_calibrated: score.q_calibrated,
            psnr,
            ssim,
            factor_l: factor("luminance"),
            factor_c: factor("contrast"),
            factor_s: factor("structure"),
        });
    }

    if skipped * 10 > manifest.len() {
        return Err(AmqfError::validation(format!(
            "{skipped} of {} samples unreadable (more than 10%)",
            manifest.len()
        )));
    }
    if samples.len() < 2 {
        return Err(AmqfError::validation(
            "fewer than two scored samples; nothing to correlate",
        ));
    }

    let mos: Vec<f64> = samples.iter().map(|s| s.mos).collect();
    let q: Vec<f64> = samples.iter().map(|s| s.q).collect();
    let amqf = evaluate_predictions(&q, &mos)?;
    if let Some(reason) = &amqf.degenerate {
        warnings.push(format!("correlation degenerate: {reason}"));
    }
    let mut summaries = vec![summary_of("amqf", &amqf)];
    if baselines {
        for (name, values) in [
            ("psnr", samples.iter().map(|s| s.psnr).collect::<Vec<_>>()),
            ("ssim", samples.iter().map(|s| s.ssim).collect::<Vec<_>>()),
        ] {
            let result = evaluate_predictions(&values, &mos)?;
            if let Some(reason) = &result.degenerate {
                warnings.push(format!("{name} correlation degenerate: {reason}"));
            }
            summaries.push(summary_of(name, &result));
        }
    }

    let report = EvalReport {
        amqf,
        summaries,
        samples,
        skipped,
        warnings,
    };
    write_per_sample_csv(&report, &out_dir.join("per_sample.csv"))?;
    write_summary_csv(&report, &out_dir.join("summary.csv"))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(out_dir.join("result.json"), json)
        .map_err(|e| AmqfError::io(out_dir.join("result.json"), e))?;
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "nan".into())
}

fn write_per_sample_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out =
        String::from("ref_path,dist_path,mos,q,q_calibrated,psnr,ssim,factor_l,factor_c,factor_s\n");
    for s in &report.samples {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.ref_path,
            s.dist_path,
            s.mos,
            s.q,
            s.q_calibrated,
            s.psnr,
            s.ssim,
            s.factor_l,
            s.factor_c,
            s.factor_s
        ));
    }
    std::fs::write(path, out).map_err(|e| AmqfError::io(path, e))
}

fn write_summary_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::from("method,plcc_raw,plcc_calibrated,srocc,n\n");
    for s in &report.summaries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.method,
            fmt_opt(s.plcc_raw),
            fmt_opt(s.plcc_calibrated),
            fmt_opt(s.srocc),
            s.n
        ));
    }
    std::fs::write(path, out).map_err(|e| AmqfError::io(path, e))
}

/// Write the scatter artifacts for an evaluation result: the raw
/// `(prediction, mos)` table next to `out_path` and the rendered PNG with
/// the fitted logistic curve overlaid.
pub fn emit_scatter(result: &EvalResult, out_path: &Path) -> Result<()> {
    if result.samples.len() < 2 {
        return Err(AmqfError::validation(
            "scatter needs at least two samples",
        ));
    }
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| AmqfError::io(parent, e))?;
        }
    }
    let table_path = out_path.with_extension("csv");
    let mut table = String::from("pred,mos\n");
    for (pred, mos) in &result.samples {
        table.push_str(&format!("{pred},{mos}\n"));
    }
    std::fs::write(&table_path, table).map_err(|e| AmqfError::io(&table_path, e))?;

    let img = crate::plot::render_scatter(&result.samples, result.logistic_params);
    img.save(out_path).map_err(|e| AmqfError::Image {
        path: out_path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

// ---- command entry points used by the binary ----

pub fn cmd_synth(
    out_dir: &Path,
    refs: usize,
    levels: u32,
    kinds: Option<&str>,
    size: usize,
    seed: u64,
) -> Result<()> {
    let kinds: Vec<DistortionKind> = match kinds {
        Some(list) => list
            .split(',')
            .map(|k| k.trim().parse())
            .collect::<Result<_>>()?,
        None => DistortionKind::ALL.to_vec(),
    };
    let manifest = synth_dataset(refs, &kinds, levels, size, out_dir, seed)?;
    println!(
        "wrote {} pairs ({} references x {} kinds x {} levels) under {}",
        manifest.len(),
        refs,
        kinds.len(),
        levels,
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_train(config_path: &Path, overrides: &[String]) -> Result<()> {
    let config = RunConfig::load(config_path, overrides)?;
    let manifest_path = config
        .paths
        .manifest
        .as_ref()
        .ok_or_else(|| AmqfError::config("paths.manifest is required for train"))?;
    let manifest_path = resolve_against(config_path, manifest_path);
    let manifest = load_manifest(&manifest_path, config.data.mos_scale, config.data.invert_mos)?;
    let ckpt_path = match (&config.paths.checkpoint, &config.paths.out_dir) {
        (Some(p), _) => resolve_against(config_path, p),
        (None, Some(dir)) => resolve_against(config_path, dir).join("model.ckpt"),
        (None, None) => {
            return Err(AmqfError::config(
                "set paths.checkpoint or paths.out_dir to store the checkpoint",
            ))
        }
    };
    let ckpt = train_model(&manifest, &config.train)?;
    for stats in &ckpt.history {
        println!(
            "epoch {:>3}  total {:.6}  mos {:.6}  recon {:.6}  decov {:.6}",
            stats.epoch, stats.total, stats.mos_term, stats.recon_term, stats.decov_term
        );
    }
    ckpt.save(&ckpt_path)?;
    println!("checkpoint written to {}", ckpt_path.display());
    Ok(())
}

fn resolve_against(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(p)
    }
}

pub fn cmd_score(ckpt_path: &Path, ref_path: &Path, dist_path: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let reference = load_image(ref_path)?;
    let distorted = load_image(dist_path)?;
    let score = score_pair(&ckpt, &reference.view(), &distorted.view())?;
    println!("q {}", score.q);
    println!("q_calibrated {}", score.q_calibrated);
    for (name, value) in &score.per_factor {
        println!("factor_{name} {value}");
    }
    if score.degenerate {
        eprintln!("warning: degenerate pooled vector encountered");
    }
    Ok(())
}

pub fn cmd_eval(
    ckpt_path: &Path,
    manifest_path: &Path,
    out_dir: &Path,
    baselines: bool,
    mos_scale: (f64, f64),
    invert_mos: bool,
) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let manifest = load_manifest(manifest_path, mos_scale, invert_mos)?;
    let report = run_eval_report(&manifest, &ckpt, out_dir, baselines)?;
    for s in &report.summaries {
        println!(
            "{:>6}  plcc_raw {}  plcc_calibrated {}  srocc {}  n {}",
            s.method,
            fmt_opt(s.plcc_raw),
            fmt_opt(s.plcc_calibrated),
            fmt_opt(s.srocc),
            s.n
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("report written under {}", out_dir.display());
    Ok(())
}

pub fn cmd_plot(result_path: &Path, out_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(result_path).map_err(|e| AmqfError::io(result_path, e))?;
    let report: EvalReport = serde_json::from_str(&text)
        .map_err(|e| AmqfError::validation(format!("{}: {e}", result_path.display())))?;
    emit_scatter(&report.amqf, out_path)?;
    println!(
        "scatter image {} and table {} written",
        out_path.display(),
        out_path.with_extension("csv").display()
    );
    Ok(())
}

/// Seed precedence for commands without a config file: explicit flag,
/// then `AMQF_SEED`, then zero.
pub fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var(SEED_ENV)
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(0)
}

/// Keys that matter for reading eval tables back; used by tests and the
/// plot example.
pub fn per_sample_columns() -> [&'static str; 10] {
    [
        "ref_path",
        "dist_path",
        "mos",
        "q",
        "q_calibrated",
        "psnr",
        "ssim",
        "factor_l",
        "factor_c",
        "factor_s",
    ]
}

/// Read back a per-sample table (used by tests and external tooling).
pub fn read_per_sample_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let file = std::fs::File::open(path).map_err(|e| AmqfError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| AmqfError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| AmqfError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        rows.push(
            headers
                .iter()
                .zip(record.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect(),
        );
    }
    Ok(rows)
}
