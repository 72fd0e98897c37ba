//! Dataset manifests, image pairs and the synthetic data generator.

pub mod crop;
pub mod distortion;
pub mod image_io;
pub mod synth;

use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::error::{AmqfError, Result};

pub use crop::{center_crop, paired_random_crop};
pub use distortion::{apply_distortion, DistortionKind, DistortionParams, DistortionSpec};
pub use image_io::{load_image, save_image, validate_unit_range};
pub use synth::synth_dataset;

/// A reference/distorted image pair with its normalized opinion score.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub reference: Array3<f64>,
    pub distorted: Array3<f64>,
    /// Normalized to `[0, 1]`, higher is better.
    pub mos: f64,
    pub kind: Option<String>,
    pub level: Option<u32>,
}

impl ImagePair {
    /// Validate the pair invariants: equal shapes, unit-range pixels,
    /// `mos` in `[0, 1]`.
    pub fn validated(self) -> Result<Self> {
        if self.reference.dim() != self.distorted.dim() {
            return Err(AmqfError::validation(format!(
                "pair shape mismatch: {:?} vs {:?}",
                self.reference.dim(),
                self.distorted.dim()
            )));
        }
        if !(0.0..=1.0).contains(&self.mos) {
            return Err(AmqfError::validation(format!(
                "mos {} outside [0, 1]",
                self.mos
            )));
        }
        validate_unit_range(&self.reference.view())?;
        validate_unit_range(&self.distorted.view())?;
        Ok(self)
    }
}

/// One manifest row; paths are resolved to absolute form at load time.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub ref_path: PathBuf,
    pub dist_path: PathBuf,
    /// Normalized to `[0, 1]`, higher is better.
    pub mos: f64,
    pub kind: Option<String>,
    pub level: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Raw scale of the source MOS column before normalization.
    pub mos_scale: (f64, f64),
    pub source_tag: String,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Read the images of entry `idx` into a validated [`ImagePair`].
    pub fn load_pair(&self, idx: usize) -> Result<ImagePair> {
        let entry = &self.entries[idx];
        let pair = ImagePair {
            reference: load_image(&entry.ref_path)?,
            distorted: load_image(&entry.dist_path)?,
            mos: entry.mos,
            kind: entry.kind.clone(),
            level: entry.level,
        };
        pair.validated()
    }
}

/// Load a manifest file.
///
/// The file is comma-separated with a header `ref_path,dist_path,mos` and
/// optional `kind,level` columns; relative paths resolve against the
/// manifest's directory. Raw MOS values must lie within `mos_scale` and are
/// rescaled linearly to `[0, 1]`; `invert_mos` flips DMOS-style scales where
/// lower means better.
pub fn load_manifest(
    path: &Path,
    mos_scale: (f64, f64),
    invert_mos: bool,
) -> Result<DatasetManifest> {
    let (lo, hi) = mos_scale;
    if !(hi > lo) {
        return Err(AmqfError::validation(format!(
            "mos scale ({lo}, {hi}) is not increasing"
        )));
    }
    let file = std::fs::File::open(path).map_err(|e| AmqfError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| AmqfError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (ref_col, dist_col, mos_col) = match (col("ref_path"), col("dist_path"), col("mos")) {
        (Some(r), Some(d), Some(m)) => (r, d, m),
        _ => {
            return Err(AmqfError::Parse {
                line: 1,
                message: "header must contain ref_path,dist_path,mos".into(),
            })
        }
    };
    let kind_col = col("kind");
    let level_col = col("level");

    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| AmqfError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or_else(|| AmqfError::Parse {
                line,
                message: format!("missing column {idx}"),
            })
        };
        let raw_mos: f64 = field(mos_col)?.parse().map_err(|e| AmqfError::Parse {
            line,
            message: format!("bad mos value: {e}"),
        })?;
        if !(lo..=hi).contains(&raw_mos) {
            return Err(AmqfError::validation(format!(
                "line {line}: mos {raw_mos} outside declared scale ({lo}, {hi})"
            )));
        }
        let mut mos = (raw_mos - lo) / (hi - lo);
        if invert_mos {
            mos = 1.0 - mos;
        }
        let resolve = |p: &str| -> PathBuf {
            let pb = PathBuf::from(p);
            if pb.is_absolute() {
                pb
            } else {
                base.join(pb)
            }
        };
        let kind = kind_col
            .and_then(|c| record.get(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        let level = match level_col.and_then(|c| record.get(c)).filter(|s| !s.is_empty()) {
            Some(s) => Some(s.parse::<u32>().map_err(|e| AmqfError::Parse {
                line,
                message: format!("bad level value: {e}"),
            })?),
            None => None,
        };
        entries.push(ManifestEntry {
            ref_path: resolve(field(ref_col)?),
            dist_path: resolve(field(dist_col)?),
            mos,
            kind,
            level,
        });
    }
    if entries.is_empty() {
        return Err(AmqfError::validation("empty manifest"));
    }
    Ok(DatasetManifest {
        entries,
        mos_scale,
        source_tag: path.display().to_string(),
    })
}

/// Write a manifest with paths relative to its own directory and MOS on the
/// `(0, 1)` scale.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| AmqfError::io(parent, e))?;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = String::from("ref_path,dist_path,mos,kind,level\n");
    for e in &manifest.entries {
        let rel = |p: &Path| {
            p.strip_prefix(base)
                .map(|s| s.to_path_buf())
                .unwrap_or_else(|_| p.to_path_buf())
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            rel(&e.ref_path).display(),
            rel(&e.dist_path).display(),
            e.mos,
            e.kind.as_deref().unwrap_or(""),
            e.level.map(|l| l.to_string()).unwrap_or_default(),
        ));
    }
    let mut file = std::fs::File::create(path).map_err(|e| AmqfError::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| AmqfError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_and_rescales_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "m.csv",
            "ref_path,dist_path,mos\nr0.png,d0.png,1\nr1.png,d1.png,3\nr2.png,d2.png,5\n",
        );
        let m = load_manifest(&path, (1.0, 5.0), false).unwrap();
        assert_eq!(m.len(), 3);
        let mos: Vec<f64> = m.entries.iter().map(|e| e.mos).collect();
        assert_eq!(mos, vec![0.0, 0.5, 1.0]);
        assert!(m.entries[0].ref_path.starts_with(dir.path()));
    }

    #[test]
    fn dmos_inversion_flips_the_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "m.csv",
            "ref_path,dist_path,mos\nr.png,d.png,0.25\n",
        );
        let m = load_manifest(&path, (0.0, 1.0), true).unwrap();
        assert!((m.entries[0].mos - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "m.csv", "ref_path,dist_path,mos\n");
        let err = load_manifest(&path, (0.0, 1.0), false).unwrap_err();
        assert!(err.to_string().contains("empty manifest"));
    }

    #[test]
    fn out_of_scale_mos_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "m.csv",
            "ref_path,dist_path,mos\nr0.png,d0.png,3\nr1.png,d1.png,9\n",
        );
        let err = load_manifest(&path, (1.0, 5.0), false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "message was: {msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn malformed_row_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "m.csv",
            "ref_path,dist_path,mos\nr0.png,d0.png,not_a_number\n",
        );
        let err = load_manifest(&path, (0.0, 1.0), false).unwrap_err();
        match err {
            AmqfError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_manifest(Path::new("/no/such/manifest.csv"), (0.0, 1.0), false)
            .unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn manifest_roundtrip_preserves_entries() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            entries: vec![ManifestEntry {
                ref_path: dir.path().join("a.png"),
                dist_path: dir.path().join("b.png"),
                mos: 2.0 / 3.0,
                kind: Some("gaussian_blur".into()),
                level: Some(2),
            }],
            mos_scale: (0.0, 1.0),
            source_tag: "test".into(),
        };
        let path = dir.path().join("m.csv");
        write_manifest(&manifest, &path).unwrap();
        let back = load_manifest(&path, (0.0, 1.0), false).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.entries[0].mos, 2.0 / 3.0);
        assert_eq!(back.entries[0].kind.as_deref(), Some("gaussian_blur"));
        assert_eq!(back.entries[0].level, Some(2));
    }
}
