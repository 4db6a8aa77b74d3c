//! On-disk datasets: a JSON manifest plus raw volume files.
//!
//! Intensities are stored as little-endian `f32`, labels as one `u8` (0 or 1)
//! per voxel, both in `(d, h, w)` raster order with shapes kept in the manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use pdc_core::data::{generate_volume, split_labeled, SyntheticConfig, VolumeSample};
use pdc_core::{Dims3, Grid};
use serde::{Deserialize, Serialize};

use crate::error::{Failure, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    /// Paths are relative to the manifest's directory.
    pub intensity: String,
    pub label: Option<String>,
    pub shape: Dims3,
    pub spacing: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train_labeled: Vec<String>,
    pub train_unlabeled: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    /// Every training id, labeled or not, sorted.
    pub fn train_pool(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.train_labeled.iter().chain(&self.train_unlabeled).cloned().collect();
        ids.sort();
        ids
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub samples: Vec<SampleEntry>,
    pub splits: Splits,
}

impl Manifest {
    pub fn sample(&self, id: &str) -> Option<&SampleEntry> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Failure::Data(format!("unsupported manifest version {}", self.version)));
        }
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Failure::Data(format!("duplicate sample id {}", s.id)));
            }
            if s.shape.contains(&0) || s.spacing.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Failure::Data(format!("{}: invalid shape or spacing", s.id)));
            }
        }
        let mut seen = BTreeSet::new();
        let sp = &self.splits;
        for (name, list, needs_label) in
            [("train_labeled", &sp.train_labeled, true), ("train_unlabeled", &sp.train_unlabeled, false), ("test", &sp.test, true)]
        {
            for id in list {
                let s = self.sample(id).ok_or_else(|| Failure::Data(format!("split {name}: unknown id {id}")))?;
                if !seen.insert(id.as_str()) {
                    return Err(Failure::Data(format!("id {id} appears in more than one split")));
                }
                if needs_label && s.label.is_none() {
                    return Err(Failure::Data(format!("split {name}: {id} has no label")));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::read(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Failure::read(path, e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(path, text).map_err(|e| Failure::write(path, e))
    }
}

/// A validated manifest together with the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct DatasetDir {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl DatasetDir {
    /// Accepts either the manifest file or the directory that contains it.
    pub fn open(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let manifest = Manifest::load(&file)?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, manifest })
    }

    /// Reads one volume; `with_label` false drops the label without reading it.
    pub fn read(&self, id: &str, with_label: bool) -> Result<VolumeSample> {
        let e = self.manifest.sample(id).ok_or_else(|| Failure::Data(format!("unknown sample {id}")))?;
        let n: usize = e.shape.iter().product();
        let ipath = self.root.join(&e.intensity);
        let raw = std::fs::read(&ipath).map_err(|err| Failure::read(&ipath, err))?;
        if raw.len() != 4 * n {
            return Err(Failure::Data(format!("{}: expected {} bytes, found {}", ipath.display(), 4 * n, raw.len())));
        }
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let intensity = Grid::from_vec(e.shape, data)?;
        let label = match (&e.label, with_label) {
            (Some(rel), true) => {
                let lpath = self.root.join(rel);
                let raw = std::fs::read(&lpath).map_err(|err| Failure::read(&lpath, err))?;
                if raw.len() != n || raw.iter().any(|&v| v > 1) {
                    return Err(Failure::Data(format!("{}: expected {n} bytes of 0/1", lpath.display())));
                }
                Some(Grid::from_vec(e.shape, raw)?)
            }
            (None, true) => return Err(Failure::Data(format!("{id} has no label"))),
            _ => None,
        };
        Ok(VolumeSample::new(id, intensity, label, e.spacing)?)
    }

    pub fn read_all(&self, ids: &[String], with_label: bool) -> Result<Vec<VolumeSample>> {
        ids.iter().map(|id| self.read(id, with_label)).collect()
    }

    /// Labeled/unlabeled ids: the manifest's own split, or a fresh split of
    /// the training pool at `fraction` when one is given.
    pub fn training_split(&self, fraction: Option<f64>, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
        match fraction {
            None => Ok((self.manifest.splits.train_labeled.clone(), self.manifest.splits.train_unlabeled.clone())),
            Some(f) => Ok(split_labeled(&self.manifest.splits.train_pool(), f, seed)?),
        }
    }
}

/// Settings of `generate-data`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub n: usize,
    pub seed: u64,
    pub synthetic: SyntheticConfig,
    /// Share of volumes assigned to training; the rest form the test split.
    pub train_fraction: f64,
    /// Labeled share of the training volumes in the written manifest.
    pub labeled_fraction: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { n: 60, seed: 0, synthetic: SyntheticConfig::default(), train_fraction: 0.8, labeled_fraction: 0.2 }
    }
}

/// Writes `n` synthetic volumes and their manifest under `out`.
pub fn generate_dataset(cfg: &GenerateConfig, out: &Path) -> Result<Manifest> {
    cfg.synthetic.validate()?;
    let n_train = (cfg.train_fraction * cfg.n as f64).round() as usize;
    if cfg.n < 2 || n_train == 0 || n_train >= cfg.n {
        return Err(Failure::Config(format!(
            "{} volumes with train_fraction {} leave an empty train or test split",
            cfg.n, cfg.train_fraction
        )));
    }
    for dir in ["volumes", "labels"] {
        let d = out.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Failure::write(&d, e))?;
    }
    let mut samples = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let v = generate_volume(&cfg.synthetic, cfg.seed, i as u64)?;
        let ipath = format!("volumes/{}.f32", v.id);
        let lpath = format!("labels/{}.u8", v.id);
        let bytes: Vec<u8> = v.intensity.data.iter().flat_map(|x| x.to_le_bytes()).collect();
        let p = out.join(&ipath);
        std::fs::write(&p, bytes).map_err(|e| Failure::write(&p, e))?;
        let p = out.join(&lpath);
        std::fs::write(&p, &v.label.as_ref().expect("generated volumes are labeled").data).map_err(|e| Failure::write(&p, e))?;
        samples.push(SampleEntry { id: v.id, intensity: ipath, label: Some(lpath), shape: v.intensity.dims, spacing: v.spacing });
    }
    let train: Vec<String> = samples[..n_train].iter().map(|s| s.id.clone()).collect();
    let test: Vec<String> = samples[n_train..].iter().map(|s| s.id.clone()).collect();
    let (train_labeled, train_unlabeled) = split_labeled(&train, cfg.labeled_fraction, cfg.seed)?;
    let manifest = Manifest { version: MANIFEST_VERSION, samples, splits: Splits { train_labeled, train_unlabeled, test } };
    manifest.validate()?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}
