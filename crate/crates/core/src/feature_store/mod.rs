//! On-disk snippet feature datasets.
//!
//! A dataset directory holds `manifest.json` and `features.f32`. Records are
//! stored back to back in manifest order; each record is the K×D_a audio block
//! followed by the K×D_v visual block, row-major, little-endian `f32`.
//!
//! Features are carried in memory as `f64` but every value that passes through
//! this module is representable in `f32`, so write/read is bit-exact.

mod ingest;
mod synthetic;

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HadError, Result};
use crate::tensor::Mat;

pub use ingest::{ingest_precomputed, IngestShapes, IngestSummary, SkippedVideo};
pub use synthetic::{generate_synthetic, SyntheticSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.f32";
pub const FORMAT_VERSION: u32 = 1;

/// Low-level features of one video: K audio snippet vectors and K visual snippet vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalFeatures {
    audio: Mat,
    visual: Mat,
}

impl ModalFeatures {
    pub fn new(audio: Mat, visual: Mat) -> Result<Self> {
        if audio.rows() == 0 || audio.rows() != visual.rows() {
            return Err(HadError::Contract(format!(
                "audio has {} snippets and visual has {}; both must be equal and >= 1",
                audio.rows(),
                visual.rows()
            )));
        }
        if !audio.all_finite() || !visual.all_finite() {
            return Err(HadError::Contract("features contain NaN or infinite values".into()));
        }
        Ok(Self { audio, visual })
    }

    pub fn snippets(&self) -> usize {
        self.audio.rows()
    }

    pub fn audio(&self) -> &Mat {
        &self.audio
    }

    pub fn visual(&self) -> &Mat {
        &self.visual
    }

    pub fn audio_dim(&self) -> usize {
        self.audio.cols()
    }

    pub fn visual_dim(&self) -> usize {
        self.visual.cols()
    }

    /// Flattened record layout: audio then visual, snippet-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.audio.len() + self.visual.len());
        v.extend_from_slice(self.audio.as_slice());
        v.extend_from_slice(self.visual.as_slice());
        v
    }

    pub fn from_flat(k: usize, audio_dim: usize, visual_dim: usize, flat: &[f64]) -> Result<Self> {
        let na = k * audio_dim;
        if flat.len() != na + k * visual_dim {
            return Err(HadError::Contract(format!(
                "flat record has {} values, expected {}",
                flat.len(),
                na + k * visual_dim
            )));
        }
        Self::new(Mat::from_vec(k, audio_dim, flat[..na].to_vec()), Mat::from_vec(k, visual_dim, flat[na..].to_vec()))
    }

    pub(crate) fn from_parts_unchecked(audio: Mat, visual: Mat) -> Self {
        Self { audio, visual }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub features: ModalFeatures,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub record_index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub name: String,
    pub num_classes: usize,
    pub snippets_per_video: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    /// Number of `f32` values per record.
    pub fn record_len(&self) -> usize {
        self.snippets_per_video * (self.audio_dim + self.visual_dim)
    }

    pub fn record_bytes(&self) -> u64 {
        self.record_len() as u64 * 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.snippets_per_video == 0 || self.audio_dim == 0 || self.visual_dim == 0 {
            return Err(HadError::InvalidManifest("snippets_per_video, audio_dim and visual_dim must be >= 1".into()));
        }
        if self.num_classes == 0 {
            return Err(HadError::InvalidManifest("num_classes must be >= 1".into()));
        }
        let mut seen = vec![false; self.records.len()];
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if r.record_index >= seen.len() || std::mem::replace(&mut seen[r.record_index], true) {
                return Err(HadError::InvalidManifest(format!(
                    "record_index {} of `{}` is duplicated or out of range 0..{}",
                    r.record_index,
                    r.id,
                    seen.len()
                )));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(HadError::InvalidManifest(format!("duplicate record id `{}`", r.id)));
            }
            if r.label >= self.num_classes {
                return Err(HadError::InvalidManifest(format!(
                    "record `{}` has label {} but num_classes is {}",
                    r.id, r.label, self.num_classes
                )));
            }
        }
        let train: BTreeSet<usize> =
            self.records.iter().filter(|r| r.split == Split::Train).map(|r| r.label).collect();
        if let Some(missing) = (0..self.num_classes).find(|c| !train.contains(c)) {
            return Err(HadError::InvalidManifest(format!("class {missing} has no train samples")));
        }
        Ok(())
    }

    /// Builds a manifest whose records follow `samples` order.
    pub fn for_samples(name: &str, num_classes: usize, samples: &[LabeledSample]) -> Result<Self> {
        let first = samples.first().ok_or(HadError::EmptyDataset)?;
        Ok(Self {
            version: FORMAT_VERSION,
            name: name.to_string(),
            num_classes,
            snippets_per_video: first.features.snippets(),
            audio_dim: first.features.audio_dim(),
            visual_dim: first.features.visual_dim(),
            records: samples
                .iter()
                .enumerate()
                .map(|(i, s)| ManifestRecord { id: s.id.clone(), label: s.label, split: s.split, record_index: i })
                .collect(),
        })
    }
}

pub fn write_dataset(manifest: &DatasetManifest, samples: &[LabeledSample], dir: &Path) -> Result<()> {
    if samples.is_empty() {
        return Err(HadError::EmptyDataset);
    }
    if samples.len() != manifest.records.len() {
        return Err(HadError::InvalidManifest(format!(
            "manifest lists {} records but {} samples were given",
            manifest.records.len(),
            samples.len()
        )));
    }
    manifest.validate()?;
    let mut order: Vec<Option<&LabeledSample>> = vec![None; samples.len()];
    for (rec, sample) in manifest.records.iter().zip(samples) {
        if rec.id != sample.id || rec.label != sample.label || rec.split != sample.split {
            return Err(HadError::DimensionMismatch {
                id: sample.id.clone(),
                detail: format!("sample does not match manifest record `{}`", rec.id),
            });
        }
        let f = &sample.features;
        if f.snippets() != manifest.snippets_per_video
            || f.audio_dim() != manifest.audio_dim
            || f.visual_dim() != manifest.visual_dim
        {
            return Err(HadError::DimensionMismatch {
                id: sample.id.clone(),
                detail: format!(
                    "got K={} D_a={} D_v={}, manifest has K={} D_a={} D_v={}",
                    f.snippets(),
                    f.audio_dim(),
                    f.visual_dim(),
                    manifest.snippets_per_video,
                    manifest.audio_dim,
                    manifest.visual_dim
                ),
            });
        }
        order[rec.record_index] = Some(sample);
    }

    fs::create_dir_all(dir).map_err(|e| HadError::io(dir, e))?;
    let features_path = dir.join(FEATURES_FILE);
    let file = File::create(&features_path).map_err(|e| HadError::io(&features_path, e))?;
    let mut w = BufWriter::new(file);
    for sample in order.into_iter().flatten() {
        for v in sample.features.flatten() {
            w.write_all(&(v as f32).to_le_bytes()).map_err(|e| HadError::io(&features_path, e))?;
        }
    }
    w.flush().map_err(|e| HadError::io(&features_path, e))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest).map_err(|e| HadError::json("manifest", e))?;
    fs::write(&manifest_path, json).map_err(|e| HadError::io(&manifest_path, e))?;
    Ok(())
}

/// Read handle over a dataset directory. Record reads use positioned I/O and
/// take `&self`, so one reader can serve several threads.
#[derive(Debug)]
pub struct DatasetReader {
    manifest: DatasetManifest,
    path: PathBuf,
    file: File,
}

pub fn read_dataset(dir: &Path) -> Result<DatasetReader> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| HadError::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| HadError::json("manifest.json", e))?;
    manifest.validate()?;
    let path = dir.join(FEATURES_FILE);
    let file = File::open(&path).map_err(|e| HadError::io(&path, e))?;
    let actual = file.metadata().map_err(|e| HadError::io(&path, e))?.len();
    let expected = manifest.record_bytes() * manifest.records.len() as u64;
    if actual != expected {
        return Err(HadError::CorruptDataset { expected, actual });
    }
    Ok(DatasetReader { manifest, path, file })
}

impl DatasetReader {
    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    pub fn features(&self, record_index: usize) -> Result<ModalFeatures> {
        let m = &self.manifest;
        if record_index >= m.records.len() {
            return Err(HadError::Contract(format!("record_index {record_index} out of range")));
        }
        let mut buf = vec![0u8; m.record_bytes() as usize];
        self.file
            .read_exact_at(&mut buf, record_index as u64 * m.record_bytes())
            .map_err(|e| HadError::io(&self.path, e))?;
        let flat: Vec<f64> =
            buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        ModalFeatures::from_flat(m.snippets_per_video, m.audio_dim, m.visual_dim, &flat)
    }

    /// Sample for the manifest record at position `i` (manifest order).
    pub fn sample(&self, i: usize) -> Result<LabeledSample> {
        let rec = &self.manifest.records[i];
        Ok(LabeledSample {
            id: rec.id.clone(),
            features: self.features(rec.record_index)?,
            label: rec.label,
            split: rec.split,
        })
    }

    pub fn load_all(&self) -> Result<Vec<LabeledSample>> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }
}

/// SHA-256 of the features file, hex encoded.
pub fn features_checksum(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let path = dir.join(FEATURES_FILE);
    let bytes = fs::read(&path).map_err(|e| HadError::io(&path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
