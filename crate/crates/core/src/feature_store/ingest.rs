//! Adapter for features produced by external frozen extractors.
//!
//! Each modality directory holds one `<video id>.npy` per video (2-D, `f32`
//! or `f64`). Frame-level 2-D visual features are mean-pooled per snippet and
//! concatenated with the snippet-level 3-D visual features.

use std::path::Path;

use ndarray::Array2;
use ndarray_npy::{read_npy, ReadNpyError};
use serde::Deserialize;

use super::{write_dataset, DatasetManifest, LabeledSample, ModalFeatures, Split};
use crate::error::{HadError, Result};
use crate::tensor::Mat;

/// Expected per-video array shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IngestShapes {
    pub snippets: usize,
    pub audio_dim: usize,
    pub frames_per_snippet: usize,
    pub visual2d_dim: usize,
    pub visual3d_dim: usize,
}

impl Default for IngestShapes {
    /// 10 snippets: audio 10×128, frames 80×2048, clips 10×512.
    fn default() -> Self {
        Self { snippets: 10, audio_dim: 128, frames_per_snippet: 8, visual2d_dim: 2048, visual3d_dim: 512 }
    }
}

impl IngestShapes {
    pub fn visual_dim(&self) -> usize {
        self.visual2d_dim + self.visual3d_dim
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedVideo {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct IngestSummary {
    pub manifest: DatasetManifest,
    pub skipped: Vec<SkippedVideo>,
}

#[derive(Deserialize)]
struct LabelRow {
    id: String,
    label: usize,
    split: Split,
}

fn load_array(path: &Path) -> std::result::Result<Array2<f64>, String> {
    match read_npy::<_, Array2<f32>>(path) {
        Ok(a) => Ok(a.mapv(f64::from)),
        Err(ReadNpyError::WrongDescriptor(_)) => read_npy::<_, Array2<f64>>(path)
            .map(|a| a.mapv(|x| x as f32 as f64))
            .map_err(|e| format!("{}: {e}", path.display())),
        Err(e) => Err(format!("{}: {e}", path.display())),
    }
}

fn check_shape(what: &str, a: &Array2<f64>, rows: usize, cols: usize) -> std::result::Result<(), String> {
    if a.dim() != (rows, cols) {
        return Err(format!("{what} shape {:?}, expected ({rows}, {cols})", a.dim()));
    }
    Ok(())
}

fn to_mat(a: &Array2<f64>) -> Mat {
    Mat::from_vec(a.nrows(), a.ncols(), a.iter().copied().collect())
}

/// Mean-pools consecutive groups of `frames_per_snippet` rows.
fn pool_frames(frames: &Array2<f64>, snippets: usize, frames_per_snippet: usize) -> Mat {
    let d = frames.ncols();
    let mut out = Mat::zeros(snippets, d);
    for s in 0..snippets {
        let row = out.row_mut(s);
        for f in 0..frames_per_snippet {
            for (o, &x) in row.iter_mut().zip(frames.row(s * frames_per_snippet + f)) {
                *o += x;
            }
        }
        row.iter_mut().for_each(|o| *o = (*o / frames_per_snippet as f64) as f32 as f64);
    }
    out
}

fn load_video(
    id: &str,
    audio_dir: &Path,
    visual2d_dir: &Path,
    visual3d_dir: &Path,
    shapes: &IngestShapes,
) -> std::result::Result<ModalFeatures, String> {
    let file = format!("{id}.npy");
    let audio = load_array(&audio_dir.join(&file))?;
    let frames = load_array(&visual2d_dir.join(&file))?;
    let clips = load_array(&visual3d_dir.join(&file))?;
    let k = shapes.snippets;
    check_shape("audio", &audio, k, shapes.audio_dim)?;
    check_shape("2d visual", &frames, k * shapes.frames_per_snippet, shapes.visual2d_dim)?;
    check_shape("3d visual", &clips, k, shapes.visual3d_dim)?;

    let pooled = pool_frames(&frames, k, shapes.frames_per_snippet);
    let mut visual = Mat::zeros(k, shapes.visual_dim());
    for s in 0..k {
        let row = visual.row_mut(s);
        row[..shapes.visual2d_dim].copy_from_slice(pooled.row(s));
        row[shapes.visual2d_dim..].iter_mut().zip(clips.row(s)).for_each(|(o, &x)| *o = x);
    }
    ModalFeatures::new(to_mat(&audio), visual).map_err(|e| e.to_string())
}

/// Reads per-video arrays listed in `labels_file` (CSV with header
/// `id,label,split`) and writes a dataset to `out_dir`. Videos with missing
/// or misshapen arrays are skipped and reported.
pub fn ingest_precomputed(
    audio_dir: &Path,
    visual2d_dir: &Path,
    visual3d_dir: &Path,
    labels_file: &Path,
    out_dir: &Path,
    shapes: &IngestShapes,
) -> Result<IngestSummary> {
    let mut reader = csv::Reader::from_path(labels_file)
        .map_err(|e| HadError::InvalidManifest(format!("{}: {e}", labels_file.display())))?;
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for row in reader.deserialize::<LabelRow>() {
        let row = row.map_err(|e| HadError::InvalidManifest(format!("{}: {e}", labels_file.display())))?;
        match load_video(&row.id, audio_dir, visual2d_dir, visual3d_dir, shapes) {
            Ok(features) => samples.push(LabeledSample { id: row.id, features, label: row.label, split: row.split }),
            Err(reason) => skipped.push(SkippedVideo { id: row.id, reason }),
        }
    }
    let num_classes = samples.iter().map(|s| s.label + 1).max().ok_or(HadError::EmptyDataset)?;
    let name = out_dir.file_name().map_or_else(|| "ingested".to_string(), |n| n.to_string_lossy().into_owned());
    let manifest = DatasetManifest::for_samples(&name, num_classes, &samples)?;
    write_dataset(&manifest, &samples, out_dir)?;
    Ok(IngestSummary { manifest, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray_npy::write_npy;
    use std::fs;

    fn small() -> IngestShapes {
        IngestShapes { snippets: 2, audio_dim: 3, frames_per_snippet: 4, visual2d_dim: 5, visual3d_dim: 2 }
    }

    fn write_video(root: &Path, id: &str, frames: usize, shapes: &IngestShapes, v: f32) {
        write_npy(root.join("a").join(format!("{id}.npy")), &Array2::<f32>::from_elem((shapes.snippets, shapes.audio_dim), 1.0))
            .unwrap();
        write_npy(root.join("v2").join(format!("{id}.npy")), &Array2::<f32>::from_elem((frames, shapes.visual2d_dim), v))
            .unwrap();
        write_npy(
            root.join("v3").join(format!("{id}.npy")),
            &Array2::<f32>::from_elem((shapes.snippets, shapes.visual3d_dim), -2.0),
        )
        .unwrap();
    }

    fn layout(root: &Path) {
        for d in ["a", "v2", "v3"] {
            fs::create_dir_all(root.join(d)).unwrap();
        }
    }

    #[test]
    fn constant_frames_pool_to_constant_and_concat() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        layout(root);
        let shapes = small();
        write_video(root, "v0", 8, &shapes, 0.75);
        write_video(root, "v1", 8, &shapes, 1.5);
        write_video(root, "short", 7, &shapes, 1.0);
        fs::write(root.join("labels.csv"), "id,label,split\nv0,0,train\nshort,1,train\nv1,1,train\n").unwrap();
        let out = root.join("out");
        let summary = ingest_precomputed(&root.join("a"), &root.join("v2"), &root.join("v3"), &root.join("labels.csv"), &out, &shapes)
            .unwrap();
        assert_eq!(summary.manifest.visual_dim, 7);
        assert_eq!(summary.skipped.len(), 1);
        assert_eq!(summary.skipped[0].id, "short");
        assert!(summary.skipped[0].reason.contains("2d visual shape"));
        let ds = super::super::read_dataset(&out).unwrap();
        let s = ds.sample(0).unwrap();
        for r in 0..2 {
            assert!(s.features.visual().row(r)[..5].iter().all(|&x| x == 0.75));
            assert!(s.features.visual().row(r)[5..].iter().all(|&x| x == -2.0));
        }
    }

    #[test]
    fn default_shapes_give_2560_visual_dims() {
        assert_eq!(IngestShapes::default().visual_dim(), 2560);
    }

    #[test]
    fn one_missing_frame_at_full_size_is_skipped() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        layout(root);
        let shapes = IngestShapes::default();
        write_video(root, "ok", 80, &shapes, 0.5);
        write_video(root, "bad", 79, &shapes, 0.5);
        fs::write(root.join("labels.csv"), "id,label,split\nok,0,train\nbad,0,train\n").unwrap();
        let summary = ingest_precomputed(
            &root.join("a"),
            &root.join("v2"),
            &root.join("v3"),
            &root.join("labels.csv"),
            &root.join("out"),
            &shapes,
        )
        .unwrap();
        assert_eq!(summary.manifest.visual_dim, 2560);
        assert_eq!(summary.skipped, vec![SkippedVideo { id: "bad".into(), reason: "2d visual shape (79, 2048), expected (80, 2048)".into() }]);
    }
}
