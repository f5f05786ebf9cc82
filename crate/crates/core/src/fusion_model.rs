//! Audio-visual fusion module and classifier head.
//!
//! One hybrid-attention block per modality: input projection to `d_model`,
//! optional learned per-snippet position embedding, pre-norm self-attention
//! over the modality's own snippets, then pre-norm cross-attention whose keys
//! and values are the other modality's self-attended snippets. Both attention
//! sub-layers are residual, so with zero output projections the block is the
//! identity on the projected input.
//!
//! Parameters are split into the fusion partition (everything above) and the
//! classifier partition (class weight rows plus the cosine scale or linear
//! bias).

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{NodeId, Tape};
use crate::error::{HadError, Result};
use crate::feature_store::ModalFeatures;
use crate::tensor::Mat;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const COSINE_EPS: f64 = 1e-8;
pub const COSINE_INIT_SCALE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `σ · cos(H, w_j)` with learnable σ > 0.
    Cosine,
    /// `H · w_j + b_j`
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub snippets: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub positional: bool,
    pub head: HeadKind,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.d_model, self.num_heads, self.snippets, self.audio_dim, self.visual_dim];
        if dims.contains(&0) {
            return Err(HadError::InvalidConfig("fusion dimensions must all be >= 1".into()));
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(HadError::InvalidConfig(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }
}

/// Indices of one attention sub-layer's parameters inside the fusion partition.
#[derive(Clone, Copy, Debug, PartialEq)]
struct AttnIdx {
    ln_q_g: usize,
    ln_q_b: usize,
    /// Separate key/value norm; `None` for self-attention.
    ln_kv: Option<(usize, usize)>,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ModalIdx {
    proj_w: usize,
    proj_b: usize,
    pos: Option<usize>,
    self_attn: AttnIdx,
    cross_attn: AttnIdx,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    audio: ModalIdx,
    visual: ModalIdx,
}

impl Layout {
    fn new(cfg: &FusionConfig) -> Self {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut push = |name: String, shape: (usize, usize)| {
            names.push(name);
            shapes.push(shape);
            names.len() - 1
        };
        let d = cfg.d_model;
        let mut modal = |tag: &str, input_dim: usize| {
            let proj_w = push(format!("{tag}.proj.w"), (input_dim, d));
            let proj_b = push(format!("{tag}.proj.b"), (1, d));
            let pos = cfg.positional.then(|| push(format!("{tag}.pos"), (cfg.snippets, d)));
            let mut attn = |kind: &str, cross: bool| {
                let ln_q_g = push(format!("{tag}.{kind}.ln_q.g"), (1, d));
                let ln_q_b = push(format!("{tag}.{kind}.ln_q.b"), (1, d));
                let ln_kv = cross.then(|| {
                    (push(format!("{tag}.{kind}.ln_kv.g"), (1, d)), push(format!("{tag}.{kind}.ln_kv.b"), (1, d)))
                });
                AttnIdx {
                    ln_q_g,
                    ln_q_b,
                    ln_kv,
                    wq: push(format!("{tag}.{kind}.wq"), (d, d)),
                    wk: push(format!("{tag}.{kind}.wk"), (d, d)),
                    wv: push(format!("{tag}.{kind}.wv"), (d, d)),
                    wo: push(format!("{tag}.{kind}.wo"), (d, d)),
                    bo: push(format!("{tag}.{kind}.bo"), (1, d)),
                }
            };
            let self_attn = attn("self", false);
            let cross_attn = attn("cross", true);
            ModalIdx { proj_w, proj_b, pos, self_attn, cross_attn }
        };
        let audio = modal("audio", cfg.audio_dim);
        let visual = modal("visual", cfg.visual_dim);
        Self { names, shapes, audio, visual }
    }
}

fn classifier_names(head: HeadKind) -> [&'static str; 2] {
    match head {
        HeadKind::Cosine => ["cls.w", "cls.log_scale"],
        HeadKind::Linear => ["cls.w", "cls.b"],
    }
}

/// Video-level and snippet-level fusion outputs as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionOutputs {
    pub audio_snippets: Mat,
    pub visual_snippets: Mat,
    pub audio_video: Vec<f64>,
    pub visual_video: Vec<f64>,
    pub video: Vec<f64>,
}

/// Disjoint flat views of the two parameter partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterPartition {
    pub fusion_params: Vec<f64>,
    pub classifier_params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionClassifierModel {
    config: FusionConfig,
    layout: Layout,
    fusion: Vec<Mat>,
    /// `[weights (C×d), scale (1×1) | bias (1×C)]`
    classifier: Vec<Mat>,
}

impl FusionClassifierModel {
    /// Randomly initialised model with `num_classes` head rows.
    pub fn new<R: Rng + ?Sized>(config: FusionConfig, num_classes: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let d = config.d_model;
        let mut fusion = Vec::with_capacity(layout.shapes.len());
        for (name, &(r, c)) in layout.names.iter().zip(&layout.shapes) {
            let m = if name.ends_with(".g") {
                Mat::filled(r, c, 1.0)
            } else if name.ends_with(".b") || name.ends_with(".bo") {
                Mat::zeros(r, c)
            } else if name.ends_with(".pos") {
                random_normal(r, c, 0.02, rng)
            } else {
                random_normal(r, c, 1.0 / (r as f64).sqrt(), rng)
            };
            fusion.push(m);
        }
        let weights = random_normal(num_classes, d, 1.0 / (d as f64).sqrt(), rng);
        let second = match config.head {
            HeadKind::Cosine => Mat::scalar(COSINE_INIT_SCALE.ln()),
            HeadKind::Linear => Mat::zeros(1, num_classes),
        };
        Ok(Self { config, layout, fusion, classifier: vec![weights, second] })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.classifier[0].rows()
    }

    /// Adds `n_new` class rows; existing rows are left untouched.
    pub fn expand_classes<R: Rng + ?Sized>(&mut self, n_new: usize, rng: &mut R) -> Result<()> {
        if n_new == 0 {
            return Err(HadError::Contract("expand_classes requires n_new >= 1".into()));
        }
        let d = self.config.d_model;
        let fresh = random_normal(n_new, d, 1.0 / (d as f64).sqrt(), rng);
        self.classifier[0] = Mat::vstack(&[&self.classifier[0], &fresh]);
        if self.config.head == HeadKind::Linear {
            let mut b = self.classifier[1].as_slice().to_vec();
            b.extend(std::iter::repeat_n(0.0, n_new));
            self.classifier[1] = Mat::row_vector(b);
        }
        Ok(())
    }

    pub fn fusion_param_count(&self) -> usize {
        self.fusion.iter().map(Mat::len).sum()
    }

    pub fn classifier_param_count(&self) -> usize {
        self.classifier.iter().map(Mat::len).sum()
    }

    pub fn partition(&self) -> ParameterPartition {
        ParameterPartition { fusion_params: flatten(&self.fusion), classifier_params: flatten(&self.classifier) }
    }

    pub fn set_fusion_params(&mut self, flat: &[f64]) -> Result<()> {
        unflatten(&mut self.fusion, flat)
    }

    pub fn set_classifier_params(&mut self, flat: &[f64]) -> Result<()> {
        unflatten(&mut self.classifier, flat)
    }

    /// `(name, rows, cols, values)` for every trainable tensor, fusion first.
    pub fn named_parameters(&self) -> Vec<(String, usize, usize, Vec<f64>)> {
        let cls = classifier_names(self.config.head);
        self.layout.names
            .iter()
            .map(String::as_str)
            .chain(cls)
            .zip(self.fusion.iter().chain(&self.classifier))
            .map(|(n, m)| (n.to_string(), m.rows(), m.cols(), m.as_slice().to_vec()))
            .collect()
    }

    /// Overwrites one named tensor. Shapes must match.
    pub fn set_parameter(&mut self, name: &str, value: Mat) -> Result<()> {
        let cls = classifier_names(self.config.head);
        let slot = if let Some(i) = self.layout.names.iter().position(|n| n == name) {
            &mut self.fusion[i]
        } else if let Some(i) = cls.iter().position(|n| *n == name) {
            &mut self.classifier[i]
        } else {
            return Err(HadError::Contract(format!("unknown parameter `{name}`")));
        };
        if slot.shape() != value.shape() {
            return Err(HadError::Contract(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Fusion tensors then classifier tensors, in [`BoundModel`] node order.
    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut Mat> {
        self.fusion.iter_mut().chain(self.classifier.iter_mut())
    }

    pub fn all_finite(&self) -> bool {
        self.fusion.iter().chain(&self.classifier).all(Mat::all_finite)
    }

    /// Rounds every parameter to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for m in self.fusion.iter_mut().chain(self.classifier.iter_mut()) {
            m.as_mut_slice().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot { model: Arc::new(self.clone()) }
    }

    /// Binds the parameters as tape leaves. Untracked partitions become constants.
    pub fn bind<'m>(&'m self, tape: &mut Tape, track_fusion: bool, track_classifier: bool) -> BoundModel<'m> {
        let leaf = |tape: &mut Tape, m: &Mat, track: bool| if track { tape.param(m.clone()) } else { tape.constant(m.clone()) };
        let fusion = self.fusion.iter().map(|m| leaf(tape, m, track_fusion)).collect();
        let classifier = self.classifier.iter().map(|m| leaf(tape, m, track_classifier)).collect();
        BoundModel { model: self, fusion, classifier }
    }

    pub fn check_features(&self, f: &ModalFeatures) -> Result<()> {
        let c = &self.config;
        if f.snippets() != c.snippets || f.audio_dim() != c.audio_dim || f.visual_dim() != c.visual_dim {
            return Err(HadError::Contract(format!(
                "features are K={} D_a={} D_v={}, model expects K={} D_a={} D_v={}",
                f.snippets(),
                f.audio_dim(),
                f.visual_dim(),
                c.snippets,
                c.audio_dim,
                c.visual_dim
            )));
        }
        Ok(())
    }

    pub fn fuse(&self, features: &ModalFeatures) -> Result<FusionOutputs> {
        self.check_features(features)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false, false);
        let out = bound.forward_one(&mut tape, features);
        Ok(out.values(&tape))
    }

    /// Logits for one video-level feature vector of length `d_model`.
    pub fn classify(&self, video_feature: &[f64]) -> Result<Vec<f64>> {
        if video_feature.len() != self.config.d_model {
            return Err(HadError::Contract(format!(
                "video feature has {} entries, expected {}",
                video_feature.len(),
                self.config.d_model
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false, false);
        let h = tape.constant(Mat::row_vector(video_feature.to_vec()));
        let logits = bound.classify(&mut tape, h);
        Ok(tape.value(logits).as_slice().to_vec())
    }

    /// Full forward: logits over the current classes plus fusion outputs.
    pub fn forward(&self, features: &ModalFeatures) -> Result<(Vec<f64>, FusionOutputs)> {
        self.check_features(features)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false, false);
        let out = bound.forward_one(&mut tape, features);
        let logits = bound.classify(&mut tape, out.video);
        Ok((tape.value(logits).as_slice().to_vec(), out.values(&tape)))
    }

    /// Arg-max class for each sample.
    pub fn predict(&self, samples: &[&ModalFeatures]) -> Result<Vec<usize>> {
        for f in samples {
            self.check_features(f)?;
        }
        let mut preds = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(64) {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape, false, false);
            let batch = bound.forward_batch(&mut tape, chunk.iter().copied());
            let logits = bound.classify(&mut tape, batch.video);
            let l = tape.value(logits);
            for r in 0..l.rows() {
                preds.push(argmax(l.row(r)));
            }
        }
        Ok(preds)
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| HadError::io(dir, e))?;
        let mut entries = Vec::new();
        let mut blob = Vec::new();
        let mut offset = 0;
        for (name, rows, cols, values) in self.named_parameters() {
            entries.push(CheckpointEntry { name, offset, shape: [rows, cols] });
            offset += values.len();
            for v in values {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let manifest = CheckpointManifest { config: self.config.clone(), num_classes: self.num_classes(), params: entries };
        let mpath = dir.join(CHECKPOINT_MANIFEST);
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| HadError::json("checkpoint", e))?;
        fs::write(&mpath, json).map_err(|e| HadError::io(&mpath, e))?;
        let bpath = dir.join(CHECKPOINT_BLOB);
        fs::write(&bpath, blob).map_err(|e| HadError::io(&bpath, e))
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let mpath = dir.join(CHECKPOINT_MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(|e| HadError::io(&mpath, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| HadError::json("checkpoint", e))?;
        let bpath = dir.join(CHECKPOINT_BLOB);
        let bytes = fs::read(&bpath).map_err(|e| HadError::io(&bpath, e))?;
        let values: Vec<f64> =
            bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        let mut model = Self::new(manifest.config, manifest.num_classes, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        for e in &manifest.params {
            let n = e.shape[0] * e.shape[1];
            let slice = values.get(e.offset..e.offset + n).ok_or_else(|| HadError::CorruptDataset {
                expected: ((e.offset + n) * 4) as u64,
                actual: bytes.len() as u64,
            })?;
            model.set_parameter(&e.name, Mat::from_vec(e.shape[0], e.shape[1], slice.to_vec()))?;
        }
        Ok(model)
    }
}

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
pub const CHECKPOINT_BLOB: &str = "params.f32";

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    offset: usize,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    config: FusionConfig,
    num_classes: usize,
    params: Vec<CheckpointEntry>,
}

/// Frozen copy of a model. Cloning shares the parameters.
#[derive(Clone, Debug)]
pub struct ModelSnapshot {
    model: Arc<FusionClassifierModel>,
}

impl ModelSnapshot {
    pub fn model(&self) -> &FusionClassifierModel {
        &self.model
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    /// Binds the frozen parameters as constants.
    pub fn bind<'m>(&'m self, tape: &mut Tape) -> BoundModel<'m> {
        self.model.bind(tape, false, false)
    }
}

/// Evaluates a snapshot; returns logits and fusion outputs.
pub fn forward_snapshot(snap: &ModelSnapshot, features: &ModalFeatures) -> Result<(Vec<f64>, FusionOutputs)> {
    snap.model.forward(features)
}

/// Tape nodes for one video's fusion outputs.
#[derive(Clone, Copy, Debug)]
pub struct FusionNodes {
    pub audio_snippets: NodeId,
    pub visual_snippets: NodeId,
    pub audio_video: NodeId,
    pub visual_video: NodeId,
    pub video: NodeId,
}

impl FusionNodes {
    pub fn values(&self, tape: &Tape) -> FusionOutputs {
        FusionOutputs {
            audio_snippets: tape.value(self.audio_snippets).clone(),
            visual_snippets: tape.value(self.visual_snippets).clone(),
            audio_video: tape.value(self.audio_video).as_slice().to_vec(),
            visual_video: tape.value(self.visual_video).as_slice().to_vec(),
            video: tape.value(self.video).as_slice().to_vec(),
        }
    }
}

/// Fusion outputs for a batch: per-video snippet nodes and stacked B×d video-level nodes.
#[derive(Clone, Debug)]
pub struct BatchNodes {
    pub audio_snippets: Vec<NodeId>,
    pub visual_snippets: Vec<NodeId>,
    pub audio_video: NodeId,
    pub visual_video: NodeId,
    pub video: NodeId,
}

impl BatchNodes {
    pub fn len(&self) -> usize {
        self.audio_snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.audio_snippets.is_empty()
    }
}

/// A model whose parameters live on a tape.
pub struct BoundModel<'m> {
    model: &'m FusionClassifierModel,
    pub fusion: Vec<NodeId>,
    pub classifier: Vec<NodeId>,
}

impl BoundModel<'_> {
    pub fn model(&self) -> &FusionClassifierModel {
        self.model
    }

    pub fn config(&self) -> &FusionConfig {
        &self.model.config
    }

    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    /// Same parameters with the classifier partition cut off from the gradient.
    pub fn with_detached_classifier(&self, tape: &mut Tape) -> BoundModel<'_> {
        BoundModel {
            model: self.model,
            fusion: self.fusion.clone(),
            classifier: self.classifier.iter().map(|&c| tape.detach(c)).collect(),
        }
    }

    fn attention(&self, tape: &mut Tape, idx: &AttnIdx, query_in: NodeId, kv_in: NodeId) -> NodeId {
        let p = &self.fusion;
        let cfg = &self.model.config;
        let q_norm = {
            let n = tape.layer_norm_rows(query_in, LAYER_NORM_EPS);
            let n = tape.mul_row(n, p[idx.ln_q_g]);
            tape.add_row(n, p[idx.ln_q_b])
        };
        let kv_norm = match idx.ln_kv {
            None => q_norm,
            Some((g, b)) => {
                let n = tape.layer_norm_rows(kv_in, LAYER_NORM_EPS);
                let n = tape.mul_row(n, p[g]);
                tape.add_row(n, p[b])
            }
        };
        let q = tape.matmul(q_norm, p[idx.wq]);
        let k = tape.matmul(kv_norm, p[idx.wk]);
        let v = tape.matmul(kv_norm, p[idx.wv]);
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<NodeId> = (0..cfg.num_heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let scores = tape.matmul_nt(qh, kh);
                let scores = tape.scale(scores, scale);
                let attn = tape.softmax_rows(scores);
                tape.matmul(attn, vh)
            })
            .collect();
        let concat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        let out = tape.matmul(concat, p[idx.wo]);
        let out = tape.add_row(out, p[idx.bo]);
        tape.add(query_in, out)
    }

    fn project(&self, tape: &mut Tape, idx: &ModalIdx, input: &Mat) -> NodeId {
        let x = tape.constant(input.clone());
        let h = tape.matmul(x, self.fusion[idx.proj_w]);
        let h = tape.add_row(h, self.fusion[idx.proj_b]);
        match idx.pos {
            Some(pos) => tape.add(h, self.fusion[pos]),
            None => h,
        }
    }

    /// Fusion forward for one video. Feature dims must already be checked.
    pub fn forward_one(&self, tape: &mut Tape, features: &ModalFeatures) -> FusionNodes {
        let (a_idx, v_idx) = (self.model.layout.audio, self.model.layout.visual);
        let pa = self.project(tape, &a_idx, features.audio());
        let pv = self.project(tape, &v_idx, features.visual());
        let sa = self.attention(tape, &a_idx.self_attn, pa, pa);
        let sv = self.attention(tape, &v_idx.self_attn, pv, pv);
        let ha = self.attention(tape, &a_idx.cross_attn, sa, sv);
        let hv = self.attention(tape, &v_idx.cross_attn, sv, sa);
        let audio_video = tape.mean_rows(ha);
        let visual_video = tape.mean_rows(hv);
        let video = tape.add(audio_video, visual_video);
        FusionNodes { audio_snippets: ha, visual_snippets: hv, audio_video, visual_video, video }
    }

    pub fn forward_batch<'f>(&self, tape: &mut Tape, batch: impl IntoIterator<Item = &'f ModalFeatures>) -> BatchNodes {
        let outs: Vec<FusionNodes> = batch.into_iter().map(|f| self.forward_one(tape, f)).collect();
        assert!(!outs.is_empty(), "forward_batch on an empty batch");
        let stack = |tape: &mut Tape, ids: Vec<NodeId>| if ids.len() == 1 { ids[0] } else { tape.concat_rows(&ids) };
        let audio_video = stack(tape, outs.iter().map(|o| o.audio_video).collect());
        let visual_video = stack(tape, outs.iter().map(|o| o.visual_video).collect());
        let video = stack(tape, outs.iter().map(|o| o.video).collect());
        BatchNodes {
            audio_snippets: outs.iter().map(|o| o.audio_snippets).collect(),
            visual_snippets: outs.iter().map(|o| o.visual_snippets).collect(),
            audio_video,
            visual_video,
            video,
        }
    }

    /// Logits (B×C) for stacked video-level features (B×d).
    pub fn classify(&self, tape: &mut Tape, video: NodeId) -> NodeId {
        let w = self.classifier[0];
        match self.model.config.head {
            HeadKind::Cosine => {
                let h = tape.normalize_rows(video, COSINE_EPS);
                let wn = tape.normalize_rows(w, COSINE_EPS);
                let cos = tape.matmul_nt(h, wn);
                let sigma = tape.exp(self.classifier[1]);
                tape.scale_by(cos, sigma)
            }
            HeadKind::Linear => {
                let l = tape.matmul_nt(video, w);
                tape.add_row(l, self.classifier[1])
            }
        }
    }
}

fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Mat {
    let dist = Normal::new(0.0, std).expect("finite std");
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

fn flatten(ms: &[Mat]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

fn unflatten(ms: &mut [Mat], flat: &[f64]) -> Result<()> {
    let total: usize = ms.iter().map(Mat::len).sum();
    if flat.len() != total {
        return Err(HadError::Contract(format!("flat parameter view has {} values, expected {total}", flat.len())));
    }
    let mut offset = 0;
    for m in ms {
        let n = m.len();
        m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    Ok(())
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
