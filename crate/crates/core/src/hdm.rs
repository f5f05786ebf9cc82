//! Distillation against the frozen previous-phase model.
//!
//! Logical terms match old-class probabilities on real samples and on convex
//! combinations of batch samples. Correlative terms match row-stochastic
//! similarity matrices: augmented memory videos against a pool of clean
//! videos, and augmented against clean snippets inside each memory video.
//! All KL terms put the teacher first and detach it on the tape, so teacher
//! parameters never receive gradient even when bound as tracked leaves.
//!
//! The `*_from_nodes` functions work on fusion outputs that are already on the
//! tape, which lets a training step share forward passes across terms.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{softmax_rows, NodeId, Tape};
use crate::error::{HadError, Result};
use crate::feature_store::ModalFeatures;
use crate::fusion_model::{BatchNodes, BoundModel, FusionClassifierModel};
use crate::ham::SegmentNoise;
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Audio,
    Visual,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Audio, Modality::Visual];
}

/// Convex combination weights over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexWeights {
    alpha: Vec<f64>,
}

impl ConvexWeights {
    /// `|x_i| / Σ|x_j|`. All-zero draws are rejected.
    pub fn from_normals(draws: &[f64]) -> Result<Self> {
        let total: f64 = draws.iter().map(|x| x.abs()).sum();
        if draws.is_empty() || !(total.is_finite() && total > 0.0) {
            return Err(HadError::Contract("convex weights need at least one finite nonzero draw".into()));
        }
        Ok(Self { alpha: draws.iter().map(|x| x.abs() / total).collect() })
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        assert!(index < n, "vertex {index} outside batch of {n}");
        let mut alpha = vec![0.0; n];
        alpha[index] = 1.0;
        Self { alpha }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `Σ α_i f_i`, applied to audio and visual blocks with the same weights.
    pub fn combine(&self, batch: &[&ModalFeatures]) -> ModalFeatures {
        assert_eq!(batch.len(), self.alpha.len(), "weights and batch differ in length");
        let first = batch[0];
        let mut audio = Mat::zeros(first.snippets(), first.audio_dim());
        let mut visual = Mat::zeros(first.snippets(), first.visual_dim());
        for (f, &a) in batch.iter().zip(&self.alpha) {
            if a == 0.0 {
                continue;
            }
            for (o, &x) in audio.as_mut_slice().iter_mut().zip(f.audio().as_slice()) {
                *o += a * x;
            }
            for (o, &x) in visual.as_mut_slice().iter_mut().zip(f.visual().as_slice()) {
                *o += a * x;
            }
        }
        ModalFeatures::from_parts_unchecked(audio, visual)
    }
}

/// Where hull weights come from. Every RNG is a source; fixed sources let
/// tests pin a draw.
pub trait WeightSource {
    fn next_weights(&mut self, n: usize) -> ConvexWeights;
}

impl<R: RngCore + ?Sized> WeightSource for R {
    fn next_weights(&mut self, n: usize) -> ConvexWeights {
        loop {
            let draws: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *self)).collect();
            if let Ok(w) = ConvexWeights::from_normals(&draws) {
                return w;
            }
        }
    }
}

/// Always returns the same vertex of the hull.
#[derive(Clone, Copy, Debug)]
pub struct VertexSource(pub usize);

impl WeightSource for VertexSource {
    fn next_weights(&mut self, n: usize) -> ConvexWeights {
        ConvexWeights::one_hot(n, self.0)
    }
}

fn check_batch(batch: &[&ModalFeatures]) -> Result<()> {
    let Some(first) = batch.first() else {
        return Err(HadError::Contract("convex hull of an empty batch".into()));
    };
    let dims = |f: &ModalFeatures| (f.snippets(), f.audio_dim(), f.visual_dim());
    if batch.iter().any(|f| dims(f) != dims(first)) {
        return Err(HadError::Contract("convex hull over features of different shapes".into()));
    }
    Ok(())
}

pub fn sample_convex_hull<S: WeightSource + ?Sized>(batch: &[&ModalFeatures], source: &mut S) -> Result<ModalFeatures> {
    check_batch(batch)?;
    Ok(source.next_weights(batch.len()).combine(batch))
}

/// Hull weights for one step: `n_draws` per non-empty source batch.
#[derive(Clone, Debug, PartialEq)]
pub struct HullDraws {
    pub memory: Vec<ConvexWeights>,
    pub current: Vec<ConvexWeights>,
}

impl HullDraws {
    pub fn draw<S: WeightSource + ?Sized>(n_memory: usize, n_current: usize, n_draws: usize, source: &mut S) -> Self {
        let mut side = |n: usize| if n == 0 { Vec::new() } else { (0..n_draws).map(|_| source.next_weights(n)).collect() };
        let memory = side(n_memory);
        let current = side(n_current);
        Self { memory, current }
    }
}

/// Mean over rows of `KL(softmax(teacher) ‖ softmax(student))`. The teacher is detached.
pub fn kl_logits(tape: &mut Tape, teacher_logits: NodeId, student_logits: NodeId) -> NodeId {
    let t = tape.detach(teacher_logits);
    let p = softmax_rows(tape.value(t));
    let log_p = crate::autograd::log_softmax_rows(tape.value(t));
    let p = tape.constant(p);
    let log_p = tape.constant(log_p);
    let log_q = tape.log_softmax_rows(student_logits);
    let diff = tape.sub(log_p, log_q);
    let terms = tape.mul(p, diff);
    let rows = tape.value(terms).rows() as f64;
    let s = tape.sum_all(terms);
    tape.scale(s, 1.0 / rows)
}

/// KL restricted to the first `n_old` classes, softmax renormalised over them.
pub fn old_class_kl(tape: &mut Tape, teacher_logits: NodeId, student_logits: NodeId, n_old: usize) -> NodeId {
    let t = tape.slice_cols(teacher_logits, 0, n_old);
    let s = tape.slice_cols(student_logits, 0, n_old);
    kl_logits(tape, t, s)
}

/// Sum over the given `(teacher, student)` logit pairs of old-class KL.
pub fn logical_from_logits(tape: &mut Tape, pairs: &[(NodeId, NodeId)], n_old: usize) -> Option<NodeId> {
    let terms: Vec<NodeId> = pairs.iter().map(|&(t, s)| old_class_kl(tape, t, s, n_old)).collect();
    (!terms.is_empty()).then(|| tape.sum_scalars(&terms))
}

fn logits_of(tape: &mut Tape, model: &BoundModel, batch: &[&ModalFeatures]) -> NodeId {
    let nodes = model.forward_batch(tape, batch.iter().copied());
    model.classify(tape, nodes.video)
}

/// Logical distillation on the real memory and current samples. `None` when both are empty.
pub fn loss_sl(
    tape: &mut Tape,
    student: &BoundModel,
    teacher: &BoundModel,
    memory: &[&ModalFeatures],
    current: &[&ModalFeatures],
) -> Option<NodeId> {
    let mut pairs = Vec::new();
    for batch in [memory, current] {
        if !batch.is_empty() {
            let t = logits_of(tape, teacher, batch);
            let s = logits_of(tape, student, batch);
            pairs.push((t, s));
        }
    }
    logical_from_logits(tape, &pairs, teacher.num_classes())
}

/// Logical distillation on convex-hull samples of each source. `None` when both are empty.
pub fn loss_dl(
    tape: &mut Tape,
    student: &BoundModel,
    teacher: &BoundModel,
    memory: &[&ModalFeatures],
    current: &[&ModalFeatures],
    draws: &HullDraws,
) -> Option<NodeId> {
    let mut pairs = Vec::new();
    for (batch, weights) in [(memory, &draws.memory), (current, &draws.current)] {
        if batch.is_empty() || weights.is_empty() {
            continue;
        }
        let hull: Vec<ModalFeatures> = weights.iter().map(|w| w.combine(batch)).collect();
        let refs: Vec<&ModalFeatures> = hull.iter().collect();
        let t = logits_of(tape, teacher, &refs);
        let s = logits_of(tape, student, &refs);
        pairs.push((t, s));
    }
    logical_from_logits(tape, &pairs, teacher.num_classes())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HldSwitches {
    pub sld: bool,
    pub dld: bool,
}

impl Default for HldSwitches {
    fn default() -> Self {
        Self { sld: true, dld: true }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HldLoss {
    pub sl: Option<NodeId>,
    pub dl: Option<NodeId>,
    pub total: Option<NodeId>,
}

pub fn loss_hld(
    tape: &mut Tape,
    student: &BoundModel,
    teacher: &BoundModel,
    memory: &[&ModalFeatures],
    current: &[&ModalFeatures],
    draws: &HullDraws,
    switches: HldSwitches,
) -> HldLoss {
    let sl = switches.sld.then(|| loss_sl(tape, student, teacher, memory, current)).flatten();
    let dl = switches.dld.then(|| loss_dl(tape, student, teacher, memory, current, draws)).flatten();
    HldLoss { sl, dl, total: add_opt(tape, sl, dl) }
}

fn add_opt(tape: &mut Tape, a: Option<NodeId>, b: Option<NodeId>) -> Option<NodeId> {
    match (a, b) {
        (Some(a), Some(b)) => Some(tape.add(a, b)),
        (a, b) => a.or(b),
    }
}

/// `s_ij = softmax_j(rows_i · pool_j)`
pub fn similarity_rows(rows: &Mat, pool: &Mat) -> Mat {
    softmax_rows(&rows.matmul_nt(pool))
}

fn stack_rows(v: &[Vec<f64>]) -> Mat {
    Mat::from_rows(v)
}

fn pick_video(out: &crate::fusion_model::FusionOutputs, m: Modality) -> Vec<f64> {
    match m {
        Modality::Audio => out.audio_video.clone(),
        Modality::Visual => out.visual_video.clone(),
    }
}

fn pick_snippets(out: &crate::fusion_model::FusionOutputs, m: Modality) -> Mat {
    match m {
        Modality::Audio => out.audio_snippets.clone(),
        Modality::Visual => out.visual_snippets.clone(),
    }
}

/// Video-level similarity of augmented memory samples against a clean pool, for one modality.
pub fn video_similarity(
    model: &FusionClassifierModel,
    augmented: &[&ModalFeatures],
    pool: &[&ModalFeatures],
    modality: Modality,
) -> Result<Mat> {
    if pool.is_empty() || augmented.is_empty() {
        return Err(HadError::Contract("video similarity needs non-empty rows and pool".into()));
    }
    let fused = |b: &[&ModalFeatures]| -> Result<Vec<Vec<f64>>> {
        b.iter().map(|f| model.fuse(f).map(|o| pick_video(&o, modality))).collect()
    };
    Ok(similarity_rows(&stack_rows(&fused(augmented)?), &stack_rows(&fused(pool)?)))
}

/// K×K similarity of augmented against clean fused snippets of one video.
pub fn snippet_similarity(
    model: &FusionClassifierModel,
    clean: &ModalFeatures,
    augmented: &ModalFeatures,
    modality: Modality,
) -> Result<Mat> {
    let c = pick_snippets(&model.fuse(clean)?, modality);
    let a = pick_snippets(&model.fuse(augmented)?, modality);
    Ok(similarity_rows(&a, &c))
}

/// Fusion nodes of one model over the augmented memory rows and the clean pool.
#[derive(Clone, Debug)]
pub struct CorrelativeView {
    pub augmented_memory: BatchNodes,
    pub clean_memory: BatchNodes,
    /// Clean videos stacked after the memory in the pool; `None` if there are none.
    pub clean_current: Option<BatchNodes>,
}

impl CorrelativeView {
    fn video(&self, m: Modality, b: &BatchNodes) -> NodeId {
        match m {
            Modality::Audio => b.audio_video,
            Modality::Visual => b.visual_video,
        }
    }

    fn snippets<'a>(&self, m: Modality, b: &'a BatchNodes) -> &'a [NodeId] {
        match m {
            Modality::Audio => &b.audio_snippets,
            Modality::Visual => &b.visual_snippets,
        }
    }

    fn pool(&self, tape: &mut Tape, m: Modality) -> NodeId {
        let mem = self.video(m, &self.clean_memory);
        match &self.clean_current {
            Some(c) => {
                let cur = self.video(m, c);
                tape.concat_rows(&[mem, cur])
            }
            None => mem,
        }
    }

    fn pool_len(&self) -> usize {
        self.clean_memory.len() + self.clean_current.as_ref().map_or(0, BatchNodes::len)
    }
}

/// Video-level correlative KL for one modality. `None` when the pool has fewer than 2 videos.
pub fn ss_from_nodes(tape: &mut Tape, teacher: &CorrelativeView, student: &CorrelativeView, m: Modality) -> Option<NodeId> {
    if student.pool_len() < 2 {
        return None;
    }
    let mut scores = |view: &CorrelativeView| {
        let rows = view.video(m, &view.augmented_memory);
        let pool = view.pool(tape, m);
        tape.matmul_nt(rows, pool)
    };
    let t = scores(teacher);
    let s = scores(student);
    Some(kl_logits(tape, t, s))
}

/// Snippet-level correlative KL for one modality, averaged over memory videos.
/// `None` for K < 2.
pub fn ns_from_nodes(tape: &mut Tape, teacher: &CorrelativeView, student: &CorrelativeView, m: Modality) -> Option<NodeId> {
    let aug_s = student.snippets(m, &student.augmented_memory);
    if aug_s.is_empty() || tape.value(aug_s[0]).rows() < 2 {
        return None;
    }
    let mut scores = |view: &CorrelativeView| {
        let aug = view.snippets(m, &view.augmented_memory).to_vec();
        let clean = view.snippets(m, &view.clean_memory).to_vec();
        let per: Vec<NodeId> = aug.iter().zip(&clean).map(|(&a, &c)| tape.matmul_nt(a, c)).collect();
        if per.len() == 1 {
            per[0]
        } else {
            tape.concat_rows(&per)
        }
    };
    // Every video contributes K rows, so the mean over all rows is the mean over
    // videos of the per-video mean row KL.
    let t = scores(teacher);
    let s = scores(student);
    Some(kl_logits(tape, t, s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HcdSwitches {
    /// Snippet-level terms.
    pub scd: bool,
    /// Video-level terms.
    pub vcd: bool,
}

impl Default for HcdSwitches {
    fn default() -> Self {
        Self { scd: true, vcd: true }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HcdLoss {
    pub ss_a: Option<NodeId>,
    pub ns_a: Option<NodeId>,
    pub ss_v: Option<NodeId>,
    pub ns_v: Option<NodeId>,
    pub total: Option<NodeId>,
}

pub fn hcd_from_nodes(tape: &mut Tape, teacher: &CorrelativeView, student: &CorrelativeView, switches: HcdSwitches) -> HcdLoss {
    let ss = |tape: &mut Tape, m| switches.vcd.then(|| ss_from_nodes(tape, teacher, student, m)).flatten();
    let ns = |tape: &mut Tape, m| switches.scd.then(|| ns_from_nodes(tape, teacher, student, m)).flatten();
    let ss_a = ss(tape, Modality::Audio);
    let ns_a = ns(tape, Modality::Audio);
    let ss_v = ss(tape, Modality::Visual);
    let ns_v = ns(tape, Modality::Visual);
    let present: Vec<NodeId> = [ss_a, ns_a, ss_v, ns_v].into_iter().flatten().collect();
    let total = (!present.is_empty()).then(|| tape.sum_scalars(&present));
    HcdLoss { ss_a, ns_a, ss_v, ns_v, total }
}

/// Runs the fusion forwards a correlative term needs for one model.
pub fn correlative_view(
    tape: &mut Tape,
    model: &BoundModel,
    memory: &[&ModalFeatures],
    augmented_memory: &[ModalFeatures],
    current: &[&ModalFeatures],
) -> CorrelativeView {
    CorrelativeView {
        augmented_memory: model.forward_batch(tape, augmented_memory),
        clean_memory: model.forward_batch(tape, memory.iter().copied()),
        clean_current: (!current.is_empty()).then(|| model.forward_batch(tape, current.iter().copied())),
    }
}

/// Correlative distillation over a memory batch. The teacher sees the same
/// augmented inputs as the student. Every term is skipped for an empty memory.
#[allow(clippy::too_many_arguments)]
pub fn loss_hcd(
    tape: &mut Tape,
    student: &BoundModel,
    teacher: &BoundModel,
    memory: &[&ModalFeatures],
    current: &[&ModalFeatures],
    noise: &[SegmentNoise],
    lambda: f64,
    switches: HcdSwitches,
) -> HcdLoss {
    if memory.is_empty() {
        return HcdLoss { ss_a: None, ns_a: None, ss_v: None, ns_v: None, total: None };
    }
    let augmented: Vec<ModalFeatures> = memory.iter().zip(noise).map(|(f, z)| z.apply(f, lambda)).collect();
    let t = correlative_view(tape, teacher, memory, &augmented, current);
    let s = correlative_view(tape, student, memory, &augmented, current);
    hcd_from_nodes(tape, &t, &s, switches)
}

/// Draws hull weights with an RNG; convenience over [`HullDraws::draw`].
pub fn draw_hull<R: Rng + ?Sized>(n_memory: usize, n_current: usize, n_draws: usize, rng: &mut R) -> HullDraws {
    HullDraws::draw(n_memory, n_current, n_draws, rng)
}
