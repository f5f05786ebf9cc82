//! Segmental feature augmentation with gradient routing.
//!
//! Gaussian noise is added at two levels. Low-level noise perturbs every
//! snippet feature, and its cross-entropy only reaches the fusion partition.
//! Video-level noise perturbs the fused video feature, and its cross-entropy
//! only reaches the classifier. Noise is drawn outside the losses so that a
//! training step can be replayed exactly.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{NodeId, Tape};
use crate::error::{HadError, Result};
use crate::feature_store::ModalFeatures;
use crate::fusion_model::BoundModel;
use crate::tensor::Mat;

pub const DEFAULT_LAMBDA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationConfig {
    pub lambda: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA }
    }
}

impl AugmentationConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(HadError::InvalidConfig(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect())
}

/// One standard-normal draw per snippet entry, independent across modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentNoise {
    pub audio: Mat,
    pub visual: Mat,
}

impl SegmentNoise {
    pub fn like<R: Rng + ?Sized>(features: &ModalFeatures, rng: &mut R) -> Self {
        let k = features.snippets();
        let audio = standard_normal(k, features.audio_dim(), rng);
        let visual = standard_normal(k, features.visual_dim(), rng);
        Self { audio, visual }
    }

    /// `f + λ·z`
    pub fn apply(&self, features: &ModalFeatures, lambda: f64) -> ModalFeatures {
        let shift = |x: &Mat, z: &Mat| x.zip_map(z, |x, z| x + lambda * z);
        ModalFeatures::from_parts_unchecked(shift(features.audio(), &self.audio), shift(features.visual(), &self.visual))
    }
}

pub fn augment_low<R: Rng + ?Sized>(features: &ModalFeatures, cfg: &AugmentationConfig, rng: &mut R) -> ModalFeatures {
    SegmentNoise::like(features, rng).apply(features, cfg.lambda)
}

pub fn augment_high<R: Rng + ?Sized>(video_feature: &[f64], cfg: &AugmentationConfig, rng: &mut R) -> Vec<f64> {
    video_feature
        .iter()
        .map(|&h| {
            let z: f64 = StandardNormal.sample(rng);
            h + cfg.lambda * z
        })
        .collect()
}

/// All noise consumed by one augmentation step over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct HamNoise {
    pub low: Vec<SegmentNoise>,
    /// B×d_model
    pub high: Mat,
}

impl HamNoise {
    pub fn draw<R: Rng + ?Sized>(batch: &[&ModalFeatures], d_model: usize, rng: &mut R) -> Self {
        let low = batch.iter().map(|f| SegmentNoise::like(f, rng)).collect();
        let high = standard_normal(batch.len(), d_model, rng);
        Self { low, high }
    }

    pub fn augmented(&self, batch: &[&ModalFeatures], lambda: f64) -> Vec<ModalFeatures> {
        batch.iter().zip(&self.low).map(|(f, z)| z.apply(f, lambda)).collect()
    }
}

/// Which augmentation levels run, and whether their gradients are routed.
/// `routing: false` is the HAD-N mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HamSwitches {
    pub low_level: bool,
    pub high_level: bool,
    pub routing: bool,
}

impl Default for HamSwitches {
    fn default() -> Self {
        Self { low_level: true, high_level: true, routing: true }
    }
}

/// Cross-entropy on video features fused from augmented inputs. With routing
/// the classifier is cut from the gradient.
pub fn lsm_from_video(tape: &mut Tape, live: &BoundModel, augmented_video: NodeId, labels: &[usize], routing: bool) -> NodeId {
    let logits = if routing {
        live.with_detached_classifier(tape).classify(tape, augmented_video)
    } else {
        live.classify(tape, augmented_video)
    };
    tape.cross_entropy(logits, labels)
}

/// Cross-entropy on `H + λ·z`. With routing `H` is cut from the gradient.
pub fn hsm_from_video(
    tape: &mut Tape,
    live: &BoundModel,
    clean_video: NodeId,
    noise: &Mat,
    lambda: f64,
    labels: &[usize],
    routing: bool,
) -> NodeId {
    let h = if routing { tape.detach(clean_video) } else { clean_video };
    let z = tape.constant(noise.scale(lambda));
    let h_bar = tape.add(h, z);
    let logits = live.classify(tape, h_bar);
    tape.cross_entropy(logits, labels)
}

/// `None` for an empty batch.
pub fn loss_lsm(
    tape: &mut Tape,
    live: &BoundModel,
    batch: &[&ModalFeatures],
    labels: &[usize],
    noise: &[SegmentNoise],
    cfg: &AugmentationConfig,
    routing: bool,
) -> Option<NodeId> {
    if batch.is_empty() {
        return None;
    }
    let augmented: Vec<ModalFeatures> = batch.iter().zip(noise).map(|(f, z)| z.apply(f, cfg.lambda)).collect();
    let nodes = live.forward_batch(tape, &augmented);
    Some(lsm_from_video(tape, live, nodes.video, labels, routing))
}

/// `None` for an empty batch.
pub fn loss_hsm(
    tape: &mut Tape,
    live: &BoundModel,
    batch: &[&ModalFeatures],
    labels: &[usize],
    noise: &Mat,
    cfg: &AugmentationConfig,
    routing: bool,
) -> Option<NodeId> {
    if batch.is_empty() {
        return None;
    }
    let nodes = live.forward_batch(tape, batch.iter().copied());
    Some(hsm_from_video(tape, live, nodes.video, noise, cfg.lambda, labels, routing))
}

/// Augmentation loss nodes; `None` marks a skipped term.
#[derive(Clone, Copy, Debug)]
pub struct HamLoss {
    pub lsm: Option<NodeId>,
    pub hsm: Option<NodeId>,
    pub total: Option<NodeId>,
}

pub fn loss_ham(
    tape: &mut Tape,
    live: &BoundModel,
    batch: &[&ModalFeatures],
    labels: &[usize],
    noise: &HamNoise,
    cfg: &AugmentationConfig,
    switches: HamSwitches,
) -> HamLoss {
    let lsm = switches
        .low_level
        .then(|| loss_lsm(tape, live, batch, labels, &noise.low, cfg, switches.routing))
        .flatten();
    let hsm = switches
        .high_level
        .then(|| loss_hsm(tape, live, batch, labels, &noise.high, cfg, switches.routing))
        .flatten();
    let total = match (lsm, hsm) {
        (Some(a), Some(b)) => Some(tape.add(a, b)),
        (a, b) => a.or(b),
    };
    HamLoss { lsm, hsm, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Gradients;
    use crate::fusion_model::{FusionClassifierModel, FusionConfig, HeadKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn features(rng: &mut ChaCha8Rng, k: usize, da: usize, dv: usize) -> ModalFeatures {
        ModalFeatures::new(standard_normal(k, da, rng), standard_normal(k, dv, rng)).unwrap()
    }

    fn tiny(head: HeadKind, rng: &mut ChaCha8Rng) -> FusionClassifierModel {
        let cfg = FusionConfig { d_model: 8, num_heads: 2, snippets: 3, audio_dim: 4, visual_dim: 5, positional: true, head };
        FusionClassifierModel::new(cfg, 4, rng).unwrap()
    }

    fn max_grad(g: &Gradients, ids: &[NodeId]) -> f64 {
        ids.iter().map(|&i| g.get(i).map_or(0.0, Mat::max_abs)).fold(0.0, f64::max)
    }

    #[test]
    fn zero_lambda_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = features(&mut rng, 3, 4, 5);
        let cfg = AugmentationConfig::new(0.0).unwrap();
        assert_eq!(augment_low(&f, &cfg, &mut rng), f);
        let h = vec![0.3, -1.2, 4.0];
        assert_eq!(augment_high(&h, &cfg, &mut rng), h);
    }

    #[test]
    fn zero_input_returns_raw_noise() {
        let zero = ModalFeatures::new(Mat::zeros(2, 3), Mat::zeros(2, 4)).unwrap();
        let cfg = AugmentationConfig::new(1.0).unwrap();
        let out = augment_low(&zero, &cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let z = SegmentNoise::like(&zero, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(out.audio(), &z.audio);
        assert_eq!(out.visual(), &z.visual);
    }

    #[test]
    fn negative_or_nan_lambda_rejected() {
        assert!(AugmentationConfig::new(-0.1).is_err());
        assert!(AugmentationConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn low_level_perturbation_energy_is_lambda_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = features(&mut rng, 2, 3, 4);
        let cfg = AugmentationConfig::new(0.05).unwrap();
        let n = f.flatten().len() as f64;
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let g = augment_low(&f, &cfg, &mut rng);
            acc += g.flatten().iter().zip(f.flatten()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        }
        let mean = acc / draws as f64;
        assert!((mean / 0.0025 - 1.0).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn high_level_variance_and_no_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = AugmentationConfig::new(0.2).unwrap();
        let h = vec![1.0, -2.0, 0.5, 0.0];
        let (mut acc, mut ties, draws) = (0.0, 0usize, 10_000);
        for _ in 0..draws {
            let o = augment_high(&h, &cfg, &mut rng);
            for (a, b) in o.iter().zip(&h) {
                acc += (a - b).powi(2);
                ties += usize::from(a == b);
            }
        }
        let var = acc / (draws * h.len()) as f64;
        assert!((var / 0.04 - 1.0).abs() < 0.03, "var {var}");
        assert!(ties as f64 <= 0.001 * (draws * h.len()) as f64);
    }

    fn ham_grads(model: &FusionClassifierModel, routing: bool, seed: u64) -> (f64, f64, f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<ModalFeatures> = (0..3).map(|_| features(&mut rng, 3, 4, 5)).collect();
        let refs: Vec<&ModalFeatures> = batch.iter().collect();
        let labels = [0, 3, 1];
        let noise = HamNoise::draw(&refs, 8, &mut rng);
        let cfg = AugmentationConfig::new(0.5).unwrap();

        let mut t = Tape::new();
        let live = model.bind(&mut t, true, true);
        let lsm = loss_lsm(&mut t, &live, &refs, &labels, &noise.low, &cfg, routing).unwrap();
        let g = t.backward(lsm);
        let (lsm_phi, lsm_psi) = (max_grad(&g, &live.fusion), max_grad(&g, &live.classifier));

        let mut t = Tape::new();
        let live = model.bind(&mut t, true, true);
        let hsm = loss_hsm(&mut t, &live, &refs, &labels, &noise.high, &cfg, routing).unwrap();
        let g = t.backward(hsm);
        (lsm_phi, lsm_psi, max_grad(&g, &live.fusion), max_grad(&g, &live.classifier))
    }

    #[test]
    fn routing_zeroes_cross_partition_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (i, head) in [HeadKind::Cosine, HeadKind::Linear].into_iter().enumerate() {
            let model = tiny(head, &mut rng);
            let (lsm_phi, lsm_psi, hsm_phi, hsm_psi) = ham_grads(&model, true, i as u64);
            assert_eq!(lsm_psi, 0.0);
            assert_eq!(hsm_phi, 0.0);
            assert!(lsm_phi > 0.0 && hsm_psi > 0.0);

            let (_, lsm_psi, hsm_phi, _) = ham_grads(&model, false, i as u64);
            assert!(lsm_psi > 0.0 && hsm_phi > 0.0);
        }
    }

    #[test]
    fn ham_is_sum_of_terms_and_skips_empty_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = tiny(HeadKind::Cosine, &mut rng);
        let batch: Vec<ModalFeatures> = (0..2).map(|_| features(&mut rng, 3, 4, 5)).collect();
        let refs: Vec<&ModalFeatures> = batch.iter().collect();
        let noise = HamNoise::draw(&refs, 8, &mut rng);
        let cfg = AugmentationConfig::default();
        let mut t = Tape::new();
        let live = model.bind(&mut t, true, true);
        let out = loss_ham(&mut t, &live, &refs, &[1, 2], &noise, &cfg, HamSwitches::default());
        let (l, h, s) = (t.value(out.lsm.unwrap()).item(), t.value(out.hsm.unwrap()).item(), t.value(out.total.unwrap()).item());
        assert_eq!(s, l + h);

        let empty = HamNoise::draw(&[], 8, &mut rng);
        let out = loss_ham(&mut t, &live, &[], &[], &empty, &cfg, HamSwitches::default());
        assert!(out.lsm.is_none() && out.hsm.is_none() && out.total.is_none());
    }

    #[test]
    fn confident_prediction_gives_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = tiny(HeadKind::Linear, &mut rng);
        model.set_parameter("cls.b", Mat::row_vector(vec![0.0, 0.0, 1e4, 0.0])).unwrap();
        let f = features(&mut rng, 3, 4, 5);
        let noise = HamNoise::draw(&[&f], 8, &mut rng);
        let mut t = Tape::new();
        let live = model.bind(&mut t, true, true);
        let l = loss_lsm(&mut t, &live, &[&f], &[2], &noise.low, &AugmentationConfig::default(), true).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn zero_lambda_hsm_is_plain_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = tiny(HeadKind::Cosine, &mut rng);
        let batch: Vec<ModalFeatures> = (0..3).map(|_| features(&mut rng, 3, 4, 5)).collect();
        let refs: Vec<&ModalFeatures> = batch.iter().collect();
        let labels = [3, 0, 2];
        let noise = HamNoise::draw(&refs, 8, &mut rng);
        let cfg = AugmentationConfig::new(0.0).unwrap();
        let mut t = Tape::new();
        let live = model.bind(&mut t, true, true);
        let hsm = loss_hsm(&mut t, &live, &refs, &labels, &noise.high, &cfg, true).unwrap();
        let lsm = loss_lsm(&mut t, &live, &refs, &labels, &noise.low, &cfg, true).unwrap();
        let nodes = live.forward_batch(&mut t, refs.iter().copied());
        let logits = live.classify(&mut t, nodes.video);
        let ce = t.cross_entropy(logits, &labels);
        assert!((t.value(hsm).item() - t.value(ce).item()).abs() < 1e-12);
        assert!((t.value(lsm).item() - t.value(ce).item()).abs() < 1e-6);
    }

    #[test]
    fn fresh_noise_each_call() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = tiny(HeadKind::Cosine, &mut rng);
        let f = features(&mut rng, 3, 4, 5);
        let cfg = AugmentationConfig::default();
        let mut vals = Vec::new();
        for _ in 0..2 {
            let noise = HamNoise::draw(&[&f], 8, &mut rng);
            let mut t = Tape::new();
            let live = model.bind(&mut t, true, true);
            let l = loss_lsm(&mut t, &live, &[&f], &[1], &noise.low, &cfg, true).unwrap();
            vals.push(t.value(l).item());
        }
        assert_ne!(vals[0], vals[1]);
    }
}
