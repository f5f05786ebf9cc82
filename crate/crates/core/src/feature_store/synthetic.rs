use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, LabeledSample, ModalFeatures, Split};
use crate::error::{HadError, Result};
use crate::tensor::Mat;

/// Parameters of the synthetic snippet-feature generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub valid_per_class: usize,
    pub test_per_class: usize,
    pub snippets: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub class_separation: f64,
    pub temporal_smoothing: f64,
    pub cross_modal_coupling: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            train_per_class: 30,
            valid_per_class: 10,
            test_per_class: 10,
            snippets: 10,
            audio_dim: 16,
            visual_dim: 24,
            class_separation: 1.0,
            temporal_smoothing: 0.5,
            cross_modal_coupling: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_classes", self.num_classes),
            ("train_per_class", self.train_per_class),
            ("valid_per_class", self.valid_per_class),
            ("test_per_class", self.test_per_class),
            ("snippets", self.snippets),
            ("audio_dim", self.audio_dim),
            ("visual_dim", self.visual_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(HadError::InvalidConfig(format!("synthetic {name} must be >= 1")));
        }
        if !(self.class_separation.is_finite() && self.class_separation >= 0.0) {
            return Err(HadError::InvalidConfig("class_separation must be finite and >= 0".into()));
        }
        for (name, v) in [("temporal_smoothing", self.temporal_smoothing), ("cross_modal_coupling", self.cross_modal_coupling)]
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(HadError::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Rounds to the nearest `f32` so the sample survives the on-disk format bit-exactly.
fn f32_exact(x: f64) -> f64 {
    x as f32 as f64
}

/// Generates a labelled dataset whose class structure lives in per-class
/// anchors, with AR(1) snippet noise and a shared per-video latent offset
/// applied to both modalities.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(DatasetManifest, Vec<LabeledSample>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let anchors: Vec<(Vec<f64>, Vec<f64>)> = (0..spec.num_classes)
        .map(|_| {
            let a = (0..spec.audio_dim).map(|_| normal(&mut rng) * spec.class_separation).collect();
            let v = (0..spec.visual_dim).map(|_| normal(&mut rng) * spec.class_separation).collect();
            (a, v)
        })
        .collect();

    let rho = spec.temporal_smoothing;
    let innovation = (1.0 - rho * rho).sqrt();
    let k = spec.snippets;
    let modality = |rng: &mut ChaCha8Rng, anchor: &[f64], shared: f64| {
        let d = anchor.len();
        let mut m = Mat::zeros(k, d);
        let mut noise: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        for t in 0..k {
            if t > 0 {
                noise.iter_mut().for_each(|e| *e = rho * *e + innovation * normal(rng));
            }
            for ((o, &mu), &e) in m.row_mut(t).iter_mut().zip(anchor).zip(&noise) {
                *o = f32_exact(mu + e + shared);
            }
        }
        m
    };

    let mut samples = Vec::new();
    for (split, per_class) in
        [(Split::Train, spec.train_per_class), (Split::Valid, spec.valid_per_class), (Split::Test, spec.test_per_class)]
    {
        let tag = match split {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        };
        for (class, (anchor_a, anchor_v)) in anchors.iter().enumerate() {
            for i in 0..per_class {
                let shared = normal(&mut rng) * spec.cross_modal_coupling;
                let audio = modality(&mut rng, anchor_a, shared);
                let visual = modality(&mut rng, anchor_v, shared);
                samples.push(LabeledSample {
                    id: format!("syn-{tag}-{class:03}-{i:04}"),
                    features: ModalFeatures::new(audio, visual)?,
                    label: class,
                    split,
                });
            }
        }
    }
    let manifest = DatasetManifest::for_samples(&format!("synthetic-{}", spec.seed), spec.num_classes, &samples)?;
    Ok((manifest, samples))
}
