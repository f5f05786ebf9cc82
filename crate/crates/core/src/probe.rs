//! Empirical probes: output sensitivity of the fusion module to small input
//! perturbations, and hyperparameter grid sweeps over whole runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HadError, Result};
use crate::feature_store::{DatasetManifest, LabeledSample, ModalFeatures};
use crate::fusion_model::FusionClassifierModel;
use crate::metrics::render_svg;
use crate::trainer::{run_incremental, RunConfig};

pub const PROBE_FILE: &str = "probe.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Contents of `probe.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub epsilon: f64,
    pub n_samples: usize,
    /// Measured `‖x′ − x‖` over the flattened low-level features.
    pub input_norms: Vec<f64>,
    /// `‖F(x′) − F(x)‖` of the video-level feature.
    pub distances: Vec<f64>,
    pub mean: f64,
    pub fraction_exceeding: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Perturbs `features` along a uniformly random direction by exactly `epsilon`.
pub fn perturb<R: Rng + ?Sized>(features: &ModalFeatures, epsilon: f64, rng: &mut R) -> ModalFeatures {
    let flat = features.flatten();
    let mut dir: Vec<f64> = (0..flat.len()).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&dir);
    dir.iter_mut().for_each(|d| *d *= epsilon / n);
    let moved: Vec<f64> = flat.iter().zip(&dir).map(|(x, d)| x + d).collect();
    ModalFeatures::from_flat(features.snippets(), features.audio_dim(), features.visual_dim(), &moved)
        .expect("same shape as the input")
}

/// Draws `n_samples` distinct inputs, perturbs each by `epsilon` and measures
/// how far the video-level fusion output moves.
pub fn probe_lipschitz<R: Rng + ?Sized>(
    model: &FusionClassifierModel,
    samples: &[&ModalFeatures],
    epsilon: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<ProbeReport> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(HadError::InvalidConfig(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    if !model.all_finite() {
        return Err(HadError::Contract("model has non-finite parameters".into()));
    }
    if n_samples == 0 || n_samples > samples.len() {
        return Err(HadError::InvalidConfig(format!(
            "n_samples must lie in 1..={}, got {n_samples}",
            samples.len()
        )));
    }
    let mut input_norms = Vec::with_capacity(n_samples);
    let mut distances = Vec::with_capacity(n_samples);
    for i in sample(rng, samples.len(), n_samples) {
        let x = samples[i];
        let moved = perturb(x, epsilon, rng);
        let delta: Vec<f64> = moved.flatten().iter().zip(x.flatten()).map(|(a, b)| a - b).collect();
        input_norms.push(norm(&delta));
        let (a, b) = (model.fuse(x)?.video, model.fuse(&moved)?.video);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(p, q)| q - p).collect();
        distances.push(norm(&diff));
    }
    let mean = distances.iter().sum::<f64>() / n_samples as f64;
    let exceeding = distances.iter().filter(|&&d| d > epsilon).count();
    Ok(ProbeReport {
        epsilon,
        n_samples,
        input_norms,
        distances,
        mean,
        fraction_exceeding: exceeding as f64 / n_samples as f64,
    })
}

pub fn write_probe(report: &ProbeReport, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| HadError::io(dir, e))?;
    let path = dir.join(PROBE_FILE);
    let text = serde_json::to_string_pretty(report).map_err(|e| HadError::json("probe", e))?;
    fs::write(&path, text + "\n").map_err(|e| HadError::io(&path, e))?;
    Ok(path)
}

/// Dotted config key to the values it takes.
pub type SweepGrid = BTreeMap<String, Vec<Value>>;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub point: usize,
    pub seed: u64,
    pub assignment: Vec<(String, Value)>,
    pub aia: f64,
    pub fia: f64,
    pub fingerprint: String,
    pub run_dir: PathBuf,
}

/// Cartesian product of the grid, last key varying fastest.
pub fn grid_points(grid: &SweepGrid) -> Vec<Vec<(String, Value)>> {
    let mut points = vec![Vec::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut next = p.clone();
                    next.push((key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    points
}

fn cell(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

/// Runs every grid point for every seed. All configs are built and checked
/// before the first run starts. Runs go to `out/runs/p<point>_s<seed>`;
/// `out/sweep.csv` has one row per run and `out/curve_<key>.svg` plots mean
/// AIA and FIA against each swept key.
pub fn sweep(
    base: &RunConfig,
    grid: &SweepGrid,
    seeds: &[u64],
    manifest: &DatasetManifest,
    samples: &[LabeledSample],
    out: &Path,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(HadError::InvalidConfig("sweep grid is empty".into()));
    }
    if let Some((k, _)) = grid.iter().find(|(_, v)| v.is_empty()) {
        return Err(HadError::InvalidConfig(format!("sweep key `{k}` has no values")));
    }
    if seeds.is_empty() {
        return Err(HadError::InvalidConfig("sweep needs at least one seed".into()));
    }
    let points = grid_points(grid);
    let mut jobs = Vec::new();
    for (i, point) in points.iter().enumerate() {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            for (k, v) in point {
                cfg.set_value(k, v.clone())?;
            }
            jobs.push((i, seed, cfg));
        }
    }
    fs::create_dir_all(out).map_err(|e| HadError::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HadError::InvalidConfig(format!("worker pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        jobs.par_iter()
            .map(|(i, seed, cfg)| {
                let run_dir = out.join("runs").join(format!("p{i}_s{seed}"));
                let outcome = run_incremental(manifest, samples, cfg, Some(&run_dir))?;
                Ok(SweepRow {
                    point: *i,
                    seed: *seed,
                    assignment: points[*i].clone(),
                    aia: outcome.metrics.aia,
                    fia: outcome.metrics.fia,
                    fingerprint: outcome.summary.fingerprint,
                    run_dir,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let keys: Vec<&String> = grid.keys().collect();
    let mut csv = String::from("point,seed,");
    for k in &keys {
        csv.push_str(k);
        csv.push(',');
    }
    csv.push_str("aia,fia,fingerprint\n");
    for r in &rows {
        csv.push_str(&format!("{},{},", r.point, r.seed));
        for (_, v) in &r.assignment {
            csv.push_str(&cell(v));
            csv.push(',');
        }
        csv.push_str(&format!("{},{},{}\n", r.aia, r.fia, r.fingerprint));
    }
    let path = out.join(SWEEP_FILE);
    fs::write(&path, csv).map_err(|e| HadError::io(&path, e))?;

    for (ki, key) in keys.iter().enumerate() {
        let values = &grid[*key];
        let mut aia = Vec::new();
        let mut fia = Vec::new();
        for v in values {
            let hits: Vec<&SweepRow> = rows.iter().filter(|r| &r.assignment[ki].1 == v).collect();
            aia.push(hits.iter().map(|r| r.aia).sum::<f64>() / hits.len() as f64);
            fia.push(hits.iter().map(|r| r.fia).sum::<f64>() / hits.len() as f64);
        }
        let svg = render_svg(&[("AIA".to_string(), aia), ("FIA".to_string(), fia)]);
        let name = key.replace(|c: char| !c.is_ascii_alphanumeric(), "_");
        let path = out.join(format!("curve_{name}.svg"));
        fs::write(&path, svg).map_err(|e| HadError::io(&path, e))?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion_model::{FusionConfig, HeadKind};
    use crate::tensor::Mat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> FusionClassifierModel {
        let cfg = FusionConfig {
            d_model: 4,
            num_heads: 2,
            snippets: 2,
            audio_dim: 3,
            visual_dim: 2,
            positional: false,
            head: HeadKind::Cosine,
        };
        FusionClassifierModel::new(cfg, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn inputs(n: usize) -> Vec<ModalFeatures> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..n)
            .map(|_| {
                let a = crate::ham::standard_normal(2, 3, &mut rng);
                let v = crate::ham::standard_normal(2, 2, &mut rng);
                ModalFeatures::new(a, v).unwrap()
            })
            .collect()
    }

    #[test]
    fn perturbation_norm_is_exact() {
        let x = inputs(12);
        let refs: Vec<&ModalFeatures> = x.iter().collect();
        let r = probe_lipschitz(&model(), &refs, 1e-2, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(r.distances.len(), 10);
        assert!(r.input_norms.iter().all(|n| (n - 1e-2).abs() < 1e-9));
        assert!(r.distances.iter().all(|d| d.is_finite() && *d > 0.0));
        let zero = probe_lipschitz(&model(), &refs, 0.0, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(zero.distances.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn isometric_fixture_preserves_distance() {
        // Zero attention output and an orthonormal projection make the fusion
        // output the sum of two mean projections; with one snippet and audio
        // only perturbed, the distance equals the input distance.
        let mut m = model();
        for (name, r, c, _) in m.named_parameters() {
            if name.ends_with(".wo") || name.starts_with("visual.proj.w") {
                m.set_parameter(&name, Mat::zeros(r, c)).unwrap();
            }
        }
        let mut cfg = m.config().clone();
        cfg.snippets = 1;
        let mut m1 = FusionClassifierModel::new(cfg, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (name, r, c, v) in m.named_parameters() {
            m1.set_parameter(&name, Mat::from_vec(r, c, v)).unwrap();
        }
        let q = Mat::from_rows(&[vec![0.6, 0.8, 0.0, 0.0], vec![-0.8, 0.6, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]);
        m1.set_parameter("audio.proj.w", q).unwrap();
        let x = ModalFeatures::new(Mat::row_vector(vec![0.3, -0.2, 1.0]), Mat::row_vector(vec![0.0, 0.0])).unwrap();
        let moved = ModalFeatures::new(Mat::row_vector(vec![0.31, -0.2, 1.0]), x.visual().clone()).unwrap();
        let (a, b) = (m1.fuse(&x).unwrap().video, m1.fuse(&moved).unwrap().video);
        let d = norm(&a.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>());
        assert!((d - 0.01).abs() < 1e-5, "distance {d}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = inputs(3);
        let refs: Vec<&ModalFeatures> = x.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = model();
        assert!(probe_lipschitz(&m, &refs, -1.0, 2, &mut rng).is_err());
        assert!(probe_lipschitz(&m, &refs, 1e-2, 4, &mut rng).is_err());
        m.set_parameter("cls.log_scale", Mat::scalar(f64::NAN)).unwrap();
        assert!(matches!(probe_lipschitz(&m, &refs, 1e-2, 2, &mut rng), Err(HadError::Contract(_))));
    }

    #[test]
    fn grid_is_cartesian() {
        let mut g = SweepGrid::new();
        g.insert("lambda".into(), vec![0.0.into(), 0.05.into(), 0.2.into()]);
        g.insert("beta".into(), vec![1.0.into(), 5.0.into()]);
        let p = grid_points(&g);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0][0].0, "beta");
        assert_eq!(p[1][1].1, Value::from(0.05));
    }
}
