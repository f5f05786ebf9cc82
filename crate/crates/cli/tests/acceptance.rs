//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each, and
//! exits nonzero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use had_core::autograd::{Gradients, NodeId, Tape};
use had_core::feature_store::{generate_synthetic, DatasetManifest, LabeledSample, ModalFeatures, Split, SyntheticSpec};
use had_core::fusion_model::{BoundModel, FusionClassifierModel, FusionConfig, HeadKind};
use had_core::ham::{loss_hsm, loss_lsm, standard_normal, AugmentationConfig, HamNoise};
use had_core::hdm::{
    draw_hull, loss_dl, loss_hcd, loss_sl, snippet_similarity, video_similarity, HcdSwitches, HullDraws, Modality,
    VertexSource, WeightSource,
};
use had_core::metrics::{aggregate, read_metrics, read_summary};
use had_core::probe::probe_lipschitz;
use had_core::tensor::Mat;
use had_core::trainer::{run_incremental, RunConfig, RunOutcome, TaskSchedule};
use had_testkit::{fd_gradient, relative_error, similarity_oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- fixtures

const N_OLD: usize = 3;
const N_ALL: usize = 5;

fn tiny_config(head: HeadKind) -> FusionConfig {
    FusionConfig { d_model: 8, num_heads: 2, snippets: 3, audio_dim: 4, visual_dim: 5, positional: true, head }
}

fn features(rng: &mut ChaCha8Rng, cfg: &FusionConfig) -> ModalFeatures {
    ModalFeatures::new(standard_normal(cfg.snippets, cfg.audio_dim, rng), standard_normal(cfg.snippets, cfg.visual_dim, rng))
        .unwrap()
}

/// A student with `N_ALL` classes, a distinct teacher with `N_OLD`, two
/// memory and two current samples, and every draw of noise the terms use.
struct Fixture {
    student: FusionClassifierModel,
    teacher: FusionClassifierModel,
    memory: Vec<ModalFeatures>,
    current: Vec<ModalFeatures>,
    labels: Vec<usize>,
    ham: HamNoise,
    hull: HullDraws,
}

impl Fixture {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = if seed.is_multiple_of(2) { HeadKind::Cosine } else { HeadKind::Linear };
        let cfg = tiny_config(head);
        let mut student = FusionClassifierModel::new(cfg.clone(), N_OLD, &mut rng).unwrap();
        student.expand_classes(N_ALL - N_OLD, &mut rng).unwrap();
        // Linear heads start with zero bias; give it some value so its gradient is exercised.
        if head == HeadKind::Linear {
            let b: Vec<f64> = (0..N_ALL).map(|_| rng.random_range(-0.5..0.5)).collect();
            student.set_parameter("cls.b", Mat::row_vector(b)).unwrap();
        }
        let teacher = FusionClassifierModel::new(cfg.clone(), N_OLD, &mut rng).unwrap();
        let memory: Vec<ModalFeatures> = (0..2).map(|_| features(&mut rng, &cfg)).collect();
        let current: Vec<ModalFeatures> = (0..2).map(|_| features(&mut rng, &cfg)).collect();
        let labels = vec![0, 2, 3, 4];
        let batch: Vec<&ModalFeatures> = memory.iter().chain(&current).collect();
        let ham = HamNoise::draw(&batch, cfg.d_model, &mut rng);
        let hull = draw_hull(2, 2, 2, &mut rng);
        Self { student, teacher, memory, current, labels, ham, hull }
    }

    fn memory(&self) -> Vec<&ModalFeatures> {
        self.memory.iter().collect()
    }

    fn current(&self) -> Vec<&ModalFeatures> {
        self.current.iter().collect()
    }

    fn batch(&self) -> Vec<&ModalFeatures> {
        self.memory.iter().chain(&self.current).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Term {
    Cls,
    Lsm { routing: bool },
    Hsm { routing: bool },
    Sl,
    Dl,
    Ss(Modality),
    Ns(Modality),
}

/// Builds one loss term for `student` against `teacher` on `fx`'s data.
fn build_term(tape: &mut Tape, live: &BoundModel, teacher: &BoundModel, fx: &Fixture, term: Term) -> NodeId {
    let aug = AugmentationConfig::default();
    let hcd = |tape: &mut Tape| {
        loss_hcd(tape, live, teacher, &fx.memory(), &fx.current(), &fx.ham.low[..2], aug.lambda, HcdSwitches::default())
    };
    match term {
        Term::Cls => {
            let nodes = live.forward_batch(tape, fx.current.iter());
            let logits = live.classify(tape, nodes.video);
            tape.cross_entropy(logits, &fx.labels[2..])
        }
        Term::Lsm { routing } => loss_lsm(tape, live, &fx.batch(), &fx.labels, &fx.ham.low, &aug, routing).unwrap(),
        Term::Hsm { routing } => loss_hsm(tape, live, &fx.batch(), &fx.labels, &fx.ham.high, &aug, routing).unwrap(),
        Term::Sl => loss_sl(tape, live, teacher, &fx.memory(), &fx.current()).unwrap(),
        Term::Dl => loss_dl(tape, live, teacher, &fx.memory(), &fx.current(), &fx.hull).unwrap(),
        Term::Ss(Modality::Audio) => hcd(tape).ss_a.unwrap(),
        Term::Ss(Modality::Visual) => hcd(tape).ss_v.unwrap(),
        Term::Ns(Modality::Audio) => hcd(tape).ns_a.unwrap(),
        Term::Ns(Modality::Visual) => hcd(tape).ns_v.unwrap(),
    }
}

fn term_value(student: &FusionClassifierModel, fx: &Fixture, term: Term) -> f64 {
    let mut tape = Tape::new();
    let live = student.bind(&mut tape, true, true);
    let teacher = fx.teacher.bind(&mut tape, false, false);
    let id = build_term(&mut tape, &live, &teacher, fx, term);
    tape.value(id).item()
}

fn flat_grad(g: &Gradients, ids: &[NodeId], shapes: &[usize]) -> Vec<f64> {
    ids.iter()
        .zip(shapes)
        .flat_map(|(&id, &n)| g.get(id).map_or_else(|| vec![0.0; n], |m| m.as_slice().to_vec()))
        .collect()
}

/// Analytic gradient over (fusion, classifier) flat parameters.
fn term_grad(fx: &Fixture, term: Term) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let live = fx.student.bind(&mut tape, true, true);
    let teacher = fx.teacher.bind(&mut tape, false, false);
    let id = build_term(&mut tape, &live, &teacher, fx, term);
    let g = tape.backward(id);
    let sizes: Vec<usize> = fx.student.named_parameters().iter().map(|p| p.1 * p.2).collect();
    let nf = live.fusion.len();
    (flat_grad(&g, &live.fusion, &sizes[..nf]), flat_grad(&g, &live.classifier, &sizes[nf..]))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

// ---------------------------------------------------------------- criteria

fn gradient_routing() -> Outcome {
    let start = Instant::now();
    for seed in 0..50 {
        let fx = Fixture::new(1000 + seed);
        let (_, lsm_cls) = term_grad(&fx, Term::Lsm { routing: true });
        let (hsm_fusion, _) = term_grad(&fx, Term::Hsm { routing: true });
        check(max_abs(&lsm_cls) == 0.0, format!("seed {seed}: lsm reaches the classifier"))?;
        check(max_abs(&hsm_fusion) == 0.0, format!("seed {seed}: hsm reaches the fusion module"))?;
        let (_, lsm_cls_n) = term_grad(&fx, Term::Lsm { routing: false });
        let (hsm_fusion_n, _) = term_grad(&fx, Term::Hsm { routing: false });
        check(max_abs(&lsm_cls_n) > 0.0 && max_abs(&hsm_fusion_n) > 0.0, format!("seed {seed}: unrouted mode leaves a zero"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, format!("took {secs:.1}s"))?;
    Ok(format!("50 fixtures, routed cross-gradients exactly 0, unrouted nonzero, {secs:.2}s"))
}

fn snapshot_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut fx = Fixture::new(2000 + seed);
        // Same parameters on both sides, old head only.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = tiny_config(fx.student.config().head);
        let mut same = FusionClassifierModel::new(cfg, N_OLD, &mut rng).unwrap();
        for (name, r, c, v) in fx.student.named_parameters() {
            if name == "cls.w" {
                same.set_parameter(&name, Mat::from_vec(N_OLD, c, v[..N_OLD * c].to_vec())).unwrap();
            } else if name == "cls.b" {
                same.set_parameter(&name, Mat::row_vector(v[..N_OLD].to_vec())).unwrap();
            } else {
                same.set_parameter(&name, Mat::from_vec(r, c, v)).unwrap();
            }
        }
        fx.student = same.clone();
        fx.teacher = same.snapshot().model().clone();
        for term in [
            Term::Sl,
            Term::Dl,
            Term::Ss(Modality::Audio),
            Term::Ss(Modality::Visual),
            Term::Ns(Modality::Audio),
            Term::Ns(Modality::Visual),
        ] {
            let v = term_value(&fx.student, &fx, term);
            check(v.abs() < 1e-9, format!("seed {seed}: {term:?} = {v:e}"))?;
            worst = worst.max(v.abs());
        }
    }
    Ok(format!("20 batches x 6 terms, max |loss| = {worst:.1e}"))
}

/// One random coordinate of every parameter tensor, as flat indices.
fn sample_coordinates(model: &FusionClassifierModel, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (_, r, c, _) in model.named_parameters() {
        out.push(offset + rng.random_range(0..r * c));
        offset += r * c;
    }
    out
}

fn gradient_correctness() -> Outcome {
    let terms = [
        Term::Cls,
        Term::Lsm { routing: true },
        Term::Lsm { routing: false },
        Term::Hsm { routing: true },
        Term::Hsm { routing: false },
        Term::Sl,
        Term::Dl,
        Term::Ss(Modality::Audio),
        Term::Ss(Modality::Visual),
        Term::Ns(Modality::Audio),
        Term::Ns(Modality::Visual),
    ];
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..20 {
        let fx = Fixture::new(3000 + seed);
        let nf = fx.student.fusion_param_count();
        let p = fx.student.partition();
        let full: Vec<f64> = p.fusion_params.iter().chain(&p.classifier_params).copied().collect();
        let coords = sample_coordinates(&fx.student, &mut ChaCha8Rng::seed_from_u64(seed));
        for term in terms {
            let (gf, gc) = term_grad(&fx, term);
            let analytic: Vec<f64> = gf.iter().chain(&gc).copied().collect();
            // Routed terms are stop-gradient by design; compare on the partition they train.
            let selected: Vec<usize> = coords
                .iter()
                .copied()
                .filter(|&i| match term {
                    Term::Lsm { routing: true } => i < nf,
                    Term::Hsm { routing: true } => i >= nf,
                    _ => true,
                })
                .collect();
            let start: Vec<f64> = selected.iter().map(|&i| full[i]).collect();
            let numeric = fd_gradient(
                |sub| {
                    let mut params = full.clone();
                    for (&i, &v) in selected.iter().zip(sub) {
                        params[i] = v;
                    }
                    let mut m = fx.student.clone();
                    m.set_fusion_params(&params[..nf]).unwrap();
                    m.set_classifier_params(&params[nf..]).unwrap();
                    term_value(&m, &fx, term)
                },
                &start,
                1e-5,
            );
            for (k, &i) in selected.iter().enumerate() {
                let err = relative_error(numeric[k], analytic[i], 1e-6);
                check(
                    err < 1e-3,
                    format!("seed {seed} {term:?} coord {i}: fd {:e} vs analytic {:e}", numeric[k], analytic[i]),
                )?;
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    Ok(format!("20 seeds, 11 term variants, {checked} coordinates, max rel err {worst:.1e}"))
}

fn convexity() -> Outcome {
    let cfg = tiny_config(HeadKind::Cosine);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [2usize, 4, 16] {
        let batch: Vec<ModalFeatures> = (0..n).map(|_| features(&mut rng, &cfg)).collect();
        let refs: Vec<&ModalFeatures> = batch.iter().collect();
        let flats: Vec<Vec<f64>> = batch.iter().map(|f| f.flatten()).collect();
        let len = flats[0].len();
        let lo: Vec<f64> = (0..len).map(|j| flats.iter().map(|f| f[j]).fold(f64::INFINITY, f64::min)).collect();
        let hi: Vec<f64> = (0..len).map(|j| flats.iter().map(|f| f[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
        for d in 0..10_000 {
            let w = rng.next_weights(n);
            check(w.alpha().iter().all(|a| (0.0..=1.0).contains(a)), format!("n={n} draw {d}: alpha outside [0,1]"))?;
            let s: f64 = w.alpha().iter().sum();
            check((s - 1.0).abs() <= 1e-6, format!("n={n} draw {d}: sum {s}"))?;
            let out = w.combine(&refs).flatten();
            let inside = out.iter().enumerate().all(|(j, &x)| x >= lo[j] - 1e-12 && x <= hi[j] + 1e-12);
            check(inside, format!("n={n} draw {d}: output leaves the bounding box"))?;
        }
        for (i, f) in batch.iter().enumerate() {
            let v = VertexSource(i).next_weights(n).combine(&refs);
            check(&v == f, format!("n={n}: vertex {i} not recovered"))?;
        }
    }
    Ok("3 batch sizes x 10000 draws in the simplex and the box, vertices exact".into())
}

fn similarity_stochasticity() -> Outcome {
    let mut worst_sum: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    let mut count = 0;
    for seed in 0..250 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let cfg = tiny_config(HeadKind::Cosine);
        let model = FusionClassifierModel::new(cfg.clone(), 3, &mut rng).unwrap();
        let rows: Vec<ModalFeatures> = (0..1 + seed as usize % 3).map(|_| features(&mut rng, &cfg)).collect();
        let pool: Vec<ModalFeatures> = (0..2 + seed as usize % 4).map(|_| features(&mut rng, &cfg)).collect();
        let rows_r: Vec<&ModalFeatures> = rows.iter().collect();
        let pool_r: Vec<&ModalFeatures> = pool.iter().collect();
        let fused = |b: &[ModalFeatures]| b.iter().map(|f| model.fuse(f).unwrap()).collect::<Vec<_>>();
        let (fr, fp) = (fused(&rows), fused(&pool));
        for m in Modality::BOTH {
            let pick = |o: &had_core::fusion_model::FusionOutputs| match m {
                Modality::Audio => (o.audio_video.clone(), o.audio_snippets.clone()),
                Modality::Visual => (o.visual_video.clone(), o.visual_snippets.clone()),
            };
            let video = video_similarity(&model, &rows_r, &pool_r, m).map_err(|e| e.to_string())?;
            let oracle_v = similarity_oracle(
                &fr.iter().map(|o| pick(o).0).collect::<Vec<_>>(),
                &fp.iter().map(|o| pick(o).0).collect::<Vec<_>>(),
            );
            let snip = snippet_similarity(&model, &pool[0], &rows[0], m).map_err(|e| e.to_string())?;
            let to_rows = |x: &Mat| (0..x.rows()).map(|r| x.row(r).to_vec()).collect::<Vec<_>>();
            let oracle_s = similarity_oracle(&to_rows(&pick(&fr[0]).1), &to_rows(&pick(&fp[0]).1));
            for (mat, oracle) in [(&video, &oracle_v), (&snip, &oracle_s)] {
                for (r, expected) in oracle.iter().enumerate() {
                    let s: f64 = mat.row(r).iter().sum();
                    worst_sum = worst_sum.max((s - 1.0).abs());
                    for (a, b) in mat.row(r).iter().zip(expected) {
                        worst_oracle = worst_oracle.max((a - b).abs());
                    }
                }
                count += 1;
            }
        }
    }
    check(worst_sum <= 1e-6, format!("row sum off by {worst_sum:e}"))?;
    check(worst_oracle < 1e-6, format!("oracle mismatch {worst_oracle:e}"))?;
    Ok(format!("{count} matrices, max |row sum - 1| {worst_sum:.1e}, max oracle diff {worst_oracle:.1e}"))
}

fn metrics_oracle(run_dirs: &[PathBuf]) -> Outcome {
    let m = aggregate(&[90.0, 80.0, 70.0]).map_err(|e| e.to_string())?;
    check((m.aia - 80.0).abs() < 1e-12 && (m.fia - 70.0).abs() < 1e-12, format!("aggregate gave {m:?}"))?;
    check(!run_dirs.is_empty(), "no stored runs")?;
    for dir in run_dirs {
        let records = read_metrics(dir).map_err(|e| e.to_string())?;
        let summary = read_summary(dir).map_err(|e| e.to_string())?;
        let ia: Vec<f64> = records.iter().map(|r| r.ia).collect();
        let again = aggregate(&ia).map_err(|e| e.to_string())?;
        check(
            (again.aia - summary.aia).abs() <= 1e-6 && (again.fia - summary.fia).abs() <= 1e-6,
            format!("{}: recomputed {}/{} vs summary {}/{}", dir.display(), again.aia, again.fia, summary.aia, summary.fia),
        )?;
    }
    Ok(format!("aggregate(90,80,70) = 80/70; {} stored runs consistent", run_dirs.len()))
}

struct Benchmark {
    manifest: DatasetManifest,
    samples: Vec<LabeledSample>,
    runs: Vec<(String, u64, RunOutcome, PathBuf)>,
    baseline_secs: f64,
}

fn mode_config(mode: &str, seed: u64) -> RunConfig {
    let mut c = RunConfig::preset("synthetic").unwrap();
    c.seed = seed;
    match mode {
        "baseline" => c.ablate("baseline").unwrap(),
        "ham-only" => c.ablate("hdm").unwrap(),
        "hdm-only" => c.ablate("ham").unwrap(),
        _ => {}
    }
    c
}

fn run_benchmark(root: &Path) -> Benchmark {
    let (manifest, samples) = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let mut runs = Vec::new();
    let mut baseline_secs = 0.0;
    for mode in ["baseline", "full", "ham-only", "hdm-only"] {
        for seed in 0..3 {
            let dir = root.join(format!("{mode}_s{seed}"));
            let start = Instant::now();
            let out = run_incremental(&manifest, &samples, &mode_config(mode, seed), Some(&dir)).unwrap();
            if mode == "baseline" {
                baseline_secs += start.elapsed().as_secs_f64();
            }
            runs.push((mode.to_string(), seed, out, dir));
        }
    }
    Benchmark { manifest, samples, runs, baseline_secs }
}

fn mean_aia(b: &Benchmark, mode: &str) -> f64 {
    let v: Vec<f64> = b.runs.iter().filter(|r| r.0 == mode).map(|r| r.2.metrics.aia).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn forgetting(b: &Benchmark) -> Outcome {
    let mut parts = Vec::new();
    for (_, seed, out, _) in b.runs.iter().filter(|r| r.0 == "baseline") {
        let (first, fia) = (out.metrics.ia[0], out.metrics.fia);
        check(fia <= first - 10.0, format!("seed {seed}: phase-1 IA {first:.1}, FIA {fia:.1}"))?;
        parts.push(format!("{first:.1}->{fia:.1}"));
    }
    check(b.baseline_secs < 600.0, format!("baseline runs took {:.0}s", b.baseline_secs))?;
    Ok(format!("baseline phase-1 IA -> FIA per seed: {}; {:.1}s", parts.join(", "), b.baseline_secs))
}

fn had_helps(b: &Benchmark) -> Outcome {
    let (base, full, ham, hdm) =
        (mean_aia(b, "baseline"), mean_aia(b, "full"), mean_aia(b, "ham-only"), mean_aia(b, "hdm-only"));
    let summary = format!("mean AIA baseline {base:.2}, full {full:.2}, ham-only {ham:.2}, hdm-only {hdm:.2}");
    check(full >= base + 5.0, format!("full not 5 points above baseline: {summary}"))?;
    check(ham >= base && hdm >= base, format!("a single component is below baseline: {summary}"))?;
    Ok(summary)
}

fn had(args: &[&str], cwd: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_had"))
        .args(args)
        .current_dir(cwd)
        .env("HAD_NUM_WORKERS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("had {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn same_metrics(a: &Path, b: &Path) -> Result<(), String> {
    let (x, y) = (read_summary(a).map_err(|e| e.to_string())?, read_summary(b).map_err(|e| e.to_string())?);
    check(x.fingerprint == y.fingerprint, format!("fingerprints differ: {} vs {}", a.display(), b.display()))?;
    check(
        (x.aia - y.aia).abs() <= 1e-6 && (x.fia - y.fia).abs() <= 1e-6,
        format!("{}: {}/{} vs {}/{}", b.display(), x.aia, x.fia, y.aia, y.fia),
    )
}

fn determinism(root: &Path, stored: &mut Vec<PathBuf>) -> Outcome {
    had(&["generate", "--out", "ds", "--seed", "7"], root)?;
    had(&["train", "--dataset", "ds", "--out", "r1", "--seed", "3"], root)?;
    had(&["train", "--from-config", "r1", "--out", "r2"], root)?;
    same_metrics(&root.join("r1"), &root.join("r2"))?;
    had(&["train", "--from-config", "r1/config.json", "--out", "r3"], root)?;
    same_metrics(&root.join("r1"), &root.join("r3"))?;
    let eval: serde_json::Value = serde_json::from_str(&had(&["eval", "--run", "r1"], root)?).map_err(|e| e.to_string())?;
    check(eval["matches_summary"] == true, "eval disagrees with summary.json")?;
    had(&["probe-lipschitz", "--run", "r1", "--out", "p1", "--seed", "2"], root)?;
    had(&["probe-lipschitz", "--run", "r1", "--out", "p2", "--seed", "2"], root)?;
    let read = |p: &str| std::fs::read(root.join(p).join("probe.json")).map_err(|e| e.to_string());
    check(read("p1")? == read("p2")?, "probe reports differ")?;
    had(&["sweep", "--dataset", "ds", "--grid", "lambda=0,0.05", "--out", "sw"], root)?;
    had(&["train", "--from-config", "sw/runs/p1_s0", "--out", "r4"], root)?;
    same_metrics(&root.join("sw/runs/p1_s0"), &root.join("r4"))?;
    stored.extend(["r1", "r2", "r3", "r4", "sw/runs/p0_s0", "sw/runs/p1_s0"].iter().map(|p| root.join(p)));
    Ok("train, eval, probe and sweep re-runs reproduce AIA/FIA and fingerprints".into())
}

fn lipschitz(b: &Benchmark) -> Outcome {
    let (_, _, out, _) = b.runs.iter().find(|r| r.0 == "full" && r.1 == 0).ok_or("no full run")?;
    let test: Vec<&ModalFeatures> = b.samples.iter().filter(|s| s.split == Split::Test).map(|s| &s.features).collect();
    check(b.manifest.num_classes == 20, "unexpected dataset")?;
    let r = probe_lipschitz(&out.model, &test, 1e-2, 10, &mut ChaCha8Rng::seed_from_u64(10)).map_err(|e| e.to_string())?;
    check(r.distances.len() == 10, "wrong sample count")?;
    check(r.input_norms.iter().all(|n| (n - 1e-2).abs() <= 1e-9), "perturbation norm off")?;
    check(r.distances.iter().all(|d| d.is_finite() && *d > 0.0), "non-positive or non-finite distance")?;
    Ok(format!("mean output distance {:.3e}, fraction exceeding epsilon {:.1}", r.mean, r.fraction_exceeding))
}

fn schedule_presets() -> Outcome {
    let expect = [
        ("ave-3", 28, 10, 6, 140),
        ("ave-6", 28, 10, 3, 140),
        ("avk100-5", 100, 50, 10, 1000),
        ("avk100-10", 100, 50, 5, 1000),
        ("avk200-10", 200, 100, 10, 2000),
        ("avk200-20", 200, 100, 5, 2000),
        ("avk400-20", 400, 200, 10, 4000),
        ("avk400-40", 400, 200, 5, 4000),
    ];
    for (name, total, base, per, mem) in expect {
        let s = TaskSchedule::preset(name).map_err(|e| e.to_string())?;
        check(
            (s.num_classes, s.base_classes, s.classes_per_increment, s.memory_size) == (total, base, per, mem),
            format!("{name}: {s:?}"),
        )?;
    }
    Ok("AVE 10+6/3 mem 140, AVK-100 50+10/5 mem 1000, AVK-200 100+10/5 mem 2000, AVK-400 200+10/5 mem 4000".into())
}

/// Runs one criterion, catching panics, and records its report line.
fn run(results: &mut Vec<(usize, String, bool)>, id: usize, name: &str, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = start.elapsed().as_secs_f64();
    let line = match &outcome {
        Ok(detail) => format!("PASS [{id:>2}] {name}: {detail} ({secs:.1}s)"),
        Err(why) => format!("FAIL [{id:>2}] {name}: {why} ({secs:.1}s)"),
    };
    eprintln!("{line}");
    results.push((id, line, outcome.is_ok()));
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut results = Vec::new();
    run(&mut results, 1, "gradient routing", gradient_routing);
    run(&mut results, 2, "snapshot identity", snapshot_identity);
    run(&mut results, 3, "gradient correctness", gradient_correctness);
    run(&mut results, 4, "convexity invariants", convexity);
    run(&mut results, 5, "similarity stochasticity", similarity_stochasticity);

    let bench = run_benchmark(&tmp.path().join("bench"));
    let cli_root = tmp.path().join("cli");
    std::fs::create_dir_all(&cli_root).unwrap();
    let mut stored: Vec<PathBuf> = bench.runs.iter().map(|r| r.3.clone()).collect();
    // Runs before the metrics check so its stored runs are covered too.
    run(&mut results, 9, "determinism", || determinism(&cli_root, &mut stored));
    run(&mut results, 6, "metrics oracle", || metrics_oracle(&stored));
    run(&mut results, 7, "forgetting exists", || forgetting(&bench));
    run(&mut results, 8, "HAD helps", || had_helps(&bench));
    run(&mut results, 10, "Lipschitz probe", || lipschitz(&bench));
    run(&mut results, 11, "schedule presets", schedule_presets);

    results.sort_by_key(|r| r.0);
    println!();
    for (_, line, _) in &results {
        println!("{line}");
    }
    let failed = results.iter().filter(|r| !r.2).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
