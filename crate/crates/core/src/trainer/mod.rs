//! The incremental protocol: per-phase training against the overall
//! objective, exemplar memory upkeep, snapshots, evaluation and run artifacts.

mod config;
mod memory;
mod schedule;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{HamSection, HcdSection, HldSection, ModelSection, OptimSection, RunConfig, ABLATIONS};
pub use memory::{quotas, update_memory, Exemplar, MemoryBank};
pub use schedule::{preset_names, TaskSchedule};

use crate::autograd::{Gradients, NodeId, Tape};
use crate::error::{HadError, Result};
use crate::feature_store::{DatasetManifest, LabeledSample, ModalFeatures, Split};
use crate::fusion_model::{BatchNodes, BoundModel, FusionClassifierModel, FusionConfig, ModelSnapshot};
use crate::ham::{hsm_from_video, lsm_from_video, HamNoise};
use crate::hdm::{hcd_from_nodes, logical_from_logits, CorrelativeView, HullDraws};
use crate::metrics::{aggregate, AccuracyCount, PhaseRecord, RunMetrics, RunSummary, METRICS_FILE, SUMMARY_FILE};
use crate::tensor::Mat;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl LossWeights {
    pub fn new(beta: f64, gamma: f64, eta: f64) -> Result<Self> {
        for (k, v) in [("beta", beta), ("gamma", gamma), ("eta", eta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(HadError::InvalidConfig(format!("{k} must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self { beta, gamma, eta })
    }
}

pub const TERMS: [&str; 9] = ["cls", "lsm", "hsm", "sl", "dl", "ss_a", "ns_a", "ss_v", "ns_v"];

/// Per-step loss values. Skipped terms hold 0 and are named in `skipped`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub lsm: f64,
    pub hsm: f64,
    pub sl: f64,
    pub dl: f64,
    pub ss_a: f64,
    pub ns_a: f64,
    pub ss_v: f64,
    pub ns_v: f64,
    pub total: f64,
    pub skipped: Vec<String>,
}

impl LossBreakdown {
    pub fn term(&self, name: &str) -> f64 {
        match name {
            "cls" => self.cls,
            "lsm" => self.lsm,
            "hsm" => self.hsm,
            "sl" => self.sl,
            "dl" => self.dl,
            "ss_a" => self.ss_a,
            "ns_a" => self.ns_a,
            "ss_v" => self.ss_v,
            "ns_v" => self.ns_v,
            "total" => self.total,
            _ => panic!("unknown loss term `{name}`"),
        }
    }

    fn term_mut(&mut self, name: &str) -> &mut f64 {
        match name {
            "cls" => &mut self.cls,
            "lsm" => &mut self.lsm,
            "hsm" => &mut self.hsm,
            "sl" => &mut self.sl,
            "dl" => &mut self.dl,
            "ss_a" => &mut self.ss_a,
            "ns_a" => &mut self.ns_a,
            "ss_v" => &mut self.ss_v,
            "ns_v" => &mut self.ns_v,
            "total" => &mut self.total,
            _ => panic!("unknown loss term `{name}`"),
        }
    }

    pub fn is_skipped(&self, name: &str) -> bool {
        self.skipped.iter().any(|s| s == name)
    }

    /// `cls + β(lsm+hsm) + γ(sl+dl) + η(ss_a+ns_a+ss_v+ns_v)`
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.cls
            + w.beta * (self.lsm + self.hsm)
            + w.gamma * (self.sl + self.dl)
            + w.eta * (self.ss_a + self.ns_a + self.ss_v + self.ns_v)
    }

    /// Field-wise mean; a term counts as skipped only if every step skipped it.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let mut out = LossBreakdown::default();
        if items.is_empty() {
            return out;
        }
        let n = items.len() as f64;
        for name in TERMS.iter().chain(&["total"]) {
            *out.term_mut(name) = items.iter().map(|b| b.term(name)).sum::<f64>() / n;
        }
        out.skipped = TERMS
            .iter()
            .filter(|t| items.iter().all(|b| b.is_skipped(t)))
            .map(|t| t.to_string())
            .collect();
        out
    }
}

/// Adam with per-tensor step counts; tensors without a gradient are left alone.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: Vec<i32>,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(model: &FusionClassifierModel, optim: &OptimSection) -> Self {
        let shapes: Vec<(usize, usize)> = model.named_parameters().iter().map(|p| (p.1, p.2)).collect();
        Self {
            lr: optim.lr,
            beta1: optim.beta1,
            beta2: optim.beta2,
            eps: optim.eps,
            steps: vec![0; shapes.len()],
            m: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
        }
    }

    /// `params` are the bound parameter nodes in model order.
    pub fn step(&mut self, model: &mut FusionClassifierModel, params: &[NodeId], grads: &Gradients) {
        for (i, p) in model.params_mut().enumerate() {
            let Some(g) = grads.get(params[i]) else { continue };
            self.steps[i] += 1;
            let t = self.steps[i];
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (m, v) = (self.m[i].as_mut_slice(), self.v[i].as_mut_slice());
            for (j, (w, &gj)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Sample indices for one optimisation step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepIndices {
    /// Into the phase's training samples.
    pub current: Vec<usize>,
    /// Into the memory bank.
    pub memory: Vec<usize>,
    /// Current-class samples drawn to match the exemplars, into the phase's training samples.
    pub current_extra: Vec<usize>,
}

/// One epoch of steps: a seeded shuffle of the current samples in chunks of
/// `batch_size`, each paired with an exemplar batch of half old exemplars and
/// half current samples (empty when the bank is).
pub fn build_batches<R: Rng + ?Sized>(n_current: usize, n_memory: usize, batch_size: usize, rng: &mut R) -> Vec<StepIndices> {
    assert!(batch_size > 0, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..n_current).collect();
    order.shuffle(rng);
    let half = (batch_size / 2).max(1);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let (memory, current_extra) = if n_memory == 0 {
                (Vec::new(), Vec::new())
            } else {
                (
                    sample(rng, n_memory, half.min(n_memory)).into_vec(),
                    sample(rng, n_current, half.min(n_current)).into_vec(),
                )
            };
            StepIndices { current: chunk.to_vec(), memory, current_extra }
        })
        .collect()
}

pub struct StepBatch<'a> {
    pub current: Vec<&'a Exemplar>,
    pub memory: Vec<&'a Exemplar>,
    pub current_extra: Vec<&'a Exemplar>,
}

impl<'a> StepBatch<'a> {
    pub fn gather(idx: &StepIndices, phase_data: &'a [Exemplar], bank: &'a MemoryBank) -> Self {
        Self {
            current: idx.current.iter().map(|&i| &phase_data[i]).collect(),
            memory: idx.memory.iter().map(|&i| &bank.entries()[i]).collect(),
            current_extra: idx.current_extra.iter().map(|&i| &phase_data[i]).collect(),
        }
    }

    /// Old exemplars followed by the matching current samples.
    pub fn exemplar_batch(&self) -> Vec<&'a Exemplar> {
        self.memory.iter().chain(&self.current_extra).copied().collect()
    }
}

/// All randomness of one step, drawn up front so a step can be replayed.
#[derive(Clone, Debug, PartialEq)]
pub struct StepNoise {
    /// Over the exemplar batch.
    pub ham: HamNoise,
    pub hull: HullDraws,
}

impl StepNoise {
    pub fn draw<R: Rng + ?Sized>(batch: &StepBatch, cfg: &RunConfig, rng: &mut R) -> Self {
        let ex: Vec<&ModalFeatures> = batch.exemplar_batch().iter().map(|e| &e.features).collect();
        let ham = HamNoise::draw(&ex, cfg.model.d_model, rng);
        let n_draws = match cfg.hld.n_draws {
            0 => batch.memory.len().max(batch.current_extra.len()),
            n => n,
        };
        let hull = HullDraws::draw(batch.memory.len(), batch.current_extra.len(), n_draws, rng);
        Self { ham, hull }
    }
}

/// The recorded computation of one step.
pub struct StepGraph {
    pub tape: Tape,
    pub total: NodeId,
    /// Bound parameters: fusion partition then classifier partition.
    pub fusion: Vec<NodeId>,
    pub classifier: Vec<NodeId>,
    /// Unweighted loss terms that were computed.
    pub terms: Vec<(&'static str, NodeId)>,
    pub breakdown: LossBreakdown,
}

impl StepGraph {
    pub fn params(&self) -> Vec<NodeId> {
        self.fusion.iter().chain(&self.classifier).copied().collect()
    }
}

fn features<'a>(batch: &[&'a Exemplar]) -> Vec<&'a ModalFeatures> {
    batch.iter().map(|e| &e.features).collect()
}

fn labels(batch: &[&Exemplar]) -> Vec<usize> {
    batch.iter().map(|e| e.label).collect()
}

fn forward(tape: &mut Tape, model: &BoundModel, batch: &[&ModalFeatures]) -> Option<BatchNodes> {
    (!batch.is_empty()).then(|| model.forward_batch(tape, batch.iter().copied()))
}

fn forward_owned(tape: &mut Tape, model: &BoundModel, batch: &[ModalFeatures]) -> Option<BatchNodes> {
    (!batch.is_empty()).then(|| model.forward_batch(tape, batch))
}

fn stack_video(tape: &mut Tape, parts: &[&Option<BatchNodes>]) -> NodeId {
    let ids: Vec<NodeId> = parts.iter().filter_map(|p| p.as_ref().map(|b| b.video)).collect();
    if ids.len() == 1 {
        ids[0]
    } else {
        tape.concat_rows(&ids)
    }
}

/// Builds the full objective for one step.
pub fn build_step(
    model: &FusionClassifierModel,
    snapshot: Option<&ModelSnapshot>,
    batch: &StepBatch,
    noise: &StepNoise,
    cfg: &RunConfig,
) -> StepGraph {
    let mut tape = Tape::new();
    let live = model.bind(&mut tape, true, true);
    let mut terms: Vec<(&'static str, NodeId)> = Vec::new();

    let cur = features(&batch.current);
    let cur_nodes = live.forward_batch(&mut tape, cur.iter().copied());
    let logits = live.classify(&mut tape, cur_nodes.video);
    terms.push(("cls", tape.cross_entropy(logits, &labels(&batch.current))));

    let mem = features(&batch.memory);
    let extra = features(&batch.current_extra);
    let ex_batch = batch.exemplar_batch();
    let ex_labels = labels(&ex_batch);
    let has_exemplars = !ex_batch.is_empty();
    let ham = cfg.ham_switches().filter(|_| has_exemplars);
    let hld = cfg.hld_switches().filter(|_| has_exemplars && snapshot.is_some());
    let hcd = cfg.hcd_switches().filter(|_| !mem.is_empty() && snapshot.is_some());

    let need_aug_mem = ham.is_some_and(|h| h.low_level) || hcd.is_some();
    let need_aug_extra = ham.is_some_and(|h| h.low_level);
    let need_clean = ham.is_some_and(|h| h.high_level) || hld.is_some_and(|h| h.sld) || hcd.is_some();

    let lambda = cfg.lambda;
    let (low_mem, low_extra) = noise.ham.low.split_at(mem.len());
    let aug_mem: Vec<ModalFeatures> =
        if need_aug_mem { mem.iter().zip(low_mem).map(|(f, z)| z.apply(f, lambda)).collect() } else { Vec::new() };
    let aug_extra: Vec<ModalFeatures> = if need_aug_extra {
        extra.iter().zip(low_extra).map(|(f, z)| z.apply(f, lambda)).collect()
    } else {
        Vec::new()
    };
    let s_aug_mem = forward_owned(&mut tape, &live, &aug_mem);
    let s_aug_extra = forward_owned(&mut tape, &live, &aug_extra);
    let (s_clean_mem, s_clean_extra) = if need_clean {
        (forward(&mut tape, &live, &mem), forward(&mut tape, &live, &extra))
    } else {
        (None, None)
    };

    if let Some(sw) = ham {
        if sw.low_level {
            let video = stack_video(&mut tape, &[&s_aug_mem, &s_aug_extra]);
            terms.push(("lsm", lsm_from_video(&mut tape, &live, video, &ex_labels, sw.routing)));
        }
        if sw.high_level {
            let video = stack_video(&mut tape, &[&s_clean_mem, &s_clean_extra]);
            terms.push(("hsm", hsm_from_video(&mut tape, &live, video, &noise.ham.high, lambda, &ex_labels, sw.routing)));
        }
    }

    if let Some(snap) = snapshot.filter(|_| hld.is_some() || hcd.is_some()) {
        let teacher = snap.bind(&mut tape);
        let n_old = teacher.num_classes();
        let t_clean_mem = forward(&mut tape, &teacher, &mem);
        let t_clean_extra = forward(&mut tape, &teacher, &extra);

        if let Some(sw) = hld {
            if sw.sld {
                let mut pairs = Vec::new();
                for (t, s) in [(&t_clean_mem, &s_clean_mem), (&t_clean_extra, &s_clean_extra)] {
                    if let (Some(t), Some(s)) = (t, s) {
                        let tl = teacher.classify(&mut tape, t.video);
                        let sl = live.classify(&mut tape, s.video);
                        pairs.push((tl, sl));
                    }
                }
                if let Some(id) = logical_from_logits(&mut tape, &pairs, n_old) {
                    terms.push(("sl", id));
                }
            }
            if sw.dld {
                let mut pairs = Vec::new();
                for (src, weights) in [(&mem, &noise.hull.memory), (&extra, &noise.hull.current)] {
                    if src.is_empty() || weights.is_empty() {
                        continue;
                    }
                    let hull: Vec<ModalFeatures> = weights.iter().map(|w| w.combine(src)).collect();
                    let t = teacher.forward_batch(&mut tape, &hull);
                    let s = live.forward_batch(&mut tape, &hull);
                    let tl = teacher.classify(&mut tape, t.video);
                    let sl = live.classify(&mut tape, s.video);
                    pairs.push((tl, sl));
                }
                if let Some(id) = logical_from_logits(&mut tape, &pairs, n_old) {
                    terms.push(("dl", id));
                }
            }
        }

        if let Some(sw) = hcd {
            let t_view = CorrelativeView {
                augmented_memory: teacher.forward_batch(&mut tape, &aug_mem),
                clean_memory: t_clean_mem.expect("memory is non-empty"),
                clean_current: t_clean_extra,
            };
            let s_view = CorrelativeView {
                augmented_memory: s_aug_mem.expect("augmented memory forward"),
                clean_memory: s_clean_mem.expect("clean memory forward"),
                clean_current: s_clean_extra,
            };
            let out = hcd_from_nodes(&mut tape, &t_view, &s_view, sw);
            for (name, id) in [("ss_a", out.ss_a), ("ns_a", out.ns_a), ("ss_v", out.ss_v), ("ns_v", out.ns_v)] {
                if let Some(id) = id {
                    terms.push((name, id));
                }
            }
        }
    }

    let weight = |name: &str| match name {
        "cls" => 1.0,
        "lsm" | "hsm" => cfg.beta,
        "sl" | "dl" => cfg.gamma,
        _ => cfg.eta,
    };
    let weighted: Vec<NodeId> = terms.iter().map(|&(name, id)| tape.scale(id, weight(name))).collect();
    let total = tape.sum_scalars(&weighted);

    let mut breakdown = LossBreakdown::default();
    for &(name, id) in &terms {
        *breakdown.term_mut(name) = tape.value(id).item();
    }
    breakdown.total = tape.value(total).item();
    breakdown.skipped =
        TERMS.iter().filter(|t| !terms.iter().any(|(n, _)| n == *t)).map(|t| t.to_string()).collect();
    let (fusion, classifier) = (live.fusion.clone(), live.classifier.clone());
    StepGraph { tape, total, fusion, classifier, terms, breakdown }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains one phase in place and returns the per-step loss history.
pub fn train_phase<R: Rng + ?Sized>(
    model: &mut FusionClassifierModel,
    phase_data: &[Exemplar],
    bank: &MemoryBank,
    snapshot: Option<&ModelSnapshot>,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<Vec<LossBreakdown>> {
    if phase_data.is_empty() {
        return Err(HadError::EmptyDataset);
    }
    let mut adam = Adam::new(model, &cfg.optim);
    let mut history = Vec::new();
    let mut step = 0;
    for _ in 0..cfg.optim.epochs {
        for idx in build_batches(phase_data.len(), bank.len(), cfg.optim.batch_size, rng) {
            let batch = StepBatch::gather(&idx, phase_data, bank);
            let noise = StepNoise::draw(&batch, cfg, rng);
            let graph = build_step(model, snapshot, &batch, &noise, cfg);
            for &(name, id) in &graph.terms {
                if !graph.tape.value(id).item().is_finite() {
                    return Err(HadError::NonFinite { term: name.to_string(), step });
                }
            }
            let grads = graph.tape.backward(graph.total);
            adam.step(model, &graph.params(), &grads);
            if !model.all_finite() {
                return Err(HadError::NonFinite { term: "parameters".into(), step });
            }
            history.push(graph.breakdown);
            step += 1;
        }
    }
    Ok(history)
}

pub fn evaluate(model: &FusionClassifierModel, test: &[&Exemplar]) -> Result<AccuracyCount> {
    let feats: Vec<&ModalFeatures> = test.iter().map(|e| &e.features).collect();
    let preds = model.predict(&feats)?;
    AccuracyCount::from_predictions(&preds, &labels(test))
}

/// Train and test samples relabelled to head indices.
struct Relabelled {
    train: BTreeMap<usize, Vec<Exemplar>>,
    test: Vec<Exemplar>,
}

fn relabel(samples: &[LabeledSample], class_order: &[usize]) -> Relabelled {
    let mut head_of = vec![0; class_order.len()];
    for (head, &label) in class_order.iter().enumerate() {
        head_of[label] = head;
    }
    let mut train: BTreeMap<usize, Vec<Exemplar>> = BTreeMap::new();
    let mut test = Vec::new();
    for s in samples {
        let e = Exemplar { id: s.id.clone(), features: s.features.clone(), label: head_of[s.label] };
        match s.split {
            Split::Train => train.entry(e.label).or_default().push(e),
            Split::Test => test.push(e),
            Split::Valid => {}
        }
    }
    Relabelled { train, test }
}

fn seen_test(test: &[Exemplar], classes_seen: usize) -> Vec<&Exemplar> {
    test.iter().filter(|e| e.label < classes_seen).collect()
}

pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub records: Vec<PhaseRecord>,
    pub model: FusionClassifierModel,
    pub summary: RunSummary,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HadError::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| HadError::io(path, e))
}

pub fn checkpoint_dir(run_dir: &Path, phase: usize) -> std::path::PathBuf {
    run_dir.join(format!("phase_{phase}")).join("checkpoint")
}

/// Runs every phase of the schedule. With `out_dir`, persists the config,
/// per-phase checkpoints, `metrics.jsonl` and `summary.json`.
pub fn run_incremental(
    manifest: &DatasetManifest,
    samples: &[LabeledSample],
    cfg: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let sched = &cfg.schedule;
    if manifest.num_classes != sched.num_classes {
        return Err(HadError::Schedule(format!(
            "dataset has {} classes, schedule expects {}",
            manifest.num_classes, sched.num_classes
        )));
    }
    let fusion_cfg = FusionConfig {
        d_model: cfg.model.d_model,
        num_heads: cfg.model.num_heads,
        snippets: manifest.snippets_per_video,
        audio_dim: manifest.audio_dim,
        visual_dim: manifest.visual_dim,
        positional: cfg.model.positional,
        head: cfg.model.head,
    };
    fusion_cfg.validate()?;
    let class_order = sched.class_order(cfg.seed);
    let data = relabel(samples, &class_order);
    let fingerprint = cfg.fingerprint();

    let mut metrics_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| HadError::io(dir, e))?;
            cfg.save(&dir.join(CONFIG_FILE))?;
            let path = dir.join(METRICS_FILE);
            Some((fs::File::create(&path).map_err(|e| HadError::io(&path, e))?, path))
        }
        None => None,
    };

    let mut init_rng = stream(cfg.seed, 1);
    let mut train_rng = stream(cfg.seed, 2);
    let mut memory_rng = stream(cfg.seed, 3);
    let mut model = FusionClassifierModel::new(fusion_cfg, sched.base_classes, &mut init_rng)?;
    let mut bank = MemoryBank::new(sched.memory_size);
    let mut records = Vec::new();
    for phase in 1..=sched.phases() {
        let classes = sched.phase_classes(phase);
        let snapshot = if phase > 1 {
            let snap = model.snapshot();
            model.expand_classes(classes.len(), &mut init_rng)?;
            Some(snap)
        } else {
            None
        };
        let phase_data: Vec<Exemplar> =
            classes.clone().flat_map(|c| data.train.get(&c).cloned().unwrap_or_default()).collect();
        let history = train_phase(&mut model, &phase_data, &bank, snapshot.as_ref(), cfg, &mut train_rng)?;
        model.round_to_f32();
        bank = update_memory(&bank, &phase_data, &mut memory_rng)?;

        let seen = seen_test(&data.test, classes.end);
        let count = evaluate(&model, &seen)?;
        let record = PhaseRecord {
            phase,
            ia: count.percent(),
            classes_seen: classes.end,
            correct: count.correct,
            total: count.total,
            loss: LossBreakdown::mean(&history),
        };
        if let (Some((file, path)), Some(dir)) = (metrics_file.as_mut(), out_dir) {
            model.save_checkpoint(&checkpoint_dir(dir, phase))?;
            let line = serde_json::to_string(&record).map_err(|e| HadError::json("metrics", e))?;
            writeln!(file, "{line}").map_err(|e| HadError::io(&*path, e))?;
        }
        records.push(record);
    }
    let ia: Vec<f64> = records.iter().map(|r| r.ia).collect();
    let metrics = aggregate(&ia)?;
    let summary = RunSummary {
        aia: metrics.aia,
        fia: metrics.fia,
        ia,
        seed: cfg.seed,
        schedule: sched.clone(),
        fingerprint,
        class_order,
    };
    if let Some(dir) = out_dir {
        write_json(&dir.join(SUMMARY_FILE), &summary)?;
    }
    Ok(RunOutcome { metrics, records, model, summary })
}

/// Re-scores every phase checkpoint of a finished run.
pub fn evaluate_run(run_dir: &Path, samples: &[LabeledSample]) -> Result<RunMetrics> {
    let summary = crate::metrics::read_summary(run_dir)?;
    let data = relabel(samples, &summary.class_order);
    let mut ia = Vec::new();
    for phase in 1..=summary.schedule.phases() {
        let model = FusionClassifierModel::load_checkpoint(&checkpoint_dir(run_dir, phase))?;
        let seen = seen_test(&data.test, summary.schedule.classes_seen(phase));
        ia.push(evaluate(&model, &seen)?.percent());
    }
    aggregate(&ia)
}
