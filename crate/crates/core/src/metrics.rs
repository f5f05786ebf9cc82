//! Incremental accuracy metrics and report rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HadError, Result};
use crate::trainer::{LossBreakdown, TaskSchedule};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// Exact correct/total counts; converted to percent only on output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyCount {
    pub correct: usize,
    pub total: usize,
}

impl AccuracyCount {
    pub fn from_predictions(predictions: &[usize], labels: &[usize]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(HadError::Contract(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(HadError::NoSamples);
        }
        let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(Self { correct, total: labels.len() })
    }

    pub fn merge(self, other: Self) -> Self {
        Self { correct: self.correct + other.correct, total: self.total + other.total }
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.correct as f64 / self.total as f64
    }
}

/// `100 · correct / total`
pub fn incremental_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    AccuracyCount::from_predictions(predictions, labels).map(|c| c.percent())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub ia: Vec<f64>,
    pub aia: f64,
    pub fia: f64,
}

pub fn aggregate(ia: &[f64]) -> Result<RunMetrics> {
    let Some(&fia) = ia.last() else {
        return Err(HadError::NoSamples);
    };
    if let Some(bad) = ia.iter().find(|v| !(0.0..=100.0).contains(*v)) {
        return Err(HadError::Contract(format!("accuracy {bad} outside [0, 100]")));
    }
    let aia = ia.iter().sum::<f64>() / ia.len() as f64;
    Ok(RunMetrics { ia: ia.to_vec(), aia, fia })
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: usize,
    pub ia: f64,
    pub classes_seen: usize,
    pub correct: usize,
    pub total: usize,
    pub loss: LossBreakdown,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub aia: f64,
    pub fia: f64,
    pub ia: Vec<f64>,
    pub seed: u64,
    pub schedule: TaskSchedule,
    pub fingerprint: String,
    /// Dataset label taught at each head index.
    pub class_order: Vec<usize>,
}

pub fn read_metrics(run_dir: &Path) -> Result<Vec<PhaseRecord>> {
    let path = run_dir.join(METRICS_FILE);
    if !path.is_file() {
        return Err(HadError::Missing(path.display().to_string()));
    }
    let text = fs::read_to_string(&path).map_err(|e| HadError::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| HadError::json(path.display().to_string(), e)))
        .collect()
}

pub fn read_summary(run_dir: &Path) -> Result<RunSummary> {
    let path = run_dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| HadError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HadError::json(path.display().to_string(), e))
}

/// A run directory with the name it is shown under. Runs sharing a label are
/// treated as seeds of one configuration in the ablation table.
#[derive(Clone, Debug)]
pub struct LabeledRun {
    pub label: String,
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub svg: PathBuf,
    pub tables: Vec<PathBuf>,
    pub ablation: Option<PathBuf>,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Accuracy-vs-phase curves, one polyline per run.
pub fn render_svg(series: &[(String, Vec<f64>)]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 50.0, 170.0, 20.0, 40.0);
    let max_phase = series.iter().map(|s| s.1.len()).max().unwrap_or(1).max(2);
    let x = |i: usize| left + (w - left - right) * i as f64 / (max_phase - 1) as f64;
    let y = |v: f64| top + (h - top - bottom) * (1.0 - v / 100.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        y(0.0),
        x(max_phase - 1),
        y(0.0)
    );
    let _ = writeln!(s, r#"<line x1="{left}" y1="{}" x2="{left}" y2="{}" stroke="black"/>"#, y(0.0), y(100.0));
    for tick in (0..=100).step_by(20) {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-size="10" text-anchor="end">{tick}</text>"#,
            left - 4.0,
            y(tick as f64) + 3.0
        );
    }
    for p in 0..max_phase {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-size="10" text-anchor="middle">{}</text>"#,
            x(p),
            h - bottom + 14.0,
            p + 1
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" font-size="11" text-anchor="middle">phase</text>"#,
        (left + w - right) / 2.0,
        h - 6.0
    );
    for (i, (name, ia)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = ia.iter().enumerate().map(|(p, &v)| format!("{:.2},{:.2}", x(p), y(v))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            points.join(" "),
            escape(name)
        );
        let ly = top + 16.0 * i as f64 + 8.0;
        let lx = w - right + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11">{}</text>"#, lx + 24.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

pub fn phase_table(records: &[PhaseRecord]) -> String {
    let mut s = String::from("phase,ia,classes_seen\n");
    for r in records {
        let _ = writeln!(s, "{},{:.6},{}", r.phase, r.ia, r.classes_seen);
    }
    s
}

/// Writes curves, per-run phase tables and, for more than one label, an
/// ablation table with mean ± std over runs sharing a label.
pub fn emit_report(runs: &[LabeledRun], out_dir: &Path) -> Result<ReportFiles> {
    if runs.is_empty() {
        return Err(HadError::Missing("runs to report on".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| HadError::io(out_dir, e))?;
    let mut series = Vec::new();
    let mut tables = Vec::new();
    let mut groups: Vec<(String, Vec<RunMetrics>)> = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let records = read_metrics(&run.dir)?;
        let ia: Vec<f64> = records.iter().map(|r| r.ia).collect();
        let metrics = aggregate(&ia)?;
        let table = if runs.len() == 1 { out_dir.join("phases.csv") } else { out_dir.join(format!("phases_{i}.csv")) };
        fs::write(&table, phase_table(&records)).map_err(|e| HadError::io(&table, e))?;
        tables.push(table);
        series.push((run.label.clone(), ia));
        match groups.iter_mut().find(|g| g.0 == run.label) {
            Some(g) => g.1.push(metrics),
            None => groups.push((run.label.clone(), vec![metrics])),
        }
    }
    let svg = out_dir.join("curves.svg");
    fs::write(&svg, render_svg(&series)).map_err(|e| HadError::io(&svg, e))?;
    let ablation = if groups.len() > 1 || runs.len() > 1 {
        let path = out_dir.join("ablation.csv");
        let mut s = String::from("label,runs,aia_mean,aia_std,fia_mean,fia_std\n");
        for (label, ms) in &groups {
            let (am, asd) = mean_std(&ms.iter().map(|m| m.aia).collect::<Vec<_>>());
            let (fm, fsd) = mean_std(&ms.iter().map(|m| m.fia).collect::<Vec<_>>());
            let _ = writeln!(s, "{label},{},{am:.3},{asd:.3},{fm:.3},{fsd:.3}", ms.len());
        }
        fs::write(&path, s).map_err(|e| HadError::io(&path, e))?;
        let md = out_dir.join("ablation.md");
        let mut t = String::from("| run | n | AIA | FIA |\n|---|---|---|---|\n");
        for (label, ms) in &groups {
            let (am, asd) = mean_std(&ms.iter().map(|m| m.aia).collect::<Vec<_>>());
            let (fm, fsd) = mean_std(&ms.iter().map(|m| m.fia).collect::<Vec<_>>());
            let _ = writeln!(t, "| {label} | {} | {am:.1} ± {asd:.1} | {fm:.1} ± {fsd:.1} |", ms.len());
        }
        fs::write(&md, t).map_err(|e| HadError::io(&md, e))?;
        Some(path)
    } else {
        None
    };
    Ok(ReportFiles { svg, tables, ablation })
}
