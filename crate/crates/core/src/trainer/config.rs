use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::schedule::TaskSchedule;
use crate::error::{HadError, Result};
use crate::fusion_model::HeadKind;
use crate::ham::{HamSwitches, DEFAULT_LAMBDA};
use crate::hdm::{HcdSwitches, HldSwitches};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub num_heads: usize,
    pub positional: bool,
    pub head: HeadKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamSection {
    pub enabled: bool,
    /// Low-level modal augmentation.
    pub low_level: bool,
    /// High-level video augmentation.
    pub high_level: bool,
    /// `false` lets both augmentation terms reach both partitions.
    pub routing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HldSection {
    pub enabled: bool,
    pub sld: bool,
    pub dld: bool,
    /// Hull draws per source batch; 0 means one per real sample in that batch.
    pub n_draws: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HcdSection {
    pub enabled: bool,
    pub scd: bool,
    pub vcd: bool,
}

/// Everything a run depends on. Serialised as `config.json`; the fingerprint
/// is the SHA-256 of its canonical JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub schedule: TaskSchedule,
    pub model: ModelSection,
    pub optim: OptimSection,
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub ham: HamSection,
    pub hld: HldSection,
    pub hcd: HcdSection,
}

pub const ABLATIONS: [&str; 12] =
    ["ham", "hld", "hcd", "hdm", "lma", "hva", "sld", "dld", "scd", "vcd", "had-n", "baseline"];

impl RunConfig {
    /// Full configuration for a schedule preset.
    pub fn preset(name: &str) -> Result<Self> {
        let schedule = TaskSchedule::preset(name)?;
        let (model, optim) = if name == "synthetic" {
            (
                ModelSection { d_model: 16, num_heads: 2, positional: true, head: HeadKind::Cosine },
                OptimSection { lr: 2e-3, epochs: 12, batch_size: 16, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            )
        } else {
            let small = name.starts_with("ave");
            (
                ModelSection {
                    d_model: 256,
                    num_heads: 4,
                    positional: true,
                    head: if small { HeadKind::Cosine } else { HeadKind::Linear },
                },
                OptimSection {
                    lr: 3e-5,
                    epochs: 10,
                    batch_size: if small { 16 } else { 256 },
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                },
            )
        };
        Ok(Self {
            seed: 0,
            dataset: None,
            schedule,
            model,
            optim,
            lambda: DEFAULT_LAMBDA,
            beta: 5.0,
            gamma: 0.2,
            eta: 25.0,
            ham: HamSection { enabled: true, low_level: true, high_level: true, routing: true },
            hld: HldSection { enabled: true, sld: true, dld: true, n_draws: 0 },
            hcd: HcdSection { enabled: true, scd: true, vcd: true },
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let nonneg = [("lambda", self.lambda), ("beta", self.beta), ("gamma", self.gamma), ("eta", self.eta)];
        if let Some((k, v)) = nonneg.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(HadError::InvalidConfig(format!("{k} must be finite and >= 0, got {v}")));
        }
        let o = &self.optim;
        if !(o.lr.is_finite() && o.lr > 0.0) || o.batch_size == 0 || o.epochs == 0 {
            return Err(HadError::InvalidConfig("optim needs lr > 0, batch_size >= 1 and epochs >= 1".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps.is_nan() || o.eps <= 0.0 {
            return Err(HadError::InvalidConfig("adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }

    /// Turns off one component or a named bundle of them.
    pub fn ablate(&mut self, what: &str) -> Result<()> {
        match what {
            "ham" => self.ham.enabled = false,
            "hld" => self.hld.enabled = false,
            "hcd" => self.hcd.enabled = false,
            "hdm" => {
                self.hld.enabled = false;
                self.hcd.enabled = false;
            }
            "lma" => self.ham.low_level = false,
            "hva" => self.ham.high_level = false,
            "sld" => self.hld.sld = false,
            "dld" => self.hld.dld = false,
            "scd" => self.hcd.scd = false,
            "vcd" => self.hcd.vcd = false,
            "had-n" => self.ham.routing = false,
            "baseline" => {
                self.ham.enabled = false;
                self.hld.enabled = false;
                self.hcd.enabled = false;
            }
            other => {
                return Err(HadError::InvalidConfig(format!(
                    "unknown ablation `{other}`; available: {}",
                    ABLATIONS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn ham_switches(&self) -> Option<HamSwitches> {
        self.ham.enabled.then_some(HamSwitches {
            low_level: self.ham.low_level,
            high_level: self.ham.high_level,
            routing: self.ham.routing,
        })
    }

    pub fn hld_switches(&self) -> Option<HldSwitches> {
        self.hld.enabled.then_some(HldSwitches { sld: self.hld.sld, dld: self.hld.dld })
    }

    pub fn hcd_switches(&self) -> Option<HcdSwitches> {
        self.hcd.enabled.then_some(HcdSwitches { scd: self.hcd.scd, vcd: self.hcd.vcd })
    }

    fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serialises")
    }

    /// Every settable dotted key, sections included.
    pub fn keys(&self) -> Vec<String> {
        fn walk(prefix: &str, v: &Value, out: &mut Vec<String>) {
            if !prefix.is_empty() {
                out.push(prefix.to_string());
            }
            if let Value::Object(m) = v {
                for (k, child) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
        }
        let mut out = Vec::new();
        walk("", &self.to_value(), &mut out);
        out.sort();
        out
    }

    pub fn has_key(&self, key: &str) -> bool {
        self.keys().iter().any(|k| k == key)
    }

    /// Sets a dotted key. `value` is parsed as JSON, falling back to a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parsed = serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.to_string()));
        self.set_value(key, parsed)
    }

    pub fn set_value(&mut self, key: &str, value: Value) -> Result<()> {
        if !self.has_key(key) {
            return Err(HadError::InvalidConfig(format!("unknown config key `{key}`")));
        }
        let mut root = self.to_value();
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot.get_mut(part).expect("key listed by keys()");
        }
        *slot = value;
        let updated: RunConfig = serde_json::from_value(root)
            .map_err(|e| HadError::InvalidConfig(format!("bad value for `{key}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Canonical JSON: keys sorted at every level, no whitespace.
    pub fn canonical_json(&self) -> String {
        fn sort(v: Value) -> Value {
            match v {
                Value::Object(m) => {
                    let mut entries: Vec<(String, Value)> = m.into_iter().collect();
                    entries.sort_by(|a, b| a.0.cmp(&b.0));
                    Value::Object(entries.into_iter().map(|(k, v)| (k, sort(v))).collect())
                }
                Value::Array(a) => Value::Array(a.into_iter().map(sort).collect()),
                other => other,
            }
        }
        sort(self.to_value()).to_string()
    }

    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HadError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| HadError::json(path.display().to_string(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| HadError::json("config", e))?;
        fs::write(path, text + "\n").map_err(|e| HadError::io(path, e))
    }
}
