use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HadError, Result};

/// Base task followed by equal-size increments of disjoint classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSchedule {
    pub num_classes: usize,
    pub base_classes: usize,
    pub num_increments: usize,
    pub classes_per_increment: usize,
    /// Exemplar memory capacity.
    pub memory_size: usize,
}

/// `(name, total classes, base, increments, per increment, memory)`
const PRESET_TABLE: [(&str, usize, usize, usize, usize, usize); 9] = [
    ("ave-3", 28, 10, 3, 6, 140),
    ("ave-6", 28, 10, 6, 3, 140),
    ("avk100-5", 100, 50, 5, 10, 1000),
    ("avk100-10", 100, 50, 10, 5, 1000),
    ("avk200-10", 200, 100, 10, 10, 2000),
    ("avk200-20", 200, 100, 20, 5, 2000),
    ("avk400-20", 400, 200, 20, 10, 4000),
    ("avk400-40", 400, 200, 40, 5, 4000),
    ("synthetic", 20, 8, 3, 4, 40),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESET_TABLE.iter().map(|p| p.0).collect()
}

impl TaskSchedule {
    pub fn new(
        num_classes: usize,
        base_classes: usize,
        num_increments: usize,
        classes_per_increment: usize,
        memory_size: usize,
    ) -> Result<Self> {
        let s = Self { num_classes, base_classes, num_increments, classes_per_increment, memory_size };
        s.validate()?;
        Ok(s)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let &(_, total, base, inc, per, mem) = PRESET_TABLE.iter().find(|p| p.0 == name).ok_or_else(|| {
            HadError::Schedule(format!("unknown preset `{name}`; available: {}", preset_names().join(", ")))
        })?;
        Self::new(total, base, inc, per, mem)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_classes == 0 {
            return Err(HadError::Schedule("base task needs at least one class".into()));
        }
        if self.num_increments > 0 && self.classes_per_increment == 0 {
            return Err(HadError::Schedule("increments need at least one class each".into()));
        }
        let covered = self.base_classes + self.num_increments * self.classes_per_increment;
        if covered != self.num_classes {
            return Err(HadError::Schedule(format!(
                "base {} + {} x {} = {covered} classes, but the schedule has {}",
                self.base_classes, self.num_increments, self.classes_per_increment, self.num_classes
            )));
        }
        Ok(())
    }

    /// Number of phases, base task included.
    pub fn phases(&self) -> usize {
        1 + self.num_increments
    }

    /// Head indices introduced in `phase` (1-based).
    pub fn phase_classes(&self, phase: usize) -> Range<usize> {
        assert!((1..=self.phases()).contains(&phase), "phase {phase} outside 1..={}", self.phases());
        if phase == 1 {
            0..self.base_classes
        } else {
            let start = self.base_classes + (phase - 2) * self.classes_per_increment;
            start..start + self.classes_per_increment
        }
    }

    pub fn classes_seen(&self, phase: usize) -> usize {
        self.phase_classes(phase).end
    }

    /// Seeded permutation: entry `i` is the dataset label taught as head index `i`.
    pub fn class_order(&self, seed: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.num_classes).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }
}
