use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{HadError, Result};
use crate::feature_store::ModalFeatures;

/// A training sample as the trainer sees it: `label` is the head index.
#[derive(Clone, Debug, PartialEq)]
pub struct Exemplar {
    pub id: String,
    pub features: ModalFeatures,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    entries: Vec<Exemplar>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Grouped by class in head-index order.
    pub fn entries(&self) -> &[Exemplar] {
        &self.entries
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.label).or_insert(0) += 1;
        }
        counts
    }
}

/// Splits `capacity` over classes as evenly as possible, remainder going to the
/// lowest class indices. A class with fewer samples than its share keeps all
/// of them and the slack is handed out round-robin, in class order, to classes
/// that still have samples to spare.
pub fn quotas(capacity: usize, available: &BTreeMap<usize, usize>) -> BTreeMap<usize, usize> {
    let n = available.len();
    if n == 0 {
        return BTreeMap::new();
    }
    let (base, extra) = (capacity / n, capacity % n);
    let mut slack = 0;
    let mut out: BTreeMap<usize, usize> = available
        .iter()
        .enumerate()
        .map(|(i, (&c, &avail))| {
            let want = base + usize::from(i < extra);
            slack += want.saturating_sub(avail);
            (c, want.min(avail))
        })
        .collect();
    while slack > 0 {
        let mut gave = false;
        for (c, q) in out.iter_mut() {
            if slack > 0 && *q < available[c] {
                *q += 1;
                slack -= 1;
                gave = true;
            }
        }
        if !gave {
            break;
        }
    }
    out
}

/// Rebalances the bank after a task: old classes shrink by uniform random
/// eviction, new classes are filled by uniform random selection.
pub fn update_memory<R: Rng + ?Sized>(bank: &MemoryBank, new_samples: &[Exemplar], rng: &mut R) -> Result<MemoryBank> {
    let old = bank.class_counts();
    let mut by_class: BTreeMap<usize, Vec<&Exemplar>> = BTreeMap::new();
    for e in &bank.entries {
        by_class.entry(e.label).or_default().push(e);
    }
    for e in new_samples {
        if old.contains_key(&e.label) {
            return Err(HadError::Contract(format!("class {} is already in the memory bank", e.label)));
        }
        by_class.entry(e.label).or_default().push(e);
    }
    let available: BTreeMap<usize, usize> = by_class.iter().map(|(&c, v)| (c, v.len())).collect();
    let q = quotas(bank.capacity, &available);
    let mut entries = Vec::with_capacity(bank.capacity);
    for (c, pool) in &by_class {
        let keep = q[c];
        let mut idx = sample(rng, pool.len(), keep).into_vec();
        idx.sort_unstable();
        entries.extend(idx.into_iter().map(|i| pool[i].clone()));
    }
    Ok(MemoryBank { capacity: bank.capacity, entries })
}
