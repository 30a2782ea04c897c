//! Generated graphs with a known composition rule, for end-to-end checks.
//!
//! Relations `r1` and `r2` are random; `r3(x, z)` holds exactly when some
//! `y` has `r1(x, y)` and `r2(y, z)`. Only `r3` facts are split into
//! train/valid/test, so held-out facts are always derivable from the
//! training graph.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::kg::{assemble_splits, DatasetSplits, Triple, Vocab, VocabMap};
use crate::objective::{derived_rng, stream};

#[derive(Clone, Debug, PartialEq)]
pub struct CompositionConfig {
    pub entities: usize,
    /// Distinct `r1` and `r2` targets per entity.
    pub fan_out: usize,
    /// Train/valid/test fractions of the `r3` facts.
    pub split: (f64, f64, f64),
    pub seed: u64,
    /// Prefix for entity and relation names, to tell graphs apart.
    pub prefix: String,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        CompositionConfig {
            entities: 50,
            fan_out: 2,
            split: (0.8, 0.1, 0.1),
            seed: 0,
            prefix: String::new(),
        }
    }
}

pub const R1: usize = 0;
pub const R2: usize = 1;
pub const R3: usize = 2;

/// Base facts of a composition graph: `(r1 ∪ r2 facts, r3 facts)`, sorted.
pub fn composition_facts(cfg: &CompositionConfig) -> (Vec<Triple>, Vec<Triple>) {
    let mut rng = derived_rng(cfg.seed, stream::SYNTHETIC, 0, 0);
    let n = cfg.entities;
    let mut base = BTreeSet::new();
    for x in 0..n {
        for r in [R1, R2] {
            let mut targets: Vec<usize> = (0..n).filter(|&y| y != x).collect();
            targets.shuffle(&mut rng);
            for &y in targets.iter().take(cfg.fan_out) {
                base.insert(Triple::new(x, r, y));
            }
        }
    }
    let mut r2_out = vec![Vec::new(); n];
    for t in base.iter().filter(|t| t.relation == R2) {
        r2_out[t.head].push(t.tail);
    }
    let mut derived = BTreeSet::new();
    for t in base.iter().filter(|t| t.relation == R1) {
        for &z in &r2_out[t.tail] {
            derived.insert(Triple::new(t.head, R3, z));
        }
    }
    (base.into_iter().collect(), derived.into_iter().collect())
}

/// Train graph of `r1`, `r2`, and the training share of `r3`; valid and test
/// hold the remaining `r3` facts. Inverse relations are added.
pub fn composition_splits(cfg: &CompositionConfig) -> DatasetSplits {
    let (base, mut derived) = composition_facts(cfg);
    let mut rng = derived_rng(cfg.seed, stream::SPLIT, 0, 0);
    derived.shuffle(&mut rng);
    let total = derived.len();
    let n_train = (cfg.split.0 * total as f64).round() as usize;
    let n_valid = (cfg.split.1 * total as f64).round() as usize;
    let n_valid = n_valid.min(total - n_train);
    let test = derived.split_off(n_train + n_valid);
    let valid = derived.split_off(n_train);
    let mut train = base;
    train.extend(derived);
    let vocab = VocabMap {
        entities: Vocab::from_names((0..cfg.entities).map(|i| format!("{}e{i}", cfg.prefix))),
        relations: Vocab::from_names(["r1", "r2", "r3"].iter().map(|r| format!("{}{r}", cfg.prefix))),
        inverse_offset: None,
    };
    assemble_splits(vocab, &train, valid, test, true).expect("generated ids are in range")
}

/// Uniformly random facts, useful as a rule-free control.
pub fn random_facts<R: Rng + ?Sized>(entities: usize, relations: usize, count: usize, rng: &mut R) -> Vec<Triple> {
    let mut set = BTreeSet::new();
    let cap = entities * entities.saturating_sub(1) * relations;
    while set.len() < count.min(cap) {
        let h = rng.gen_range(0..entities);
        let t = rng.gen_range(0..entities);
        if h != t {
            set.insert(Triple::new(h, rng.gen_range(0..relations), t));
        }
    }
    set.into_iter().collect()
}
