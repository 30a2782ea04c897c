#![allow(dead_code, clippy::needless_range_loop)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reldep::kg::{KnowledgeGraph, Triple};
use reldep::objective::{batch_objective, ObjectiveConfig, TrainQuery};
use reldep::params::{tensor_specs, ModelParams};
use reldep::rdg::build_rdg;

/// Random graph without self-loops or duplicate facts, with inverses.
pub fn random_instance(seed: u64, entities: usize, relations: usize, facts: usize) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    while triples.len() < facts {
        let t = Triple::new(
            rng.gen_range(0..entities),
            rng.gen_range(0..relations),
            rng.gen_range(0..entities),
        );
        if t.head != t.tail && !triples.contains(&t) {
            triples.push(t);
        }
    }
    KnowledgeGraph::new(entities, relations, &triples, true).unwrap()
}

pub fn all_fact_queries(kg: &KnowledgeGraph) -> Vec<TrainQuery> {
    kg.facts().iter().map(|&f| TrainQuery::from_fact(kg, f)).collect()
}

pub struct FdReport {
    /// Worst relative error per tensor.
    pub worst: Vec<(String, f64)>,
    pub coordinates: usize,
    /// Coordinates whose stencil at the nominal step crosses a kink and were
    /// compared at a smaller step instead.
    pub kinked: usize,
}

/// Central differences at `step` against the analytic gradient, error
/// `|a - n| / max(|a|, |n|, 1e-4)`.
///
/// The objective is piecewise smooth (ReLU). Where the differences at `step`
/// and `step / 2` disagree, a kink lies inside the stencil and the central
/// difference there is not a derivative estimate; such coordinates are
/// compared at `1e-6` instead and counted.
pub fn finite_difference_check(
    kg: &KnowledgeGraph,
    params: &ModelParams<f64>,
    queries: &[TrainQuery],
    cfg: &ObjectiveConfig,
    step: f64,
) -> FdReport {
    let rdg = build_rdg(kg);
    let analytic = batch_objective(kg, &rdg, params, queries, 0, cfg, true)
        .unwrap()
        .grads
        .unwrap();
    let f = |p: &ModelParams<f64>| batch_objective(kg, &rdg, p, queries, 0, cfg, false).unwrap().loss;
    let central = |ti: usize, k: usize, h: f64| {
        let mut plus = params.clone();
        plus.tensors_mut()[ti][k] += h;
        let mut minus = params.clone();
        minus.tensors_mut()[ti][k] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
    let grads = analytic.tensors();
    let mut report = FdReport {
        worst: Vec::new(),
        coordinates: 0,
        kinked: 0,
    };
    for (ti, spec) in tensor_specs(&params.dims).iter().enumerate() {
        let mut worst = 0.0f64;
        for k in 0..spec.len() {
            report.coordinates += 1;
            let a = grads[ti][k];
            let n = central(ti, k, step);
            let err = if rel(n, central(ti, k, step / 2.0)) > 1e-6 {
                report.kinked += 1;
                rel(a, central(ti, k, 1e-6))
            } else {
                rel(a, n)
            };
            worst = worst.max(err);
        }
        report.worst.push((spec.name.clone(), worst));
    }
    report
}
