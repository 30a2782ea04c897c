//! Contrastive objective over a batch of queries, with exact gradients.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::entity_encoder::{EdgeDropout, QueryContext, RelationContext};
use crate::error::NumericError;
use crate::kg::{KnowledgeGraph, Triple};
use crate::params::{tensor_specs, ModelParams};
use crate::rdg::RelationDependencyGraph;
use crate::relation_encoder::RelationForward;
use crate::tensor::{all_finite, sigmoid, softplus, Real};

/// `-log σ(s⁺) - Σ log(1 - σ(s⁻))`.
pub fn loss<T: Real>(positive: T, negatives: &[T]) -> T {
    softplus(-positive) + negatives.iter().map(|&s| softplus(s)).sum::<T>()
}

/// Loss with `∂/∂s⁺` and `∂/∂s⁻`.
pub fn loss_with_grad<T: Real>(positive: T, negatives: &[T]) -> (T, T, Vec<T>) {
    let g_pos = sigmoid(positive) - T::one();
    let g_neg = negatives.iter().map(|&s| sigmoid(s)).collect();
    (loss(positive, negatives), g_pos, g_neg)
}

/// Up to `n` distinct entities, uniformly without replacement, from the
/// visited set of `ctx` minus the known tails of `(head, relation)` in `kg`
/// and minus the answer itself. Returns the shuffled pool when it holds at
/// most `n` entities.
pub fn sample_negatives<T: Real, R: Rng + ?Sized>(
    query: &Triple,
    kg: &KnowledgeGraph,
    ctx: &QueryContext<'_, T>,
    n: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut known: Vec<usize> = if query.head < kg.entity_count() {
        kg.tails(query.head, query.relation).collect()
    } else {
        Vec::new()
    };
    known.push(query.tail);
    known.sort_unstable();
    let pool: Vec<usize> = ctx
        .visited_now()
        .iter()
        .copied()
        .filter(|e| known.binary_search(e).is_err())
        .collect();
    let k = n.min(pool.len());
    sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

/// Deterministic generator for one `(component, epoch, position)` slot.
pub fn derived_rng(seed: u64, component: u64, epoch: u64, position: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, w) in [seed, component, epoch, position].iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// RNG components; each draws from its own stream.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const NEGATIVES: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const PERTURB: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const SYNTHETIC: u64 = 7;
}

/// One training query: predict `triple.tail` from `(triple.head, triple.relation)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainQuery {
    pub triple: Triple,
    /// Facts withheld from propagation, normally the query fact and its inverse.
    pub masked: Vec<Triple>,
}

impl TrainQuery {
    /// Query over a fact of `kg`, masking the fact and its inverse twin.
    pub fn from_fact(kg: &KnowledgeGraph, fact: Triple) -> Self {
        let mut masked = vec![fact];
        if let Some(inv) = kg.inverse_relation(fact.relation) {
            masked.push(Triple::new(fact.tail, inv, fact.head));
        }
        TrainQuery { triple: fact, masked }
    }

    pub fn unmasked(triple: Triple) -> Self {
        TrainQuery {
            triple,
            masked: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveConfig {
    pub negatives: usize,
    /// Coefficient of the coupled `‖Θ‖²` term.
    pub l2_penalty: f64,
    pub dropout: f64,
    pub seed: u64,
    pub epoch: u64,
    /// Leave all but the final-layer tensors without gradient.
    pub final_layer_only: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            negatives: 64,
            l2_penalty: 0.0,
            dropout: 0.0,
            seed: 0,
            epoch: 0,
            final_layer_only: false,
        }
    }
}

pub struct BatchOutcome<T> {
    /// Mean loss over scored queries plus the penalty term.
    pub loss: T,
    pub scored: usize,
    /// Queries whose answer was not reached.
    pub skipped: usize,
    pub grads: Option<ModelParams<T>>,
}

struct QueryOutcome<T> {
    loss: T,
    grads: Option<(ModelParams<T>, Vec<T>)>,
}

fn run_query<T: Real>(
    kg: &KnowledgeGraph,
    relations: &RelationContext<T>,
    params: &ModelParams<T>,
    query: &TrainQuery,
    position: u64,
    cfg: &ObjectiveConfig,
    with_grad: bool,
) -> Result<Option<QueryOutcome<T>>, NumericError> {
    let dropout = (cfg.dropout > 0.0).then(|| EdgeDropout {
        rate: cfg.dropout,
        seed: derived_rng(cfg.seed, stream::DROPOUT, cfg.epoch, position).gen(),
    });
    let mut ctx = QueryContext::new(kg, relations, query.triple.head)
        .with_masked(&query.masked)
        .with_dropout(dropout);
    if with_grad {
        ctx = ctx.recording();
    }
    ctx.run(kg, params)?;
    let Some(answer) = ctx.local_index(query.triple.tail) else {
        return Ok(None);
    };
    let mut rng = derived_rng(cfg.seed, stream::NEGATIVES, cfg.epoch, position);
    let negatives = sample_negatives(&query.triple, kg, &ctx, cfg.negatives, &mut rng);
    let scores = ctx.scores(params);
    let neg_local: Vec<usize> = negatives
        .iter()
        .map(|&e| ctx.local_index(e).expect("negatives come from the visited set"))
        .collect();
    let neg_scores: Vec<T> = neg_local.iter().map(|&l| scores[l].1).collect();
    let (l, g_pos, g_neg) = loss_with_grad(scores[answer].1, &neg_scores);
    if !l.is_finite() {
        return Err(NumericError::Loss);
    }
    let grads = if with_grad {
        let mut g_scores = vec![T::zero(); scores.len()];
        g_scores[answer] += g_pos;
        for (&li, &g) in neg_local.iter().zip(&g_neg) {
            g_scores[li] += g;
        }
        let mut grads = ModelParams::zeros(params.dims);
        let d = params.dims.dim;
        let mut g_rel = vec![T::zero(); relations.embeddings().relation_count() * d];
        ctx.backward(params, &g_scores, &mut grads, &mut g_rel);
        Some((grads, g_rel))
    } else {
        None
    };
    Ok(Some(QueryOutcome { loss: l, grads }))
}

/// Mean contrastive loss of `queries` (plus `l2_penalty · ‖Θ‖²`) and, with
/// `with_grad`, its exact gradient.
///
/// Queries sharing a relation share one relation-encoder pass. Work runs in
/// parallel; partial results are summed in query order so the outcome does
/// not depend on scheduling.
pub fn batch_objective<T: Real>(
    kg: &KnowledgeGraph,
    rdg: &RelationDependencyGraph,
    params: &ModelParams<T>,
    queries: &[TrainQuery],
    first_position: u64,
    cfg: &ObjectiveConfig,
    with_grad: bool,
) -> crate::Result<BatchOutcome<T>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        groups.entry(q.triple.relation).or_default().push(i);
    }
    let groups: Vec<(usize, Vec<usize>)> = groups.into_iter().collect();

    // The mean divides by the scored count, which is only known after the
    // forward pass; gradients are scaled afterwards.
    type GroupResult<T> = crate::Result<(Vec<(usize, T)>, usize, Option<ModelParams<T>>)>;
    let results: Vec<GroupResult<T>> = groups
        .par_iter()
        .map(|(r_q, members)| {
            let forward = RelationForward::run(rdg, *r_q, params)?;
            let relations = RelationContext::new(forward.embeddings().clone(), params);
            let outcomes: Vec<Result<Option<QueryOutcome<T>>, NumericError>> = members
                .par_iter()
                .map(|&i| {
                    run_query(
                        kg,
                        &relations,
                        params,
                        &queries[i],
                        first_position + i as u64,
                        cfg,
                        with_grad,
                    )
                })
                .collect();
            let mut losses = Vec::new();
            let mut skipped = 0;
            let mut grads = with_grad.then(|| ModelParams::zeros(params.dims));
            let mut g_rel = vec![T::zero(); rdg.relation_count() * params.dims.dim];
            for (&i, o) in members.iter().zip(outcomes) {
                match o? {
                    None => skipped += 1,
                    Some(q) => {
                        losses.push((i, q.loss));
                        if let (Some(acc), Some((g, gr))) = (grads.as_mut(), q.grads) {
                            acc.add_scaled(T::one(), &g);
                            for (a, b) in g_rel.iter_mut().zip(gr) {
                                *a += b;
                            }
                        }
                    }
                }
            }
            if let Some(acc) = grads.as_mut() {
                if !cfg.final_layer_only && !losses.is_empty() {
                    forward.backward(rdg, params, &g_rel, acc);
                }
            }
            Ok((losses, skipped, grads))
        })
        .collect();

    let mut losses: Vec<(usize, T)> = Vec::new();
    let mut skipped = 0;
    let mut grads = with_grad.then(|| ModelParams::zeros(params.dims));
    for r in results {
        let (l, s, g) = r?;
        losses.extend(l);
        skipped += s;
        if let (Some(acc), Some(g)) = (grads.as_mut(), g) {
            acc.add_scaled(T::one(), &g);
        }
    }
    losses.sort_by_key(|(i, _)| *i);
    let scored = losses.len();
    let mut total: T = losses.iter().map(|(_, l)| *l).sum();
    if scored > 0 {
        total /= T::lit(scored as f64);
    }
    let l2 = T::lit(cfg.l2_penalty);
    if cfg.l2_penalty != 0.0 {
        total += l2 * params.squared_norm();
    }
    if !total.is_finite() {
        return Err(NumericError::Loss.into());
    }
    if let Some(g) = grads.as_mut() {
        if scored > 0 {
            let inv = T::one() / T::lit(scored as f64);
            for t in g.tensors_mut() {
                t.iter_mut().for_each(|x| *x *= inv);
            }
        }
        if cfg.l2_penalty != 0.0 {
            g.add_scaled(T::lit(2.0) * l2, params);
        }
        let specs = tensor_specs(&params.dims);
        for (spec, t) in specs.iter().zip(g.tensors_mut()) {
            if cfg.final_layer_only && !spec.final_layer {
                t.iter_mut().for_each(|x| *x = T::zero());
            }
            if !all_finite(t) {
                return Err(NumericError::Gradient {
                    tensor: spec.name.clone(),
                }
                .into());
            }
        }
    }
    Ok(BatchOutcome {
        loss: total,
        scored,
        skipped,
        grads,
    })
}
