//! Query-anchored message passing over the entity graph.
//!
//! Starting from the indicator on the query entity, each layer pushes one
//! gated message along every fact whose head is already visited:
//!
//! ```text
//! α   = sigmoid( v_gate · relu( W_gate [h_s ‖ R_q[r] ‖ R_q[r_q]] ) )
//! h_e = act( W · Σ_{(s,r,e)} α (h_s + R_q[r]) )
//! ```
//!
//! The visited set grows by one hop per layer and entities are numbered
//! locally in visit order, so every visited set is a prefix of the next one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::NumericError;
use crate::kg::{KnowledgeGraph, Triple};
use crate::params::ModelParams;
use crate::rdg::RelationDependencyGraph;
use crate::relation_encoder::{encode_relations, RelationEmbeddings};
use crate::tensor::{all_finite, axpy, dot, sigmoid, Real};

const UNSEEN: u32 = u32::MAX;

/// Gate weight of one message.
pub fn entity_attention<T: Real>(
    h_source: &[T],
    h_rel: &[T],
    h_query_rel: &[T],
    params: &ModelParams<T>,
    layer: usize,
) -> T {
    let d = params.dims.dim;
    let w = &params.entity.w_gate[layer];
    let mut p = vec![T::zero(); d];
    let mut tmp = vec![T::zero(); d];
    for (off, x) in [(0, h_source), (d, h_rel), (2 * d, h_query_rel)] {
        w.matvec_cols(off, x, &mut tmp);
        axpy(T::one(), &tmp, &mut p);
    }
    let logit: T = p
        .iter()
        .zip(&params.entity.v_gate[layer])
        .map(|(&x, &v)| x.max(T::zero()) * v)
        .sum();
    sigmoid(logit)
}

/// Relation embeddings for one query relation together with their gate
/// projections, shared by every query with that relation.
pub struct RelationContext<T> {
    embeddings: RelationEmbeddings<T>,
    /// Per layer: `W_gate[:, d..2d] · R_q[r]` for every relation.
    rel_proj: Vec<Vec<T>>,
    /// Per layer: `W_gate[:, 2d..3d] · R_q[r_q]`.
    query_proj: Vec<Vec<T>>,
}

impl<T: Real> RelationContext<T> {
    pub fn new(embeddings: RelationEmbeddings<T>, params: &ModelParams<T>) -> Self {
        let d = params.dims.dim;
        let n = embeddings.relation_count();
        let r_q = embeddings.query_relation;
        let mut rel_proj = Vec::with_capacity(params.dims.entity_layers);
        let mut query_proj = Vec::with_capacity(params.dims.entity_layers);
        for w in &params.entity.w_gate {
            let mut pr = vec![T::zero(); n * d];
            for r in 0..n {
                w.matvec_cols(d, embeddings.row(r), &mut pr[r * d..(r + 1) * d]);
            }
            let mut pq = vec![T::zero(); d];
            w.matvec_cols(2 * d, embeddings.row(r_q), &mut pq);
            rel_proj.push(pr);
            query_proj.push(pq);
        }
        RelationContext {
            embeddings,
            rel_proj,
            query_proj,
        }
    }

    pub fn embeddings(&self) -> &RelationEmbeddings<T> {
        &self.embeddings
    }

    pub fn query_relation(&self) -> usize {
        self.embeddings.query_relation
    }
}

/// Per-edge message dropout. Kept messages are scaled by `1 / (1 - rate)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeDropout {
    pub rate: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
struct Edge {
    src: u32,
    rel: u32,
    dst: u32,
}

struct LayerCache<T> {
    input: Vec<T>,
    edges: Vec<Edge>,
    alpha: Vec<T>,
    /// Dropout scale per edge; empty when dropout is off.
    keep: Vec<T>,
    acc: Vec<T>,
    has_in: Vec<bool>,
    pre: Vec<T>,
}

/// State of one query's propagation.
pub struct QueryContext<'a, T> {
    pub e_q: usize,
    pub r_q: usize,
    relations: &'a RelationContext<T>,
    masked: Vec<Triple>,
    dropout: Option<EdgeDropout>,
    order: Vec<usize>,
    local: Vec<u32>,
    layer_sizes: Vec<usize>,
    states: Vec<T>,
    record: bool,
    caches: Vec<LayerCache<T>>,
}

impl<'a, T: Real> QueryContext<'a, T> {
    /// Layer-0 context: only `e_q` visited, holding the all-ones vector.
    pub fn new(kg: &KnowledgeGraph, relations: &'a RelationContext<T>, e_q: usize) -> Self {
        let d = relations.embeddings.dim();
        let mut local = vec![UNSEEN; kg.entity_count().max(e_q + 1)];
        local[e_q] = 0;
        QueryContext {
            e_q,
            r_q: relations.query_relation(),
            relations,
            masked: Vec::new(),
            dropout: None,
            order: vec![e_q],
            local,
            layer_sizes: vec![1],
            states: vec![T::one(); d],
            record: false,
            caches: Vec::new(),
        }
    }

    /// Facts that must not carry messages, such as the training query itself.
    pub fn with_masked(mut self, facts: &[Triple]) -> Self {
        self.masked = facts.to_vec();
        self
    }

    pub fn with_dropout(mut self, dropout: Option<EdgeDropout>) -> Self {
        self.dropout = dropout.filter(|d| d.rate > 0.0);
        self
    }

    /// Keeps what [`QueryContext::backward`] needs.
    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn relations(&self) -> &RelationContext<T> {
        self.relations
    }

    /// Number of layers applied so far.
    pub fn layer(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// `V^ℓ` in visit order.
    pub fn visited(&self, layer: usize) -> &[usize] {
        &self.order[..self.layer_sizes[layer]]
    }

    pub fn visited_now(&self) -> &[usize] {
        self.visited(self.layer())
    }

    pub fn is_visited(&self, e: usize) -> bool {
        self.local.get(e).is_some_and(|&l| l != UNSEEN)
    }

    /// Current state of `e`; `None` outside the visited set.
    pub fn state(&self, e: usize) -> Option<&[T]> {
        let d = self.relations.embeddings.dim();
        let l = *self.local.get(e)? as usize;
        (l < self.layer_sizes[self.layer()]).then(|| &self.states[l * d..(l + 1) * d])
    }

    fn is_masked(&self, f: &Triple) -> bool {
        self.masked.iter().any(|m| m == f)
    }

    /// Applies the next layer.
    pub fn step(&mut self, kg: &KnowledgeGraph, params: &ModelParams<T>) -> Result<(), NumericError> {
        let layer = self.layer();
        let d = params.dims.dim;
        let n_prev = self.layer_sizes[layer];
        let rel = self.relations;
        let gate = &params.entity.w_gate[layer];
        let v_gate = &params.entity.v_gate[layer];
        let rel_proj = &rel.rel_proj[layer];
        let query_proj = &rel.query_proj[layer];

        let mut edges = Vec::new();
        for s in 0..n_prev {
            let head = self.order[s];
            if head >= kg.entity_count() {
                continue;
            }
            for f in kg.out_facts(head) {
                if !self.masked.is_empty() && self.is_masked(f) {
                    continue;
                }
                let dst = if self.local[f.tail] == UNSEEN {
                    self.local[f.tail] = self.order.len() as u32;
                    self.order.push(f.tail);
                    self.order.len() - 1
                } else {
                    self.local[f.tail] as usize
                };
                edges.push(Edge {
                    src: s as u32,
                    rel: f.relation as u32,
                    dst: dst as u32,
                });
            }
        }
        let n_next = self.order.len();

        let mut src_proj = vec![T::zero(); n_prev * d];
        for s in 0..n_prev {
            let h = &self.states[s * d..(s + 1) * d];
            if h.iter().any(|x| *x != T::zero()) {
                gate.matvec_cols(0, h, &mut src_proj[s * d..(s + 1) * d]);
            }
        }

        let keep: Vec<T> = match self.dropout {
            Some(drop) => {
                let mut rng = ChaCha8Rng::seed_from_u64(drop.seed);
                rng.set_stream(layer as u64);
                let scale = T::lit(1.0 / (1.0 - drop.rate));
                edges
                    .iter()
                    .map(|_| if rng.gen::<f64>() < drop.rate { T::zero() } else { scale })
                    .collect()
            }
            None => Vec::new(),
        };

        let mut alpha = Vec::with_capacity(edges.len());
        let mut acc = vec![T::zero(); n_next * d];
        let mut has_in = vec![false; n_next];
        let mut msg = vec![T::zero(); d];
        for (k, e) in edges.iter().enumerate() {
            let (s, r, t) = (e.src as usize, e.rel as usize, e.dst as usize);
            let ps = &src_proj[s * d..(s + 1) * d];
            let pr = &rel_proj[r * d..(r + 1) * d];
            let mut logit = T::zero();
            for i in 0..d {
                let p = ps[i] + pr[i] + query_proj[i];
                if p > T::zero() {
                    logit += v_gate[i] * p;
                }
            }
            let a = sigmoid(logit);
            alpha.push(a);
            has_in[t] = true;
            let c = if keep.is_empty() { a } else { a * keep[k] };
            if c == T::zero() {
                continue;
            }
            let h_s = &self.states[s * d..(s + 1) * d];
            let r_row = rel.embeddings.row(r);
            for i in 0..d {
                msg[i] = h_s[i] + r_row[i];
            }
            axpy(c, &msg, &mut acc[t * d..(t + 1) * d]);
        }

        let w = &params.entity.w[layer];
        let act = params.dims.entity_act;
        let mut pre = vec![T::zero(); n_next * d];
        let mut out = vec![T::zero(); n_next * d];
        for t in (0..n_next).filter(|&t| has_in[t]) {
            let p = &mut pre[t * d..(t + 1) * d];
            w.matvec(&acc[t * d..(t + 1) * d], p);
            for (o, &x) in out[t * d..(t + 1) * d].iter_mut().zip(p.iter()) {
                *o = act.apply(x);
            }
        }
        if !all_finite(&out) {
            return Err(NumericError::EntityLayer { layer });
        }
        let input = std::mem::replace(&mut self.states, out);
        if self.record {
            self.caches.push(LayerCache {
                input,
                edges,
                alpha,
                keep,
                acc,
                has_in,
                pre,
            });
        }
        self.layer_sizes.push(n_next);
        Ok(())
    }

    /// Runs layers until `L_e` have been applied.
    pub fn run(&mut self, kg: &KnowledgeGraph, params: &ModelParams<T>) -> Result<(), NumericError> {
        while self.layer() < params.dims.entity_layers {
            self.step(kg, params)?;
        }
        Ok(())
    }

    /// `w_s · h_e` for every currently visited entity, in visit order.
    pub fn scores(&self, params: &ModelParams<T>) -> Vec<(usize, T)> {
        let d = params.dims.dim;
        self.visited_now()
            .iter()
            .enumerate()
            .map(|(l, &e)| (e, dot(&params.entity.scorer, &self.states[l * d..(l + 1) * d])))
            .collect()
    }

    /// Local index of `e` in visit order, if visited.
    pub fn local_index(&self, e: usize) -> Option<usize> {
        let l = *self.local.get(e)?;
        (l != UNSEEN && (l as usize) < self.layer_sizes[self.layer()]).then_some(l as usize)
    }

    /// Backpropagates `∂loss/∂score` (indexed like [`QueryContext::scores`])
    /// into entity-encoder gradients and returns `∂loss/∂R_q` (`n × d`).
    ///
    /// Requires a recording context.
    pub fn backward(
        &self,
        params: &ModelParams<T>,
        grad_scores: &[T],
        grads: &mut ModelParams<T>,
        grad_relations: &mut [T],
    ) {
        assert!(self.record, "backward needs a recording context");
        let d = params.dims.dim;
        let act = params.dims.entity_act;
        let rel = self.relations;
        let n_rel = rel.embeddings.relation_count();
        let r_q = self.r_q;
        let top = self.layer();
        let mut g_h = vec![T::zero(); self.layer_sizes[top] * d];
        for (l, &g) in grad_scores.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            let h = &self.states[l * d..(l + 1) * d];
            axpy(g, h, &mut grads.entity.scorer);
            axpy(g, &params.entity.scorer, &mut g_h[l * d..(l + 1) * d]);
        }

        let mut g_acc = vec![T::zero(); d];
        let mut msg = vec![T::zero(); d];
        let mut g1 = Vec::new();
        let mut g2 = vec![T::zero(); n_rel * d];
        let mut g3 = vec![T::zero(); d];
        for layer in (0..top).rev() {
            let c = &self.caches[layer];
            let out = if layer + 1 == top {
                &self.states
            } else {
                &self.caches[layer + 1].input
            };
            let n_prev = self.layer_sizes[layer];
            let n_next = self.layer_sizes[layer + 1];
            let w = &params.entity.w[layer];
            let gate = &params.entity.w_gate[layer];
            let v_gate = &params.entity.v_gate[layer];
            let rel_proj = &rel.rel_proj[layer];
            let query_proj = &rel.query_proj[layer];

            // ∂/∂acc per target
            let mut g_accs = vec![T::zero(); n_next * d];
            for t in (0..n_next).filter(|&t| c.has_in[t]) {
                let mut any = false;
                for i in 0..d {
                    let k = t * d + i;
                    let g = g_h[k] * act.grad(c.pre[k], out[k]);
                    g_acc[i] = g;
                    any |= g != T::zero();
                }
                if !any {
                    continue;
                }
                grads.entity.w[layer].add_outer(T::one(), &g_acc, &c.acc[t * d..(t + 1) * d]);
                w.matvec_t_add(&g_acc, &mut g_accs[t * d..(t + 1) * d]);
            }

            let mut g_prev = vec![T::zero(); n_prev * d];
            g1.clear();
            g1.resize(n_prev * d, T::zero());
            g2.iter_mut().for_each(|x| *x = T::zero());
            g3.iter_mut().for_each(|x| *x = T::zero());
            let mut src_proj_cache: Vec<Option<Vec<T>>> = vec![None; n_prev];
            for (k, e) in c.edges.iter().enumerate() {
                let (s, r, t) = (e.src as usize, e.rel as usize, e.dst as usize);
                let ga = &g_accs[t * d..(t + 1) * d];
                if ga.iter().all(|x| *x == T::zero()) {
                    continue;
                }
                let scale = if c.keep.is_empty() { T::one() } else { c.keep[k] };
                if scale == T::zero() {
                    continue;
                }
                let a = c.alpha[k];
                let h_s = &c.input[s * d..(s + 1) * d];
                let r_row = rel.embeddings.row(r);
                for i in 0..d {
                    msg[i] = h_s[i] + r_row[i];
                }
                let ca = scale * a;
                axpy(ca, ga, &mut g_prev[s * d..(s + 1) * d]);
                axpy(ca, ga, &mut grad_relations[r * d..(r + 1) * d]);
                let g_alpha = scale * dot(ga, &msg);
                let g_logit = g_alpha * a * (T::one() - a);
                if g_logit == T::zero() {
                    continue;
                }
                let ps = src_proj_cache[s].get_or_insert_with(|| {
                    let mut p = vec![T::zero(); d];
                    if h_s.iter().any(|x| *x != T::zero()) {
                        gate.matvec_cols(0, h_s, &mut p);
                    }
                    p
                });
                let pr = &rel_proj[r * d..(r + 1) * d];
                for i in 0..d {
                    let p = ps[i] + pr[i] + query_proj[i];
                    if p > T::zero() {
                        grads.entity.v_gate[layer][i] += g_logit * p;
                        let gp = g_logit * v_gate[i];
                        g1[s * d + i] += gp;
                        g2[r * d + i] += gp;
                        g3[i] += gp;
                    }
                }
            }
            for s in 0..n_prev {
                let gp = &g1[s * d..(s + 1) * d];
                if gp.iter().all(|x| *x == T::zero()) {
                    continue;
                }
                let h_s = &c.input[s * d..(s + 1) * d];
                grads.entity.w_gate[layer].add_outer_cols(0, T::one(), gp, h_s);
                gate.matvec_t_cols_add(0, gp, &mut g_prev[s * d..(s + 1) * d]);
            }
            for r in 0..n_rel {
                let gp = &g2[r * d..(r + 1) * d];
                if gp.iter().all(|x| *x == T::zero()) {
                    continue;
                }
                grads.entity.w_gate[layer].add_outer_cols(d, T::one(), gp, rel.embeddings.row(r));
                gate.matvec_t_cols_add(d, gp, &mut grad_relations[r * d..(r + 1) * d]);
            }
            if g3.iter().any(|x| *x != T::zero()) {
                grads.entity.w_gate[layer].add_outer_cols(2 * d, T::one(), &g3, rel.embeddings.row(r_q));
                gate.matvec_t_cols_add(2 * d, &g3, &mut grad_relations[r_q * d..(r_q + 1) * d]);
            }
            g_h = g_prev;
        }
    }
}

/// Runs one entity layer on `ctx`.
pub fn entity_layer<T: Real>(
    ctx: &mut QueryContext<'_, T>,
    kg: &KnowledgeGraph,
    params: &ModelParams<T>,
) -> Result<(), NumericError> {
    ctx.step(kg, params)
}

/// Scored candidates of a fully propagated context.
pub fn score_candidates<T: Real>(ctx: &QueryContext<'_, T>, params: &ModelParams<T>) -> Vec<(usize, T)> {
    ctx.scores(params)
}

/// Final per-entity states and visited sets of a single query, computed from
/// scratch. Convenience wrapper for one-off queries; batch code shares one
/// [`RelationContext`] per query relation instead.
pub struct Propagation<T> {
    pub relations: RelationContext<T>,
    pub visited: Vec<Vec<usize>>,
    pub states: Vec<(usize, Vec<T>)>,
    pub scores: Vec<(usize, T)>,
}

pub fn propagate<T: Real>(
    kg: &KnowledgeGraph,
    rdg: &RelationDependencyGraph,
    params: &ModelParams<T>,
    e_q: usize,
    r_q: usize,
) -> Result<Propagation<T>, crate::Error> {
    let relations = RelationContext::new(encode_relations(rdg, r_q, params)?, params);
    let (visited, states, scores) = {
        let mut ctx = QueryContext::new(kg, &relations, e_q);
        ctx.run(kg, params)?;
        let visited = (0..=ctx.layer()).map(|l| ctx.visited(l).to_vec()).collect();
        let states = ctx
            .visited_now()
            .iter()
            .map(|&e| (e, ctx.state(e).unwrap().to_vec()))
            .collect();
        (visited, states, ctx.scores(params))
    };
    Ok(Propagation {
        relations,
        visited,
        states,
        scores,
    })
}
