//! Query-conditioned relation embeddings by multi-head attention over the
//! relation-dependency graph.
//!
//! Layer update for relation `v` given query relation `q`:
//!
//! ```text
//! h_v' = act( 1/H Σ_h [ W_path[l,h] Σ_{u ∈ past(v)} α_uv h_u + W_self[l,h] α_vv h_v ] )
//! α_·v = softmax over past(v) ∪ {v} of  a_src·(W_attn[h] h_u) + a_dst·(W_attn[h] h_v)
//! ```
//!
//! States start as the all-ones indicator on `q`. There are no biases, so a
//! relation's state stays exactly zero until a path from `q` reaches it. Rows
//! with an all-zero neighborhood are skipped.

use crate::error::NumericError;
use crate::params::ModelParams;
use crate::rdg::RelationDependencyGraph;
use crate::tensor::{all_finite, axpy, dot, Real};

/// `R_q`: one `d`-vector per relation, conditioned on the query relation.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationEmbeddings<T> {
    pub query_relation: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> RelationEmbeddings<T> {
    pub fn from_rows(query_relation: usize, dim: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len() % dim.max(1), 0);
        RelationEmbeddings {
            query_relation,
            dim,
            data,
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn relation_count(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// Indicator initialization: all-ones on `r_q`, zero elsewhere.
pub fn init_relation_states<T: Real>(relation_count: usize, r_q: usize, dim: usize) -> Result<Vec<T>, crate::Error> {
    if r_q >= relation_count {
        return Err(crate::Error::Config(format!(
            "query relation {r_q} out of range ({relation_count} relations)"
        )));
    }
    let mut s = vec![T::zero(); relation_count * dim];
    s[r_q * dim..(r_q + 1) * dim].fill(T::one());
    Ok(s)
}

/// Attention weights of one head in slot layout: for relation `v`, slots
/// `past_neighbors(v)` in order followed by the self slot.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<T> {
    pub weights: Vec<T>,
}

impl<T: Real> AttentionWeights<T> {
    /// Slot range of relation `v`.
    pub fn slots(rdg: &RelationDependencyGraph, v: usize) -> std::ops::Range<usize> {
        let start = rdg.past_offset(v) + v;
        start..start + rdg.past_neighbors(v).len() + 1
    }

    /// Weights for `v`: neighbor slots then self.
    pub fn of(&self, rdg: &RelationDependencyGraph, v: usize) -> &[T] {
        &self.weights[Self::slots(rdg, v)]
    }
}

fn slot_count(rdg: &RelationDependencyGraph) -> usize {
    rdg.retained_count() + rdg.relation_count()
}

fn active_rows<T: Real>(states: &[T], dim: usize) -> Vec<bool> {
    states
        .chunks(dim)
        .map(|row| row.iter().any(|x| *x != T::zero()))
        .collect()
}

struct HeadScores<T> {
    /// `W_attn[h] h_u` per relation.
    proj: Vec<T>,
    src: Vec<T>,
    dst: Vec<T>,
}

fn head_scores<T: Real>(states: &[T], active: &[bool], params: &ModelParams<T>, head: usize) -> HeadScores<T> {
    let d = params.dims.dim;
    let n = active.len();
    let w = &params.relation.w_attn[head];
    let (a_src, a_dst) = params.relation.attn.split_at(d);
    let mut proj = vec![T::zero(); n * d];
    let mut src = vec![T::zero(); n];
    let mut dst = vec![T::zero(); n];
    for u in (0..n).filter(|&u| active[u]) {
        let z = &mut proj[u * d..(u + 1) * d];
        w.matvec(&states[u * d..(u + 1) * d], z);
        src[u] = dot(a_src, z);
        dst[u] = dot(a_dst, z);
    }
    HeadScores { proj, src, dst }
}

fn softmax_in_place<T: Real>(x: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in x.iter_mut() {
        *v /= s;
    }
}

fn fill_weights<T: Real>(
    rdg: &RelationDependencyGraph,
    scores: &HeadScores<T>,
    needed: &[bool],
) -> AttentionWeights<T> {
    let mut weights = vec![T::zero(); slot_count(rdg)];
    for v in 0..rdg.relation_count() {
        let past = rdg.past_neighbors(v);
        let slots = &mut weights[AttentionWeights::<T>::slots(rdg, v)];
        if !needed[v] {
            // every state in the neighborhood is zero: equal logits
            slots.fill(T::one() / T::lit(slots.len() as f64));
            continue;
        }
        for (s, &u) in slots.iter_mut().zip(past) {
            *s = scores.src[u] + scores.dst[v];
        }
        slots[past.len()] = scores.src[v] + scores.dst[v];
        softmax_in_place(slots);
    }
    AttentionWeights { weights }
}

/// Attention distribution of one head over `past(v) ∪ {v}` for every `v`.
pub fn relation_attention<T: Real>(
    states: &[T],
    rdg: &RelationDependencyGraph,
    params: &ModelParams<T>,
    head: usize,
) -> AttentionWeights<T> {
    let d = params.dims.dim;
    let active = active_rows(states, d);
    let needed: Vec<bool> = (0..rdg.relation_count())
        .map(|v| active[v] || rdg.past_neighbors(v).iter().any(|&u| active[u]))
        .collect();
    let scores = head_scores(states, &active, params, head);
    fill_weights(rdg, &scores, &needed)
}

struct HeadCache<T> {
    scores: HeadScores<T>,
    weights: AttentionWeights<T>,
    /// `Σ_{u ∈ past(v)} α_uv h_u` per relation.
    agg: Vec<T>,
}

struct LayerCache<T> {
    input: Vec<T>,
    active_in: Vec<bool>,
    active_out: Vec<bool>,
    heads: Vec<HeadCache<T>>,
    pre: Vec<T>,
    out: Vec<T>,
}

fn layer_forward<T: Real>(
    input: Vec<T>,
    rdg: &RelationDependencyGraph,
    params: &ModelParams<T>,
    layer: usize,
) -> Result<LayerCache<T>, NumericError> {
    let dims = params.dims;
    let d = dims.dim;
    let n = rdg.relation_count();
    let active_in = active_rows(&input, d);
    let active_out: Vec<bool> = (0..n)
        .map(|v| active_in[v] || rdg.past_neighbors(v).iter().any(|&u| active_in[u]))
        .collect();
    let inv_heads = T::one() / T::lit(dims.heads as f64);
    let mut pre = vec![T::zero(); n * d];
    let mut heads = Vec::with_capacity(dims.heads);
    let mut self_part = vec![T::zero(); d];
    let mut tmp = vec![T::zero(); d];
    for h in 0..dims.heads {
        let scores = head_scores(&input, &active_in, params, h);
        let weights = fill_weights(rdg, &scores, &active_out);
        let w_path = &params.relation.w_path[layer * dims.heads + h];
        let w_self = &params.relation.w_self[layer * dims.heads + h];
        let mut agg = vec![T::zero(); n * d];
        for v in (0..n).filter(|&v| active_out[v]) {
            let past = rdg.past_neighbors(v);
            let w = weights.of(rdg, v);
            let agg_v = &mut agg[v * d..(v + 1) * d];
            for (&u, &a) in past.iter().zip(w) {
                if active_in[u] {
                    axpy(a, &input[u * d..(u + 1) * d], agg_v);
                }
            }
            let pre_v = &mut pre[v * d..(v + 1) * d];
            w_path.matvec(agg_v, &mut tmp);
            axpy(inv_heads, &tmp, pre_v);
            if active_in[v] {
                let a_self = w[past.len()];
                for (s, &x) in self_part.iter_mut().zip(&input[v * d..(v + 1) * d]) {
                    *s = a_self * x;
                }
                w_self.matvec(&self_part, &mut tmp);
                axpy(inv_heads, &tmp, pre_v);
            }
        }
        if !all_finite(&pre) {
            return Err(NumericError::RelationLayer { layer, head: h });
        }
        heads.push(HeadCache { scores, weights, agg });
    }
    let act = dims.relation_act;
    let out: Vec<T> = pre.iter().map(|&x| act.apply(x)).collect();
    if !all_finite(&out) {
        return Err(NumericError::RelationLayer {
            layer,
            head: dims.heads.saturating_sub(1),
        });
    }
    Ok(LayerCache {
        input,
        active_in,
        active_out,
        heads,
        pre,
        out,
    })
}

/// One message-passing round over the dependency graph.
pub fn relation_layer<T: Real>(
    states: &[T],
    rdg: &RelationDependencyGraph,
    params: &ModelParams<T>,
    layer: usize,
) -> Result<Vec<T>, NumericError> {
    Ok(layer_forward(states.to_vec(), rdg, params, layer)?.out)
}

/// Forward pass with everything needed for [`RelationForward::backward`].
pub struct RelationForward<T> {
    query_relation: usize,
    layers: Vec<LayerCache<T>>,
    embeddings: RelationEmbeddings<T>,
}

impl<T: Real> RelationForward<T> {
    pub fn run(rdg: &RelationDependencyGraph, r_q: usize, params: &ModelParams<T>) -> Result<Self, crate::Error> {
        let d = params.dims.dim;
        let mut states = init_relation_states(rdg.relation_count(), r_q, d)?;
        let mut layers = Vec::with_capacity(params.dims.relation_layers);
        for l in 0..params.dims.relation_layers {
            let cache = layer_forward(states, rdg, params, l)?;
            states = cache.out.clone();
            layers.push(cache);
        }
        Ok(RelationForward {
            query_relation: r_q,
            layers,
            embeddings: RelationEmbeddings::from_rows(r_q, d, states),
        })
    }

    pub fn embeddings(&self) -> &RelationEmbeddings<T> {
        &self.embeddings
    }

    pub fn into_embeddings(self) -> RelationEmbeddings<T> {
        self.embeddings
    }

    pub fn query_relation(&self) -> usize {
        self.query_relation
    }

    /// Attention weights for `(layer, head)` as computed in the forward pass.
    pub fn attention(&self, layer: usize, head: usize) -> &AttentionWeights<T> {
        &self.layers[layer].heads[head].weights
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Accumulates parameter gradients given `∂loss/∂R_q` (row-major, `n × d`).
    pub fn backward(
        &self,
        rdg: &RelationDependencyGraph,
        params: &ModelParams<T>,
        grad_out: &[T],
        grads: &mut ModelParams<T>,
    ) {
        let dims = params.dims;
        let d = dims.dim;
        let n = rdg.relation_count();
        let inv_heads = T::one() / T::lit(dims.heads as f64);
        let mut g_states = grad_out.to_vec();
        let mut g_agg = vec![T::zero(); d];
        let mut g_self = vec![T::zero(); d];
        let mut g_z = vec![T::zero(); d];
        let mut self_part = vec![T::zero(); d];
        let mut g_w: Vec<T> = Vec::new();

        for (l, cache) in self.layers.iter().enumerate().rev() {
            let input = &cache.input;
            let mut g_pre = vec![T::zero(); n * d];
            for v in (0..n).filter(|&v| cache.active_out[v]) {
                for k in v * d..(v + 1) * d {
                    g_pre[k] = g_states[k] * dims.relation_act.grad(cache.pre[k], cache.out[k]);
                }
            }
            let mut g_in = vec![T::zero(); n * d];
            for (h, hc) in cache.heads.iter().enumerate() {
                let idx = l * dims.heads + h;
                let w_path = &params.relation.w_path[idx];
                let w_self = &params.relation.w_self[idx];
                let mut g_src = vec![T::zero(); n];
                let mut g_dst = vec![T::zero(); n];
                for v in (0..n).filter(|&v| cache.active_out[v]) {
                    let g_m: Vec<T> = g_pre[v * d..(v + 1) * d].iter().map(|&x| x * inv_heads).collect();
                    if g_m.iter().all(|x| *x == T::zero()) {
                        continue;
                    }
                    let past = rdg.past_neighbors(v);
                    let w = hc.weights.of(rdg, v);
                    let a_self = w[past.len()];
                    let h_v = &input[v * d..(v + 1) * d];
                    for (s, &x) in self_part.iter_mut().zip(h_v) {
                        *s = a_self * x;
                    }
                    grads.relation.w_path[idx].add_outer(T::one(), &g_m, &hc.agg[v * d..(v + 1) * d]);
                    g_agg.fill(T::zero());
                    w_path.matvec_t_add(&g_m, &mut g_agg);
                    g_self.fill(T::zero());
                    if cache.active_in[v] {
                        grads.relation.w_self[idx].add_outer(T::one(), &g_m, &self_part);
                        w_self.matvec_t_add(&g_m, &mut g_self);
                    }

                    g_w.clear();
                    for (&u, &a) in past.iter().zip(w) {
                        if cache.active_in[u] {
                            let h_u = &input[u * d..(u + 1) * d];
                            g_w.push(dot(&g_agg, h_u));
                            axpy(a, &g_agg, &mut g_in[u * d..(u + 1) * d]);
                        } else {
                            g_w.push(T::zero());
                        }
                    }
                    if cache.active_in[v] {
                        g_w.push(dot(&g_self, h_v));
                        axpy(a_self, &g_self, &mut g_in[v * d..(v + 1) * d]);
                    } else {
                        g_w.push(T::zero());
                    }

                    let mean: T = w.iter().zip(&g_w).map(|(&a, &g)| a * g).sum();
                    for (k, (&a, &g)) in w.iter().zip(&g_w).enumerate() {
                        let g_logit = a * (g - mean);
                        let source = if k < past.len() { past[k] } else { v };
                        g_src[source] += g_logit;
                        g_dst[v] += g_logit;
                    }
                }
                let (a_src, a_dst) = params.relation.attn.split_at(d);
                let w_attn = &params.relation.w_attn[h];
                for u in (0..n).filter(|&u| cache.active_in[u]) {
                    let (gs, gd) = (g_src[u], g_dst[u]);
                    if gs == T::zero() && gd == T::zero() {
                        continue;
                    }
                    let z = &hc.scores.proj[u * d..(u + 1) * d];
                    let (ga_src, ga_dst) = grads.relation.attn.split_at_mut(d);
                    axpy(gs, z, ga_src);
                    axpy(gd, z, ga_dst);
                    for k in 0..d {
                        g_z[k] = gs * a_src[k] + gd * a_dst[k];
                    }
                    let h_u = &input[u * d..(u + 1) * d];
                    grads.relation.w_attn[h].add_outer(T::one(), &g_z, h_u);
                    w_attn.matvec_t_add(&g_z, &mut g_in[u * d..(u + 1) * d]);
                }
            }
            g_states = g_in;
        }
    }
}

/// `R_q` after `L_r` layers from the indicator on `r_q`.
pub fn encode_relations<T: Real>(
    rdg: &RelationDependencyGraph,
    r_q: usize,
    params: &ModelParams<T>,
) -> Result<RelationEmbeddings<T>, crate::Error> {
    Ok(RelationForward::run(rdg, r_q, params)?.into_embeddings())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{KnowledgeGraph, Triple};
    use crate::params::{Activation, Dims};
    use crate::rdg::build_rdg;
    use crate::tensor::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(d: usize, heads: usize, layers: usize) -> Dims {
        Dims {
            dim: d,
            heads,
            relation_layers: layers,
            entity_layers: 1,
            relation_act: Activation::Relu,
            entity_act: Activation::Relu,
        }
    }

    fn chain_rdg() -> RelationDependencyGraph {
        let t = [Triple::new(0, 0, 1), Triple::new(1, 1, 2)];
        build_rdg(&KnowledgeGraph::from_triples(&t, false).unwrap())
    }

    #[test]
    fn indicator_init() {
        let s: Vec<f64> = init_relation_states(3, 1, 2).unwrap();
        assert_eq!(s, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.iter().sum::<f64>(), 2.0);
        assert!(init_relation_states::<f64>(3, 3, 2).is_err());
    }

    #[test]
    fn zero_states_give_uniform_attention() {
        // star: relations 1..=3 all precede relation 0
        let t = [
            Triple::new(0, 1, 1),
            Triple::new(0, 2, 1),
            Triple::new(0, 3, 1),
            Triple::new(1, 0, 2),
            Triple::new(1, 0, 3),
            Triple::new(1, 0, 4),
            Triple::new(1, 0, 5),
        ];
        let rdg = build_rdg(&KnowledgeGraph::from_triples(&t, false).unwrap());
        assert_eq!(rdg.past_neighbors(0), &[1, 2, 3]);
        let p = ModelParams::<f64>::init(dims(3, 2, 1), &mut ChaCha8Rng::seed_from_u64(3));
        let w = relation_attention(&[0.0; 4 * 3], &rdg, &p, 0);
        assert_eq!(w.of(&rdg, 0), &[0.25; 4]);
        assert_eq!(w.of(&rdg, 1), &[1.0]);
    }

    #[test]
    fn zero_input_zero_output() {
        let rdg = chain_rdg();
        let p = ModelParams::<f64>::init(dims(4, 2, 1), &mut ChaCha8Rng::seed_from_u64(5));
        let out = relation_layer(&[0.0; 8], &rdg, &p, 0).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_relation_closed_form() {
        // one relation, no edges: h' = relu(W_self · 1 · h) averaged over heads
        let t = [Triple::new(0, 0, 1)];
        let rdg = build_rdg(&KnowledgeGraph::from_triples(&t, false).unwrap());
        let mut p = ModelParams::<f64>::zeros(dims(2, 2, 1));
        p.relation.w_self[0] = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 2.0]);
        p.relation.w_self[1] = Matrix::from_vec(2, 2, vec![3.0, 0.0, 1.0, -4.0]);
        let r = encode_relations(&rdg, 0, &p).unwrap();
        // head0: (1, 2); head1: (3, -3); mean (2, -0.5); relu → (2, 0)
        assert_eq!(r.row(0), &[2.0, 0.0]);
    }

    #[test]
    fn two_relation_chain_hand_value() {
        let rdg = chain_rdg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = ModelParams::<f64>::init(dims(3, 2, 1), &mut rng);
        let r = encode_relations(&rdg, 0, &p).unwrap();
        // relation 1 sees its zero self state and the ones-vector of relation 0;
        // its logits are a_src·W_attn·1 and 0.
        let d = 3;
        let mut expect = [0.0; 3];
        for h in 0..2 {
            let z: Vec<f64> = (0..d).map(|i| p.relation.w_attn[h].row(i).iter().sum()).collect();
            let s = dot(&p.relation.attn[..d], &z);
            let alpha = s.exp() / (s.exp() + 1.0);
            for i in 0..d {
                let row_sum: f64 = p.relation.w_path[h].row(i).iter().sum();
                expect[i] += 0.5 * alpha * row_sum;
            }
        }
        for i in 0..d {
            assert!((r.row(1)[i] - expect[i].max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_layers_is_indicator() {
        let rdg = chain_rdg();
        let p = ModelParams::<f64>::zeros(dims(2, 1, 0));
        let r = encode_relations(&rdg, 1, &p).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn unreachable_rows_stay_zero() {
        let rdg = chain_rdg();
        let p = ModelParams::<f64>::init(dims(3, 2, 3), &mut ChaCha8Rng::seed_from_u64(2));
        // relation 0 precedes 1, so querying 1 never reaches 0
        let r = encode_relations(&rdg, 1, &p).unwrap();
        assert!(r.row(0).iter().all(|&x| x == 0.0));
    }
}
