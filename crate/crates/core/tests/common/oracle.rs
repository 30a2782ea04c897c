//! Straightforward dense re-implementations used as test oracles. Nothing
//! here shares code with the library beyond the data types.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use reldep::kg::{KnowledgeGraph, Triple};
use reldep::params::{Activation, ModelParams};

/// `(r_i, r_j) → number of fact pairs (e, r_i, e'), (e', r_j, e'')`.
pub fn brute_adjacency(kg: &KnowledgeGraph) -> BTreeMap<(usize, usize), usize> {
    let mut out = BTreeMap::new();
    for a in kg.facts() {
        for b in kg.facts() {
            if a.tail == b.head {
                *out.entry((a.relation, b.relation)).or_insert(0) += 1;
            }
        }
    }
    out
}

/// Transitive closure by repeated relaxation (Floyd-Warshall on booleans).
pub fn closure(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<Vec<bool>> {
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(u, v) in edges {
        reach[u][v] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach
}

/// Checks that `order` is a permutation whose strongly connected components
/// are contiguous, internally sorted by descending frequency then id, and
/// topologically ordered with respect to every cross-component edge.
pub fn check_order(n: usize, pairs: &BTreeSet<(usize, usize)>, freq: &[usize], order: &[usize]) -> Result<(), String> {
    let mut seen = vec![false; n];
    for &r in order {
        if r >= n || seen[r] {
            return Err(format!("order is not a permutation: {order:?}"));
        }
        seen[r] = true;
    }
    if order.len() != n {
        return Err("order does not cover every relation".into());
    }
    let mut rank = vec![0; n];
    for (i, &r) in order.iter().enumerate() {
        rank[r] = i;
    }
    let reach = closure(n, pairs);
    let same = |a: usize, b: usize| reach[a][b] && reach[b][a];
    for &(u, v) in pairs {
        if u != v && !same(u, v) && rank[u] > rank[v] {
            return Err(format!("edge {u}->{v} crosses components against the order"));
        }
    }
    for u in 0..n {
        let members: Vec<usize> = (0..n).filter(|&v| same(u, v)).collect();
        let mut ranks: Vec<usize> = members.iter().map(|&v| rank[v]).collect();
        ranks.sort_unstable();
        if ranks.last().unwrap() - ranks[0] + 1 != members.len() {
            return Err(format!("component of {u} is not contiguous"));
        }
        let mut expect = members.clone();
        expect.sort_by_key(|&r| (std::cmp::Reverse(freq[r]), r));
        let actual: Vec<usize> = order[ranks[0]..ranks[0] + members.len()].to_vec();
        if actual != expect {
            return Err(format!("component order {actual:?}, expected {expect:?}"));
        }
    }
    Ok(())
}

/// Relations at distance `≤ hops` from `source` along directed `edges`.
pub fn bfs_within(n: usize, edges: &[(usize, usize)], source: usize, hops: usize) -> Vec<bool> {
    let mut dist = vec![usize::MAX; n];
    dist[source] = 0;
    let mut q = VecDeque::from([source]);
    while let Some(u) = q.pop_front() {
        for &(a, b) in edges {
            if a == u && dist[b] == usize::MAX {
                dist[b] = dist[u] + 1;
                q.push_back(b);
            }
        }
    }
    dist.iter().map(|&d| d <= hops).collect()
}

/// Entities reachable from `source` along fact direction in `≤ hops` steps.
pub fn entity_ball(kg: &KnowledgeGraph, source: usize, hops: usize, masked: &[Triple]) -> BTreeSet<usize> {
    let mut ball = BTreeSet::from([source]);
    for _ in 0..hops {
        let next: Vec<usize> = kg
            .facts()
            .iter()
            .filter(|f| ball.contains(&f.head) && !masked.contains(f))
            .map(|f| f.tail)
            .collect();
        ball.extend(next);
    }
    ball
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Identity => x,
        Activation::Relu => x.max(0.0),
        Activation::Tanh => x.tanh(),
    }
}

fn mat(m: &reldep::tensor::Matrix<f64>, x: &[f64], col_off: usize) -> Vec<f64> {
    (0..m.rows())
        .map(|i| (0..x.len()).map(|j| m.get(i, col_off + j) * x[j]).sum())
        .collect()
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub struct DenseRelations {
    /// `n × d` final states.
    pub states: Vec<Vec<f64>>,
    /// `[layer][head][v]`: weights over sorted `past(v)` then `v` itself.
    pub attention: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Relation encoder evaluated over every relation, without sparsity shortcuts.
/// `past[v]` lists the message sources of `v` in ascending id order.
pub fn dense_relations(params: &ModelParams<f64>, past: &[Vec<usize>], r_q: usize) -> DenseRelations {
    let dims = params.dims;
    let (d, heads, n) = (dims.dim, dims.heads, past.len());
    let mut h = vec![vec![0.0; d]; n];
    h[r_q] = vec![1.0; d];
    let mut attention = Vec::new();
    for l in 0..dims.relation_layers {
        let mut pre = vec![vec![0.0; d]; n];
        let mut per_head = Vec::new();
        for hd in 0..heads {
            let z: Vec<Vec<f64>> = h.iter().map(|x| mat(&params.relation.w_attn[hd], x, 0)).collect();
            let (a_src, a_dst) = params.relation.attn.split_at(d);
            let mut att_v = Vec::new();
            for v in 0..n {
                let mut nbr: Vec<usize> = past[v].clone();
                nbr.push(v);
                let logits: Vec<f64> = nbr.iter().map(|&u| dotp(a_src, &z[u]) + dotp(a_dst, &z[v])).collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
                let s: f64 = e.iter().sum();
                let alpha: Vec<f64> = e.iter().map(|x| x / s).collect();
                let mut agg = vec![0.0; d];
                for (k, &u) in past[v].iter().enumerate() {
                    for i in 0..d {
                        agg[i] += alpha[k] * h[u][i];
                    }
                }
                let self_in: Vec<f64> = h[v].iter().map(|x| alpha[past[v].len()] * x).collect();
                let p = mat(&params.relation.w_path[l * heads + hd], &agg, 0);
                let s = mat(&params.relation.w_self[l * heads + hd], &self_in, 0);
                for i in 0..d {
                    pre[v][i] += (p[i] + s[i]) / heads as f64;
                }
                att_v.push(alpha);
            }
            per_head.push(att_v);
        }
        attention.push(per_head);
        h = pre
            .iter()
            .map(|row| row.iter().map(|&x| act(dims.relation_act, x)).collect())
            .collect();
    }
    DenseRelations { states: h, attention }
}

pub struct DenseEntities {
    /// Visited entities after each layer.
    pub visited: Vec<BTreeSet<usize>>,
    /// Final states of visited entities.
    pub states: BTreeMap<usize, Vec<f64>>,
    pub scores: BTreeMap<usize, f64>,
}

/// Entity encoder over a dense state table, one full pass over the fact list
/// per layer.
pub fn dense_entities(
    kg: &KnowledgeGraph,
    params: &ModelParams<f64>,
    rel: &[Vec<f64>],
    e_q: usize,
    r_q: usize,
) -> DenseEntities {
    let dims = params.dims;
    let d = dims.dim;
    let n = kg.entity_count();
    let mut h = vec![vec![0.0; d]; n];
    h[e_q] = vec![1.0; d];
    let mut visited = BTreeSet::from([e_q]);
    let mut history = vec![visited.clone()];
    for l in 0..dims.entity_layers {
        let gate = &params.entity.w_gate[l];
        let mut acc = vec![vec![0.0; d]; n];
        let mut has_in = vec![false; n];
        let mut next = visited.clone();
        for f in kg.facts().iter().filter(|f| visited.contains(&f.head)) {
            let a = mat(gate, &h[f.head], 0);
            let b = mat(gate, &rel[f.relation], d);
            let c = mat(gate, &rel[r_q], 2 * d);
            let logit: f64 = (0..d)
                .map(|i| params.entity.v_gate[l][i] * (a[i] + b[i] + c[i]).max(0.0))
                .sum();
            let alpha = 1.0 / (1.0 + (-logit).exp());
            for i in 0..d {
                acc[f.tail][i] += alpha * (h[f.head][i] + rel[f.relation][i]);
            }
            has_in[f.tail] = true;
            next.insert(f.tail);
        }
        h = (0..n)
            .map(|e| {
                if has_in[e] {
                    mat(&params.entity.w[l], &acc[e], 0)
                        .into_iter()
                        .map(|x| act(dims.entity_act, x))
                        .collect()
                } else {
                    vec![0.0; d]
                }
            })
            .collect();
        visited = next;
        history.push(visited.clone());
    }
    let states: BTreeMap<usize, Vec<f64>> = visited.iter().map(|&e| (e, h[e].clone())).collect();
    let scores = states
        .iter()
        .map(|(&e, s)| (e, dotp(&params.entity.scorer, s)))
        .collect();
    DenseEntities {
        visited: history,
        states,
        scores,
    }
}

/// Filtered rank with ties averaged, by direct counting over all entities.
/// Entities without a score sit below every scored entity and tie with each
/// other.
pub fn brute_rank(answer: usize, scores: &BTreeMap<usize, f64>, filter: &BTreeSet<usize>, universe: usize) -> f64 {
    let candidates: Vec<usize> = (0..universe).filter(|e| *e == answer || !filter.contains(e)).collect();
    let key = |e: usize| scores.get(&e).copied();
    let a = key(answer);
    let mut better = 0.0;
    let mut ties = 0.0;
    for &e in &candidates {
        if e == answer {
            continue;
        }
        match (key(e), a) {
            (Some(x), Some(y)) if x > y => better += 1.0,
            (Some(x), Some(y)) if x == y => ties += 1.0,
            (Some(_), None) => better += 1.0,
            (None, None) => ties += 1.0,
            _ => {}
        }
    }
    1.0 + better + ties / 2.0
}
