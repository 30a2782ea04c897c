//! Relation-dependency graph construction.
//!
//! An edge `r_i → r_j` exists when some fact `(e, r_i, e')` is followed by a
//! fact `(e', r_j, e'')`. A precedence order over relations keeps only the
//! edges that go forward in that order, which makes message passing acyclic.
//!
//! The order ranks strongly connected components of the pair digraph in
//! topological order of the condensation. Inside a component, and between
//! components that are ready at the same time, relations go by descending
//! fact frequency and then ascending id.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::io::Write;

use serde::Serialize;

use crate::kg::{KnowledgeGraph, VocabMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationPair {
    pub from: usize,
    pub to: usize,
    /// Number of fact pairs witnessing the dependency.
    pub support: usize,
}

/// All witnessed `(r_i, r_j)` pairs with support counts, sorted by `(from, to)`.
/// Self-pairs are included.
pub fn relation_adjacency(kg: &KnowledgeGraph) -> Vec<RelationPair> {
    let n = kg.entity_count();
    let mut incoming: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for f in kg.facts() {
        bump(&mut incoming[f.tail], f.relation);
    }
    let mut support: HashMap<(usize, usize), usize> = HashMap::new();
    let mut outgoing: Vec<(usize, usize)> = Vec::new();
    for (mid, ins) in incoming.iter().enumerate() {
        if ins.is_empty() {
            continue;
        }
        outgoing.clear();
        for f in kg.out_facts(mid) {
            bump(&mut outgoing, f.relation);
        }
        for &(ri, ci) in ins {
            for &(rj, cj) in &outgoing {
                *support.entry((ri, rj)).or_default() += ci * cj;
            }
        }
    }
    let mut pairs: Vec<RelationPair> = support
        .into_iter()
        .map(|((from, to), support)| RelationPair { from, to, support })
        .collect();
    pairs.sort_unstable();
    pairs
}

fn bump(counts: &mut Vec<(usize, usize)>, r: usize) {
    match counts.iter_mut().find(|(x, _)| *x == r) {
        Some((_, c)) => *c += 1,
        None => counts.push((r, 1)),
    }
}

/// Strict total order over relations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tau {
    order: Vec<usize>,
    rank: Vec<usize>,
}

impl Tau {
    pub fn from_order(order: Vec<usize>) -> Self {
        let mut rank = vec![usize::MAX; order.len()];
        for (i, &r) in order.iter().enumerate() {
            assert!(rank[r] == usize::MAX, "relation {r} appears twice");
            rank[r] = i;
        }
        Tau { order, rank }
    }

    /// Relations from lowest to highest precedence.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn rank(&self, r: usize) -> usize {
        self.rank[r]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Strongly connected components by Tarjan's algorithm, iterative.
/// Components come out in reverse topological order.
pub fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0usize;
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        call.push((root, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut child)) = call.last_mut() {
            if let Some(&w) = adj[v].get(*child) {
                *child += 1;
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comps.push(comp);
            }
        }
    }
    comps
}

pub fn compute_tau(relation_count: usize, pairs: &[RelationPair], relation_freq: &[usize]) -> Tau {
    let freq = |r: usize| relation_freq.get(r).copied().unwrap_or(0);
    let mut adj = vec![Vec::new(); relation_count];
    for p in pairs {
        if p.from != p.to {
            adj[p.from].push(p.to);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }

    let mut comps = strongly_connected_components(&adj);
    for c in &mut comps {
        c.sort_by_key(|&r| (Reverse(freq(r)), r));
    }
    let mut comp_of = vec![0usize; relation_count];
    for (ci, c) in comps.iter().enumerate() {
        for &r in c {
            comp_of[r] = ci;
        }
    }
    let mut indegree = vec![0usize; comps.len()];
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); comps.len()];
    for (u, outs) in adj.iter().enumerate() {
        for &v in outs {
            let (cu, cv) = (comp_of[u], comp_of[v]);
            if cu != cv && succ[cu].insert(cv) {
                indegree[cv] += 1;
            }
        }
    }

    // Kahn's algorithm; ready components ordered by their leading relation.
    let key = |ci: usize| {
        let lead = comps[ci][0];
        Reverse((Reverse(freq(lead)), lead, ci))
    };
    let mut ready: BinaryHeap<_> = (0..comps.len()).filter(|&c| indegree[c] == 0).map(key).collect();
    let mut order = Vec::with_capacity(relation_count);
    while let Some(Reverse((_, _, ci))) = ready.pop() {
        order.extend_from_slice(&comps[ci]);
        for &cv in &succ[ci] {
            indegree[cv] -= 1;
            if indegree[cv] == 0 {
                ready.push(key(cv));
            }
        }
    }
    Tau::from_order(order)
}

#[derive(Clone, Debug)]
pub struct RelationDependencyGraph {
    relation_count: usize,
    edges: Vec<RelationPair>,
    tau: Tau,
    past_offsets: Vec<usize>,
    past: Vec<usize>,
}

impl RelationDependencyGraph {
    /// Assembles the graph from witnessed pairs and an order. Only pairs with
    /// `rank(from) < rank(to)` become message edges; self-pairs never do.
    pub fn from_parts(relation_count: usize, edges: Vec<RelationPair>, tau: Tau) -> Self {
        assert_eq!(tau.len(), relation_count, "order covers every relation");
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); relation_count];
        for e in &edges {
            if tau.rank(e.from) < tau.rank(e.to) {
                lists[e.to].push(e.from);
            }
        }
        let mut past_offsets = Vec::with_capacity(relation_count + 1);
        let mut past = Vec::new();
        past_offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            past.extend(l);
            past_offsets.push(past.len());
        }
        RelationDependencyGraph {
            relation_count,
            edges,
            tau,
            past_offsets,
            past,
        }
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    /// Every witnessed pair, including those the order drops.
    pub fn edges(&self) -> &[RelationPair] {
        &self.edges
    }

    pub fn tau(&self) -> &Tau {
        &self.tau
    }

    /// Predecessors of `v` that precede it in the order, sorted by id.
    pub fn past_neighbors(&self, v: usize) -> &[usize] {
        &self.past[self.past_offsets[v]..self.past_offsets[v + 1]]
    }

    /// Offset of `v`'s first neighbor in the flattened neighbor list.
    pub fn past_offset(&self, v: usize) -> usize {
        self.past_offsets[v]
    }

    /// Retained message edges `(from, to)`, grouped by `to`.
    pub fn retained_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.relation_count).flat_map(move |v| self.past_neighbors(v).iter().map(move |&u| (u, v)))
    }

    pub fn retained_count(&self) -> usize {
        self.past.len()
    }

    pub fn support(&self, from: usize, to: usize) -> usize {
        self.edges
            .binary_search_by(|p| (p.from, p.to).cmp(&(from, to)))
            .map(|i| self.edges[i].support)
            .unwrap_or(0)
    }

    /// Copy with the given message edges disabled. The order is unchanged.
    pub fn without_edges(&self, removed: &[(usize, usize)]) -> Self {
        let drop: BTreeSet<(usize, usize)> = removed.iter().copied().collect();
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|e| !drop.contains(&(e.from, e.to)))
            .collect();
        Self::from_parts(self.relation_count, edges, self.tau.clone())
    }

    /// Relations reachable from `source` along message edges within `hops` steps,
    /// `source` included.
    pub fn reachable_within(&self, source: usize, hops: usize) -> Vec<bool> {
        let mut succ = vec![Vec::new(); self.relation_count];
        for (u, v) in self.retained_edges() {
            succ[u].push(v);
        }
        let mut seen = vec![false; self.relation_count];
        seen[source] = true;
        let mut frontier = vec![source];
        for _ in 0..hops {
            let mut next = Vec::new();
            for u in frontier {
                for &v in &succ[u] {
                    if !seen[v] {
                        seen[v] = true;
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        seen
    }

    pub fn write_edges<W: Write>(&self, mut w: W, vocab: Option<&VocabMap>) -> std::io::Result<()> {
        for (u, v) in self.retained_edges() {
            let s = self.support(u, v);
            match vocab {
                Some(vm) => writeln!(w, "{}\t{}\t{s}", vm.relation_label(u), vm.relation_label(v))?,
                None => writeln!(w, "{u}\t{v}\t{s}")?,
            }
        }
        Ok(())
    }

    pub fn write_tau<W: Write>(&self, mut w: W, vocab: Option<&VocabMap>) -> std::io::Result<()> {
        for (rank, &r) in self.tau.order().iter().enumerate() {
            match vocab {
                Some(vm) => writeln!(w, "{}\t{rank}", vm.relation_label(r))?,
                None => writeln!(w, "{r}\t{rank}")?,
            }
        }
        Ok(())
    }
}

pub fn build_rdg(kg: &KnowledgeGraph) -> RelationDependencyGraph {
    let pairs = relation_adjacency(kg);
    let tau = compute_tau(kg.relation_count(), &pairs, kg.relation_freq());
    RelationDependencyGraph::from_parts(kg.relation_count(), pairs, tau)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaMethod {
    Rdg,
    Ingram,
    Ultra,
}

impl MetaMethod {
    pub fn tag(self) -> &'static str {
        match self {
            MetaMethod::Rdg => "rdg",
            MetaMethod::Ingram => "ingram",
            MetaMethod::Ultra => "ultra",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rdg" => Some(MetaMethod::Rdg),
            "ingram" => Some(MetaMethod::Ingram),
            "ultra" => Some(MetaMethod::Ultra),
            _ => None,
        }
    }
}

/// Per-type counts for the four head/tail interaction patterns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TypedCounts {
    pub h2h: usize,
    pub h2t: usize,
    pub t2h: usize,
    pub t2t: usize,
}

impl TypedCounts {
    pub fn total(&self) -> usize {
        self.h2h + self.h2t + self.t2h + self.t2t
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MetaGraphStats {
    pub method: MetaMethod,
    pub relations: usize,
    pub edges: usize,
    pub typed: Option<TypedCounts>,
    /// Counting convention, e.g. "unordered pairs".
    pub convention: &'static str,
}

pub const STATS_HEADER: &str = "dataset,method,relations,edges,h2h,h2t,t2h,t2t";

impl MetaGraphStats {
    pub fn csv_row(&self, dataset: &str) -> String {
        let typed = match self.typed {
            Some(t) => format!("{},{},{},{}", t.h2h, t.h2t, t.t2h, t.t2t),
            None => ",,,".to_owned(),
        };
        format!(
            "{dataset},{},{},{},{typed}",
            self.method.tag(),
            self.relations,
            self.edges
        )
    }
}

pub fn rdg_stats(rdg: &RelationDependencyGraph) -> MetaGraphStats {
    MetaGraphStats {
        method: MetaMethod::Rdg,
        relations: rdg.relation_count(),
        edges: rdg.retained_count(),
        typed: None,
        convention: "directed order-respecting edges, self-pairs excluded",
    }
}

fn incidence(kg: &KnowledgeGraph) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut as_head = vec![Vec::new(); kg.entity_count()];
    let mut as_tail = vec![Vec::new(); kg.entity_count()];
    for f in kg.facts() {
        as_head[f.head].push(f.relation);
        as_tail[f.tail].push(f.relation);
    }
    for l in as_head.iter_mut().chain(as_tail.iter_mut()) {
        l.sort_unstable();
        l.dedup();
    }
    (as_head, as_tail)
}

/// Co-occurrence graph: undirected `{r_i, r_j}`, `i != j`, when some entity is
/// incident to both. Returns the stats and the sorted edge list with `i < j`.
pub fn build_ingram_graph(kg: &KnowledgeGraph) -> (MetaGraphStats, Vec<(usize, usize)>) {
    let (as_head, as_tail) = incidence(kg);
    let mut edges = BTreeSet::new();
    let mut rels = Vec::new();
    for (h, t) in as_head.iter().zip(&as_tail) {
        rels.clear();
        rels.extend(h.iter().chain(t));
        rels.sort_unstable();
        rels.dedup();
        for (i, &a) in rels.iter().enumerate() {
            for &b in &rels[i + 1..] {
                edges.insert((a, b));
            }
        }
    }
    let stats = MetaGraphStats {
        method: MetaMethod::Ingram,
        relations: kg.relation_count(),
        edges: edges.len(),
        typed: None,
        convention: "unordered pairs, self-pairs excluded",
    };
    (stats, edges.into_iter().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InteractionType {
    H2H,
    H2T,
    T2H,
    T2T,
}

/// Typed directed relation graph over head/tail sharing patterns.
pub fn build_ultra_metagraph(kg: &KnowledgeGraph) -> (MetaGraphStats, Vec<(usize, usize, InteractionType)>) {
    let (as_head, as_tail) = incidence(kg);
    let mut edges = BTreeSet::new();
    let mut add = |xs: &[usize], ys: &[usize], ty| {
        for &a in xs {
            for &b in ys {
                if a != b {
                    edges.insert((a, b, ty));
                }
            }
        }
    };
    for (h, t) in as_head.iter().zip(&as_tail) {
        add(h, h, InteractionType::H2H);
        add(h, t, InteractionType::H2T);
        add(t, h, InteractionType::T2H);
        add(t, t, InteractionType::T2T);
    }
    let mut typed = TypedCounts::default();
    for &(_, _, ty) in &edges {
        match ty {
            InteractionType::H2H => typed.h2h += 1,
            InteractionType::H2T => typed.h2t += 1,
            InteractionType::T2H => typed.t2h += 1,
            InteractionType::T2T => typed.t2t += 1,
        }
    }
    let stats = MetaGraphStats {
        method: MetaMethod::Ultra,
        relations: kg.relation_count(),
        edges: typed.total(),
        typed: Some(typed),
        convention: "ordered typed pairs, self-pairs excluded",
    };
    (stats, edges.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triple;

    fn kg(triples: &[(usize, usize, usize)]) -> KnowledgeGraph {
        let t: Vec<Triple> = triples.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect();
        KnowledgeGraph::from_triples(&t, false).unwrap()
    }

    fn pairs(p: &[RelationPair]) -> Vec<(usize, usize)> {
        p.iter().map(|p| (p.from, p.to)).collect()
    }

    #[test]
    fn chain_adjacency() {
        // a -r0-> b -r1-> c
        let p = relation_adjacency(&kg(&[(0, 0, 1), (1, 1, 2)]));
        assert_eq!(
            p,
            vec![RelationPair {
                from: 0,
                to: 1,
                support: 1
            }]
        );
        assert!(relation_adjacency(&kg(&[(0, 0, 1)])).is_empty());
    }

    #[test]
    fn mutual_adjacency() {
        let p = relation_adjacency(&kg(&[(0, 0, 1), (1, 1, 2), (2, 0, 3)]));
        assert_eq!(pairs(&p), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn tau_chain() {
        let p = [
            RelationPair {
                from: 0,
                to: 1,
                support: 1,
            },
            RelationPair {
                from: 1,
                to: 2,
                support: 1,
            },
        ];
        let tau = compute_tau(3, &p, &[1, 5, 9]);
        assert_eq!(tau.order(), &[0, 1, 2]);
    }

    #[test]
    fn tau_cycle_by_frequency() {
        let p = [
            RelationPair {
                from: 0,
                to: 1,
                support: 1,
            },
            RelationPair {
                from: 1,
                to: 0,
                support: 1,
            },
        ];
        let tau = compute_tau(2, &p, &[5, 3]);
        assert!(tau.rank(0) < tau.rank(1));
        let tau = compute_tau(2, &p, &[3, 5]);
        assert!(tau.rank(1) < tau.rank(0));
    }

    #[test]
    fn tau_isolated_relation() {
        // chain 0 -> 1 -> 2, isolated 3 with the highest frequency goes first
        let p = [
            RelationPair {
                from: 0,
                to: 1,
                support: 1,
            },
            RelationPair {
                from: 1,
                to: 2,
                support: 1,
            },
        ];
        assert_eq!(compute_tau(4, &p, &[1, 1, 1, 7]).order(), &[3, 0, 1, 2]);
        assert_eq!(compute_tau(4, &p, &[2, 1, 1, 2]).order(), &[0, 3, 1, 2]);
    }

    #[test]
    fn rdg_chain_and_mutual() {
        let g = build_rdg(&kg(&[(0, 0, 1), (1, 1, 2)]));
        assert_eq!(g.past_neighbors(1), &[0]);
        assert!(g.past_neighbors(0).is_empty());

        let g = build_rdg(&kg(&[(0, 0, 1), (1, 1, 2), (2, 0, 3)]));
        // r0 has frequency 2, so it precedes r1
        assert_eq!(g.retained_edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn rdg_single_relation_has_no_past() {
        let g = build_rdg(&kg(&[(0, 0, 1), (1, 0, 2), (2, 0, 0)]));
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.retained_count(), 0);
    }

    #[test]
    fn ingram_and_ultra_small() {
        let (s, e) = build_ingram_graph(&kg(&[(0, 0, 1), (0, 1, 2)]));
        assert_eq!((s.edges, e), (1, vec![(0, 1)]));
        let (s, e) = build_ultra_metagraph(&kg(&[(0, 0, 1), (0, 1, 2)]));
        assert_eq!(s.edges, 2);
        assert_eq!(e, vec![(0, 1, InteractionType::H2H), (1, 0, InteractionType::H2H)]);

        let (s, e) = build_ultra_metagraph(&kg(&[(0, 0, 1), (1, 1, 2)]));
        assert_eq!(s.edges, 2);
        assert_eq!(e, vec![(0, 1, InteractionType::T2H), (1, 0, InteractionType::H2T)]);

        let single = kg(&[(0, 0, 1), (1, 0, 2)]);
        assert_eq!(build_ingram_graph(&single).0.edges, 0);
        assert_eq!(build_ultra_metagraph(&single).0.edges, 0);
    }

    #[test]
    fn without_edges_leaves_original() {
        let g = build_rdg(&kg(&[(0, 0, 1), (1, 1, 2)]));
        let h = g.without_edges(&[(0, 1)]);
        assert_eq!(h.retained_count(), 0);
        assert_eq!(g.retained_count(), 1);
    }

    #[test]
    fn stats_rows() {
        let g = build_rdg(&kg(&[(0, 0, 1), (1, 1, 2)]));
        assert_eq!(rdg_stats(&g).csv_row("toy"), "toy,rdg,2,1,,,,");
    }
}
