//! Filtered ranking, metrics, attention-based edge importance, and edge
//! perturbation studies.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::entity_encoder::{QueryContext, RelationContext};
use crate::error::{DataError, Error};
use crate::kg::{KnowledgeGraph, KnownTrue, Triple, VocabMap};
use crate::params::ModelParams;
use crate::rdg::{build_rdg, RelationDependencyGraph};
use crate::relation_encoder::RelationForward;
use crate::tensor::Real;

/// Filtered rank of `answer` with average ties.
///
/// `reached` holds the scored candidates; every other entity of the
/// `universe` counts as tied below all of them. Entities in `filter` other
/// than the answer are removed first.
pub fn filtered_rank<T: Real>(
    answer: usize,
    reached: &[(usize, T)],
    filter: &[usize],
    universe: usize,
) -> Result<f64, Error> {
    if answer >= universe {
        return Err(DataError::IdOutOfRange {
            index: 0,
            what: "answer",
            id: answer,
            limit: universe,
        }
        .into());
    }
    let filtered = |e: usize| e != answer && filter.contains(&e);
    let answer_score = reached.iter().find(|(e, _)| *e == answer).map(|(_, s)| *s);
    let mut kept = 0usize;
    let mut greater = 0usize;
    let mut equal = 0usize;
    for &(e, s) in reached {
        if filtered(e) {
            continue;
        }
        kept += 1;
        if let Some(sa) = answer_score {
            if e != answer {
                if s > sa {
                    greater += 1;
                } else if s == sa {
                    equal += 1;
                }
            }
        }
    }
    match answer_score {
        Some(_) => Ok(1.0 + greater as f64 + equal as f64 / 2.0),
        None => {
            let filtered_unreached = filter
                .iter()
                .filter(|&&e| e != answer && e < universe && !reached.iter().any(|(r, _)| *r == e))
                .count();
            // includes the answer itself
            let unreached = universe - reached.len() - filtered_unreached;
            Ok(kept as f64 + (unreached as f64 + 1.0) / 2.0)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub count: usize,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

pub fn compute_metrics(ranks: &[f64]) -> Metrics {
    if ranks.is_empty() {
        return Metrics::default();
    }
    let n = ranks.len() as f64;
    let mut m = Metrics {
        count: ranks.len(),
        ..Metrics::default()
    };
    for &r in ranks {
        m.mrr += 1.0 / r;
        m.hits1 += (r <= 1.0) as u8 as f64;
        m.hits3 += (r <= 3.0) as u8 as f64;
        m.hits10 += (r <= 10.0) as u8 as f64;
    }
    m.mrr /= n;
    m.hits1 /= n;
    m.hits3 /= n;
    m.hits10 /= n;
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `(h, r, ?)`
    Tail,
    /// `(?, r, t)` answered as `(t, r⁻¹, ?)`
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Directions {
    Both,
    TailOnly,
    HeadOnly,
}

impl Directions {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "both" => Some(Directions::Both),
            "tail" => Some(Directions::TailOnly),
            "head" => Some(Directions::HeadOnly),
            _ => None,
        }
    }

    fn includes(self, d: Direction) -> bool {
        matches!(
            (self, d),
            (Directions::Both, _) | (Directions::TailOnly, Direction::Tail) | (Directions::HeadOnly, Direction::Head)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedQuery {
    /// The original triple.
    pub triple: Triple,
    pub direction: Direction,
    pub rank: f64,
    pub reachable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub ranks: Vec<RankedQuery>,
    pub overall: Metrics,
    pub tail: Metrics,
    pub head: Metrics,
    pub unreachable: usize,
    /// Head-direction queries that could not be posed because the graph has
    /// no inverse relations.
    pub skipped: usize,
    /// Set when a perturbation asked for more edges than exist.
    pub degenerate: bool,
}

impl EvalReport {
    fn from_ranks(ranks: Vec<RankedQuery>, skipped: usize) -> Self {
        let all: Vec<f64> = ranks.iter().map(|q| q.rank).collect();
        let of = |d: Direction| -> Vec<f64> { ranks.iter().filter(|q| q.direction == d).map(|q| q.rank).collect() };
        EvalReport {
            overall: compute_metrics(&all),
            tail: compute_metrics(&of(Direction::Tail)),
            head: compute_metrics(&of(Direction::Head)),
            unreachable: ranks.iter().filter(|q| !q.reachable).count(),
            skipped,
            degenerate: false,
            ranks,
        }
    }

    pub fn mrr(&self) -> f64 {
        self.overall.mrr
    }

    /// `scope,count,mrr,hits1,hits3,hits10` with one row per direction.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scope,count,mrr,hits1,hits3,hits10\n");
        for (name, m) in [("all", &self.overall), ("tail", &self.tail), ("head", &self.head)] {
            let _ = writeln!(
                s,
                "{name},{},{:.6},{:.6},{:.6},{:.6}",
                m.count, m.mrr, m.hits1, m.hits3, m.hits10
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<6} {:>7} {:>8} {:>8} {:>8} {:>8}\n",
            "scope", "count", "MRR", "H@1", "H@3", "H@10"
        );
        for (name, m) in [("all", &self.overall), ("tail", &self.tail), ("head", &self.head)] {
            let _ = writeln!(
                s,
                "{name:<6} {:>7} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                m.count, m.mrr, m.hits1, m.hits3, m.hits10
            );
        }
        let _ = writeln!(s, "unreachable answers: {}", self.unreachable);
        if self.skipped > 0 {
            let _ = writeln!(s, "head queries skipped (no inverse relations): {}", self.skipped);
        }
        if self.degenerate {
            let _ = writeln!(s, "degenerate perturbation: every retained edge removed");
        }
        s
    }
}

struct Posed {
    index: usize,
    original: Triple,
    direction: Direction,
    query: Triple,
}

fn pose(graph: &KnowledgeGraph, queries: &[Triple], directions: Directions) -> (Vec<Posed>, usize) {
    let mut posed = Vec::new();
    let mut skipped = 0;
    for &t in queries {
        if directions.includes(Direction::Tail) {
            posed.push(Posed {
                index: posed.len(),
                original: t,
                direction: Direction::Tail,
                query: t,
            });
        }
        if directions.includes(Direction::Head) {
            match graph.inverse_relation(t.relation) {
                Some(inv) => posed.push(Posed {
                    index: posed.len(),
                    original: t,
                    direction: Direction::Head,
                    query: Triple::new(t.tail, inv, t.head),
                }),
                None => skipped += 1,
            }
        }
    }
    (posed, skipped)
}

fn check_ids(graph: &KnowledgeGraph, queries: &[Triple]) -> Result<(), Error> {
    for (index, t) in queries.iter().enumerate() {
        for (what, id, limit) in [
            ("head", t.head, graph.entity_count()),
            ("relation", t.relation, graph.base_relation_count()),
            ("tail", t.tail, graph.entity_count()),
        ] {
            if id >= limit {
                return Err(DataError::IdOutOfRange { index, what, id, limit }.into());
            }
        }
    }
    Ok(())
}

/// Ranks every query (in the chosen directions) against all entities of
/// `graph`, filtering with `known_true`.
pub fn evaluate<T: Real>(
    params: &ModelParams<T>,
    graph: &KnowledgeGraph,
    queries: &[Triple],
    known_true: &KnownTrue,
    directions: Directions,
) -> Result<EvalReport, Error> {
    evaluate_with_rdg(params, graph, &build_rdg(graph), queries, known_true, directions)
}

pub fn evaluate_with_rdg<T: Real>(
    params: &ModelParams<T>,
    graph: &KnowledgeGraph,
    rdg: &RelationDependencyGraph,
    queries: &[Triple],
    known_true: &KnownTrue,
    directions: Directions,
) -> Result<EvalReport, Error> {
    check_ids(graph, queries)?;
    let (posed, skipped) = pose(graph, queries, directions);
    let mut groups: BTreeMap<usize, Vec<&Posed>> = BTreeMap::new();
    for p in &posed {
        groups.entry(p.query.relation).or_default().push(p);
    }
    let groups: Vec<(usize, Vec<&Posed>)> = groups.into_iter().collect();
    let universe = graph.entity_count();
    let ranked: Vec<Result<Vec<(usize, RankedQuery)>, Error>> = groups
        .par_iter()
        .map(|(r_q, members)| {
            let forward = RelationForward::run(rdg, *r_q, params)?;
            let relations = RelationContext::new(forward.into_embeddings(), params);
            members
                .par_iter()
                .map(|p| {
                    let mut ctx = QueryContext::new(graph, &relations, p.query.head);
                    ctx.run(graph, params)?;
                    let scores = ctx.scores(params);
                    let filter = known_true.tails(p.query.head, p.query.relation);
                    let rank = filtered_rank(p.query.tail, &scores, filter, universe)?;
                    Ok((
                        p.index,
                        RankedQuery {
                            triple: p.original,
                            direction: p.direction,
                            rank,
                            reachable: ctx.is_visited(p.query.tail),
                        },
                    ))
                })
                .collect()
        })
        .collect();
    let mut all = Vec::with_capacity(posed.len());
    for g in ranked {
        all.extend(g?);
    }
    all.sort_by_key(|(i, _)| *i);
    Ok(EvalReport::from_ranks(
        all.into_iter().map(|(_, q)| q).collect(),
        skipped,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeImportance {
    pub from: usize,
    pub to: usize,
    /// Mean attention of `to` on `from` over sampled query relations,
    /// layers, and heads.
    pub importance: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeImportanceTable {
    pub edges: Vec<EdgeImportance>,
}

impl EdgeImportanceTable {
    /// Retained edges ordered by importance, highest first; ties by id.
    pub fn ranked(&self) -> Vec<&EdgeImportance> {
        let mut v: Vec<&EdgeImportance> = self.edges.iter().collect();
        v.sort_by(|a, b| {
            b.importance
                .total_cmp(&a.importance)
                .then((a.from, a.to).cmp(&(b.from, b.to)))
        });
        v
    }

    pub fn to_csv(&self, vocab: Option<&VocabMap>) -> String {
        let mut s = String::from("from,to,importance,samples\n");
        for e in &self.edges {
            let (f, t) = match vocab {
                Some(v) => (v.relation_label(e.from), v.relation_label(e.to)),
                None => (e.from.to_string(), e.to.to_string()),
            };
            let _ = writeln!(s, "{f},{t},{:.6},{}", e.importance, e.samples);
        }
        s
    }
}

/// Query relations of up to `sample` queries drawn without replacement,
/// each contributing its tail direction and, when the graph has inverses,
/// its head direction.
pub fn sample_query_relations<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    queries: &[Triple],
    sample_size: usize,
    rng: &mut R,
) -> Vec<usize> {
    let k = sample_size.min(queries.len());
    let mut picked: Vec<usize> = sample(rng, queries.len(), k).into_vec();
    picked.sort_unstable();
    let mut out = Vec::new();
    for i in picked {
        let r = queries[i].relation;
        out.push(r);
        if let Some(inv) = graph.inverse_relation(r) {
            out.push(inv);
        }
    }
    out
}

/// Mean relation-attention weight of every retained dependency edge over the
/// given query relations, all layers and all heads.
pub fn edge_importance_for<T: Real>(
    params: &ModelParams<T>,
    rdg: &RelationDependencyGraph,
    query_relations: &[usize],
) -> Result<EdgeImportanceTable, Error> {
    let per_query: Vec<Result<Vec<f64>, Error>> = query_relations
        .par_iter()
        .map(|&r_q| {
            let fwd = RelationForward::run(rdg, r_q, params)?;
            let mut sums = vec![0.0; rdg.retained_count()];
            for l in 0..fwd.layer_count() {
                for h in 0..params.dims.heads {
                    let att = fwd.attention(l, h);
                    let mut k = 0;
                    for v in 0..rdg.relation_count() {
                        for &a in &att.of(rdg, v)[..rdg.past_neighbors(v).len()] {
                            sums[k] += a.as_f64();
                            k += 1;
                        }
                    }
                }
            }
            Ok(sums)
        })
        .collect();
    let mut total = vec![0.0; rdg.retained_count()];
    for s in per_query {
        for (t, x) in total.iter_mut().zip(s?) {
            *t += x;
        }
    }
    let samples = query_relations.len() * params.dims.relation_layers * params.dims.heads;
    // retained_edges enumerates targets in id order, matching the slot walk
    let edges = rdg
        .retained_edges()
        .zip(total)
        .map(|((from, to), sum)| EdgeImportance {
            from,
            to,
            importance: if samples == 0 { 0.0 } else { sum / samples as f64 },
            samples,
        })
        .collect();
    Ok(EdgeImportanceTable { edges })
}

pub fn edge_importance<T: Real, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    graph: &KnowledgeGraph,
    queries: &[Triple],
    sample_size: usize,
    rng: &mut R,
) -> Result<EdgeImportanceTable, Error> {
    let rdg = build_rdg(graph);
    let rels = sample_query_relations(graph, queries, sample_size, rng);
    edge_importance_for(params, &rdg, &rels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    Top,
    Bottom,
    Random,
}

impl PerturbMode {
    pub fn tag(self) -> &'static str {
        match self {
            PerturbMode::Top => "top",
            PerturbMode::Bottom => "bottom",
            PerturbMode::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "top" => Some(PerturbMode::Top),
            "bottom" => Some(PerturbMode::Bottom),
            "random" => Some(PerturbMode::Random),
            _ => None,
        }
    }
}

/// The `k` edges to disable under `mode`; all edges when `k` exceeds the count.
pub fn select_edges<R: Rng + ?Sized>(
    table: &EdgeImportanceTable,
    mode: PerturbMode,
    k: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let k = k.min(table.edges.len());
    match mode {
        PerturbMode::Top => table.ranked().iter().take(k).map(|e| (e.from, e.to)).collect(),
        PerturbMode::Bottom => table.ranked().iter().rev().take(k).map(|e| (e.from, e.to)).collect(),
        PerturbMode::Random => {
            let mut idx = sample(rng, table.edges.len(), k).into_vec();
            idx.sort_unstable();
            idx.iter().map(|&i| (table.edges[i].from, table.edges[i].to)).collect()
        }
    }
}

/// Evaluation with `k` dependency edges removed from every past-neighbor list.
#[allow(clippy::too_many_arguments)]
pub fn perturbed_evaluate<T: Real, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    graph: &KnowledgeGraph,
    queries: &[Triple],
    known_true: &KnownTrue,
    table: &EdgeImportanceTable,
    mode: PerturbMode,
    k: usize,
    rng: &mut R,
) -> Result<(EvalReport, Vec<(usize, usize)>), Error> {
    let rdg = build_rdg(graph);
    let removed = select_edges(table, mode, k, rng);
    let perturbed = rdg.without_edges(&removed);
    let mut report = evaluate_with_rdg(params, graph, &perturbed, queries, known_true, Directions::Both)?;
    report.degenerate = k > table.edges.len();
    Ok((report, removed))
}

pub const PERTURB_HEADER: &str = "mode,k,seed,mrr,h1,h10";

pub fn perturb_csv_row(mode: PerturbMode, k: usize, seed: u64, report: &EvalReport) -> String {
    format!(
        "{},{k},{seed},{:.6},{:.6},{:.6}",
        mode.tag(),
        report.overall.mrr,
        report.overall.hits1,
        report.overall.hits10
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub head: usize,
    pub relation: usize,
    pub candidate: usize,
    pub score: f64,
    pub rank: usize,
}

/// Top-`k` reached candidates per query, by descending score then entity id.
pub fn predict<T: Real>(
    params: &ModelParams<T>,
    graph: &KnowledgeGraph,
    queries: &[(usize, usize)],
    top_k: usize,
) -> Result<Vec<Prediction>, Error> {
    let rdg = build_rdg(graph);
    let per_query: Vec<Result<Vec<Prediction>, Error>> = queries
        .par_iter()
        .map(|&(head, relation)| {
            if head >= graph.entity_count() || relation >= graph.relation_count() {
                return Err(Error::Config(format!("query ({head}, {relation}) outside the graph")));
            }
            let fwd = RelationForward::run(&rdg, relation, params)?;
            let rel = RelationContext::new(fwd.into_embeddings(), params);
            let mut ctx = QueryContext::new(graph, &rel, head);
            ctx.run(graph, params)?;
            let mut scores = ctx.scores(params);
            scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            Ok(scores
                .into_iter()
                .take(top_k)
                .enumerate()
                .map(|(i, (candidate, score))| Prediction {
                    head,
                    relation,
                    candidate,
                    score: score.as_f64(),
                    rank: i + 1,
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for p in per_query {
        out.extend(p?);
    }
    Ok(out)
}

/// `head\trelation\tcandidate\tscore\trank`, with names when a vocabulary is given.
pub fn predictions_tsv(preds: &[Prediction], vocab: Option<&VocabMap>) -> String {
    let mut s = String::from("head\trelation\tcandidate\tscore\trank\n");
    for p in preds {
        let (h, r, c) = match vocab {
            Some(v) => (
                v.entity_label(p.head).to_string(),
                v.relation_label(p.relation),
                v.entity_label(p.candidate).to_string(),
            ),
            None => (p.head.to_string(), p.relation.to_string(), p.candidate.to_string()),
        };
        let _ = writeln!(s, "{h}\t{r}\t{c}\t{:.6}\t{}", p.score, p.rank);
    }
    s
}
