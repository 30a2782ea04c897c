//! Dataset preparation: interaction-log enrichment with dense entity ids,
//! relation-balanced pruning with inductive partitioning, and split checks.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::DataError;
use crate::kg::Triple;
use crate::objective::{derived_rng, stream};

/// Named triple as read from a TSV file.
pub type NamedTriple = (String, String, String);

pub const INTERACTION_RELATION: &str = "purchase";

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalizationOutput {
    /// Input relations plus the interaction relation, by id.
    pub relations: Vec<(String, usize)>,
    pub interaction_id: usize,
    /// Original facts followed by new interaction facts, relation by id.
    pub triples: Vec<(String, usize, String)>,
    /// Dense ids over train and test entities, in lexicographic name order.
    pub entity_map: Vec<(String, usize)>,
    /// Interaction lines with fewer than two tokens.
    pub skipped_lines: usize,
}

/// Adds an interaction relation with id `max + 1`, turns every
/// `user item…` line into `(user, interaction, item)` facts, unions them with
/// the original facts, and numbers all train and test entities.
///
/// Original-fact relations resolve by name, or by numeric id when the field
/// is an integer naming an existing id.
pub fn canonicalize(
    relations: &[(String, usize)],
    train_interactions: &[String],
    kg: &[NamedTriple],
    test_interactions: &[String],
) -> Result<CanonicalizationOutput, DataError> {
    let interaction_id = relations.iter().map(|(_, id)| id + 1).max().unwrap_or(0);
    let mut extended = relations.to_vec();
    extended.push((INTERACTION_RELATION.to_string(), interaction_id));

    let by_name: HashMap<&str, usize> = relations.iter().map(|(n, id)| (n.as_str(), *id)).collect();
    let ids: HashSet<usize> = relations.iter().map(|(_, id)| *id).collect();
    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    for (line, (h, r, t)) in kg.iter().enumerate() {
        let rid = match by_name.get(r.as_str()) {
            Some(&id) => id,
            None => match r.parse::<usize>() {
                Ok(id) if ids.contains(&id) => id,
                _ => {
                    return Err(DataError::UnknownName {
                        line: line + 1,
                        kind: "relation",
                        name: r.clone(),
                    })
                }
            },
        };
        let fact = (h.clone(), rid, t.clone());
        if seen.insert(fact.clone()) {
            triples.push(fact);
        }
    }
    let mut skipped_lines = 0;
    for line in train_interactions {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 2 {
            skipped_lines += 1;
            continue;
        }
        for item in &tokens[1..] {
            let fact = (tokens[0].to_string(), interaction_id, item.to_string());
            if seen.insert(fact.clone()) {
                triples.push(fact);
            }
        }
    }
    let mut entities: BTreeSet<String> = BTreeSet::new();
    for (h, _, t) in &triples {
        entities.insert(h.clone());
        entities.insert(t.clone());
    }
    for line in test_interactions {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 2 {
            skipped_lines += 1;
            continue;
        }
        entities.extend(tokens.iter().map(|s| s.to_string()));
    }
    let entity_map = entities.into_iter().enumerate().map(|(i, e)| (e, i)).collect();
    Ok(CanonicalizationOutput {
        relations: extended,
        interaction_id,
        triples,
        entity_map,
        skipped_lines,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrunePartitionConfig {
    /// Fraction of each relation's facts kept.
    pub rho: f64,
    /// Fraction of entities and of relations marked seen.
    pub theta: f64,
    pub alpha: (f64, f64, f64),
    /// Global importance weight.
    pub weight: f64,
    pub seed: u64,
}

impl Default for PrunePartitionConfig {
    fn default() -> Self {
        PrunePartitionConfig {
            rho: 0.075,
            theta: 0.7,
            alpha: (0.8, 0.1, 0.1),
            weight: 1.0,
            seed: 0,
        }
    }
}

impl PrunePartitionConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Invalid(m));
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("prune ratio {} outside (0, 1]", self.rho));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad(format!("visibility ratio {} outside (0, 1]", self.theta));
        }
        let (a1, a2, a3) = self.alpha;
        if [a1, a2, a3].iter().any(|a| !(0.0..=1.0).contains(a)) || (a1 + a2 + a3 - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios {a1},{a2},{a3} must be in [0, 1] and sum to 1"));
        }
        if !self.weight.is_finite() {
            return bad("importance weight must be finite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelationRetention {
    pub relation: usize,
    pub total: usize,
    pub kept: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionMetadata {
    pub config: PrunePartitionConfig,
    pub input_triples: usize,
    pub unique_triples: usize,
    pub kept_triples: usize,
    pub retention: Vec<RelationRetention>,
    pub seen_entities: usize,
    pub seen_relations: usize,
    pub initial_train: usize,
    pub target_train: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Moves made with the eligibility rule.
    pub guided_moves: usize,
    /// Moves made without it after the attempt budget ran out.
    pub forced_moves: usize,
    /// Evaluation triples whose elements all occur in train after enforcement.
    pub violations: usize,
    pub achieved: (f64, f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionOutput {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    /// Original entity id → dense id, ascending by original id.
    pub entity_map: Vec<(usize, usize)>,
    pub relation_map: Vec<(usize, usize)>,
    pub metadata: PartitionMetadata,
}

/// `⌈ρ·n⌉` guarded against representation error in `ρ·n`.
pub fn retained_quota(rho: f64, n: usize) -> usize {
    ((rho * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Normalized total degree (in plus out) of every entity id below `n`.
pub fn normalized_degree(triples: &[Triple], n: usize) -> Vec<f64> {
    let mut deg = vec![0usize; n];
    for t in triples {
        deg[t.head] += 1;
        deg[t.tail] += 1;
    }
    let max = deg.iter().copied().max().unwrap_or(0).max(1) as f64;
    deg.into_iter().map(|d| d as f64 / max).collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
enum Element {
    Entity(usize),
    Relation(usize),
}

fn elements(t: &Triple) -> [Element; 3] {
    [
        Element::Entity(t.head),
        Element::Relation(t.relation),
        Element::Entity(t.tail),
    ]
}

struct Pools {
    train: Vec<Triple>,
    eval: Vec<Triple>,
    count: HashMap<Element, usize>,
}

impl Pools {
    fn new(train: Vec<Triple>, eval: Vec<Triple>) -> Self {
        let mut count = HashMap::new();
        for t in &train {
            for e in elements(t) {
                *count.entry(e).or_insert(0) += 1;
            }
        }
        Pools { train, eval, count }
    }

    fn train_count(&self, e: &Element) -> usize {
        self.count.get(e).copied().unwrap_or(0)
    }

    fn unseen_in(&self, t: &Triple) -> usize {
        let mut distinct: Vec<Element> = elements(t).to_vec();
        distinct.sort();
        distinct.dedup();
        distinct.iter().filter(|e| self.train_count(e) == 0).count()
    }

    /// After leaving train, the triple would have an element absent from train.
    fn can_leave_train(&self, t: &Triple) -> bool {
        let mut need: HashMap<Element, usize> = HashMap::new();
        for e in elements(t) {
            *need.entry(e).or_insert(0) += 1;
        }
        need.iter().any(|(e, k)| self.train_count(e) == *k)
    }

    /// Entering train keeps every other evaluation triple with an unseen element.
    fn can_enter_train(&self, idx: usize) -> bool {
        let t = self.eval[idx];
        let newly_seen: BTreeSet<Element> = elements(&t).into_iter().filter(|e| self.train_count(e) == 0).collect();
        if newly_seen.is_empty() {
            return true;
        }
        self.eval.iter().enumerate().all(|(j, s)| {
            if j == idx {
                return true;
            }
            let mut distinct: Vec<Element> = elements(s).to_vec();
            distinct.sort();
            distinct.dedup();
            distinct
                .iter()
                .any(|e| self.train_count(e) == 0 && !newly_seen.contains(e))
        })
    }

    fn move_to_eval(&mut self, idx: usize) {
        let t = self.train.swap_remove(idx);
        for e in elements(&t) {
            *self.count.get_mut(&e).expect("counted") -= 1;
        }
        self.eval.push(t);
    }

    fn move_to_train(&mut self, idx: usize) {
        let t = self.eval.swap_remove(idx);
        for e in elements(&t) {
            *self.count.entry(e).or_insert(0) += 1;
        }
        self.train.push(t);
    }
}

/// Relation-balanced pruning followed by seen/unseen partitioning.
///
/// 1. Deduplicate; per relation keep the `⌈ρ·|T_r|⌉` facts with the highest
///    `w · (d̄(h) + d̄(t)) / 2`, ties by input order.
/// 2. Mark `round(θ·n)` random entities and relations as seen; train takes
///    the facts made only of seen elements.
/// 3. Move random facts between train and the rest until train holds
///    `round(α1·N)` facts. A fact leaves train only if one of its elements
///    then vanishes from train, and enters train only if every remaining
///    evaluation fact keeps an element absent from train. When `10·N` draws
///    find no such fact, unrestricted random moves finish the job and the
///    final violation count is recorded.
/// 4. Split the rest into valid/test by `α2 : α3`.
pub fn prune_partition(triples: &[Triple], config: &PrunePartitionConfig) -> Result<PartitionOutput, DataError> {
    config.validate()?;
    let mut seen_facts = HashSet::new();
    let unique: Vec<Triple> = triples.iter().copied().filter(|t| seen_facts.insert(*t)).collect();
    let n_entities = unique.iter().map(|t| t.head.max(t.tail) + 1).max().unwrap_or(0);
    let dbar = normalized_degree(&unique, n_entities);

    let mut by_relation: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, t) in unique.iter().enumerate() {
        by_relation.entry(t.relation).or_default().push(i);
    }
    let mut kept_idx = Vec::new();
    let mut retention = Vec::new();
    for (&relation, idx) in &by_relation {
        let score = |i: usize| config.weight * (dbar[unique[i].head] + dbar[unique[i].tail]) / 2.0;
        let mut ranked = idx.clone();
        ranked.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
        let quota = retained_quota(config.rho, idx.len());
        kept_idx.extend_from_slice(&ranked[..quota]);
        retention.push(RelationRetention {
            relation,
            total: idx.len(),
            kept: quota,
        });
    }
    kept_idx.sort_unstable();
    let kept: Vec<Triple> = kept_idx.iter().map(|&i| unique[i]).collect();
    let n = kept.len();

    let ents: BTreeSet<usize> = kept.iter().flat_map(|t| [t.head, t.tail]).collect();
    let rels: BTreeSet<usize> = kept.iter().map(|t| t.relation).collect();
    let pick_seen = |items: &BTreeSet<usize>, position: u64| -> HashSet<usize> {
        let mut v: Vec<usize> = items.iter().copied().collect();
        v.shuffle(&mut derived_rng(config.seed, stream::SPLIT, 0, position));
        let k = (config.theta * v.len() as f64).round() as usize;
        v.into_iter().take(k).collect()
    };
    let seen_e = pick_seen(&ents, 0);
    let seen_r = pick_seen(&rels, 1);
    let (train, eval): (Vec<Triple>, Vec<Triple>) = kept
        .iter()
        .partition(|t| seen_e.contains(&t.head) && seen_e.contains(&t.tail) && seen_r.contains(&t.relation));
    let initial_train = train.len();
    let target_train = (config.alpha.0 * n as f64).round() as usize;

    let mut pools = Pools::new(train, eval);
    let mut rng = derived_rng(config.seed, stream::SPLIT, 0, 2);
    let mut attempts = 0usize;
    let budget = 10 * n;
    let mut guided = 0;
    let mut forced = 0;
    while pools.train.len() != target_train {
        let shrink = pools.train.len() > target_train;
        let pool_len = if shrink { pools.train.len() } else { pools.eval.len() };
        let idx = rng.gen_range(0..pool_len);
        if attempts < budget {
            attempts += 1;
            let ok = if shrink {
                pools.can_leave_train(&pools.train[idx])
            } else {
                pools.can_enter_train(idx)
            };
            if !ok {
                continue;
            }
            guided += 1;
        } else {
            forced += 1;
        }
        if shrink {
            pools.move_to_eval(idx);
        } else {
            pools.move_to_train(idx);
        }
    }
    let violations = pools.eval.iter().filter(|t| pools.unseen_in(t) == 0).count();

    let mut train = pools.train;
    let mut eval = pools.eval;
    let order: HashMap<Triple, usize> = kept.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    train.sort_by_key(|t| order[t]);
    eval.sort_by_key(|t| order[t]);
    eval.shuffle(&mut derived_rng(config.seed, stream::SPLIT, 0, 3));
    let (a2, a3) = (config.alpha.1, config.alpha.2);
    let n_valid = if a2 + a3 > 0.0 {
        (eval.len() as f64 * a2 / (a2 + a3)).round() as usize
    } else {
        0
    };
    let mut test = eval.split_off(n_valid.min(eval.len()));
    let mut valid = eval;
    valid.sort_by_key(|t| order[t]);
    test.sort_by_key(|t| order[t]);

    let entity_map = ents.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let relation_map = rels.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let metadata = PartitionMetadata {
        config: config.clone(),
        input_triples: triples.len(),
        unique_triples: unique.len(),
        kept_triples: n,
        retention,
        seen_entities: seen_e.len(),
        seen_relations: seen_r.len(),
        initial_train,
        target_train,
        train: train.len(),
        valid: valid.len(),
        test: test.len(),
        guided_moves: guided,
        forced_moves: forced,
        violations,
        achieved: (frac(train.len()), frac(valid.len()), frac(test.len())),
    };
    Ok(PartitionOutput {
        train,
        valid,
        test,
        entity_map,
        relation_map,
        metadata,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitClass {
    Transductive,
    EntityInductive,
    /// New relations but no new entities.
    RelationInductive,
    FullyInductive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitValidation {
    pub train_entities: usize,
    pub eval_entities: usize,
    pub train_relations: usize,
    pub eval_relations: usize,
    pub shared_entities: Vec<String>,
    pub shared_relations: Vec<String>,
    /// Triples present in more than one split, with the split names.
    pub duplicates: Vec<(NamedTriple, Vec<&'static str>)>,
    pub class: SplitClass,
}

/// Vocabulary overlap between training and evaluation splits.
///
/// Evaluation entities and relations not in train make the split inductive
/// in that dimension; new ones in both make it fully inductive.
pub fn validate_inductive_split(train: &[NamedTriple], valid: &[NamedTriple], test: &[NamedTriple]) -> SplitValidation {
    let vocab = |ts: &[&[NamedTriple]]| -> (BTreeSet<String>, BTreeSet<String>) {
        let mut e = BTreeSet::new();
        let mut r = BTreeSet::new();
        for t in ts.iter().flat_map(|s| s.iter()) {
            e.insert(t.0.clone());
            e.insert(t.2.clone());
            r.insert(t.1.clone());
        }
        (e, r)
    };
    let (te, tr) = vocab(&[train]);
    let (ee, er) = vocab(&[valid, test]);
    let shared_entities: Vec<String> = te.intersection(&ee).cloned().collect();
    let shared_relations: Vec<String> = tr.intersection(&er).cloned().collect();
    let new_entities = ee.iter().any(|e| !te.contains(e));
    let new_relations = er.iter().any(|r| !tr.contains(r));
    let class = match (new_entities, new_relations) {
        (false, false) => SplitClass::Transductive,
        (true, false) => SplitClass::EntityInductive,
        (false, true) => SplitClass::RelationInductive,
        (true, true) => SplitClass::FullyInductive,
    };
    let mut membership: BTreeMap<&NamedTriple, Vec<&'static str>> = BTreeMap::new();
    for (name, split) in [("train", train), ("valid", valid), ("test", test)] {
        let unique: BTreeSet<&NamedTriple> = split.iter().collect();
        for t in unique {
            membership.entry(t).or_default().push(name);
        }
    }
    let duplicates = membership
        .into_iter()
        .filter(|(_, v)| v.len() > 1)
        .map(|(t, v)| (t.clone(), v))
        .collect();
    SplitValidation {
        train_entities: te.len(),
        eval_entities: ee.len(),
        train_relations: tr.len(),
        eval_relations: er.len(),
        shared_entities,
        shared_relations,
        duplicates,
        class,
    }
}
