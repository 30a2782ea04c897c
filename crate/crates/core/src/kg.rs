//! Triple parsing, vocabularies, and the immutable indexed graph store.
//!
//! Relations can be augmented with inverses: relation `r` then has inverse
//! `r + inverse_offset`, and each fact `(h, r, t)` gains a twin
//! `(t, r + inverse_offset, h)`. Head prediction is handled as tail
//! prediction over the inverse relation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple { head, relation, tail }
    }
}

/// Bijective name ↔ dense id table, ids assigned in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::new();
        for n in names {
            v.intern(&n.into());
        }
        v
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Prefix used when rendering an inverse relation by name.
pub const INVERSE_PREFIX: &str = "inv:";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VocabMap {
    pub entities: Vocab,
    pub relations: Vocab,
    /// Number of base relations once inverse augmentation is applied.
    pub inverse_offset: Option<usize>,
}

impl VocabMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn relation_label(&self, id: usize) -> String {
        match self.inverse_offset {
            Some(off) if id >= off => format!("{INVERSE_PREFIX}{}", self.relations.name(id - off).unwrap_or("?")),
            _ => self.relations.name(id).unwrap_or("?").to_owned(),
        }
    }

    /// Resolves a relation name, accepting the `inv:` prefix for inverses.
    pub fn resolve_relation(&self, name: &str) -> Option<usize> {
        match (name.strip_prefix(INVERSE_PREFIX), self.inverse_offset) {
            (Some(base), Some(off)) => self.relations.get(base).map(|r| r + off),
            _ => self.relations.get(name),
        }
    }

    pub fn entity_label(&self, id: usize) -> &str {
        self.entities.name(id).unwrap_or("?")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabMode {
    /// Unknown names are appended to the vocabulary.
    Extend,
    /// Unknown names are a resolution error.
    Frozen,
}

/// Parses `head<TAB>relation<TAB>tail` lines. Blank lines and `#` comments are
/// skipped; CRLF endings are accepted. Duplicates are kept.
pub fn parse_triples<R: BufRead>(reader: R, vocab: &mut VocabMap, mode: VocabMode) -> Result<Vec<Triple>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(DataError::Malformed {
                line: i + 1,
                found: fields.len(),
            });
        }
        let lookup = |v: &mut Vocab, name: &str, kind| match mode {
            VocabMode::Extend => Ok(v.intern(name)),
            VocabMode::Frozen => v.get(name).ok_or_else(|| DataError::UnknownName {
                line: i + 1,
                kind,
                name: name.to_owned(),
            }),
        };
        let head = lookup(&mut vocab.entities, fields[0], "entity")?;
        let relation = lookup(&mut vocab.relations, fields[1], "relation")?;
        let tail = lookup(&mut vocab.entities, fields[2], "entity")?;
        out.push(Triple::new(head, relation, tail));
    }
    Ok(out)
}

pub fn parse_str(text: &str, vocab: &mut VocabMap) -> Result<Vec<Triple>, DataError> {
    parse_triples(text.as_bytes(), vocab, VocabMode::Extend)
}

/// Removes repeated triples, keeping first occurrences in order.
pub fn dedup_triples(triples: &[Triple]) -> Vec<Triple> {
    let mut seen = std::collections::HashSet::with_capacity(triples.len());
    triples.iter().copied().filter(|t| seen.insert(*t)).collect()
}

pub fn write_triples<W: Write>(mut w: W, triples: &[Triple], vocab: &VocabMap) -> std::io::Result<()> {
    for t in triples {
        writeln!(
            w,
            "{}\t{}\t{}",
            vocab.entity_label(t.head),
            vocab.relation_label(t.relation),
            vocab.entity_label(t.tail)
        )?;
    }
    Ok(())
}

/// `name<TAB>id` lines sorted by id.
pub fn write_vocab<W: Write>(mut w: W, vocab: &Vocab) -> std::io::Result<()> {
    for (id, name) in vocab.names().iter().enumerate() {
        writeln!(w, "{name}\t{id}")?;
    }
    Ok(())
}

/// Immutable triple store indexed by head entity.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entity_count: usize,
    relation_count: usize,
    inverse_offset: Option<usize>,
    facts: Vec<Triple>,
    by_head: Vec<Triple>,
    head_offsets: Vec<usize>,
    relation_freq: Vec<usize>,
}

impl KnowledgeGraph {
    /// Builds the store. With `add_inverses`, `relation_count` is doubled and
    /// every fact gets its inverse twin appended after the base facts.
    pub fn new(
        entity_count: usize,
        relation_count: usize,
        triples: &[Triple],
        add_inverses: bool,
    ) -> Result<Self, DataError> {
        for (index, t) in triples.iter().enumerate() {
            for (what, id, limit) in [
                ("head", t.head, entity_count),
                ("relation", t.relation, relation_count),
                ("tail", t.tail, entity_count),
            ] {
                if id >= limit {
                    return Err(DataError::IdOutOfRange { index, what, id, limit });
                }
            }
        }
        let mut facts = triples.to_vec();
        let (relation_count, inverse_offset) = if add_inverses {
            facts.extend(
                triples
                    .iter()
                    .map(|t| Triple::new(t.tail, t.relation + relation_count, t.head)),
            );
            (relation_count * 2, Some(relation_count))
        } else {
            (relation_count, None)
        };
        Ok(Self::index(entity_count, relation_count, inverse_offset, facts))
    }

    /// Builds a graph sizing the vocabularies from the largest ids present.
    pub fn from_triples(triples: &[Triple], add_inverses: bool) -> Result<Self, DataError> {
        let entities = triples.iter().map(|t| t.head.max(t.tail) + 1).max().unwrap_or(0);
        let relations = triples.iter().map(|t| t.relation + 1).max().unwrap_or(0);
        Self::new(entities, relations, triples, add_inverses)
    }

    fn index(entity_count: usize, relation_count: usize, inverse_offset: Option<usize>, facts: Vec<Triple>) -> Self {
        let mut head_offsets = vec![0usize; entity_count + 1];
        let mut relation_freq = vec![0usize; relation_count];
        for f in &facts {
            head_offsets[f.head + 1] += 1;
            relation_freq[f.relation] += 1;
        }
        for e in 0..entity_count {
            head_offsets[e + 1] += head_offsets[e];
        }
        let mut cursor = head_offsets.clone();
        let mut by_head = vec![Triple::new(0, 0, 0); facts.len()];
        for f in &facts {
            by_head[cursor[f.head]] = *f;
            cursor[f.head] += 1;
        }
        KnowledgeGraph {
            entity_count,
            relation_count,
            inverse_offset,
            facts,
            by_head,
            head_offsets,
            relation_freq,
        }
    }

    /// Returns a copy with inverse relations added; fails if already augmented.
    pub fn with_inverses(&self) -> Result<Self, DataError> {
        if self.inverse_offset.is_some() {
            return Err(DataError::AlreadyAugmented);
        }
        Self::new(self.entity_count, self.relation_count, &self.facts, true)
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn inverse_offset(&self) -> Option<usize> {
        self.inverse_offset
    }

    pub fn has_inverses(&self) -> bool {
        self.inverse_offset.is_some()
    }

    /// Number of relations before augmentation.
    pub fn base_relation_count(&self) -> usize {
        self.inverse_offset.unwrap_or(self.relation_count)
    }

    /// Maps a relation to its inverse (and back). `None` without augmentation.
    pub fn inverse_relation(&self, r: usize) -> Option<usize> {
        let off = self.inverse_offset?;
        Some(if r < off { r + off } else { r - off })
    }

    pub fn facts(&self) -> &[Triple] {
        &self.facts
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// Facts with head `e`, in insertion order.
    pub fn out_facts(&self, e: usize) -> &[Triple] {
        &self.by_head[self.head_offsets[e]..self.head_offsets[e + 1]]
    }

    pub fn out_degree(&self, e: usize) -> usize {
        self.head_offsets[e + 1] - self.head_offsets[e]
    }

    pub fn relation_freq(&self) -> &[usize] {
        &self.relation_freq
    }

    /// Tails `t` such that `(head, relation, t)` is a fact.
    pub fn tails(&self, head: usize, relation: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_facts(head)
            .iter()
            .filter(move |f| f.relation == relation)
            .map(|f| f.tail)
    }
}

/// True tails per `(head, relation)` across every split, used for filtering.
#[derive(Clone, Debug, Default)]
pub struct KnownTrue {
    map: HashMap<(usize, usize), Vec<usize>>,
}

impl KnownTrue {
    pub fn insert(&mut self, t: Triple) {
        let tails = self.map.entry((t.head, t.relation)).or_default();
        if let Err(pos) = tails.binary_search(&t.tail) {
            tails.insert(pos, t.tail);
        }
    }

    pub fn contains(&self, head: usize, relation: usize, tail: usize) -> bool {
        self.tails(head, relation).binary_search(&tail).is_ok()
    }

    /// Sorted true tails, empty when the pair is unknown.
    pub fn tails(&self, head: usize, relation: usize) -> &[usize] {
        self.map.get(&(head, relation)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Number of distinct `(head, relation)` keys.
    pub fn key_count(&self) -> usize {
        self.map.len()
    }

    /// Number of distinct `(head, relation, tail)` entries.
    pub fn pair_count(&self) -> usize {
        self.map.values().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub vocab: VocabMap,
    pub train: KnowledgeGraph,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub known_true: KnownTrue,
}

impl DatasetSplits {
    /// The query triples of a split, in load order.
    pub fn queries(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train.facts()[..self.train_base_len()],
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    fn train_base_len(&self) -> usize {
        if self.train.has_inverses() {
            self.train.len() / 2
        } else {
            self.train.len()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Loads train/valid/test triple streams sharing one vocabulary.
///
/// All three splits are deduplicated. The vocabulary grows across splits so
/// evaluation triples always resolve; entities that only occur outside `train`
/// are isolated in the graph. `known_true` registers every split, and with
/// augmentation both the base and the inverse direction.
pub fn load_splits<A: BufRead, B: BufRead, C: BufRead>(
    train: A,
    valid: B,
    test: C,
    add_inverses: bool,
) -> Result<DatasetSplits, DataError> {
    let mut vocab = VocabMap::new();
    let train = dedup_triples(&parse_triples(train, &mut vocab, VocabMode::Extend)?);
    let valid = dedup_triples(&parse_triples(valid, &mut vocab, VocabMode::Extend)?);
    let test = dedup_triples(&parse_triples(test, &mut vocab, VocabMode::Extend)?);
    assemble_splits(vocab, &train, valid, test, add_inverses)
}

pub fn assemble_splits(
    mut vocab: VocabMap,
    train: &[Triple],
    valid: Vec<Triple>,
    test: Vec<Triple>,
    add_inverses: bool,
) -> Result<DatasetSplits, DataError> {
    let base_relations = vocab.relations.len();
    let graph = KnowledgeGraph::new(vocab.entities.len(), base_relations, train, add_inverses)?;
    vocab.inverse_offset = graph.inverse_offset();
    let mut known_true = KnownTrue::default();
    for t in train.iter().chain(&valid).chain(&test) {
        known_true.insert(*t);
        if add_inverses {
            known_true.insert(Triple::new(t.tail, t.relation + base_relations, t.head));
        }
    }
    Ok(DatasetSplits {
        vocab,
        train: graph,
        valid,
        test,
        known_true,
    })
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| DataError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Path-based [`load_splits`]; missing optional splits count as empty.
pub fn load_split_files(
    train: &Path,
    valid: Option<&Path>,
    test: Option<&Path>,
    add_inverses: bool,
) -> Result<DatasetSplits, DataError> {
    let empty: &[u8] = &[];
    let valid: Box<dyn BufRead> = match valid {
        Some(p) => Box::new(open(p)?),
        None => Box::new(empty),
    };
    let test: Box<dyn BufRead> = match test {
        Some(p) => Box::new(open(p)?),
        None => Box::new(empty),
    };
    load_splits(open(train)?, valid, test, add_inverses)
}
