//! Triple storage: dictionaries, split loading, membership, predicate and
//! adjacency indexes, and n-hop neighbourhood extraction.
//!
//! A [`TripleStore`] is immutable once built. [`TripleStore::mutate`] returns
//! a fresh store with every index rebuilt, which is what the remove-and-retrain
//! harness relies on.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

/// A `(subject, predicate, object)` triple over dense integer ids.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct Triple {
    pub subject: EntityId,
    pub predicate: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub const fn new(subject: EntityId, predicate: RelationId, object: EntityId) -> Self {
        Triple {
            subject,
            predicate,
            object,
        }
    }

    /// Subject equals object.
    pub fn is_circular(&self) -> bool {
        self.subject == self.object
    }
}

/// Bidirectional label <-> id map. Ids are assigned densely in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dictionary {
    labels: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut dict = Dictionary::new();
        for label in labels {
            dict.get_or_insert(&label.into());
        }
        dict
    }

    pub fn get_or_insert(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.ids.insert(label.to_owned(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Writes the two-column `id<TAB>label` export.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, label) in self.labels.iter().enumerate() {
            writeln!(out, "{id}\t{label}")?;
        }
        Ok(())
    }
}

/// Whether unseen labels may extend the dictionaries while loading a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelPolicy {
    Extend,
    Frozen,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedSplit {
    pub triples: Vec<Triple>,
    /// Number of repeated lines that were collapsed.
    pub duplicates: usize,
}

/// Parses `subject<TAB>predicate<TAB>object` lines. `name` is used for
/// error reporting only.
pub fn read_tsv<R: BufRead>(
    reader: R,
    name: &Path,
    entities: &mut Dictionary,
    relations: &mut Dictionary,
    policy: LabelPolicy,
) -> Result<LoadedSplit> {
    let mut seen = HashSet::new();
    let mut split = LoadedSplit::default();
    let mut unknown = Vec::new();
    let mut unknown_seen = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: name.to_path_buf(),
                line: idx + 1,
                found: fields.len(),
            });
        }
        let (s, p, o) = (fields[0], fields[1], fields[2]);
        let triple = match policy {
            LabelPolicy::Extend => Triple::new(
                entities.get_or_insert(s),
                relations.get_or_insert(p),
                entities.get_or_insert(o),
            ),
            LabelPolicy::Frozen => {
                let ids = (entities.id(s), relations.id(p), entities.id(o));
                match ids {
                    (Some(s), Some(p), Some(o)) => Triple::new(s, p, o),
                    _ => {
                        for (label, id) in [(s, ids.0), (p, ids.1), (o, ids.2)] {
                            if id.is_none() && unknown_seen.insert(label.to_owned()) {
                                unknown.push(label.to_owned());
                            }
                        }
                        continue;
                    }
                }
            }
        };
        if seen.insert(triple) {
            split.triples.push(triple);
        } else {
            split.duplicates += 1;
        }
    }

    if !unknown.is_empty() {
        return Err(Error::UnknownLabels {
            path: name.to_path_buf(),
            labels: unknown,
        });
    }
    Ok(split)
}

pub fn load_tsv(
    path: &Path,
    entities: &mut Dictionary,
    relations: &mut Dictionary,
    policy: LabelPolicy,
) -> Result<LoadedSplit> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tsv(BufReader::new(file), path, entities, relations, policy)
}

pub const SPLIT_FILES: [&str; 3] = ["train.txt", "valid.txt", "test.txt"];

/// Per-split duplicate counts reported by [`TripleStore::load_dir`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DuplicateCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Per-hop view of a neighbourhood. `levels[0]` is hop level 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighbourhoodSlice {
    pub centers: Vec<EntityId>,
    pub levels: Vec<Vec<Triple>>,
    pub predicate_counts: Vec<BTreeMap<RelationId, usize>>,
}

impl NeighbourhoodSlice {
    pub fn level(&self, hop: usize) -> &[Triple] {
        &self.levels[hop - 1]
    }

    /// Hop level (1-based) of a triple, if present.
    pub fn level_of(&self, triple: &Triple) -> Option<usize> {
        self.levels
            .iter()
            .position(|level| level.contains(triple))
            .map(|i| i + 1)
    }

    pub fn triples(&self) -> impl Iterator<Item = (usize, &Triple)> {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(i, level)| level.iter().map(move |t| (i + 1, t)))
    }
}

#[derive(Clone, Debug)]
pub struct TripleStore {
    entities: Arc<Dictionary>,
    relations: Arc<Dictionary>,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    by_predicate: Vec<Vec<usize>>,
    adjacency: Vec<Vec<usize>>,
    membership: HashSet<Triple>,
}

impl PartialEq for TripleStore {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
            && self.relations == other.relations
            && self.train == other.train
            && self.valid == other.valid
            && self.test == other.test
    }
}

fn dedup(triples: Vec<Triple>) -> Vec<Triple> {
    let mut seen = HashSet::with_capacity(triples.len());
    triples.into_iter().filter(|t| seen.insert(*t)).collect()
}

impl TripleStore {
    /// Builds a store, collapsing duplicates within each split.
    pub fn new(
        entities: Dictionary,
        relations: Dictionary,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        Self::with_shared(Arc::new(entities), Arc::new(relations), train, valid, test)
    }

    fn with_shared(
        entities: Arc<Dictionary>,
        relations: Arc<Dictionary>,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let (e, r) = (entities.len() as u32, relations.len() as u32);
        for t in train.iter().chain(&valid).chain(&test) {
            if t.subject >= e || t.object >= e || t.predicate >= r {
                return Err(Error::Config(format!(
                    "triple {t:?} out of range for {e} entities / {r} relations"
                )));
            }
        }
        let train = dedup(train);
        let mut by_predicate = vec![Vec::new(); r as usize];
        let mut adjacency = vec![Vec::new(); e as usize];
        for (i, t) in train.iter().enumerate() {
            by_predicate[t.predicate as usize].push(i);
            adjacency[t.subject as usize].push(i);
            if t.object != t.subject {
                adjacency[t.object as usize].push(i);
            }
        }
        let membership = train.iter().copied().collect();
        Ok(TripleStore {
            entities,
            relations,
            train,
            valid: dedup(valid),
            test: dedup(test),
            by_predicate,
            adjacency,
            membership,
        })
    }

    /// Loads `train.txt`, `valid.txt` and `test.txt` from a directory.
    /// The train split always extends the dictionaries; `eval_policy`
    /// governs the validation and test splits.
    pub fn load_dir(dir: &Path, eval_policy: LabelPolicy) -> Result<(Self, DuplicateCounts)> {
        let missing: Vec<String> = SPLIT_FILES
            .iter()
            .filter(|f| !dir.join(f).is_file())
            .map(|f| f.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingSplits {
                dir: dir.to_path_buf(),
                expected: missing,
            });
        }
        let mut entities = Dictionary::new();
        let mut relations = Dictionary::new();
        let path = |f: &str| -> PathBuf { dir.join(f) };
        let train = load_tsv(&path(SPLIT_FILES[0]), &mut entities, &mut relations, LabelPolicy::Extend)?;
        let valid = load_tsv(&path(SPLIT_FILES[1]), &mut entities, &mut relations, eval_policy)?;
        let test = load_tsv(&path(SPLIT_FILES[2]), &mut entities, &mut relations, eval_policy)?;
        let counts = DuplicateCounts {
            train: train.duplicates,
            valid: valid.duplicates,
            test: test.duplicates,
        };
        let store = Self::new(entities, relations, train.triples, valid.triples, test.triples)?;
        Ok((store, counts))
    }

    pub fn entities(&self) -> &Dictionary {
        &self.entities
    }

    pub fn relations(&self) -> &Dictionary {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    /// Membership in the train split.
    pub fn contains(&self, triple: &Triple) -> bool {
        self.membership.contains(triple)
    }

    /// Train triples with the given predicate, in train order.
    pub fn predicate_class(&self, predicate: RelationId) -> impl Iterator<Item = Triple> + '_ {
        self.by_predicate
            .get(predicate as usize)
            .into_iter()
            .flatten()
            .map(|&i| self.train[i])
    }

    pub fn predicate_class_len(&self, predicate: RelationId) -> usize {
        self.by_predicate.get(predicate as usize).map_or(0, Vec::len)
    }

    /// Train triples incident to an entity (as subject or object).
    pub fn incident(&self, entity: EntityId) -> impl Iterator<Item = Triple> + '_ {
        self.adjacency[entity as usize].iter().map(|&i| self.train[i])
    }

    pub fn label_triple(&self, t: &Triple) -> (&str, &str, &str) {
        (
            self.entities.label(t.subject),
            self.relations.label(t.predicate),
            self.entities.label(t.object),
        )
    }

    /// Resolves a labelled triple to ids.
    pub fn lookup(&self, subject: &str, predicate: &str, object: &str) -> Option<Triple> {
        Some(Triple::new(
            self.entities.id(subject)?,
            self.relations.id(predicate)?,
            self.entities.id(object)?,
        ))
    }

    /// Breadth-first neighbourhood of one entity over undirected incidence.
    pub fn n_hop(&self, entity: EntityId, hops: usize) -> NeighbourhoodSlice {
        self.n_hop_from(&[entity], hops)
    }

    /// Multi-source variant: each triple lands at its lowest hop level from
    /// any of the centers.
    pub fn n_hop_from(&self, centers: &[EntityId], hops: usize) -> NeighbourhoodSlice {
        assert!(hops >= 1, "hop count must be at least 1");
        let mut visited: HashSet<EntityId> = centers.iter().copied().collect();
        let mut assigned: HashSet<usize> = HashSet::new();
        let mut frontier: Vec<EntityId> = {
            let mut c = centers.to_vec();
            c.sort_unstable();
            c.dedup();
            c
        };
        let mut levels = Vec::with_capacity(hops);
        let mut predicate_counts = Vec::with_capacity(hops);

        for _ in 0..hops {
            let mut level: Vec<usize> = Vec::new();
            let mut next = Vec::new();
            for &entity in &frontier {
                for &i in &self.adjacency[entity as usize] {
                    if !assigned.insert(i) {
                        continue;
                    }
                    level.push(i);
                    let t = self.train[i];
                    for end in [t.subject, t.object] {
                        if visited.insert(end) {
                            next.push(end);
                        }
                    }
                }
            }
            level.sort_unstable();
            let triples: Vec<Triple> = level.iter().map(|&i| self.train[i]).collect();
            let mut counts = BTreeMap::new();
            for t in &triples {
                *counts.entry(t.predicate).or_insert(0) += 1;
            }
            levels.push(triples);
            predicate_counts.push(counts);
            next.sort_unstable();
            frontier = next;
        }

        NeighbourhoodSlice {
            centers: centers.to_vec(),
            levels,
            predicate_counts,
        }
    }

    /// Returns a new store with `remove` taken out of and `add` appended to
    /// the train split. The validation and test splits are untouched.
    pub fn mutate(&self, remove: &[Triple], add: &[Triple]) -> Result<TripleStore> {
        let missing: Vec<Triple> = remove
            .iter()
            .filter(|t| !self.contains(t))
            .copied()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingTriples(missing));
        }
        let removed: HashSet<Triple> = remove.iter().copied().collect();
        let clashes: Vec<Triple> = add
            .iter()
            .filter(|t| self.contains(t) && !removed.contains(t))
            .copied()
            .collect();
        if !clashes.is_empty() {
            return Err(Error::DuplicateAdditions(clashes));
        }
        let mut train: Vec<Triple> = self
            .train
            .iter()
            .filter(|t| !removed.contains(t))
            .copied()
            .collect();
        train.extend_from_slice(add);
        Self::with_shared(
            Arc::clone(&self.entities),
            Arc::clone(&self.relations),
            train,
            self.valid.clone(),
            self.test.clone(),
        )
    }
}
