//! Small generated knowledge graphs for tests, benchmarks and demos.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kge::train::initialize;
use crate::kge::{EmbeddingModel, ModelConfig};
use crate::store::{Dictionary, Triple, TripleStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphSpec {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub seed: u64,
}

impl GraphSpec {
    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }
}

fn dictionaries(spec: &GraphSpec) -> (Dictionary, Dictionary) {
    (
        Dictionary::from_labels((0..spec.entities).map(|i| format!("e{i}"))),
        Dictionary::from_labels((0..spec.relations).map(|i| format!("r{i}"))),
    )
}

fn split(spec: &GraphSpec, triples: Vec<Triple>) -> Result<TripleStore> {
    let (ents, rels) = dictionaries(spec);
    let mut it = triples.into_iter();
    let train: Vec<Triple> = it.by_ref().take(spec.train).collect();
    let valid: Vec<Triple> = it.by_ref().take(spec.valid).collect();
    let test: Vec<Triple> = it.take(spec.test).collect();
    TripleStore::new(ents, rels, train, valid, test)
}

/// Distinct uniformly random triples without self loops.
pub fn random_store(spec: &GraphSpec) -> Result<TripleStore> {
    let capacity = spec.entities * spec.entities.saturating_sub(1) * spec.relations;
    if spec.total() > capacity / 2 {
        return Err(Error::Config("graph too dense for the requested triple count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = BTreeSet::new();
    let mut triples = Vec::with_capacity(spec.total());
    while triples.len() < spec.total() {
        let s = rng.gen_range(0..spec.entities as u32);
        let o = rng.gen_range(0..spec.entities as u32);
        let p = rng.gen_range(0..spec.relations as u32);
        let t = Triple::new(s, p, o);
        if s != o && seen.insert(t) {
            triples.push(t);
        }
    }
    split(spec, triples)
}

/// Triples planted by a hidden translation model: entities are random points
/// in `dim` dimensions, relations random offsets, and each (subject, relation)
/// pair links to the `fanout` entities nearest to `subject + relation`.
pub fn translational_store(spec: &GraphSpec, dim: usize, fanout: usize) -> Result<TripleStore> {
    if fanout == 0 || fanout >= spec.entities || spec.total() > spec.entities * spec.relations * fanout {
        return Err(Error::Config("not enough (subject, relation) pairs for the requested triple count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points: Vec<Vec<f64>> = (0..spec.entities)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let offsets: Vec<Vec<f64>> = (0..spec.relations)
        .map(|_| (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect())
        .collect();
    let mut triples = Vec::with_capacity(spec.entities * spec.relations * fanout);
    for s in 0..spec.entities {
        for (p, offset) in offsets.iter().enumerate() {
            let goal: Vec<f64> = points[s].iter().zip(offset).map(|(a, b)| a + b).collect();
            let mut candidates: Vec<(f64, usize)> = (0..spec.entities)
                .filter(|&o| o != s)
                .map(|o| (points[o].iter().zip(&goal).map(|(x, g)| (x - g) * (x - g)).sum(), o))
                .collect();
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            triples.extend(
                candidates[..fanout]
                    .iter()
                    .map(|&(_, o)| Triple::new(s as u32, p as u32, o as u32)),
            );
        }
    }
    triples.shuffle(&mut rng);
    triples.truncate(spec.total());
    split(spec, triples)
}

/// Entities split into `spec.entities / cluster_size` clusters laid out on a
/// line; relation `j` links every member of cluster `c` to every member of
/// cluster `c + j + 1`. A single translation per relation fits it exactly.
pub fn cluster_chain_store(spec: &GraphSpec, cluster_size: usize) -> Result<TripleStore> {
    if cluster_size == 0 || spec.entities % cluster_size != 0 {
        return Err(Error::Config("entity count must be a multiple of the cluster size".into()));
    }
    let clusters = spec.entities / cluster_size;
    let mut triples = Vec::new();
    for p in 0..spec.relations {
        for c in 0..clusters.saturating_sub(p + 1) {
            for a in 0..cluster_size {
                for b in 0..cluster_size {
                    let s = c * cluster_size + a;
                    let o = (c + p + 1) * cluster_size + b;
                    triples.push(Triple::new(s as u32, p as u32, o as u32));
                }
            }
        }
    }
    if spec.total() > triples.len() {
        return Err(Error::Config("not enough cluster pairs for the requested triple count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    triples.shuffle(&mut rng);
    triples.truncate(spec.total());
    split(spec, triples)
}

/// An untrained model: parameters drawn exactly as training would
/// initialise them for `config`.
pub fn random_model(config: &ModelConfig, num_entities: usize, num_relations: usize) -> Result<EmbeddingModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = initialize(config, num_entities, num_relations, &mut rng);
    EmbeddingModel::from_parameters(config.clone(), params, 0)
}
