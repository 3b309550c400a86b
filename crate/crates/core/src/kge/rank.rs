//! Filtered link-prediction ranking (MRR, Hits@k).

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kge::model::EmbeddingModel;
use crate::store::{EntityId, RelationId, Triple, TripleStore};

/// Anything that can score triples over a fixed entity set.
pub trait Scorer: Sync {
    fn num_entities(&self) -> usize;
    fn score(&self, t: Triple) -> f64;
}

impl Scorer for EmbeddingModel {
    fn num_entities(&self) -> usize {
        EmbeddingModel::num_entities(self)
    }

    fn score(&self, t: Triple) -> f64 {
        EmbeddingModel::score(self, t)
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn num_entities(&self) -> usize {
        (**self).num_entities()
    }

    fn score(&self, t: Triple) -> f64 {
        (**self).score(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Subject,
    Object,
    Both,
}

/// Known true triples across all splits, keyed for corruption filtering.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    objects: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    subjects: HashMap<(RelationId, EntityId), Vec<EntityId>>,
}

impl FilterIndex {
    pub fn from_store(store: &TripleStore) -> Self {
        Self::from_triples(
            store
                .train()
                .iter()
                .chain(store.valid())
                .chain(store.test())
                .copied(),
        )
    }

    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut idx = FilterIndex::default();
        for t in triples {
            idx.objects
                .entry((t.subject, t.predicate))
                .or_default()
                .push(t.object);
            idx.subjects
                .entry((t.predicate, t.object))
                .or_default()
                .push(t.subject);
        }
        for v in idx.objects.values_mut().chain(idx.subjects.values_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        idx
    }

    pub fn known_objects(&self, s: EntityId, p: RelationId) -> &[EntityId] {
        self.objects.get(&(s, p)).map_or(&[], Vec::as_slice)
    }

    pub fn known_subjects(&self, p: RelationId, o: EntityId) -> &[EntityId] {
        self.subjects.get(&(p, o)).map_or(&[], Vec::as_slice)
    }

    pub fn is_known(&self, t: &Triple) -> bool {
        self.known_objects(t.subject, t.predicate)
            .binary_search(&t.object)
            .is_ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub ranks: Vec<usize>,
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_10: f64,
}

impl RankReport {
    pub fn from_ranks(ranks: Vec<usize>) -> Self {
        if ranks.is_empty() {
            return RankReport {
                ranks,
                mrr: 0.0,
                hits_at_1: 0.0,
                hits_at_10: 0.0,
            };
        }
        let n = ranks.len() as f64;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        RankReport {
            mrr,
            hits_at_1: hits(1),
            hits_at_10: hits(10),
            ranks,
        }
    }

    pub fn hits_at(&self, k: usize) -> f64 {
        if self.ranks.is_empty() {
            return 0.0;
        }
        self.ranks.iter().filter(|&&r| r <= k).count() as f64 / self.ranks.len() as f64
    }
}

/// `1 + #{corrupting entities scoring strictly higher}`, skipping known triples.
fn rank_one_side<S: Scorer>(
    scorer: &S,
    known: &[EntityId],
    truth: EntityId,
    corrupt: impl Fn(EntityId) -> Triple,
) -> usize {
    let target = scorer.score(corrupt(truth));
    let mut higher = 0;
    for e in 0..scorer.num_entities() as EntityId {
        if e == truth || known.binary_search(&e).is_ok() {
            continue;
        }
        if scorer.score(corrupt(e)) > target {
            higher += 1;
        }
    }
    1 + higher
}

/// Filtered ranks for each triple. With [`Side::Both`] each triple yields
/// its subject rank followed by its object rank.
pub fn rank_filtered<S: Scorer>(
    scorer: &S,
    filter: &FilterIndex,
    triples: &[Triple],
    side: Side,
) -> RankReport {
    let per_triple: Vec<Vec<usize>> = triples
        .par_iter()
        .map(|t| {
            let mut out = Vec::with_capacity(2);
            if matches!(side, Side::Subject | Side::Both) {
                out.push(rank_one_side(
                    scorer,
                    filter.known_subjects(t.predicate, t.object),
                    t.subject,
                    |e| Triple::new(e, t.predicate, t.object),
                ));
            }
            if matches!(side, Side::Object | Side::Both) {
                out.push(rank_one_side(
                    scorer,
                    filter.known_objects(t.subject, t.predicate),
                    t.object,
                    |e| Triple::new(t.subject, t.predicate, e),
                ));
            }
            out
        })
        .collect();
    RankReport::from_ranks(per_triple.into_iter().flatten().collect())
}
