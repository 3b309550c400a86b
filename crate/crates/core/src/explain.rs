//! Influential-example explanations for link predictions.
//!
//! For a target triple `(s, p, o)` the explainer samples the `m` latent-space
//! neighbours of `s` and of `o`, forms every `(s', p, o')` pair from the two
//! neighbour sets, and keeps the pairs that are training triples. Each
//! survivor is scored by a weighted average of its endpoint distances, lower
//! meaning closer to the target. A random same-predicate baseline and the
//! target selection rule used by the remove-and-retrain harness live here too.

use std::collections::{BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibrator;
use crate::error::{Error, Result};
use crate::graph::Strategy;
use crate::kge::EmbeddingModel;
use crate::knn::{Backend, Neighbour, NeighbourIndex};
use crate::store::{EntityId, RelationId, Triple, TripleStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub m: usize,
    pub subject_weight: f64,
    pub object_weight: f64,
    pub max_examples: Option<usize>,
    pub same_predicate_only: bool,
    pub hops: usize,
    pub strategy: Strategy,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            m: 25,
            subject_weight: 0.5,
            object_weight: 0.5,
            max_examples: None,
            same_predicate_only: true,
            hops: 1,
            strategy: Strategy::Strict,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.hops == 0 {
            return Err(Error::Config("hop level must be at least 1".into()));
        }
        let (ws, wo) = (self.subject_weight, self.object_weight);
        if ws < 0.0 || wo < 0.0 || (ws + wo - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "weights must be non-negative and sum to 1, got {ws} + {wo}"
            )));
        }
        Ok(())
    }
}

/// Distances behind an example's score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Closeness {
    pub score: f64,
    pub subject_distance: f64,
    pub object_distance: f64,
    /// Only set when predicates are also sampled from the latent space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate_distance: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleTriple {
    pub triple: Triple,
    /// `None` for baseline examples, which carry no score.
    pub closeness: Option<Closeness>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Found,
    NoneFound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainerKind {
    Example,
    RandomBaseline,
}

impl std::fmt::Display for ExplainerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExplainerKind::Example => "example",
            ExplainerKind::RandomBaseline => "random",
        })
    }
}

impl std::str::FromStr for ExplainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example" => Ok(ExplainerKind::Example),
            "random" | "random-baseline" => Ok(ExplainerKind::RandomBaseline),
            _ => Err(Error::UnknownVariant {
                kind: "explainer",
                value: s.to_owned(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub target: Triple,
    pub target_probability: Option<f64>,
    pub examples: Vec<ExampleTriple>,
    pub status: Status,
    pub explainer: ExplainerKind,
}

impl Explanation {
    fn new(target: Triple, target_probability: Option<f64>, examples: Vec<ExampleTriple>, explainer: ExplainerKind) -> Self {
        let status = if examples.is_empty() {
            Status::NoneFound
        } else {
            Status::Found
        };
        Explanation {
            target,
            target_probability,
            examples,
            status,
            explainer,
        }
    }

    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.examples.iter().map(|e| e.triple)
    }
}

/// Entity index, plus the relation index when predicate sampling is enabled.
#[derive(Clone, Debug)]
pub struct IndexPair {
    pub entities: NeighbourIndex,
    pub relations: Option<NeighbourIndex>,
}

impl IndexPair {
    pub fn build(model: &EmbeddingModel, backend: Backend, with_relations: bool) -> Result<Self> {
        Ok(IndexPair {
            entities: NeighbourIndex::build(model, backend)?,
            relations: if with_relations {
                Some(NeighbourIndex::build_relations(model, backend)?)
            } else {
                None
            },
        })
    }

    fn check(&self, model: &EmbeddingModel, config: &ExplainConfig) -> Result<()> {
        let fp = model.fingerprint();
        if self.entities.fingerprint() != fp || self.entities.len() != model.num_entities() {
            return Err(Error::StaleIndex);
        }
        match &self.relations {
            Some(r) if r.fingerprint() != fp => Err(Error::StaleIndex),
            None if !config.same_predicate_only => Err(Error::Config(
                "predicate sampling needs a relation index".into(),
            )),
            _ => Ok(()),
        }
    }
}

fn check_ids(store: &TripleStore, t: &Triple) -> Result<()> {
    let e = store.num_entities() as u32;
    if t.subject >= e || t.object >= e || t.predicate >= store.num_relations() as u32 {
        return Err(Error::Config(format!("target {t:?} has ids outside the dictionaries")));
    }
    Ok(())
}

/// Cartesian product, membership filter and scoring.
fn filter_examples(
    store: &TripleStore,
    target: Triple,
    config: &ExplainConfig,
    subjects: &[Neighbour],
    objects: &[Neighbour],
    predicates: Option<&[Neighbour]>,
) -> Vec<ExampleTriple> {
    let pinned = [Neighbour {
        id: target.predicate,
        distance: 0.0,
    }];
    let (predicates, sampled) = match predicates {
        Some(p) => (p, true),
        None => (&pinned[..], false),
    };
    let mut out = Vec::new();
    for s in subjects {
        for p in predicates {
            for o in objects {
                let candidate = Triple::new(s.id, p.id, o.id);
                if candidate == target || !store.contains(&candidate) {
                    continue;
                }
                out.push(ExampleTriple {
                    triple: candidate,
                    closeness: Some(Closeness {
                        score: config.subject_weight * s.distance + config.object_weight * o.distance,
                        subject_distance: s.distance,
                        object_distance: o.distance,
                        predicate_distance: sampled.then_some(p.distance),
                    }),
                });
            }
        }
    }
    sort_examples(&mut out);
    if let Some(cap) = config.max_examples {
        out.truncate(cap);
    }
    out
}

/// Ascending score, ties by triple.
fn sort_examples(examples: &mut [ExampleTriple]) {
    examples.sort_by(|a, b| {
        let sa = a.closeness.map_or(f64::INFINITY, |c| c.score);
        let sb = b.closeness.map_or(f64::INFINITY, |c| c.score);
        sa.total_cmp(&sb).then(a.triple.cmp(&b.triple))
    });
}

fn prepare(
    model: &EmbeddingModel,
    calibrator: &Calibrator,
    indexes: &IndexPair,
    config: &ExplainConfig,
) -> Result<()> {
    config.validate()?;
    calibrator.check_model(model)?;
    indexes.check(model, config)
}

/// Explains one target triple. The target need not be a training triple and
/// is never returned among its own examples.
pub fn explain(
    model: &EmbeddingModel,
    calibrator: &Calibrator,
    store: &TripleStore,
    indexes: &IndexPair,
    target: Triple,
    config: &ExplainConfig,
) -> Result<Explanation> {
    prepare(model, calibrator, indexes, config)?;
    check_ids(store, &target)?;
    let subjects = indexes
        .entities
        .query(model.entity_vector(target.subject), config.m, &[])?;
    let objects = indexes
        .entities
        .query(model.entity_vector(target.object), config.m, &[])?;
    let predicates = match (&indexes.relations, config.same_predicate_only) {
        (Some(r), false) => Some(r.query(model.relation_vector(target.predicate), config.m, &[])?),
        _ => None,
    };
    let examples = filter_examples(store, target, config, &subjects, &objects, predicates.as_deref());
    let probability = calibrator.calibrate(model.score(target));
    Ok(Explanation::new(target, Some(probability), examples, ExplainerKind::Example))
}

/// Explains many targets. Neighbour queries are issued once per distinct
/// entity (and predicate) and shared; output order follows `targets`, and each
/// element equals what [`explain`] returns for that target.
pub fn explain_batch(
    model: &EmbeddingModel,
    calibrator: &Calibrator,
    store: &TripleStore,
    indexes: &IndexPair,
    targets: &[Triple],
    config: &ExplainConfig,
) -> Result<Vec<Result<Explanation>>> {
    prepare(model, calibrator, indexes, config)?;
    let valid: Vec<bool> = targets.iter().map(|t| check_ids(store, t).is_ok()).collect();
    let entities: BTreeSet<EntityId> = targets
        .iter()
        .zip(&valid)
        .filter(|(_, ok)| **ok)
        .flat_map(|(t, _)| [t.subject, t.object])
        .collect();
    let entity_neighbours: HashMap<EntityId, Vec<Neighbour>> = entities
        .into_par_iter()
        .map(|e| {
            let res = indexes.entities.query(model.entity_vector(e), config.m, &[]);
            res.map(|n| (e, n))
        })
        .collect::<Result<_>>()?;

    let predicate_neighbours: HashMap<RelationId, Vec<Neighbour>> =
        match (&indexes.relations, config.same_predicate_only) {
            (Some(r), false) => {
                let preds: BTreeSet<RelationId> = targets
                    .iter()
                    .zip(&valid)
                    .filter(|(_, ok)| **ok)
                    .map(|(t, _)| t.predicate)
                    .collect();
                preds
                    .into_par_iter()
                    .map(|p| r.query(model.relation_vector(p), config.m, &[]).map(|n| (p, n)))
                    .collect::<Result<_>>()?
            }
            _ => HashMap::new(),
        };

    Ok(targets
        .par_iter()
        .map(|&target| {
            check_ids(store, &target)?;
            let examples = filter_examples(
                store,
                target,
                config,
                &entity_neighbours[&target.subject],
                &entity_neighbours[&target.object],
                predicate_neighbours.get(&target.predicate).map(Vec::as_slice),
            );
            let probability = calibrator.calibrate(model.score(target));
            Ok(Explanation::new(target, Some(probability), examples, ExplainerKind::Example))
        })
        .collect())
}

/// Uniform sample, without replacement, of training triples sharing the
/// target's predicate. Deterministic for a given seed.
pub fn explain_random_baseline(store: &TripleStore, target: Triple, count: usize, seed: u64) -> Result<Explanation> {
    if count == 0 {
        return Err(Error::Config("baseline count must be at least 1".into()));
    }
    let class: Vec<Triple> = store
        .predicate_class(target.predicate)
        .filter(|t| *t != target)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amount = count.min(class.len());
    let examples = sample(&mut rng, class.len(), amount)
        .into_iter()
        .map(|i| ExampleTriple {
            triple: class[i],
            closeness: None,
        })
        .collect();
    Ok(Explanation::new(target, None, examples, ExplainerKind::RandomBaseline))
}

/// Highest-probability non-circular test triple; ties keep dataset order.
pub fn select_target(model: &EmbeddingModel, calibrator: &Calibrator, store: &TripleStore) -> Result<Triple> {
    if store.test().is_empty() {
        return Err(Error::Config("test split is empty".into()));
    }
    let mut ranked: Vec<(usize, f64)> = store
        .test()
        .iter()
        .enumerate()
        .map(|(i, t)| (i, calibrator.calibrate(model.score(*t))))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .map(|(i, _)| store.test()[i])
        .find(|t| !t.is_circular())
        .ok_or(Error::NoTarget)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTriple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl LabeledTriple {
    pub fn new(store: &TripleStore, t: &Triple) -> Self {
        let (s, p, o) = store.label_triple(t);
        LabeledTriple {
            subject: s.to_owned(),
            predicate: p.to_owned(),
            object: o.to_owned(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    #[serde(flatten)]
    pub triple: LabeledTriple,
    pub score: Option<f64>,
    pub subject_distance: Option<f64>,
    pub object_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate_distance: Option<f64>,
}

/// User-facing JSON form of an explanation; carries labels, never ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationDocument {
    pub target: LabeledTriple,
    pub target_probability: Option<f64>,
    pub status: Status,
    pub explainer: ExplainerKind,
    pub examples: Vec<LabeledExample>,
    pub config: ExplainConfig,
}

impl ExplanationDocument {
    pub fn new(explanation: &Explanation, store: &TripleStore, config: &ExplainConfig) -> Self {
        ExplanationDocument {
            target: LabeledTriple::new(store, &explanation.target),
            target_probability: explanation.target_probability,
            status: explanation.status,
            explainer: explanation.explainer,
            examples: explanation
                .examples
                .iter()
                .map(|e| LabeledExample {
                    triple: LabeledTriple::new(store, &e.triple),
                    score: e.closeness.map(|c| c.score),
                    subject_distance: e.closeness.map(|c| c.subject_distance),
                    object_distance: e.closeness.map(|c| c.object_distance),
                    predicate_distance: e.closeness.and_then(|c| c.predicate_distance),
                })
                .collect(),
            config: config.clone(),
        }
    }
}

/// `S | P | O | Score` table; the first row is the target.
pub fn format_table(explanation: &Explanation, store: &TripleStore) -> String {
    let mut rows = vec![["S".to_owned(), "P".to_owned(), "O".to_owned(), "Score".to_owned()]];
    let (s, p, o) = store.label_triple(&explanation.target);
    rows.push([s.to_owned(), p.to_owned(), o.to_owned(), "TT".to_owned()]);
    for e in &explanation.examples {
        let (s, p, o) = store.label_triple(&e.triple);
        let score = e
            .closeness
            .map_or_else(|| "n/a".to_owned(), |c| format!("{:.5}", c.score));
        rows.push([s.to_owned(), p.to_owned(), o.to_owned(), score]);
    }
    let widths: Vec<usize> = (0..4)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    if explanation.status == Status::NoneFound {
        out.push_str("(no examples found)\n");
    }
    out
}
