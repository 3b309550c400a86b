//! Prototype aggregation and the two-plane explanation graph.
//!
//! The target plane holds the target triple's n-hop neighbourhood, each triple
//! weighted by how strongly its predicate (at its hop level) recurs around the
//! examples. The examples plane holds the scored example triples. Meta-links
//! join the target's subject and object to the matching endpoints of every
//! example.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{Closeness, ExampleTriple};
use crate::store::{EntityId, RelationId, Triple, TripleStore};

pub const SCHEMA: &str = "explanation-graph/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Predicates present at a level around every example and the target.
    Strict,
    /// Per-level counts over examples, restricted to the target's predicates.
    Permissive,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Strategy::Strict),
            "permissive" => Ok(Strategy::Permissive),
            _ => Err(Error::UnknownVariant {
                kind: "strategy",
                value: s.to_owned(),
            }),
        }
    }
}

/// Per-hop predicate weights; `levels[0]` is hop 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrototypeGraph {
    pub strategy: Strategy,
    pub levels: Vec<BTreeMap<RelationId, usize>>,
}

impl PrototypeGraph {
    pub fn weight(&self, hop: usize, predicate: RelationId) -> usize {
        self.levels
            .get(hop - 1)
            .and_then(|l| l.get(&predicate))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.levels.iter().all(BTreeMap::is_empty)
    }
}

/// Neighbourhood of a triple: both endpoints' n-hop slices merged at the
/// lowest level, minus the triple itself. Returns `(hop, triple)` pairs.
pub fn triple_neighbourhood(store: &TripleStore, triple: &Triple, hops: usize) -> Vec<(usize, Triple)> {
    let slice = store.n_hop_from(&[triple.subject, triple.object], hops);
    slice
        .triples()
        .filter(|(_, t)| *t != triple)
        .map(|(h, t)| (h, *t))
        .collect()
}

fn predicate_levels(store: &TripleStore, triple: &Triple, hops: usize) -> Vec<BTreeSet<RelationId>> {
    let mut levels = vec![BTreeSet::new(); hops];
    for (h, t) in triple_neighbourhood(store, triple, hops) {
        levels[h - 1].insert(t.predicate);
    }
    levels
}

pub fn aggregate_prototype(
    store: &TripleStore,
    target: &Triple,
    examples: &[Triple],
    hops: usize,
    strategy: Strategy,
) -> Result<PrototypeGraph> {
    if hops == 0 {
        return Err(Error::Config("hop level must be at least 1".into()));
    }
    let mut levels = vec![BTreeMap::new(); hops];
    if examples.is_empty() {
        return Ok(PrototypeGraph { strategy, levels });
    }
    let target_sets = predicate_levels(store, target, hops);
    let example_sets: Vec<_> = examples
        .iter()
        .map(|e| predicate_levels(store, e, hops))
        .collect();

    for h in 0..hops {
        match strategy {
            Strategy::Strict => {
                for &p in &target_sets[h] {
                    if example_sets.iter().all(|sets| sets[h].contains(&p)) {
                        levels[h].insert(p, 1);
                    }
                }
            }
            Strategy::Permissive => {
                for sets in &example_sets {
                    for &p in &sets[h] {
                        if target_sets[h].contains(&p) {
                            *levels[h].entry(p).or_insert(0) += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(PrototypeGraph { strategy, levels })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneTriple {
    pub triple: Triple,
    pub hop: usize,
    pub weight: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaRole {
    SimilarSubject,
    SimilarObject,
}

impl MetaRole {
    pub fn as_str(self) -> &'static str {
        match self {
            MetaRole::SimilarSubject => "similar-subject",
            MetaRole::SimilarObject => "similar-object",
        }
    }
}

/// Resemblance edge from a target endpoint to an example endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaLink {
    pub role: MetaRole,
    pub target_entity: EntityId,
    pub example_entity: EntityId,
    /// Position of the example in the examples plane.
    pub example: usize,
    pub distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplanationGraph {
    pub target: Triple,
    pub target_probability: Option<f64>,
    pub hops: usize,
    pub target_plane: Vec<PlaneTriple>,
    pub examples_plane: Vec<ExampleTriple>,
    pub meta_links: Vec<MetaLink>,
    pub prototype: PrototypeGraph,
}

pub fn assemble(
    target: Triple,
    target_probability: Option<f64>,
    examples: &[ExampleTriple],
    prototype: &PrototypeGraph,
    store: &TripleStore,
    hops: usize,
) -> ExplanationGraph {
    let target_plane = triple_neighbourhood(store, &target, hops)
        .into_iter()
        .map(|(hop, triple)| PlaneTriple {
            triple,
            hop,
            weight: prototype.weight(hop, triple.predicate),
        })
        .collect();
    let meta_links = examples
        .iter()
        .enumerate()
        .flat_map(|(i, e)| {
            [
                MetaLink {
                    role: MetaRole::SimilarSubject,
                    target_entity: target.subject,
                    example_entity: e.triple.subject,
                    example: i,
                    distance: e.closeness.map(|c| c.subject_distance),
                },
                MetaLink {
                    role: MetaRole::SimilarObject,
                    target_entity: target.object,
                    example_entity: e.triple.object,
                    example: i,
                    distance: e.closeness.map(|c| c.object_distance),
                },
            ]
        })
        .collect();
    ExplanationGraph {
        target,
        target_probability,
        hops,
        target_plane,
        examples_plane: examples.to_vec(),
        meta_links,
        prototype: prototype.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "dot" => Ok(ExportFormat::Dot),
            _ => Err(Error::UnknownVariant {
                kind: "export format",
                value: s.to_owned(),
            }),
        }
    }
}

// JSON document types. Labels only; ids are resolved through the store.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TargetDoc {
    subject: String,
    predicate: String,
    object: String,
    probability: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PlaneTripleDoc {
    subject: String,
    predicate: String,
    object: String,
    hop: usize,
    weight: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ExampleDoc {
    subject: String,
    predicate: String,
    object: String,
    score: Option<f64>,
    subject_distance: Option<f64>,
    object_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predicate_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MetaLinkDoc {
    kind: MetaRole,
    target_entity: String,
    example_entity: String,
    example: usize,
    distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct WeightDoc {
    predicate: String,
    weight: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LevelDoc {
    hop: usize,
    predicates: Vec<WeightDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PrototypeDoc {
    strategy: Strategy,
    levels: Vec<LevelDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GraphDoc {
    schema: String,
    hops: usize,
    target: TargetDoc,
    target_plane: Vec<PlaneTripleDoc>,
    examples_plane: Vec<ExampleDoc>,
    meta_links: Vec<MetaLinkDoc>,
    prototype: PrototypeDoc,
}

impl ExplanationGraph {
    fn to_doc(&self, store: &TripleStore) -> GraphDoc {
        let ent = |id: EntityId| store.entities().label(id).to_owned();
        let rel = |id: RelationId| store.relations().label(id).to_owned();
        GraphDoc {
            schema: SCHEMA.to_owned(),
            hops: self.hops,
            target: TargetDoc {
                subject: ent(self.target.subject),
                predicate: rel(self.target.predicate),
                object: ent(self.target.object),
                probability: self.target_probability,
            },
            target_plane: self
                .target_plane
                .iter()
                .map(|pt| PlaneTripleDoc {
                    subject: ent(pt.triple.subject),
                    predicate: rel(pt.triple.predicate),
                    object: ent(pt.triple.object),
                    hop: pt.hop,
                    weight: pt.weight,
                })
                .collect(),
            examples_plane: self
                .examples_plane
                .iter()
                .map(|e| ExampleDoc {
                    subject: ent(e.triple.subject),
                    predicate: rel(e.triple.predicate),
                    object: ent(e.triple.object),
                    score: e.closeness.map(|c| c.score),
                    subject_distance: e.closeness.map(|c| c.subject_distance),
                    object_distance: e.closeness.map(|c| c.object_distance),
                    predicate_distance: e.closeness.and_then(|c| c.predicate_distance),
                })
                .collect(),
            meta_links: self
                .meta_links
                .iter()
                .map(|m| MetaLinkDoc {
                    kind: m.role,
                    target_entity: ent(m.target_entity),
                    example_entity: ent(m.example_entity),
                    example: m.example,
                    distance: m.distance,
                })
                .collect(),
            prototype: PrototypeDoc {
                strategy: self.prototype.strategy,
                levels: self
                    .prototype
                    .levels
                    .iter()
                    .enumerate()
                    .map(|(i, level)| LevelDoc {
                        hop: i + 1,
                        predicates: level
                            .iter()
                            .map(|(&p, &w)| WeightDoc {
                                predicate: rel(p),
                                weight: w,
                            })
                            .collect(),
                    })
                    .collect(),
            },
        }
    }

    pub fn to_json(&self, store: &TripleStore) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(&self.to_doc(store))?;
        out.push(b'\n');
        Ok(out)
    }

    /// Parses a JSON export back, resolving labels through `store`.
    pub fn from_json(bytes: &[u8], store: &TripleStore) -> Result<Self> {
        let doc: GraphDoc = serde_json::from_slice(bytes)?;
        if doc.schema != SCHEMA {
            return Err(Error::UnknownVariant {
                kind: "graph schema",
                value: doc.schema,
            });
        }
        let ent = |l: &str| {
            store.entities().id(l).ok_or_else(|| Error::UnknownVariant {
                kind: "entity",
                value: l.to_owned(),
            })
        };
        let rel = |l: &str| {
            store.relations().id(l).ok_or_else(|| Error::UnknownVariant {
                kind: "relation",
                value: l.to_owned(),
            })
        };
        let triple = |s: &str, p: &str, o: &str| -> Result<Triple> { Ok(Triple::new(ent(s)?, rel(p)?, ent(o)?)) };

        let target_plane = doc
            .target_plane
            .iter()
            .map(|d| {
                Ok(PlaneTriple {
                    triple: triple(&d.subject, &d.predicate, &d.object)?,
                    hop: d.hop,
                    weight: d.weight,
                })
            })
            .collect::<Result<_>>()?;
        let examples_plane = doc
            .examples_plane
            .iter()
            .map(|d| {
                let closeness = match (d.score, d.subject_distance, d.object_distance) {
                    (Some(score), Some(sd), Some(od)) => Some(Closeness {
                        score,
                        subject_distance: sd,
                        object_distance: od,
                        predicate_distance: d.predicate_distance,
                    }),
                    _ => None,
                };
                Ok(ExampleTriple {
                    triple: triple(&d.subject, &d.predicate, &d.object)?,
                    closeness,
                })
            })
            .collect::<Result<_>>()?;
        let meta_links = doc
            .meta_links
            .iter()
            .map(|d| {
                Ok(MetaLink {
                    role: d.kind,
                    target_entity: ent(&d.target_entity)?,
                    example_entity: ent(&d.example_entity)?,
                    example: d.example,
                    distance: d.distance,
                })
            })
            .collect::<Result<_>>()?;
        let levels = doc
            .prototype
            .levels
            .iter()
            .map(|l| {
                l.predicates
                    .iter()
                    .map(|w| Ok((rel(&w.predicate)?, w.weight)))
                    .collect::<Result<BTreeMap<_, _>>>()
            })
            .collect::<Result<_>>()?;
        Ok(ExplanationGraph {
            target: triple(&doc.target.subject, &doc.target.predicate, &doc.target.object)?,
            target_probability: doc.target.probability,
            hops: doc.hops,
            target_plane,
            examples_plane,
            meta_links,
            prototype: PrototypeGraph {
                strategy: doc.prototype.strategy,
                levels,
            },
        })
    }

    /// Distinct entities per plane: `(target plane, examples plane)`. The
    /// target plane always includes the target's endpoints.
    pub fn plane_entities(&self) -> (BTreeSet<EntityId>, BTreeSet<EntityId>) {
        let mut target: BTreeSet<EntityId> = [self.target.subject, self.target.object].into();
        for pt in &self.target_plane {
            target.insert(pt.triple.subject);
            target.insert(pt.triple.object);
        }
        let examples = self
            .examples_plane
            .iter()
            .flat_map(|e| [e.triple.subject, e.triple.object])
            .collect();
        (target, examples)
    }

    /// Graphviz rendering: one cluster per plane, dashed meta-links.
    pub fn to_dot(&self, store: &TripleStore) -> String {
        let ent = |id: EntityId| store.entities().label(id);
        let rel = |id: RelationId| store.relations().label(id);
        let node = |plane: &str, id: EntityId| quote(&format!("{plane}:{}", ent(id)));
        let (target_nodes, example_nodes) = self.plane_entities();

        let mut out = String::new();
        out.push_str("digraph explanation {\n");
        out.push_str("  compound=true;\n");
        out.push_str("  subgraph cluster_target {\n");
        out.push_str("    label=\"Target Triple Neighbourhood Plane\";\n");
        for &e in &target_nodes {
            let _ = writeln!(out, "    {} [label={}];", node("target", e), quote(ent(e)));
        }
        let _ = writeln!(
            out,
            "    {} -> {} [label={}, style=bold, role=\"target\"];",
            node("target", self.target.subject),
            node("target", self.target.object),
            quote(rel(self.target.predicate)),
        );
        for pt in &self.target_plane {
            let _ = writeln!(
                out,
                "    {} -> {} [label={}, hop={}, weight={}];",
                node("target", pt.triple.subject),
                node("target", pt.triple.object),
                quote(rel(pt.triple.predicate)),
                pt.hop,
                pt.weight,
            );
        }
        out.push_str("  }\n");
        out.push_str("  subgraph cluster_examples {\n");
        out.push_str("    label=\"Examples Plane\";\n");
        for &e in &example_nodes {
            let _ = writeln!(out, "    {} [label={}];", node("example", e), quote(ent(e)));
        }
        for (i, ex) in self.examples_plane.iter().enumerate() {
            let score = ex
                .closeness
                .map_or_else(String::new, |c| format!(", score=\"{}\"", c.score));
            let _ = writeln!(
                out,
                "    {} -> {} [label={}, rank={}{}];",
                node("example", ex.triple.subject),
                node("example", ex.triple.object),
                quote(rel(ex.triple.predicate)),
                i + 1,
                score,
            );
        }
        out.push_str("  }\n");
        for m in &self.meta_links {
            let distance = m
                .distance
                .map_or_else(String::new, |d| format!(", distance=\"{d}\""));
            let _ = writeln!(
                out,
                "  {} -> {} [label={}, style=dashed, dir=none, constraint=false{}];",
                node("target", m.target_entity),
                node("example", m.example_entity),
                quote(m.role.as_str()),
                distance,
            );
        }
        out.push_str("}\n");
        out
    }

    pub fn export(&self, store: &TripleStore, format: ExportFormat) -> Result<Vec<u8>> {
        match format {
            ExportFormat::Json => self.to_json(store),
            ExportFormat::Dot => Ok(self.to_dot(store).into_bytes()),
        }
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}
