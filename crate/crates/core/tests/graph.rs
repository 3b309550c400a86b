use std::collections::{BTreeMap, BTreeSet, VecDeque};

use kgex::calibration::Calibrator;
use kgex::explain::{explain, ExplainConfig, IndexPair};
use kgex::graph::{aggregate_prototype, assemble, triple_neighbourhood, ExplanationGraph, MetaRole, Strategy};
use kgex::kge::{ModelConfig, ModelKind};
use kgex::knn::Backend;
use kgex::synthetic::{random_model, random_store, GraphSpec};
use kgex::{Dictionary, Triple, TripleStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph(seed: u64) -> TripleStore {
    random_store(&GraphSpec {
        entities: 60,
        relations: 6,
        train: 150,
        valid: 5,
        test: 5,
        seed,
    })
    .unwrap()
}

/// Level -> predicates around a triple, by BFS from both endpoints.
fn predicate_levels_oracle(store: &TripleStore, triple: &Triple, hops: usize) -> Vec<BTreeSet<u32>> {
    let mut dist = vec![usize::MAX; store.num_entities()];
    let mut queue = VecDeque::new();
    for c in [triple.subject, triple.object] {
        dist[c as usize] = 0;
        queue.push_back(c);
    }
    while let Some(e) = queue.pop_front() {
        for t in store.train() {
            for (a, b) in [(t.subject, t.object), (t.object, t.subject)] {
                if a == e && dist[b as usize] == usize::MAX {
                    dist[b as usize] = dist[e as usize] + 1;
                    queue.push_back(b);
                }
            }
        }
    }
    let mut levels = vec![BTreeSet::new(); hops];
    for t in store.train() {
        if t == triple {
            continue;
        }
        let d = dist[t.subject as usize].min(dist[t.object as usize]);
        if d < hops {
            levels[d].insert(t.predicate);
        }
    }
    levels
}

fn sample_examples(store: &TripleStore, rng: &mut ChaCha8Rng) -> (Triple, Vec<Triple>) {
    let target = store.train()[rng.gen_range(0..store.train().len())];
    let n = rng.gen_range(0..5);
    let examples = (0..n)
        .map(|_| store.train()[rng.gen_range(0..store.train().len())])
        .filter(|t| *t != target)
        .collect();
    (target, examples)
}

#[test]
fn prototype_matches_enumeration_oracle() {
    for seed in 0..20 {
        let store = graph(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let (target, examples) = sample_examples(&store, &mut rng);
            for hops in [1, 2] {
                let strict = aggregate_prototype(&store, &target, &examples, hops, Strategy::Strict).unwrap();
                let permissive = aggregate_prototype(&store, &target, &examples, hops, Strategy::Permissive).unwrap();
                let tt = predicate_levels_oracle(&store, &target, hops);
                let ex: Vec<_> = examples.iter().map(|e| predicate_levels_oracle(&store, e, hops)).collect();
                for h in 0..hops {
                    let mut want_strict = BTreeMap::new();
                    let mut want_perm = BTreeMap::new();
                    if !examples.is_empty() {
                        for &p in &tt[h] {
                            let count = ex.iter().filter(|levels| levels[h].contains(&p)).count();
                            if count == examples.len() {
                                want_strict.insert(p, 1);
                            }
                            if count > 0 {
                                want_perm.insert(p, count);
                            }
                        }
                    }
                    assert_eq!(strict.levels[h], want_strict, "seed {seed} hop {}", h + 1);
                    assert_eq!(permissive.levels[h], want_perm, "seed {seed} hop {}", h + 1);

                    for (p, w) in &strict.levels[h] {
                        assert_eq!(*w, 1);
                        assert_eq!(permissive.levels[h].get(p), Some(&examples.len()));
                    }
                    for w in permissive.levels[h].values() {
                        assert!(*w >= 1 && *w <= examples.len());
                    }
                }
            }
        }
    }
}

#[test]
fn single_example_strict_equals_permissive() {
    for seed in 0..10 {
        let store = graph(seed);
        let target = store.train()[0];
        let example = store.train()[1];
        for hops in [1, 2, 3] {
            let a = aggregate_prototype(&store, &target, &[example], hops, Strategy::Strict).unwrap();
            let b = aggregate_prototype(&store, &target, &[example], hops, Strategy::Permissive).unwrap();
            assert_eq!(a.levels, b.levels);
        }
    }
}

/// Node ids per cluster and all edges, from the DOT text.
fn parse_dot(dot: &str) -> (BTreeMap<String, BTreeSet<String>>, Vec<(String, String, String)>) {
    let mut clusters: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut edges = Vec::new();
    let mut current: Option<String> = None;
    for line in dot.lines().map(str::trim) {
        if let Some(rest) = line.strip_prefix("subgraph ") {
            current = Some(rest.trim_end_matches(" {").to_owned());
        } else if line == "}" {
            current = None;
        } else if line.starts_with('"') {
            let quoted: Vec<&str> = line.split('"').collect();
            if line.contains(" -> ") {
                let attrs = &line[line.find('[').unwrap()..];
                edges.push((quoted[1].to_owned(), quoted[3].to_owned(), attrs.to_owned()));
            } else {
                clusters
                    .entry(current.clone().expect("node outside cluster"))
                    .or_default()
                    .insert(quoted[1].to_owned());
            }
        }
    }
    (clusters, edges)
}

fn explained_graph(store: &TripleStore, seed: u64, hops: usize) -> ExplanationGraph {
    let config = ModelConfig {
        kind: ModelKind::DistMult,
        k: 6,
        seed,
        ..ModelConfig::desk()
    };
    let model = random_model(&config, store.num_entities(), store.num_relations()).unwrap();
    let cal = Calibrator::fixed(1.0, 0.0);
    let indexes = IndexPair::build(&model, Backend::BruteForce, false).unwrap();
    let target = store.train()[seed as usize % store.train().len()];
    let exp = explain(&model, &cal, store, &indexes, target, &ExplainConfig { m: 40, ..ExplainConfig::default() }).unwrap();
    let examples: Vec<Triple> = exp.triples().collect();
    let proto = aggregate_prototype(store, &target, &examples, hops, Strategy::Permissive).unwrap();
    assemble(target, exp.target_probability, &exp.examples, &proto, store, hops)
}

#[test]
fn assembled_graph_invariants() {
    for seed in 0..10 {
        let store = graph(seed);
        for hops in [1, 2] {
            let g = explained_graph(&store, seed, hops);
            let oracle: BTreeSet<Triple> = store
                .train()
                .iter()
                .filter(|t| **t != g.target)
                .filter(|t| {
                    let levels = triple_neighbourhood(&store, &g.target, hops);
                    levels.iter().any(|(_, x)| x == *t)
                })
                .copied()
                .collect();
            let plane: BTreeSet<Triple> = g.target_plane.iter().map(|p| p.triple).collect();
            assert_eq!(plane, oracle);
            for p in &g.target_plane {
                assert!(store.contains(&p.triple));
                assert_eq!(p.weight, g.prototype.weight(p.hop, p.triple.predicate));
            }
            for e in &g.examples_plane {
                assert!(store.contains(&e.triple));
            }
            assert_eq!(g.meta_links.len(), 2 * g.examples_plane.len());
            for m in &g.meta_links {
                let ex = g.examples_plane[m.example].triple;
                match m.role {
                    MetaRole::SimilarSubject => {
                        assert_eq!((m.target_entity, m.example_entity), (g.target.subject, ex.subject))
                    }
                    MetaRole::SimilarObject => {
                        assert_eq!((m.target_entity, m.example_entity), (g.target.object, ex.object))
                    }
                }
            }
        }
    }
}

#[test]
fn dot_output_parses_and_counts_nodes() {
    for seed in 0..10 {
        let store = graph(seed);
        let g = explained_graph(&store, seed, 1);
        let dot = g.to_dot(&store);
        let (clusters, edges) = parse_dot(&dot);

        let mut target_entities: BTreeSet<u32> = [g.target.subject, g.target.object].into();
        for (_, t) in triple_neighbourhood(&store, &g.target, 1) {
            target_entities.extend([t.subject, t.object]);
        }
        let example_entities: BTreeSet<u32> =
            g.examples_plane.iter().flat_map(|e| [e.triple.subject, e.triple.object]).collect();
        let label = |plane: &str, e: &u32| format!("{plane}:{}", store.entities().label(*e));
        let want_target: BTreeSet<String> = target_entities.iter().map(|e| label("target", e)).collect();
        let want_examples: BTreeSet<String> = example_entities.iter().map(|e| label("example", e)).collect();
        assert_eq!(clusters["cluster_target"], want_target);
        assert_eq!(clusters.get("cluster_examples").cloned().unwrap_or_default(), want_examples);

        let declared: BTreeSet<&String> = clusters.values().flatten().collect();
        for (a, b, _) in &edges {
            assert!(declared.contains(a) && declared.contains(b), "{a} -> {b}");
        }
        let dashed = edges.iter().filter(|e| e.2.contains("style=dashed")).count();
        assert_eq!(dashed, g.meta_links.len());
        assert_eq!(edges.len(), 1 + g.target_plane.len() + g.examples_plane.len() + g.meta_links.len());
    }
}

#[test]
fn json_round_trip_through_labels() {
    for seed in 0..5 {
        let store = graph(seed);
        let g = explained_graph(&store, seed, 2);
        let bytes = g.to_json(&store).unwrap();
        let back = ExplanationGraph::from_json(&bytes, &store).unwrap();
        assert_eq!(back, g);
    }
}

#[test]
fn awkward_labels_are_escaped() {
    let store = TripleStore::new(
        Dictionary::from_labels(["say \"hi\"", "back\\slash", "plain"]),
        Dictionary::from_labels(["rel"]),
        vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2)],
        vec![],
        vec![],
    )
    .unwrap();
    let target = Triple::new(0, 0, 2);
    let proto = aggregate_prototype(&store, &target, &[], 1, Strategy::Strict).unwrap();
    let g = assemble(target, None, &[], &proto, &store, 1);
    let dot = g.to_dot(&store);
    assert!(dot.contains(r#""target:say \"hi\"""#));
    assert!(dot.contains(r#""target:back\\slash""#));
    let back = ExplanationGraph::from_json(&g.to_json(&store).unwrap(), &store).unwrap();
    assert_eq!(back, g);
}
