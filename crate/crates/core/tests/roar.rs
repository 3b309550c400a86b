use std::collections::BTreeSet;

use kgex::explain::{explain_random_baseline, ExplainConfig, ExplainerKind};
use kgex::kge::{ModelConfig, ModelKind};
use kgex::roar::{
    build_mutation, compare_explainers, pearson, regression_slope, run, run_mutation, write_rows_csv,
    ComparisonSettings, Mutation, Scenario, ScenarioKind, Subset, CSV_HEADER,
};
use kgex::synthetic::{cluster_chain_store, GraphSpec};
use kgex::{Error, Triple, TripleStore};
use proptest::prelude::*;
use statrs::statistics::Statistics;

fn toy(seed: u64) -> TripleStore {
    cluster_chain_store(
        &GraphSpec {
            entities: 60,
            relations: 6,
            train: 800,
            valid: 100,
            test: 40,
            seed,
        },
        6,
    )
    .unwrap()
}

fn config(seed: u64) -> ModelConfig {
    ModelConfig {
        kind: ModelKind::DistMult,
        k: 16,
        batch_size: 8,
        learning_rate: 1e-2,
        seed,
        ..ModelConfig::desk()
    }
}

fn scenario(kind: ScenarioKind, subset: Subset) -> Scenario {
    Scenario {
        checkpoints: vec![10, 20],
        ..Scenario::new(kind, subset)
    }
}

#[test]
fn empty_mutation_gives_identical_trajectories() {
    let store = toy(0);
    let target = store.train()[0];
    let report = run_mutation(
        &store,
        &config(0),
        target,
        &Mutation::default(),
        &scenario(ScenarioKind::Roar, Subset::All),
    )
    .unwrap();
    assert_eq!(report.rows.len(), 2);
    for row in &report.rows {
        assert_eq!(row.mean_diff, 0.0);
        assert_eq!(row.target_diff, 0.0);
        assert_eq!(row.pearson_r, 1.0);
        assert_eq!(row.slope, 1.0);
    }
    for p in &report.probabilities {
        assert_eq!(p.original.len(), store.test().len());
        assert_eq!(p.original, p.retrained);
    }
}

#[test]
fn mutations_follow_the_scenario_definitions() {
    let store = toy(1);
    let target = store.train()[3];
    let explanation = explain_random_baseline(&store, target, 4, 7).unwrap();
    let chosen: Vec<Triple> = explanation.triples().collect();
    let class: BTreeSet<Triple> = store.train().iter().filter(|t| t.predicate == target.predicate).copied().collect();

    let m = build_mutation(&store, &target, &explanation, &scenario(ScenarioKind::Roar, Subset::Top1)).unwrap();
    assert_eq!((m.remove.clone(), m.add.len()), (vec![chosen[0]], 0));
    let mutated = store.mutate(&m.remove, &m.add).unwrap();
    assert_eq!(mutated.train().len(), store.train().len() - 1);
    assert!(!mutated.contains(&chosen[0]));

    let m = build_mutation(&store, &target, &explanation, &scenario(ScenarioKind::Roar, Subset::All)).unwrap();
    assert_eq!(m.remove, chosen);
    let mutated = store.mutate(&m.remove, &m.add).unwrap();
    assert_eq!(mutated.train().len(), store.train().len() - chosen.len());

    for (subset, kept) in [(Subset::Top1, vec![chosen[0]]), (Subset::All, chosen.clone())] {
        let m = build_mutation(&store, &target, &explanation, &scenario(ScenarioKind::RevRoar, subset)).unwrap();
        assert_eq!(m.remove.iter().copied().collect::<BTreeSet<_>>(), class);
        assert_eq!(m.add, kept);
        let mutated = store.mutate(&m.remove, &m.add).unwrap();
        let left: BTreeSet<Triple> =
            mutated.train().iter().filter(|t| t.predicate == target.predicate).copied().collect();
        assert_eq!(left, kept.iter().copied().collect());
        assert_eq!(mutated.train().len(), store.train().len() - class.len() + kept.len());
        assert_eq!(mutated.valid(), store.valid());
        assert_eq!(mutated.test(), store.test());
    }
}

#[test]
fn empty_explanation_and_bad_checkpoints_are_rejected() {
    let store = toy(2);
    let target = store.train()[0];
    let mut explanation = explain_random_baseline(&store, target, 2, 0).unwrap();
    explanation.examples.clear();
    let s = scenario(ScenarioKind::Roar, Subset::All);
    assert!(matches!(build_mutation(&store, &target, &explanation, &s), Err(Error::EmptyExplanation)));

    let explanation = explain_random_baseline(&store, target, 2, 0).unwrap();
    for checkpoints in [vec![], vec![0, 10], vec![10, 10], vec![20, 10]] {
        let s = Scenario {
            checkpoints,
            ..Scenario::new(ScenarioKind::Roar, Subset::All)
        };
        assert!(matches!(run(&store, &config(0), target, &explanation, &s), Err(Error::Config(_))));
    }
}

#[test]
fn runs_are_deterministic_and_count_changes() {
    let store = toy(3);
    let target = store.train()[5];
    let explanation = explain_random_baseline(&store, target, 3, 1).unwrap();
    let s = scenario(ScenarioKind::RevRoar, Subset::All);
    let a = run(&store, &config(2), target, &explanation, &s).unwrap();
    let b = run(&store, &config(2), target, &explanation, &s).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.removed, store.predicate_class_len(target.predicate));
    assert_eq!(a.added, 3);
    assert_eq!(a.rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![10, 20]);
    for (row, probs) in a.rows.iter().zip(&a.probabilities) {
        let n = probs.original.len() as f64;
        let mean = probs.original.iter().zip(&probs.retrained).map(|(x, y)| x - y).sum::<f64>() / n * 100.0;
        assert!((row.mean_diff - mean).abs() < 1e-9);
        let target_diff = (row.original_target_probability - row.retrained_target_probability) * 100.0;
        assert!((row.target_diff - target_diff).abs() < 1e-9);
        assert!(probs.original.iter().chain(&probs.retrained).all(|p| *p > 0.0 && *p < 1.0));
    }
}

#[test]
fn comparison_pairs_explainers_over_the_grid() {
    let store = toy(4);
    let target = store.train()[0];
    let grid = [
        (ScenarioKind::Roar, Subset::Top1),
        (ScenarioKind::Roar, Subset::All),
        (ScenarioKind::RevRoar, Subset::Top1),
        (ScenarioKind::RevRoar, Subset::All),
    ];
    let settings = ComparisonSettings {
        checkpoints: vec![10, 20],
        explain: ExplainConfig {
            m: 10,
            ..ExplainConfig::default()
        },
        ..ComparisonSettings::default()
    };
    let cmp = compare_explainers(&store, &config(0), target, &grid, &settings).unwrap();
    assert_eq!(cmp.explanations.len(), 2);
    assert_eq!(cmp.explanations[0].explainer, ExplainerKind::Example);
    assert_eq!(cmp.explanations[1].explainer, ExplainerKind::RandomBaseline);
    assert_eq!(cmp.explanations[0].examples.len(), cmp.explanations[1].examples.len());
    assert_eq!(cmp.rows.len(), 2 * grid.len() * 2);
    assert_eq!(cmp.reports.len(), 2 * grid.len());
    for pair in cmp.rows.chunks(2) {
        assert_eq!((pair[0].epoch, pair[0].scenario, pair[0].subset), (pair[1].epoch, pair[1].scenario, pair[1].subset));
        assert_eq!(pair[0].explainer, ExplainerKind::Example);
        assert_eq!(pair[1].explainer, ExplainerKind::RandomBaseline);
        assert!(pair.iter().all(|r| r.values.is_some()));
    }
    let again = compare_explainers(&store, &config(0), target, &grid, &settings).unwrap();
    assert_eq!(again.rows, cmp.rows);

    let mut csv = Vec::new();
    write_rows_csv(&cmp.rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), cmp.rows.len() + 1);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 8));
}

#[test]
fn correlation_edge_cases() {
    assert_eq!(pearson(&[0.2, 0.2, 0.2], &[0.1, 0.5, 0.3]), 0.0);
    assert_eq!(pearson(&[0.4, 0.4], &[0.4, 0.4]), 1.0);
    assert_eq!(regression_slope(&[0.4, 0.4], &[0.1, 0.9]), 0.0);
    assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    assert!((regression_slope(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 2.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn correlation_matches_reference_statistics(xs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..40)) {
        let x: Vec<f64> = xs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = xs.iter().map(|p| p.1).collect();
        let cov = x.iter().covariance(y.iter());
        let (sx, sy) = (x.iter().std_dev(), y.iter().std_dev());
        prop_assume!(sx > 1e-6 && sy > 1e-6);
        prop_assert!((pearson(&x, &y) - cov / (sx * sy)).abs() < 1e-9);
        prop_assert!((regression_slope(&x, &y) - cov / (sx * sx)).abs() < 1e-9);
    }
}
