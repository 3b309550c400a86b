//! Remove-and-retrain evaluation of explanations.
//!
//! ROAR deletes the explanation from the train split; rev-ROAR deletes every
//! train triple sharing the target's predicate and puts back only the
//! explanation. The original and the mutated data are trained with the same
//! configuration and seed, snapshotted at each checkpoint epoch, recalibrated
//! on the untouched validation split, and compared on the test split.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{self, Calibrator};
use crate::error::{Error, Result};
use crate::explain::{
    explain, explain_random_baseline, select_target, ExplainConfig, ExplainerKind, Explanation, IndexPair,
};
use crate::kge::{EmbeddingModel, FilterIndex, ModelConfig, Trainer};
use crate::knn::Backend;
use crate::store::{Triple, TripleStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Roar,
    RevRoar,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Roar => "roar",
            ScenarioKind::RevRoar => "rev-roar",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roar" => Ok(ScenarioKind::Roar),
            "rev-roar" => Ok(ScenarioKind::RevRoar),
            _ => Err(Error::UnknownVariant {
                kind: "scenario",
                value: s.to_owned(),
            }),
        }
    }
}

/// Which part of the explanation the mutation uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subset {
    #[serde(rename = "1")]
    Top1,
    #[serde(rename = "all")]
    All,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Top1 => "1",
            Subset::All => "all",
        })
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "top-1" => Ok(Subset::Top1),
            "all" => Ok(Subset::All),
            _ => Err(Error::UnknownVariant {
                kind: "subset",
                value: s.to_owned(),
            }),
        }
    }
}

pub fn default_checkpoints() -> Vec<usize> {
    (1..=10).map(|i| i * 10).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub subset: Subset,
    pub checkpoints: Vec<usize>,
    pub explainer: ExplainerKind,
    pub seed: u64,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, subset: Subset) -> Self {
        Scenario {
            kind,
            subset,
            checkpoints: default_checkpoints(),
            explainer: ExplainerKind::Example,
            seed: 0,
        }
    }
}

fn validate_checkpoints(checkpoints: &[usize]) -> Result<()> {
    if checkpoints.is_empty() || checkpoints[0] == 0 {
        return Err(Error::Config("checkpoints must be non-empty and positive".into()));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("checkpoints must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub remove: Vec<Triple>,
    pub add: Vec<Triple>,
}

pub fn build_mutation(
    store: &TripleStore,
    target: &Triple,
    explanation: &Explanation,
    scenario: &Scenario,
) -> Result<Mutation> {
    if explanation.examples.is_empty() {
        return Err(Error::EmptyExplanation);
    }
    let chosen: Vec<Triple> = match scenario.subset {
        Subset::Top1 => vec![explanation.examples[0].triple],
        Subset::All => explanation.triples().collect(),
    };
    let missing: Vec<Triple> = chosen.iter().filter(|t| !store.contains(t)).copied().collect();
    if !missing.is_empty() {
        return Err(Error::MissingTriples(missing));
    }
    Ok(match scenario.kind {
        ScenarioKind::Roar => Mutation {
            remove: chosen,
            add: Vec::new(),
        },
        ScenarioKind::RevRoar => Mutation {
            remove: store.predicate_class(target.predicate).collect(),
            add: chosen,
        },
    })
}

/// One calibrated model snapshot.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub epoch: usize,
    pub model: EmbeddingModel,
    pub calibrator: Calibrator,
}

impl Checkpoint {
    pub fn probability(&self, t: Triple) -> f64 {
        self.calibrator.calibrate(self.model.score(t))
    }
}

/// Trains continuously to the last checkpoint, calibrating each snapshot on
/// `reference`'s validation split with negatives filtered by `filter`.
pub fn train_trajectory(
    store: &TripleStore,
    config: &ModelConfig,
    checkpoints: &[usize],
    reference: &TripleStore,
    filter: &FilterIndex,
    calibration_seed: u64,
) -> Result<Vec<Checkpoint>> {
    validate_checkpoints(checkpoints)?;
    let mut trainer = Trainer::new(store, config)?;
    let mut out = Vec::with_capacity(checkpoints.len());
    for &epoch in checkpoints {
        while trainer.epoch() < epoch {
            trainer.run_epoch().map_err(|e| Error::Checkpoint {
                epoch,
                source: Box::new(e),
            })?;
        }
        let model = trainer.model();
        let calibrator = calibration::fit_with_filter(&model, reference, filter, 1, calibration_seed)
            .map_err(|e| Error::Checkpoint {
                epoch,
                source: Box::new(e),
            })?;
        out.push(Checkpoint {
            epoch,
            model,
            calibrator,
        });
    }
    Ok(out)
}

/// Pearson correlation. Identical inputs give exactly 1; a constant input
/// gives 0 unless both are identical.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    if x == y {
        return 1.0;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if is_constant(x) || is_constant(y) {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Least-squares slope of `y` regressed on `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    if x == y {
        return 1.0;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if is_constant(x) {
        0.0
    } else {
        sxy / sxx
    }
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub epoch: usize,
    /// Mean over test triples of original minus retrained probability, in percent.
    pub mean_diff: f64,
    /// Original minus retrained target probability, in percent.
    pub target_diff: f64,
    pub pearson_r: f64,
    pub slope: f64,
    pub original_target_probability: f64,
    pub retrained_target_probability: f64,
}

/// Test-set probabilities behind one checkpoint row (scatter plot data).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointProbabilities {
    pub epoch: usize,
    pub original: Vec<f64>,
    pub retrained: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoarReport {
    pub scenario: Scenario,
    pub target: Triple,
    pub removed: usize,
    pub added: usize,
    pub rows: Vec<CheckpointRow>,
    pub probabilities: Vec<CheckpointProbabilities>,
}

fn compare(
    target: &Triple,
    test: &[Triple],
    original: &[Checkpoint],
    retrained: &[Checkpoint],
) -> (Vec<CheckpointRow>, Vec<CheckpointProbabilities>) {
    original
        .iter()
        .zip(retrained)
        .map(|(a, b)| {
            let pa: Vec<f64> = test.iter().map(|t| a.probability(*t)).collect();
            let pb: Vec<f64> = test.iter().map(|t| b.probability(*t)).collect();
            let n = pa.len().max(1) as f64;
            let mean_diff = pa.iter().zip(&pb).map(|(x, y)| x - y).sum::<f64>() / n * 100.0;
            let (ta, tb) = (a.probability(*target), b.probability(*target));
            let row = CheckpointRow {
                epoch: a.epoch,
                mean_diff,
                target_diff: (ta - tb) * 100.0,
                pearson_r: pearson(&pa, &pb),
                slope: regression_slope(&pa, &pb),
                original_target_probability: ta,
                retrained_target_probability: tb,
            };
            let probs = CheckpointProbabilities {
                epoch: a.epoch,
                original: pa,
                retrained: pb,
            };
            (row, probs)
        })
        .unzip()
}

/// Runs one scenario against an already-trained original trajectory.
pub fn run_with_original(
    store: &TripleStore,
    config: &ModelConfig,
    target: Triple,
    mutation: &Mutation,
    scenario: &Scenario,
    original: &[Checkpoint],
    filter: &FilterIndex,
) -> Result<RoarReport> {
    validate_checkpoints(&scenario.checkpoints)?;
    let mutated = store.mutate(&mutation.remove, &mutation.add)?;
    let retrained = train_trajectory(&mutated, config, &scenario.checkpoints, store, filter, scenario.seed)?;
    let (rows, probabilities) = compare(&target, store.test(), original, &retrained);
    Ok(RoarReport {
        scenario: scenario.clone(),
        target,
        removed: mutation.remove.len(),
        added: mutation.add.len(),
        rows,
        probabilities,
    })
}

/// Trains original and mutated models from scratch and compares them.
pub fn run_mutation(
    store: &TripleStore,
    config: &ModelConfig,
    target: Triple,
    mutation: &Mutation,
    scenario: &Scenario,
) -> Result<RoarReport> {
    let filter = FilterIndex::from_store(store);
    let original = train_trajectory(store, config, &scenario.checkpoints, store, &filter, scenario.seed)?;
    run_with_original(store, config, target, mutation, scenario, &original, &filter)
}

pub fn run(
    store: &TripleStore,
    config: &ModelConfig,
    target: Triple,
    explanation: &Explanation,
    scenario: &Scenario,
) -> Result<RoarReport> {
    let mutation = build_mutation(store, &target, explanation, scenario)?;
    run_mutation(store, config, target, &mutation, scenario)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub epoch: usize,
    pub scenario: ScenarioKind,
    pub subset: Subset,
    pub explainer: ExplainerKind,
    /// `None` when the explainer produced nothing for this configuration.
    pub values: Option<CheckpointRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub target: Triple,
    pub checkpoints: Vec<usize>,
    pub grid: Vec<(ScenarioKind, Subset)>,
    pub explanations: Vec<Explanation>,
    pub reports: Vec<RoarReport>,
    pub rows: Vec<ComparisonRow>,
}

/// Settings shared by [`compare_explainers`] and the CLI.
#[derive(Clone, Debug)]
pub struct ComparisonSettings {
    pub checkpoints: Vec<usize>,
    pub explainers: Vec<ExplainerKind>,
    pub explain: ExplainConfig,
    pub backend: Backend,
    pub seed: u64,
}

impl Default for ComparisonSettings {
    fn default() -> Self {
        ComparisonSettings {
            checkpoints: default_checkpoints(),
            explainers: vec![ExplainerKind::Example, ExplainerKind::RandomBaseline],
            explain: ExplainConfig::default(),
            backend: Backend::Auto,
            seed: 0,
        }
    }
}

/// Original trajectory plus the explanation derived from its final snapshot.
pub struct Prepared {
    pub filter: FilterIndex,
    pub original: Vec<Checkpoint>,
    pub target: Triple,
    pub example: Explanation,
}

/// Trains the original trajectory and explains the target with the final
/// snapshot. Without a target, the final snapshot picks one with
/// [`select_target`].
pub fn prepare(
    store: &TripleStore,
    config: &ModelConfig,
    target: Option<Triple>,
    settings: &ComparisonSettings,
) -> Result<Prepared> {
    let filter = FilterIndex::from_store(store);
    let original = train_trajectory(store, config, &settings.checkpoints, store, &filter, settings.seed)?;
    let last = original.last().expect("checkpoints validated non-empty");
    let target = match target {
        Some(t) => t,
        None => select_target(&last.model, &last.calibrator, store)?,
    };
    let indexes = IndexPair::build(&last.model, settings.backend, !settings.explain.same_predicate_only)?;
    let example = explain(&last.model, &last.calibrator, store, &indexes, target, &settings.explain)?;
    Ok(Prepared {
        filter,
        original,
        target,
        example,
    })
}

/// Runs the scenario grid for ExamplE and a size-matched random baseline,
/// reusing one original trajectory. Independent runs execute in parallel.
pub fn compare_explainers(
    store: &TripleStore,
    config: &ModelConfig,
    target: Triple,
    grid: &[(ScenarioKind, Subset)],
    settings: &ComparisonSettings,
) -> Result<Comparison> {
    let prepared = prepare(store, config, Some(target), settings)?;
    compare_prepared(store, config, grid, settings, &prepared)
}

pub fn compare_prepared(
    store: &TripleStore,
    config: &ModelConfig,
    grid: &[(ScenarioKind, Subset)],
    settings: &ComparisonSettings,
    prepared: &Prepared,
) -> Result<Comparison> {
    let target = prepared.target;
    if prepared.example.examples.is_empty() {
        return Err(Error::EmptyExplanation);
    }
    let mut explanations = Vec::new();
    for kind in &settings.explainers {
        explanations.push(match kind {
            ExplainerKind::Example => prepared.example.clone(),
            ExplainerKind::RandomBaseline => {
                explain_random_baseline(store, target, prepared.example.examples.len(), settings.seed)?
            }
        });
    }

    let jobs: Vec<(usize, ScenarioKind, Subset)> = (0..explanations.len())
        .flat_map(|e| grid.iter().map(move |&(k, s)| (e, k, s)))
        .collect();
    let results: Vec<Result<Option<RoarReport>>> = jobs
        .par_iter()
        .map(|&(e, kind, subset)| {
            let explanation = &explanations[e];
            if explanation.examples.is_empty() {
                return Ok(None);
            }
            let scenario = Scenario {
                kind,
                subset,
                checkpoints: settings.checkpoints.clone(),
                explainer: explanation.explainer,
                seed: settings.seed,
            };
            let mutation = build_mutation(store, &target, explanation, &scenario)?;
            run_with_original(store, config, target, &mutation, &scenario, &prepared.original, &prepared.filter)
                .map(Some)
        })
        .collect();

    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (&(e, kind, subset), result) in jobs.iter().zip(results) {
        let explainer = explanations[e].explainer;
        match result? {
            Some(report) => {
                rows.extend(report.rows.iter().map(|r| ComparisonRow {
                    epoch: r.epoch,
                    scenario: kind,
                    subset,
                    explainer,
                    values: Some(r.clone()),
                }));
                reports.push(report);
            }
            None => rows.extend(settings.checkpoints.iter().map(|&epoch| ComparisonRow {
                epoch,
                scenario: kind,
                subset,
                explainer,
                values: None,
            })),
        }
    }
    rows.sort_by_key(|r| (r.epoch, r.scenario as u8, r.subset as u8, r.explainer as u8));
    Ok(Comparison {
        target,
        checkpoints: settings.checkpoints.clone(),
        grid: grid.to_vec(),
        explanations,
        reports,
        rows,
    })
}

pub const CSV_HEADER: &str = "epoch,scenario,subset,explainer,mean_diff,target_diff,pearson_r,slope";

/// CSV rows; unavailable rows leave the numeric fields empty.
pub fn write_rows_csv<W: std::io::Write>(rows: &[ComparisonRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        match &r.values {
            Some(v) => writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.scenario, r.subset, r.explainer, v.mean_diff, v.target_diff, v.pearson_r, v.slope
            )?,
            None => writeln!(out, "{},{},{},{},,,,", r.epoch, r.scenario, r.subset, r.explainer)?,
        }
    }
    Ok(())
}

pub fn report_rows(report: &RoarReport) -> Vec<ComparisonRow> {
    report
        .rows
        .iter()
        .map(|r| ComparisonRow {
            epoch: r.epoch,
            scenario: report.scenario.kind,
            subset: report.scenario.subset,
            explainer: report.scenario.explainer,
            values: Some(r.clone()),
        })
        .collect()
}

/// Epoch-by-explainer table of target differences, one column per grid
/// cell. `average` is the mean test-set difference across the row's cells.
pub fn format_table(rows: &[ComparisonRow], grid: &[(ScenarioKind, Subset)]) -> String {
    let mut epochs: Vec<usize> = rows.iter().map(|r| r.epoch).collect();
    epochs.sort_unstable();
    epochs.dedup();
    let mut explainers: Vec<ExplainerKind> = rows.iter().map(|r| r.explainer).collect();
    explainers.sort_by_key(|e| *e as u8);
    explainers.dedup();

    let mut out = String::new();
    let _ = write!(out, "{:<14} {:>9}", "epoch", "average");
    for (k, s) in grid {
        let _ = write!(out, " {:>12}", format!("{k}-{s} [%]"));
    }
    out.push('\n');
    for epoch in epochs {
        for &ex in &explainers {
            let name = match ex {
                ExplainerKind::Example => "ours",
                ExplainerKind::RandomBaseline => "rand.",
            };
            let cells: Vec<Option<&CheckpointRow>> = grid
                .iter()
                .map(|&(k, s)| {
                    rows.iter()
                        .find(|r| r.epoch == epoch && r.explainer == ex && r.scenario == k && r.subset == s)
                        .and_then(|r| r.values.as_ref())
                })
                .collect();
            let present: Vec<&CheckpointRow> = cells.iter().flatten().copied().collect();
            let average = if present.is_empty() {
                "-".to_owned()
            } else {
                format!("{:.3}", present.iter().map(|v| v.mean_diff).sum::<f64>() / present.len() as f64)
            };
            let _ = write!(out, "{:<14} {:>9}", format!("{epoch} {name}"), average);
            for c in cells {
                let cell = c.map_or_else(|| "-".to_owned(), |v| format!("{:.3}", v.target_diff));
                let _ = write!(out, " {cell:>12}");
            }
            out.push('\n');
        }
    }
    out
}
