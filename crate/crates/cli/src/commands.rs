use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use kgex::calibration::{self, labeled_validation, min_max_normalize, reliability, reliability_table, brier_score};
use kgex::explain::{
    explain, explain_batch, format_table, select_target, ExplainConfig, ExplainerKind, Explanation,
    ExplanationDocument, IndexPair, LabeledTriple,
};
use kgex::graph::{aggregate_prototype, assemble, ExportFormat};
use kgex::kge::{rank_filtered, train, FilterIndex, Side};
use kgex::roar::{
    compare_prepared, default_checkpoints, format_table as roar_table, prepare, write_rows_csv,
    ComparisonSettings, ScenarioKind, Subset,
};
use kgex::snapshot::Snapshot;
use kgex::store::{Dictionary, LabelPolicy};
use kgex::{Triple, TripleStore};
use serde::Serialize;
use serde_json::json;

use crate::args::{
    BatchArgs, CalibrateArgs, Common, ExplainArgs, ExplainerChoice, GraphFormat, RoarArgs, ScenarioChoice,
    SubsetChoice, TrainArgs,
};
use crate::output::{CliError, RunDir};
use crate::settings::{explain_config, load_config, model_config, parse_checkpoints, resolve_data};

type Result<T> = std::result::Result<T, CliError>;

fn load_store(run: &mut RunDir, common: &Common) -> Result<TripleStore> {
    let dir = resolve_data(common.data.as_deref())?;
    run.input("data", &dir);
    let (store, _) = TripleStore::load_dir(&dir, LabelPolicy::Frozen)?;
    Ok(store)
}

fn load_snapshot(run: &mut RunDir, path: &Path, store: &TripleStore) -> Result<Snapshot> {
    run.input("snapshot", path);
    let snap = Snapshot::load(path)?;
    let (e, r) = (snap.model.num_entities(), snap.model.num_relations());
    if (e, r) != (store.num_entities(), store.num_relations()) {
        return Err(CliError::new(
            "snapshot",
            format!(
                "snapshot has {e} entities and {r} relations but the dataset has {} and {}",
                store.num_entities(),
                store.num_relations()
            ),
        )
        .with_hint("use the dataset the snapshot was trained on"));
    }
    Ok(snap)
}

fn require_calibrated(snap: &Snapshot) -> Result<&kgex::calibration::Calibrator> {
    snap.calibrator.as_ref().ok_or_else(|| {
        CliError::new("uncalibrated", "snapshot has no calibrator").with_hint("run `kgex calibrate` first")
    })
}

fn lookup(dict: &Dictionary, label: &str, what: &str) -> Result<u32> {
    dict.id(label).ok_or_else(|| {
        let mut scored: Vec<(f64, &String)> = dict
            .labels()
            .iter()
            .map(|l| (strsim::normalized_levenshtein(label, l), l))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let near: Vec<&str> = scored.iter().take(3).map(|(_, l)| l.as_str()).collect();
        let err = CliError::new("unknown-label", format!("unknown {what} '{label}'"));
        if near.is_empty() {
            err
        } else {
            err.with_hint(format!("did you mean: {}", near.join(", ")))
        }
    })
}

fn resolve_labels(store: &TripleStore, s: &str, p: &str, o: &str) -> Result<Triple> {
    Ok(Triple::new(
        lookup(store.entities(), s, "entity")?,
        lookup(store.relations(), p, "relation")?,
        lookup(store.entities(), o, "entity")?,
    ))
}

/// `subject,predicate,object`; a tab-separated form is accepted too.
fn parse_target(store: &TripleStore, text: &str) -> Result<Triple> {
    let sep = if text.contains('\t') { '\t' } else { ',' };
    let parts: Vec<&str> = text.split(sep).map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CliError::new(
            "config",
            format!("target '{text}' must have exactly three comma-separated labels"),
        ));
    }
    resolve_labels(store, parts[0], parts[1], parts[2])
}

fn triple_text(store: &TripleStore, t: &Triple) -> String {
    let (s, p, o) = store.label_triple(t);
    format!("({s}, {p}, {o})")
}

fn dictionaries(run: &mut RunDir, store: &TripleStore) -> Result<()> {
    for (name, dict) in [("entities.tsv", store.entities()), ("relations.tsv", store.relations())] {
        let mut buf = Vec::new();
        dict.write_tsv(&mut buf).map_err(|e| CliError::new("io", e.to_string()))?;
        run.write(name, &buf)?;
    }
    Ok(())
}

fn snapshot_bytes(snap: &Snapshot) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    snap.write_to(&mut buf)?;
    Ok(buf)
}

pub fn train_cmd(args: &TrainArgs, run: &mut RunDir) -> Result<()> {
    let file = load_config(args.common.config.as_deref())?;
    let config = model_config(&args.model, &file)?;
    run.config = json!({ "model": config });
    run.seed = Some(config.seed);
    let store = load_store(run, &args.common)?;

    let outcome = train(&store, &config)?;
    let mut log = String::from("epoch,loss,val_mrr\n");
    for row in &outcome.log {
        let mrr = row.val_mrr.map(|m| m.to_string()).unwrap_or_default();
        writeln!(log, "{},{},{}", row.epoch, row.loss, mrr).unwrap();
    }
    let report = rank_filtered(&outcome.model, &FilterIndex::from_store(&store), store.test(), Side::Both);
    let metrics = json!({
        "trained_epochs": outcome.model.trained_epochs(),
        "test_mrr": report.mrr,
        "test_hits_at_1": report.hits_at(1),
        "test_hits_at_3": report.hits_at(3),
        "test_hits_at_10": report.hits_at(10),
    });
    let snap = Snapshot {
        model: outcome.model,
        calibrator: None,
    };
    run.write("model.snap", &snapshot_bytes(&snap)?)?;
    run.write("training_log.csv", log.as_bytes())?;
    run.write_json("metrics.json", &metrics)?;
    dictionaries(run, &store)?;
    println!(
        "trained {} for {} epochs; test MRR {:.4}, Hits@1 {:.4}",
        config.kind,
        snap.model.trained_epochs(),
        report.mrr,
        report.hits_at(1)
    );
    Ok(())
}

pub fn calibrate_cmd(args: &CalibrateArgs, run: &mut RunDir) -> Result<()> {
    run.config = json!({ "bins": args.bins, "negatives": args.negatives, "refit": args.refit });
    run.seed = Some(args.seed);
    let store = load_store(run, &args.common)?;
    let snap = load_snapshot(run, &args.snapshot, &store)?;
    if snap.calibrator.is_some() && !args.refit {
        return Err(CliError::new("calibrated", "snapshot is already calibrated").with_hint("pass --refit to replace it"));
    }
    if args.bins == 0 {
        return Err(CliError::new("config", "--bins must be at least 1"));
    }
    let cal = calibration::fit(&snap.model, &store, args.negatives, args.seed)?;
    let filter = FilterIndex::from_store(&store);
    let labeled = labeled_validation(&store, &filter, args.negatives, args.seed);
    let labels: Vec<bool> = labeled.iter().map(|(_, y)| *y).collect();
    let raw: Vec<f64> = labeled.iter().map(|(t, _)| snap.model.score(*t)).collect();
    let normalized = min_max_normalize(&raw);
    let before = reliability_table(&normalized, &labels, args.bins)?;
    let after = reliability(&cal, &snap.model, &labeled, args.bins)?;
    let calibrated: Vec<f64> = raw.iter().map(|&s| cal.calibrate(s)).collect();

    let mut csv = String::from(
        "bin,lower,upper,before_mean_predicted,before_frequency,before_count,after_mean_predicted,after_frequency,after_count\n",
    );
    for (i, (b, a)) in before.bins.iter().zip(&after.bins).enumerate() {
        writeln!(
            csv,
            "{i},{},{},{},{},{},{},{},{}",
            b.lower, b.upper, b.mean_predicted, b.empirical_frequency, b.count, a.mean_predicted, a.empirical_frequency, a.count
        )
        .unwrap();
    }
    let summary = json!({
        "slope": cal.slope,
        "intercept": cal.intercept,
        "ece_before": before.expected_calibration_error,
        "ece_after": after.expected_calibration_error,
        "brier_before": brier_score(&normalized, &labels),
        "brier_after": brier_score(&calibrated, &labels),
        "validation_triples": store.valid().len(),
    });
    let out = Snapshot {
        model: snap.model,
        calibrator: Some(cal),
    };
    run.write("model.snap", &snapshot_bytes(&out)?)?;
    run.write("reliability.csv", csv.as_bytes())?;
    run.write_json("calibration.json", &summary)?;
    println!(
        "ECE {:.4} -> {:.4}",
        before.expected_calibration_error, after.expected_calibration_error
    );
    Ok(())
}

fn explanation_json(explanation: &Explanation, store: &TripleStore, config: &ExplainConfig) -> serde_json::Value {
    serde_json::to_value(ExplanationDocument::new(explanation, store, config)).expect("document serializes")
}

pub fn explain_cmd(args: &ExplainArgs, run: &mut RunDir) -> Result<()> {
    let file = load_config(args.common.config.as_deref())?;
    let (config, backend) = explain_config(&args.explain, &file)?;
    run.config = json!({ "explain": config, "backend": backend.to_string(), "format": format!("{:?}", args.format).to_lowercase() });
    let store = load_store(run, &args.common)?;
    let snap = load_snapshot(run, &args.snapshot, &store)?;
    let cal = require_calibrated(&snap)?;
    let target = match (&args.target, args.select_target) {
        (Some(t), _) => parse_target(&store, t)?,
        (None, true) => select_target(&snap.model, cal, &store)?,
        (None, false) => {
            return Err(CliError::new("config", "no target given").with_hint("pass --target s,p,o or --select-target"))
        }
    };
    let indexes = IndexPair::build(&snap.model, backend, !config.same_predicate_only)?;
    let explanation = explain(&snap.model, cal, &store, &indexes, target, &config)?;

    run.write_json("explanation.json", &explanation_json(&explanation, &store, &config))?;
    run.write("explanation.txt", format_table(&explanation, &store).as_bytes())?;
    let triples: Vec<Triple> = explanation.triples().collect();
    let prototype = aggregate_prototype(&store, &target, &triples, config.hops, config.strategy)?;
    let graph = assemble(
        target,
        explanation.target_probability,
        &explanation.examples,
        &prototype,
        &store,
        config.hops,
    );
    let (name, format) = match args.format {
        GraphFormat::Json => ("graph.json", ExportFormat::Json),
        GraphFormat::Dot => ("graph.dot", ExportFormat::Dot),
    };
    run.write(name, &graph.export(&store, format)?)?;
    if explanation.examples.is_empty() {
        println!("no examples found for {}", triple_text(&store, &target));
    } else {
        print!("{}", format_table(&explanation, &store));
    }
    Ok(())
}

#[derive(Serialize)]
struct BatchSummary {
    count: usize,
    found: usize,
    none_found: usize,
    errors: usize,
    total_seconds: f64,
    seconds_per_triple: f64,
}

pub fn explain_batch_cmd(args: &BatchArgs, run: &mut RunDir) -> Result<()> {
    let file = load_config(args.common.config.as_deref())?;
    let (config, backend) = explain_config(&args.explain, &file)?;
    run.config = json!({ "explain": config, "backend": backend.to_string(), "all_test": args.all_test });
    let store = load_store(run, &args.common)?;
    let snap = load_snapshot(run, &args.snapshot, &store)?;
    let cal = require_calibrated(&snap)?;

    // One entry per requested target: resolved triple or a label error.
    let requests: Vec<(String, Result<Triple>)> = if let Some(path) = &args.targets {
        run.input("targets", path);
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| (l.to_owned(), parse_target(&store, l)))
            .collect()
    } else {
        store
            .test()
            .iter()
            .map(|t| {
                let (s, p, o) = store.label_triple(t);
                (format!("{s}\t{p}\t{o}"), Ok(*t))
            })
            .collect()
    };

    let start = Instant::now();
    let indexes = IndexPair::build(&snap.model, backend, !config.same_predicate_only)?;
    let valid: Vec<Triple> = requests.iter().filter_map(|(_, r)| r.as_ref().ok().copied()).collect();
    let mut results = explain_batch(&snap.model, cal, &store, &indexes, &valid, &config)?.into_iter();
    let elapsed = start.elapsed().as_secs_f64();

    let (mut found, mut none_found, mut errors) = (0, 0, 0);
    let mut lines = String::new();
    for (line, request) in &requests {
        let value = match request {
            Ok(t) => match results.next().expect("one result per resolved target") {
                Ok(e) => {
                    if e.examples.is_empty() {
                        none_found += 1;
                    } else {
                        found += 1;
                    }
                    explanation_json(&e, &store, &config)
                }
                Err(err) => {
                    errors += 1;
                    json!({ "target": LabeledTriple::new(&store, t), "error": CliError::from(err) })
                }
            },
            Err(err) => {
                errors += 1;
                json!({ "input": line, "error": err })
            }
        };
        lines.push_str(&serde_json::to_string(&value).expect("value serializes"));
        lines.push('\n');
    }
    let count = requests.len();
    let summary = BatchSummary {
        count,
        found,
        none_found,
        errors,
        total_seconds: elapsed,
        seconds_per_triple: if count == 0 { 0.0 } else { elapsed / count as f64 },
    };
    run.write("explanations.jsonl", lines.as_bytes())?;
    run.write_json("summary.json", &summary)?;
    println!(
        "{count} targets: {found} explained, {none_found} without examples, {errors} errors; {:.4} s/triple",
        summary.seconds_per_triple
    );
    Ok(())
}

pub fn roar_cmd(args: &RoarArgs, run: &mut RunDir) -> Result<()> {
    let file = load_config(args.common.config.as_deref())?;
    let model = model_config(&args.model, &file)?;
    let (explain, backend) = explain_config(&args.explain, &file)?;
    let checkpoints = parse_checkpoints(args.checkpoints.as_deref(), &file)?.unwrap_or_else(default_checkpoints);
    let scenarios: &[ScenarioKind] = match args.scenario {
        ScenarioChoice::Roar => &[ScenarioKind::Roar],
        ScenarioChoice::RevRoar => &[ScenarioKind::RevRoar],
        ScenarioChoice::Both => &[ScenarioKind::RevRoar, ScenarioKind::Roar],
    };
    let subsets: &[Subset] = match args.subset {
        SubsetChoice::One => &[Subset::Top1],
        SubsetChoice::All => &[Subset::All],
        SubsetChoice::Both => &[Subset::Top1, Subset::All],
    };
    let grid: Vec<(ScenarioKind, Subset)> = scenarios
        .iter()
        .flat_map(|&k| subsets.iter().map(move |&s| (k, s)))
        .collect();
    let explainers = match args.explainer {
        ExplainerChoice::Example => vec![ExplainerKind::Example],
        ExplainerChoice::Random => vec![ExplainerKind::RandomBaseline],
        ExplainerChoice::Both => vec![ExplainerKind::Example, ExplainerKind::RandomBaseline],
    };
    let settings = ComparisonSettings {
        checkpoints,
        explainers,
        explain,
        backend,
        seed: model.seed,
    };
    run.config = json!({
        "model": model,
        "explain": settings.explain,
        "backend": backend.to_string(),
        "checkpoints": settings.checkpoints,
        "grid": grid.iter().map(|(k, s)| format!("{k}-{s}")).collect::<Vec<_>>(),
        "explainers": settings.explainers,
    });
    run.seed = Some(model.seed);
    let store = load_store(run, &args.common)?;
    let target = args.target.as_deref().map(|t| parse_target(&store, t)).transpose()?;

    let prepared = prepare(&store, &model, target, &settings)?;
    let comparison = compare_prepared(&store, &model, &grid, &settings, &prepared).map_err(|e| match e {
        kgex::Error::EmptyExplanation => CliError::new(
            "empty-explanation",
            format!("no explanation found for {}", triple_text(&store, &prepared.target)),
        )
        .with_hint("choose a different target with --target"),
        other => other.into(),
    })?;

    let mut csv = Vec::new();
    write_rows_csv(&comparison.rows, &mut csv).map_err(|e| CliError::new("io", e.to_string()))?;
    let table = roar_table(&comparison.rows, &grid);
    let series: Vec<_> = comparison
        .reports
        .iter()
        .map(|r| {
            json!({
                "scenario": r.scenario.kind,
                "subset": r.scenario.subset,
                "explainer": r.scenario.explainer,
                "removed": r.removed,
                "added": r.added,
                "checkpoints": r.probabilities,
            })
        })
        .collect();
    let plot = json!({
        "target": LabeledTriple::new(&store, &comparison.target),
        "test_triples": store.test().iter().map(|t| LabeledTriple::new(&store, t)).collect::<Vec<_>>(),
        "series": series,
    });
    let explanations: Vec<_> = comparison
        .explanations
        .iter()
        .map(|e| explanation_json(e, &store, &settings.explain))
        .collect();
    run.write("report.csv", &csv)?;
    run.write("table.txt", table.as_bytes())?;
    run.write_json("plot.json", &plot)?;
    run.write_json("explanations.json", &explanations)?;
    println!("target {}", triple_text(&store, &comparison.target));
    print!("{table}");
    Ok(())
}
