use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kgex::snapshot::Snapshot;
use kgex::synthetic::{cluster_chain_store, GraphSpec};
use kgex::store::LabelPolicy;
use kgex::TripleStore;
use serde_json::Value;
use tempfile::TempDir;

fn toy_store() -> TripleStore {
    cluster_chain_store(
        &GraphSpec {
            entities: 60,
            relations: 6,
            train: 800,
            valid: 100,
            test: 40,
            seed: 0,
        },
        6,
    )
    .unwrap()
}

fn write_dataset(dir: &Path, store: &TripleStore) {
    fs::create_dir_all(dir).unwrap();
    for (name, split) in [("train.txt", store.train()), ("valid.txt", store.valid()), ("test.txt", store.test())] {
        let mut f = fs::File::create(dir.join(name)).unwrap();
        for t in split {
            let (s, p, o) = store.label_triple(t);
            writeln!(f, "{s}\t{p}\t{o}").unwrap();
        }
    }
}

struct Env {
    tmp: TempDir,
    data: String,
    store: TripleStore,
}

impl Env {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let data = tmp.path().join("toy");
        write_dataset(&data, &toy_store());
        let (store, _) = TripleStore::load_dir(&data, LabelPolicy::Frozen).unwrap();
        Env {
            data: data.to_str().unwrap().to_owned(),
            tmp,
            store,
        }
    }

    fn data(&self) -> &str {
        &self.data
    }

    fn out(&self, name: &str) -> PathBuf {
        self.tmp.path().join("runs").join(name)
    }

    fn kgex(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_kgex"))
            .args(args)
            .current_dir(self.tmp.path())
            .env_remove("KGEX_DATA_DIR")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.kgex(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn train(&self, name: &str, extra: &[&str]) -> PathBuf {
        let out = self.out(name);
        let mut args = vec!["train", "--data", self.data(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        self.ok(&args);
        out
    }

    /// Trained and calibrated snapshot path.
    fn calibrated(&self) -> PathBuf {
        let t = self.train(
            "train",
            &["--model", "distmult", "--k", "16", "--lr", "0.01", "--batch-size", "8", "--epochs", "30"],
        );
        let c = self.out("calibrate");
        self.ok(&[
            "calibrate", "--data", self.data(), "--snapshot", t.join("model.snap").to_str().unwrap(),
            "--out", c.to_str().unwrap(),
        ]);
        c.join("model.snap")
    }

    fn target_text(&self, i: usize) -> String {
        let (s, p, o) = self.store.label_triple(&self.store.test()[i]);
        format!("{s},{p},{o}")
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// Every file except the manifest, by name.
fn outputs_without_manifest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn train_writes_snapshot_log_manifest_and_is_reproducible() {
    let env = Env::new();
    let a = env.train("a", &["--model", "transe", "--k", "32", "--eta", "10", "--epochs", "5", "--seed", "0"]);
    let b = env.train("b", &["--model", "transe", "--k", "32", "--eta", "10", "--epochs", "5", "--seed", "0"]);
    let snap = Snapshot::load(&a.join("model.snap")).unwrap();
    assert_eq!(snap.model.width(), 32);
    assert_eq!(snap.model.config().eta, 10);
    assert_eq!(outputs_without_manifest(&a), outputs_without_manifest(&b));
    let log = fs::read_to_string(a.join("training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["config"]["model"]["k"], 32);
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o == "model.snap"));
    let entities = fs::read_to_string(a.join("entities.tsv")).unwrap();
    assert_eq!(entities.lines().count(), env.store.num_entities());

    let c = env.train("c", &["--model", "complex", "--k", "16", "--epochs", "1"]);
    let snap = Snapshot::load(&c.join("model.snap")).unwrap();
    assert_eq!(snap.model.entity_vector(0).len(), 32);
}

#[test]
fn missing_split_is_an_error_document() {
    let env = Env::new();
    fs::remove_file(Path::new(env.data()).join("valid.txt")).unwrap();
    let out = env.out("fail");
    let res = env.kgex(&["train", "--data", env.data(), "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
    let err = json(&out.join("error.json"));
    assert_eq!(err["error"], "missing-splits");
    assert!(err["message"].as_str().unwrap().contains("valid.txt"));
    assert_eq!(json(&out.join("manifest.json"))["status"], "error");
}

#[test]
fn data_dir_comes_from_environment() {
    let env = Env::new();
    let out = env.out("env");
    let cwd = env.tmp.path().join("elsewhere");
    fs::create_dir_all(&cwd).unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_kgex"))
        .args(["train", "--data", "toy", "--epochs", "1", "--out", out.to_str().unwrap()])
        .current_dir(&cwd)
        .env("KGEX_DATA_DIR", env.tmp.path())
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(json(&out.join("manifest.json"))["inputs"]["data"], env.data());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let env = Env::new();
    let cfg = env.tmp.path().join("cfg.toml");
    fs::write(&cfg, "[model]\nk = 12\neta = 3\nmax_epochs = 2\n").unwrap();
    let out = env.out("cfg");
    env.ok(&[
        "train", "--data", env.data(), "--config", cfg.to_str().unwrap(), "--k", "6",
        "--out", out.to_str().unwrap(),
    ]);
    let model = &json(&out.join("manifest.json"))["config"]["model"];
    assert_eq!((model["k"].as_u64(), model["eta"].as_u64(), model["max_epochs"].as_u64()), (Some(6), Some(3), Some(2)));
}

#[test]
fn calibrate_writes_reliability_and_refuses_silent_refit() {
    let env = Env::new();
    let snap = env.calibrated();
    let dir = snap.parent().unwrap();
    let csv = fs::read_to_string(dir.join("reliability.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    let summary = json(&dir.join("calibration.json"));
    assert!(summary["ece_after"].as_f64().unwrap() <= summary["ece_before"].as_f64().unwrap());
    assert!(Snapshot::load(&snap).unwrap().calibrator.is_some());

    let again = env.out("again");
    let args = ["calibrate", "--data", env.data(), "--snapshot", snap.to_str().unwrap(), "--out", again.to_str().unwrap()];
    assert!(!env.kgex(&args).status.success());
    assert_eq!(json(&again.join("error.json"))["error"], "calibrated");
    let mut refit = args.to_vec();
    refit.push("--refit");
    env.ok(&refit);
    assert!(!again.join("error.json").exists());
    assert_eq!(json(&again.join("manifest.json"))["status"], "ok");
}

#[test]
fn explain_outputs_and_probabilities() {
    let env = Env::new();
    let snap = env.calibrated();
    let loaded = Snapshot::load(&snap).unwrap();
    let target = env.target_text(0);
    let run = |name: &str, format: &str| {
        let out = env.out(name);
        env.ok(&[
            "explain", "--data", env.data(), "--snapshot", snap.to_str().unwrap(), "--target", &target,
            "--format", format, "--out", out.to_str().unwrap(),
        ]);
        out
    };
    let a = run("a", "dot");
    let b = run("b", "dot");
    assert_eq!(outputs_without_manifest(&a), outputs_without_manifest(&b));

    let doc = json(&a.join("explanation.json"));
    let t = env.store.test()[0];
    let expected = loaded.calibrator.as_ref().unwrap().calibrate(loaded.model.score(t));
    assert_eq!(doc["target_probability"].as_f64().unwrap(), expected);
    assert_eq!(json(&a.join("manifest.json"))["config"]["explain"]["m"], 25);
    let predicate = &doc["target"]["predicate"];
    for e in doc["examples"].as_array().unwrap() {
        assert_eq!(&e["predicate"], predicate);
    }

    let dot = fs::read_to_string(a.join("graph.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
    assert_eq!(dot.matches('{').count(), dot.matches('}').count());
    let nodes: BTreeSet<&str> = dot
        .lines()
        .map(str::trim)
        .filter(|l| l.starts_with('"') && !l.contains(" -> "))
        .map(|l| l.split('"').nth(1).unwrap())
        .collect();
    for l in dot.lines().map(str::trim).filter(|l| l.contains(" -> ")) {
        let parts: Vec<&str> = l.split('"').collect();
        assert!(nodes.contains(parts[1]) && nodes.contains(parts[3]), "{l}");
    }

    let j = run("j", "json");
    let graph = json(&j.join("graph.json"));
    assert!(graph.is_object());
    let table = fs::read_to_string(j.join("explanation.txt")).unwrap();
    assert!(table.lines().nth(2).unwrap().ends_with("TT"));
}

#[test]
fn explain_rejects_unknown_labels_with_suggestions() {
    let env = Env::new();
    let snap = env.calibrated();
    let out = env.out("bad");
    let res = env.kgex(&[
        "explain", "--data", env.data(), "--snapshot", snap.to_str().unwrap(), "--target", "e1x,r0,e2",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    let err = json(&out.join("error.json"));
    assert_eq!(err["error"], "unknown-label");
    assert!(err["hint"].as_str().unwrap().contains("e1"));
}

#[test]
fn batch_matches_single_explanations() {
    let env = Env::new();
    let snap = env.calibrated();
    let targets = env.tmp.path().join("targets.tsv");
    let lines: Vec<String> = (0..5).map(|i| env.target_text(i).replace(',', "\t")).collect();
    fs::write(&targets, lines.join("\n") + "\nnope\tr0\te1\n").unwrap();
    let out = env.out("batch");
    env.ok(&[
        "explain-batch", "--data", env.data(), "--snapshot", snap.to_str().unwrap(), "--targets",
        targets.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    let jsonl = fs::read_to_string(out.join("explanations.jsonl")).unwrap();
    let rows: Vec<Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 6);
    for i in 0..5 {
        let single = env.out(&format!("single{i}"));
        env.ok(&[
            "explain", "--data", env.data(), "--snapshot", snap.to_str().unwrap(), "--target",
            &env.target_text(i), "--out", single.to_str().unwrap(),
        ]);
        assert_eq!(rows[i], json(&single.join("explanation.json")));
    }
    assert_eq!(rows[5]["error"]["error"], "unknown-label");
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["count"], 6);
    assert_eq!(summary["errors"], 1);
    let total = summary["total_seconds"].as_f64().unwrap();
    assert!((summary["seconds_per_triple"].as_f64().unwrap() - total / 6.0).abs() < 1e-12);

    let one = env.tmp.path().join("one.tsv");
    fs::write(&one, &lines[0]).unwrap();
    let out = env.out("one");
    env.ok(&[
        "explain-batch", "--data", env.data(), "--snapshot", snap.to_str().unwrap(), "--targets",
        one.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_to_string(out.join("explanations.jsonl")).unwrap().lines().count(), 1);

    let all = env.out("all");
    env.ok(&[
        "explain-batch", "--data", env.data(), "--snapshot", snap.to_str().unwrap(), "--all-test",
        "--out", all.to_str().unwrap(),
    ]);
    assert_eq!(json(&all.join("summary.json"))["count"], env.store.test().len());
}

fn roar_args<'a>(env: &'a Env, out: &'a Path, extra: &[&'a str]) -> Vec<String> {
    let mut args: Vec<String> = [
        "roar", "--data", env.data(), "--out", out.to_str().unwrap(), "--model", "distmult", "--k", "16",
        "--lr", "0.01", "--batch-size", "8",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn csv_rows(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("report.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn roar_single_scenario_has_one_row_per_checkpoint() {
    let env = Env::new();
    let out = env.out("roar");
    let args = roar_args(&env, &out, &["--scenario", "roar", "--subset", "1"]);
    env.ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 10);
    let epochs: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(epochs, ["10", "20", "30", "40", "50", "60", "70", "80", "90", "100"]);
    assert!(rows.iter().all(|r| r[1] == "roar" && r[2] == "1" && r[3] == "example"));
    let plot = json(&out.join("plot.json"));
    assert_eq!(plot["series"].as_array().unwrap().len(), 1);
    assert_eq!(plot["series"][0]["removed"], 1);
}

#[test]
fn roar_random_is_reproducible_and_both_pairs_rows() {
    let env = Env::new();
    let target = env.target_text(1);
    let a = env.out("a");
    let b = env.out("b");
    for out in [&a, &b] {
        let args = roar_args(&env, out, &["--explainer", "random", "--seed", "7", "--checkpoints", "10,20", "--target", &target]);
        env.ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
    assert_eq!(outputs_without_manifest(&a), outputs_without_manifest(&b));
    assert_eq!(csv_rows(&a).len(), 2 * 4);

    let both = env.out("both");
    let args = roar_args(&env, &both, &["--explainer", "both", "--checkpoints", "10,20", "--target", &target]);
    env.ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let rows = csv_rows(&both);
    assert_eq!(rows.len(), 2 * 4 * 2);
    for pair in rows.chunks(2) {
        assert_eq!(pair[0][..3], pair[1][..3]);
        assert_eq!((pair[0][3].as_str(), pair[1][3].as_str()), ("example", "random"));
    }
    let table = fs::read_to_string(both.join("table.txt")).unwrap();
    assert_eq!(table.lines().filter(|l| l.contains("ours")).count(), 2);
    assert_eq!(table.lines().filter(|l| l.contains("rand.")).count(), 2);
}

#[test]
fn bad_flags_fail_before_work() {
    let env = Env::new();
    let out = env.out("bad");
    let res = env.kgex(&["train", "--data", env.data(), "--model", "rotate", "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
    assert_eq!(json(&out.join("error.json"))["error"], "config");
    let res = env.kgex(&["roar", "--data", env.data(), "--checkpoints", "20,10", "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
}
