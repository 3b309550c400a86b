use std::path::{Path, PathBuf};

use kgex::explain::ExplainConfig;
use kgex::graph::Strategy;
use kgex::kge::{EarlyStopping, ModelConfig};
use kgex::knn::Backend;
use serde::Deserialize;

use crate::args::{ExplainFlags, ModelArgs};
use crate::output::CliError;

/// Contents of a `--config` TOML file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub profile: Option<String>,
    #[serde(default)]
    pub model: FileModel,
    #[serde(default)]
    pub explain: FileExplain,
    #[serde(default)]
    pub roar: FileRoar,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileModel {
    pub kind: Option<String>,
    pub k: Option<usize>,
    pub eta: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l2_lambda: Option<f64>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub check_interval: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileExplain {
    pub m: Option<usize>,
    pub subject_weight: Option<f64>,
    pub object_weight: Option<f64>,
    pub hops: Option<usize>,
    pub strategy: Option<String>,
    pub max_examples: Option<usize>,
    pub same_predicate_only: Option<bool>,
    pub backend: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRoar {
    pub checkpoints: Option<Vec<usize>>,
}

pub fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
}

/// Dataset directory: `--data`, else `$KGEX_DATA_DIR`. A relative `--data`
/// that does not exist is retried under `$KGEX_DATA_DIR`.
pub fn resolve_data(data: Option<&Path>) -> Result<PathBuf, CliError> {
    let root = std::env::var_os("KGEX_DATA_DIR").map(PathBuf::from);
    match (data, root) {
        (Some(d), Some(root)) if d.is_relative() && !d.exists() => Ok(root.join(d)),
        (Some(d), _) => Ok(d.to_path_buf()),
        (None, Some(root)) => Ok(root),
        (None, None) => Err(CliError::new("config", "no dataset given").with_hint("pass --data DIR or set KGEX_DATA_DIR")),
    }
}

pub fn model_config(flags: &ModelArgs, file: &FileConfig) -> Result<ModelConfig, CliError> {
    let profile = flags.profile.as_deref().or(file.profile.as_deref()).unwrap_or("desk");
    let mut c = ModelConfig::profile(profile)?;
    let f = &file.model;
    if let Some(kind) = flags.model.as_deref().or(f.kind.as_deref()) {
        c.kind = kind.parse()?;
    }
    c.k = flags.k.or(f.k).unwrap_or(c.k);
    c.eta = flags.eta.or(f.eta).unwrap_or(c.eta);
    c.learning_rate = flags.lr.or(f.learning_rate).unwrap_or(c.learning_rate);
    c.l2_lambda = flags.l2.or(f.l2_lambda).unwrap_or(c.l2_lambda);
    c.max_epochs = flags.epochs.or(f.max_epochs).unwrap_or(c.max_epochs);
    c.batch_size = flags.batch_size.or(f.batch_size).unwrap_or(c.batch_size);
    c.seed = flags.seed.or(f.seed).unwrap_or(c.seed);
    let patience = flags.patience.or(f.patience);
    let interval = flags.check_interval.or(f.check_interval);
    if patience.is_some() || interval.is_some() {
        let base = c.early_stopping.unwrap_or(EarlyStopping {
            patience: 30,
            check_interval: 10,
        });
        c.early_stopping = Some(EarlyStopping {
            patience: patience.unwrap_or(base.patience),
            check_interval: interval.unwrap_or(base.check_interval),
        });
    }
    c.validate()?;
    Ok(c)
}

pub fn explain_config(flags: &ExplainFlags, file: &FileConfig) -> Result<(ExplainConfig, Backend), CliError> {
    let f = &file.explain;
    let mut c = ExplainConfig::default();
    c.m = flags.m.or(f.m).unwrap_or(c.m);
    c.subject_weight = f.subject_weight.unwrap_or(c.subject_weight);
    c.object_weight = f.object_weight.unwrap_or(c.object_weight);
    if let Some(w) = &flags.weights {
        let parts: Vec<&str> = w.split(',').map(str::trim).collect();
        let parsed: Vec<f64> = parts.iter().filter_map(|p| p.parse().ok()).collect();
        if parts.len() != 2 || parsed.len() != 2 {
            return Err(CliError::new("config", format!("--weights expects two numbers like 0.5,0.5, got '{w}'")));
        }
        (c.subject_weight, c.object_weight) = (parsed[0], parsed[1]);
    }
    c.hops = flags.n.or(f.hops).unwrap_or(c.hops);
    if let Some(s) = flags.strategy.as_deref().or(f.strategy.as_deref()) {
        c.strategy = s.parse::<Strategy>()?;
    }
    c.max_examples = flags.max_examples.or(f.max_examples);
    if flags.all_predicates {
        c.same_predicate_only = false;
    } else if let Some(v) = f.same_predicate_only {
        c.same_predicate_only = v;
    }
    c.validate()?;
    let backend = match flags.backend.as_deref().or(f.backend.as_deref()) {
        Some(b) => b.parse()?,
        None => Backend::Auto,
    };
    Ok((c, backend))
}

pub fn parse_checkpoints(flag: Option<&str>, file: &FileConfig) -> Result<Option<Vec<usize>>, CliError> {
    match flag {
        Some(s) => s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| CliError::new("config", format!("bad checkpoint '{p}' in --checkpoints")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
        None => Ok(file.roar.checkpoints.clone()),
    }
}
