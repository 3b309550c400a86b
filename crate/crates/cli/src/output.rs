use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        CliError {
            error: kind.to_owned(),
            message: message.into(),
            hint: None,
        }
    }

    pub fn with_hint(mut self, hint: impl Into<String>) -> Self {
        self.hint = Some(hint.into());
        self
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::new("io", format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)?;
        if let Some(h) = &self.hint {
            write!(f, " ({h})")?;
        }
        Ok(())
    }
}

impl From<kgex::Error> for CliError {
    fn from(e: kgex::Error) -> Self {
        use kgex::Error as E;
        let kind = match &e {
            E::Io { .. } => "io",
            E::Parse { .. } => "parse",
            E::MissingSplits { .. } => "missing-splits",
            E::UnknownLabels { .. } => "unknown-labels",
            E::MissingTriples(_) | E::DuplicateAdditions(_) => "mutation",
            E::Config(_) | E::UnknownVariant { .. } => "config",
            E::NonFiniteLoss { .. } => "diverged",
            E::Checkpoint { .. } => "checkpoint",
            E::Calibration(_) => "calibration",
            E::NonFiniteEmbedding { .. } | E::DimensionMismatch { .. } => "embedding",
            E::StaleIndex => "stale-index",
            E::MismatchedCalibrator => "mismatched-calibrator",
            E::NoTarget => "no-target",
            E::EmptyExplanation => "empty-explanation",
            E::Snapshot(_) => "snapshot",
            E::Json(_) => "json",
        };
        CliError::new(kind, e.to_string())
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    pub started_at: String,
    pub wall_seconds: f64,
    pub status: String,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub config: Value,
    pub outputs: Vec<String>,
}

/// Output directory of one command invocation.
pub struct RunDir {
    path: PathBuf,
    outputs: Vec<String>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub config: Value,
    pub seed: Option<u64>,
}

impl RunDir {
    /// `out`, or a fresh `runs/<command>-<timestamp>` directory.
    pub fn create(out: Option<&Path>, command: &str, stamp: &str) -> Result<Self, CliError> {
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => {
                let base = PathBuf::from("runs").join(format!("{command}-{stamp}"));
                let mut path = base.clone();
                let mut i = 2;
                while path.exists() {
                    path = PathBuf::from(format!("{}-{i}", base.display()));
                    i += 1;
                }
                path
            }
        };
        std::fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(RunDir {
            path,
            outputs: Vec::new(),
            inputs: BTreeMap::new(),
            config: Value::Null,
            seed: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_owned());
        }
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::new("json", e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.to_owned(), path.to_path_buf());
    }

    pub fn finish(mut self, manifest: ManifestStub, error: Option<&CliError>) -> Result<(), CliError> {
        let status = if let Some(e) = error {
            self.write_json("error.json", e)?;
            "error"
        } else {
            let stale = self.path.join("error.json");
            if stale.exists() {
                std::fs::remove_file(&stale).map_err(|e| CliError::io(&stale, e))?;
            }
            "ok"
        };
        let m = Manifest {
            command: manifest.command,
            argv: manifest.argv,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            started_at: manifest.started_at,
            wall_seconds: manifest.wall_seconds,
            status: status.to_owned(),
            seed: self.seed,
            inputs: std::mem::take(&mut self.inputs),
            config: std::mem::take(&mut self.config),
            outputs: self.outputs.clone(),
        };
        self.write_json("manifest.json", &m)?;
        Ok(())
    }
}

pub struct ManifestStub {
    pub command: String,
    pub argv: Vec<String>,
    pub started_at: String,
    pub wall_seconds: f64,
}
