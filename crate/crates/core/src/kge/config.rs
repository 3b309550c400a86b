use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    TransE,
    DistMult,
    ComplEx,
}

impl ModelKind {
    /// Stored vector length for embedding dimension `k`. ComplEx keeps real
    /// and imaginary parts interleaved.
    pub fn width(self, k: usize) -> usize {
        match self {
            ModelKind::ComplEx => 2 * k,
            _ => k,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::TransE => "transe",
            ModelKind::DistMult => "distmult",
            ModelKind::ComplEx => "complex",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelKind::TransE),
            "distmult" => Ok(ModelKind::DistMult),
            "complex" => Ok(ModelKind::ComplEx),
            _ => Err(Error::UnknownVariant {
                kind: "model kind",
                value: s.to_owned(),
            }),
        }
    }
}

/// Early stopping on filtered validation MRR. Both fields are in epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub check_interval: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub k: usize,
    pub eta: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub early_stopping: Option<EarlyStopping>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

impl ModelConfig {
    /// Small defaults suitable for toy graphs and the test suite.
    pub fn desk() -> Self {
        ModelConfig {
            kind: ModelKind::TransE,
            k: 32,
            eta: 10,
            learning_rate: 1e-3,
            l2_lambda: 1e-4,
            max_epochs: 200,
            batch_size: 512,
            early_stopping: None,
            seed: 0,
        }
    }

    /// TransE reproduction profile for FB15k-237.
    pub fn paper_fb15k237() -> Self {
        ModelConfig {
            k: 400,
            eta: 30,
            learning_rate: 1e-4,
            l2_lambda: 1e-4,
            max_epochs: 4000,
            early_stopping: Some(EarlyStopping {
                patience: 30,
                check_interval: 10,
            }),
            ..ModelConfig::desk()
        }
    }

    /// TransE reproduction profile for WN18RR.
    pub fn paper_wn18rr() -> Self {
        ModelConfig {
            k: 350,
            ..ModelConfig::paper_fb15k237()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper-fb15k237" => Ok(Self::paper_fb15k237()),
            "paper-wn18rr" => Ok(Self::paper_wn18rr()),
            _ => Err(Error::UnknownVariant {
                kind: "profile",
                value: name.to_owned(),
            }),
        }
    }

    pub fn width(&self) -> usize {
        self.kind.width(self.k)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_owned()));
        if self.k == 0 {
            return fail("k must be at least 1");
        }
        if self.eta == 0 {
            return fail("eta must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be positive");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return fail("l2 lambda must be non-negative");
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if let Some(es) = self.early_stopping {
            if es.check_interval == 0 {
                return fail("early-stopping check interval must be at least 1");
            }
        }
        Ok(())
    }
}
