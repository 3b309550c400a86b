//! Shallow knowledge-graph embedding models: TransE, DistMult and ComplEx.

pub mod config;
pub mod model;
pub mod rank;
pub mod train;

pub use config::{EarlyStopping, ModelConfig, ModelKind};
pub use model::{score_vectors, EmbeddingModel, Parameters};
pub use rank::{rank_filtered, FilterIndex, RankReport, Scorer, Side};
pub use train::{train, LogRow, Sample, TrainOutcome, Trainer};
