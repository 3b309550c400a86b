use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kge::config::{ModelConfig, ModelKind};
use crate::store::Triple;

/// Dense entity and relation tables, row-major with `width` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub width: usize,
    pub entity: Vec<f64>,
    pub relation: Vec<f64>,
}

impl Parameters {
    pub fn zeros(width: usize, num_entities: usize, num_relations: usize) -> Self {
        Parameters {
            width,
            entity: vec![0.0; width * num_entities],
            relation: vec![0.0; width * num_relations],
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entity.len() / self.width
    }

    pub fn num_relations(&self) -> usize {
        self.relation.len() / self.width
    }

    #[inline]
    pub fn entity_row(&self, id: u32) -> &[f64] {
        let w = self.width;
        &self.entity[id as usize * w..(id as usize + 1) * w]
    }

    #[inline]
    pub fn relation_row(&self, id: u32) -> &[f64] {
        let w = self.width;
        &self.relation[id as usize * w..(id as usize + 1) * w]
    }

    pub fn entity_row_mut(&mut self, id: u32) -> &mut [f64] {
        let w = self.width;
        &mut self.entity[id as usize * w..(id as usize + 1) * w]
    }

    pub fn relation_row_mut(&mut self, id: u32) -> &mut [f64] {
        let w = self.width;
        &mut self.relation[id as usize * w..(id as usize + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.entity.iter().chain(&self.relation).all(|x| x.is_finite())
    }

    pub fn score(&self, kind: ModelKind, t: Triple) -> f64 {
        score_vectors(
            kind,
            self.entity_row(t.subject),
            self.relation_row(t.predicate),
            self.entity_row(t.object),
        )
    }
}

/// Raw plausibility of `(s, p, o)`; higher is more plausible.
///
/// - TransE: `-||s + p - o||_2`
/// - DistMult: `sum_i s_i p_i o_i`
/// - ComplEx: `Re(sum_i s_i p_i conj(o_i))` over interleaved `(re, im)` pairs
#[inline]
pub fn score_vectors(kind: ModelKind, s: &[f64], p: &[f64], o: &[f64]) -> f64 {
    match kind {
        ModelKind::TransE => {
            let mut sq = 0.0;
            for i in 0..s.len() {
                let d = s[i] + p[i] - o[i];
                sq += d * d;
            }
            -sq.sqrt()
        }
        ModelKind::DistMult => {
            let mut acc = 0.0;
            for i in 0..s.len() {
                acc += s[i] * p[i] * o[i];
            }
            acc
        }
        ModelKind::ComplEx => {
            let mut acc = 0.0;
            for i in (0..s.len()).step_by(2) {
                let (sr, si) = (s[i], s[i + 1]);
                let (pr, pi) = (p[i], p[i + 1]);
                let (or, oi) = (o[i], o[i + 1]);
                acc += sr * pr * or + si * pr * oi + sr * pi * oi - si * pi * or;
            }
            acc
        }
    }
}

/// Adds `coef * d score / d x` into the three gradient rows.
pub fn accumulate_score_gradient(
    kind: ModelKind,
    (s, p, o): (&[f64], &[f64], &[f64]),
    coef: f64,
    gs: &mut [f64],
    gp: &mut [f64],
    go: &mut [f64],
) {
    match kind {
        ModelKind::TransE => {
            let mut sq = 0.0;
            for i in 0..s.len() {
                let d = s[i] + p[i] - o[i];
                sq += d * d;
            }
            let norm = sq.sqrt();
            if norm == 0.0 {
                return;
            }
            for i in 0..s.len() {
                let g = coef * (s[i] + p[i] - o[i]) / norm;
                gs[i] -= g;
                gp[i] -= g;
                go[i] += g;
            }
        }
        ModelKind::DistMult => {
            for i in 0..s.len() {
                gs[i] += coef * p[i] * o[i];
                gp[i] += coef * s[i] * o[i];
                go[i] += coef * s[i] * p[i];
            }
        }
        ModelKind::ComplEx => {
            for i in (0..s.len()).step_by(2) {
                let (sr, si) = (s[i], s[i + 1]);
                let (pr, pi) = (p[i], p[i + 1]);
                let (or, oi) = (o[i], o[i + 1]);
                gs[i] += coef * (pr * or + pi * oi);
                gs[i + 1] += coef * (pr * oi - pi * or);
                gp[i] += coef * (sr * or + si * oi);
                gp[i + 1] += coef * (sr * oi - si * or);
                go[i] += coef * (sr * pr - si * pi);
                go[i + 1] += coef * (si * pr + sr * pi);
            }
        }
    }
}

/// A trained (or freshly initialised) embedding model. Immutable; training
/// produces new instances.
#[derive(Debug)]
pub struct EmbeddingModel {
    config: ModelConfig,
    params: Parameters,
    trained_epochs: usize,
    fingerprint: OnceLock<u64>,
}

impl Clone for EmbeddingModel {
    fn clone(&self) -> Self {
        EmbeddingModel {
            config: self.config.clone(),
            params: self.params.clone(),
            trained_epochs: self.trained_epochs,
            fingerprint: self.fingerprint.clone(),
        }
    }
}

impl PartialEq for EmbeddingModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.trained_epochs == other.trained_epochs
            && self.params == other.params
    }
}

impl EmbeddingModel {
    pub fn from_parameters(
        config: ModelConfig,
        params: Parameters,
        trained_epochs: usize,
    ) -> Result<Self> {
        config.validate()?;
        if params.width != config.width() {
            return Err(Error::DimensionMismatch {
                expected: config.width(),
                got: params.width,
            });
        }
        Ok(EmbeddingModel {
            config,
            params,
            trained_epochs,
            fingerprint: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn parameters(&self) -> &Parameters {
        &self.params
    }

    pub fn trained_epochs(&self) -> usize {
        self.trained_epochs
    }

    pub fn num_entities(&self) -> usize {
        self.params.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.params.num_relations()
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn entity_vector(&self, id: u32) -> &[f64] {
        self.params.entity_row(id)
    }

    pub fn relation_vector(&self, id: u32) -> &[f64] {
        self.params.relation_row(id)
    }

    pub fn score(&self, t: Triple) -> f64 {
        self.params.score(self.config.kind, t)
    }

    /// Stable content hash of the model kind and both tables.
    pub fn fingerprint(&self) -> u64 {
        *self.fingerprint.get_or_init(|| {
            let mut h = Sha256::new();
            h.update(self.config.kind.to_string().as_bytes());
            h.update((self.params.width as u64).to_le_bytes());
            h.update((self.num_entities() as u64).to_le_bytes());
            for x in self.params.entity.iter().chain(&self.params.relation) {
                h.update(x.to_bits().to_le_bytes());
            }
            let digest = h.finalize();
            u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
        })
    }
}
