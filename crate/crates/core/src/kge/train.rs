//! Mini-batch training with negative sampling, multiclass NLL loss, sparse
//! L2 regularisation and Adam.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kge::config::{ModelConfig, ModelKind};
use crate::kge::model::{accumulate_score_gradient, EmbeddingModel, Parameters};
use crate::kge::rank::{rank_filtered, FilterIndex, Side};
use crate::store::{Triple, TripleStore};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// One positive triple and its corruptions.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub positive: Triple,
    pub negatives: Vec<Triple>,
}

/// Loss and sparse gradient for one batch. Rows are keyed by id.
#[derive(Clone, Debug, Default)]
pub struct BatchGradient {
    pub loss: f64,
    pub entity: BTreeMap<u32, Vec<f64>>,
    pub relation: BTreeMap<u32, Vec<f64>>,
}

fn row<'a>(map: &'a mut BTreeMap<u32, Vec<f64>>, id: u32, width: usize) -> &'a mut Vec<f64> {
    map.entry(id).or_insert_with(|| vec![0.0; width])
}

/// Mean multiclass NLL over the samples plus `lambda * ||v||^2` for every
/// distinct embedding row the batch touches.
pub fn batch_loss_and_gradient(
    params: &Parameters,
    kind: ModelKind,
    samples: &[Sample],
    lambda: f64,
) -> BatchGradient {
    let width = params.width;
    let mut grad = BatchGradient::default();
    if samples.is_empty() {
        return grad;
    }
    let inv_n = 1.0 / samples.len() as f64;
    let mut scores = Vec::new();
    let mut gs = vec![0.0; width];
    let mut gp = vec![0.0; width];
    let mut go = vec![0.0; width];

    for sample in samples {
        scores.clear();
        scores.push(params.score(kind, sample.positive));
        scores.extend(sample.negatives.iter().map(|&t| params.score(kind, t)));
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = scores.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum_exp.ln();
        grad.loss += (lse - scores[0]) * inv_n;

        let triples = std::iter::once(&sample.positive).chain(&sample.negatives);
        for (j, t) in triples.enumerate() {
            let softmax = (scores[j] - lse).exp();
            let coef = (softmax - if j == 0 { 1.0 } else { 0.0 }) * inv_n;
            gs.fill(0.0);
            gp.fill(0.0);
            go.fill(0.0);
            accumulate_score_gradient(
                kind,
                (
                    params.entity_row(t.subject),
                    params.relation_row(t.predicate),
                    params.entity_row(t.object),
                ),
                coef,
                &mut gs,
                &mut gp,
                &mut go,
            );
            add_into(row(&mut grad.entity, t.subject, width), &gs);
            add_into(row(&mut grad.relation, t.predicate, width), &gp);
            add_into(row(&mut grad.entity, t.object, width), &go);
        }
    }

    if lambda > 0.0 {
        for (&id, g) in grad.entity.iter_mut() {
            let v = params.entity_row(id);
            for (gi, vi) in g.iter_mut().zip(v) {
                *gi += 2.0 * lambda * vi;
            }
            grad.loss += lambda * v.iter().map(|x| x * x).sum::<f64>();
        }
        for (&id, g) in grad.relation.iter_mut() {
            let v = params.relation_row(id);
            for (gi, vi) in g.iter_mut().zip(v) {
                *gi += 2.0 * lambda * vi;
            }
            grad.loss += lambda * v.iter().map(|x| x * x).sum::<f64>();
        }
    }
    grad
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Uniform `[-6/sqrt(k), 6/sqrt(k)]` initialisation, entity table first.
pub fn initialize(config: &ModelConfig, num_entities: usize, num_relations: usize, rng: &mut ChaCha8Rng) -> Parameters {
    let bound = 6.0 / (config.k as f64).sqrt();
    let mut params = Parameters::zeros(config.width(), num_entities, num_relations);
    for x in params.entity.iter_mut().chain(params.relation.iter_mut()) {
        *x = rng.gen_range(-bound..=bound);
    }
    params
}

/// Lazy Adam: moments of untouched rows are left as they are.
#[derive(Clone, Debug)]
struct Adam {
    step: i32,
    m: Parameters,
    v: Parameters,
}

impl Adam {
    fn new(like: &Parameters) -> Self {
        let zeros = Parameters::zeros(like.width, like.num_entities(), like.num_relations());
        Adam {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn apply(&mut self, params: &mut Parameters, grad: &BatchGradient, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let update = |theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for i in 0..g.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                theta[i] -= lr * mhat / (vhat.sqrt() + EPSILON);
            }
        };
        for (&id, g) in &grad.entity {
            update(
                params.entity_row_mut(id),
                self.m.entity_row_mut(id),
                self.v.entity_row_mut(id),
                g,
            );
        }
        for (&id, g) in &grad.relation {
            update(
                params.relation_row_mut(id),
                self.m.relation_row_mut(id),
                self.v.relation_row_mut(id),
                g,
            );
        }
    }
}

/// Draws `eta` corruptions, each replacing subject or object (equal odds) by
/// a uniformly drawn entity. Draws that reproduce the positive are dropped.
pub fn corrupt(positive: Triple, eta: usize, num_entities: usize, rng: &mut impl Rng) -> Vec<Triple> {
    let mut out = Vec::with_capacity(eta);
    for _ in 0..eta {
        let e = rng.gen_range(0..num_entities) as u32;
        let t = if rng.gen_bool(0.5) {
            Triple::new(e, positive.predicate, positive.object)
        } else {
            Triple::new(positive.subject, positive.predicate, e)
        };
        if t != positive {
            out.push(t);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub val_mrr: Option<f64>,
}

/// Stateful training loop. Used directly when per-epoch snapshots are
/// needed; [`train`] wraps it with early stopping.
pub struct Trainer<'a> {
    store: &'a TripleStore,
    config: ModelConfig,
    params: Parameters,
    adam: Adam,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(store: &'a TripleStore, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        if store.train().is_empty() {
            return Err(Error::Config("train split is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = initialize(config, store.num_entities(), store.num_relations(), &mut rng);
        Ok(Trainer {
            store,
            config: config.clone(),
            adam: Adam::new(&params),
            params,
            rng,
            order: (0..store.train().len()).collect(),
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Runs one pass over the shuffled train split; returns the mean batch loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.order.shuffle(&mut self.rng);
        let train = self.store.train();
        let e = self.store.num_entities();
        let mut total = 0.0;
        let mut batches = 0;
        let chunks: Vec<Vec<usize>> = self
            .order
            .chunks(self.config.batch_size)
            .map(<[usize]>::to_vec)
            .collect();
        for (b, chunk) in chunks.iter().enumerate() {
            let samples: Vec<Sample> = chunk
                .iter()
                .map(|&i| Sample {
                    positive: train[i],
                    negatives: corrupt(train[i], self.config.eta, e, &mut self.rng),
                })
                .collect();
            let grad = batch_loss_and_gradient(&self.params, self.config.kind, &samples, self.config.l2_lambda);
            if !grad.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch + 1,
                    batch: b,
                });
            }
            self.adam.apply(&mut self.params, &grad, self.config.learning_rate);
            total += grad.loss;
            batches += 1;
        }
        self.epoch += 1;
        if !self.params.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                batch: batches,
            });
        }
        Ok(total / batches as f64)
    }

    /// Snapshot of the current parameters.
    pub fn model(&self) -> EmbeddingModel {
        EmbeddingModel::from_parameters(self.config.clone(), self.params.clone(), self.epoch)
            .expect("trainer config was validated")
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    pub log: Vec<LogRow>,
}

/// Trains for `max_epochs`, or until validation MRR has not improved for
/// `patience` epochs. With early stopping the best checked model is returned.
pub fn train(store: &TripleStore, config: &ModelConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(store, config)?;
    let mut log = Vec::new();
    let Some(es) = config.early_stopping else {
        for _ in 0..config.max_epochs {
            let loss = trainer.run_epoch()?;
            log.push(LogRow {
                epoch: trainer.epoch(),
                loss,
                val_mrr: None,
            });
        }
        return Ok(TrainOutcome {
            model: trainer.model(),
            log,
        });
    };

    if store.valid().is_empty() {
        return Err(Error::Config("early stopping needs a validation split".into()));
    }
    let filter = FilterIndex::from_store(store);
    let mut best: Option<(f64, EmbeddingModel)> = None;
    let mut best_epoch = 0;
    for _ in 0..config.max_epochs {
        let loss = trainer.run_epoch()?;
        let epoch = trainer.epoch();
        if epoch % es.check_interval != 0 {
            log.push(LogRow {
                epoch,
                loss,
                val_mrr: None,
            });
            continue;
        }
        let model = trainer.model();
        let mrr = rank_filtered(&model, &filter, store.valid(), Side::Both).mrr;
        log.push(LogRow {
            epoch,
            loss,
            val_mrr: Some(mrr),
        });
        if best.as_ref().map_or(true, |(b, _)| mrr > *b) {
            best = Some((mrr, model));
            best_epoch = epoch;
        } else if epoch - best_epoch >= es.patience {
            break;
        }
    }
    let model = match best {
        Some((_, m)) => m,
        None => trainer.model(),
    };
    Ok(TrainOutcome { model, log })
}

/// CSV `epoch,loss,val_mrr`; `val_mrr` is empty when not evaluated.
pub fn write_log_csv<W: std::io::Write>(log: &[LogRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,loss,val_mrr")?;
    for row in log {
        match row.val_mrr {
            Some(m) => writeln!(out, "{},{},{}", row.epoch, row.loss, m)?,
            None => writeln!(out, "{},{},", row.epoch, row.loss)?,
        }
    }
    Ok(())
}
