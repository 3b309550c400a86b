//! Platt scaling of raw plausibility scores into probabilities, fitted on
//! validation positives against sampled corruptions, plus reliability
//! tables for diagnosing the result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kge::{EmbeddingModel, FilterIndex, Scorer};
use crate::store::{Triple, TripleStore};

/// Calibrated outputs are clamped to `[EPS, 1 - EPS]`.
pub const EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMethod {
    Platt,
}

/// `p = sigmoid(slope * score + intercept)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub method: CalibrationMethod,
    pub slope: f64,
    pub intercept: f64,
    /// Negatives per positive the fit was weighted for.
    pub negative_ratio: f64,
    /// Fingerprint of the model the calibrator was fitted on, if bound.
    pub model_fingerprint: Option<u64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Calibrator {
    /// Unbound calibrator with fixed parameters.
    pub fn fixed(slope: f64, intercept: f64) -> Self {
        Calibrator {
            method: CalibrationMethod::Platt,
            slope,
            intercept,
            negative_ratio: 1.0,
            model_fingerprint: None,
        }
    }

    pub fn calibrate(&self, raw_score: f64) -> f64 {
        sigmoid(self.slope * raw_score + self.intercept).clamp(EPS, 1.0 - EPS)
    }

    pub fn check_model(&self, model: &EmbeddingModel) -> Result<()> {
        match self.model_fingerprint {
            Some(fp) if fp != model.fingerprint() => Err(Error::MismatchedCalibrator),
            _ => Ok(()),
        }
    }
}

/// Weighted Platt fit on raw scores. Negatives are weighted so the implied
/// positive base rate is `1 / (1 + ratio)`; targets use Platt's smoothing,
/// which keeps the fit finite on separable data.
pub fn fit_scores(positives: &[f64], negatives: &[f64], ratio: f64) -> Result<(f64, f64)> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Calibration("need both positive and negative scores".into()));
    }
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Calibration(format!("invalid negative ratio {ratio}")));
    }
    let all = || positives.iter().chain(negatives).copied();
    if all().any(|x| !x.is_finite()) {
        return Err(Error::Calibration("non-finite score".into()));
    }
    let n = (positives.len() + negatives.len()) as f64;
    let mean = all().sum::<f64>() / n;
    let sd = (all().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::Calibration("degenerate fit: all scores are equal".into()));
    }

    let w_pos = 1.0;
    let w_neg = ratio * positives.len() as f64 / negatives.len() as f64;
    let n_pos = w_pos * positives.len() as f64;
    let n_neg = w_neg * negatives.len() as f64;
    let t_pos = (n_pos + 1.0) / (n_pos + 2.0);
    let t_neg = 1.0 / (n_neg + 2.0);

    // (standardised score, target, weight)
    let data: Vec<(f64, f64, f64)> = positives
        .iter()
        .map(|&x| ((x - mean) / sd, t_pos, w_pos))
        .chain(negatives.iter().map(|&x| ((x - mean) / sd, t_neg, w_neg)))
        .collect();

    let objective = |a: f64, b: f64| -> f64 {
        data.iter()
            .map(|&(x, t, w)| {
                let z = a * x + b;
                // t*log(1+e^-z) + (1-t)*log(1+e^z), written stably
                let softplus = |v: f64| if v > 0.0 { v + (-v).exp().ln_1p() } else { v.exp().ln_1p() };
                w * (t * softplus(-z) + (1.0 - t) * softplus(z))
            })
            .sum()
    };

    let (mut a, mut b) = (0.0, (n_pos / n_neg).ln());
    let mut f = objective(a, b);
    for _ in 0..200 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, t, w) in &data {
            let p = sigmoid(a * x + b);
            let r = w * (p - t);
            let c = w * p * (1.0 - p);
            ga += r * x;
            gb += r;
            haa += c * x * x;
            hab += c * x;
            hbb += c;
        }
        // small ridge keeps the Newton system solvable when p saturates
        let (haa, hbb) = (haa + 1e-12, hbb + 1e-12);
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 0.0 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-10 {
            let (na, nb) = (a - step * da, b - step * db);
            let nf = objective(na, nb);
            if nf <= f {
                improved = nf < f;
                a = na;
                b = nb;
                f = nf;
                break;
            }
            step *= 0.5;
        }
        if !improved || (da * step).abs().max((db * step).abs()) < 1e-12 {
            break;
        }
    }

    let slope = a / sd;
    let intercept = b - a * mean / sd;
    if !(slope > 0.0) {
        return Err(Error::Calibration(format!(
            "fitted slope {slope} is not positive; score ordering would not be preserved"
        )));
    }
    Ok((slope, intercept))
}

/// Corrupts subject or object uniformly, rejecting known triples.
pub fn sample_negatives(
    positives: &[Triple],
    per_positive: usize,
    num_entities: usize,
    filter: &FilterIndex,
    rng: &mut impl Rng,
) -> Vec<Triple> {
    let mut out = Vec::with_capacity(positives.len() * per_positive);
    for &pos in positives {
        for _ in 0..per_positive {
            for _attempt in 0..100 {
                let e = rng.gen_range(0..num_entities) as u32;
                let t = if rng.gen_bool(0.5) {
                    Triple::new(e, pos.predicate, pos.object)
                } else {
                    Triple::new(pos.subject, pos.predicate, e)
                };
                if t != pos && !filter.is_known(&t) {
                    out.push(t);
                    break;
                }
            }
        }
    }
    out
}

/// Validation positives (label `true`) followed by their sampled corruptions.
pub fn labeled_validation(
    store: &TripleStore,
    filter: &FilterIndex,
    per_positive: usize,
    seed: u64,
) -> Vec<(Triple, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives = sample_negatives(store.valid(), per_positive, store.num_entities(), filter, &mut rng);
    store
        .valid()
        .iter()
        .map(|&t| (t, true))
        .chain(negatives.into_iter().map(|t| (t, false)))
        .collect()
}

/// Fits a Platt calibrator on the validation split.
pub fn fit(
    model: &EmbeddingModel,
    store: &TripleStore,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<Calibrator> {
    fit_with_filter(model, store, &FilterIndex::from_store(store), negatives_per_positive, seed)
}

pub fn fit_with_filter(
    model: &EmbeddingModel,
    store: &TripleStore,
    filter: &FilterIndex,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<Calibrator> {
    if store.valid().is_empty() {
        return Err(Error::Calibration("validation split is empty".into()));
    }
    if negatives_per_positive == 0 {
        return Err(Error::Calibration("need at least one negative per positive".into()));
    }
    let labeled = labeled_validation(store, filter, negatives_per_positive, seed);
    let (pos, neg): (Vec<_>, Vec<_>) = labeled.iter().partition(|(_, y)| *y);
    let pos: Vec<f64> = pos.iter().map(|(t, _)| model.score(*t)).collect();
    let neg: Vec<f64> = neg.iter().map(|(t, _)| model.score(*t)).collect();
    let ratio = negatives_per_positive as f64;
    let (slope, intercept) = fit_scores(&pos, &neg, ratio)?;
    Ok(Calibrator {
        method: CalibrationMethod::Platt,
        slope,
        intercept,
        negative_ratio: ratio,
        model_fingerprint: Some(model.fingerprint()),
    })
}

/// A model whose scores are calibrated probabilities.
pub struct CalibratedModel<'a> {
    pub model: &'a EmbeddingModel,
    pub calibrator: &'a Calibrator,
}

impl CalibratedModel<'_> {
    pub fn probability(&self, t: Triple) -> f64 {
        self.calibrator.calibrate(self.model.score(t))
    }
}

impl Scorer for CalibratedModel<'_> {
    fn num_entities(&self) -> usize {
        self.model.num_entities()
    }

    fn score(&self, t: Triple) -> f64 {
        self.probability(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_predicted: f64,
    pub empirical_frequency: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub bins: Vec<ReliabilityBin>,
    pub expected_calibration_error: f64,
}

impl ReliabilityTable {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin,lower,upper,mean_predicted,empirical_frequency,count")?;
        for (i, b) in self.bins.iter().enumerate() {
            writeln!(
                out,
                "{i},{},{},{},{},{}",
                b.lower, b.upper, b.mean_predicted, b.empirical_frequency, b.count
            )?;
        }
        Ok(())
    }
}

/// Equal-width bins over `[0, 1]`. Empty bins report their midpoint as the
/// mean prediction and contribute nothing to the ECE.
pub fn reliability_table(predictions: &[f64], labels: &[bool], bins: usize) -> Result<ReliabilityTable> {
    if bins < 2 {
        return Err(Error::Config("reliability needs at least 2 bins".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            got: labels.len(),
        });
    }
    let mut sum_pred = vec![0.0; bins];
    let mut positives = vec![0usize; bins];
    let mut counts = vec![0usize; bins];
    for (&p, &y) in predictions.iter().zip(labels) {
        let idx = ((p * bins as f64).floor() as usize).min(bins - 1);
        sum_pred[idx] += p;
        counts[idx] += 1;
        positives[idx] += y as usize;
    }
    let total = predictions.len().max(1) as f64;
    let mut ece = 0.0;
    let table = (0..bins)
        .map(|i| {
            let lower = i as f64 / bins as f64;
            let upper = (i + 1) as f64 / bins as f64;
            if counts[i] == 0 {
                return ReliabilityBin {
                    lower,
                    upper,
                    mean_predicted: 0.5 * (lower + upper),
                    empirical_frequency: 0.0,
                    count: 0,
                };
            }
            let c = counts[i] as f64;
            let mean_predicted = sum_pred[i] / c;
            let empirical_frequency = positives[i] as f64 / c;
            ece += c / total * (mean_predicted - empirical_frequency).abs();
            ReliabilityBin {
                lower,
                upper,
                mean_predicted,
                empirical_frequency,
                count: counts[i],
            }
        })
        .collect();
    Ok(ReliabilityTable {
        bins: table,
        expected_calibration_error: ece,
    })
}

pub fn reliability(
    calibrator: &Calibrator,
    model: &EmbeddingModel,
    labeled: &[(Triple, bool)],
    bins: usize,
) -> Result<ReliabilityTable> {
    let preds: Vec<f64> = labeled
        .iter()
        .map(|(t, _)| calibrator.calibrate(model.score(*t)))
        .collect();
    let labels: Vec<bool> = labeled.iter().map(|(_, y)| *y).collect();
    reliability_table(&preds, &labels, bins)
}

pub fn brier_score(predictions: &[f64], labels: &[bool]) -> f64 {
    let n = predictions.len().max(1) as f64;
    predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (p - if y { 1.0 } else { 0.0 }).powi(2))
        .sum::<f64>()
        / n
}

/// Rescales scores linearly onto `[0, 1]`; constant input maps to 0.5.
pub fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|&s| (s - lo) / (hi - lo)).collect()
}
