use kgex::calibration::{
    self, brier_score, fit_scores, labeled_validation, min_max_normalize, reliability_table, CalibratedModel,
    Calibrator,
};
use kgex::kge::{rank_filtered, train, FilterIndex, ModelConfig, ModelKind, Side};
use kgex::synthetic::{cluster_chain_store, GraphSpec};
use kgex::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn gaussian(n: usize, mean: f64, sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = Normal::new(mean, sd).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

/// Weighted logistic regression with Platt targets, fitted by plain gradient
/// descent on the raw scores.
fn gd_oracle(pos: &[f64], neg: &[f64], ratio: f64) -> (f64, f64) {
    let w_neg = ratio * pos.len() as f64 / neg.len() as f64;
    let n_pos = pos.len() as f64;
    let n_neg = w_neg * neg.len() as f64;
    let t_pos = (n_pos + 1.0) / (n_pos + 2.0);
    let t_neg = 1.0 / (n_neg + 2.0);
    let total = n_pos + n_neg;
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for _ in 0..200_000 {
        let (mut ga, mut gb) = (0.0, 0.0);
        for (xs, t, w) in [(pos, t_pos, 1.0), (neg, t_neg, w_neg)] {
            for &x in xs {
                let p = 1.0 / (1.0 + (-(a * x + b)).exp());
                ga += w * (p - t) * x;
                gb += w * (p - t);
            }
        }
        a -= 0.5 * ga / total;
        b -= 0.5 * gb / total;
    }
    (a, b)
}

#[test]
fn matches_gradient_descent_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pos = gaussian(60, 1.0, 1.0, &mut rng);
    let neg = gaussian(120, -0.5, 1.2, &mut rng);
    for ratio in [1.0, 2.0, 5.0] {
        let (a, b) = fit_scores(&pos, &neg, ratio).unwrap();
        let (oa, ob) = gd_oracle(&pos, &neg, ratio);
        assert!((a - oa).abs() < 1e-4 * oa.abs().max(1.0), "slope {a} vs {oa}");
        assert!((b - ob).abs() < 1e-4 * ob.abs().max(1.0), "intercept {b} vs {ob}");
    }
}

#[test]
fn recovers_equal_variance_gaussian_posterior() {
    // p(y=1|x) is logistic with slope (mu1 - mu0)/sigma^2 and intercept
    // log(prior odds) - (mu1^2 - mu0^2) / (2 sigma^2).
    let (mu0, mu1, sigma) = (-1.0, 2.0, 1.5);
    let slope = (mu1 - mu0) / (sigma * sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for ratio in [1.0f64, 3.0] {
        let pos = gaussian(10_000, mu1, sigma, &mut rng);
        let neg = gaussian((10_000.0 * ratio) as usize, mu0, sigma, &mut rng);
        let intercept = (1.0 / ratio).ln() - (mu1 * mu1 - mu0 * mu0) / (2.0 * sigma * sigma);
        let (a, b) = fit_scores(&pos, &neg, ratio).unwrap();
        assert!((a - slope).abs() / slope < 0.05, "slope {a} vs {slope}");
        assert!((b - intercept).abs() / intercept.abs() < 0.05, "intercept {b} vs {intercept}");
    }
}

#[test]
fn well_specified_data_has_small_ece() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pos = gaussian(5_000, 1.0, 1.0, &mut rng);
    let neg = gaussian(5_000, -1.0, 1.0, &mut rng);
    let (a, b) = fit_scores(&pos, &neg, 1.0).unwrap();
    let cal = Calibrator::fixed(a, b);
    let test_pos = gaussian(5_000, 1.0, 1.0, &mut rng);
    let test_neg = gaussian(5_000, -1.0, 1.0, &mut rng);
    let preds: Vec<f64> = test_pos.iter().chain(&test_neg).map(|&x| cal.calibrate(x)).collect();
    let labels: Vec<bool> = (0..10_000).map(|i| i < 5_000).collect();
    let table = reliability_table(&preds, &labels, 10).unwrap();
    assert!(table.expected_calibration_error < 0.02, "ECE {}", table.expected_calibration_error);
    assert_eq!(table.bins.iter().map(|b| b.count).sum::<usize>(), 10_000);
}

#[test]
fn degenerate_and_inverted_inputs_fail() {
    assert!(matches!(fit_scores(&[0.3; 5], &[0.3; 5], 1.0), Err(Error::Calibration(_))));
    assert!(matches!(fit_scores(&[-3.0, -2.0, -2.5], &[2.0, 3.0, 2.5], 1.0), Err(Error::Calibration(_))));
    assert!(fit_scores(&[], &[1.0], 1.0).is_err());
}

#[test]
fn trained_model_calibration_improves_brier_and_preserves_ranks() {
    for seed in 0..5 {
        let store = cluster_chain_store(
            &GraphSpec {
                entities: 60,
                relations: 4,
                train: 500,
                valid: 60,
                test: 60,
                seed,
            },
            3,
        )
        .unwrap();
        let config = ModelConfig {
            kind: ModelKind::DistMult,
            k: 16,
            max_epochs: 30,
            batch_size: 8,
            learning_rate: 1e-2,
            seed,
            ..ModelConfig::desk()
        };
        let model = train(&store, &config).unwrap().model;
        let cal = calibration::fit(&model, &store, 1, seed).unwrap();
        let filter = FilterIndex::from_store(&store);
        let labeled = labeled_validation(&store, &filter, 1, seed);
        let labels: Vec<bool> = labeled.iter().map(|(_, y)| *y).collect();
        let raw: Vec<f64> = labeled.iter().map(|(t, _)| model.score(*t)).collect();
        let calibrated: Vec<f64> = raw.iter().map(|&s| cal.calibrate(s)).collect();
        assert!(calibrated.iter().all(|&p| p > 0.0 && p < 1.0));
        let before = brier_score(&min_max_normalize(&raw), &labels);
        let after = brier_score(&calibrated, &labels);
        assert!(after <= before, "seed {seed}: {after} > {before}");

        let wrapped = CalibratedModel {
            model: &model,
            calibrator: &cal,
        };
        let a = rank_filtered(&model, &filter, store.test(), Side::Both);
        let b = rank_filtered(&wrapped, &filter, store.test(), Side::Both);
        assert_eq!(a.ranks, b.ranks);
    }
}

#[test]
fn calibrator_rejects_other_models() {
    let store = cluster_chain_store(
        &GraphSpec {
            entities: 30,
            relations: 3,
            train: 180,
            valid: 20,
            test: 10,
            seed: 0,
        },
        3,
    )
    .unwrap();
    let config = ModelConfig {
        k: 8,
        max_epochs: 30,
        batch_size: 8,
        learning_rate: 1e-2,
        ..ModelConfig::desk()
    };
    let a = train(&store, &config).unwrap().model;
    let b = train(&store, &ModelConfig { seed: 1, ..config }).unwrap().model;
    let cal = calibration::fit(&a, &store, 2, 0).unwrap();
    assert!(cal.check_model(&a).is_ok());
    assert!(matches!(cal.check_model(&b), Err(Error::MismatchedCalibrator)));
}

proptest! {
    #[test]
    fn calibration_preserves_order(slope in 1e-3f64..50.0, intercept in -20.0f64..20.0, x in -5.0f64..5.0, dx in 0.0f64..5.0) {
        let c = Calibrator::fixed(slope, intercept);
        let (lo, hi) = (c.calibrate(x), c.calibrate(x + dx));
        prop_assert!(lo <= hi);
        prop_assert!(lo > 0.0 && hi < 1.0);
    }

    #[test]
    fn min_max_is_within_unit_interval(xs in proptest::collection::vec(-1e6f64..1e6, 1..50)) {
        for v in min_max_normalize(&xs) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
