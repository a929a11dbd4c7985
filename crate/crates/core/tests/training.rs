//! End-to-end training behaviors that cut across modules: the learned
//! classifier against the classic energy detector, fusion-center
//! pre-training quality, and vaccine divergence from clean updates.

use fedspectrum_core::attacks::AttackKind;
use fedspectrum_core::defense::{distill_vaccines, VaccineSpec};
use fedspectrum_core::model::{self, TrainConfig, TrainExample};
use fedspectrum_core::signal::{self, features, generate_dataset, FeatureMode, GeneratorConfig};
use fedspectrum_core::ArchSpec;

fn to_train(pool: &[fedspectrum_core::SpectrumExample]) -> Vec<TrainExample> {
    pool.iter()
        .map(|ex| TrainExample {
            features: features(ex, FeatureMode::Freq),
            labels: ex.labels.bits().to_vec(),
        })
        .collect()
}

/// A trained classifier beats the best fixed energy threshold. Total energy
/// integrates noise across the whole window, while the spectrum
/// concentrates the carrier into a few bins the model can weight; at low
/// SNR that gap decides the detection accuracy.
#[test]
fn trained_model_beats_best_fixed_threshold() {
    let gen = GeneratorConfig {
        channels: 1,
        window: 32,
        snr_db: -6.0,
        activity_prob: 0.5,
        seed: 2,
        num_examples: 6000,
    };
    let train_pool = generate_dataset(&gen).unwrap();
    let test_pool = generate_dataset(&GeneratorConfig {
        seed: 3,
        num_examples: 2000,
        ..gen
    })
    .unwrap();

    // Sweep the threshold over training-set quantiles, score on test data.
    let mut teds: Vec<f64> = train_pool
        .iter()
        .map(|ex| signal::total_energy(&ex.iq))
        .collect();
    teds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best_ed = 0.0f64;
    for q in 1..200 {
        let lambda = teds[teds.len() * q / 200];
        let correct: usize = test_pool
            .iter()
            .map(|ex| usize::from(signal::energy_detect(&ex.iq, lambda) == ex.labels.get(0)))
            .sum();
        best_ed = best_ed.max(correct as f64 / test_pool.len() as f64);
    }

    let train = to_train(&train_pool);
    let test = to_train(&test_pool);
    let arch = ArchSpec::new(32, 1, 1);
    let mut params = model::init_params(&arch, 5);
    for epoch in 0..20u64 {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 1,
            seed: 100 + epoch,
        };
        params = model::sgd_epochs(&arch, &params, &train, &cfg).unwrap();
    }
    let model_acc = model::evaluate(&arch, &params, &test).unwrap().accuracy;
    assert!(
        model_acc > best_ed,
        "model {model_acc:.4} should beat swept-threshold detection {best_ed:.4}"
    );
}

/// Supervised pre-training on 200 trusted samples lands well short of the
/// trained federation: a usable starting point, not a solved model.
#[test]
fn fc_pretraining_lands_in_the_intermediate_band() {
    let gen = GeneratorConfig {
        channels: 16,
        window: 64,
        snr_db: 12.0,
        activity_prob: 0.5,
        seed: 4,
        num_examples: 200,
    };
    let labeled = to_train(&generate_dataset(&gen).unwrap());
    let test = to_train(
        &generate_dataset(&GeneratorConfig {
            seed: 9,
            num_examples: 1000,
            ..gen
        })
        .unwrap(),
    );
    let arch = ArchSpec::new(64, 1, 16);
    let init = model::init_params(&arch, 4);
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 32,
        epochs: 100,
        seed: 8,
    };
    let fc = model::sgd_epochs(&arch, &init, &labeled, &cfg).unwrap();
    let acc = model::evaluate(&arch, &fc, &test).unwrap().accuracy;
    assert!(
        (0.6..=0.95).contains(&acc),
        "standalone FC accuracy {acc:.4} outside the expected band"
    );
}

/// Pre-training loss falls monotonically through the early epochs.
#[test]
fn pretraining_loss_decreases_early() {
    let gen = GeneratorConfig {
        channels: 16,
        window: 64,
        snr_db: 12.0,
        activity_prob: 0.5,
        seed: 4,
        num_examples: 200,
    };
    let labeled = to_train(&generate_dataset(&gen).unwrap());
    let arch = ArchSpec::new(64, 1, 16);
    let mut params = model::init_params(&arch, 4);
    let mut prev = model::loss(&arch, &params, &labeled).unwrap();
    for epoch in 0..10u64 {
        let cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 1,
            seed: 800 + epoch,
        };
        params = model::sgd_epochs(&arch, &params, &labeled, &cfg).unwrap();
        let loss = model::loss(&arch, &params, &labeled).unwrap();
        assert!(loss < prev, "epoch {epoch}: {loss} !< {prev}");
        prev = loss;
    }
}

/// Once the fusion center has pre-trained, a flip vaccine's delta points
/// away from a clean update's delta: the objectives conflict.
#[test]
fn flip_vaccine_diverges_from_clean_update() {
    let gen = GeneratorConfig {
        channels: 4,
        window: 32,
        snr_db: 12.0,
        activity_prob: 0.5,
        seed: 6,
        num_examples: 200,
    };
    let labeled_pool = generate_dataset(&gen).unwrap();
    let labeled = to_train(&labeled_pool);
    let arch = ArchSpec::new(32, 1, 4);
    let init = model::init_params(&arch, 6);
    let pretrain = TrainConfig {
        learning_rate: 0.1,
        batch_size: 32,
        epochs: 100,
        seed: 15,
    };
    let global = model::sgd_epochs(&arch, &init, &labeled, &pretrain).unwrap();

    let clean_cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 32,
        epochs: 2,
        seed: 16,
    };
    let clean = model::sgd_epochs(&arch, &global, &labeled, &clean_cfg).unwrap();
    let vaccine_spec = VaccineSpec::untargeted(vec![AttackKind::Flip], 4);
    let vaccines = distill_vaccines(
        &arch,
        &global,
        &labeled_pool,
        FeatureMode::Freq,
        &vaccine_spec,
        0.1,
        32,
        17,
    )
    .unwrap();

    let clean_delta = clean.delta_from(&global);
    let vaccine_delta = vaccines[0].delta_from(&global);
    let dot: f64 = clean_delta.iter().zip(&vaccine_delta).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine = dot / (norm(&clean_delta) * norm(&vaccine_delta));
    assert!(cosine < 0.5, "cosine {cosine:.4} too aligned");
}
