//! Shared fixtures for the criterion benchmarks.

use fedspectrum_core::model::TrainExample;
use fedspectrum_core::rng::Rng64;
use fedspectrum_core::signal::{features, generate_dataset, FeatureMode, GeneratorConfig};
use fedspectrum_core::{ArchSpec, ParamVector, SpectrumExample};

pub fn sample_pool(count: usize) -> Vec<SpectrumExample> {
    generate_dataset(&GeneratorConfig {
        channels: 16,
        window: 64,
        snr_db: 12.0,
        activity_prob: 0.5,
        seed: 7,
        num_examples: count,
    })
    .unwrap()
}

pub fn bench_arch() -> ArchSpec {
    ArchSpec::new(64, 1, 16)
}

pub fn train_examples(pool: &[SpectrumExample]) -> Vec<TrainExample> {
    pool.iter()
        .map(|ex| TrainExample {
            features: features(ex, FeatureMode::Freq),
            labels: ex.labels.bits().to_vec(),
        })
        .collect()
}

pub fn random_updates(count: usize, dim: usize, seed: u64) -> Vec<ParamVector> {
    let mut rng = Rng64::new(seed);
    (0..count)
        .map(|_| ParamVector::new((0..dim).map(|_| rng.next_range(-1.0, 1.0)).collect()))
        .collect()
}
