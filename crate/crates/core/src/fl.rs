//! Cross-device federated training primitives: client sampling, local
//! updates, and FedAvg aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ArchSpec, ParamVector, TrainConfig, TrainExample};
use crate::rng::{self, Rng64};
use crate::signal::SpectrumExample;

/// Federation-level hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FLConfig {
    /// Total client population.
    pub num_clients: usize,
    /// Fraction of clients sampled each round.
    pub selection_ratio: f64,
    pub rounds: usize,
    /// Local SGD epochs per selected client per round.
    pub local_epochs: usize,
    pub seed: u64,
}

impl Default for FLConfig {
    fn default() -> Self {
        Self {
            num_clients: 100,
            selection_ratio: 0.1,
            rounds: 100,
            local_epochs: 2,
            seed: 0,
        }
    }
}

impl FLConfig {
    /// Clients sampled per round: floor(num_clients * selection_ratio).
    pub fn num_selected(&self) -> usize {
        (self.num_clients as f64 * self.selection_ratio).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.selection_ratio > 0.0 && self.selection_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "selection_ratio {} outside (0, 1]",
                self.selection_ratio
            )));
        }
        if self.num_clients == 0 {
            return Err(Error::Config("num_clients must be >= 1".into()));
        }
        if self.num_selected() == 0 {
            return Err(Error::Config(
                "selection_ratio too small: no client selected per round".into(),
            ));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// A client's trained parameters plus provenance. The `is_malicious` flag is
/// evaluation metadata; filtering code never reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub round: usize,
    pub params: ParamVector,
    pub is_malicious: bool,
}

/// Samples `num_selected` distinct client ids, uniform without replacement,
/// as a deterministic function of `(cfg.seed, round)`. Ascending order.
pub fn select_clients(round: usize, cfg: &FLConfig) -> Vec<usize> {
    let mut rng = Rng64::from_keys(cfg.seed, &[rng::keys::SELECT, round as u64]);
    rng.sample_indices(cfg.num_clients, cfg.num_selected())
}

/// Copies the global model and runs local SGD on the client shard.
pub fn local_update(
    arch: &ArchSpec,
    global: &ParamVector,
    shard: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<ParamVector> {
    if shard.is_empty() {
        return Err(Error::Argument("empty client shard".into()));
    }
    model::sgd_epochs(arch, global, shard, cfg)
}

/// Unweighted coordinate-wise mean of the updates.
pub fn fedavg(updates: &[ParamVector]) -> Result<ParamVector> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Argument("fedavg over empty update set".into()))?;
    let len = first.len();
    let mut acc = vec![0.0f64; len];
    for u in updates {
        if u.len() != len {
            return Err(Error::Argument(format!(
                "update length {} != {len}",
                u.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(u.values()) {
            *a += v;
        }
    }
    let scale = 1.0 / updates.len() as f64;
    for a in acc.iter_mut() {
        *a *= scale;
    }
    Ok(ParamVector::new(acc))
}

/// Splits a pool evenly across clients in order; the remainder goes to the
/// lowest client ids.
pub fn split_shards(pool: &[SpectrumExample], num_clients: usize) -> Vec<Vec<SpectrumExample>> {
    let base = pool.len() / num_clients;
    let remainder = pool.len() % num_clients;
    let mut shards = Vec::with_capacity(num_clients);
    let mut offset = 0;
    for id in 0..num_clients {
        let size = base + usize::from(id < remainder);
        shards.push(pool[offset..offset + size].to_vec());
        offset += size;
    }
    shards
}

/// Per-round metrics emitted as one JSONL object per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub test_accuracy: f64,
    pub per_channel_accuracy: Vec<f64>,
    pub selected_ids: Vec<usize>,
    pub malicious_selected_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fc_error_rates: Option<Vec<f64>>,
    /// Per channel: (active->idle flips, idle->active flips) applied by the
    /// selected benign clients this round.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrections_applied: Option<Vec<(usize, usize)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo_label_accuracy: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FLConfig {
        FLConfig {
            seed: 42,
            ..FLConfig::default()
        }
    }

    #[test]
    fn selects_expected_count() {
        let c = cfg();
        let ids = select_clients(1, &c);
        assert_eq!(ids.len(), 10);
        let distinct: std::collections::BTreeSet<_> = ids.iter().collect();
        assert_eq!(distinct.len(), 10);
        assert!(ids.iter().all(|&i| i < 100));
    }

    #[test]
    fn full_selection_returns_everyone() {
        let c = FLConfig {
            selection_ratio: 1.0,
            ..cfg()
        };
        let ids = select_clients(3, &c);
        assert_eq!(ids, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn selection_is_deterministic_per_round() {
        let c = cfg();
        assert_eq!(select_clients(5, &c), select_clients(5, &c));
        assert_ne!(select_clients(5, &c), select_clients(6, &c));
    }

    #[test]
    fn selection_counts_concentrate_binomially() {
        // Over 1000 rounds each client should be picked ~100 times; +-35
        // is a 3.7-sigma band for Binomial(1000, 0.1).
        let c = cfg();
        let mut counts = vec![0usize; c.num_clients];
        for round in 0..1000 {
            for id in select_clients(round, &c) {
                counts[id] += 1;
            }
        }
        for (id, &n) in counts.iter().enumerate() {
            assert!(
                (65..=135).contains(&n),
                "client {id} selected {n} times"
            );
        }
    }

    #[test]
    fn fedavg_of_copies_is_identity() {
        let w = ParamVector::new(vec![1.0, -2.0, 3.5]);
        let out = fedavg(&[w.clone(), w.clone(), w.clone()]).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn fedavg_of_opposites_is_zero() {
        let w = ParamVector::new(vec![1.0, -2.0, 3.5]);
        let neg = ParamVector::new(w.values().iter().map(|v| -v).collect());
        let out = fedavg(&[w, neg]).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fedavg_matches_per_coordinate_mean() {
        let mut rng = crate::rng::Rng64::new(4);
        let vs: Vec<ParamVector> = (0..3)
            .map(|_| ParamVector::new((0..50).map(|_| rng.next_range(-5.0, 5.0)).collect()))
            .collect();
        let out = fedavg(&vs).unwrap();
        for i in 0..50 {
            let mean = (vs[0].values()[i] + vs[1].values()[i] + vs[2].values()[i]) / 3.0;
            assert!((out.values()[i] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn fedavg_is_permutation_invariant() {
        let mut rng = crate::rng::Rng64::new(9);
        let vs: Vec<ParamVector> = (0..5)
            .map(|_| ParamVector::new((0..20).map(|_| rng.next_range(-1.0, 1.0)).collect()))
            .collect();
        let mut reversed = vs.clone();
        reversed.reverse();
        let a = fedavg(&vs).unwrap();
        let b = fedavg(&reversed).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fedavg_rejects_empty_and_mismatched() {
        assert!(matches!(fedavg(&[]), Err(Error::Argument(_))));
        let a = ParamVector::new(vec![1.0]);
        let b = ParamVector::new(vec![1.0, 2.0]);
        assert!(matches!(fedavg(&[a, b]), Err(Error::Argument(_))));
    }

    #[test]
    fn shards_split_evenly_with_remainder_to_low_ids() {
        let cfg = crate::signal::GeneratorConfig {
            channels: 4,
            window: 32,
            snr_db: 10.0,
            activity_prob: 0.5,
            seed: 1,
            num_examples: 23,
        };
        let pool = crate::signal::generate_dataset(&cfg).unwrap();
        let shards = split_shards(&pool, 5);
        let sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        assert_eq!(shards.iter().map(|s| s.len()).sum::<usize>(), 23);
        assert_eq!(shards[0][0], pool[0]);
        assert_eq!(shards[4][3], pool[22]);
    }

    #[test]
    fn local_update_zero_lr_returns_global() {
        let arch = ArchSpec {
            input_len: 16,
            input_rows: 1,
            conv_channels: 4,
            kernel: 5,
            hidden: 8,
            outputs: 2,
        };
        let global = model::init_params(&arch, 1);
        let shard = vec![TrainExample {
            features: vec![0.5; arch.input_size()],
            labels: vec![true, false],
        }];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            ..TrainConfig::default()
        };
        assert_eq!(local_update(&arch, &global, &shard, &cfg).unwrap(), global);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let updated = local_update(&arch, &global, &shard, &cfg).unwrap();
        assert_ne!(updated, global);
        // Same shard and seed on a "different client" gives the same update.
        assert_eq!(local_update(&arch, &global, &shard, &cfg).unwrap(), updated);
    }

    #[test]
    fn local_update_rejects_empty_shard() {
        let arch = ArchSpec::new(16, 1, 2);
        let global = model::init_params(&arch, 1);
        assert!(matches!(
            local_update(&arch, &global, &[], &TrainConfig::default()),
            Err(Error::Argument(_))
        ));
    }
}
