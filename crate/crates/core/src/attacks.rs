//! Label-poisoning attacks on client shards and attack-success metrics.
//!
//! The threat model is data poisoning only: malicious clients rewrite the
//! labels of their local shard once at setup and then run the unmodified
//! local training code. Features are never touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ArchSpec, ParamVector, TrainExample};
use crate::rng::{self, Rng64};
use crate::signal::{ChannelLabels, SpectrumExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    /// Invert the bit on targeted channels.
    Flip,
    /// Report targeted channels as always busy (label 1).
    SetBusy,
    /// Report targeted channels as always idle (label 0).
    SetIdle,
    /// Uniform random bit on targeted channels.
    Random,
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flip" => Ok(AttackKind::Flip),
            "busy" => Ok(AttackKind::SetBusy),
            "idle" => Ok(AttackKind::SetIdle),
            "random" => Ok(AttackKind::Random),
            other => Err(Error::Config(format!("unknown attack kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AttackKind::Flip => "flip",
            AttackKind::SetBusy => "busy",
            AttackKind::SetIdle => "idle",
            AttackKind::Random => "random",
        };
        write!(f, "{s}")
    }
}

/// One poisoning campaign: what to do, where, and how many clients do it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Channels the attack rewrites; the full set makes it untargeted.
    pub targeted_channels: Vec<usize>,
    /// Fraction of the client population that is malicious.
    pub malicious_ratio: f64,
    pub seed: u64,
}

impl AttackSpec {
    pub fn untargeted(kind: AttackKind, channels: usize, malicious_ratio: f64, seed: u64) -> Self {
        Self {
            kind,
            targeted_channels: (0..channels).collect(),
            malicious_ratio,
            seed,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.targeted_channels.is_empty() {
            return Err(Error::Config("targeted_channels must be non-empty".into()));
        }
        if let Some(&bad) = self.targeted_channels.iter().find(|&&c| c >= channels) {
            return Err(Error::Config(format!(
                "targeted channel {bad} out of range (K = {channels})"
            )));
        }
        if !(0.0..=1.0).contains(&self.malicious_ratio) {
            return Err(Error::Config(format!(
                "malicious_ratio {} outside [0, 1]",
                self.malicious_ratio
            )));
        }
        Ok(())
    }
}

/// Picks floor(n * ratio) distinct malicious client ids, fixed for the whole
/// run. Ascending order.
pub fn assign_malicious(num_clients: usize, ratio: f64, seed: u64) -> Vec<usize> {
    let count = (num_clients as f64 * ratio).floor() as usize;
    let mut rng = Rng64::from_keys(seed, &[rng::keys::MALICIOUS]);
    rng.sample_indices(num_clients, count)
}

/// Rewrites labels on targeted channels only. `rng` is consumed only by the
/// random attack; callers key it by `(seed, client_id)`.
pub fn poison_labels(labels: &ChannelLabels, spec: &AttackSpec, rng: &mut Rng64) -> ChannelLabels {
    let mut out = labels.clone();
    for &ch in &spec.targeted_channels {
        let bit = match spec.kind {
            AttackKind::Flip => !labels.get(ch),
            AttackKind::SetBusy => true,
            AttackKind::SetIdle => false,
            AttackKind::Random => rng.next_bool(),
        };
        out.set(ch, bit);
    }
    out
}

/// Poisons every label in a client shard using the stream keyed by
/// `(spec.seed, client_id)`. Features are left bit-identical.
pub fn poison_shard(shard: &mut [SpectrumExample], spec: &AttackSpec, client_id: usize) {
    let mut rng = Rng64::from_keys(spec.seed, &[rng::keys::ATTACK_STREAM, client_id as u64]);
    for ex in shard.iter_mut() {
        ex.labels = poison_labels(&ex.labels, spec, &mut rng);
    }
}

/// Attack success rate on one channel: the fraction of examples whose true
/// label is `y_source` that the model classifies as `y_target`.
pub fn asr(
    arch: &ArchSpec,
    params: &ParamVector,
    data: &[TrainExample],
    y_source: bool,
    y_target: bool,
    channel: usize,
) -> Result<f64> {
    if channel >= arch.outputs {
        return Err(Error::Index(format!(
            "channel {channel} of {}",
            arch.outputs
        )));
    }
    let mut qualifying = 0usize;
    let mut hits = 0usize;
    for ex in data {
        if ex.labels[channel] != y_source {
            continue;
        }
        qualifying += 1;
        let logits = model::forward(arch, params, &ex.features)?;
        let predicted = logits[channel] >= 0.0;
        if predicted == y_target {
            hits += 1;
        }
    }
    if qualifying == 0 {
        return Err(Error::UndefinedMetric(format!(
            "no examples with label {} on channel {channel}",
            y_source as u8
        )));
    }
    Ok(hits as f64 / qualifying as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(bits: &[u8]) -> ChannelLabels {
        ChannelLabels::new(bits.iter().map(|&b| b == 1).collect())
    }

    fn spec(kind: AttackKind, channels: &[usize]) -> AttackSpec {
        AttackSpec {
            kind,
            targeted_channels: channels.to_vec(),
            malicious_ratio: 0.3,
            seed: 5,
        }
    }

    #[test]
    fn assign_malicious_counts() {
        assert!(assign_malicious(100, 0.0, 1).is_empty());
        let ids = assign_malicious(100, 0.3, 1);
        assert_eq!(ids.len(), 30);
        let distinct: std::collections::BTreeSet<_> = ids.iter().collect();
        assert_eq!(distinct.len(), 30);
        assert_eq!(ids, assign_malicious(100, 0.3, 1));
    }

    #[test]
    fn sampled_malicious_fraction_can_exceed_half() {
        // With 30% malicious and 10-of-100 sampling, some rounds draw a
        // malicious majority; that is the failure mode majority-based
        // defenses inherit.
        let malicious: std::collections::BTreeSet<usize> =
            assign_malicious(100, 0.3, 1).into_iter().collect();
        let fl = crate::fl::FLConfig {
            seed: 42,
            ..Default::default()
        };
        let mut spiked = false;
        for round in 1..=100 {
            let picked = crate::fl::select_clients(round, &fl);
            let bad = picked.iter().filter(|id| malicious.contains(id)).count();
            if bad as f64 / picked.len() as f64 > 0.5 {
                spiked = true;
                break;
            }
        }
        assert!(spiked, "expected at least one malicious-majority round");
    }

    #[test]
    fn flip_inverts_targeted_channels() {
        let mut rng = Rng64::new(1);
        let out = poison_labels(&labels(&[1, 0, 1, 0]), &spec(AttackKind::Flip, &[0, 1, 2, 3]), &mut rng);
        assert_eq!(out, labels(&[0, 1, 0, 1]));
    }

    #[test]
    fn set_busy_touches_only_targets() {
        let mut rng = Rng64::new(1);
        let out = poison_labels(&labels(&[0, 0]), &spec(AttackKind::SetBusy, &[0]), &mut rng);
        assert_eq!(out, labels(&[1, 0]));
        let out = poison_labels(&labels(&[1, 1]), &spec(AttackKind::SetIdle, &[1]), &mut rng);
        assert_eq!(out, labels(&[1, 0]));
    }

    #[test]
    fn double_flip_is_identity() {
        let mut rng = Rng64::new(1);
        let sp = spec(AttackKind::Flip, &[1, 3]);
        let original = labels(&[1, 0, 0, 1]);
        let once = poison_labels(&original, &sp, &mut rng);
        let twice = poison_labels(&once, &sp, &mut rng);
        assert_eq!(twice, original);
    }

    #[test]
    fn random_attack_bits_are_balanced() {
        let sp = spec(AttackKind::Random, &[0]);
        let mut rng = Rng64::from_keys(sp.seed, &[rng::keys::ATTACK_STREAM, 7]);
        let mut ones = 0usize;
        let n = 10_000;
        for _ in 0..n {
            if poison_labels(&labels(&[0, 0]), &sp, &mut rng).get(0) {
                ones += 1;
            }
        }
        let mean = ones as f64 / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn poison_shard_leaves_features_untouched() {
        let cfg = crate::signal::GeneratorConfig {
            channels: 4,
            window: 32,
            snr_db: 10.0,
            activity_prob: 0.5,
            seed: 3,
            num_examples: 10,
        };
        let clean = crate::signal::generate_dataset(&cfg).unwrap();
        let mut poisoned = clean.clone();
        poison_shard(&mut poisoned, &spec(AttackKind::Flip, &[0, 1, 2, 3]), 4);
        for (a, b) in clean.iter().zip(&poisoned) {
            assert_eq!(a.iq, b.iq);
            assert_eq!(a.freq, b.freq);
            assert_eq!(a.band_energy, b.band_energy);
            assert_ne!(a.labels, b.labels);
        }
    }

    #[test]
    fn asr_trivial_cases_and_oracle() {
        let arch = ArchSpec {
            input_len: 16,
            input_rows: 1,
            conv_channels: 4,
            kernel: 5,
            hidden: 8,
            outputs: 2,
        };
        // Constant predictor: channel 0 stuck busy, channel 1 stuck idle.
        let mut params = ParamVector::zeros(arch.param_count());
        let layout = arch.layout();
        params.values_mut()[layout.fc2_b] = 10.0;
        params.values_mut()[layout.fc2_b + 1] = -10.0;
        let mut rng = Rng64::new(2);
        let data: Vec<TrainExample> = (0..40)
            .map(|_| TrainExample {
                features: (0..16).map(|_| rng.next_range(-1.0, 1.0)).collect(),
                labels: vec![rng.next_bool(), rng.next_bool()],
            })
            .collect();
        // Constant-busy predictor: every idle example "succeeds" as busy.
        assert_eq!(asr(&arch, &params, &data, false, true, 0).unwrap(), 1.0);
        // Perfect-looking case: predictor never says busy on channel 1.
        assert_eq!(asr(&arch, &params, &data, true, true, 1).unwrap(), 0.0);

        // Exhaustive recount for a nontrivial instance.
        let y_s = true;
        let y_t = true;
        let channel = 0;
        let expected = {
            let qualifying: Vec<_> = data.iter().filter(|ex| ex.labels[channel] == y_s).collect();
            let hits = qualifying
                .iter()
                .filter(|ex| {
                    let z = model::forward(&arch, &params, &ex.features).unwrap()[channel];
                    (z >= 0.0) == y_t
                })
                .count();
            hits as f64 / qualifying.len() as f64
        };
        assert_eq!(asr(&arch, &params, &data, y_s, y_t, channel).unwrap(), expected);
    }

    #[test]
    fn asr_undefined_without_qualifying_examples() {
        let arch = ArchSpec::new(16, 1, 2);
        let params = ParamVector::zeros(arch.param_count());
        let data = vec![TrainExample {
            features: vec![0.0; 16],
            labels: vec![true, true],
        }];
        assert!(matches!(
            asr(&arch, &params, &data, false, true, 0),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn spec_validation() {
        let mut sp = spec(AttackKind::Flip, &[0]);
        assert!(sp.validate(4).is_ok());
        sp.targeted_channels.clear();
        assert!(sp.validate(4).is_err());
        let sp = spec(AttackKind::Flip, &[5]);
        assert!(sp.validate(4).is_err());
        let mut sp = spec(AttackKind::Flip, &[0]);
        sp.malicious_ratio = 1.2;
        assert!(sp.validate(4).is_err());
    }
}
