//! Semi-supervised federated training: fusion-center supervised updates,
//! client-side pseudo-labeling, and energy-based label correction.
//!
//! Pseudo-labels inherit the quality of the global model, so each client
//! repairs the most suspicious ones using per-channel signal energy: among
//! samples pseudo-labeled active, the lowest-energy ones become idle; among
//! samples pseudo-labeled idle, the highest-energy ones become active. The
//! number of repairs per channel is a soft threshold tied to the fusion
//! center's measured error rate and shrinks as the model improves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::FLConfig;
use crate::model::{self, ArchSpec, ParamVector, TrainConfig, TrainExample};
use crate::signal::ChannelLabels;

/// Semi-supervised configuration on top of the federation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiConfig {
    /// Size of the trusted labeled dataset held by the fusion center.
    pub labeled_size: usize,
    pub fc_pretrain_epochs: usize,
    pub fc_finetune_epochs: usize,
    /// Correction budget as a fraction of the measured error rate, in [0, 1].
    pub correction_ratio: f64,
    pub fl: FLConfig,
}

impl Default for SemiConfig {
    fn default() -> Self {
        Self {
            labeled_size: 200,
            fc_pretrain_epochs: 100,
            fc_finetune_epochs: 2,
            correction_ratio: 0.3,
            fl: FLConfig::default(),
        }
    }
}

impl SemiConfig {
    pub fn validate(&self) -> Result<()> {
        self.fl.validate()?;
        if self.labeled_size == 0 {
            return Err(Error::Config("labeled_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.correction_ratio) {
            return Err(Error::Config(format!(
                "correction_ratio {} outside [0, 1]",
                self.correction_ratio
            )));
        }
        Ok(())
    }
}

/// Per-channel correction budget: `c0` pseudo-active samples demoted to
/// idle, `c1` pseudo-idle samples promoted to active.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionCounts {
    pub per_channel: Vec<(usize, usize)>,
}

impl CorrectionCounts {
    pub fn zeros(channels: usize) -> Self {
        Self {
            per_channel: vec![(0, 0); channels],
        }
    }
}

/// Supervised update of the fusion-center model on the trusted dataset.
pub fn fc_update(
    arch: &ArchSpec,
    params: &ParamVector,
    labeled: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<ParamVector> {
    if labeled.is_empty() {
        return Err(Error::Argument("empty labeled dataset".into()));
    }
    model::sgd_epochs(arch, params, labeled, cfg)
}

/// Labels a shard with the global model: probability >= 0.5 maps to active.
pub fn pseudo_label(
    arch: &ArchSpec,
    global: &ParamVector,
    features: &[Vec<f64>],
) -> Result<Vec<ChannelLabels>> {
    if features.is_empty() {
        return Err(Error::Argument("empty shard".into()));
    }
    features
        .iter()
        .map(|x| {
            let logits = model::forward(arch, global, x)?;
            // sigmoid(z) >= 0.5 exactly when z >= 0
            Ok(ChannelLabels::new(logits.iter().map(|&z| z >= 0.0).collect()))
        })
        .collect()
}

/// Soft-threshold budget: on channel k with measured error `err_k`,
/// `c1 = floor(ratio * err_k * n0_k)` idle pseudo-labels are promoted and
/// `c0 = floor(ratio * err_k * n1_k)` active pseudo-labels are demoted,
/// where `n0_k` / `n1_k` count the pseudo-labels of each polarity.
pub fn correction_counts(
    fc_error: &[f64],
    ratio: f64,
    pseudo: &[ChannelLabels],
) -> CorrectionCounts {
    let channels = fc_error.len();
    let mut per_channel = Vec::with_capacity(channels);
    for (k, &err) in fc_error.iter().enumerate() {
        let n1 = pseudo.iter().filter(|y| y.get(k)).count();
        let n0 = pseudo.len() - n1;
        let c0 = (ratio * err * n1 as f64).floor() as usize;
        let c1 = (ratio * err * n0 as f64).floor() as usize;
        per_channel.push((c0, c1));
    }
    CorrectionCounts { per_channel }
}

/// Applies the energy correction rule per channel. Among pseudo-active
/// samples, the `c0` with the lowest band energy flip to idle; among
/// pseudo-idle samples, the `c1` with the highest band energy flip to
/// active. Ties break by ascending (energy, example index); counts clamp to
/// the available pool sizes.
pub fn correct_labels(
    pseudo: &[ChannelLabels],
    energies: &[Vec<f64>],
    counts: &CorrectionCounts,
) -> Vec<ChannelLabels> {
    let mut out = pseudo.to_vec();
    for (k, &(c0, c1)) in counts.per_channel.iter().enumerate() {
        let mut active: Vec<(f64, usize)> = Vec::new();
        let mut idle: Vec<(f64, usize)> = Vec::new();
        for (i, y) in pseudo.iter().enumerate() {
            let pool = if y.get(k) { &mut active } else { &mut idle };
            pool.push((energies[i][k], i));
        }
        let by_energy_then_index = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        };
        active.sort_by(by_energy_then_index);
        idle.sort_by(by_energy_then_index);
        for &(_, i) in active.iter().take(c0) {
            out[i].set(k, false);
        }
        let promote = c1.min(idle.len());
        for &(_, i) in idle[idle.len() - promote..].iter() {
            out[i].set(k, true);
        }
    }
    out
}
