//! The federated round loop shared by every training variant.
//!
//! One engine drives supervised and semi-supervised runs, with or without
//! label-poisoning attacks, under any of the configured aggregation
//! defenses. Each round: sample clients, run local updates in parallel,
//! aggregate (optionally after vaccine filtering), optionally fine-tune on
//! the trusted dataset, and evaluate on the held-out test set.
//!
//! Determinism: every random decision draws from a stream keyed by the
//! federation seed plus purpose, round, and client id, so the loop produces
//! bit-identical results regardless of thread scheduling.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::attacks::{self, AttackKind, AttackSpec};
use crate::defense::{
    self, ClusterResult, DefenseConfig, DefenseKind, DetectionReport, VaccineSpec,
};
use crate::error::{Error, Result};
use crate::fl::{self, ClientUpdate, FLConfig, RoundReport};
use crate::model::{self, ArchSpec, ParamVector, TrainConfig, TrainExample};
use crate::rng::{self, derive_seed};
use crate::semiss::{self, SemiConfig};
use crate::signal::{features, FeatureMode, SpectrumExample};

/// How selected clients label their local data.
#[derive(Debug, Clone, PartialEq)]
pub enum Labeling {
    /// Clients train on their stored labels.
    Supervised,
    /// Clients pseudo-label with the global model; `correction` holds the
    /// energy-correction ratio, or `None` to disable the correction step.
    Semi {
        pretrain_epochs: usize,
        correction: Option<f64>,
    },
}

/// Full description of one training run.
#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub arch: ArchSpec,
    pub mode: FeatureMode,
    pub fl: FLConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub labeling: Labeling,
    /// Supervised epochs on the trusted dataset after each aggregation;
    /// 0 disables fine-tuning.
    pub fc_finetune_epochs: usize,
    pub defense: DefenseConfig,
    pub vaccine: Option<VaccineSpec>,
    pub attacks: Vec<AttackSpec>,
    pub shards: &'a [Vec<SpectrumExample>],
    /// Trusted labeled dataset at the fusion center.
    pub labeled: &'a [SpectrumExample],
    pub test: &'a [SpectrumExample],
}

/// Everything a run produces, kept in memory for reporting and assertions.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Global model distributed in round 1 (the pre-trained fusion-center
    /// model in semi-supervised runs).
    pub initial_global: ParamVector,
    pub final_params: ParamVector,
    pub rounds: Vec<RoundReport>,
    /// Per-round filter reports; present only under the vaccine defense.
    pub detections: Vec<DetectionReport>,
    /// Per-round clustering outcomes; `None` for rounds without filtering.
    pub clusters: Vec<Option<ClusterResult>>,
    /// Client updates of the final round, in selection order.
    pub last_updates: Vec<ClientUpdate>,
    pub malicious_ids: Vec<usize>,
    pub malicious_kind_by_id: BTreeMap<usize, AttackKind>,
    /// Mean attack success rate of the final model over the attacked
    /// channels, when an attack is configured and the metric is defined.
    pub final_asr: Option<f64>,
}

impl RunOutput {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map(|r| r.test_accuracy).unwrap_or(0.0)
    }

    /// First round whose test accuracy reaches `threshold`.
    pub fn rounds_to_accuracy(&self, threshold: f64) -> Option<usize> {
        self.rounds
            .iter()
            .find(|r| r.test_accuracy >= threshold)
            .map(|r| r.round)
    }

    pub fn mean_fnr_last(&self, window: usize) -> Option<f64> {
        mean_tail(&self.detections, window, |d| d.fnr)
    }

    pub fn mean_fpr_last(&self, window: usize) -> Option<f64> {
        mean_tail(&self.detections, window, |d| d.fpr)
    }
}

fn mean_tail(detections: &[DetectionReport], window: usize, f: impl Fn(&DetectionReport) -> f64) -> Option<f64> {
    if detections.is_empty() {
        return None;
    }
    let tail = &detections[detections.len().saturating_sub(window)..];
    Some(tail.iter().map(f).sum::<f64>() / tail.len() as f64)
}

/// Training-seed derivation for a selected client; exposed so client updates
/// can be reproduced standalone.
pub fn client_train_seed(fl_seed: u64, round: usize, client_id: usize) -> u64 {
    derive_seed(fl_seed, &[rng::keys::CLIENT_TRAIN, round as u64, client_id as u64])
}

/// Per-client working copy with features and energies precomputed.
struct ClientData {
    features: Vec<Vec<f64>>,
    energies: Vec<Vec<f64>>,
    /// Labels used by supervised training; poisoned for malicious clients.
    labels: Vec<Vec<bool>>,
    /// Clean ground truth for metrics.
    truth: Vec<Vec<bool>>,
    malicious: bool,
}

struct LocalResult {
    update: ClientUpdate,
    pseudo_correct: usize,
    pseudo_total: usize,
    corrections: Vec<(usize, usize)>,
}

fn to_train_examples(examples: &[SpectrumExample], mode: FeatureMode) -> Vec<TrainExample> {
    examples
        .iter()
        .map(|ex| TrainExample {
            features: features(ex, mode),
            labels: ex.labels.bits().to_vec(),
        })
        .collect()
}

fn validate_spec(spec: &RunSpec) -> Result<()> {
    spec.arch.validate()?;
    spec.fl.validate()?;
    let channels = spec.arch.outputs;
    if spec.shards.len() != spec.fl.num_clients {
        return Err(Error::Config(format!(
            "{} shards for {} clients",
            spec.shards.len(),
            spec.fl.num_clients
        )));
    }
    if let Some(empty) = spec.shards.iter().position(|s| s.is_empty()) {
        return Err(Error::Config(format!("client {empty} has an empty shard")));
    }
    if spec.test.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    if !(spec.learning_rate >= 0.0 && spec.learning_rate.is_finite()) {
        return Err(Error::Config("learning_rate must be finite and >= 0".into()));
    }
    if spec.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut total_ratio = 0.0;
    for attack in &spec.attacks {
        attack.validate(channels)?;
        total_ratio += attack.malicious_ratio;
    }
    if total_ratio > 1.0 {
        return Err(Error::Config(format!(
            "combined malicious ratio {total_ratio} exceeds 1"
        )));
    }
    spec.defense.validate(spec.fl.num_selected())?;
    match spec.defense.kind {
        DefenseKind::SsVax => {
            let vaccine = spec
                .vaccine
                .as_ref()
                .ok_or_else(|| Error::Config("ssvax defense requires a vaccine".into()))?;
            vaccine.validate(channels)?;
        }
        _ => {
            if spec.vaccine.is_some() {
                return Err(Error::Config(
                    "vaccine configured without the ssvax defense".into(),
                ));
            }
        }
    }
    let needs_labeled = matches!(spec.labeling, Labeling::Semi { .. })
        || spec.fc_finetune_epochs > 0
        || matches!(spec.defense.kind, DefenseKind::FlTrust | DefenseKind::SsVax);
    if needs_labeled && spec.labeled.is_empty() {
        return Err(Error::Config(
            "this configuration needs a non-empty trusted labeled dataset".into(),
        ));
    }
    Ok(())
}

/// Assigns malicious ids per attack spec. The first spec samples from the
/// full population; later specs sample from the clients not yet assigned.
fn assign_attackers(
    attacks: &[AttackSpec],
    num_clients: usize,
) -> (Vec<usize>, BTreeMap<usize, usize>) {
    let mut by_id: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, attack) in attacks.iter().enumerate() {
        let count = (num_clients as f64 * attack.malicious_ratio).floor() as usize;
        if i == 0 {
            for id in attacks::assign_malicious(num_clients, attack.malicious_ratio, attack.seed) {
                by_id.insert(id, 0);
            }
        } else {
            let remaining: Vec<usize> =
                (0..num_clients).filter(|id| !by_id.contains_key(id)).collect();
            let mut rng = rng::Rng64::from_keys(
                attack.seed,
                &[rng::keys::MALICIOUS, i as u64],
            );
            for idx in rng.sample_indices(remaining.len(), count.min(remaining.len())) {
                by_id.insert(remaining[idx], i);
            }
        }
    }
    let ids: Vec<usize> = by_id.keys().cloned().collect();
    (ids, by_id)
}

fn build_client_data(spec: &RunSpec, attacker_spec: &BTreeMap<usize, usize>) -> Vec<ClientData> {
    (0..spec.fl.num_clients)
        .into_par_iter()
        .map(|id| {
            let shard = &spec.shards[id];
            let truth: Vec<Vec<bool>> = shard.iter().map(|ex| ex.labels.bits().to_vec()).collect();
            let labels = match attacker_spec.get(&id) {
                Some(&spec_idx) => {
                    let mut poisoned = shard.clone();
                    attacks::poison_shard(&mut poisoned, &spec.attacks[spec_idx], id);
                    poisoned.iter().map(|ex| ex.labels.bits().to_vec()).collect()
                }
                None => truth.clone(),
            };
            ClientData {
                features: shard.iter().map(|ex| features(ex, spec.mode)).collect(),
                energies: shard.iter().map(|ex| ex.band_energy.clone()).collect(),
                labels,
                truth,
                malicious: attacker_spec.contains_key(&id),
            }
        })
        .collect()
}

fn run_client(
    spec: &RunSpec,
    client: &ClientData,
    id: usize,
    round: usize,
    global: &ParamVector,
    fc_error: Option<&[f64]>,
) -> Result<LocalResult> {
    let channels = spec.arch.outputs;
    let mut corrections = vec![(0usize, 0usize); channels];
    let mut pseudo_correct = 0usize;
    let mut pseudo_total = 0usize;

    let train_labels: Vec<Vec<bool>> = match (&spec.labeling, client.malicious) {
        // Malicious clients train straight on their poisoned labels; an
        // adversary would not honestly pseudo-label and self-correct.
        (Labeling::Supervised, _) | (Labeling::Semi { .. }, true) => client.labels.clone(),
        (Labeling::Semi { correction, .. }, false) => {
            let pseudo = semiss::pseudo_label(&spec.arch, global, &client.features)?;
            let counts = match (correction, fc_error) {
                (Some(ratio), Some(err)) => semiss::correction_counts(err, *ratio, &pseudo),
                _ => semiss::CorrectionCounts::zeros(channels),
            };
            for (k, &(c0, c1)) in counts.per_channel.iter().enumerate() {
                corrections[k].0 += c0;
                corrections[k].1 += c1;
            }
            let corrected = semiss::correct_labels(&pseudo, &client.energies, &counts);
            for (labels, truth) in corrected.iter().zip(&client.truth) {
                for (a, b) in labels.bits().iter().zip(truth) {
                    pseudo_total += 1;
                    pseudo_correct += usize::from(a == b);
                }
            }
            corrected.iter().map(|y| y.bits().to_vec()).collect()
        }
    };

    let data: Vec<TrainExample> = client
        .features
        .iter()
        .zip(&train_labels)
        .map(|(x, y)| TrainExample {
            features: x.clone(),
            labels: y.clone(),
        })
        .collect();
    let cfg = TrainConfig {
        learning_rate: spec.learning_rate,
        batch_size: spec.batch_size,
        epochs: spec.fl.local_epochs,
        seed: client_train_seed(spec.fl.seed, round, id),
    };
    let params = fl::local_update(&spec.arch, global, &data, &cfg)?;
    Ok(LocalResult {
        update: ClientUpdate {
            client_id: id,
            round,
            params,
            is_malicious: client.malicious,
        },
        pseudo_correct,
        pseudo_total,
        corrections,
    })
}

/// Mean attack success rate of `params` over the attacked channels. Label
/// directions follow the attack kind; the flip and random kinds average both
/// directions. Channels without qualifying examples are skipped.
fn attack_success(
    arch: &ArchSpec,
    params: &ParamVector,
    test: &[TrainExample],
    attacks_list: &[AttackSpec],
) -> Option<f64> {
    let mut terms = Vec::new();
    for attack in attacks_list {
        let directions: &[(bool, bool)] = match attack.kind {
            AttackKind::Flip | AttackKind::Random => &[(false, true), (true, false)],
            AttackKind::SetBusy => &[(false, true)],
            AttackKind::SetIdle => &[(true, false)],
        };
        for &channel in &attack.targeted_channels {
            for &(y_s, y_t) in directions {
                if let Ok(rate) = attacks::asr(arch, params, test, y_s, y_t, channel) {
                    terms.push(rate);
                }
            }
        }
    }
    if terms.is_empty() {
        None
    } else {
        Some(terms.iter().sum::<f64>() / terms.len() as f64)
    }
}

/// Executes the full round loop described by `spec`.
pub fn run(spec: &RunSpec) -> Result<RunOutput> {
    validate_spec(spec)?;
    let labeled_train = to_train_examples(spec.labeled, spec.mode);
    let test_train = to_train_examples(spec.test, spec.mode);

    let (malicious_ids, attacker_spec) = assign_attackers(&spec.attacks, spec.fl.num_clients);
    let malicious_kind_by_id: BTreeMap<usize, AttackKind> = attacker_spec
        .iter()
        .map(|(&id, &i)| (id, spec.attacks[i].kind))
        .collect();
    let clients = build_client_data(spec, &attacker_spec);

    let mut global = model::init_params(&spec.arch, spec.fl.seed);
    if let Labeling::Semi { pretrain_epochs, .. } = spec.labeling {
        let cfg = TrainConfig {
            learning_rate: spec.learning_rate,
            batch_size: spec.batch_size,
            epochs: pretrain_epochs,
            seed: derive_seed(spec.fl.seed, &[rng::keys::FC_PRETRAIN]),
        };
        global = semiss::fc_update(&spec.arch, &global, &labeled_train, &cfg)?;
    }
    let initial_global = global.clone();

    let is_semi = matches!(spec.labeling, Labeling::Semi { .. });
    let mut rounds = Vec::with_capacity(spec.fl.rounds);
    let mut detections = Vec::new();
    let mut clusters = Vec::new();
    let mut last_updates = Vec::new();

    for round in 1..=spec.fl.rounds {
        let selected = fl::select_clients(round, &spec.fl);
        let fc_error: Option<Vec<f64>> = if is_semi {
            Some(model::evaluate(&spec.arch, &global, &labeled_train)?.per_channel_error())
        } else {
            None
        };

        let locals: Vec<LocalResult> = selected
            .par_iter()
            .map(|&id| run_client(spec, &clients[id], id, round, &global, fc_error.as_deref()))
            .collect::<Result<_>>()?;

        let update_params: Vec<ParamVector> =
            locals.iter().map(|l| l.update.params.clone()).collect();
        let aggregated: Option<ParamVector> = match spec.defense.kind {
            DefenseKind::None => Some(fl::fedavg(&update_params)?),
            DefenseKind::Median => Some(defense::median_agg(&update_params)?),
            DefenseKind::TrMean => Some(defense::trmean_agg(
                &update_params,
                spec.defense.trmean_trim,
            )?),
            DefenseKind::FlTrust => {
                let cfg = TrainConfig {
                    learning_rate: spec.learning_rate,
                    batch_size: spec.batch_size,
                    epochs: spec.fl.local_epochs,
                    seed: derive_seed(spec.fl.seed, &[rng::keys::SERVER_UPDATE, round as u64]),
                };
                let server = semiss::fc_update(&spec.arch, &global, &labeled_train, &cfg)?;
                Some(defense::fltrust_agg(&update_params, &server, &global)?)
            }
            DefenseKind::SsVax => {
                let vaccine = spec.vaccine.as_ref().expect("validated");
                let vaccines = defense::distill_vaccines(
                    &spec.arch,
                    &global,
                    spec.labeled,
                    spec.mode,
                    vaccine,
                    spec.learning_rate,
                    spec.batch_size,
                    derive_seed(spec.fl.seed, &[rng::keys::VACCINE, round as u64]),
                )?;
                let updates: Vec<ClientUpdate> = locals.iter().map(|l| l.update.clone()).collect();
                let outcome = defense::ssvax_filter(
                    &spec.arch,
                    &updates,
                    &vaccines,
                    &global,
                    spec.defense.cluster_metric,
                    &labeled_train,
                    round,
                )?;
                let kept_params: Vec<ParamVector> = outcome
                    .kept
                    .iter()
                    .map(|&i| update_params[i].clone())
                    .collect();
                detections.push(outcome.detection);
                clusters.push(Some(outcome.cluster));
                if kept_params.is_empty() {
                    // Every update clustered with a vaccine: skip aggregation.
                    None
                } else {
                    Some(fl::fedavg(&kept_params)?)
                }
            }
        };
        if spec.defense.kind != DefenseKind::SsVax {
            clusters.push(None);
        }
        if let Some(new_global) = aggregated {
            global = new_global;
        }

        if spec.fc_finetune_epochs > 0 {
            let cfg = TrainConfig {
                learning_rate: spec.learning_rate,
                batch_size: spec.batch_size,
                epochs: spec.fc_finetune_epochs,
                seed: derive_seed(spec.fl.seed, &[rng::keys::FC_FINETUNE, round as u64]),
            };
            global = semiss::fc_update(&spec.arch, &global, &labeled_train, &cfg)?;
        }

        let eval = model::evaluate(&spec.arch, &global, &test_train)?;
        let malicious_selected = selected
            .iter()
            .filter(|id| attacker_spec.contains_key(id))
            .count();
        let (corrections_applied, pseudo_label_accuracy) = if is_semi {
            let mut totals = vec![(0usize, 0usize); spec.arch.outputs];
            let (mut correct, mut total) = (0usize, 0usize);
            for l in &locals {
                for (t, c) in totals.iter_mut().zip(&l.corrections) {
                    t.0 += c.0;
                    t.1 += c.1;
                }
                correct += l.pseudo_correct;
                total += l.pseudo_total;
            }
            let acc = (total > 0).then(|| correct as f64 / total as f64);
            (Some(totals), acc)
        } else {
            (None, None)
        };
        rounds.push(RoundReport {
            round,
            test_accuracy: eval.accuracy,
            per_channel_accuracy: eval.per_channel_accuracy,
            selected_ids: selected.clone(),
            malicious_selected_ratio: malicious_selected as f64 / selected.len() as f64,
            fc_error_rates: fc_error,
            corrections_applied,
            pseudo_label_accuracy,
        });
        if round == spec.fl.rounds {
            last_updates = locals.into_iter().map(|l| l.update).collect();
        }
    }

    let final_asr = if spec.attacks.is_empty() {
        None
    } else {
        attack_success(&spec.arch, &global, &test_train, &spec.attacks)
    };

    Ok(RunOutput {
        initial_global,
        final_params: global,
        rounds,
        detections,
        clusters,
        last_updates,
        malicious_ids,
        malicious_kind_by_id,
        final_asr,
    })
}

/// Plain supervised federated training: select, local update, FedAvg.
pub fn run_supervised_fl(
    arch: &ArchSpec,
    mode: FeatureMode,
    fl_cfg: &FLConfig,
    learning_rate: f64,
    batch_size: usize,
    shards: &[Vec<SpectrumExample>],
    test: &[SpectrumExample],
) -> Result<RunOutput> {
    run(&RunSpec {
        arch: arch.clone(),
        mode,
        fl: fl_cfg.clone(),
        learning_rate,
        batch_size,
        labeling: Labeling::Supervised,
        fc_finetune_epochs: 0,
        defense: DefenseConfig::default(),
        vaccine: None,
        attacks: Vec::new(),
        shards,
        labeled: &[],
        test,
    })
}

/// Semi-supervised training with pseudo-labeling, energy correction, and
/// per-round fusion-center fine-tuning.
pub fn run_semiss(
    arch: &ArchSpec,
    mode: FeatureMode,
    semi: &SemiConfig,
    learning_rate: f64,
    batch_size: usize,
    shards: &[Vec<SpectrumExample>],
    labeled: &[SpectrumExample],
    test: &[SpectrumExample],
) -> Result<RunOutput> {
    semi.validate()?;
    run(&RunSpec {
        arch: arch.clone(),
        mode,
        fl: semi.fl.clone(),
        learning_rate,
        batch_size,
        labeling: Labeling::Semi {
            pretrain_epochs: semi.fc_pretrain_epochs,
            correction: Some(semi.correction_ratio),
        },
        fc_finetune_epochs: semi.fc_finetune_epochs,
        defense: DefenseConfig::default(),
        vaccine: None,
        attacks: Vec::new(),
        shards,
        labeled,
        test,
    })
}

/// Semi-supervised training under attack with the vaccine filter in front of
/// aggregation. `defense.kind` other than `ssvax` degrades gracefully (the
/// filter becomes a pass-through or a baseline aggregator), which is how the
/// no-op equivalence with [`run_semiss`] is checked.
#[allow(clippy::too_many_arguments)]
pub fn run_ssvax(
    arch: &ArchSpec,
    mode: FeatureMode,
    semi: &SemiConfig,
    learning_rate: f64,
    batch_size: usize,
    shards: &[Vec<SpectrumExample>],
    labeled: &[SpectrumExample],
    test: &[SpectrumExample],
    attacks_list: Vec<AttackSpec>,
    defense_cfg: DefenseConfig,
    vaccine: Option<VaccineSpec>,
) -> Result<RunOutput> {
    semi.validate()?;
    run(&RunSpec {
        arch: arch.clone(),
        mode,
        fl: semi.fl.clone(),
        learning_rate,
        batch_size,
        labeling: Labeling::Semi {
            pretrain_epochs: semi.fc_pretrain_epochs,
            correction: Some(semi.correction_ratio),
        },
        fc_finetune_epochs: semi.fc_finetune_epochs,
        defense: defense_cfg,
        vaccine,
        attacks: attacks_list,
        shards,
        labeled,
        test,
    })
}
