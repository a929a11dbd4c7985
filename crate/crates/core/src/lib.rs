//! Deterministic federated spectrum-sensing simulator.
//!
//! The crate models a fusion center coordinating many secondary users that
//! sense a multi-channel radio band. It provides:
//!
//! - synthetic multi-channel IQ dataset generation with energy features
//!   ([`signal`]),
//! - a small multi-label 1-D CNN trained with exact gradients ([`model`]),
//! - cross-device federated training with client sampling and FedAvg
//!   ([`fl`]),
//! - semi-supervised training with pseudo-labels corrected by per-channel
//!   signal energy ([`semiss`]),
//! - label-poisoning attacks and attack-success metrics ([`attacks`]),
//! - robust aggregation baselines and a vaccine-based update filter built on
//!   fixed-centroid k-means ([`defense`]),
//! - an experiment harness with presets, config files, and JSONL/CSV
//!   reporting ([`harness`]).
//!
//! All randomness flows from a master seed through keyed sub-streams
//! ([`rng`]), so every run is reproducible byte-for-byte.

pub mod attacks;
pub mod defense;
pub mod engine;
pub mod error;
pub mod fl;
pub mod harness;
pub mod model;
pub mod rng;
pub mod semiss;
pub mod signal;

pub use attacks::{AttackKind, AttackSpec};
pub use defense::{
    ClusterMetric, ClusterResult, DefenseConfig, DefenseKind, DetectionReport, VaccineSpec,
};
pub use engine::{
    run, run_semiss, run_ssvax, run_supervised_fl, Labeling, RunOutput, RunSpec,
};
pub use error::{Error, Result};
pub use fl::{ClientUpdate, FLConfig, RoundReport};
pub use harness::{ExperimentConfig, Preset};
pub use model::{ArchSpec, EvalReport, ParamVector, TrainConfig, TrainExample};
pub use semiss::{CorrectionCounts, SemiConfig};
pub use signal::{
    ChannelLabels, FeatureMode, GeneratorConfig, IQWindow, SpectrumExample,
};
