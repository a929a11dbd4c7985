//! Executes one experiment end to end: resolve the dataset, carve the
//! trusted labeled set, shard the rest across clients, drive the engine, and
//! write the report files.
//!
//! Artifacts per run directory: `rounds.jsonl` (one report per round),
//! `detection.jsonl` (vaccine-defense rounds only), `params.fssw` (final
//! global model), and one row appended to `summary.csv`.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::attacks::AttackSpec;
use crate::defense::DefenseKind;
use crate::engine::{self, Labeling, RunOutput, RunSpec};
use crate::error::{Error, Result};
use crate::model::{write_params, ArchSpec};
use crate::rng::{self, derive_seed};
use crate::signal::{generate_dataset, read_dataset, SpectrumExample};

use super::config::{DatasetConfig, ExperimentConfig};

pub const SUMMARY_HEADER: &str =
    "name,final_accuracy,rounds_to_99,mean_fnr_last20,mean_fpr_last20,asr";

/// One `summary.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub final_accuracy: f64,
    pub rounds_to_99: Option<usize>,
    pub mean_fnr_last20: Option<f64>,
    pub mean_fpr_last20: Option<f64>,
    pub asr: Option<f64>,
}

impl RunSummary {
    pub fn from_output(name: &str, output: &RunOutput) -> Self {
        Self {
            name: name.to_string(),
            final_accuracy: output.final_accuracy(),
            rounds_to_99: output.rounds_to_accuracy(0.99),
            mean_fnr_last20: output.mean_fnr_last(20),
            mean_fpr_last20: output.mean_fpr_last(20),
            asr: output.final_asr,
        }
    }

    pub fn to_csv_row(&self) -> String {
        fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{}",
            self.name,
            self.final_accuracy,
            opt(&self.rounds_to_99),
            opt(&self.mean_fnr_last20),
            opt(&self.mean_fpr_last20),
            opt(&self.asr),
        )
    }
}

/// Result of [`run_experiment`]: the in-memory output plus where the files
/// went.
#[derive(Debug)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub output: RunOutput,
    pub dir: PathBuf,
}

/// The pool split into fusion-center and client-side data.
struct Split {
    labeled: Vec<SpectrumExample>,
    shards: Vec<Vec<SpectrumExample>>,
    test: Vec<SpectrumExample>,
    window: usize,
    channels: usize,
}

fn resolve_data(cfg: &ExperimentConfig) -> Result<Split> {
    let (channels, pool, test) = match &cfg.dataset {
        DatasetConfig::Generate { .. } => {
            let gen = cfg.generator().expect("generate variant");
            let pool = generate_dataset(&gen)?;
            let test_gen = crate::signal::GeneratorConfig {
                seed: derive_seed(gen.seed, &[rng::keys::TEST_SET]),
                num_examples: cfg.test_size,
                ..gen
            };
            let test = generate_dataset(&test_gen)?;
            (gen.channels, pool, test)
        }
        DatasetConfig::File(path) => {
            let (channels, mut pool) = read_dataset(path)?;
            // File-backed runs carve the test set off the tail.
            let test_size = cfg.test_size.min(pool.len() / 5);
            if test_size == 0 {
                return Err(Error::Config(format!(
                    "dataset {} too small to carve a test set",
                    path.display()
                )));
            }
            let test = pool.split_off(pool.len() - test_size);
            (channels, pool, test)
        }
    };
    let window = pool
        .first()
        .map(|ex| ex.iq.len())
        .ok_or_else(|| Error::Config("empty dataset".into()))?;

    // The trusted labeled set comes off the head of the pool, optionally
    // restricted to examples whose activity stays within the first
    // `labeled_classes` channels; the remainder goes to the clients.
    let mut labeled = Vec::with_capacity(cfg.semi.labeled_size);
    let mut rest = Vec::with_capacity(pool.len());
    for ex in pool {
        let eligible = match cfg.semi.labeled_classes {
            Some(m) => ex
                .labels
                .bits()
                .iter()
                .enumerate()
                .all(|(ch, &active)| !active || ch < m),
            None => true,
        };
        if labeled.len() < cfg.semi.labeled_size && eligible {
            labeled.push(ex);
        } else {
            rest.push(ex);
        }
    }
    if labeled.len() < cfg.semi.labeled_size {
        return Err(Error::Config(format!(
            "only {} of {} requested trusted examples available",
            labeled.len(),
            cfg.semi.labeled_size
        )));
    }
    if rest.len() < cfg.fl.num_clients {
        return Err(Error::Config(format!(
            "{} examples cannot cover {} clients",
            rest.len(),
            cfg.fl.num_clients
        )));
    }
    let shards = crate::fl::split_shards(&rest, cfg.fl.num_clients);
    Ok(Split {
        labeled,
        shards,
        test,
        window,
        channels,
    })
}

/// Expands the attack options into one spec per kind; the malicious ratio
/// splits evenly across kinds.
fn expand_attacks(cfg: &ExperimentConfig, channels: usize) -> Vec<AttackSpec> {
    if !cfg.has_attack() {
        return Vec::new();
    }
    let per_kind_ratio = cfg.attack.malicious_ratio / cfg.attack.kinds.len() as f64;
    let seed = cfg.attack.seed.unwrap_or(cfg.master_seed);
    let targets = cfg
        .attack
        .target_channels
        .clone()
        .unwrap_or_else(|| (0..channels).collect());
    cfg.attack
        .kinds
        .iter()
        .map(|&kind| AttackSpec {
            kind,
            targeted_channels: targets.clone(),
            malicious_ratio: per_kind_ratio,
            seed,
        })
        .collect()
}

fn build_vaccine(cfg: &ExperimentConfig, channels: usize) -> Option<crate::defense::VaccineSpec> {
    if !cfg.has_vaccine() {
        return None;
    }
    Some(crate::defense::VaccineSpec {
        kinds: cfg.vaccine.kinds.clone(),
        targeted_channels: cfg
            .vaccine
            .target_channels
            .clone()
            .unwrap_or_else(|| (0..channels).collect()),
        per_kind: cfg.vaccine.per_kind,
        epochs: cfg.vaccine.epochs,
    })
}

/// Runs the engine for `cfg` without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let split = resolve_data(cfg)?;
    let arch = ArchSpec {
        input_len: split.window,
        input_rows: cfg.feature_mode.input_rows(),
        conv_channels: cfg.arch.conv_channels,
        kernel: cfg.arch.kernel,
        hidden: cfg.arch.hidden,
        outputs: split.channels,
    };
    let labeling = if cfg.semi.enabled {
        Labeling::Semi {
            pretrain_epochs: cfg.semi.pretrain_epochs,
            correction: Some(cfg.semi.correction_ratio),
        }
    } else {
        Labeling::Supervised
    };
    // The vaccine pipeline fine-tunes on the trusted set after every
    // aggregation even in supervised runs; the other defenses only touch the
    // aggregation step.
    let fc_finetune_epochs = if cfg.semi.enabled || cfg.defense.kind == DefenseKind::SsVax {
        cfg.semi.finetune_epochs
    } else {
        0
    };
    let mut fl = cfg.fl.clone();
    fl.seed = cfg.master_seed;
    let spec = RunSpec {
        arch,
        mode: cfg.feature_mode,
        fl,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        labeling,
        fc_finetune_epochs,
        defense: cfg.defense.clone(),
        vaccine: build_vaccine(cfg, split.channels),
        attacks: expand_attacks(cfg, split.channels),
        shards: &split.shards,
        labeled: &split.labeled,
        test: &split.test,
    };
    match worker_pool()? {
        Some(pool) => pool.install(|| engine::run(&spec)),
        None => engine::run(&spec),
    }
}

/// Honors the FEDSPECTRUM_THREADS cap when set.
fn worker_pool() -> Result<Option<rayon::ThreadPool>> {
    match std::env::var("FEDSPECTRUM_THREADS") {
        Ok(value) => {
            let n: usize = value.parse().map_err(|_| {
                Error::Config(format!("FEDSPECTRUM_THREADS=`{value}` is not a number"))
            })?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(Some(pool))
        }
        Err(_) => Ok(None),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Appends a summary row, creating the file with its header when absent.
pub fn append_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let needs_header = file.metadata().map(|m| m.len() == 0).unwrap_or(true);
    let mut text = String::new();
    if needs_header {
        text.push_str(SUMMARY_HEADER);
        text.push('\n');
    }
    text.push_str(&summary.to_csv_row());
    text.push('\n');
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Runs the experiment and writes its artifacts under `dir`. The summary row
/// goes to `summary_path` (usually `<parent>/summary.csv`).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    dir: &Path,
    summary_path: &Path,
) -> Result<RunArtifacts> {
    let output = execute(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut rounds_text = String::new();
    for report in &output.rounds {
        rounds_text.push_str(
            &serde_json::to_string(report)
                .map_err(|e| Error::Argument(format!("serialize round report: {e}")))?,
        );
        rounds_text.push('\n');
    }
    write_text(&dir.join("rounds.jsonl"), &rounds_text)?;

    if !output.detections.is_empty() {
        let mut det_text = String::new();
        for report in &output.detections {
            det_text.push_str(
                &serde_json::to_string(report)
                    .map_err(|e| Error::Argument(format!("serialize detection report: {e}")))?,
            );
            det_text.push('\n');
        }
        write_text(&dir.join("detection.jsonl"), &det_text)?;
    }

    write_params(&dir.join("params.fssw"), &output.final_params)?;

    let summary = RunSummary::from_output(&cfg.name, &output);
    append_summary(summary_path, &summary)?;

    Ok(RunArtifacts {
        summary,
        output,
        dir: dir.to_path_buf(),
    })
}
