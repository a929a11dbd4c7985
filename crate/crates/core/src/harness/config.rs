//! Experiment configuration: a flat `key = value` text format with
//! `[section]` headers, plus validation and canonical rendering.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::defense::{DefenseConfig, DefenseKind};
use crate::error::{Error, Result};
use crate::fl::FLConfig;
use crate::signal::{FeatureMode, GeneratorConfig};

/// Source of the sensing-window pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetConfig {
    Generate {
        channels: usize,
        /// Window size; `None` picks the default for the channel count.
        window: Option<usize>,
        snr_db: f64,
        activity_prob: f64,
        num_examples: usize,
        /// Generator seed; `None` derives it from the master seed.
        seed: Option<u64>,
    },
    File(PathBuf),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Generate {
            channels: 4,
            window: None,
            snr_db: 10.0,
            activity_prob: 0.5,
            num_examples: 10_000,
            seed: None,
        }
    }
}

/// Smallest power of two >= max(32, 4 * channels), so every channel owns at
/// least four FFT bins.
pub fn default_window(channels: usize) -> usize {
    let floor = 32usize.max(4 * channels);
    floor.next_power_of_two()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchOptions {
    pub conv_channels: usize,
    pub kernel: usize,
    pub hidden: usize,
}

impl Default for ArchOptions {
    fn default() -> Self {
        Self {
            conv_channels: 8,
            kernel: 5,
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiOptions {
    pub enabled: bool,
    pub labeled_size: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub correction_ratio: f64,
    /// Restrict the trusted dataset to examples whose active channels all
    /// fall below this bound; `None` keeps the natural mix.
    pub labeled_classes: Option<usize>,
}

impl Default for SemiOptions {
    fn default() -> Self {
        Self {
            enabled: false,
            labeled_size: 200,
            pretrain_epochs: 100,
            finetune_epochs: 2,
            correction_ratio: 0.3,
            labeled_classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOptions {
    /// One campaign per kind; the malicious ratio splits evenly across them.
    pub kinds: Vec<AttackKind>,
    /// `None` targets every channel.
    pub target_channels: Option<Vec<usize>>,
    pub malicious_ratio: f64,
    pub seed: Option<u64>,
}

impl Default for AttackOptions {
    fn default() -> Self {
        Self {
            kinds: Vec::new(),
            target_channels: None,
            malicious_ratio: 0.3,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaccineOptions {
    pub kinds: Vec<AttackKind>,
    pub target_channels: Option<Vec<usize>>,
    pub epochs: usize,
    pub per_kind: usize,
}

impl Default for VaccineOptions {
    fn default() -> Self {
        Self {
            kinds: Vec::new(),
            target_channels: None,
            epochs: 1,
            per_kind: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    pub arch: ArchOptions,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub fl: FLConfig,
    pub semi: SemiOptions,
    pub attack: AttackOptions,
    pub defense: DefenseConfig,
    pub vaccine: VaccineOptions,
    pub feature_mode: FeatureMode,
    pub master_seed: u64,
    pub test_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            dataset: DatasetConfig::default(),
            arch: ArchOptions::default(),
            learning_rate: 1e-3,
            batch_size: 32,
            fl: FLConfig::default(),
            semi: SemiOptions::default(),
            attack: AttackOptions::default(),
            defense: DefenseConfig::default(),
            vaccine: VaccineOptions::default(),
            feature_mode: FeatureMode::Freq,
            master_seed: 1,
            test_size: 2000,
        }
    }
}

impl ExperimentConfig {
    pub fn has_attack(&self) -> bool {
        !self.attack.kinds.is_empty()
    }

    pub fn has_vaccine(&self) -> bool {
        !self.vaccine.kinds.is_empty()
    }

    pub fn channels(&self) -> Result<usize> {
        match &self.dataset {
            DatasetConfig::Generate { channels, .. } => Ok(*channels),
            DatasetConfig::File(path) => {
                // The file header carries K; peek at it without loading.
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let header = text.lines().next().unwrap_or("");
                let fields: Vec<&str> = header.split_whitespace().collect();
                if fields.len() != 4 || fields[0] != "FSSD1" {
                    return Err(Error::Config(format!(
                        "{} is not an FSSD1 dataset",
                        path.display()
                    )));
                }
                fields[1]
                    .parse()
                    .map_err(|_| Error::Config("bad channel count in dataset header".into()))
            }
        }
    }

    /// Generator settings with defaults resolved against the master seed.
    pub fn generator(&self) -> Option<GeneratorConfig> {
        match &self.dataset {
            DatasetConfig::Generate {
                channels,
                window,
                snr_db,
                activity_prob,
                num_examples,
                seed,
            } => Some(GeneratorConfig {
                channels: *channels,
                window: window.unwrap_or_else(|| default_window(*channels)),
                snr_db: *snr_db,
                activity_prob: *activity_prob,
                seed: seed.unwrap_or(self.master_seed),
                num_examples: *num_examples,
            }),
            DatasetConfig::File(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(',') || self.name.contains('\n') {
            return Err(Error::Config(format!(
                "run name `{}` must be non-empty without commas",
                self.name
            )));
        }
        if let Some(gen) = self.generator() {
            gen.validate()?;
            let reserved = self.semi.labeled_size + self.fl.num_clients;
            if gen.num_examples < reserved {
                return Err(Error::Config(format!(
                    "num_examples {} cannot cover labeled_size {} plus one example per client",
                    gen.num_examples, self.semi.labeled_size
                )));
            }
        }
        self.fl.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.semi.labeled_size == 0 {
            return Err(Error::Config("labeled_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.semi.correction_ratio) {
            return Err(Error::Config(format!(
                "correction_ratio {} outside [0, 1]",
                self.semi.correction_ratio
            )));
        }
        if self.test_size == 0 {
            return Err(Error::Config("test_size must be >= 1".into()));
        }
        self.defense.validate(self.fl.num_selected())?;
        if self.defense.kind == DefenseKind::SsVax && !self.has_vaccine() {
            return Err(Error::Config(
                "defense.kind = ssvax requires a vaccine section".into(),
            ));
        }
        if self.has_vaccine() && self.defense.kind != DefenseKind::SsVax {
            return Err(Error::Config(
                "vaccine section requires defense.kind = ssvax".into(),
            ));
        }
        if self.has_attack() && !(0.0..=1.0).contains(&self.attack.malicious_ratio) {
            return Err(Error::Config(format!(
                "malicious_ratio {} outside [0, 1]",
                self.attack.malicious_ratio
            )));
        }
        if let Ok(channels) = self.channels() {
            let check_channels = |list: &Option<Vec<usize>>, what: &str| -> Result<()> {
                if let Some(chs) = list {
                    if chs.is_empty() {
                        return Err(Error::Config(format!("{what} channel list is empty")));
                    }
                    if let Some(&bad) = chs.iter().find(|&&c| c >= channels) {
                        return Err(Error::Config(format!(
                            "{what} channel {bad} out of range (K = {channels})"
                        )));
                    }
                }
                Ok(())
            };
            if self.has_attack() {
                check_channels(&self.attack.target_channels, "attack")?;
            }
            if self.has_vaccine() {
                check_channels(&self.vaccine.target_channels, "vaccine")?;
            }
            if let Some(m) = self.semi.labeled_classes {
                if m == 0 || m > channels {
                    return Err(Error::Config(format!(
                        "labeled_classes {m} outside 1..={channels}"
                    )));
                }
            }
        }
        Ok(())
    }
}

// ── Parsing ─────────────────────────────────────────────────────────────────

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_usize(value: &str, line: usize, key: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| parse_err(line, format!("bad integer for {key}: `{value}`")))
}

fn parse_u64(value: &str, line: usize, key: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| parse_err(line, format!("bad integer for {key}: `{value}`")))
}

fn parse_f64(value: &str, line: usize, key: &str) -> Result<f64> {
    match value {
        "inf" | "+inf" => Ok(f64::INFINITY),
        _ => value
            .parse()
            .map_err(|_| parse_err(line, format!("bad number for {key}: `{value}`"))),
    }
}

fn parse_bool(value: &str, line: usize, key: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(parse_err(line, format!("bad bool for {key}: `{value}`"))),
    }
}

fn parse_kinds(value: &str, line: usize) -> Result<Vec<AttackKind>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<AttackKind>()
                .map_err(|e| parse_err(line, e.to_string()))
        })
        .collect()
}

fn parse_channel_list(value: &str, line: usize) -> Result<Option<Vec<usize>>> {
    if value == "all" {
        return Ok(None);
    }
    let list: Vec<usize> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| parse_err(line, format!("bad channel `{s}`")))
        })
        .collect::<Result<_>>()?;
    Ok(Some(list))
}

/// Parses the `key = value` config format. Unknown sections or keys are
/// errors carrying the offending line number; missing keys keep their
/// documented defaults, so the empty string parses to the default config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut section = String::new();
    let mut dataset_path: Option<PathBuf> = None;
    // Generation fields collected independently so `path` can override.
    let (mut channels, mut window, mut snr_db, mut activity, mut count, mut ds_seed) =
        (4usize, None::<usize>, 10.0f64, 0.5f64, 10_000usize, None::<u64>);

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line_no, "unterminated section header"))?
                .trim();
            match name {
                "dataset" | "arch" | "train" | "fl" | "semi" | "attack" | "defense"
                | "vaccine" | "run" => section = name.to_string(),
                other => return Err(parse_err(line_no, format!("unknown section `[{other}]`"))),
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        match (section.as_str(), key) {
            ("dataset", "path") => dataset_path = Some(PathBuf::from(value)),
            ("dataset", "channels") => channels = parse_usize(value, line_no, key)?,
            ("dataset", "window") => window = Some(parse_usize(value, line_no, key)?),
            ("dataset", "snr_db") => snr_db = parse_f64(value, line_no, key)?,
            ("dataset", "activity_prob") => activity = parse_f64(value, line_no, key)?,
            ("dataset", "num_examples") => count = parse_usize(value, line_no, key)?,
            ("dataset", "seed") => ds_seed = Some(parse_u64(value, line_no, key)?),
            ("arch", "conv_channels") => cfg.arch.conv_channels = parse_usize(value, line_no, key)?,
            ("arch", "kernel") => cfg.arch.kernel = parse_usize(value, line_no, key)?,
            ("arch", "hidden") => cfg.arch.hidden = parse_usize(value, line_no, key)?,
            ("train", "learning_rate") => cfg.learning_rate = parse_f64(value, line_no, key)?,
            ("train", "batch_size") => cfg.batch_size = parse_usize(value, line_no, key)?,
            ("fl", "clients") => cfg.fl.num_clients = parse_usize(value, line_no, key)?,
            ("fl", "selection_ratio") => cfg.fl.selection_ratio = parse_f64(value, line_no, key)?,
            ("fl", "rounds") => cfg.fl.rounds = parse_usize(value, line_no, key)?,
            ("fl", "local_epochs") => cfg.fl.local_epochs = parse_usize(value, line_no, key)?,
            ("semi", "enabled") => cfg.semi.enabled = parse_bool(value, line_no, key)?,
            ("semi", "labeled_size") => cfg.semi.labeled_size = parse_usize(value, line_no, key)?,
            ("semi", "pretrain_epochs") => {
                cfg.semi.pretrain_epochs = parse_usize(value, line_no, key)?
            }
            ("semi", "finetune_epochs") => {
                cfg.semi.finetune_epochs = parse_usize(value, line_no, key)?
            }
            ("semi", "correction_ratio") => {
                cfg.semi.correction_ratio = parse_f64(value, line_no, key)?
            }
            ("semi", "labeled_classes") => {
                cfg.semi.labeled_classes = Some(parse_usize(value, line_no, key)?)
            }
            ("attack", "kinds") => cfg.attack.kinds = parse_kinds(value, line_no)?,
            ("attack", "target_channels") => {
                cfg.attack.target_channels = parse_channel_list(value, line_no)?
            }
            ("attack", "malicious_ratio") => {
                cfg.attack.malicious_ratio = parse_f64(value, line_no, key)?
            }
            ("attack", "seed") => cfg.attack.seed = Some(parse_u64(value, line_no, key)?),
            ("defense", "kind") => {
                cfg.defense.kind = value
                    .parse()
                    .map_err(|e: Error| parse_err(line_no, e.to_string()))?
            }
            ("defense", "trmean_trim") => {
                cfg.defense.trmean_trim = parse_usize(value, line_no, key)?
            }
            ("defense", "cluster_metric") => {
                cfg.defense.cluster_metric = value
                    .parse()
                    .map_err(|e: Error| parse_err(line_no, e.to_string()))?
            }
            ("vaccine", "kinds") => cfg.vaccine.kinds = parse_kinds(value, line_no)?,
            ("vaccine", "target_channels") => {
                cfg.vaccine.target_channels = parse_channel_list(value, line_no)?
            }
            ("vaccine", "epochs") => cfg.vaccine.epochs = parse_usize(value, line_no, key)?,
            ("vaccine", "per_kind") => cfg.vaccine.per_kind = parse_usize(value, line_no, key)?,
            ("run", "name") => cfg.name = value.to_string(),
            ("run", "feature_mode") => {
                cfg.feature_mode = value
                    .parse()
                    .map_err(|e: Error| parse_err(line_no, e.to_string()))?
            }
            ("run", "master_seed") => cfg.master_seed = parse_u64(value, line_no, key)?,
            ("run", "test_size") => cfg.test_size = parse_usize(value, line_no, key)?,
            (sec, key) => {
                return Err(parse_err(
                    line_no,
                    if sec.is_empty() {
                        format!("key `{key}` before any section header")
                    } else {
                        format!("unknown key `{key}` in section [{sec}]")
                    },
                ))
            }
        }
    }

    cfg.dataset = match dataset_path {
        Some(path) => DatasetConfig::File(path),
        None => DatasetConfig::Generate {
            channels,
            window,
            snr_db,
            activity_prob: activity,
            num_examples: count,
            seed: ds_seed,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

// ── Rendering ───────────────────────────────────────────────────────────────

fn push_line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    out.push_str(&format!("{key} = {value}\n"));
}

/// Canonical text form; `parse_config(render(cfg))` reproduces `cfg` up to
/// resolved defaults.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    out.push_str("[dataset]\n");
    match &cfg.dataset {
        DatasetConfig::Generate {
            channels,
            window,
            snr_db,
            activity_prob,
            num_examples,
            seed,
        } => {
            push_line(&mut out, "channels", channels);
            if let Some(w) = window {
                push_line(&mut out, "window", w);
            }
            push_line(&mut out, "snr_db", snr_db);
            push_line(&mut out, "activity_prob", activity_prob);
            push_line(&mut out, "num_examples", num_examples);
            if let Some(s) = seed {
                push_line(&mut out, "seed", s);
            }
        }
        DatasetConfig::File(path) => push_line(&mut out, "path", path.display()),
    }
    out.push_str("\n[arch]\n");
    push_line(&mut out, "conv_channels", cfg.arch.conv_channels);
    push_line(&mut out, "kernel", cfg.arch.kernel);
    push_line(&mut out, "hidden", cfg.arch.hidden);
    out.push_str("\n[train]\n");
    push_line(&mut out, "learning_rate", cfg.learning_rate);
    push_line(&mut out, "batch_size", cfg.batch_size);
    out.push_str("\n[fl]\n");
    push_line(&mut out, "clients", cfg.fl.num_clients);
    push_line(&mut out, "selection_ratio", cfg.fl.selection_ratio);
    push_line(&mut out, "rounds", cfg.fl.rounds);
    push_line(&mut out, "local_epochs", cfg.fl.local_epochs);
    out.push_str("\n[semi]\n");
    push_line(&mut out, "enabled", cfg.semi.enabled);
    push_line(&mut out, "labeled_size", cfg.semi.labeled_size);
    push_line(&mut out, "pretrain_epochs", cfg.semi.pretrain_epochs);
    push_line(&mut out, "finetune_epochs", cfg.semi.finetune_epochs);
    push_line(&mut out, "correction_ratio", cfg.semi.correction_ratio);
    if let Some(m) = cfg.semi.labeled_classes {
        push_line(&mut out, "labeled_classes", m);
    }
    if cfg.has_attack() {
        out.push_str("\n[attack]\n");
        let kinds: Vec<String> = cfg.attack.kinds.iter().map(|k| k.to_string()).collect();
        push_line(&mut out, "kinds", kinds.join(","));
        match &cfg.attack.target_channels {
            Some(chs) => {
                let list: Vec<String> = chs.iter().map(|c| c.to_string()).collect();
                push_line(&mut out, "target_channels", list.join(","));
            }
            None => push_line(&mut out, "target_channels", "all"),
        }
        push_line(&mut out, "malicious_ratio", cfg.attack.malicious_ratio);
        if let Some(s) = cfg.attack.seed {
            push_line(&mut out, "seed", s);
        }
    }
    out.push_str("\n[defense]\n");
    push_line(&mut out, "kind", cfg.defense.kind);
    push_line(&mut out, "trmean_trim", cfg.defense.trmean_trim);
    push_line(&mut out, "cluster_metric", cfg.defense.cluster_metric);
    if cfg.has_vaccine() {
        out.push_str("\n[vaccine]\n");
        let kinds: Vec<String> = cfg.vaccine.kinds.iter().map(|k| k.to_string()).collect();
        push_line(&mut out, "kinds", kinds.join(","));
        match &cfg.vaccine.target_channels {
            Some(chs) => {
                let list: Vec<String> = chs.iter().map(|c| c.to_string()).collect();
                push_line(&mut out, "target_channels", list.join(","));
            }
            None => push_line(&mut out, "target_channels", "all"),
        }
        push_line(&mut out, "epochs", cfg.vaccine.epochs);
        push_line(&mut out, "per_kind", cfg.vaccine.per_kind);
    }
    out.push_str("\n[run]\n");
    push_line(&mut out, "name", &cfg.name);
    push_line(&mut out, "feature_mode", cfg.feature_mode);
    push_line(&mut out, "master_seed", cfg.master_seed);
    push_line(&mut out, "test_size", cfg.test_size);
    out
}
