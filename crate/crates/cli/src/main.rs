//! `fedspectrum` command-line front end: dataset generation, single
//! experiment runs with config files and attack/defense overrides, and the
//! built-in preset catalog.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime
//! errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedspectrum_core::harness::{
    self, default_window, parse_config, run_experiment, ExperimentConfig,
};
use fedspectrum_core::signal::{generate_dataset, write_dataset, GeneratorConfig};
use fedspectrum_core::{AttackKind, ClusterMetric, DefenseKind, Error};

#[derive(Parser)]
#[command(name = "fedspectrum", version, about = "Federated spectrum-sensing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Gen(GenArgs),
    /// Run one experiment from a config file plus optional overrides.
    Run(RunArgs),
    /// Inspect and execute the built-in experiment presets.
    Preset {
        #[command(subcommand)]
        command: PresetCommand,
    },
}

#[derive(Args)]
struct GenArgs {
    /// Number of channels.
    #[arg(long, default_value_t = 4)]
    channels: usize,
    /// Window size in IQ samples; defaults to the smallest power of two
    /// giving every channel at least four bins.
    #[arg(long)]
    window: Option<usize>,
    /// In-band SNR of active channels in dB.
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
    /// Per-channel activity probability.
    #[arg(long, default_value_t = 0.5)]
    activity: f64,
    /// Number of examples.
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file; omitted means all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Attack kinds (comma separated: flip, busy, idle, random).
    #[arg(long)]
    attack: Option<String>,
    /// Attacked channels (comma separated, or `all`).
    #[arg(long)]
    target_channels: Option<String>,
    /// Fraction of malicious clients.
    #[arg(long)]
    malicious_ratio: Option<f64>,
    /// Defense kind: none, median, trmean, fltrust, ssvax.
    #[arg(long)]
    defense: Option<String>,
    /// Vaccine kinds (comma separated).
    #[arg(long)]
    vaccine: Option<String>,
    /// Vaccine channels (comma separated, or `all`).
    #[arg(long)]
    vaccine_channels: Option<String>,
    /// Clustering metric: params_delta, lpc, apc.
    #[arg(long)]
    cluster_metric: Option<String>,
}

#[derive(Subcommand)]
enum PresetCommand {
    /// List the preset catalog.
    List,
    /// Run every experiment of one preset.
    Run {
        name: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn parse_kinds(text: &str) -> Result<Vec<AttackKind>, Error> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

fn parse_channels(text: &str) -> Result<Option<Vec<usize>>, Error> {
    if text == "all" {
        return Ok(None);
    }
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad channel `{s}`")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) -> Result<(), Error> {
    if let Some(kinds) = &args.attack {
        cfg.attack.kinds = parse_kinds(kinds)?;
    }
    if let Some(channels) = &args.target_channels {
        cfg.attack.target_channels = parse_channels(channels)?;
    }
    if let Some(ratio) = args.malicious_ratio {
        cfg.attack.malicious_ratio = ratio;
    }
    if let Some(kind) = &args.defense {
        cfg.defense.kind = kind.parse::<DefenseKind>()?;
    }
    if let Some(kinds) = &args.vaccine {
        cfg.vaccine.kinds = parse_kinds(kinds)?;
    }
    if let Some(channels) = &args.vaccine_channels {
        cfg.vaccine.target_channels = parse_channels(channels)?;
    }
    if let Some(metric) = &args.cluster_metric {
        cfg.defense.cluster_metric = metric.parse::<ClusterMetric>()?;
    }
    cfg.validate()
}

fn cmd_gen(args: &GenArgs) -> Result<(), Error> {
    let cfg = GeneratorConfig {
        channels: args.channels,
        window: args.window.unwrap_or_else(|| default_window(args.channels)),
        snr_db: args.snr,
        activity_prob: args.activity,
        seed: args.seed,
        num_examples: args.count,
    };
    let data = generate_dataset(&cfg)?;
    write_dataset(&args.out, cfg.channels, &data)?;
    println!(
        "wrote {} examples ({} channels, window {}) to {}",
        data.len(),
        cfg.channels,
        cfg.window,
        args.out.display()
    );
    Ok(())
}

fn print_summary(summary: &harness::RunSummary) {
    println!(
        "{}: final accuracy {:.4}{}{}{}",
        summary.name,
        summary.final_accuracy,
        summary
            .rounds_to_99
            .map(|r| format!(", 99% at round {r}"))
            .unwrap_or_default(),
        summary
            .mean_fnr_last20
            .map(|v| format!(", late FNR {v:.3}"))
            .unwrap_or_default(),
        summary
            .asr
            .map(|v| format!(", ASR {v:.4}"))
            .unwrap_or_default(),
    );
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config(&text)?
        }
        None => ExperimentConfig::default(),
    };
    apply_overrides(&mut cfg, args)?;
    let dir = args.out.join(&cfg.name);
    let artifacts = run_experiment(&cfg, &dir, &args.out.join("summary.csv"))?;
    print_summary(&artifacts.summary);
    println!("artifacts in {}", artifacts.dir.display());
    Ok(())
}

fn cmd_preset_list() {
    for preset in harness::presets() {
        println!("{:<32} {} runs", preset.name, preset.runs.len());
        println!("    {}", preset.description);
    }
}

fn cmd_preset_run(name: &str, out: &std::path::Path) -> Result<(), Error> {
    let preset = harness::find_preset(name)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
    let base = out.join(preset.name);
    let summary = base.join("summary.csv");
    std::fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
    for cfg in &preset.runs {
        let artifacts = run_experiment(cfg, &base.join(&cfg.name), &summary)?;
        print_summary(&artifacts.summary);
    }
    println!("summary at {}", summary.display());
    Ok(())
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Preset { command } => match command {
            PresetCommand::List => {
                cmd_preset_list();
                Ok(())
            }
            PresetCommand::Run { name, out } => cmd_preset_run(name, out),
        },
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
