use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use dgakt::eval::Variant;
use dgakt::store::{dataset_stats, write_interaction_log, ColumnMap, InteractionLog};
use dgakt::synth::{overfit_set, planted_mastery, PlantedConfig};
use dgakt::{Error, Result};
use dgakt_cli::config::{self, RunConfig};
use dgakt_cli::explain::{explain_checkpoint, TargetKey};
use dgakt_cli::pipeline::{self, Split, CONFIG_FILE};
use log::info;

/// Knowledge tracing with dual graph attention over enclosing subgraphs.
#[derive(Parser, Debug)]
#[command(name = "dgakt", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set gamma=0.3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and index a CSV log; writes log.csv and stats.json.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Column remapping, e.g. `student_id=user,kc_ids=skills`.
        #[arg(long, default_value = "")]
        schema: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print dataset statistics.
    Stats {
        /// Log to read; defaults to the config's `input`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        schema: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Train on the chronological split and save the best checkpoint.
    Train {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/train")]
        out_dir: PathBuf,
    },
    /// Score a checkpoint on the validation or test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// FULL, V1..V6 or `all`. Repeatable.
        #[arg(long, default_value = "FULL")]
        variant: Vec<String>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every variant for every ablation seed plus the length sweep.
    Ablate {
        #[arg(long, default_value = "runs/ablate")]
        out_dir: PathBuf,
        /// Restrict to these variants (comma-separated).
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Skip the subsequence-length sweep.
        #[arg(long)]
        no_sweep: bool,
    },
    /// Train on some exercise types and test on the others.
    Unseen {
        #[arg(long, default_value = "runs/unseen")]
        out_dir: PathBuf,
    },
    /// Export the subgraph and global attention for one target.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// student:exercise:timestamp
        #[arg(long)]
        target: String,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic log.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Dot,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    /// KC-mastery rule with label noise.
    Planted,
    /// 64 noise-free interactions for overfitting checks.
    Overfit,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Planted)]
    kind: SynthKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    students: Option<usize>,
    #[arg(long)]
    exercises: Option<usize>,
    #[arg(long)]
    kcs: Option<usize>,
    #[arg(long)]
    types: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn resolve_config(cli: &Cli, fallback: Option<&Path>) -> Result<RunConfig> {
    let file = cli.config.as_deref().or(fallback.filter(|p| p.exists()));
    config::resolve(file, std::env::vars(), &cli.overrides)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_variants(names: &[String]) -> Result<Vec<Variant>> {
    if names.is_empty() || names.iter().any(|n| n.eq_ignore_ascii_case("all")) {
        return Ok(Variant::ALL.to_vec());
    }
    names.iter().map(|n| n.parse()).collect()
}

fn write_log(records: Vec<dgakt::store::RawInteraction>, out: &Path) -> Result<()> {
    let log = InteractionLog::from_records(records)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    write_interaction_log(&log, BufWriter::new(file))?;
    info!("wrote {} interactions to {}", log.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { input, schema, out } => {
            let stats = pipeline::ingest(input, &ColumnMap::from_overrides(schema)?, out)?;
            print!("{}", stats.to_text());
        }
        Command::Stats { input, schema, json } => {
            let log = match input {
                Some(path) => {
                    let columns = ColumnMap::from_overrides(schema.as_deref().unwrap_or(""))?;
                    pipeline::read_log(path, &columns)?
                }
                None => pipeline::load_log(&resolve_config(cli, None)?)?,
            };
            let stats = dataset_stats(&log);
            if *json {
                print_json(&stats)?;
            } else {
                print!("{}", stats.to_text());
            }
        }
        Command::Train { seed, out_dir } => {
            let mut config = resolve_config(cli, None)?;
            if let Some(seed) = seed {
                config.seed = *seed;
                config.validate()?;
            }
            let (summary, _) = pipeline::train_run(&config, out_dir)?;
            print_json(&summary)?;
        }
        Command::Evaluate {
            checkpoint,
            split,
            variant,
            out,
        } => {
            let saved = checkpoint.parent().map(|d| d.join(CONFIG_FILE));
            let config = resolve_config(cli, saved.as_deref())?;
            let split: Split = split.parse()?;
            let report = pipeline::evaluate_run(checkpoint, &config, split, &parse_variants(variant)?)?;
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&report)?;
                fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
            }
            print_json(&report)?;
            print!("{}", report.to_text());
        }
        Command::Ablate {
            out_dir,
            variants,
            no_sweep,
        } => {
            let config = resolve_config(cli, None)?;
            let lengths = if *no_sweep { Vec::new() } else { config.sweep_lengths.clone() };
            let report = pipeline::ablate_run(&config, &parse_variants(variants)?, &lengths, out_dir)?;
            print!("{}", report.to_text());
        }
        Command::Unseen { out_dir } => {
            let config = resolve_config(cli, None)?;
            let results = pipeline::unseen_run(&config, out_dir)?;
            print_json(&results)?;
        }
        Command::Explain {
            checkpoint,
            target,
            format,
            out,
        } => {
            let saved = checkpoint.parent().map(|d| d.join(CONFIG_FILE));
            let config = resolve_config(cli, saved.as_deref())?;
            let ckpt = pipeline::load_checkpoint(checkpoint, &config)?;
            let export = explain_checkpoint(&ckpt, &config, &target.parse::<TargetKey>()?)?;
            let text = match format {
                Format::Json => serde_json::to_string_pretty(&export)? + "\n",
                Format::Dot => export.to_dot(),
            };
            match out {
                Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e))?,
                None => print!("{text}"),
            }
        }
        Command::Synth(args) => {
            let records = match args.kind {
                SynthKind::Overfit => overfit_set(args.seed),
                SynthKind::Planted => {
                    let mut cfg = PlantedConfig {
                        seed: args.seed,
                        ..PlantedConfig::default()
                    };
                    cfg.students = args.students.unwrap_or(cfg.students);
                    cfg.exercises = args.exercises.unwrap_or(cfg.exercises);
                    cfg.kcs = args.kcs.unwrap_or(cfg.kcs);
                    cfg.exercise_types = args.types.unwrap_or(cfg.exercise_types);
                    cfg.noise = args.noise.unwrap_or(cfg.noise);
                    planted_mastery(&cfg).records
                }
            };
            write_log(records, &args.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let command = Cli::command().after_help(config::help_text());
    let cli = match Cli::from_arg_matches(&command.get_matches()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
        Err(_) => ExitCode::from(1),
    }
}
