//! `nomafl` — federated learning over uplink NOMA, from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use nomafl_cli::config::{parse_config, Overrides};
use nomafl_cli::manifest::{now_unix, RunManifest};
use nomafl_cli::{config, csvout, resolve_data_dir, selftest};
use nomafl_core::sim::{self, ExperimentConfig, SimState};

#[derive(Parser)]
#[command(name = "nomafl", version, about = "Age-based federated learning over NOMA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv plus a manifest.
    Run(RunArgs),
    /// Run several configs under one seed and write a merged CSV.
    Compare(CompareArgs),
    /// Run the built-in oracle and determinism checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML); omit for the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Also write per-client ANN snapshots (when the predictor is on).
    #[arg(long)]
    save_ann: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment configs to compare (two or more).
    #[arg(long, required = true, num_args = 1..)]
    config: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dataset directory override shared by all configs.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Seed override shared by all configs.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SelftestArgs {
    /// MNIST directory for the determinism check.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct OverrideArgs {
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Scheme override (kebab-case, e.g. acs-opa-noma).
    #[arg(long)]
    scheme: Option<String>,
    /// Round-count override.
    #[arg(long)]
    rounds: Option<usize>,
    /// Data mode override (mnist-iid, mnist-non-iid, synth).
    #[arg(long)]
    data_mode: Option<String>,
    /// Dataset directory override.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Enable or disable the ANN predictor.
    #[arg(long)]
    ann: Option<bool>,
}

fn load_config(path: Option<&PathBuf>, args: &OverrideArgs) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    config.data_dir = resolve_data_dir(args.data_dir.clone(), config.data_dir.take());
    let overrides = Overrides {
        seed: args.seed,
        scheme: args.scheme.clone(),
        rounds: args.rounds,
        data_mode: args.data_mode.clone(),
        ann_enabled: args.ann,
    };
    overrides.apply(&mut config)?;
    Ok(config)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = load_config(args.config.as_ref(), &args.overrides)?;
    let started = now_unix();

    let mut state = SimState::new(config.clone())?;
    let mut logs = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        logs.push(state.run_round()?);
    }
    if state.degraded_rounds() > 0 {
        log::warn!("{} rounds degraded to random powers", state.degraded_rounds());
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let mut outputs = vec!["rounds.csv".to_string()];
    let csv = csvout::rounds_csv(config.scheme.name(), &logs);
    std::fs::write(args.out.join("rounds.csv"), csv).context("writing rounds.csv")?;

    if args.save_ann && config.ann_enabled {
        let ann_dir = args.out.join("ann");
        std::fs::create_dir_all(&ann_dir).context("creating ann dir")?;
        for client in 0..config.n_clients {
            if let Some(model) = state.ann_model(client) {
                let rel = format!("ann/client_{client:03}.ann");
                let file = std::fs::File::create(args.out.join(&rel))
                    .with_context(|| format!("creating {rel}"))?;
                model.write_to(std::io::BufWriter::new(file)).context("writing snapshot")?;
                outputs.push(rel);
            }
        }
    }

    let run_manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        started_unix: started,
        finished_unix: now_unix(),
        outputs,
        config_toml: config::serialize_config(&config)?,
    };
    std::fs::write(args.out.join("manifest.toml"), run_manifest.to_toml()?)
        .context("writing manifest")?;
    run_manifest.verify_outputs(&args.out)?;

    let last = logs.last().expect("at least one round");
    println!(
        "{} rounds of {} done: accuracy {:.4}, loss {:.4}, cumulative {:.1} s -> {}",
        logs.len(),
        config.scheme.name(),
        last.accuracy,
        last.global_loss,
        last.cumulative_time_s,
        args.out.display()
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let shared = OverrideArgs {
        seed: args.seed,
        scheme: None,
        rounds: None,
        data_mode: None,
        data_dir: args.data_dir.clone(),
        ann: None,
    };
    let configs: Vec<ExperimentConfig> = args
        .config
        .iter()
        .map(|p| load_config(Some(p), &shared))
        .collect::<Result<_>>()?;
    let started = now_unix();
    let rows = sim::compare_schemes(&configs).map_err(|e| anyhow::anyhow!(e))?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    std::fs::write(args.out.join("compare.csv"), csvout::compare_csv(&rows))
        .context("writing compare.csv")?;

    let snapshot = configs
        .iter()
        .map(config::serialize_config)
        .collect::<Result<Vec<_>>>()?
        .join("\n# ---\n");
    let run_manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: configs[0].seed,
        started_unix: started,
        finished_unix: now_unix(),
        outputs: vec!["compare.csv".into()],
        config_toml: snapshot,
    };
    std::fs::write(args.out.join("manifest.toml"), run_manifest.to_toml()?)
        .context("writing manifest")?;

    println!("{} rows -> {}", rows.len(), args.out.join("compare.csv").display());
    Ok(())
}

fn cmd_selftest(args: SelftestArgs) -> Result<bool> {
    let checks = selftest::run_all(args.data_dir);
    let mut all_ok = true;
    for check in &checks {
        let tag = if check.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {} — {}", check.name, check.detail);
        all_ok &= check.passed;
    }
    Ok(all_ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args).map(|()| true),
        Command::Compare(args) => cmd_compare(args).map(|()| true),
        Command::Selftest(args) => cmd_selftest(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
