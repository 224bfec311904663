//! Command-line entry point: analytic solvers, single training runs, and
//! the full distortion sweep. Data goes to stdout or the output directory;
//! the effective configuration is dumped to stderr before every run so any
//! result can be reproduced exactly.

use clap::{Parser, Subcommand};
use privshare::binary::{solve_binary, BinaryError};
use privshare::config::{parse_and_validate, ConfigError, Overrides, RunConfig};
use privshare::gaussian::{solve_gaussian, GaussianError};
use privshare::neuralkit::NeuralError;
use privshare::sources::{sample_binary, sample_gaussian, SourceError};
use privshare::sweep::{run_sweep, write_sweep_outputs, SourceSpec, SweepError, SweepMeta};
use privshare::trainer::{train, Mode, TrainError};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("sources: {0}")]
    Source(#[from] SourceError),
    #[error("gaussian: {0}")]
    Gaussian(#[from] GaussianError),
    #[error("binary: {0}")]
    Binary(#[from] BinaryError),
    #[error("trainer: {0}")]
    Train(#[from] TrainError),
    #[error("sweep: {0}")]
    Sweep(#[from] SweepError),
    #[error("neuralkit: {0}")]
    Neural(#[from] NeuralError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("usage: {0}")]
    Usage(String),
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "gaussian" => Ok(Mode::Gaussian),
        "binary" => Ok(Mode::Binary),
        other => Err(format!("unknown mode '{other}', expected gaussian or binary")),
    }
}

#[derive(Parser)]
#[command(
    name = "privshare",
    about = "Privacy-utility tradeoff toolkit: analytic solvers and minimax training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form Gaussian solve at one threshold or over a grid.
    SolveGaussian {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "d_grid")]
        d: Option<f64>,
        /// Evenly spaced grid written as LO:HI:N.
        #[arg(long, value_name = "LO:HI:N")]
        d_grid: Option<String>,
    },
    /// Exact binary maximin solve at one threshold or over a grid.
    SolveBinary {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "d_grid")]
        d: Option<f64>,
        #[arg(long, value_name = "LO:HI:N")]
        d_grid: Option<String>,
        /// Verification-grid steps per axis.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// One training run; writes epoch_log.csv and four checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        d: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full distortion sweep; writes curve.csv, meta.json and trial logs.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for speculative trials; 1 keeps runs sequential.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!("grid '{spec}' must be LO:HI:N")));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|e| CliError::Usage(format!("grid lower bound: {e}")))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|e| CliError::Usage(format!("grid upper bound: {e}")))?;
    let n: usize = parts[2]
        .parse()
        .map_err(|e| CliError::Usage(format!("grid point count: {e}")))?;
    if n < 1 || hi < lo {
        return Err(CliError::Usage(format!(
            "grid '{spec}' must have N >= 1 and HI >= LO"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect())
}

fn requested_grid(d: Option<f64>, d_grid: Option<&str>) -> Result<Vec<f64>, CliError> {
    match (d, d_grid) {
        (Some(v), None) => Ok(vec![v]),
        (None, Some(spec)) => parse_grid(spec),
        (None, None) => Err(CliError::Usage("one of --d or --d-grid is required".into())),
        (Some(_), Some(_)) => Err(CliError::Usage(
            "--d and --d-grid are mutually exclusive".into(),
        )),
    }
}

fn dump_effective_config(cfg: &RunConfig) {
    match serde_json::to_string_pretty(cfg) {
        Ok(json) => eprintln!("effective config:\n{json}"),
        Err(e) => eprintln!("effective config unavailable: {e}"),
    }
}

fn load(config: &PathBuf, overrides: Overrides) -> Result<RunConfig, CliError> {
    let cfg = parse_and_validate(config, &overrides)?;
    dump_effective_config(&cfg);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SolveGaussian { config, d, d_grid } => {
            let cfg = load(&config, Overrides::default())?;
            let SourceSpec::Gaussian(src) = &cfg.source else {
                return Err(CliError::Usage(
                    "solve-gaussian needs a gaussian source in the config".into(),
                ));
            };
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            writeln!(out, "d,d_prime,q1,q2,adv1,adv2,objective,saturated")?;
            for d in requested_grid(d, d_grid.as_deref())? {
                let sol = solve_gaussian(src, d)?;
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    d,
                    sol.d_prime,
                    sol.q1,
                    sol.q2,
                    sol.adv_loss_1,
                    sol.adv_loss_2,
                    sol.objective,
                    sol.saturated
                )?;
            }
            Ok(())
        }
        Command::SolveBinary {
            config,
            d,
            d_grid,
            resolution,
        } => {
            let cfg = load(
                &config,
                Overrides {
                    resolution,
                    ..Overrides::default()
                },
            )?;
            let SourceSpec::Binary(src) = &cfg.source else {
                return Err(CliError::Usage(
                    "solve-binary needs a binary source in the config".into(),
                ));
            };
            let res = resolution
                .or(cfg.protocol.as_ref().map(|p| p.resolution))
                .unwrap_or(1000);
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            writeln!(out, "d,gamma,s0,s1,recon,active_adversary")?;
            for d in requested_grid(d, d_grid.as_deref())? {
                let sol = solve_binary(src, d, res)?;
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    d, sol.gamma, sol.s0_opt, sol.s1_opt, sol.recon_at_opt, sol.active_adversary
                )?;
            }
            Ok(())
        }
        Command::Train {
            config,
            mode,
            d,
            seed,
            out,
        } => {
            let cfg = load(
                &config,
                Overrides {
                    mode,
                    d,
                    seed,
                    output_dir: out,
                    resolution: None,
                },
            )?;
            let dataset = match &cfg.source {
                SourceSpec::Gaussian(src) => {
                    sample_gaussian(src, cfg.data.n, cfg.data.train_fraction, cfg.data.seed)?
                }
                SourceSpec::Binary(src) => {
                    sample_binary(src, cfg.data.n, cfg.data.train_fraction, cfg.data.seed)?
                }
            };
            let state = train(&dataset, &cfg.trainer)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let mut log = String::from("epoch,l_recon,l_adv1,l_adv2\n");
            for rec in &state.epoch_log {
                log.push_str(&format!(
                    "{},{},{},{}\n",
                    rec.epoch, rec.l_recon, rec.l_adv1, rec.l_adv2
                ));
            }
            std::fs::write(cfg.output_dir.join("epoch_log.csv"), log)?;
            for (name, component) in [
                ("privatizer.bin", &state.privatizer),
                ("reconstructor.bin", &state.reconstructor),
                ("adversary1.bin", &state.adversary1),
                ("adversary2.bin", &state.adversary2),
            ] {
                component.net.save_checkpoint(&cfg.output_dir.join(name))?;
            }
            let last = state.epoch_log.last().expect("at least one epoch");
            eprintln!(
                "trained {} epochs: test l_recon {:.6}, l_adv1 {:.6}, l_adv2 {:.6}",
                state.epoch_log.len(),
                last.l_recon,
                last.l_adv1,
                last.l_adv2
            );
            Ok(())
        }
        Command::Sweep {
            config,
            mode,
            out,
            seed,
            jobs,
        } => {
            let cfg = load(
                &config,
                Overrides {
                    mode,
                    seed,
                    output_dir: out,
                    d: None,
                    resolution: None,
                },
            )?;
            let protocol = cfg.protocol.clone().ok_or_else(|| {
                CliError::Usage("sweep needs a protocol section in the config".into())
            })?;
            let outcome = run_sweep(&protocol, &cfg.source, &cfg.data, &cfg.trainer, jobs)?;
            let meta = SweepMeta {
                protocol,
                source: cfg.source.clone(),
                data: cfg.data,
                trainer: cfg.trainer.clone(),
                jobs,
                point_seeds: outcome.points.iter().map(|p| p.seed_used).collect(),
            };
            write_sweep_outputs(&outcome, &meta, &cfg.output_dir)?;
            let short: usize = outcome.points.iter().map(|p| p.shortfall).sum();
            eprintln!(
                "sweep finished: {} points ({} trials, {} short) -> {}",
                outcome.points.len(),
                outcome.trials.len(),
                short,
                cfg.output_dir.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
