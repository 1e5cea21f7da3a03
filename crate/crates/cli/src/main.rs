use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pointassim_cli::commands::{
    cmd_analyze_contribution, cmd_analyze_resolution, cmd_analyze_sensitivity, cmd_assimilate, cmd_eval,
    cmd_forecast_verify, cmd_obs_sim, cmd_train, cmd_world_gen, with_threads,
};
use pointassim_cli::{CliResult, Ctx, ExperimentConfig, ObsMode};

#[derive(Parser)]
#[command(name = "pointassim", version, about = "Point-cloud ocean data assimilation experiments")]
struct Cli {
    /// TOML experiment configuration; defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    sequential: bool,
    /// Overrides the experiment directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write truth and background fields.
    WorldGen,
    /// Simulate every observation source.
    ObsSim,
    /// Train a model for one observation mode.
    Train {
        #[arg(long, default_value = "full")]
        mode: ObsMode,
    },
    /// Analyse the test days and score them.
    Assimilate {
        #[arg(long, default_value = "full")]
        mode: ObsMode,
    },
    /// Score a tree of grid files against a reference tree.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        pred_prefix: Option<String>,
        #[arg(long)]
        ref_prefix: Option<String>,
        #[arg(long, default_value = "custom")]
        label: String,
    },
    AnalyzeContribution,
    AnalyzeSensitivity,
    AnalyzeResolution,
    /// Forecasts from stored analyses against forecasts from the background.
    ForecastVerify {
        #[arg(long, default_value = "full")]
        mode: ObsMode,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    let command = cli.command;
    with_threads(cli.threads, cli.sequential, move || -> CliResult<()> {
        let ctx = Ctx::new(cfg)?;
        match command {
            Command::WorldGen => drop(cmd_world_gen(&ctx)?),
            Command::ObsSim => drop(cmd_obs_sim(&ctx)?),
            Command::Train { mode } => {
                let out = cmd_train(&ctx, mode)?;
                println!("best epoch {} of {}", out.best_epoch, out.history.len() - 1);
            }
            Command::Assimilate { mode } => {
                let s = cmd_assimilate(&ctx, mode)?;
                for (k, v) in s.analysis.vars.iter().enumerate() {
                    let red = s.ratios.rmse_reduction[k].map(|r| format!("{r:.4}")).unwrap_or_else(|| "undefined".into());
                    println!("{v}: rmse {:.5} background {:.5} reduction {red}", s.analysis.rmse[k], s.background.rmse[k]);
                }
            }
            Command::Eval { pred, reference, pred_prefix, ref_prefix, label } => {
                let r = cmd_eval(&ctx, &pred, &reference, pred_prefix.as_deref(), ref_prefix.as_deref(), &label)?;
                for (k, v) in r.vars.iter().enumerate() {
                    println!("{v}: rmse {:.5} mae {:.5}", r.rmse[k], r.mae[k]);
                }
            }
            Command::AnalyzeContribution => drop(cmd_analyze_contribution(&ctx)?),
            Command::AnalyzeSensitivity => drop(cmd_analyze_sensitivity(&ctx)?),
            Command::AnalyzeResolution => drop(cmd_analyze_resolution(&ctx)?),
            Command::ForecastVerify { mode } => drop(cmd_forecast_verify(&ctx, mode)?),
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
