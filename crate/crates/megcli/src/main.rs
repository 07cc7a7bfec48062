use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use megcli::{render_report, selfcheck, Pipeline, Preset, RunConfig, Stage, UsageError, SEED_ENV};
use stresslab::EvalReport;

#[derive(Parser)]
#[command(name = "megcli", about = "Tokenize, model, roll out and evaluate synthetic multichannel recordings")]
struct Cli {
    /// JSON run config; defaults to the chosen preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: PresetArg,
    /// Run directory (overrides the config's out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted override `path=value`, repeatable; `--lm.n_layers=2` works too.
    #[arg(long = "set", global = true)]
    set: Vec<String>,
    /// Rebuild stages whose config changed.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for stage-internal parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PresetArg {
    Desk,
    PaperDoc,
}

#[derive(Subcommand)]
enum Cmd {
    GenData,
    TrainTokenizer,
    Tokenize,
    TrainLm,
    Rollout,
    Evaluate,
    /// Render CSV plot data, from the run directory or from `--input`.
    Report {
        #[arg(long, requires = "dest")]
        input: Option<PathBuf>,
        #[arg(long = "dest")]
        dest: Option<PathBuf>,
    },
    RunAll,
    /// Print the resolved config.
    ShowConfig,
    /// Fast invariant checks, plus artifact integrity of `--run-dir`.
    Selfcheck {
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
}

/// Rewrites `--a.b=v` into `--set a.b=v` so dotted flags reach clap.
fn dotted_args() -> Vec<String> {
    let mut out = Vec::new();
    for a in std::env::args() {
        match a.strip_prefix("--") {
            Some(rest) if rest.contains('.') && rest.contains('=') && rest.find('.') < rest.find('=') => {
                out.push("--set".into());
                out.push(rest.to_string());
            }
            _ => out.push(a),
        }
    }
    out
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let preset = match cli.preset {
        PresetArg::Desk => Preset::Desk,
        PresetArg::PaperDoc => Preset::PaperDoc,
    };
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => serde_json::to_value(RunConfig::preset(preset, 0, PathBuf::from("run")))?,
    };
    let env = std::env::var(SEED_ENV).ok();
    let mut cfg = RunConfig::from_value(base, &cli.set, env.as_deref())?;
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| UsageError(format!("--threads: {e}")))?;
    }
    let stage = match &cli.cmd {
        Cmd::Selfcheck { run_dir } => {
            let rows = selfcheck(run_dir.as_deref());
            println!("{:<22} {:<6} {:>8}  detail", "check", "result", "seconds");
            for r in &rows {
                let status = if r.passed { "pass" } else { "FAIL" };
                println!("{:<22} {:<6} {:>8.2}  {}", r.name, status, r.seconds, r.detail);
            }
            return Ok(if rows.iter().all(|r| r.passed) { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Cmd::Report {
            input: Some(input),
            dest: Some(dest),
        } => {
            let report = EvalReport::from_json(&std::fs::read_to_string(input)?)?;
            for p in render_report(&report, dest)? {
                println!("{}", p.display());
            }
            return Ok(ExitCode::SUCCESS);
        }
        Cmd::ShowConfig => {
            println!("{}", load_config(&cli)?.to_json());
            return Ok(ExitCode::SUCCESS);
        }
        Cmd::RunAll => None,
        Cmd::GenData => Some(Stage::GenData),
        Cmd::TrainTokenizer => Some(Stage::TrainTokenizer),
        Cmd::Tokenize => Some(Stage::Tokenize),
        Cmd::TrainLm => Some(Stage::TrainLm),
        Cmd::Rollout => Some(Stage::Rollout),
        Cmd::Evaluate => Some(Stage::Evaluate),
        Cmd::Report { .. } => Some(Stage::Report),
    };
    let mut p = Pipeline::new(load_config(&cli)?);
    p.force = cli.force;
    match stage {
        Some(s) => {
            p.run(s)?;
        }
        None => {
            p.run_all()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse_from(dotted_args()) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
