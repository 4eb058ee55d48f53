use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Parser, Subcommand};
use dmt_cli::{cmd_eval, cmd_gen_data, cmd_train, cmd_verify, CliError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "dmt", version, about = "SPD manifold-to-manifold network: train, evaluate, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Skeleton file to read (train, eval) or write (gen-data).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[arg(long, global = true, value_parser = PossibleValuesParser::new(["none", "no-conv", "no-recursive", "euclidean"]))]
    ablation: Option<String>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Any config key, as `key=value`; repeatable, applied after the other flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; prints one JSON line per epoch.
    Train {
        /// Held-out skeleton file evaluated after training (with --data).
        #[arg(long)]
        test_data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; prints accuracy, per-class metrics and the confusion matrix.
    Eval,
    /// Run the randomized certification suites; exits 2 on any failure.
    Verify {
        /// Negate one kernel eigenvalue per convolution trial.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Write a synthetic skeleton dataset to --data.
    GenData {
        /// Write the held-out partition instead of the training one.
        #[arg(long)]
        held_out: bool,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        cfg.apply_file_text(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    let mut flags: Vec<(String, String)> = Vec::new();
    if let Some(v) = cli.seed {
        flags.push(("seed".into(), v.to_string()));
    }
    if let Some(v) = &cli.ablation {
        flags.push(("ablation".into(), v.clone()));
    }
    if let Some(v) = cli.trials {
        flags.push(("trials".into(), v.to_string()));
    }
    if let Some(v) = cli.epochs {
        flags.push(("epochs".into(), v.to_string()));
    }
    if let Some(v) = cli.lr {
        flags.push(("lr".into(), v.to_string()));
    }
    if let Command::Verify { inject_fault: true } = cli.command {
        flags.push(("inject_fault".into(), "true".into()));
    }
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        flags.push((k.trim().to_string(), v.to_string()));
    }
    for (k, v) in flags {
        cfg.set(&k, &v).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = build_config(&cli)?;
    match &cli.command {
        Command::Train { test_data } => {
            let mut stdout = std::io::stdout().lock();
            let report = cmd_train(
                &cfg,
                cli.data.as_deref(),
                test_data.as_deref(),
                cli.checkpoint.as_deref(),
                cli.report.as_deref(),
                &mut stdout,
            )?;
            eprintln!(
                "trained {} epochs: train accuracy {}, test accuracy {}",
                report["epochs_run"], report["train_accuracy"], report["test_accuracy"]
            );
            if cli.checkpoint.is_none() {
                log::warn!("no --checkpoint given; trained weights were not saved");
            }
        }
        Command::Eval => {
            let ckpt = cli
                .checkpoint
                .as_deref()
                .ok_or_else(|| CliError::Usage("eval needs --checkpoint".into()))?;
            let report = cmd_eval(&cfg, ckpt, cli.data.as_deref(), cli.report.as_deref())?;
            print!("{}\n{}", report.to_table(), report.confusion_csv());
        }
        Command::Verify { .. } => {
            let report = cmd_verify(&cfg, cli.report.as_deref())?;
            print!("{}", report.to_table());
            if !report.passed {
                return Err(CliError::VerificationFailed);
            }
        }
        Command::GenData { held_out } => {
            let path = cli
                .data
                .as_deref()
                .ok_or_else(|| CliError::Usage("gen-data needs --data <output path>".into()))?;
            let (n, margin) = cmd_gen_data(&cfg, path, *held_out)?;
            println!("wrote {n} sequences to {}; class margin {margin:.4}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dmt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
