//! The four subcommands. Each returns a JSON report that embeds the run config.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use dmt_core::checkpoint::{load_checkpoint, save_checkpoint};
use dmt_core::data::{class_margins, generate_synthetic, load_skeleton_file, save_skeleton_file, SkeletonSequence};
use dmt_core::metrics::{default_class_names, EvalReport};
use dmt_core::model::Network;
use dmt_core::random::seeded;
use dmt_core::train::{evaluate, fit, prepare_eval};
use dmt_core::verify::{run_all, VerifyConfig, VerifyReport};
use dmt_core::DmtError;
use serde_json::json;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("verification failed")]
    VerificationFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::VerificationFailed => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<DmtError> for CliError {
    fn from(e: DmtError) -> Self {
        match e {
            DmtError::Io(_) | DmtError::Parse { .. } | DmtError::Checkpoint(_) => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_sequences(path: &Path, cfg: &RunConfig) -> Result<Vec<SkeletonSequence>, CliError> {
    let file = load_skeleton_file(path)?;
    if file.joints != cfg.model.joints {
        return Err(CliError::Usage(format!(
            "{} has {} joints but the model expects {}",
            path.display(),
            file.joints,
            cfg.model.joints
        )));
    }
    if let Some(s) = file.sequences.iter().find(|s| s.label >= cfg.model.classes) {
        return Err(CliError::Usage(format!(
            "{}: label {} out of range for {} classes",
            path.display(),
            s.label,
            cfg.model.classes
        )));
    }
    Ok(file.sequences)
}

/// The synthetic training (`held_out = false`) or held-out partition.
pub fn synthetic_partition(cfg: &RunConfig, held_out: bool) -> Result<Vec<SkeletonSequence>, CliError> {
    let (train_seed, test_seed) = cfg.data_seeds();
    let mut synth = cfg.synthetic.clone();
    if held_out {
        synth.per_class = cfg.test_per_class;
    }
    let seed = if held_out { test_seed } else { train_seed };
    Ok(generate_synthetic(&synth, &mut seeded(seed))?)
}

/// Trains, writes the checkpoint and report, and streams one JSON line per epoch to `log`.
pub fn cmd_train(
    cfg: &RunConfig,
    data: Option<&Path>,
    test_data: Option<&Path>,
    checkpoint: Option<&Path>,
    report: Option<&Path>,
    log: &mut dyn Write,
) -> Result<serde_json::Value, CliError> {
    let start = Instant::now();
    cfg.model.validate()?;
    let (train, test) = match data {
        Some(p) => (load_sequences(p, cfg)?, test_data.map(|t| load_sequences(t, cfg)).transpose()?),
        None => (synthetic_partition(cfg, false)?, Some(synthetic_partition(cfg, true)?)),
    };
    let mut net = Network::init(cfg.model.clone())?;
    let mut io_error = None;
    let outcome = fit(&mut net, &train, test.as_deref(), &cfg.train, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(log, "{line}") {
            io_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(CliError::Io(format!("epoch log: {e}")));
    }
    if let Some(path) = checkpoint {
        save_checkpoint(path, &net).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    let names = default_class_names(cfg.model.classes);
    let test_report = outcome
        .test
        .as_ref()
        .map(|t| EvalReport::from_predictions(&t.predictions, &t.labels, &names, 0.0, cfg.echo()))
        .transpose()?;
    let value = json!({
        "command": "train",
        "config": cfg.echo(),
        "epochs_run": outcome.epochs.len(),
        "reached_target": outcome.reached_target,
        "final_loss": outcome.epochs.last().map(|m| m.loss),
        "train_accuracy": outcome.train.accuracy,
        "train_loss": outcome.train.loss,
        "test_accuracy": outcome.test.as_ref().map(|t| t.accuracy),
        "test": test_report,
        "wall_clock_secs": start.elapsed().as_secs_f64(),
    });
    if let Some(path) = report {
        write_file(path, &serde_json::to_string_pretty(&value).expect("json"))?;
    }
    Ok(value)
}

/// Evaluates a checkpoint against `cfg`'s model shape. Writes the JSON report to
/// `report` and the confusion matrix next to it with a `csv` extension.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: Option<&Path>,
    report: Option<&Path>,
) -> Result<EvalReport, CliError> {
    let start = Instant::now();
    cfg.model.validate()?;
    let net = load_checkpoint(checkpoint, Some(&cfg.model))?;
    let seqs = match data {
        Some(p) => load_sequences(p, cfg)?,
        None => synthetic_partition(cfg, true)?,
    };
    let samples = prepare_eval(&seqs, cfg.model.subclips, cfg.train.centering)?;
    let ev = evaluate(&net, &samples)?;
    let out = EvalReport::from_predictions(
        &ev.predictions,
        &ev.labels,
        &default_class_names(cfg.model.classes),
        start.elapsed().as_secs_f64(),
        cfg.echo(),
    )?;
    if let Some(path) = report {
        write_file(path, &out.to_json())?;
        write_file(&path.with_extension("csv"), &out.confusion_csv())?;
    }
    Ok(out)
}

/// Runs every certification suite. Fails with [`CliError::VerificationFailed`] after
/// writing the report if any suite fails.
pub fn cmd_verify(cfg: &RunConfig, report: Option<&Path>) -> Result<VerifyReport, CliError> {
    let mut out = run_all(&VerifyConfig {
        trials: cfg.trials,
        seed: cfg.seed,
        inject_fault: cfg.inject_fault,
    });
    out.config = cfg.echo();
    if let Some(path) = report {
        write_file(path, &out.to_json())?;
    }
    Ok(out)
}

/// Writes one synthetic partition to `path` and returns its class margin.
pub fn cmd_gen_data(cfg: &RunConfig, path: &Path, held_out: bool) -> Result<(usize, f64), CliError> {
    let seqs = synthetic_partition(cfg, held_out)?;
    save_skeleton_file(path, &seqs).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok((seqs.len(), class_margins(&seqs, cfg.model.classes)))
}
