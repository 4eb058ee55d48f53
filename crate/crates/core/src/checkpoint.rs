//! Text checkpoints: model config plus every raw parameter, bit-exact.
//!
//! ```text
//! dmtnet-ckpt v1
//! config <key>=<value>
//! ...
//! param <name> <rows> <cols>
//! <one line of space-separated values per row>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{DmtError, Result};
use crate::model::{ModelConfig, Network};
use crate::tensor::Mat;

pub const CHECKPOINT_HEADER: &str = "dmtnet-ckpt v1";

pub fn format_checkpoint(net: &Network) -> String {
    let mut out = format!("{CHECKPOINT_HEADER}\n");
    for (k, v) in net.config().to_kv() {
        let _ = writeln!(out, "config {k}={v}");
    }
    for (name, m) in net.params().iter() {
        let _ = writeln!(out, "param {name} {} {}", m.rows(), m.cols());
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, net: &Network) -> Result<()> {
    std::fs::write(path, format_checkpoint(net))?;
    Ok(())
}

fn ckpt_err(line: usize, msg: impl std::fmt::Display) -> DmtError {
    DmtError::Checkpoint(format!("line {line}: {msg}"))
}

/// Parses the config and parameters without checking that they fit together.
pub fn parse_checkpoint(text: &str) -> Result<(ModelConfig, ParamStore)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, CHECKPOINT_HEADER)) => {}
        Some((_, other)) => return Err(ckpt_err(1, format!("expected {CHECKPOINT_HEADER:?}, found {other:?}"))),
        None => return Err(ckpt_err(1, "empty checkpoint")),
    }
    let mut config = ModelConfig::default();
    let mut params = ParamStore::new();
    while let Some((ln, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        if let Some(kv) = line.strip_prefix("config ") {
            let (k, v) = kv.split_once('=').ok_or_else(|| ckpt_err(ln, "config line without '='"))?;
            if !config.set_kv(k, v).map_err(|e| ckpt_err(ln, e))? {
                return Err(ckpt_err(ln, format!("unknown config key {k:?}")));
            }
        } else if let Some(rest) = line.strip_prefix("param ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [name, rows, cols] = parts.as_slice() else {
                return Err(ckpt_err(ln, "expected `param <name> <rows> <cols>`"));
            };
            let rows: usize = rows.parse().map_err(|_| ckpt_err(ln, "bad row count"))?;
            let cols: usize = cols.parse().map_err(|_| ckpt_err(ln, "bad column count"))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (rl, row) = lines.next().ok_or_else(|| ckpt_err(ln, format!("{name}: truncated")))?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|_| ckpt_err(rl, format!("bad value {tok:?}")))?);
                }
                if data.len() - before != cols {
                    return Err(ckpt_err(rl, format!("{name}: expected {cols} values per row")));
                }
            }
            if params.index_of(name).is_some() {
                return Err(ckpt_err(ln, format!("duplicate parameter {name}")));
            }
            params.push(*name, Mat::from_vec(rows, cols, data)?);
        } else {
            return Err(ckpt_err(ln, format!("unrecognized line {line:?}")));
        }
    }
    Ok((config, params))
}

/// Loads a checkpoint. With `expected`, the parameters must fit that config instead
/// of the stored one; mismatches are reported per parameter.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Network> {
    let (stored, params) = parse_checkpoint(&std::fs::read_to_string(path)?)?;
    Network::from_params(expected.cloned().unwrap_or(stored), params)
}
