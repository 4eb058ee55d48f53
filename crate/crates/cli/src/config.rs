//! Flat `key = value` run configuration.
//!
//! Values are applied in order: defaults, then the config file, then flags. Every
//! report echoes [`RunConfig::to_kv`].

use std::collections::BTreeMap;

use dmt_core::data::{Centering, SyntheticConfig};
use dmt_core::model::ModelConfig;
use dmt_core::train::TrainConfig;
use dmt_core::{DmtError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// `joints` and `classes` always mirror the model.
    pub synthetic: SyntheticConfig,
    pub test_per_class: usize,
    /// Drives model init, data generation, shuffling and verification.
    pub seed: u64,
    pub trials: usize,
    pub inject_fault: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let synthetic = SyntheticConfig {
            joints: model.joints,
            classes: model.classes,
            ..Default::default()
        };
        Self {
            model,
            train: TrainConfig::default(),
            synthetic,
            test_per_class: 20,
            seed: 0,
            trials: 1000,
            inject_fault: false,
        }
    }
}

fn usage(msg: impl Into<String>) -> DmtError {
    DmtError::InvalidArgument(msg.into())
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| usage(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "seed" => {
                self.seed = num(key, value)?;
                self.model.seed = self.seed;
                t.seed = self.seed;
            }
            "epochs" => t.epochs = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "lr" => t.optim.lr = num(key, value)?,
            "momentum" => t.optim.momentum = num(key, value)?,
            "clip_norm" => t.optim.clip_norm = num(key, value)?,
            "decay_every" => t.optim.decay_every = num(key, value)?,
            "decay_factor" => t.optim.decay_factor = num(key, value)?,
            "centering" => {
                t.centering = match value {
                    "mean" => Centering::Mean,
                    "sum" => Centering::Sum,
                    _ => return Err(usage(format!("centering: expected mean or sum, got {value:?}"))),
                }
            }
            "augment" => t.augment = num(key, value)?,
            "target_accuracy" => {
                t.target_accuracy = match value {
                    "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "eval_every" => t.eval_every = num(key, value)?,
            "per_class" => self.synthetic.per_class = num(key, value)?,
            "test_per_class" => self.test_per_class = num(key, value)?,
            "frames" => self.synthetic.frames = num(key, value)?,
            "noise" => self.synthetic.noise = num(key, value)?,
            "subjects" => self.synthetic.subjects = num(key, value)?,
            "trials" => self.trials = num(key, value)?,
            "inject_fault" => self.inject_fault = num(key, value)?,
            _ => {
                if !self.model.set_kv(key, value)? {
                    return Err(usage(format!("unknown config key {key:?}")));
                }
                self.synthetic.joints = self.model.joints;
                self.synthetic.classes = self.model.classes;
            }
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| DmtError::Parse {
                line: i + 1,
                msg: format!("expected key = value, found {line:?}"),
            })?;
            self.set(k.trim(), v).map_err(|e| DmtError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// All settings, model keys first, in a fixed order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let mut kv: Vec<(String, String)> = self.model.to_kv().into_iter().filter(|(k, _)| k != "seed").collect();
        let centering = match t.centering {
            Centering::Mean => "mean",
            Centering::Sum => "sum",
        };
        let target = t.target_accuracy.map_or("none".to_string(), |v| v.to_string());
        for (k, v) in [
            ("seed", self.seed.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.optim.lr.to_string()),
            ("momentum", t.optim.momentum.to_string()),
            ("clip_norm", t.optim.clip_norm.to_string()),
            ("decay_every", t.optim.decay_every.to_string()),
            ("decay_factor", t.optim.decay_factor.to_string()),
            ("centering", centering.to_string()),
            ("augment", t.augment.to_string()),
            ("target_accuracy", target),
            ("eval_every", t.eval_every.to_string()),
            ("per_class", self.synthetic.per_class.to_string()),
            ("test_per_class", self.test_per_class.to_string()),
            ("frames", self.synthetic.frames.to_string()),
            ("noise", self.synthetic.noise.to_string()),
            ("subjects", self.synthetic.subjects.to_string()),
            ("trials", self.trials.to_string()),
            ("inject_fault", self.inject_fault.to_string()),
        ] {
            kv.push((k.to_string(), v));
        }
        kv
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        self.to_kv().into_iter().collect()
    }

    pub fn to_file_text(&self) -> String {
        self.to_kv().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Seeds of the synthetic training and held-out partitions.
    pub fn data_seeds(&self) -> (u64, u64) {
        (self.seed.wrapping_mul(2).wrapping_add(1), self.seed.wrapping_mul(2).wrapping_add(2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setting() {
        let c = RunConfig::default();
        assert_eq!((c.model.subclips, c.model.hidden_dim, c.model.fc_units), (12, 9, 800));
    }

    #[test]
    fn file_round_trip() {
        let mut c = RunConfig::default();
        c.set("ablation", "no-conv").unwrap();
        c.set("seed", "7").unwrap();
        c.set("target_accuracy", "0.95").unwrap();
        c.set("joints", "10").unwrap();
        let mut d = RunConfig::default();
        d.apply_file_text(&c.to_file_text()).unwrap();
        assert_eq!(c, d);
        assert_eq!(d.synthetic.joints, 10);
        assert_eq!(d.model.seed, 7);
    }

    #[test]
    fn bad_lines_report_their_number() {
        let mut c = RunConfig::default();
        let err = c.apply_file_text("# comment\nepochs = 3\nbogus = 1\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert_eq!(c.train.epochs, 3);
        assert!(c.apply_file_text("epochs 3").is_err());
    }
}
