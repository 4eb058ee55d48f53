//! Training loop, evaluation and finite-difference gradient checks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape};
use crate::data::{prepare_sample, Centering, SkeletonSequence, SpdSample};
use crate::error::{invalid, Result};
use crate::model::{layer_of, Network};
use crate::optim::{sgd_step, OptimConfig, OptimState, StepOutcome};
use crate::random::{seeded, DmtRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub centering: Centering,
    /// Random frame choice, scaling and rotation of training sequences every epoch.
    pub augment: bool,
    /// Seeds shuffling and augmentation (model init uses the model seed).
    pub seed: u64,
    /// Stop once accuracy on the un-augmented training set reaches this value.
    pub target_accuracy: Option<f64>,
    /// Held-out accuracy is computed every `eval_every` epochs; 0 disables it.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            optim: OptimConfig::default(),
            centering: Centering::Mean,
            augment: true,
            seed: 0,
            target_accuracy: None,
            eval_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Summed cross-entropy over the samples seen this epoch.
    pub loss: f64,
    pub mean_loss: f64,
    /// Accuracy of the predictions made during the epoch, before each update.
    pub accuracy: f64,
    pub samples: usize,
    pub skipped: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub clipped_steps: usize,
    pub skipped_steps: usize,
    /// Accuracy on held-out data after the epoch, when computed.
    pub eval_accuracy: Option<f64>,
    /// Accuracy on the un-augmented training set, when computed.
    pub train_accuracy: Option<f64>,
}

/// Predictions on a fixed sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub loss: f64,
    pub accuracy: f64,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

fn accumulate(acc: &mut Option<Gradients>, g: Gradients) -> Result<()> {
    match acc {
        None => *acc = Some(g),
        Some(a) => {
            for (x, y) in a.params.iter_mut().zip(&g.params) {
                x.add_assign(y)?;
            }
        }
    }
    Ok(())
}

/// One pass over `samples` in a shuffled order, one momentum step per minibatch on the
/// mean gradient. Samples that do not fit the network are skipped and counted.
pub fn train_epoch<R: Rng + ?Sized>(
    net: &mut Network,
    samples: &[SpdSample],
    opt: &mut OptimState,
    batch_size: usize,
    rng: &mut R,
) -> Result<EpochMetrics> {
    if samples.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    if batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut m = EpochMetrics {
        epoch: 0,
        loss: 0.0,
        mean_loss: 0.0,
        accuracy: 0.0,
        samples: 0,
        skipped: 0,
        lr: opt.lr,
        max_grad_norm: 0.0,
        clipped_steps: 0,
        skipped_steps: 0,
        eval_accuracy: None,
        train_accuracy: None,
    };
    let mut correct = 0;
    for batch in order.chunks(batch_size) {
        let mut acc: Option<Gradients> = None;
        let mut used = 0;
        for &i in batch {
            let s = &samples[i];
            if let Err(e) = net.check_sample(s) {
                log::warn!("skipping sample {i}: {e}");
                m.skipped += 1;
                continue;
            }
            let mut tape = Tape::new(net.params());
            let (loss, probs) = net.loss(&mut tape, s)?;
            m.loss += tape.value(loss).get(0, 0);
            correct += usize::from(argmax(&probs) == s.label);
            accumulate(&mut acc, tape.backward(loss)?)?;
            used += 1;
        }
        let Some(mut g) = acc else { continue };
        m.samples += used;
        let inv = 1.0 / used as f64;
        for p in &mut g.params {
            *p = p.scale(inv);
        }
        match sgd_step(net.params_mut(), &g, opt)? {
            StepOutcome::Applied { norm, clipped } => {
                m.max_grad_norm = m.max_grad_norm.max(norm);
                m.clipped_steps += usize::from(clipped);
            }
            StepOutcome::Skipped => m.skipped_steps += 1,
        }
    }
    if m.samples > 0 {
        m.mean_loss = m.loss / m.samples as f64;
        m.accuracy = correct as f64 / m.samples as f64;
    }
    Ok(m)
}

pub fn evaluate(net: &Network, samples: &[SpdSample]) -> Result<Evaluation> {
    let mut ev = Evaluation {
        predictions: Vec::with_capacity(samples.len()),
        labels: Vec::with_capacity(samples.len()),
        loss: 0.0,
        accuracy: 0.0,
    };
    for s in samples {
        let p = net.predict(s)?;
        ev.loss -= p[s.label].max(crate::layers::PROB_FLOOR).ln();
        ev.predictions.push(argmax(&p));
        ev.labels.push(s.label);
    }
    let hits = ev.predictions.iter().zip(&ev.labels).filter(|(a, b)| a == b).count();
    ev.accuracy = if samples.is_empty() {
        0.0
    } else {
        hits as f64 / samples.len() as f64
    };
    Ok(ev)
}

/// Deterministic evaluation inputs: middle frame of every segment, no augmentation.
pub fn prepare_eval(seqs: &[SkeletonSequence], subclips: usize, centering: Centering) -> Result<Vec<SpdSample>> {
    seqs.iter()
        .map(|s| prepare_sample::<DmtRng>(s, subclips, centering, None))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Whether training stopped early on [`TrainConfig::target_accuracy`].
    pub reached_target: bool,
    pub train: Evaluation,
    pub test: Option<Evaluation>,
}

/// Trains for up to `cfg.epochs` epochs, calling `on_epoch` after each one, then
/// evaluates on the un-augmented training set and on `test` if given.
pub fn fit(
    net: &mut Network,
    train: &[SkeletonSequence],
    test: Option<&[SkeletonSequence]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    let subclips = net.config().subclips;
    let mut rng = seeded(cfg.seed);
    let mut opt = OptimState::new(net.params(), &cfg.optim)?;
    let clean_train = prepare_eval(train, subclips, cfg.centering)?;
    let clean_test = test.map(|t| prepare_eval(t, subclips, cfg.centering)).transpose()?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut reached_target = false;
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.optim.lr_at(epoch);
        let samples = if cfg.augment {
            train
                .iter()
                .map(|s| prepare_sample(s, subclips, cfg.centering, Some(&mut rng)))
                .collect::<Result<Vec<_>>>()?
        } else {
            clean_train.clone()
        };
        let mut m = train_epoch(net, &samples, &mut opt, cfg.batch_size, &mut rng)?;
        m.epoch = epoch;
        if let Some(t) = &clean_test {
            if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
                m.eval_accuracy = Some(evaluate(net, t)?.accuracy);
            }
        }
        if let Some(target) = cfg.target_accuracy {
            // The clean pass is only paid for once the running accuracy is there.
            if m.accuracy >= target {
                let acc = evaluate(net, &clean_train)?.accuracy;
                m.train_accuracy = Some(acc);
                reached_target = acc >= target;
            }
        }
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.3} lr {:.2e}",
            m.mean_loss,
            m.accuracy,
            m.lr
        );
        on_epoch(&m);
        history.push(m);
        if reached_target {
            log::info!("training accuracy target reached after {} epochs", epoch + 1);
            break;
        }
    }
    Ok(TrainReport {
        epochs: history,
        reached_target,
        train: evaluate(net, &clean_train)?,
        test: clean_test.as_deref().map(|t| evaluate(net, t)).transpose()?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    /// Central-difference step, in `[1e-7, 1e-3]`.
    pub h: f64,
    /// Coordinates checked per parameter matrix; larger ones are sampled.
    pub coords_per_param: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            coords_per_param: 12,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checks: Vec<CoordCheck>,
    /// Worst relative error per layer group.
    pub per_layer: BTreeMap<String, f64>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `|a − n| / max(|a| + |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

fn sample_loss(net: &Network, s: &SpdSample) -> Result<f64> {
    let mut tape = Tape::new(net.params());
    let (loss, _) = net.loss(&mut tape, s)?;
    Ok(tape.value(loss).get(0, 0))
}

/// Compares tape gradients of the single-sample loss with central differences.
pub fn gradient_check(net: &Network, s: &SpdSample, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&opts.h) {
        return Err(invalid(format!("finite-difference step {} outside [1e-7, 1e-3]", opts.h)));
    }
    let grads = {
        let mut tape = Tape::new(net.params());
        let (loss, _) = net.loss(&mut tape, s)?;
        tape.backward(loss)?
    };
    let mut rng = seeded(opts.seed);
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        checks: Vec::new(),
        per_layer: BTreeMap::new(),
        max_rel_error: 0.0,
    };
    for (p, name) in net.params().names().iter().enumerate() {
        let n = net.params().get(p).len();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > opts.coords_per_param {
            coords.shuffle(&mut rng);
            coords.truncate(opts.coords_per_param);
            coords.sort_unstable();
        }
        for k in coords {
            let orig = net.params().get(p).data()[k];
            probe.params_mut().get_mut(p).data_mut()[k] = orig + opts.h;
            let up = sample_loss(&probe, s)?;
            probe.params_mut().get_mut(p).data_mut()[k] = orig - opts.h;
            let down = sample_loss(&probe, s)?;
            probe.params_mut().get_mut(p).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * opts.h);
            let analytic = grads.params[p].data()[k];
            let rel = relative_error(analytic, numeric, opts.floor);
            let layer = report.per_layer.entry(layer_of(name).to_string()).or_insert(0.0);
            *layer = layer.max(rel);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checks.push(CoordCheck {
                param: name.clone(),
                index: k,
                analytic,
                numeric,
                rel_error: rel,
            });
        }
    }
    Ok(report)
}
