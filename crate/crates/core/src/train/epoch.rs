//! The epoch loop shared by every phase: schedule, shuffling, metric
//! accumulation, divergence detection and evaluation hooks.

use std::time::Instant;

use distilnas_tensor::optim::Sgd;
use distilnas_tensor::Tensor;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::config::{EpochMetrics, LrSchedule, PhaseResult, Purpose, TrainConfig};
use super::eval::evaluate;
use super::loss::one_hot;
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::nn::Classifier;

/// Callback invoked after every epoch, e.g. to stream metrics to disk.
pub type EpochCallback<'a> = Box<dyn FnMut(&EpochMetrics) -> Result<()> + 'a>;

/// Optional extras for a training phase.
#[derive(Default)]
pub struct Hooks<'a> {
    /// Evaluated after every epoch when present.
    pub eval: Option<&'a Dataset>,
    pub on_epoch: Option<EpochCallback<'a>>,
}

impl<'a> Hooks<'a> {
    pub fn with_eval(eval: &'a Dataset) -> Self {
        Hooks {
            eval: Some(eval),
            on_epoch: None,
        }
    }
}

/// One batch as seen by a phase.
pub(crate) struct Batch<'b> {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub truth: Tensor,
    pub indices: &'b [usize],
}

/// What a phase reports back for one batch. The first loss is the one
/// the plateau schedule monitors.
pub(crate) struct BatchOutcome {
    pub losses: Vec<(String, f64)>,
    pub logits: Tensor,
}

fn check_finite(phase: &str, what: &str, value: f64, epoch: usize, batch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!(
            "{phase}: {what} loss is {value} at epoch {epoch}, batch {batch}; lower the learning rate"
        )))
    }
}

fn correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    super::eval::argmax_rows(&logits.to_vec(), k)
        .iter()
        .zip(labels)
        .filter(|(p, t)| p == t)
        .count()
}

pub(crate) fn run_epochs(
    phase: &str,
    model: &dyn Classifier,
    data: &Dataset,
    cfg: &TrainConfig,
    opt: &mut Sgd,
    hooks: &mut Hooks,
    mut step: impl FnMut(&Batch, &mut Sgd, &mut ChaCha8Rng) -> Result<BatchOutcome>,
) -> Result<PhaseResult> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data(format!("{phase}: training set is empty")));
    }
    if data.num_classes() != model.num_classes() {
        return Err(Error::Data(format!(
            "{phase}: model has {} classes, data has {}",
            model.num_classes(),
            data.num_classes()
        )));
    }
    let start = Instant::now();
    let mut schedule = LrSchedule::new(cfg);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch);
        opt.set_lr(lr);
        let steps_before = opt.steps();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut cfg.rng(Purpose::Shuffle, epoch));
        let mut aug = cfg.rng(Purpose::Augment, epoch);

        let mut sums: Vec<(String, f64)> = Vec::new();
        let (mut hits, mut seen, mut nb) = (0usize, 0usize, 0usize);
        for (b, idx) in batches(&order, cfg.batch_size).iter().enumerate() {
            let (x, labels) = data.batch(idx)?;
            let truth = one_hot(&labels, data.num_classes())?;
            let batch = Batch {
                x,
                labels,
                truth,
                indices: idx,
            };
            let out = step(&batch, opt, &mut aug)?;
            for (name, v) in &out.losses {
                check_finite(phase, name, *v, epoch + 1, b)?;
            }
            if sums.is_empty() {
                sums = out.losses.iter().map(|(n, _)| (n.clone(), 0.0)).collect();
            }
            for (acc, (_, v)) in sums.iter_mut().zip(&out.losses) {
                acc.1 += v;
            }
            hits += correct(&out.logits, &batch.labels);
            seen += batch.labels.len();
            nb += 1;
        }
        for s in &mut sums {
            s.1 /= nb as f64;
        }
        if let Some((_, monitored)) = sums.first() {
            schedule.observe(*monitored);
        }
        let test_accuracy = match hooks.eval {
            Some(ds) => Some(evaluate(model, ds, cfg.batch_size.max(16))?.accuracy),
            None => None,
        };
        let m = EpochMetrics {
            epoch: epoch + 1,
            lr,
            losses: sums,
            train_accuracy: hits as f64 / seen as f64,
            test_accuracy,
            steps: opt.steps() - steps_before,
        };
        log::info!(
            "{phase} epoch {}/{}: lr {:.6} {} train-acc {:.4}{}",
            m.epoch,
            cfg.epochs,
            m.lr,
            m.losses.iter().map(|(n, v)| format!("{n} {v:.4}")).collect::<Vec<_>>().join(" "),
            m.train_accuracy,
            m.test_accuracy.map(|a| format!(" test-acc {a:.4}")).unwrap_or_default()
        );
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&m)?;
        }
        metrics.push(m);
    }
    Ok(PhaseResult {
        metrics,
        elapsed: start.elapsed(),
        steps: opt.steps(),
    })
}
