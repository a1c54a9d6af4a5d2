use distilnas_tensor::optim::{Sgd, SgdConfig};
use distilnas_tensor::{ops, Tensor};

use super::augment::brightness_augment;
use super::config::{PhaseResult, TrainConfig};
use super::epoch::{run_epochs, BatchOutcome, Hooks};
use super::loss::cross_entropy;
use crate::data::Dataset;
use crate::error::Result;
use crate::nn::{BackboneClassifier, Module, TeacherModel};

pub(crate) fn sgd(params: Vec<Tensor>, cfg: &TrainConfig) -> Result<Sgd> {
    Ok(Sgd::new(
        params,
        SgdConfig {
            lr: cfg.learning_rate,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        },
    )?)
}

/// Backpropagates `loss` into freshly cleared gradients and steps. A
/// non-finite loss is not applied; the epoch loop reports it.
pub(crate) fn update(opt: &mut Sgd, loss: &Tensor) -> Result<f64> {
    let v = loss.item() as f64;
    if v.is_finite() {
        loss.backward()?;
    }
    opt.step();
    Ok(v)
}

/// One stage-`n` update (0-based): cross-entropy of stage `n`'s head on
/// `x`, through segments `1..=n` only.
pub fn stage_step(teacher: &TeacherModel, opt: &mut Sgd, n: usize, x: &Tensor, truth: &Tensor) -> Result<f64> {
    opt.zero_grad();
    let p = ops::softmax(&teacher.stage_logits(n, x, true)?, 1)?;
    update(opt, &cross_entropy(&p, truth)?)
}

/// The aggregation update over every segment; returns the loss and the
/// detached logits.
pub fn aggregate_step(teacher: &TeacherModel, opt: &mut Sgd, x: &Tensor, truth: &Tensor) -> Result<(f64, Tensor)> {
    opt.zero_grad();
    let logits = teacher.aggregate_logits(x, true)?;
    let v = update(opt, &cross_entropy(&ops::softmax(&logits, 1)?, truth)?)?;
    Ok((v, logits.detach()))
}

/// Progressive training of the teacher, shallow to deep.
///
/// For every batch, each stage `n = 1..N` sees its own brightness-augmented
/// copy of the input, runs through segments `1..=n` and its own head, and
/// is updated immediately; the aggregation stage then sees the original
/// input through every segment and is updated last. One batch therefore
/// costs `N + 1` optimizer steps, and a stage-`n` step never moves
/// segments deeper than `n` (they receive no gradient).
pub fn train_teacher_progressive(teacher: &TeacherModel, data: &Dataset, cfg: &TrainConfig, mut hooks: Hooks) -> Result<PhaseResult> {
    let mut opt = sgd(teacher.parameters(), cfg)?;
    let stages = teacher.num_stages();
    run_epochs("teacher", teacher, data, cfg, &mut opt, &mut hooks, |batch, opt, rng| {
        let mut stage_losses = Vec::with_capacity(stages);
        for n in 0..stages {
            let input = brightness_augment(&batch.x, cfg.brightness_range, rng)?;
            let v = stage_step(teacher, opt, n, &input, &batch.truth)?;
            stage_losses.push((format!("stage{}", n + 1), v));
        }
        let (v, logits) = aggregate_step(teacher, opt, &batch.x, &batch.truth)?;
        let mut losses = vec![("aggregate".to_string(), v)];
        losses.extend(stage_losses);
        Ok(BatchOutcome { losses, logits })
    })
}

/// Plain end-to-end training of the same backbone with a pooled linear
/// head, one brightness-augmented step per batch.
pub fn train_backbone_baseline(model: &BackboneClassifier, data: &Dataset, cfg: &TrainConfig, mut hooks: Hooks) -> Result<PhaseResult> {
    let mut opt = sgd(model.parameters(), cfg)?;
    run_epochs("baseline", model, data, cfg, &mut opt, &mut hooks, |batch, opt, rng| {
        opt.zero_grad();
        let input = brightness_augment(&batch.x, cfg.brightness_range, rng)?;
        let logits = model.logits(&input, true)?;
        let v = update(opt, &cross_entropy(&ops::softmax(&logits, 1)?, &batch.truth)?)?;
        Ok(BatchOutcome {
            losses: vec![("ce".to_string(), v)],
            logits: logits.detach(),
        })
    })
}
