use distilnas_tensor::{ops, Tensor};

use super::config::{DistillSpace, PhaseResult, TrainConfig};
use super::epoch::{run_epochs, Batch, BatchOutcome, Hooks};
use super::eval::predict_all;
use super::loss::{cross_entropy, distillation_loss};
use super::progressive::{sgd, update};
use crate::arch::{derive_architecture, ArchitectureSpec, CandidateSpace, Choice, MixWeights};
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Classifier, Module, Student, Supernet};

/// The frozen teacher's outputs for every training sample, computed once in
/// evaluation mode. Because nothing augments the inputs of the search and
/// transfer phases, these equal what the teacher would produce per batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTargets {
    pub space: DistillSpace,
    pub classes: usize,
    rows: Vec<f32>,
}

impl TeacherTargets {
    pub fn compute(teacher: &dyn Classifier, data: &Dataset, batch_size: usize, space: DistillSpace) -> Result<Self> {
        if teacher.num_classes() != data.num_classes() {
            return Err(Error::Data(format!(
                "teacher predicts {} classes, data has {}",
                teacher.num_classes(),
                data.num_classes()
            )));
        }
        let classes = teacher.num_classes();
        let rows = match space {
            DistillSpace::Probabilities => predict_all(teacher, data, batch_size)?,
            DistillSpace::Logits => {
                let order: Vec<usize> = (0..data.len()).collect();
                let mut out = Vec::with_capacity(data.len() * classes);
                for idx in batches(&order, batch_size) {
                    out.extend(teacher.predict_logits(&data.batch(&idx)?.0)?.to_vec());
                }
                out
            }
        };
        if rows.len() != data.len() * classes {
            return Err(Error::Data("teacher produced the wrong number of outputs".into()));
        }
        Ok(TeacherTargets { space, classes, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `[B, K]` constant rows for the given sample indices.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let k = self.classes;
        let mut data = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            let row = self
                .rows
                .get(i * k..(i + 1) * k)
                .ok_or_else(|| Error::Data(format!("no teacher target for sample {i}")))?;
            data.extend_from_slice(row);
        }
        Ok(Tensor::from_vec(&[indices.len(), k], data)?)
    }
}

/// Loss of one batch: distillation against `targets` when present,
/// otherwise plain cross-entropy.
fn distill_step(logits: Tensor, batch: &Batch, targets: Option<&TeacherTargets>, cfg: &TrainConfig) -> Result<(Tensor, Vec<(String, f64)>, Tensor)> {
    let p = ops::softmax(&logits, 1)?;
    match targets {
        Some(t) => {
            let matched = match t.space {
                DistillSpace::Probabilities => &p,
                DistillSpace::Logits => &logits,
            };
            let l = distillation_loss(matched, &t.gather(batch.indices)?, &p, &batch.truth, cfg.lambda)?;
            let names = vec![
                ("total".to_string(), l.total.item() as f64),
                ("mse".to_string(), l.mse),
                ("ce".to_string(), l.ce),
            ];
            Ok((l.total, names, logits))
        }
        None => {
            let ce = cross_entropy(&p, &batch.truth)?;
            let v = ce.item() as f64;
            Ok((ce, vec![("total".to_string(), v), ("ce".to_string(), v)], logits))
        }
    }
}

fn check_targets(targets: Option<&TeacherTargets>, data: &Dataset, classes: usize, cfg: &TrainConfig) -> Result<()> {
    match targets {
        Some(t) if t.classes != classes || t.len() != data.len() => Err(Error::Data(format!(
            "teacher targets cover {} samples of {} classes, expected {} of {classes}",
            t.len(),
            t.classes,
            data.len()
        ))),
        None if cfg.lambda > 0.0 => Err(Error::Config(format!(
            "lambda {} needs a teacher; use lambda = 0 to train without one",
            cfg.lambda
        ))),
        _ => Ok(()),
    }
}

/// Trains all candidate weights and the mixing logits together on the
/// search loss (one loop, one loss). The mixing logits get no weight decay
/// and a learning rate scaled by `cfg.arch_lr_scale`.
pub fn train_supernet(supernet: &Supernet, targets: Option<&TeacherTargets>, data: &Dataset, cfg: &TrainConfig, mut hooks: Hooks) -> Result<PhaseResult> {
    check_targets(targets, data, supernet.num_classes(), cfg)?;
    let mut opt = sgd(supernet.weight_parameters(), cfg)?;
    opt.add_group(supernet.arch_parameters(), 0.0, cfg.arch_lr_scale);
    run_epochs("search", supernet, data, cfg, &mut opt, &mut hooks, |batch, opt, _| {
        opt.zero_grad();
        let (loss, losses, logits) = distill_step(supernet.logits(&batch.x, true)?, batch, targets, cfg)?;
        update(opt, &loss)?;
        Ok(BatchOutcome {
            losses,
            logits: logits.detach(),
        })
    })
}

pub struct SearchOutcome {
    pub supernet: Supernet,
    pub weights: MixWeights,
    pub choice: Choice,
    pub architecture: ArchitectureSpec,
    pub result: PhaseResult,
}

/// Builds a supernet over `space` with every mixing logit at 1, trains it
/// against the frozen teacher and derives the winning architecture.
pub fn run_search(space: &CandidateSpace, teacher: &dyn Classifier, data: &Dataset, cfg: &TrainConfig, hooks: Hooks) -> Result<SearchOutcome> {
    cfg.validate()?;
    let k = data.num_classes();
    if teacher.num_classes() != k {
        return Err(Error::Data(format!("teacher predicts {} classes, data has {k}", teacher.num_classes())));
    }
    let supernet = Supernet::new(space, &MixWeights::uniform(space), k, &mut cfg.init_rng())?;
    let targets = TeacherTargets::compute(teacher, data, cfg.batch_size.max(16), cfg.distill_space)?;
    let result = train_supernet(&supernet, Some(&targets), data, cfg, hooks)?;
    let weights = supernet.mix_weights();
    let (architecture, choice) = derive_architecture(space, &weights, k)?;
    Ok(SearchOutcome {
        supernet,
        weights,
        choice,
        architecture,
        result,
    })
}

/// Where the student's initial weights come from.
pub enum Init<'a> {
    Fresh,
    /// The winning branch of every block, copied out of a trained supernet.
    Inherit { supernet: &'a Supernet, choice: &'a Choice },
}

/// Trains `student` with the transfer loss against `targets`, or with
/// plain cross-entropy when there are none (which requires `lambda = 0`).
pub fn train_student(student: &Student, targets: Option<&TeacherTargets>, data: &Dataset, cfg: &TrainConfig, mut hooks: Hooks) -> Result<PhaseResult> {
    check_targets(targets, data, student.arch.num_classes, cfg)?;
    let mut opt = sgd(student.parameters(), cfg)?;
    run_epochs("student", student, data, cfg, &mut opt, &mut hooks, |batch, opt, _| {
        opt.zero_grad();
        let (loss, losses, logits) = distill_step(student.logits(&batch.x, true)?, batch, targets, cfg)?;
        update(opt, &loss)?;
        Ok(BatchOutcome {
            losses,
            logits: logits.detach(),
        })
    })
}

/// Builds the student for `arch` and transfers the teacher's knowledge
/// into it. With no teacher, `cfg.lambda` must be 0 and this is ordinary
/// supervised training from scratch.
pub fn run_transfer(arch: &ArchitectureSpec, teacher: Option<&dyn Classifier>, data: &Dataset, cfg: &TrainConfig, init: Init, hooks: Hooks) -> Result<(Student, PhaseResult)> {
    cfg.validate()?;
    let student = match init {
        Init::Fresh => Student::new(arch, &mut cfg.init_rng())?,
        Init::Inherit { supernet, choice } => {
            let s = supernet.extract_student(choice)?;
            if &s.arch != arch {
                return Err(Error::State(
                    "the supernet's winning branches do not form the requested architecture".into(),
                ));
            }
            s
        }
    };
    let targets = match teacher {
        Some(t) if cfg.lambda > 0.0 => Some(TeacherTargets::compute(t, data, cfg.batch_size.max(16), cfg.distill_space)?),
        _ => None,
    };
    let result = train_student(&student, targets.as_ref(), data, cfg, hooks)?;
    Ok((student, result))
}
