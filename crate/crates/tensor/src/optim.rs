//! SGD with momentum and weight decay, and learning-rate schedules.

use crate::error::{arg_err, Result};
use crate::tensor::Tensor;

/// One SGD-with-momentum update of a single parameter buffer:
/// `v = μ·v + g + wd·p` (`v = g + wd·p` on the first step), then
/// `p -= lr·v`.
pub fn sgd_step(param: &mut [f32], grad: &[f32], velocity: &mut Option<Vec<f32>>, lr: f32, weight_decay: f32, momentum: f32) {
    match velocity.as_mut() {
        None => {
            let v: Vec<f32> = param.iter().zip(grad).map(|(p, g)| g + weight_decay * p).collect();
            param.iter_mut().zip(&v).for_each(|(p, v)| *p -= lr * v);
            *velocity = Some(v);
        }
        Some(v) => {
            for ((p, g), vi) in param.iter_mut().zip(grad).zip(v.iter_mut()) {
                *vi = momentum * *vi + g + weight_decay * *p;
                *p -= lr * *vi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.002,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

struct Slot {
    param: Tensor,
    velocity: Option<Vec<f32>>,
    weight_decay: f32,
    lr_scale: f32,
}

/// Stochastic gradient descent over a fixed parameter list.
///
/// Parameters without a gradient are skipped entirely, momentum included,
/// so a partial forward pass never moves untouched weights.
pub struct Sgd {
    cfg: SgdConfig,
    slots: Vec<Slot>,
    steps: u64,
}

impl Sgd {
    pub fn new(params: Vec<Tensor>, cfg: SgdConfig) -> Result<Sgd> {
        if !(cfg.lr > 0.0) {
            return Err(arg_err("sgd", format!("learning rate must be positive, got {}", cfg.lr)));
        }
        let mut opt = Sgd {
            cfg,
            slots: Vec::new(),
            steps: 0,
        };
        opt.add_group(params, cfg.weight_decay, 1.0);
        Ok(opt)
    }

    /// Adds parameters with their own weight decay and learning-rate
    /// multiplier.
    pub fn add_group(&mut self, params: Vec<Tensor>, weight_decay: f32, lr_scale: f32) {
        for param in params {
            self.slots.push(Slot {
                param,
                velocity: None,
                weight_decay,
                lr_scale,
            });
        }
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.cfg.lr = lr;
    }

    pub fn lr(&self) -> f32 {
        self.cfg.lr
    }

    /// Number of completed `step` calls.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn zero_grad(&self) {
        for s in &self.slots {
            s.param.zero_grad();
        }
    }

    /// Applies one update and returns how many parameter tensors moved.
    pub fn step(&mut self) -> usize {
        let mut updated = 0;
        for slot in &mut self.slots {
            let Some(grad) = slot.param.grad() else { continue };
            let mut data = slot.param.data_mut();
            let lr = self.cfg.lr * slot.lr_scale;
            sgd_step(&mut data, &grad, &mut slot.velocity, lr, slot.weight_decay, self.cfg.momentum);
            updated += 1;
        }
        self.steps += 1;
        updated
    }

    /// Momentum buffers in parameter order (`None` before a parameter's
    /// first update).
    pub fn velocities(&self) -> Vec<Option<&[f32]>> {
        self.slots.iter().map(|s| s.velocity.as_deref()).collect()
    }

    pub fn set_velocities(&mut self, v: Vec<Option<Vec<f32>>>) -> Result<()> {
        if v.len() != self.slots.len() {
            return Err(arg_err("sgd", "velocity count does not match parameter count"));
        }
        for (slot, vel) in self.slots.iter_mut().zip(v) {
            if let Some(vel) = &vel {
                if vel.len() != slot.param.numel() {
                    return Err(arg_err("sgd", "velocity length does not match parameter"));
                }
            }
            slot.velocity = vel;
        }
        Ok(())
    }
}

/// `base_lr · (1 + cos(π·epoch/total)) / 2`.
pub fn cosine_annealing_lr(epoch: usize, total_epochs: usize, base_lr: f32) -> f32 {
    if total_epochs == 0 {
        return base_lr;
    }
    let t = epoch.min(total_epochs) as f64 / total_epochs as f64;
    (base_lr as f64 * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0) as f32
}

/// Learning rate after replaying `history` (lower is better) through a
/// reduce-on-plateau rule: every `patience` consecutive epochs without a
/// new best multiply the rate by `factor`.
pub fn plateau_lr(history: &[f64], base_lr: f32, patience: usize, factor: f32) -> f32 {
    let mut sched = PlateauScheduler::new(base_lr, patience, factor);
    for &v in history {
        sched.observe(v);
    }
    sched.lr()
}

#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f32,
    patience: usize,
    factor: f32,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(base_lr: f32, patience: usize, factor: f32) -> Self {
        PlateauScheduler {
            lr: base_lr,
            patience: patience.max(1),
            factor,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, metric: f64) -> f32 {
        if metric < self.best {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.factor;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }
}
