use std::time::Duration;

use distilnas_tensor::optim::{cosine_annealing_lr, PlateauScheduler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// `lr(e) = base · (1 + cos(π e / epochs)) / 2`.
    Cosine,
    /// Multiply by `factor` after `patience` epochs without a lower
    /// training loss.
    Plateau { patience: usize, factor: f32 },
}

/// What the distillation MSE compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistillSpace {
    #[default]
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub schedule: Schedule,
    pub weight_decay: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the distillation term against cross-entropy.
    pub lambda: f32,
    pub seed: u64,
    pub brightness_range: (f32, f32),
    /// Learning-rate multiplier for the supernet mixing logits. Their
    /// gradients pass through a softmax over candidates and are small, so
    /// at a scale of 1 the logits barely move in a short search.
    pub arch_lr_scale: f32,
    pub distill_space: DistillSpace,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.002,
            schedule: Schedule::Cosine,
            weight_decay: 5e-4,
            momentum: 0.9,
            batch_size: 32,
            epochs: 300,
            lambda: 0.7,
            seed: 0,
            brightness_range: (0.5, 1.5),
            arch_lr_scale: 50.0,
            distill_space: DistillSpace::Probabilities,
        }
    }
}

impl TrainConfig {
    /// Defaults for spatio-temporal networks.
    pub fn for_3d() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            schedule: Schedule::Plateau {
                patience: 5,
                factor: 0.1,
            },
            weight_decay: 1e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.weight_decay < 0.0 || self.momentum < 0.0 || self.arch_lr_scale < 0.0 {
            return bad("weight_decay, momentum and arch_lr_scale must be non-negative".into());
        }
        let (lo, hi) = self.brightness_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("brightness_range {:?} must be positive and ordered", self.brightness_range));
        }
        if let Schedule::Plateau { patience, factor } = self.schedule {
            if patience == 0 || !(factor > 0.0 && factor <= 1.0) {
                return bad("plateau schedule needs patience >= 1 and factor in (0, 1]".into());
            }
        }
        Ok(())
    }

    /// The generator that initializes a phase's network weights.
    pub fn init_rng(&self) -> ChaCha8Rng {
        self.rng(Purpose::Init, 0)
    }

    /// A generator for one purpose and epoch, independent of all others.
    pub(crate) fn rng(&self, purpose: Purpose, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((purpose as u64) << 32) | epoch as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Purpose {
    Shuffle = 1,
    Augment = 2,
    Init = 3,
}

/// Per-epoch learning rate for either schedule.
pub(crate) struct LrSchedule {
    base: f32,
    epochs: usize,
    plateau: Option<PlateauScheduler>,
}

impl LrSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        LrSchedule {
            base: cfg.learning_rate,
            epochs: cfg.epochs,
            plateau: match cfg.schedule {
                Schedule::Cosine => None,
                Schedule::Plateau { patience, factor } => Some(PlateauScheduler::new(cfg.learning_rate, patience, factor)),
            },
        }
    }

    pub fn lr(&self, epoch: usize) -> f32 {
        match &self.plateau {
            None => cosine_annealing_lr(epoch, self.epochs, self.base),
            Some(p) => p.lr(),
        }
    }

    pub fn observe(&mut self, loss: f64) {
        if let Some(p) = self.plateau.as_mut() {
            p.observe(loss);
        }
    }
}

/// What one epoch of training produced.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub lr: f32,
    /// Mean loss of each named term over the epoch.
    pub losses: Vec<(String, f64)>,
    /// Accuracy of the final prediction on the training batches.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Optimizer updates performed in this epoch.
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseResult {
    pub metrics: Vec<EpochMetrics>,
    pub elapsed: Duration,
    pub steps: u64,
}

impl PhaseResult {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.metrics.last()
    }
}
