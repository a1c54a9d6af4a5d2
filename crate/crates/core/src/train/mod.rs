//! The three training phases and their losses.

mod augment;
mod config;
mod distill;
mod epoch;
mod eval;
mod loss;
mod progressive;

pub use augment::brightness_augment;
pub use config::{DistillSpace, EpochMetrics, PhaseResult, Schedule, TrainConfig};
pub use distill::{run_search, run_transfer, train_student, train_supernet, Init, SearchOutcome, TeacherTargets};
pub use epoch::{EpochCallback, Hooks};
pub use eval::{evaluate, f1_score, predict_all, ClassMetrics, MetricsReport};
pub use loss::{cross_entropy, distillation_loss, mse, one_hot, search_loss, transfer_loss, DistillLoss, LOG_FLOOR};
pub use progressive::{aggregate_step, stage_step, train_backbone_baseline, train_teacher_progressive};
