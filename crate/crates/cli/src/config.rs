//! The run configuration: a TOML file, overridden by `--set key=value`
//! flags, resolved against built-in defaults. Unknown keys are errors.
//!
//! ```toml
//! work_dir = "run"
//!
//! [data]
//! source = "synthetic"      # or "images" / "clips" with train_dir, test_dir
//! num_classes = 8
//! image_size = 64
//!
//! [teacher]
//! widths = [64, 128, 256]
//! descriptor_len = 128
//!
//! [train]                   # shared by every phase
//! epochs = 30
//! learning_rate = 0.02
//!
//! [phases.search]           # per-phase overrides of [train]
//! epochs = 10
//! ```

use std::path::{Path, PathBuf};

use distilnas_core::arch::Dims;
use distilnas_core::data::SyntheticConfig;
use distilnas_core::train::{DistillSpace, Schedule, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Images,
    Clips,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Side of the square network input.
    pub image_size: usize,
    pub background_complexity: usize,
    pub cue_size_range: [f32; 2],
    pub illumination_range: [f32; 2],
    pub seed: u64,
    /// Class-per-directory roots for `images` and `clips`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_dir: Option<PathBuf>,
    /// Images are resized to this side, then center-cropped to
    /// `image_size`. Equal to `image_size` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resize: Option<usize>,
    /// Frames sampled per clip.
    pub num_frames: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synthetic,
            num_classes: 8,
            train_per_class: 200,
            test_per_class: 100,
            image_size: 64,
            background_complexity: 3,
            cue_size_range: [0.1, 0.3],
            illumination_range: [0.6, 1.3],
            seed: 0,
            train_dir: None,
            test_dir: None,
            resize: None,
            num_frames: 16,
        }
    }
}

impl DataSection {
    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_classes: self.num_classes,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            image_size: self.image_size,
            background_complexity: self.background_complexity,
            cue_size_range: (self.cue_size_range[0], self.cue_size_range[1]),
            illumination_range: (self.illumination_range[0], self.illumination_range[1]),
            seed: self.seed,
        }
    }

    pub fn dims(&self) -> Dims {
        match self.source {
            DataSource::Clips => Dims::Three,
            _ => Dims::Two,
        }
    }

    /// Shape of one sample without the batch axis.
    pub fn sample_shape(&self) -> Vec<usize> {
        let s = self.image_size;
        match self.dims() {
            Dims::Two => vec![3, s, s],
            Dims::Three => vec![3, self.num_frames, s, s],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSection {
    /// Channel width of each backbone segment; one stage per entry.
    pub widths: Vec<usize>,
    /// Length of each stage descriptor.
    pub descriptor_len: usize,
}

impl Default for TeacherSection {
    fn default() -> Self {
        TeacherSection {
            widths: vec![64, 128, 256],
            descriptor_len: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Plateau,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Probabilities,
    Logits,
}

/// Training hyperparameters; every field optional so a section can
/// override only part of another.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau_patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plateau_factor: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub brightness_range: Option<[f32; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch_lr_scale: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distill_space: Option<SpaceKind>,
}

impl TrainSection {
    /// Every field set, from `base`.
    fn from_config(base: &TrainConfig) -> Self {
        let (schedule, patience, factor) = match base.schedule {
            Schedule::Cosine => (ScheduleKind::Cosine, 5, 0.1),
            Schedule::Plateau { patience, factor } => (ScheduleKind::Plateau, patience, factor),
        };
        TrainSection {
            learning_rate: Some(base.learning_rate),
            schedule: Some(schedule),
            plateau_patience: Some(patience),
            plateau_factor: Some(factor),
            weight_decay: Some(base.weight_decay),
            momentum: Some(base.momentum),
            batch_size: Some(base.batch_size),
            epochs: Some(base.epochs),
            lambda: Some(base.lambda),
            seed: Some(base.seed),
            brightness_range: Some([base.brightness_range.0, base.brightness_range.1]),
            arch_lr_scale: Some(base.arch_lr_scale),
            distill_space: Some(match base.distill_space {
                DistillSpace::Probabilities => SpaceKind::Probabilities,
                DistillSpace::Logits => SpaceKind::Logits,
            }),
        }
    }

    /// `self` with unset fields taken from `lower`.
    fn over(&self, lower: &TrainSection) -> TrainSection {
        macro_rules! pick {
            ($($f:ident),*) => { TrainSection { $($f: self.$f.or(lower.$f)),* } };
        }
        pick!(
            learning_rate,
            schedule,
            plateau_patience,
            plateau_factor,
            weight_decay,
            momentum,
            batch_size,
            epochs,
            lambda,
            seed,
            brightness_range,
            arch_lr_scale,
            distill_space
        )
    }

    /// Requires every field to be set (see [`RunConfig::resolve`]).
    fn to_config(&self) -> CliResult<TrainConfig> {
        let need = |name: &str| CliError::Internal(format!("train.{name} unresolved"));
        let cfg = TrainConfig {
            learning_rate: self.learning_rate.ok_or_else(|| need("learning_rate"))?,
            schedule: match self.schedule.ok_or_else(|| need("schedule"))? {
                ScheduleKind::Cosine => Schedule::Cosine,
                ScheduleKind::Plateau => Schedule::Plateau {
                    patience: self.plateau_patience.ok_or_else(|| need("plateau_patience"))?,
                    factor: self.plateau_factor.ok_or_else(|| need("plateau_factor"))?,
                },
            },
            weight_decay: self.weight_decay.ok_or_else(|| need("weight_decay"))?,
            momentum: self.momentum.ok_or_else(|| need("momentum"))?,
            batch_size: self.batch_size.ok_or_else(|| need("batch_size"))?,
            epochs: self.epochs.ok_or_else(|| need("epochs"))?,
            lambda: self.lambda.ok_or_else(|| need("lambda"))?,
            seed: self.seed.ok_or_else(|| need("seed"))?,
            brightness_range: self.brightness_range.map(|[a, b]| (a, b)).ok_or_else(|| need("brightness_range"))?,
            arch_lr_scale: self.arch_lr_scale.ok_or_else(|| need("arch_lr_scale"))?,
            distill_space: match self.distill_space.ok_or_else(|| need("distill_space"))? {
                SpaceKind::Probabilities => DistillSpace::Probabilities,
                SpaceKind::Logits => DistillSpace::Logits,
            },
        };
        Ok(cfg)
    }
}

/// Per-phase overrides of `[train]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseSections {
    pub teacher: TrainSection,
    pub baseline: TrainSection,
    pub search: TrainSection,
    pub transfer: TrainSection,
    pub scratch: TrainSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Fresh,
    Inherit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    /// `fresh` re-initializes the student; `inherit` starts from the
    /// supernet's winning branches.
    pub init: InitMode,
}

impl Default for TransferSection {
    fn default() -> Self {
        TransferSection { init: InitMode::Fresh }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    /// Also train the plain backbone and the from-scratch student, the
    /// reference points for progressive training and distillation.
    pub baselines: bool,
    pub eval_batch_size: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            baselines: false,
            eval_batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Holds data, checkpoints and reports.
    pub work_dir: PathBuf,
    pub data: DataSection,
    pub teacher: TeacherSection,
    pub train: TrainSection,
    pub phases: PhaseSections,
    pub transfer: TransferSection,
    pub pipeline: PipelineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            work_dir: PathBuf::from("run"),
            data: DataSection::default(),
            teacher: TeacherSection::default(),
            train: TrainSection::default(),
            phases: PhaseSections::default(),
            transfer: TransferSection::default(),
            pipeline: PipelineSection::default(),
        }
    }
}

/// The phases that train something.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPhase {
    Teacher,
    Baseline,
    Search,
    Transfer,
    Scratch,
}

fn parse_value(raw: &str) -> toml::Value {
    // Anything that does not parse as a TOML value is taken as a bare string.
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}`: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text` (possibly empty), applies `key=value` overrides and
    /// fills in defaults.
    pub fn from_toml(text: &str, overrides: &[String]) -> CliResult<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
            set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.resolve()
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides).map_err(|e| match (e, path) {
            (CliError::Config(m), Some(p)) => CliError::Config(format!("{}: {m}", p.display())),
            (e, _) => e,
        })
    }

    /// Fills every unset `[train]` field from the defaults for the data's
    /// dimensionality and validates the result. Runs default to 30 epochs;
    /// for that budget the 2d learning rate is raised tenfold, which the
    /// 64×64 synthetic task needs to converge.
    pub fn resolve(mut self) -> CliResult<Self> {
        let base = match self.data.dims() {
            Dims::Two => TrainConfig {
                epochs: 30,
                learning_rate: 0.02,
                ..TrainConfig::default()
            },
            Dims::Three => TrainConfig {
                epochs: 30,
                ..TrainConfig::for_3d()
            },
        };
        self.train = self.train.over(&TrainSection::from_config(&base));
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> CliResult<()> {
        self.data.synthetic().validate()?;
        if self.data.source != DataSource::Synthetic && (self.data.train_dir.is_none() || self.data.test_dir.is_none()) {
            return Err(CliError::Config("data.train_dir and data.test_dir are required for image or clip data".into()));
        }
        if self.data.image_size % 16 != 0 {
            return Err(CliError::Config(format!(
                "data.image_size {} must be a multiple of 16",
                self.data.image_size
            )));
        }
        if self.data.resize.is_some_and(|r| r < self.data.image_size) {
            return Err(CliError::Config("data.resize must be at least data.image_size".into()));
        }
        if self.teacher.widths.len() < 2 {
            return Err(CliError::Config("teacher.widths needs at least two segments".into()));
        }
        let reduction = 2usize << self.teacher.widths.len();
        if self.data.image_size < reduction {
            return Err(CliError::Config(format!(
                "data.image_size {} is smaller than the teacher's down-sampling factor {reduction}",
                self.data.image_size
            )));
        }
        if self.pipeline.eval_batch_size == 0 {
            return Err(CliError::Config("pipeline.eval_batch_size must be positive".into()));
        }
        for phase in [
            TrainPhase::Teacher,
            TrainPhase::Baseline,
            TrainPhase::Search,
            TrainPhase::Transfer,
            TrainPhase::Scratch,
        ] {
            self.train_config(phase)?.validate()?;
        }
        Ok(())
    }

    /// `[train]` with the phase's overrides applied.
    pub fn train_config(&self, phase: TrainPhase) -> CliResult<TrainConfig> {
        let section = match phase {
            TrainPhase::Teacher => &self.phases.teacher,
            TrainPhase::Baseline => &self.phases.baseline,
            TrainPhase::Search => &self.phases.search,
            TrainPhase::Transfer => &self.phases.transfer,
            TrainPhase::Scratch => &self.phases.scratch,
        };
        let mut cfg = section.over(&self.train).to_config()?;
        if phase == TrainPhase::Scratch {
            cfg.lambda = 0.0;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Internal(format!("config does not serialize: {e}")))
    }
}
