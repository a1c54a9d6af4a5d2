//! The pipeline phases. Each reads its prerequisites from the work
//! directory, writes its outputs there, and echoes the resolved config.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use distilnas_core::arch::{derive_architecture, ArchitectureSpec, MixWeights};
use distilnas_core::data::{
    export_dataset, generate_synthetic, load_clip_directory, load_image_directory, Dataset, Split,
};
use distilnas_core::nn::{BackboneClassifier, Module, PlainCnnBackbone, Student, TeacherModel};
use distilnas_core::train::{
    evaluate, run_search, run_transfer, train_backbone_baseline, train_teacher_progressive, EpochMetrics, Hooks, Init,
    MetricsReport, PhaseResult, TrainConfig,
};
use serde::Serialize;

use crate::checkpoint::{self, Descriptor, Model, Position};
use crate::config::{DataSource, InitMode, RunConfig, TrainPhase};
use crate::error::{CliError, CliResult};
use crate::workdir::{read_file, write_file, WorkDir};

/// Every phase, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    GenData,
    TrainTeacher,
    TrainBaseline,
    Search,
    Derive,
    Transfer,
    TrainScratch,
    Eval,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::GenData => "gen-data",
            Phase::TrainTeacher => "train-teacher",
            Phase::TrainBaseline => "train-baseline",
            Phase::Search => "search",
            Phase::Derive => "derive",
            Phase::Transfer => "transfer",
            Phase::TrainScratch => "train-scratch",
            Phase::Eval => "eval",
        }
    }

    /// Whether the phase's outputs are already in `wd`.
    pub fn is_complete(self, wd: &WorkDir) -> bool {
        match self {
            Phase::GenData => wd.data_marker().is_file(),
            Phase::TrainTeacher => checkpoint::exists(&wd.checkpoint("teacher")),
            Phase::TrainBaseline => checkpoint::exists(&wd.checkpoint("baseline")),
            Phase::Search => checkpoint::exists(&wd.checkpoint("supernet")) && wd.mix_weights().is_file(),
            Phase::Derive => wd.student_arch().is_file(),
            Phase::Transfer => checkpoint::exists(&wd.checkpoint("student")),
            Phase::TrainScratch => checkpoint::exists(&wd.checkpoint("scratch")),
            Phase::Eval => wd.eval_report().is_file(),
        }
    }

    pub fn run(self, cfg: &RunConfig, wd: &WorkDir) -> CliResult<()> {
        echo_config(cfg, wd, self)?;
        match self {
            Phase::GenData => gen_data(cfg, wd),
            Phase::TrainTeacher => train_teacher(cfg, wd),
            Phase::TrainBaseline => train_baseline(cfg, wd),
            Phase::Search => search(cfg, wd),
            Phase::Derive => derive(cfg, wd).map(|_| ()),
            Phase::Transfer => transfer(cfg, wd),
            Phase::TrainScratch => train_scratch(cfg, wd),
            Phase::Eval => eval(cfg, wd, &[]).map(|_| ()),
        }
    }
}

fn echo_config(cfg: &RunConfig, wd: &WorkDir, phase: Phase) -> CliResult<()> {
    write_file(&wd.report(&format!("{}.config.toml", phase.name())), &cfg.to_toml()?)
}

/// Loads one split as configured.
pub fn load_data(cfg: &RunConfig, wd: &WorkDir, split: Split) -> CliResult<Dataset> {
    let d = &cfg.data;
    let ds = match d.source {
        DataSource::Synthetic => {
            if !wd.data_marker().is_file() {
                return Err(CliError::Missing {
                    what: "synthetic data".into(),
                    path: wd.data(split),
                    phase: "gen-data",
                });
            }
            load_image_directory(&wd.data(split), d.image_size, split)?
        }
        DataSource::Images => {
            let root = match split {
                Split::Train => d.train_dir.as_deref(),
                Split::Test => d.test_dir.as_deref(),
            }
            .ok_or_else(|| CliError::Config("data.train_dir / data.test_dir not set".into()))?;
            let resize = d.resize.unwrap_or(d.image_size);
            let mut ds = load_image_directory(root, resize, split)?;
            if resize > d.image_size {
                center_crop_all(&mut ds, resize, d.image_size)?;
            }
            ds
        }
        DataSource::Clips => {
            let root = match split {
                Split::Train => d.train_dir.as_deref(),
                Split::Test => d.test_dir.as_deref(),
            }
            .ok_or_else(|| CliError::Config("data.train_dir / data.test_dir not set".into()))?;
            load_clip_directory(root, d.num_frames, d.image_size, split)?
        }
    };
    if ds.num_classes() != d.num_classes {
        return Err(CliError::Config(format!(
            "data.num_classes is {} but {} holds {} classes",
            d.num_classes,
            split.name(),
            ds.num_classes()
        )));
    }
    Ok(ds)
}

fn center_crop_all(ds: &mut Dataset, resize: usize, crop: usize) -> CliResult<()> {
    use distilnas_core::data::Image;
    let off = (resize - crop) / 2;
    for img in &mut ds.images {
        let full = Image::new(3, resize, resize, std::mem::take(img))?;
        *img = full.crop(off, off, crop, crop)?.data;
    }
    ds.sample_shape = vec![3, crop, crop];
    Ok(())
}

pub fn gen_data(cfg: &RunConfig, wd: &WorkDir) -> CliResult<()> {
    if cfg.data.source != DataSource::Synthetic {
        return Err(CliError::Usage("gen-data only applies to data.source = \"synthetic\"".into()));
    }
    let syn = cfg.data.synthetic();
    let data = generate_synthetic(&syn)?;
    let root = wd.root.join("data");
    if root.exists() {
        fs::remove_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
    }
    export_dataset(&data.train, &wd.data(Split::Train))?;
    export_dataset(&data.test, &wd.data(Split::Test))?;
    let echo = toml::to_string(&cfg.data).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&wd.data_marker(), &echo)?;
    println!(
        "gen-data: {} train / {} test images, {} classes, {}x{} -> {}",
        data.train.len(),
        data.test.len(),
        syn.num_classes,
        syn.image_size,
        syn.image_size,
        root.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EpochRecord<'a> {
    phase: &'a str,
    epoch: usize,
    lr: f32,
    losses: BTreeMap<&'a str, f64>,
    train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_accuracy: Option<f64>,
    steps: u64,
}

/// Hooks that stream one JSON line per epoch to
/// `reports/<phase>.metrics.jsonl` (truncated first).
fn metrics_hooks<'a>(wd: &WorkDir, phase: &'static str) -> CliResult<Hooks<'a>> {
    let path = wd.report(&format!("{phase}.metrics.jsonl"));
    write_file(&path, "")?;
    let mut file = fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .map_err(|e| CliError::io(&path, e))?;
    Ok(Hooks {
        eval: None,
        on_epoch: Some(Box::new(move |m: &EpochMetrics| {
            let rec = EpochRecord {
                phase,
                epoch: m.epoch,
                lr: m.lr,
                losses: m.losses.iter().map(|(k, v)| (k.as_str(), *v)).collect(),
                train_accuracy: m.train_accuracy,
                test_accuracy: m.test_accuracy,
                steps: m.steps,
            };
            let line = serde_json::to_string(&rec).map_err(|e| distilnas_core::Error::State(e.to_string()))?;
            writeln!(file, "{line}").map_err(|source| distilnas_core::Error::Io {
                path: path.clone(),
                source,
            })?;
            Ok(())
        })),
    })
}

fn position(phase: &str, cfg: &TrainConfig, result: &PhaseResult) -> Position {
    Position {
        phase: phase.to_string(),
        epoch: result.metrics.len(),
        optimizer_steps: result.steps,
        rng_seed: cfg.seed,
        final_lr: result.last().map_or(cfg.learning_rate, |m| m.lr),
    }
}

fn summarize(phase: &str, result: &PhaseResult, dir: &Path) {
    match result.last() {
        Some(m) => println!(
            "{phase}: {} epochs, {} optimizer steps, final train accuracy {:.4} ({:.1?}) -> {}",
            result.metrics.len(),
            result.steps,
            m.train_accuracy,
            result.elapsed,
            dir.display()
        ),
        None => println!("{phase}: 0 epochs -> {}", dir.display()),
    }
}

pub fn teacher_descriptor(cfg: &RunConfig) -> Descriptor {
    Descriptor::Teacher {
        dims: cfg.data.dims().to_string(),
        input_channels: 3,
        widths: cfg.teacher.widths.clone(),
        descriptor_len: cfg.teacher.descriptor_len,
        classes: cfg.data.num_classes,
    }
}

pub fn train_teacher(cfg: &RunConfig, wd: &WorkDir) -> CliResult<()> {
    let train = load_data(cfg, wd, Split::Train)?;
    let tcfg = cfg.train_config(TrainPhase::Teacher)?;
    let rng = &mut tcfg.init_rng();
    let dims = cfg.data.dims();
    let backbone = PlainCnnBackbone::new(3, &cfg.teacher.widths, dims, rng)?;
    let teacher = TeacherModel::new(Box::new(backbone), cfg.teacher.descriptor_len, cfg.data.num_classes, dims, rng)?;
    let result = train_teacher_progressive(&teacher, &train, &tcfg, metrics_hooks(wd, "train-teacher")?)?;
    let dir = wd.checkpoint("teacher");
    checkpoint::save(&dir, &teacher, teacher_descriptor(cfg), position("train-teacher", &tcfg, &result))?;
    summarize("train-teacher", &result, &dir);
    Ok(())
}

pub fn train_baseline(cfg: &RunConfig, wd: &WorkDir) -> CliResult<()> {
    let train = load_data(cfg, wd, Split::Train)?;
    let tcfg = cfg.train_config(TrainPhase::Baseline)?;
    let rng = &mut tcfg.init_rng();
    let backbone = PlainCnnBackbone::new(3, &cfg.teacher.widths, cfg.data.dims(), rng)?;
    let model = BackboneClassifier::new(Box::new(backbone), cfg.data.num_classes, rng)?;
    let result = train_backbone_baseline(&model, &train, &tcfg, metrics_hooks(wd, "train-baseline")?)?;
    let dir = wd.checkpoint("baseline");
    let descriptor = Descriptor::Baseline {
        dims: cfg.data.dims().to_string(),
        input_channels: 3,
        widths: cfg.teacher.widths.clone(),
        classes: cfg.data.num_classes,
    };
    checkpoint::save(&dir, &model, descriptor, position("train-baseline", &tcfg, &result))?;
    summarize("train-baseline", &result, &dir);
    Ok(())
}

/// The trained teacher; a missing checkpoint names `train-teacher`.
pub fn load_teacher(wd: &WorkDir) -> CliResult<TeacherModel> {
    let dir = wd.checkpoint("teacher");
    if !dir.exists() {
        return Err(CliError::Missing {
            what: "teacher checkpoint".into(),
            path: dir,
            phase: "train-teacher",
        });
    }
    match checkpoint::load_model(&dir)?.0 {
        Model::Teacher(t) => Ok(t),
        _ => Err(CliError::checkpoint(&dir, "does not hold a teacher")),
    }
}

/// Runs `f` and fails if it changed any teacher tensor.
fn with_frozen_teacher<T>(teacher: &TeacherModel, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
    let before = teacher.state();
    let out = f()?;
    let same = teacher
        .state()
        .iter()
        .zip(&before)
        .all(|(a, b)| a.2.iter().zip(&b.2).all(|(x, y)| x.to_bits() == y.to_bits()));
    if !same {
        return Err(CliError::Internal("teacher tensors changed while the teacher was frozen".into()));
    }
    Ok(out)
}

pub fn search(cfg: &RunConfig, wd: &WorkDir) -> CliResult<()> {
    let teacher = load_teacher(wd)?;
    let train = load_data(cfg, wd, Split::Train)?;
    let tcfg = cfg.train_config(TrainPhase::Search)?;
    let space = checkpoint::standard_space(cfg.data.dims())?;
    let outcome = with_frozen_teacher(&teacher, || {
        Ok(run_search(&space, &teacher, &train, &tcfg, metrics_hooks(wd, "search")?)?)
    })?;
    let dir = wd.checkpoint("supernet");
    let descriptor = Descriptor::Supernet {
        dims: cfg.data.dims().to_string(),
        classes: cfg.data.num_classes,
    };
    checkpoint::save(&dir, &outcome.supernet, descriptor, position("search", &tcfg, &outcome.result))?;
    write_file(&wd.mix_weights(), &outcome.weights.to_string())?;
    summarize("search", &outcome.result, &dir);
    for (b, (a, p)) in outcome
        .weights
        .alpha_probabilities()
        .iter()
        .zip(outcome.weights.beta_probabilities())
        .enumerate()
    {
        let fmt = |v: &[f32]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
        println!("  block{}: conv [{}]  pool [{}]", b + 1, fmt(a), fmt(&p));
    }
    Ok(())
}

/// Reads mixing weights from a text file or a supernet checkpoint.
pub fn read_mix_weights(path: &Path) -> CliResult<MixWeights> {
    if path.is_dir() {
        return match checkpoint::load_model(path)?.0 {
            Model::Supernet(s) => Ok(s.mix_weights()),
            _ => Err(CliError::checkpoint(path, "does not hold a supernet")),
        };
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text.parse()?)
}

pub fn derive(cfg: &RunConfig, wd: &WorkDir) -> CliResult<ArchitectureSpec> {
    let path = wd.mix_weights();
    read_file(&path, "searched mixing weights", "search")?;
    let weights = read_mix_weights(&path)?;
    let space = checkpoint::standard_space(cfg.data.dims())?;
    let (arch, choice) = derive_architecture(&space, &weights, cfg.data.num_classes)?;
    write_file(&wd.student_arch(), &arch.to_string())?;
    println!(
        "derive: conv candidates {:?}, pooling {:?} -> {}",
        choice.conv.iter().map(|c| c + 1).collect::<Vec<_>>(),
        choice.pool.iter().map(|&p| space.blocks[0].pool[p].to_string()).collect::<Vec<_>>(),
        wd.student_arch().display()
    );
    print!("{arch}");
    Ok(arch)
}

/// `derive` as a standalone command: echoes the config first.
pub fn derive_with_echo(cfg: &RunConfig, wd: &WorkDir) -> CliResult<ArchitectureSpec> {
    echo_config(cfg, wd, Phase::Derive)?;
    derive(cfg, wd)
}

/// `eval` as a standalone command: echoes the config first.
pub fn eval_with_echo(cfg: &RunConfig, wd: &WorkDir, names: &[String]) -> CliResult<Vec<(String, MetricsReport)>> {
    echo_config(cfg, wd, Phase::Eval)?;
    eval(cfg, wd, names)
}

pub fn load_student_arch(wd: &WorkDir) -> CliResult<ArchitectureSpec> {
    Ok(read_file(&wd.student_arch(), "derived student architecture", "derive")?.parse()?)
}

fn save_student(wd: &WorkDir, name: &str, phase: &str, student: &Student, tcfg: &TrainConfig, result: &PhaseResult) -> CliResult<()> {
    let dir = wd.checkpoint(name);
    let descriptor = Descriptor::Student {
        architecture: student.arch.to_string(),
    };
    checkpoint::save(&dir, student, descriptor, position(phase, tcfg, result))?;
    summarize(phase, result, &dir);
    Ok(())
}

pub fn transfer(cfg: &RunConfig, wd: &WorkDir) -> CliResult<()> {
    let arch = load_student_arch(wd)?;
    let teacher = load_teacher(wd)?;
    let train = load_data(cfg, wd, Split::Train)?;
    let tcfg = cfg.train_config(TrainPhase::Transfer)?;
    let supernet = match cfg.transfer.init {
        InitMode::Fresh => None,
        InitMode::Inherit => {
            let dir = wd.checkpoint("supernet");
            if !checkpoint::exists(&dir) {
                return Err(CliError::Missing {
                    what: "supernet checkpoint (required by transfer.init = \"inherit\")".into(),
                    path: dir,
                    phase: "search",
                });
            }
            match checkpoint::load_model(&dir)?.0 {
                Model::Supernet(s) => Some(s),
                _ => return Err(CliError::checkpoint(&dir, "does not hold a supernet")),
            }
        }
    };
    let choice = match &supernet {
        Some(s) => Some(s.mix_weights().choice()?),
        None => None,
    };
    let init = match (&supernet, &choice) {
        (Some(supernet), Some(choice)) => Init::Inherit { supernet, choice },
        _ => Init::Fresh,
    };
    let (student, result) = with_frozen_teacher(&teacher, || {
        Ok(run_transfer(&arch, Some(&teacher), &train, &tcfg, init, metrics_hooks(wd, "transfer")?)?)
    })?;
    save_student(wd, "student", "transfer", &student, &tcfg, &result)
}

pub fn train_scratch(cfg: &RunConfig, wd: &WorkDir) -> CliResult<()> {
    let arch = load_student_arch(wd)?;
    let train = load_data(cfg, wd, Split::Train)?;
    let tcfg = cfg.train_config(TrainPhase::Scratch)?;
    let (student, result) = run_transfer(&arch, None, &train, &tcfg, Init::Fresh, metrics_hooks(wd, "train-scratch")?)?;
    save_student(wd, "scratch", "train-scratch", &student, &tcfg, &result)
}

/// Checkpoints `eval` knows, in report order.
pub const MODEL_NAMES: [&str; 5] = ["teacher", "baseline", "supernet", "student", "scratch"];

#[derive(Debug, Serialize)]
struct ClassRecord<'a> {
    class: &'a str,
    precision: f64,
    recall: f64,
    f1: f64,
    support: usize,
}

#[derive(Debug, Serialize)]
struct ModelRecord<'a> {
    accuracy: f64,
    macro_f1: f64,
    per_class: Vec<ClassRecord<'a>>,
    confusion: &'a [Vec<usize>],
}

/// Evaluates each named checkpoint (all present ones when `names` is
/// empty) on the test split; writes `eval.json` and `eval.txt`.
pub fn eval(cfg: &RunConfig, wd: &WorkDir, names: &[String]) -> CliResult<Vec<(String, MetricsReport)>> {
    let test = load_data(cfg, wd, Split::Test)?;
    let names: Vec<String> = if names.is_empty() {
        MODEL_NAMES
            .iter()
            .filter(|n| **n != "supernet" && checkpoint::exists(&wd.checkpoint(n)))
            .map(|n| n.to_string())
            .collect()
    } else {
        names.to_vec()
    };
    if names.is_empty() {
        return Err(CliError::Missing {
            what: "trained model checkpoints".into(),
            path: wd.root.join("checkpoints"),
            phase: "train-teacher",
        });
    }
    let mut reports = Vec::new();
    for name in &names {
        if !MODEL_NAMES.contains(&name.as_str()) {
            return Err(CliError::Usage(format!("unknown model `{name}`; expected one of {MODEL_NAMES:?}")));
        }
        let dir = wd.checkpoint(name);
        if !checkpoint::exists(&dir) {
            return Err(CliError::Missing {
                what: format!("{name} checkpoint"),
                path: dir,
                phase: producer(name),
            });
        }
        let (model, _) = checkpoint::load_model(&dir)?;
        reports.push((name.clone(), evaluate(model.classifier(), &test, cfg.pipeline.eval_batch_size)?));
    }
    write_eval_reports(wd, &test, &reports)?;
    Ok(reports)
}

fn producer(name: &str) -> &'static str {
    match name {
        "teacher" => "train-teacher",
        "baseline" => "train-teacher --baseline",
        "supernet" => "search",
        "student" => "transfer",
        _ => "train-scratch",
    }
}

pub fn write_eval_reports(wd: &WorkDir, test: &Dataset, reports: &[(String, MetricsReport)]) -> CliResult<()> {
    let mut json = BTreeMap::new();
    let mut text = String::new();
    for (name, r) in reports {
        json.insert(
            name.as_str(),
            ModelRecord {
                accuracy: r.accuracy,
                macro_f1: r.macro_f1,
                per_class: r
                    .per_class
                    .iter()
                    .zip(&test.class_names)
                    .map(|(m, c)| ClassRecord {
                        class: c,
                        precision: m.precision,
                        recall: m.recall,
                        f1: m.f1,
                        support: m.support,
                    })
                    .collect(),
                confusion: &r.confusion,
            },
        );
        text += &format!("== {name}\n{}\n", r.summary(&test.class_names));
    }
    let body = serde_json::to_string_pretty(&json).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&wd.report("eval.txt"), &text)?;
    write_file(&wd.eval_report(), &(body + "\n"))?;
    print!("{text}");
    Ok(())
}

/// An untrained student of `arch`, for chance-level sanity checks.
pub fn eval_untrained(cfg: &RunConfig, wd: &WorkDir, arch: &ArchitectureSpec) -> CliResult<MetricsReport> {
    let test = load_data(cfg, wd, Split::Test)?;
    let student = Student::new(arch, &mut cfg.train_config(TrainPhase::Transfer)?.init_rng())?;
    let report = evaluate(&student, &test, cfg.pipeline.eval_batch_size)?;
    print!("== untrained\n{}", report.summary(&test.class_names));
    Ok(report)
}

/// Runs every phase not yet complete, in order; stops at the first
/// failure, naming the phase.
pub fn pipeline(cfg: &RunConfig, wd: &WorkDir) -> CliResult<()> {
    let mut phases = Vec::new();
    if cfg.data.source == DataSource::Synthetic {
        phases.push(Phase::GenData);
    }
    phases.push(Phase::TrainTeacher);
    if cfg.pipeline.baselines {
        phases.push(Phase::TrainBaseline);
    }
    phases.extend([Phase::Search, Phase::Derive, Phase::Transfer]);
    if cfg.pipeline.baselines {
        phases.push(Phase::TrainScratch);
    }
    phases.push(Phase::Eval);
    for phase in phases {
        if phase.is_complete(wd) {
            println!("{}: already complete, skipping", phase.name());
            continue;
        }
        log::info!("starting {}", phase.name());
        phase.run(cfg, wd).map_err(|e| CliError::Phase {
            phase: phase.name(),
            cause: Box::new(e),
        })?;
    }
    Ok(())
}

/// The classifier behind a checkpoint name, for `bench`.
pub fn load_named(wd: &WorkDir, name: &str) -> CliResult<Model> {
    let dir = wd.checkpoint(name);
    if !checkpoint::exists(&dir) {
        return Err(CliError::Missing {
            what: format!("{name} checkpoint"),
            path: dir,
            phase: producer(name),
        });
    }
    Ok(checkpoint::load_model(&dir)?.0)
}
