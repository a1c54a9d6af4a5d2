//! The `distilnas` command line: one subcommand per pipeline phase plus
//! the architecture tools, all driven by one TOML config.

pub mod checkpoint;
pub mod config;
mod error;
pub mod phases;
pub mod workdir;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use distilnas_core::analyzer::{
    benchmark_latency, count_macs_with, count_params, giga, group_digits, millions, FlopConvention, MacOptions,
};
use distilnas_core::arch::{derive_architecture, ArchitectureSpec, Dims};
use distilnas_core::nn::Student;

pub use error::{CliError, CliResult};

use config::RunConfig;
use phases::Phase;
use workdir::WorkDir;

#[derive(Debug, Parser)]
#[command(name = "distilnas", version, about = "Progressive teacher training, distillation-guided PyConv search and knowledge transfer")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `work_dir`.
    #[arg(short, long, global = true)]
    pub work_dir: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `train.epochs`.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Overrides any config key, e.g. `--set phases.search.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ArchSource {
    /// Architecture file in the text format.
    #[arg(long, conflicts_with = "reference")]
    pub arch: Option<PathBuf>,
    /// The built-in reference student.
    #[arg(long)]
    pub reference: bool,
    /// Overrides the number of classes.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic dataset into the work directory.
    GenData,
    /// Train the teacher progressively (or the plain backbone baseline).
    TrainTeacher {
        /// Train the end-to-end backbone baseline instead.
        #[arg(long)]
        baseline: bool,
    },
    /// Search the candidate space against the frozen teacher.
    Search,
    /// Derive the discrete student from mixing weights.
    Derive {
        /// Mixing weights (text) or a supernet checkpoint; defaults to the
        /// work directory's search output.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        /// Search-space dimensionality for `--weights`.
        #[arg(long, default_value = "2d")]
        dims: Dims,
        /// Also write the architecture here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the derived student with the transfer loss.
    Transfer {
        /// Overrides `transfer.init` (fresh or inherit).
        #[arg(long)]
        init: Option<String>,
    },
    /// Train the derived student on labels alone.
    TrainScratch,
    /// Evaluate trained checkpoints on the test split.
    Eval {
        /// teacher, baseline, supernet, student or scratch (repeatable);
        /// every trained checkpoint when omitted.
        #[arg(long = "model")]
        models: Vec<String>,
        /// Evaluate a freshly initialized student of this architecture.
        #[arg(long, conflicts_with = "models")]
        arch: Option<PathBuf>,
    },
    /// Count parameters and multiply-accumulates of an architecture.
    Analyze {
        #[command(flatten)]
        source: ArchSource,
        /// Input shape `CxHxW` (or `CxTxHxW` for 3d); 3x224x224 or
        /// 3x16x112x112 by default.
        #[arg(long)]
        input: Option<String>,
        /// Report one MAC as one FLOP (`mac`) or two (`2x`).
        #[arg(long, default_value = "mac")]
        flops: String,
        /// Also count batch norm, pooling and ReLU operations.
        #[arg(long)]
        count_all: bool,
        /// One `key=value` record per layer instead of a table.
        #[arg(long)]
        records: bool,
    },
    /// Time forward passes of a network.
    Bench {
        #[command(flatten)]
        source: ArchSource,
        /// A trained checkpoint instead of an architecture.
        #[arg(long, conflicts_with_all = ["arch", "reference"])]
        model: Option<String>,
        /// Batch sizes to time (repeatable).
        #[arg(long = "batch", default_values_t = [1usize, 32])]
        batches: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long)]
        input: Option<String>,
    },
    /// Extend a 2d architecture to cubic kernels and 3d pooling.
    Extend3d {
        #[command(flatten)]
        source: ArchSource,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every phase that has not completed yet.
    Pipeline,
}

fn init_logging(global: &GlobalArgs) {
    let level = match (global.quiet, global.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .filter_module("distilnas_core", level)
        .filter_module("distilnas_cli", level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

fn resolve_config(global: &GlobalArgs, extra: &[String]) -> CliResult<RunConfig> {
    let mut overrides = global.overrides.clone();
    if let Some(dir) = &global.work_dir {
        overrides.push(format!("work_dir={}", toml::Value::String(dir.display().to_string())));
    }
    if let Some(seed) = global.seed {
        overrides.push(format!("train.seed={seed}"));
    }
    if let Some(epochs) = global.epochs {
        overrides.push(format!("train.epochs={epochs}"));
    }
    overrides.extend_from_slice(extra);
    RunConfig::load(global.config.as_deref(), &overrides)
}

fn read_arch(source: &ArchSource) -> CliResult<ArchitectureSpec> {
    let mut arch = match (&source.arch, source.reference) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            text.parse::<ArchitectureSpec>()
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        (None, true) => ArchitectureSpec::reference_student(10),
        (None, false) => return Err(CliError::Usage("give --arch FILE or --reference".into())),
    };
    if let Some(k) = source.classes {
        arch.num_classes = k;
    }
    arch.validate()?;
    Ok(arch)
}

fn parse_shape(text: &str) -> CliResult<Vec<usize>> {
    text.split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::Usage(format!("input shape `{text}` is not of the form 3x224x224")))
}

fn default_input(arch: &ArchitectureSpec) -> Vec<usize> {
    match arch.dims {
        Dims::Two => vec![arch.input_channels, 224, 224],
        Dims::Three => vec![arch.input_channels, 16, 112, 112],
    }
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult<()> {
    if let Some(p) = path {
        workdir::write_file(p, text)?;
    }
    Ok(())
}

fn analyze(source: &ArchSource, input: Option<&str>, flops: &str, count_all: bool, records: bool) -> CliResult<()> {
    let arch = read_arch(source)?;
    let input = match input {
        Some(s) => parse_shape(s)?,
        None => default_input(&arch),
    };
    let flops = match flops {
        "mac" | "1x" => FlopConvention::MacEqualsFlop,
        "2x" => FlopConvention::TwoPerMac,
        other => return Err(CliError::Usage(format!("--flops must be `mac` or `2x`, got `{other}`"))),
    };
    let opts = MacOptions {
        batch_norm: count_all,
        pooling: count_all,
        activation: count_all,
    };
    let params = count_params(&arch)?;
    let macs = count_macs_with(&arch, &input, opts)?;
    if !records {
        print!("{}", macs.to_table(flops));
        return Ok(());
    }
    print!("{}", macs.to_records(flops));
    let p = params.total_params();
    let f = macs.total_macs() * flops.factor();
    println!("parameters: {} ({})", group_digits(p), millions(p));
    println!(
        "{}: {} ({}) at input {}",
        if flops == FlopConvention::MacEqualsFlop { "MACs (=FLOPs)" } else { "FLOPs (2 per MAC)" },
        group_digits(f),
        giga(f),
        input.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    );
    Ok(())
}

fn bench(cfg: Option<&RunConfig>, source: &ArchSource, model: Option<&str>, batches: &[usize], repeats: usize, warmup: usize, input: Option<&str>) -> CliResult<()> {
    let loaded;
    let student;
    let (net, default_shape): (&dyn distilnas_core::nn::Classifier, Vec<usize>) = match (model, cfg) {
        (Some(name), Some(cfg)) => {
            loaded = phases::load_named(&WorkDir::new(&cfg.work_dir), name)?;
            (loaded.classifier(), cfg.data.sample_shape())
        }
        _ => {
            let arch = read_arch(source)?;
            student = Student::new(&arch, &mut rand::SeedableRng::seed_from_u64(0))?;
            let shape = default_input(&arch);
            (&student, shape)
        }
    };
    let shape = match input {
        Some(s) => parse_shape(s)?,
        None => default_shape,
    };
    println!("{:>6}  {:>12}  {:>10}  {:>12}  {:>10}", "batch", "median ms", "IQR ms", "min ms", "images/s");
    for &b in batches {
        let stats = benchmark_latency(net, &shape, b, repeats, warmup)?;
        println!(
            "{:>6}  {:>12.3}  {:>10.3}  {:>12.3}  {:>10.1}",
            b,
            stats.median.as_secs_f64() * 1e3,
            stats.iqr().as_secs_f64() * 1e3,
            stats.min.as_secs_f64() * 1e3,
            stats.throughput()
        );
    }
    Ok(())
}

fn with_lock<T>(cfg: &RunConfig, f: impl FnOnce(&WorkDir) -> CliResult<T>) -> CliResult<T> {
    let wd = WorkDir::new(&cfg.work_dir);
    let _lock = wd.lock()?;
    f(&wd)
}

/// Runs one parsed command line.
pub fn execute(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Analyze {
            source,
            input,
            flops,
            count_all,
            records,
        } => analyze(source, input.as_deref(), flops, *count_all, *records),
        Command::Extend3d { source, out } => {
            let arch = read_arch(source)?.extend_to_3d()?;
            write_out(out.as_deref(), &arch.to_string())?;
            print!("{arch}");
            Ok(())
        }
        Command::Derive {
            weights: Some(path),
            classes,
            dims,
            out,
        } => {
            let weights = phases::read_mix_weights(path)?;
            let classes = match classes {
                Some(k) => *k,
                None => resolve_config(g, &[])?.data.num_classes,
            };
            let space = checkpoint::standard_space(*dims)?;
            let (arch, choice) = derive_architecture(&space, &weights, classes)?;
            write_out(out.as_deref(), &arch.to_string())?;
            println!(
                "# conv candidates {:?}, pooling {:?}",
                choice.conv.iter().map(|c| c + 1).collect::<Vec<_>>(),
                choice.pool.iter().map(|&p| space.blocks[0].pool[p].to_string()).collect::<Vec<_>>()
            );
            print!("{arch}");
            Ok(())
        }
        Command::Bench {
            source,
            model,
            batches,
            repeats,
            warmup,
            input,
        } => {
            let cfg = match model {
                Some(_) => Some(resolve_config(g, &[])?),
                None => None,
            };
            bench(cfg.as_ref(), source, model.as_deref(), batches, *repeats, *warmup, input.as_deref())
        }
        Command::Derive { weights: None, out, .. } => {
            let cfg = resolve_config(g, &[])?;
            with_lock(&cfg, |wd| {
                let arch = phases::derive_with_echo(&cfg, wd)?;
                write_out(out.as_deref(), &arch.to_string())
            })
        }
        Command::Transfer { init } => {
            let extra: Vec<String> = init.iter().map(|i| format!("transfer.init={i}")).collect();
            let cfg = resolve_config(g, &extra)?;
            with_lock(&cfg, |wd| Phase::Transfer.run(&cfg, wd))
        }
        Command::Eval { models, arch } => {
            let cfg = resolve_config(g, &[])?;
            with_lock(&cfg, |wd| match arch {
                Some(path) => {
                    let source = ArchSource {
                        arch: Some(path.clone()),
                        reference: false,
                        classes: Some(cfg.data.num_classes),
                    };
                    phases::eval_untrained(&cfg, wd, &read_arch(&source)?).map(|_| ())
                }
                None => phases::eval_with_echo(&cfg, wd, models).map(|_| ()),
            })
        }
        simple => {
            let phase = match simple {
                Command::GenData => Phase::GenData,
                Command::TrainTeacher { baseline: false } => Phase::TrainTeacher,
                Command::TrainTeacher { baseline: true } => Phase::TrainBaseline,
                Command::Search => Phase::Search,
                Command::TrainScratch => Phase::TrainScratch,
                Command::Pipeline => {
                    let cfg = resolve_config(g, &[])?;
                    return with_lock(&cfg, |wd| phases::pipeline(&cfg, wd));
                }
                _ => unreachable!("handled above"),
            };
            let cfg = resolve_config(g, &[])?;
            with_lock(&cfg, |wd| phase.run(&cfg, wd))
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 1 for user errors, 2 for internal invariant violations.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(&cli.global);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
