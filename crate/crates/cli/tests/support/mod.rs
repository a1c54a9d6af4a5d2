//! Drives the `distilnas` binary and checks the invariants every phase of
//! a run directory must satisfy.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use distilnas_cli::checkpoint::{self, Descriptor};
use distilnas_cli::config::RunConfig;
use distilnas_tensor::Tensor;

pub fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn smoke_config() -> PathBuf {
    repo_file("configs/smoke.toml")
}

/// Runs the binary with `args`, logging silenced.
pub fn distilnas<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distilnas"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("the distilnas binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Runs `args` and returns stdout, panicking with stderr on failure.
pub fn succeed<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> String {
    let out = distilnas(args);
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), stderr(&out));
    stdout(&out)
}

/// `distilnas -c configs/smoke.toml -w <dir> <args...>`.
pub fn smoke(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<std::ffi::OsString> = vec!["-q".into(), "-c".into(), smoke_config().into(), "-w".into(), dir.into()];
    all.extend(args.iter().map(Into::into));
    distilnas(&all)
}

/// The config every smoke phase should echo.
pub fn smoke_resolved(dir: &Path) -> RunConfig {
    let work_dir = format!("work_dir={}", toml::Value::String(dir.display().to_string()));
    RunConfig::load(Some(&smoke_config()), &[work_dir]).unwrap()
}

/// The full synthetic experiment's config.
pub fn desk_config() -> RunConfig {
    RunConfig::load(Some(&repo_file("configs/desk.toml")), &[]).unwrap()
}

/// Per-epoch metrics and the evaluation report, by file name.
pub fn metrics_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir.join("reports")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with(".metrics.jsonl") || name == "eval.json" {
            files.insert(name, fs::read(&path).unwrap());
        }
    }
    files
}

/// A fixed batch of two samples of `shape`.
pub fn probe_input(shape: &[usize]) -> Tensor {
    let mut full = vec![2];
    full.extend_from_slice(shape);
    let n: usize = full.iter().product();
    Tensor::from_vec(&full, (0..n).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect()).unwrap()
}

fn bits(t: &Tensor) -> Vec<u32> {
    t.to_vec().iter().map(|v| v.to_bits()).collect()
}

fn sample_shape(descriptor: &Descriptor, cfg: &RunConfig) -> Vec<usize> {
    match descriptor {
        Descriptor::Student { architecture } => {
            let arch: distilnas_core::arch::ArchitectureSpec = architecture.parse().unwrap();
            let mut s = cfg.data.sample_shape();
            s[0] = arch.input_channels;
            s
        }
        _ => cfg.data.sample_shape(),
    }
}

/// Reloads every checkpoint under `wd`, saves it again elsewhere and
/// requires identical bytes, manifests and evaluation-mode outputs.
/// Returns the number of checkpoints checked.
pub fn checkpoint_round_trips(wd: &Path, cfg: &RunConfig) -> Result<usize, String> {
    let mut checked = 0;
    let scratch = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(wd.join("checkpoints")).map_err(|e| e.to_string())? {
        let dir = entry.unwrap().path();
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let (model, manifest) = checkpoint::load_model(&dir).map_err(|e| e.to_string())?;
        let x = probe_input(&sample_shape(&manifest.descriptor, cfg));
        let before = model.classifier().predict(&x).map_err(|e| e.to_string())?;

        let copy = scratch.path().join(&name);
        let saved = checkpoint::save(&copy, model.module(), manifest.descriptor.clone(), manifest.position.clone())
            .map_err(|e| e.to_string())?;
        if saved != manifest {
            return Err(format!("{name}: manifest changed on re-save"));
        }
        if fs::read(dir.join(checkpoint::PARAMS)).unwrap() != fs::read(copy.join(checkpoint::PARAMS)).unwrap() {
            return Err(format!("{name}: tensor bytes changed on re-save"));
        }
        let (again, _) = checkpoint::load_model(&copy).map_err(|e| e.to_string())?;
        let after = again.classifier().predict(&x).map_err(|e| e.to_string())?;
        if bits(&before) != bits(&after) {
            return Err(format!("{name}: outputs differ after reload"));
        }
        if model.module().parameter_count() != again.module().parameter_count() {
            return Err(format!("{name}: parameter count changed"));
        }
        checked += 1;
    }
    Ok(checked)
}

/// Every `<phase>.config.toml` under `wd` must parse back to `expected`.
/// Returns the phases that echoed.
pub fn config_echoes(wd: &Path, expected: &RunConfig) -> Result<Vec<String>, String> {
    let mut phases = Vec::new();
    for entry in fs::read_dir(wd.join("reports")).map_err(|e| e.to_string())? {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let Some(phase) = name.strip_suffix(".config.toml") else { continue };
        let text = fs::read_to_string(&path).unwrap();
        let echoed = RunConfig::from_toml(&text, &[]).map_err(|e| format!("{name}: {e}"))?;
        if &echoed != expected {
            return Err(format!("{name} does not match the resolved config"));
        }
        phases.push(phase.to_string());
    }
    phases.sort();
    Ok(phases)
}

/// Every phase of a pipeline run with baselines.
pub const SMOKE_PHASES: [&str; 8] = [
    "derive",
    "eval",
    "gen-data",
    "search",
    "train-baseline",
    "train-scratch",
    "train-teacher",
    "transfer",
];
