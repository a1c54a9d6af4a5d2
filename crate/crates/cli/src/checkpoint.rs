//! Checkpoint directories.
//!
//! ```text
//! <dir>/params.bin      every tensor, little-endian f32, in manifest order
//! <dir>/manifest.toml   version, model descriptor, training position,
//!                       tensor table (name, role, shape, offset, len) and
//!                       the SHA-256 of params.bin
//! ```
//!
//! The manifest is written last, through a rename, so its presence marks a
//! complete checkpoint.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use distilnas_core::arch::{ArchitectureSpec, CandidateSpace, Dims, MixWeights};
use distilnas_core::nn::{BackboneClassifier, Classifier, Module, PlainCnnBackbone, Role, Student, Supernet, TeacherModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.toml";
pub const PARAMS: &str = "params.bin";

/// Enough to rebuild the network before loading its tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Descriptor {
    Teacher {
        dims: String,
        input_channels: usize,
        widths: Vec<usize>,
        descriptor_len: usize,
        classes: usize,
    },
    Baseline {
        dims: String,
        input_channels: usize,
        widths: Vec<usize>,
        classes: usize,
    },
    /// Always the standard candidate space.
    Supernet { dims: String, classes: usize },
    Student { architecture: String },
}

/// Where training stood when the checkpoint was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Position {
    pub phase: String,
    pub epoch: usize,
    pub optimizer_steps: u64,
    /// Seed of the per-purpose, per-epoch ChaCha8 streams.
    pub rng_seed: u64,
    pub final_lr: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub role: String,
    pub shape: Vec<usize>,
    /// In elements, not bytes.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub params_sha256: String,
    pub descriptor: Descriptor,
    pub position: Position,
    pub tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub tensors: HashMap<String, (Vec<usize>, Vec<f32>)>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn exists(dir: &Path) -> bool {
    dir.join(MANIFEST).is_file()
}

/// Writes every tensor of `module` under `dir` and verifies the result
/// reads back bit for bit.
pub fn save(dir: &Path, module: &dyn Module, descriptor: Descriptor, position: Position) -> CliResult<Manifest> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
    }
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for t in module.named_tensors() {
        let data = t.tensor.to_vec();
        for v in &data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: t.name,
            role: match t.role {
                Role::Parameter => "parameter",
                Role::Buffer => "buffer",
            }
            .to_string(),
            shape: t.tensor.shape().to_vec(),
            offset,
            len: data.len(),
        });
        offset += data.len();
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        params_sha256: hex(&Sha256::digest(&bytes)),
        descriptor,
        position,
        tensors,
    };
    write_atomic(&dir.join(PARAMS), &bytes)?;
    let text = toml::to_string(&manifest).map_err(|e| CliError::Internal(format!("manifest does not serialize: {e}")))?;
    write_atomic(&manifest_path, text.as_bytes())?;

    let back = load(dir)?;
    for (name, shape, data) in module.state() {
        match back.tensors.get(&name) {
            Some((s, d)) if *s == shape && d.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()) => {}
            _ => return Err(CliError::Internal(format!("checkpoint {} does not round-trip tensor {name}", dir.display()))),
        }
    }
    Ok(manifest)
}

pub fn load(dir: &Path) -> CliResult<Checkpoint> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| CliError::checkpoint(dir, format!("cannot read {MANIFEST}: {e}")))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| CliError::checkpoint(dir, format!("malformed manifest: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(CliError::checkpoint(
            dir,
            format!("format version {} is not supported (expected {FORMAT_VERSION})", manifest.version),
        ));
    }
    let bytes = fs::read(dir.join(PARAMS)).map_err(|e| CliError::checkpoint(dir, format!("cannot read {PARAMS}: {e}")))?;
    if hex(&Sha256::digest(&bytes)) != manifest.params_sha256 {
        return Err(CliError::checkpoint(dir, format!("{PARAMS} is corrupted (checksum mismatch)")));
    }
    let total: usize = manifest.tensors.iter().map(|t| t.len).sum();
    if bytes.len() != 4 * total {
        return Err(CliError::checkpoint(dir, format!("{PARAMS} holds {} bytes, manifest needs {}", bytes.len(), 4 * total)));
    }
    let mut tensors = HashMap::new();
    for t in &manifest.tensors {
        if t.shape.iter().product::<usize>() != t.len || 4 * (t.offset + t.len) > bytes.len() {
            return Err(CliError::checkpoint(dir, format!("tensor {} has an inconsistent entry", t.name)));
        }
        let data = bytes[4 * t.offset..4 * (t.offset + t.len)]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(t.name.clone(), (t.shape.clone(), data));
    }
    Ok(Checkpoint {
        dir: dir.to_path_buf(),
        manifest,
        tensors,
    })
}

/// A network rebuilt from a checkpoint.
pub enum Model {
    Teacher(TeacherModel),
    Baseline(BackboneClassifier),
    Supernet(Supernet),
    Student(Student),
}

impl Model {
    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            Model::Teacher(m) => m,
            Model::Baseline(m) => m,
            Model::Supernet(m) => m,
            Model::Student(m) => m,
        }
    }

    pub fn module(&self) -> &dyn Module {
        match self {
            Model::Teacher(m) => m,
            Model::Baseline(m) => m,
            Model::Supernet(m) => m,
            Model::Student(m) => m,
        }
    }
}

fn dims(dir: &Path, s: &str) -> CliResult<Dims> {
    s.parse().map_err(|e: String| CliError::checkpoint(dir, e))
}

/// Builds the network described by `descriptor` with throwaway weights.
pub fn build(dir: &Path, descriptor: &Descriptor) -> CliResult<Model> {
    let rng = &mut ChaCha8Rng::seed_from_u64(0);
    let bad = |e: distilnas_core::Error| CliError::checkpoint(dir, format!("descriptor does not build: {e}"));
    Ok(match descriptor {
        Descriptor::Teacher {
            dims: d,
            input_channels,
            widths,
            descriptor_len,
            classes,
        } => {
            let d = dims(dir, d)?;
            let bb = PlainCnnBackbone::new(*input_channels, widths, d, rng).map_err(bad)?;
            Model::Teacher(TeacherModel::new(Box::new(bb), *descriptor_len, *classes, d, rng).map_err(bad)?)
        }
        Descriptor::Baseline {
            dims: d,
            input_channels,
            widths,
            classes,
        } => {
            let bb = PlainCnnBackbone::new(*input_channels, widths, dims(dir, d)?, rng).map_err(bad)?;
            Model::Baseline(BackboneClassifier::new(Box::new(bb), *classes, rng).map_err(bad)?)
        }
        Descriptor::Supernet { dims: d, classes } => {
            let space = standard_space(dims(dir, d)?)?;
            Model::Supernet(Supernet::new(&space, &MixWeights::uniform(&space), *classes, rng).map_err(bad)?)
        }
        Descriptor::Student { architecture } => {
            let arch: ArchitectureSpec = architecture.parse().map_err(bad)?;
            Model::Student(Student::new(&arch, rng).map_err(bad)?)
        }
    })
}

pub fn standard_space(dims: Dims) -> CliResult<CandidateSpace> {
    let space = CandidateSpace::standard();
    Ok(match dims {
        Dims::Two => space,
        Dims::Three => space.extend_to_3d()?,
    })
}

/// Loads and rebuilds the network stored in `dir`.
pub fn load_model(dir: &Path) -> CliResult<(Model, Manifest)> {
    let ckpt = load(dir)?;
    let model = build(dir, &ckpt.manifest.descriptor)?;
    let names: Vec<String> = model.module().named_tensors().into_iter().map(|t| t.name).collect();
    if names.len() != ckpt.tensors.len() {
        return Err(CliError::checkpoint(
            dir,
            format!("holds {} tensors, the described network has {}", ckpt.tensors.len(), names.len()),
        ));
    }
    model
        .module()
        .load_state(&ckpt.tensors)
        .map_err(|e| CliError::checkpoint(dir, e.to_string()))?;
    Ok((model, ckpt.manifest))
}
