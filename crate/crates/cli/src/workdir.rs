//! Layout of a run directory and its advisory lock.
//!
//! ```text
//! <work_dir>/LOCK
//! <work_dir>/data/{train,test}/<class>/<n>.ppm
//! <work_dir>/checkpoints/{teacher,baseline,supernet,student,scratch}/
//! <work_dir>/reports/<phase>.config.toml      resolved config per run
//! <work_dir>/reports/<phase>.metrics.jsonl    one record per epoch
//! <work_dir>/reports/mixweights.txt, student.arch, eval.json, eval.txt
//! ```

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use distilnas_core::data::Split;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct WorkDir {
    pub root: PathBuf,
}

impl WorkDir {
    pub fn new(root: &Path) -> Self {
        WorkDir { root: root.to_path_buf() }
    }

    pub fn data(&self, split: Split) -> PathBuf {
        self.root.join("data").join(split.name())
    }

    /// Written after both splits, so its presence marks complete data.
    pub fn data_marker(&self) -> PathBuf {
        self.root.join("data").join("synthetic.toml")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports().join(name)
    }

    pub fn mix_weights(&self) -> PathBuf {
        self.report("mixweights.txt")
    }

    pub fn student_arch(&self) -> PathBuf {
        self.report("student.arch")
    }

    pub fn eval_report(&self) -> PathBuf {
        self.report("eval.json")
    }

    /// Takes the advisory lock, creating the directory if needed.
    pub fn lock(&self) -> CliResult<Lock> {
        fs::create_dir_all(&self.root).map_err(|e| CliError::io(&self.root, e))?;
        let path = self.root.join("LOCK");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).map_err(|e| CliError::io(&path, e))?;
                Ok(Lock { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Usage(format!(
                "{} is in use by another run (delete {} if that run is gone)",
                self.root.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

/// Removes the lock file when dropped.
#[derive(Debug)]
pub struct Lock {
    path: PathBuf,
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn read_file(path: &Path, what: &str, phase: &'static str) -> CliResult<String> {
    if !path.exists() {
        return Err(CliError::Missing {
            what: what.to_string(),
            path: path.to_path_buf(),
            phase,
        });
    }
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
