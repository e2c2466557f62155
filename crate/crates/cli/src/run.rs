//! Run-directory layout, overwrite protection and the per-run lock.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Environment variable naming the default parent of run directories.
pub const OUT_ENV: &str = "PAIRALIGN_OUT";
pub const LOCK_FILE: &str = ".lock";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// `explicit`, else `$PAIRALIGN_OUT/<name>`, else `runs/<name>`.
    pub fn resolve(explicit: Option<&Path>, name: &str) -> Self {
        let root = match explicit {
            Some(p) => p.to_path_buf(),
            None => std::env::var_os(OUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(name),
        };
        Self { root }
    }

    pub fn train_data(&self) -> PathBuf {
        self.root.join("data").join("train.jsonl")
    }

    pub fn eval_data(&self) -> PathBuf {
        self.root.join("data").join("eval.jsonl")
    }

    pub fn pretrain(&self) -> PathBuf {
        self.root.join("pretrain")
    }

    pub fn curate(&self) -> PathBuf {
        self.root.join("curate")
    }

    pub fn align(&self) -> PathBuf {
        self.root.join("align")
    }

    pub fn iterate(&self) -> PathBuf {
        self.root.join("iterate")
    }

    pub fn eval(&self, label: &str) -> PathBuf {
        self.root.join("eval").join(label)
    }

    pub fn ablate(&self) -> PathBuf {
        self.root.join("ablate")
    }

    pub fn lock(&self) -> Result<RunLock> {
        std::fs::create_dir_all(&self.root)
            .with_context(|| format!("creating {}", self.root.display()))?;
        let path = self.root.join(LOCK_FILE);
        let mut f = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(
                    "run directory {} is locked by another command ({})",
                    self.root.display(),
                    path.display()
                )
            }
            Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
        };
        writeln!(f, "{}", std::process::id())?;
        Ok(RunLock { path })
    }
}

/// Removes the lock file when dropped.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Refuses to touch an existing output unless `force`; with `force` the old
/// output is removed first so nothing stale survives.
pub fn claim(path: &Path, force: bool) -> Result<()> {
    if path.exists() {
        if !force {
            bail!(
                "{} already exists; pass --force to overwrite",
                path.display()
            );
        }
        if path.is_dir() {
            std::fs::remove_dir_all(path)?;
        } else {
            std::fs::remove_file(path)?;
        }
    }
    Ok(())
}

pub fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {what} at {}", path.display());
    }
    Ok(())
}
