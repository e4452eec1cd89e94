//! Staged output: every file of a run is written into a hidden temporary
//! directory and renamed into place only after the whole run succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::TempDir;

use crate::{CliResult, Failure};

pub struct Staging {
    dir: TempDir,
    target: PathBuf,
}

fn io_failure(what: &str, path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::usage(format!("cannot {what} {}: {e}", path.display()))
}

/// Closest existing ancestor of `dir` (itself included).
fn existing_ancestor(dir: &Path) -> PathBuf {
    let mut p = dir.to_path_buf();
    loop {
        if p.is_dir() {
            return p;
        }
        if !p.pop() || p.as_os_str().is_empty() {
            return PathBuf::from(".");
        }
    }
}

impl Staging {
    /// Stage files destined for directory `target`, which is created on
    /// commit if needed.
    pub fn new(target: &Path) -> CliResult<Self> {
        let target = if target.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            target.to_path_buf()
        };
        let base = existing_ancestor(&target);
        let dir = tempfile::Builder::new()
            .prefix(".gsvs-stage-")
            .tempdir_in(&base)
            .map_err(|e| io_failure("stage outputs in", &base, e))?;
        Ok(Self { dir, target })
    }

    /// Staging directory and target for the file `path`.
    pub fn for_file(path: &Path) -> CliResult<(Self, String)> {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Failure::usage(format!("bad output path {}", path.display())))?
            .to_string();
        let parent = path.parent().unwrap_or_else(|| Path::new(""));
        Ok((Self::new(parent)?, name))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Failure::Compute(format!("cannot serialize {name}: {e}")))?;
        self.write_text(name, &(text + "\n"))
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| io_failure("write", &p, e))
    }

    /// Move every staged file into the target directory; returns the final
    /// paths in name order.
    pub fn commit(self) -> CliResult<Vec<PathBuf>> {
        fs::create_dir_all(&self.target).map_err(|e| io_failure("create", &self.target, e))?;
        let mut names: Vec<_> = fs::read_dir(self.dir.path())
            .map_err(|e| io_failure("list", self.dir.path(), e))?
            .filter_map(|e| e.ok().map(|e| e.file_name()))
            .collect();
        names.sort();
        let mut out = Vec::with_capacity(names.len());
        for n in names {
            let to = self.target.join(&n);
            let from = self.dir.path().join(&n);
            fs::rename(&from, &to).map_err(|e| io_failure("move output to", &to, e))?;
            out.push(to);
        }
        Ok(out)
    }
}

/// Run `f` on a pool with `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> CliResult<T> + Send,
) -> CliResult<T> {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Compute(format!("cannot start {n} workers: {e}")))?
            .install(f),
    }
}

/// `dir/stem.suffix` for an output path `dir/stem.ext`.
pub fn sibling_name(path: &Path, suffix: &str) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    format!("{stem}.{suffix}")
}
