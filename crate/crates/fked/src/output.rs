//! Staged output files. Everything a command produces is collected in
//! memory and only written once the command has succeeded, each file via a
//! temporary sibling and a rename, so a failing command leaves no partial
//! outputs behind.

use std::fs;
use std::path::{Component, Path, PathBuf};

use crate::error::{CliError, Result};

#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stages `bytes` under the relative path `name`. Absolute paths and
    /// `..` components are rejected so nothing lands outside the output
    /// directory.
    pub fn add(&mut self, name: impl AsRef<Path>, bytes: Vec<u8>) -> Result<()> {
        let name = name.as_ref();
        if name.as_os_str().is_empty() || !name.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(CliError::Internal(format!("output name {} escapes the output directory", name.display())));
        }
        if self.files.iter().any(|(n, _)| n == name) {
            return Err(CliError::Internal(format!("output {} staged twice", name.display())));
        }
        self.files.push((name.to_path_buf(), bytes));
        Ok(())
    }

    pub fn add_json<T: serde::Serialize>(&mut self, name: impl AsRef<Path>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        bytes.push(b'\n');
        self.add(name, bytes)
    }

    pub fn names(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(n, _)| n.as_path())
    }

    pub fn get(&self, name: impl AsRef<Path>) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name.as_ref()).map(|(_, b)| b.as_slice())
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes every staged file below `dir`. All temporaries are written
    /// before the first rename; on failure they are removed again.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        let pid = std::process::id();
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::with_capacity(self.files.len());
        let cleanup = |staged: &[(PathBuf, PathBuf)]| {
            for (tmp, _) in staged {
                let _ = fs::remove_file(tmp);
            }
        };
        for (name, bytes) in &self.files {
            let target = dir.join(name);
            let parent = target.parent().unwrap_or(dir);
            let file_name = target.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let tmp = parent.join(format!(".{file_name}.tmp-{pid}"));
            let written = fs::create_dir_all(parent).and_then(|_| fs::write(&tmp, bytes));
            if let Err(e) = written {
                cleanup(&staged);
                let _ = fs::remove_file(&tmp);
                return Err(CliError::io(format!("writing {}", target.display()), e));
            }
            staged.push((tmp, target));
        }
        let mut done = Vec::with_capacity(staged.len());
        for (i, (tmp, target)) in staged.iter().enumerate() {
            if let Err(e) = fs::rename(tmp, target) {
                cleanup(&staged[i..]);
                return Err(CliError::io(format!("renaming into {}", target.display()), e));
            }
            done.push(target.clone());
        }
        Ok(done)
    }
}
