//! Outputs are written into a scratch directory next to the destination and
//! moved into place only after every file is complete, so a failed run
//! leaves nothing behind.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tempfile::TempDir;

pub struct Staging {
    dir: TempDir,
    dest: PathBuf,
    files: Vec<String>,
}

impl Staging {
    pub fn new(dest: &Path) -> Result<Self> {
        if dest.exists() && !dest.is_dir() {
            anyhow::bail!("{} exists and is not a directory", dest.display());
        }
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".dirmix-staging-")
            .tempdir_in(&parent)
            .with_context(|| format!("creating a scratch directory in {}", parent.display()))?;
        Ok(Self {
            dir,
            dest: dest.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Writes one file through `f`.
    pub fn write<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = self.dir.path().join(name);
        let file = fs::File::create(&path).with_context(|| format!("creating {name}"))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {name}"))?;
        self.record(name);
        Ok(())
    }

    fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    /// Moves the staged files into the destination directory.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let dest = &self.dest;
        if !dest.exists() {
            let staged = self.dir.keep();
            fs::rename(&staged, dest)
                .with_context(|| format!("moving outputs into {}", dest.display()))?;
            return Ok(self.files.iter().map(|f| dest.join(f)).collect());
        }
        let mut out = Vec::new();
        for f in &self.files {
            let target = dest.join(f);
            fs::rename(self.dir.path().join(f), &target)
                .with_context(|| format!("moving {f} into {}", dest.display()))?;
            out.push(target);
        }
        Ok(out)
    }
}
