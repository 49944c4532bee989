use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::RunDirArgs;

/// Files and directories created by a command. Unless [`Outputs::commit`] is
/// called they are removed on drop, so a failed command leaves nothing behind.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a file the command is about to write.
    pub fn file(&mut self, path: &Path) {
        self.files.push(path.to_path_buf());
    }

    pub fn write(&mut self, path: PathBuf, contents: String) -> anyhow::Result<()> {
        self.files.push(path.clone());
        std::fs::write(&path, contents)
            .map_err(lifeclust::Error::from)
            .with_context(|| format!("writing {}", path.display()))
    }

    /// Creates the run directory: `args.run_dir` when given, otherwise
    /// `<out_dir>/<UTC timestamp>-<seed>` with a numeric suffix on collision.
    pub fn run_dir(&mut self, args: &RunDirArgs, seed: u64) -> anyhow::Result<PathBuf> {
        let dir = match &args.run_dir {
            Some(d) => d.clone(),
            None => {
                let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
                let base = args.out_dir.join(format!("{stamp}-{seed}"));
                let mut dir = base.clone();
                let mut n = 1;
                while dir.exists() {
                    n += 1;
                    dir = PathBuf::from(format!("{}-{n}", base.display()));
                }
                dir
            }
        };
        if !dir.exists() {
            // remember the outermost directory we create
            let mut top = dir.clone();
            while let Some(parent) = top.parent() {
                if parent.as_os_str().is_empty() || parent.exists() {
                    break;
                }
                top = parent.to_path_buf();
            }
            std::fs::create_dir_all(&dir)
                .map_err(lifeclust::Error::from)
                .with_context(|| format!("creating {}", dir.display()))?;
            self.dirs.push(top);
        }
        Ok(dir)
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = std::fs::remove_dir_all(d);
        }
    }
}
