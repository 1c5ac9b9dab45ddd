//! The single writer of a run directory. Every file goes through an atomic
//! temp-file rename.

use std::path::{Path, PathBuf};

use serde::Serialize;

use qnnlv_core::io;
use qnnlv_core::training::Trajectory;

use crate::error::CliResult;

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn text(&self, name: &str, text: &str) -> CliResult<()> {
        io::atomic_write(&self.root.join(name), text.as_bytes())?;
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> CliResult<()> {
        io::write_json(&self.root.join(name), value)?;
        Ok(())
    }

    /// `traj_<i>.csv` plus its JSON sidecar.
    pub fn trajectory(&self, i: usize, traj: &Trajectory) -> CliResult<()> {
        io::write_trajectory(&self.root, &format!("traj_{i}"), traj)?;
        Ok(())
    }

    /// Two-column plot series.
    pub fn series(&self, name: &str, header: (&str, &str), rows: impl IntoIterator<Item = (f64, f64)>) -> CliResult<()> {
        io::write_series(&self.root.join(name), header, rows)?;
        Ok(())
    }

    pub fn spectrum(&self, name: &str, eigenvalues: &[f64]) -> CliResult<()> {
        io::write_spectrum(&self.root.join(name), eigenvalues)?;
        Ok(())
    }
}
