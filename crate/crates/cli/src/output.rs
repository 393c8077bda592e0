//! CSV artifacts and run manifests, all confined to one output directory.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

/// Record of one command invocation, written as `<command>_manifest.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub wall_time_s: f64,
    /// Output files relative to the output directory.
    pub files: Vec<String>,
    /// Effective configuration after flag overrides.
    pub config: RunConfig,
}

pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    /// Only bare file names are accepted, so nothing lands outside the root.
    fn path_of(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = Path::new(name);
        if p.components().count() != 1 || p.file_name().is_none() {
            return Err(CliError::Io(format!("refusing to write `{name}` outside the output directory")));
        }
        Ok(self.root.join(p))
    }

    /// Writes `rows` as CSV with a header derived from the row type.
    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let path = self.path_of(name)?;
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for row in rows {
            w.serialize(row).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        self.files.push(name.to_string());
        log::info!("wrote {}", path.display());
        Ok(())
    }

    /// Writes the manifest listing every file produced so far.
    pub fn finish(self, command: &str, config: &RunConfig, wall_time_s: f64) -> Result<PathBuf, CliError> {
        let path = self.path_of(&format!("{command}_manifest.toml"))?;
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.sim.seed,
            wall_time_s,
            files: self.files,
            config: config.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| CliError::Io(format!("manifest: {e}")))?;
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use afrelay::sim::{Design, Feedback};

    #[test]
    fn manifest_round_trips() {
        let mut config = RunConfig::default();
        config.sim.feedback = Feedback::Bsc { pe: 1e-3, bits_real: 4, bits_imag: 4 };
        config.sim.local_budgets = Some(vec![3.0, 5.0]);
        config.sim.snr_db = vec![0.1, 2.5, 17.3];
        config.design.design = Design::MsrPower;
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(dir.path()).unwrap();
        let path = out.finish("ber", &config, 1.25).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let back: RunManifest = toml::from_str(&text).unwrap();
        assert_eq!(back.config, config);
        assert_eq!(back.command, "ber");
    }

    #[test]
    fn rejects_paths_outside_root() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(dir.path()).unwrap();
        let rows: Vec<(u8,)> = vec![];
        assert!(out.write_csv("../escape.csv", &rows).is_err());
        assert!(out.write_csv("/tmp/escape.csv", &rows).is_err());
        assert!(out.write_csv("sub/x.csv", &rows).is_err());
    }
}
