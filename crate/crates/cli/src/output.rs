use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use spotkd::config::LabConfig;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Everything needed to reproduce one run.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub config: &'a LabConfig,
    /// The same configuration as TOML, accepted by `--config`.
    pub config_toml: String,
    pub outputs: Vec<String>,
}

/// Files produced by a command, written only once all of them are ready.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.push((name.into(), contents.into()));
    }

    /// Writes every file plus `<command>.manifest.json` into `dir`. Each file
    /// goes to a temporary name first and is renamed into place.
    pub fn commit(mut self, dir: &Path, command: &str, config: &LabConfig) -> std::io::Result<Vec<PathBuf>> {
        let manifest_name = format!("{command}.manifest.json");
        let mut outputs: Vec<String> = self.files.iter().map(|(n, _)| n.clone()).collect();
        outputs.push(manifest_name.clone());
        let manifest = RunManifest {
            command,
            version: VERSION,
            seed: config.seed,
            threads: config.threads,
            config,
            config_toml: config.to_toml_string().map_err(std::io::Error::other)?,
            outputs,
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
        self.files.push((manifest_name, json));

        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            let tmp = dir.join(format!(".{name}.tmp"));
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)?;
            written.push(path);
        }
        Ok(written)
    }
}
