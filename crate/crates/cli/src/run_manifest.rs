use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use ecgfm::nnet::Precision;

/// Provenance of one invocation. `config` is the fully resolved config, so
/// feeding it back through `--config` repeats the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    pub precision: Precision,
    pub workers: usize,
    pub tool_version: String,
    pub duration_s: f64,
}

/// `out.run.json` beside a directory, `stem.run.json` beside a file.
pub fn manifest_path(out: &Path) -> PathBuf {
    let name = if out.is_dir() || out.extension().is_none() {
        out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
    } else {
        out.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
    };
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parent.join(format!("{name}.run.json"))
}

impl RunManifest {
    pub fn write(&self, out: &Path) -> std::io::Result<PathBuf> {
        let path = manifest_path(out);
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(&path, json)?;
        Ok(path)
    }
}
