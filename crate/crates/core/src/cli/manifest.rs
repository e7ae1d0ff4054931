use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Job, JobOutput};
use crate::io::{sha256_file, RunConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-run a command and check that it reproduces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub job: Job,
    pub config: RunConfig,
    pub seeds: Vec<(String, u64)>,
    pub out_dir: PathBuf,
    pub inputs: Vec<FileHash>,
    /// Paths relative to `out_dir`.
    pub outputs: Vec<FileHash>,
    pub version: String,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn build(job: &Job, cfg: &RunConfig, out: &Path, res: &JobOutput, duration_secs: f64) -> Result<Self> {
        let inputs = res
            .inputs
            .iter()
            .map(|p| {
                Ok(FileHash {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        let outputs = res
            .outputs
            .iter()
            .map(|p| {
                Ok(FileHash {
                    path: p.clone(),
                    sha256: sha256_file(&out.join(p))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunManifest {
            subcommand: job.name().to_string(),
            job: job.clone(),
            config: cfg.clone(),
            seeds: job.seeds(cfg),
            out_dir: out.to_path_buf(),
            inputs,
            outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: not a run manifest: {e}", path.display())))
    }

    /// Fail if an input changed since the manifest was written.
    pub fn check_inputs(&self) -> Result<()> {
        for f in &self.inputs {
            let now = sha256_file(Path::new(&f.path))?;
            if now != f.sha256 {
                return Err(Error::Data(format!("input `{}` changed since the manifest was written", f.path)));
            }
        }
        Ok(())
    }

    /// Names of recorded outputs whose hash differs after a re-run into `out`.
    pub fn compare_outputs(&self, out: &Path, res: &JobOutput) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.outputs {
            if !res.outputs.contains(&f.path) || sha256_file(&out.join(&f.path))? != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        for p in &res.outputs {
            if !self.outputs.iter().any(|f| &f.path == p) {
                bad.push(p.clone());
            }
        }
        Ok(bad)
    }
}
