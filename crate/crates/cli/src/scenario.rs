use std::fs;
use std::path::{Path, PathBuf};

use d2dcache::fitting::FitResult;
use d2dcache::popularity::MZipfDist;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Scenario document. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub n: usize,
    pub s: u32,
    pub k: u32,
    #[serde(default = "one")]
    pub c_rate: f64,
    pub gamma: Option<f64>,
    pub q: Option<f64>,
    pub m: Option<usize>,
    /// Path to a `fit` output, relative to the scenario file.
    pub fit_result: Option<PathBuf>,
    /// Cluster count for single-point commands.
    pub n_clusters: Option<usize>,
    #[serde(default)]
    pub cluster_counts: Vec<usize>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub include_self_cache: bool,
}

fn one() -> f64 {
    1.0
}

/// A parsed scenario with its popularity law resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub dist: MZipfDist,
    /// Hex prefix of the SHA-256 of the scenario bytes.
    pub hash: String,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let file: ScenarioFile = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let dist = resolve_dist(&file, path.parent().unwrap_or(Path::new(".")))?;
        Ok(Scenario { file, dist, hash: short_hash(&bytes) })
    }

    pub fn n_clusters(&self) -> Result<usize, CliError> {
        self.file
            .n_clusters
            .ok_or_else(|| CliError::Config("scenario needs n_clusters for this command".into()))
    }

    pub fn cluster_counts(&self) -> Result<&[usize], CliError> {
        if self.file.cluster_counts.is_empty() {
            return Err(CliError::Config("scenario needs a nonempty cluster_counts list".into()));
        }
        Ok(&self.file.cluster_counts)
    }

    /// The flag wins over the scenario; there is no default.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        flag.or(self.file.seed)
            .ok_or_else(|| CliError::Config("a seed is required: pass --seed or set \"seed\" in the scenario".into()))
    }

    pub fn trials(&self, flag: Option<usize>) -> Result<usize, CliError> {
        flag.or(self.file.trials)
            .ok_or_else(|| CliError::Config("a trial count is required: pass --trials or set \"trials\"".into()))
    }
}

fn resolve_dist(file: &ScenarioFile, base: &Path) -> Result<MZipfDist, CliError> {
    match (&file.fit_result, file.gamma, file.q, file.m) {
        (None, Some(g), Some(q), Some(m)) => Ok(MZipfDist::new(g, q, m)?),
        (Some(p), None, None, None) => {
            let path = base.join(p);
            let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let fit: FitResult = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Ok(MZipfDist::new(fit.gamma, fit.q, fit.m)?)
        }
        _ => Err(CliError::Config(
            "scenario must give either gamma, q and m, or fit_result (not both)".into(),
        )),
    }
}

pub fn short_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}
