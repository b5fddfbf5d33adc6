use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::experiments::Outcome;

#[derive(Debug, Serialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Run record written next to the artifacts.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub config: Value,
    pub seed: Option<u64>,
    pub workers: usize,
    pub artifacts: Vec<ArtifactEntry>,
    /// SHA-256 over `name\0len\0bytes` of every artifact in order.
    pub content_digest: String,
    pub summary: String,
    pub failed_invariant: Option<String>,
    pub wall_time_s: f64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &str, config: Value, seed: Option<u64>, workers: usize, outcome: &Outcome, wall_time_s: f64) -> Self {
        let mut total = Sha256::new();
        let artifacts = outcome
            .artifacts
            .iter()
            .map(|(name, bytes)| {
                total.update(name.as_bytes());
                total.update([0]);
                total.update(bytes.len().to_string().as_bytes());
                total.update([0]);
                total.update(bytes);
                ArtifactEntry { name: name.clone(), bytes: bytes.len(), sha256: hex(&Sha256::digest(bytes)) }
            })
            .collect();
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config,
            seed,
            workers,
            artifacts,
            content_digest: hex(&total.finalize()),
            summary: outcome.summary.clone(),
            failed_invariant: outcome.failed_invariant.clone(),
            wall_time_s,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("manifest serializes");
        out.push(b'\n');
        out
    }
}
