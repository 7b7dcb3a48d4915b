use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::Path;

use cbm_core::coalition::CoalitionConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::{FormatArg, TransportArg};
use crate::commands::CliError;

pub const BUILD_ID: &str = env!("CBM_BUILD_ID");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub path: String,
    pub sha256: String,
    pub format: FormatArg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub elapsed_s: f64,
    pub iterations: u64,
    pub timed_out: bool,
    pub agreed: bool,
}

/// Reproducibility record written next to every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub build_id: String,
    pub command: String,
    pub argv: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instances: Vec<InstanceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coalition: Option<CoalitionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportArg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listen: Option<SocketAddr>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub peers: Vec<SocketAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lp: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

impl RunManifest {
    pub fn new() -> Self {
        Self {
            tool: "cbm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            build_id: BUILD_ID.into(),
            command: String::new(),
            argv: Vec::new(),
            started_at: String::new(),
            finished_at: String::new(),
            instance: None,
            instances: Vec::new(),
            coalition: None,
            transport: None,
            listen: None,
            peers: Vec::new(),
            runs: None,
            generator: None,
            lp: None,
            outcome: None,
        }
    }

    pub fn finish(mut self) -> Self {
        self.finished_at = chrono::Utc::now().to_rfc3339();
        self
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::runtime(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}
