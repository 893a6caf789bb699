//! Provenance record written next to every fit.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use incmix_core::model::ModelConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::io::write_text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl InputDigest {
    pub fn of(role: &str, path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(InputDigest {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256: hex(&Sha256::digest(&data)),
            bytes: data.len() as u64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub inputs: Vec<InputDigest>,
    /// Digest over every input's role, length and content digest.
    pub inputs_sha256: String,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub phases: Vec<Phase>,
    #[serde(skip)]
    clock: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &str, config: &ModelConfig, inputs: Vec<InputDigest>) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.mcmc.seed,
            config: config.clone(),
            inputs_sha256: combined_digest(&inputs),
            inputs,
            started_unix,
            wall_seconds: 0.0,
            phases: Vec::new(),
            clock: Some(Instant::now()),
        }
    }

    /// Run `f` and record its duration under `name`.
    pub fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f();
        self.phases.push(Phase {
            name: name.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        if let Some(c) = self.clock {
            self.wall_seconds = c.elapsed().as_secs_f64();
        }
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::format(path, format!("cannot serialise manifest: {e}")))?;
        write_text(path, &(json + "\n"))
    }
}

pub fn combined_digest(inputs: &[InputDigest]) -> String {
    let mut h = Sha256::new();
    for d in inputs {
        h.update(d.role.as_bytes());
        h.update([0]);
        h.update(d.bytes.to_le_bytes());
        h.update(d.sha256.as_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digests(dir: &Path, contents: &[&[u8]]) -> Vec<InputDigest> {
        contents
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let p = dir.join(format!("in{j}.csv"));
                std::fs::write(&p, c).unwrap();
                InputDigest::of(&format!("input{j}"), &p).unwrap()
            })
            .collect()
    }

    #[test]
    fn sha256_of_known_input() {
        let d = tempfile::tempdir().unwrap();
        let got = digests(d.path(), &[b"abc"]);
        assert_eq!(got[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(got[0].bytes, 3);
    }

    #[test]
    fn combined_digest_tracks_every_byte() {
        let d = tempfile::tempdir().unwrap();
        let base = combined_digest(&digests(d.path(), &[b"a,b\n1,2\n", b"x\n"]));
        assert_eq!(base, combined_digest(&digests(d.path(), &[b"a,b\n1,2\n", b"x\n"])));
        assert_ne!(base, combined_digest(&digests(d.path(), &[b"a,b\n1,3\n", b"x\n"])));
        assert_ne!(base, combined_digest(&digests(d.path(), &[b"a,b\n1,2\n", b"x\n\n"])));
        // moving a byte between files changes the digest too
        assert_ne!(base, combined_digest(&digests(d.path(), &[b"a,b\n1,2\n\n", b"x"])));
    }
}
