//! `run.json`: what each stage read and wrote, by content digest.
//!
//! Paths inside the output directory are recorded relative to it and
//! external inputs relative to the config directory, so two runs of the
//! same config into different directories produce the same manifest.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "run.json";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Renders `path` for the manifest: `out:<rel>` inside the output
/// directory, `cfg:<rel>` inside the config directory, else as given.
pub fn display_path(path: &Path, out_dir: &Path, config_dir: &Path) -> String {
    let slash = |p: &Path| {
        p.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    };
    if let Ok(rel) = path.strip_prefix(out_dir) {
        format!("out:{}", slash(rel))
    } else if let Ok(rel) = path.strip_prefix(config_dir) {
        format!("cfg:{}", slash(rel))
    } else {
        path.to_string_lossy().into_owned()
    }
}

impl RunManifest {
    pub fn load(out_dir: &Path) -> std::io::Result<Option<Self>> {
        match std::fs::read_to_string(out_dir.join(FILE_NAME)) {
            Ok(s) => serde_json::from_str(&s).map(Some).map_err(std::io::Error::other),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, out_dir: &Path) -> std::io::Result<PathBuf> {
        let path = out_dir.join(FILE_NAME);
        let mut json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        json.push('\n');
        std::fs::write(&path, json)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_input() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), sha256_bytes(b"abc"));
    }

    #[test]
    fn paths_are_relative_to_their_root() {
        let out = Path::new("/runs/a");
        let cfg = Path::new("/project");
        assert_eq!(
            display_path(Path::new("/runs/a/ingest/corpus.json"), out, cfg),
            "out:ingest/corpus.json"
        );
        assert_eq!(
            display_path(Path::new("/project/data/m.csv"), out, cfg),
            "cfg:data/m.csv"
        );
        assert_eq!(display_path(Path::new("/elsewhere/x"), out, cfg), "/elsewhere/x");
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap(), None);
        let mut m = RunManifest {
            config_sha256: "x".into(),
            seed: 4,
            ..Default::default()
        };
        m.stages.insert("ingest".into(), StageRecord::default());
        m.save(dir.path()).unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap(), Some(m));
    }
}
