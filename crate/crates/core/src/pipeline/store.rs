//! Content-addressed stage outputs under `<run>/cache/<stage>/<key>/`.
//!
//! A key hashes the stage's configuration block together with the digests of
//! the upstream outputs it reads. A stage directory only appears under its
//! final name once every file and the manifest are written, so a directory
//! that exists is complete.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Stage};

/// Bumped whenever an artifact layout changes, invalidating old entries.
const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub key: String,
    /// Hash over the file hashes below.
    pub digest: String,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct StageDir {
    pub path: PathBuf,
    pub digest: String,
}

impl StageDir {
    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Cache key of a stage from its configuration block and upstream digests.
pub fn stage_key(stage: Stage, block: &impl Serialize, upstream: &[&str]) -> String {
    let payload = serde_json::json!({
        "stage": stage.as_str(),
        "format": FORMAT_VERSION,
        "block": block,
        "upstream": upstream,
    });
    sha256_hex(&serde_json::to_vec(&payload).expect("config blocks serialize"))
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".into(),
    });
    let mut file = fs::File::create(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    file.sync_all().map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifacts serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Store { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, stage: Stage, key: &str) -> PathBuf {
        self.root.join("cache").join(stage.as_str()).join(key)
    }

    pub fn lookup(&self, stage: Stage, key: &str) -> Result<Option<StageDir>, PipelineError> {
        let path = self.dir(stage, key);
        let manifest_path = path.join(MANIFEST);
        if !manifest_path.is_file() {
            return Ok(None);
        }
        let manifest: Manifest = read_json(&manifest_path)?;
        Ok(Some(StageDir {
            path,
            digest: manifest.digest,
        }))
    }

    /// Runs `build` in a scratch directory and publishes it under `key`.
    pub fn commit(
        &self,
        stage: Stage,
        key: &str,
        build: impl FnOnce(&Path) -> Result<(), PipelineError>,
    ) -> Result<StageDir, PipelineError> {
        let final_dir = self.dir(stage, key);
        let parent = final_dir.parent().expect("stage directories have a parent");
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        let scratch = parent.join(format!(".{key}.partial"));
        if scratch.exists() {
            fs::remove_dir_all(&scratch).map_err(|e| PipelineError::io(&scratch, e))?;
        }
        fs::create_dir(&scratch).map_err(|e| PipelineError::io(&scratch, e))?;
        build(&scratch)?;

        let mut names: Vec<String> = Vec::new();
        for entry in fs::read_dir(&scratch).map_err(|e| PipelineError::io(&scratch, e))? {
            let entry = entry.map_err(|e| PipelineError::io(&scratch, e))?;
            if entry.path().is_file() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        let mut files = BTreeMap::new();
        for name in names {
            let digest = file_digest(&scratch.join(&name))?;
            files.insert(name, digest);
        }
        let digest = sha256_hex(&serde_json::to_vec(&files).expect("file table serializes"));
        let manifest = Manifest {
            stage: stage.as_str().into(),
            key: key.into(),
            digest: digest.clone(),
            files,
        };
        write_json(&scratch.join(MANIFEST), &manifest)?;
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir).map_err(|e| PipelineError::io(&final_dir, e))?;
        }
        fs::rename(&scratch, &final_dir).map_err(|e| PipelineError::io(&final_dir, e))?;
        Ok(StageDir { path: final_dir, digest })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_track_block_and_upstream() {
        let a = stage_key(Stage::Network, &serde_json::json!({"t": 1}), &["x"]);
        assert_eq!(a, stage_key(Stage::Network, &serde_json::json!({"t": 1}), &["x"]));
        assert_ne!(a, stage_key(Stage::Network, &serde_json::json!({"t": 2}), &["x"]));
        assert_ne!(a, stage_key(Stage::Network, &serde_json::json!({"t": 1}), &["y"]));
        assert_ne!(a, stage_key(Stage::Features, &serde_json::json!({"t": 1}), &["x"]));
    }

    #[test]
    fn commit_publishes_complete_directories() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::new(tmp.path());
        assert!(store.lookup(Stage::Data, "k").unwrap().is_none());
        let failed = store.commit(Stage::Data, "k", |dir| {
            fs::write(dir.join("half.txt"), "x").unwrap();
            Err(PipelineError::Config("boom".into()))
        });
        assert!(failed.is_err());
        assert!(store.lookup(Stage::Data, "k").unwrap().is_none());

        let made = store
            .commit(Stage::Data, "k", |dir| write_atomic(&dir.join("a.txt"), b"hello"))
            .unwrap();
        let found = store.lookup(Stage::Data, "k").unwrap().unwrap();
        assert_eq!(found.digest, made.digest);
        assert_eq!(fs::read_to_string(found.file("a.txt")).unwrap(), "hello");
    }
}
