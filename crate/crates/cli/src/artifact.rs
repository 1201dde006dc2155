//! Output files: every artifact carries the tool version and config hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use phaseid::{Error, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Serialized run configuration plus digests of every input file.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: &'static str,
    pub config: Value,
    pub inputs: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn new(command: &'static str, config: &impl Serialize) -> Self {
        Self {
            command,
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(role.to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("record serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

pub struct OutDir {
    dir: PathBuf,
    header: String,
    hash: String,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path, record: &RunRecord) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let hash = record.hash();
        Ok(Self {
            dir: dir.to_path_buf(),
            header: format!("# tool=phaseid {VERSION} config_hash={hash}\n"),
            hash,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Writes a CSV produced by `body` behind a `#` header line.
    pub fn csv(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = self.header.clone().into_bytes();
        body(&mut buf)?;
        self.put(name, &buf)
    }

    /// Writes `value` wrapped with tool, version and config hash.
    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut v = serde_json::to_value(value).expect("artifact serializes");
        if let Value::Object(map) = &mut v {
            map.insert("tool".into(), "phaseid".into());
            map.insert("version".into(), VERSION.into());
            map.insert("config_hash".into(), self.hash.clone().into());
        }
        let mut text = serde_json::to_string_pretty(&v).expect("artifact serializes");
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    /// Writes the run report, listing every artifact written so far.
    pub fn report(&mut self, record: &RunRecord, results: Value) -> Result<()> {
        let body = serde_json::json!({
            "run": record,
            "artifacts": self.written.clone(),
            "results": results,
        });
        self.json("report.json", &body)
    }
}
