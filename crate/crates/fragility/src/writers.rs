//! Output directory handling: CSV and JSON artifacts, their digests, and
//! reading upstream artifacts back.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ingest::{sha256_hex, write_atomic};

/// JSON has no infinities; non-finite numbers are written as strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
    } else if x.is_nan() {
        Value::String("nan".into())
    } else if x > 0.0 {
        Value::String("inf".into())
    } else {
        Value::String("-inf".into())
    }
}

/// The inverse of [`num`].
pub fn from_num(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            _ => None,
        },
        _ => None,
    }
}

pub fn cell(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        num(x).as_str().unwrap_or("nan").to_string()
    }
}

pub fn opt_cell(x: Option<f64>) -> String {
    x.map(cell).unwrap_or_default()
}

/// One reported number, tagged with the module that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub module: String,
    pub name: String,
    pub value: Value,
    pub config_digest: String,
}

/// Wrapper written around every JSON artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub entries: Vec<Entry>,
    pub body: T,
}

/// The `--out` directory of one command run.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
    inputs: BTreeMap<String, String>,
}

impl OutDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            written: Vec::new(),
            inputs: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn inputs(&self) -> &BTreeMap<String, String> {
        &self.inputs
    }

    pub fn note_input(&mut self, name: impl Into<String>, digest: impl Into<String>) {
        self.inputs.insert(name.into(), digest.into());
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(name), bytes)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| Error::Output(format!("{name}: {e}"));
        w.write_record(header).map_err(fail)?;
        for row in rows {
            if row.len() != header.len() {
                return Err(Error::Output(format!(
                    "{name}: row has {} fields, header {}",
                    row.len(),
                    header.len()
                )));
            }
            w.write_record(row).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Output(format!("{name}: {e}")))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Output(format!("{name}: {e}")))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Reads an upstream artifact written under the same config, recording
    /// its digest as an input. A missing or stale file is a dependency
    /// error naming `producer`.
    pub fn read_artifact<T: DeserializeOwned>(
        &mut self,
        name: &str,
        producer: &str,
        config_digest: &str,
    ) -> Result<Artifact<T>> {
        let path = self.path(name);
        let missing = |why: &str| Error::Dependency {
            artifact: format!("{} ({why})", path.display()),
            producer: producer.into(),
        };
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(missing("not found")),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let art: Artifact<T> = serde_json::from_slice(&bytes).map_err(|_| missing("unreadable"))?;
        if art.config_digest != config_digest {
            return Err(missing("written under a different config"));
        }
        self.note_input(name, sha256_hex(&bytes));
        Ok(art)
    }
}
