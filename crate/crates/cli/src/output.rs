//! Atomic artifact writers.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::Failure;

fn write_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(1, format!("cannot write {}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| write_failure(dir, e))
}

/// Writes through a temp file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| write_failure(path, e))?;
    tmp.write_all(bytes).map_err(|e| write_failure(path, e))?;
    tmp.persist(path).map_err(|e| write_failure(path, e.error))?;
    Ok(())
}

/// Adds `version` and the resolved `config` to a JSON object.
pub fn with_provenance(config: &impl serde::Serialize, mut body: Value) -> Value {
    let obj = body.as_object_mut().expect("artifact bodies are objects");
    obj.insert("version".into(), json!(actinf_core::VERSION));
    obj.insert("config".into(), serde_json::to_value(config).expect("config serializes"));
    body
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("values serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `{:.16e}`: 17 significant digits; infinities print as `inf` / `-inf`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Builds a CSV in memory and writes it atomically.
pub struct Csv {
    path: PathBuf,
    inner: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn new(path: PathBuf, header: &[String]) -> Result<Self, Failure> {
        let mut inner = csv::Writer::from_writer(Vec::new());
        inner.write_record(header).map_err(|e| write_failure(&path, e))?;
        Ok(Self { path, inner })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), Failure> {
        self.inner.write_record(fields).map_err(|e| write_failure(&self.path, e))
    }

    pub fn finish(self) -> Result<PathBuf, Failure> {
        let bytes = self.inner.into_inner().map_err(|e| write_failure(&self.path, e))?;
        write_atomic(&self.path, &bytes)?;
        Ok(self.path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
