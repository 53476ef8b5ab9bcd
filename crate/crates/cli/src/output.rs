//! Atomic file output and report serialization helpers.

use std::io::Write;
use std::path::Path;

use serde::Serializer;

use crate::error::{CliError, CliResult};

/// Version stamped into every machine-readable output.
pub const SCHEMA_VERSION: u32 = 1;

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Writes CSV rows (the first row is the header).
pub fn write_csv(path: &Path, rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(row).map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Serializes non-finite values as the strings `"inf"`, `"-inf"` or `"nan"`.
pub fn number_or_inf<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&format_number(*v))
    }
}

/// Display form shared by text tables and JSON.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(serde::Serialize)]
    struct Row {
        #[serde(serialize_with = "number_or_inf")]
        psnr: f64,
    }

    #[test]
    fn infinity_serializes_as_string() {
        assert_eq!(serde_json::to_string(&Row { psnr: f64::INFINITY }).unwrap(), r#"{"psnr":"inf"}"#);
        assert_eq!(serde_json::to_string(&Row { psnr: 20.5 }).unwrap(), r#"{"psnr":20.5}"#);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested").join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
