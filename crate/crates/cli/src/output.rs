//! CSV and JSON emission. Every CSV starts with a `# config_hash=… seed=…`
//! line followed by the header, and lands on disk by rename so readers never
//! see a partial file.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// SHA-256 of the JSON form of the fully resolved run configuration.
pub fn config_hash<T: Serialize>(resolved: &T) -> String {
    let json = serde_json::to_vec(resolved).expect("config is plain data");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Header plus one record per row.
pub fn csv_body<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Config(format!("csv encoding: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(format!("csv encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv(path: &Path, hash: &str, seed: Option<u64>, body: &str) -> Result<(), CliError> {
    let err = |source| CliError::Write { path: path.to_owned(), source };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    write!(tmp, "# config_hash={hash} seed={seed}\n{body}").map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

/// The one JSON line each command prints on stdout.
pub fn summary(value: serde_json::Value) {
    println!("{value}");
}
