//! Result artifacts: atomically written JSON and commented CSV.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::Failure;

/// Writes through a temp file in the target directory, then renames, so a
/// crash never leaves a truncated artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let fail = |e| Failure::Output(path.to_path_buf(), e);
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent).map_err(fail)?;
    let mut tmp = NamedTempFile::new_in(parent).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("results serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// First CSV line: `# gfgn <command> <config as compact JSON>`.
pub fn csv_preamble(command: &str, config: &impl Serialize) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    format!("# gfgn {command} {json}\n")
}
