// SPDX-License-Identifier: Apache-2.0

//! Output-file helpers shared by every writer.

use std::io::Write;
use std::path::Path;

/// Writes via a temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Hex sha256 of a file's bytes.
pub fn hash_file(path: &Path) -> std::io::Result<String> {
    Ok(crate::seeds::fingerprint(&std::fs::read(path)?))
}

/// One JSON document per line.
pub fn write_jsonl<T: serde::Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &item)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}
