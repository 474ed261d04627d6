//! Small file-system helpers shared by the persistence layers.

use std::fs;
use std::path::Path;

use crate::error::Result;

/// Write `bytes` to `path` atomically: write a sibling temp file, then
/// rename over the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn temp_sibling(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Format a float with 17 significant digits, enough to round-trip any f64
/// exactly through decimal text.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}
