//! Output helpers shared by the report writers.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Fixed 17-significant-digit float formatting for CSV output.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write `bytes` to a temporary sibling of `path`, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// CSV text from a header and rows of floats.
pub fn csv_table(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "{}", header.join(",")).expect("write to Vec");
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_f64).collect();
        writeln!(out, "{}", cells.join(",")).expect("write to Vec");
    }
    out
}
