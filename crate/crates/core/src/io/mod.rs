//! File formats: PPM images, lattice files, `.cube` export and pair manifests.

pub mod cube;
pub mod lattice_file;
pub mod ppm;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use lattice_file::{load_file, load_lattice, save_file, save_lattice, LatticeFile};
pub use ppm::{read_image, write_image, BitDepth};

/// Parses a manifest of `input<TAB>target` lines.
///
/// Blank lines and lines starting with `#` are skipped. Relative paths are
/// resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) if !a.trim().is_empty() && !b.trim().is_empty() => {
                pairs.push((base.join(a.trim()), base.join(b.trim())));
            }
            _ => {
                return Err(Error::Format(format!(
                    "manifest line {}: expected input<TAB>target",
                    i + 1
                )))
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Format("manifest lists no pairs".into()));
    }
    Ok(pairs)
}

pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lines() {
        let pairs = parse_manifest("# pairs\na.ppm\tb.ppm\n\n/x/c.ppm\td.ppm\n", Path::new("/d")).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].0, PathBuf::from("/d/a.ppm"));
        assert_eq!(pairs[1].0, PathBuf::from("/x/c.ppm"));
        assert!(parse_manifest("a.ppm b.ppm\n", Path::new("")).is_err());
        assert!(parse_manifest("", Path::new("")).is_err());
    }
}
