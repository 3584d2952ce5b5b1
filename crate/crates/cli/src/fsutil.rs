//! Atomic output and input discovery.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use flnet_core::raster::{read_raster, write_raster};
use flnet_core::Raster;

use crate::config::ConfigError;

/// A required input does not exist.
#[derive(Debug)]
pub struct MissingFile(pub PathBuf);

impl fmt::Display for MissingFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing input: {}", self.0.display())
    }
}

impl std::error::Error for MissingFile {}

pub fn require_file(path: &Path) -> Result<(), MissingFile> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingFile(path.to_path_buf()))
    }
}

/// Writes `bytes` to a hidden sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().with_context(|| format!("{} has no file name", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn load_raster(path: &Path) -> Result<Raster> {
    require_file(path)?;
    read_raster(path).with_context(|| format!("reading {}", path.display()))
}

pub fn save_raster(r: &Raster, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_raster(r, path).with_context(|| format!("writing {}", path.display()))
}

/// Scene bundle directories: `dir` itself if it holds a manifest, else its
/// immediate subdirectories that do, sorted by name.
pub fn scene_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    require_file(dir)?;
    if dir.join("manifest.txt").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.join("manifest.txt").is_file() {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(MissingFile(dir.join("*/manifest.txt")).into());
    }
    Ok(out)
}

/// Whole-scene split: the last `ceil(n * val_fraction)` scenes validate.
pub fn split_scenes(dirs: &[PathBuf], val_fraction: f64) -> Result<(Vec<PathBuf>, Vec<PathBuf>), ConfigError> {
    let n = dirs.len();
    if n < 2 {
        return Err(ConfigError(format!("need at least two scenes for a scene-level split, found {n}")));
    }
    let n_val = ((n as f64 * val_fraction).ceil() as usize).clamp(1, n - 1);
    Ok((dirs[..n - n_val].to_vec(), dirs[n - n_val..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_keeps_both_sides_non_empty() {
        let dirs: Vec<PathBuf> = (0..5).map(|i| PathBuf::from(format!("s{i}"))).collect();
        let (t, v) = split_scenes(&dirs, 0.2).unwrap();
        assert_eq!((t.len(), v.len()), (4, 1));
        let (t, v) = split_scenes(&dirs[..2], 0.9).unwrap();
        assert_eq!((t.len(), v.len()), (1, 1));
        assert!(split_scenes(&dirs[..1], 0.5).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("a/b.txt");
        write_atomic(&p, b"x").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"x");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
