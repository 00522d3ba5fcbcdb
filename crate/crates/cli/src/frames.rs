//! Frame directories: `{id}.bin`, `{id}.label`, `{id}.pgm`, `{id}.calib.txt`
//! and, after corruption, `{id}.calib_label.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use recalib_core::geometry::{parse_calibration, CalibrationSet};
use recalib_core::scene_io::{read_cloud_bin, read_labels, read_mask_pgm, LabeledCloud, SegMask};

pub const CALIB_SUFFIX: &str = ".calib.txt";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct FramePaths {
    pub dir: PathBuf,
    pub id: String,
}

impl FramePaths {
    pub fn new(dir: &Path, id: &str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            id: id.to_string(),
        }
    }

    fn with(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}", self.id))
    }

    pub fn cloud(&self) -> PathBuf {
        self.with(".bin")
    }

    pub fn labels(&self) -> PathBuf {
        self.with(".label")
    }

    pub fn mask(&self) -> PathBuf {
        self.with(".pgm")
    }

    pub fn calib(&self) -> PathBuf {
        self.with(CALIB_SUFFIX)
    }

    pub fn calib_label(&self) -> PathBuf {
        self.with(".calib_label.txt")
    }

    pub fn align(&self) -> PathBuf {
        self.with(".align.rctf")
    }

    pub fn calib5(&self) -> PathBuf {
        self.with(".calib5.rctf")
    }
}

/// Frame ids of every `{id}.calib.txt` in `dir`, sorted.
pub fn discover(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))? {
        let name = entry?.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(CALIB_SUFFIX)) {
            if !id.is_empty() {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_calib(path: &Path) -> Result<CalibrationSet> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_calibration(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Cloud with labels; a missing `.label` file leaves every point unlabeled.
pub fn read_cloud(paths: &FramePaths) -> Result<LabeledCloud> {
    let path = paths.cloud();
    let mut cloud =
        read_cloud_bin(&read_bytes(&path)?).with_context(|| format!("parsing {}", path.display()))?;
    let label_path = paths.labels();
    if label_path.exists() {
        cloud.labels = read_labels(&read_bytes(&label_path)?, cloud.len())
            .with_context(|| format!("parsing {}", label_path.display()))?;
    }
    Ok(cloud)
}

pub fn read_mask(paths: &FramePaths) -> Result<SegMask> {
    let path = paths.mask();
    read_mask_pgm(&read_bytes(&path)?).with_context(|| format!("parsing {}", path.display()))
}

/// The label calibration when present.
pub fn read_label(paths: &FramePaths) -> Result<Option<CalibrationSet>> {
    let path = paths.calib_label();
    if path.exists() {
        read_calib(&path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))
}
