//! Manifest entries turned into network-ready samples, with an optional
//! on-disk cache of key clusters.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::levels::{assign_levels, QualityLevel};
use crate::cloud::read_ply;
use crate::error::{Error, Result};
use crate::kce::{extract_key_clusters, KceConfig, KeyClusterSet};
use crate::manifest::{DatasetManifest, Split};
use crate::nn::{prepare_item, NetworkConfig, PreparedItem, Task};

pub const CACHE_ENV: &str = "PKT_PCQA_CACHE";

/// Key clusters keyed by the SHA-256 of the PLY bytes and the extraction
/// settings. Without a directory every request is computed afresh.
#[derive(Debug, Clone, Default)]
pub struct KceCache {
    pub dir: Option<PathBuf>,
}

impl KceCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    /// Uses the directory named by `PKT_PCQA_CACHE`, if set and non-empty.
    pub fn from_env() -> Self {
        Self {
            dir: std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
        }
    }

    pub fn key(ply_bytes: &[u8], config: &KceConfig) -> String {
        let mut h = Sha256::new();
        h.update(ply_bytes);
        h.update(format!("{config:?}").as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn key_clusters(&self, path: &Path, config: &KceConfig) -> Result<KeyClusterSet> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let cached = self.dir.as_ref().map(|d| d.join(format!("{}.pkcs", Self::key(&bytes, config))));
        if let Some(c) = &cached {
            if c.is_file() {
                let mut set = KeyClusterSet::load(c)?;
                set.source_name = name;
                return Ok(set);
            }
        }
        let pc = read_ply(std::io::Cursor::new(bytes), name)?;
        let mut set = extract_key_clusters(&pc, config)?;
        // match the precision of the on-disk format so hits and misses agree
        quantize_f32(&mut set);
        if let Some(c) = cached {
            let dir = c.parent().expect("cache file has a parent");
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            // write-then-rename keeps concurrent readers from seeing partial files
            let tmp = c.with_extension(format!("tmp{}", std::process::id()));
            set.save(&tmp)?;
            std::fs::rename(&tmp, &c).map_err(|e| Error::io(&c, e))?;
        }
        Ok(set)
    }
}

/// Rounds every stored value to f32 precision, as the cache file does.
pub(crate) fn quantize_f32(set: &mut KeyClusterSet) {
    let q = |v: &mut f64| *v = *v as f32 as f64;
    set.clusters.iter_mut().for_each(q);
    set.key_scores.iter_mut().for_each(q);
    set.key_positions.iter_mut().flatten().for_each(q);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub split: Split,
    pub mos: f64,
    /// MOS mapped to `[0, 1]` by the manifest scale.
    pub mos_norm: f64,
    pub level: QualityLevel,
    pub clusters: KeyClusterSet,
}

/// Key clusters and labels for every manifest entry, in manifest order.
pub fn load_samples(manifest: &DatasetManifest, kce: &KceConfig, cache: &KceCache) -> Result<Vec<Sample>> {
    let levels = assign_levels(manifest)?;
    manifest
        .entries
        .par_iter()
        .zip(levels)
        .map(|(e, level)| {
            let path = manifest.resolve(e);
            let clusters = cache.key_clusters(&path, kce)?;
            Ok(Sample {
                name: e.path.to_string_lossy().into_owned(),
                split: e.split,
                mos: e.mos,
                mos_norm: manifest.normalize_mos(e.mos),
                level,
                clusters,
            })
        })
        .collect()
}

/// A sample with its task-specific network input.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub name: String,
    pub mos_norm: f64,
    pub level: usize,
    pub item: PreparedItem,
}

pub fn prepare_samples(samples: &[Sample], split: Split, net: &NetworkConfig, task: Task) -> Result<Vec<TrainItem>> {
    samples
        .par_iter()
        .filter(|s| s.split == split)
        .map(|s| {
            Ok(TrainItem {
                name: s.name.clone(),
                mos_norm: s.mos_norm,
                level: s.level.index(),
                item: prepare_item(&s.clusters, net, task)?,
            })
        })
        .collect()
}
