//! Dataset manifests: `path,mos,split,source` CSV files.
//!
//! Leading `#` lines carry metadata. `# mos_scale=lo,hi` fixes the MOS range;
//! any other comment line is kept verbatim and written back on save.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: &str = "path,mos,split,source";
const SCALE_KEY: &str = "mos_scale=";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub mos: f64,
    pub split: Split,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub mos_scale: (f64, f64),
    /// Extra comment lines, without the leading `#`.
    pub notes: Vec<String>,
    /// Directory relative entry paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, mos_scale: (f64, f64)) -> Result<Self> {
        let m = Self {
            entries,
            mos_scale,
            notes: Vec::new(),
            base_dir: PathBuf::new(),
        };
        m.validate_values()?;
        Ok(m)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Map a MOS in dataset scale to `[0, 1]`.
    pub fn normalize_mos(&self, mos: f64) -> f64 {
        let (lo, hi) = self.mos_scale;
        (mos - lo) / (hi - lo)
    }

    pub fn denormalize_mos(&self, t: f64) -> f64 {
        let (lo, hi) = self.mos_scale;
        lo + t * (hi - lo)
    }

    fn validate_values(&self) -> Result<()> {
        let (lo, hi) = self.mos_scale;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::MalformedManifest(format!("bad mos scale ({lo}, {hi})")));
        }
        for e in &self.entries {
            if !(lo..=hi).contains(&e.mos) {
                return Err(Error::MosOutOfRange { mos: e.mos, lo, hi });
            }
        }
        let train: HashSet<&Path> = self.split(Split::Train).map(|e| e.path.as_path()).collect();
        if let Some(e) = self.split(Split::Test).find(|e| train.contains(e.path.as_path())) {
            return Err(Error::MalformedManifest(format!(
                "{} appears in both splits",
                e.path.display()
            )));
        }
        Ok(())
    }

    /// Checks that every entry resolves to an existing file.
    pub fn validate_paths(&self) -> Result<()> {
        for e in &self.entries {
            let p = self.resolve(e);
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "manifest entry not found"),
                ));
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("# {SCALE_KEY}{},{}\n", self.mos_scale.0, self.mos_scale.1);
        for n in &self.notes {
            out.push('#');
            out.push_str(n);
            out.push('\n');
        }
        out.push_str(HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&e.path.to_string_lossy()),
                e.mos,
                e.split,
                csv_field(&e.source)
            ));
        }
        out
    }

    /// Parses manifest text without touching the filesystem.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut scale = None;
        let mut notes = Vec::new();
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            let Some(rest) = line.strip_prefix('#') else {
                break;
            };
            body_start += line.len();
            let rest = rest.trim_end_matches(['\n', '\r']);
            match rest.trim().strip_prefix(SCALE_KEY) {
                Some(v) => {
                    let (lo, hi) = v
                        .split_once(',')
                        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
                        .ok_or_else(|| Error::MalformedManifest(format!("bad mos_scale `{v}`")))?;
                    scale = Some((lo, hi));
                }
                None => notes.push(rest.to_string()),
            }
        }
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text[body_start..].as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| Error::MalformedManifest(e.to_string()))?
            .iter()
            .collect::<Vec<_>>()
            .join(",");
        if headers != HEADER {
            return Err(Error::MalformedManifest(format!(
                "expected header `{HEADER}`, found `{headers}`"
            )));
        }
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::MalformedManifest(e.to_string()))?;
            let mos: f64 = rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::MalformedManifest(format!("bad mos `{}`", &rec[1])))?;
            if !mos.is_finite() {
                return Err(Error::MalformedManifest(format!("bad mos `{}`", &rec[1])));
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(&rec[0]),
                mos,
                split: rec[2].trim().parse()?,
                source: rec[3].to_string(),
            });
        }
        let mos_scale = match scale {
            Some(s) => s,
            None => {
                let lo = entries.iter().map(|e| e.mos).fold(f64::INFINITY, f64::min);
                let hi = entries.iter().map(|e| e.mos).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        };
        let m = Self {
            entries,
            mos_scale,
            notes,
            base_dir: base_dir.into(),
        };
        m.validate_values()?;
        Ok(m)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = DatasetManifest::parse(&text, base)?;
    m.validate_paths()?;
    Ok(m)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest.to_csv_string()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, names: &[&str]) {
        for n in names {
            std::fs::write(dir.join(n), b"").unwrap();
        }
    }

    #[test]
    fn two_row_manifest() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), &["a.ply", "b.ply"]);
        let text = "# mos_scale=1,10\npath,mos,split,source\na.ply,3.5,train,s\nb.ply,7.1,test,s\n";
        let p = dir.path().join("m.csv");
        std::fs::write(&p, text).unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[1].mos, 7.1);
        assert_eq!(m.mos_scale, (1.0, 10.0));
        assert_eq!(m.resolve(&m.entries[0]), dir.path().join("a.ply"));
    }

    #[test]
    fn rejects_bad_rows() {
        let bad_split = "# mos_scale=1,10\npath,mos,split,source\na.ply,3.5,val,s\n";
        assert!(matches!(
            DatasetManifest::parse(bad_split, ""),
            Err(Error::UnknownSplit(s)) if s == "val"
        ));
        let out_of_range = "# mos_scale=1,10\npath,mos,split,source\na.ply,11,train,s\n";
        assert!(matches!(
            DatasetManifest::parse(out_of_range, ""),
            Err(Error::MosOutOfRange { .. })
        ));
        let overlap = "path,mos,split,source\na.ply,1,train,s\na.ply,2,test,s\n";
        assert!(DatasetManifest::parse(overlap, "").is_err());
        let header = "file,mos,split,source\na.ply,1,train,s\n";
        assert!(DatasetManifest::parse(header, "").is_err());
    }

    #[test]
    fn missing_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "path,mos,split,source\nnope.ply,1,train,s\nnope2.ply,2,test,s\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Io { .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), &["a,1.ply", "b.ply"]);
        let mut m = DatasetManifest::new(
            vec![
                ManifestEntry {
                    path: "a,1.ply".into(),
                    mos: 3.25,
                    split: Split::Train,
                    source: "synthetic".into(),
                },
                ManifestEntry {
                    path: "b.ply".into(),
                    mos: 0.1 + 0.2,
                    split: Split::Test,
                    source: "synthetic".into(),
                },
            ],
            (0.0, 10.0),
        )
        .unwrap();
        m.notes.push(" pseudo_mos a=1 b=2".into());
        let p = dir.path().join("m.csv");
        save_manifest(&m, &p).unwrap();
        let back = load_manifest(&p).unwrap();
        m.base_dir = dir.path().to_path_buf();
        assert_eq!(back, m);
    }

    #[test]
    fn scale_inferred_when_absent() {
        let m = DatasetManifest::parse("path,mos,split,source\na,2,train,s\nb,5,test,s\n", "").unwrap();
        assert_eq!(m.mos_scale, (2.0, 5.0));
        assert_eq!(m.normalize_mos(5.0), 1.0);
        assert_eq!(m.denormalize_mos(0.5), 3.5);
    }
}
