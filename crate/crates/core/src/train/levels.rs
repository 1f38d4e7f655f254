//! Three-way quality levels from per-source MOS tertiles.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QualityLevel {
    Bad = 0,
    Fair = 1,
    Excellent = 2,
}

impl QualityLevel {
    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(QualityLevel::Bad),
            1 => Some(QualityLevel::Fair),
            2 => Some(QualityLevel::Excellent),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QualityLevel::Bad => "bad",
            QualityLevel::Fair => "fair",
            QualityLevel::Excellent => "excellent",
        }
    }
}

impl fmt::Display for QualityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bad" => Ok(QualityLevel::Bad),
            "fair" => Ok(QualityLevel::Fair),
            "excellent" => Ok(QualityLevel::Excellent),
            _ => Err(Error::InvalidArgument(format!("unknown level `{s}`"))),
        }
    }
}

/// Tertile boundaries `(b1, b2)` of a sample: values `<= b1` are bad,
/// `<= b2` fair, the rest excellent.
pub fn tertile_bounds(values: &[f64], label: &str) -> Result<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() < 3 {
        return Err(Error::TooFewEntries(label.to_string()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok((sorted[n.div_ceil(3) - 1], sorted[(2 * n).div_ceil(3) - 1]))
}

pub fn level_for(value: f64, bounds: (f64, f64)) -> QualityLevel {
    if value <= bounds.0 {
        QualityLevel::Bad
    } else if value <= bounds.1 {
        QualityLevel::Fair
    } else {
        QualityLevel::Excellent
    }
}

/// Level of every manifest entry, in entry order, from tertiles computed
/// separately for each `source`.
pub fn assign_levels(manifest: &DatasetManifest) -> Result<Vec<QualityLevel>> {
    let mut by_source: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for e in &manifest.entries {
        by_source.entry(e.source.as_str()).or_default().push(e.mos);
    }
    if by_source.is_empty() {
        return Err(Error::TooFewEntries("<empty manifest>".into()));
    }
    let bounds: BTreeMap<&str, (f64, f64)> = by_source
        .iter()
        .map(|(s, v)| Ok((*s, tertile_bounds(v, s)?)))
        .collect::<Result<_>>()?;
    Ok(manifest
        .entries
        .iter()
        .map(|e| level_for(e.mos, bounds[e.source.as_str()]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{ManifestEntry, Split};

    fn manifest(mos: &[f64]) -> DatasetManifest {
        let entries = mos
            .iter()
            .enumerate()
            .map(|(i, &m)| ManifestEntry {
                path: format!("{i}.ply").into(),
                mos: m,
                split: Split::Train,
                source: "s".into(),
            })
            .collect();
        DatasetManifest::new(entries, (0.0, 10.0)).unwrap()
    }

    #[test]
    fn exact_tertiles() {
        let levels = assign_levels(&manifest(&[5.0, 1.0, 9.0, 2.0, 3.0, 4.0, 6.0, 7.0, 8.0])).unwrap();
        let count = |l| levels.iter().filter(|&&x| x == l).count();
        assert_eq!((count(QualityLevel::Bad), count(QualityLevel::Fair), count(QualityLevel::Excellent)), (3, 3, 3));
        assert_eq!(levels[0], QualityLevel::Fair);
        assert_eq!(levels[1], QualityLevel::Bad);
        assert_eq!(levels[2], QualityLevel::Excellent);
    }

    #[test]
    fn constant_mos_rejected() {
        assert!(matches!(assign_levels(&manifest(&[4.0; 6])), Err(Error::TooFewEntries(_))));
        assert!(assign_levels(&manifest(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn boundary_ties_go_low() {
        let levels = assign_levels(&manifest(&[1.0, 2.0, 2.0, 2.0, 3.0, 4.0])).unwrap();
        // b1 = 2 so every 2 is bad
        assert_eq!(levels[1..4], [QualityLevel::Bad; 3]);
    }

    #[test]
    fn sources_are_split_separately() {
        let mut m = manifest(&[1.0, 2.0, 3.0]);
        for (i, mos) in [7.0, 8.0, 9.0].into_iter().enumerate() {
            m.entries.push(ManifestEntry {
                path: format!("t{i}.ply").into(),
                mos,
                split: Split::Test,
                source: "other".into(),
            });
        }
        let l = assign_levels(&m).unwrap();
        assert_eq!(l[0], QualityLevel::Bad);
        assert_eq!(l[3], QualityLevel::Bad);
        assert_eq!(l[5], QualityLevel::Excellent);
    }
}
