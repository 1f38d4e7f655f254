//! Synthetic degradations, pseudo-MOS labels and corpus synthesis.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cloud::{bounding_box, sub, write_ply, PlyEncoding, PointCloud};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::metrics::symmetric_nn_mse;

pub const COLOR_SIGMA: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];
/// Fractions of the bounding-box diagonal.
pub const GEOMETRY_SIGMA: [f64; 5] = [0.001, 0.002, 0.004, 0.008, 0.016];
pub const KEEP_FRACTION: [f64; 5] = [0.9, 0.7, 0.5, 0.3, 0.15];
pub const OCTREE_BITS: [u32; 5] = [10, 9, 8, 7, 6];

/// Weight of the normalized geometry RMSE in the pseudo-MOS.
pub const PSEUDO_MOS_A: f64 = 60.0;
/// Weight of the luma RMSE (in units of full scale) in the pseudo-MOS.
pub const PSEUDO_MOS_B: f64 = 40.0;
pub const MOS_RANGE: (f64, f64) = (1.0, 10.0);

pub const SIDECAR_NAME: &str = "distortions.txt";
pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistortionKind {
    ColorNoise,
    GeometryGaussian,
    Downsample,
    OctreeQuantize,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 4] = [
        DistortionKind::ColorNoise,
        DistortionKind::GeometryGaussian,
        DistortionKind::Downsample,
        DistortionKind::OctreeQuantize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistortionKind::ColorNoise => "color-noise",
            DistortionKind::GeometryGaussian => "geometry-gaussian",
            DistortionKind::Downsample => "downsample",
            DistortionKind::OctreeQuantize => "octree-quantize",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }

    /// Level-table value as printed in the sidecar.
    pub fn parameter(self, level: u8) -> f64 {
        let i = level as usize - 1;
        match self {
            DistortionKind::ColorNoise => COLOR_SIGMA[i],
            DistortionKind::GeometryGaussian => GEOMETRY_SIGMA[i],
            DistortionKind::Downsample => KEEP_FRACTION[i],
            DistortionKind::OctreeQuantize => OCTREE_BITS[i] as f64,
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidDistortion(format!("unknown kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub level: u8,
    pub seed: u64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, level: u8, seed: u64) -> Result<Self> {
        if !(1..=5).contains(&level) {
            return Err(Error::InvalidDistortion(format!("level {level} outside 1..=5")));
        }
        Ok(Self { kind, level, seed })
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.kind.stream());
        rng
    }
}

/// Applies one degradation. Draws do not depend on the level, so a higher
/// level perturbs the same points in the same directions by more.
pub fn apply_distortion(pc: &PointCloud, spec: &DistortionSpec) -> Result<PointCloud> {
    let spec = DistortionSpec::new(spec.kind, spec.level, spec.seed)?;
    let p = spec.kind.parameter(spec.level);
    let name = format!("{}_{}_L{}_s{}", pc.base_name(), spec.kind, spec.level, spec.seed);
    let mut rng = spec.rng();
    match spec.kind {
        DistortionKind::ColorNoise => {
            let colors = pc
                .colors()
                .iter()
                .map(|c| {
                    c.map(|v| {
                        let z: f64 = rng.sample(StandardNormal);
                        (v as f64 + p * z).round().clamp(0.0, 255.0) as u8
                    })
                })
                .collect();
            PointCloud::new(pc.coords().to_vec(), colors, name)
        }
        DistortionKind::GeometryGaussian => {
            let s = p * pc.bbox_diagonal();
            let coords = pc
                .coords()
                .iter()
                .map(|c| {
                    c.map(|v| {
                        let z: f64 = rng.sample(StandardNormal);
                        v + s * z
                    })
                })
                .collect();
            PointCloud::new(coords, pc.colors().to_vec(), name)
        }
        DistortionKind::Downsample => {
            let mut coords = Vec::new();
            let mut colors = Vec::new();
            for (c, k) in pc.coords().iter().zip(pc.colors()) {
                let u: f64 = rng.random();
                if u < p {
                    coords.push(*c);
                    colors.push(*k);
                }
            }
            if coords.is_empty() {
                return Err(Error::EmptyResult);
            }
            PointCloud::new(coords, colors, name)
        }
        DistortionKind::OctreeQuantize => octree_quantize(pc, OCTREE_BITS[spec.level as usize - 1], name),
    }
}

/// Snaps coordinates to a cubic grid of `2^bits` positions per axis spanning
/// the largest bounding-box extent; coincident points are merged with their
/// colors averaged. Output order follows the first occurrence of each cell.
pub fn octree_quantize(pc: &PointCloud, bits: u32, name: impl Into<String>) -> Result<PointCloud> {
    let (lo, hi) = bounding_box(pc.coords());
    let extent = sub(hi, lo).into_iter().fold(0.0, f64::max);
    if extent == 0.0 {
        return PointCloud::new(vec![pc.coords()[0]], vec![average(pc.colors().iter())], name);
    }
    let step = extent / ((1u64 << bits) - 1) as f64;
    let mut slot: HashMap<[i64; 3], usize> = HashMap::new();
    let mut cells: Vec<([i64; 3], [u64; 3], u64)> = Vec::new();
    for (c, k) in pc.coords().iter().zip(pc.colors()) {
        let key: [i64; 3] = std::array::from_fn(|a| ((c[a] - lo[a]) / step).round() as i64);
        let i = *slot.entry(key).or_insert_with(|| {
            cells.push((key, [0; 3], 0));
            cells.len() - 1
        });
        let cell = &mut cells[i];
        for a in 0..3 {
            cell.1[a] += k[a] as u64;
        }
        cell.2 += 1;
    }
    let coords = cells
        .iter()
        .map(|(key, _, _)| std::array::from_fn(|a| lo[a] + key[a] as f64 * step))
        .collect();
    let colors = cells
        .iter()
        .map(|(_, sum, n)| sum.map(|s| ((s as f64) / (*n as f64)).round() as u8))
        .collect();
    PointCloud::new(coords, colors, name)
}

fn average<'a>(it: impl Iterator<Item = &'a [u8; 3]>) -> [u8; 3] {
    let mut s = [0u64; 3];
    let mut n = 0u64;
    for c in it {
        for a in 0..3 {
            s[a] += c[a] as u64;
        }
        n += 1;
    }
    s.map(|v| (v as f64 / n as f64).round() as u8)
}

/// Maps both clouds into the reference's normalized frame (reference
/// centroid at the origin, farthest reference point at distance 1).
pub fn normalize_pair(reference: &PointCloud, distorted: &PointCloud) -> Result<(PointCloud, PointCloud)> {
    let c = reference.centroid();
    let r = reference
        .coords()
        .iter()
        .map(|&p| crate::cloud::norm(sub(p, c)))
        .fold(0.0, f64::max);
    if r == 0.0 {
        return Err(Error::DegenerateCloud);
    }
    let map = |pc: &PointCloud| {
        let coords = pc.coords().iter().map(|&p| sub(p, c).map(|v| v / r)).collect();
        PointCloud::new(coords, pc.colors().to_vec(), pc.name.clone())
    };
    Ok((map(reference)?, map(distorted)?))
}

/// Errors feeding the pseudo-MOS, measured in the reference's normalized
/// frame: symmetric point-to-point geometry RMSE and luma RMSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoMosTerms {
    pub geom_rmse: f64,
    pub y_rmse: f64,
}

pub fn pseudo_mos_terms(reference: &PointCloud, distorted: &PointCloud) -> PseudoMosTerms {
    let (g, y) = match normalize_pair(reference, distorted) {
        Ok((r, d)) => symmetric_nn_mse(&r, &d),
        // a single-position reference has no scale; compare raw coordinates
        Err(_) => symmetric_nn_mse(reference, distorted),
    };
    PseudoMosTerms {
        geom_rmse: g.sqrt(),
        y_rmse: y.sqrt(),
    }
}

impl PseudoMosTerms {
    pub fn score(&self) -> f64 {
        (10.0 - PSEUDO_MOS_A * self.geom_rmse - PSEUDO_MOS_B * self.y_rmse / 255.0).clamp(MOS_RANGE.0, MOS_RANGE.1)
    }
}

/// `10 - a * geometry RMSE - b * luma RMSE / 255`, clamped to `[1, 10]`.
pub fn pseudo_mos(reference: &PointCloud, distorted: &PointCloud) -> f64 {
    pseudo_mos_terms(reference, distorted).score()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub kinds: Vec<DistortionKind>,
    pub levels: Vec<u8>,
    pub seeds: Vec<u64>,
    /// Drives the reference-level train/test assignment.
    pub split_seed: u64,
    pub encoding: PlyEncoding,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            kinds: DistortionKind::ALL.to_vec(),
            levels: vec![1, 2, 3, 4, 5],
            seeds: vec![0],
            split_seed: 0,
            encoding: PlyEncoding::BinaryLittleEndian,
        }
    }
}

/// Picks the references held out for testing: about 20%, at least one when
/// there are two or more references, never all of them.
pub fn test_references(n_refs: usize, split_seed: u64) -> Vec<bool> {
    let mut test = vec![false; n_refs];
    if n_refs < 2 {
        return test;
    }
    let n_test = ((n_refs as f64 * 0.2).round() as usize).clamp(1, n_refs - 1);
    let mut order: Vec<usize> = (0..n_refs).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    for &i in &order[..n_test] {
        test[i] = true;
    }
    test
}

struct Job {
    ref_idx: usize,
    spec: DistortionSpec,
}

/// Writes every reference × kind × level × seed combination as a PLY plus
/// `manifest.csv` and a parameter sidecar into `out_dir`.
pub fn synthesize_corpus(refs: &[PointCloud], spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let mut names = std::collections::HashSet::new();
    for r in refs {
        if !names.insert(r.base_name()) {
            return Err(Error::InvalidArgument(format!("duplicate reference name `{}`", r.base_name())));
        }
    }
    let mut jobs = Vec::new();
    for ref_idx in 0..refs.len() {
        for &kind in &spec.kinds {
            for &level in &spec.levels {
                for &seed in &spec.seeds {
                    jobs.push(Job {
                        ref_idx,
                        spec: DistortionSpec::new(kind, level, seed)?,
                    });
                }
            }
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<(String, PseudoMosTerms)> = jobs
        .par_iter()
        .map(|job| {
            let reference = &refs[job.ref_idx];
            let d = apply_distortion(reference, &job.spec)?;
            let terms = pseudo_mos_terms(reference, &d);
            let file = format!("{}.ply", d.name);
            write_ply(out_dir.join(&file), &d, spec.encoding)?;
            Ok((file, terms))
        })
        .collect::<Result<_>>()?;

    let is_test = test_references(refs.len(), spec.split_seed);
    let mut entries = Vec::with_capacity(jobs.len());
    let mut sidecar = format!(
        "# pseudo_mos = clamp(10 - a*geom_rmse - b*y_rmse/255, 1, 10), a={PSEUDO_MOS_A}, b={PSEUDO_MOS_B}\n\
         # color-noise sigma per level: {COLOR_SIGMA:?}\n\
         # geometry-gaussian sigma (fraction of bbox diagonal) per level: {GEOMETRY_SIGMA:?}\n\
         # downsample keep fraction per level: {KEEP_FRACTION:?}\n\
         # octree-quantize bits per level: {OCTREE_BITS:?}\n\
         # split_seed={}\n\
         file,reference,split,kind,level,seed,parameter,geom_rmse,y_rmse,pseudo_mos\n",
        spec.split_seed
    );
    for (job, (file, terms)) in jobs.iter().zip(&results) {
        let reference = refs[job.ref_idx].base_name();
        let split = if is_test[job.ref_idx] { Split::Test } else { Split::Train };
        let mos = terms.score();
        sidecar.push_str(&format!(
            "{file},{reference},{split},{},{},{},{},{},{},{mos}\n",
            job.spec.kind,
            job.spec.level,
            job.spec.seed,
            job.spec.kind.parameter(job.spec.level),
            terms.geom_rmse,
            terms.y_rmse
        ));
        entries.push(ManifestEntry {
            path: file.clone().into(),
            mos,
            split,
            source: "synthetic".into(),
        });
    }
    let mut manifest = DatasetManifest::new(entries, MOS_RANGE)?;
    manifest.notes.push(format!(" pseudo_mos a={PSEUDO_MOS_A} b={PSEUDO_MOS_B}"));
    manifest.base_dir = out_dir.to_path_buf();
    let sidecar_path = out_dir.join(SIDECAR_NAME);
    std::fs::write(&sidecar_path, sidecar).map_err(|e| Error::io(sidecar_path, e))?;
    crate::manifest::save_manifest(&manifest, out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Surface families for procedural reference clouds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefShape {
    Sphere,
    Torus,
    Cube,
    Cylinder,
    Saddle,
    Knot,
}

impl RefShape {
    pub const ALL: [RefShape; 6] = [
        RefShape::Sphere,
        RefShape::Torus,
        RefShape::Cube,
        RefShape::Cylinder,
        RefShape::Saddle,
        RefShape::Knot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RefShape::Sphere => "sphere",
            RefShape::Torus => "torus",
            RefShape::Cube => "cube",
            RefShape::Cylinder => "cylinder",
            RefShape::Saddle => "saddle",
            RefShape::Knot => "knot",
        }
    }
}

/// Samples `n` points on a textured procedural surface.
pub fn generate_reference(shape: RefShape, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("reference needs at least one point".into()));
    }
    use std::f64::consts::TAU;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freq: [f64; 3] = std::array::from_fn(|_| rng.random_range(2.0..7.0));
    let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..TAU));
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(70.0..180.0));
    let mut coords = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let p = match shape {
            RefShape::Sphere => {
                let z = 2.0 * u - 1.0;
                let t = TAU * v;
                let s = (1.0 - z * z).sqrt();
                [s * t.cos(), s * t.sin(), z]
            }
            RefShape::Torus => {
                let (a, b) = (TAU * u, TAU * v);
                let r = 1.0 + 0.35 * b.cos();
                [r * a.cos(), r * a.sin(), 0.35 * b.sin()]
            }
            RefShape::Cube => {
                let face = rng.random_range(0..6usize);
                let (a, b) = (2.0 * u - 1.0, 2.0 * v - 1.0);
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, a, b],
                    1 => [a, s, b],
                    _ => [a, b, s],
                }
            }
            RefShape::Cylinder => {
                let t = TAU * u;
                [t.cos(), t.sin(), 2.0 * v - 1.0]
            }
            RefShape::Saddle => {
                let (x, y) = (2.0 * u - 1.0, 2.0 * v - 1.0);
                [x, y, 0.6 * (x * x - y * y)]
            }
            RefShape::Knot => {
                let t = TAU * u;
                let c = [
                    t.sin() + 2.0 * (2.0 * t).sin(),
                    t.cos() - 2.0 * (2.0 * t).cos(),
                    -(3.0 * t).sin(),
                ];
                let a = TAU * v;
                [c[0] + 0.4 * a.cos(), c[1] + 0.4 * a.sin(), c[2] + 0.4 * (a + t).sin()]
            }
        };
        let color: [u8; 3] = std::array::from_fn(|ch| {
            let w = (freq[ch] * (p[ch] + 0.5 * p[(ch + 1) % 3]) + phase[ch]).sin();
            let stripe = if ((p[(ch + 2) % 3] * freq[ch] * 2.0).floor() as i64).rem_euclid(2) == 0 { 25.0 } else { -25.0 };
            (base[ch] + 60.0 * w + stripe).round().clamp(0.0, 255.0) as u8
        });
        coords.push(p);
        colors.push(color);
    }
    PointCloud::new(coords, colors, format!("{}{}", shape.as_str(), seed))
}

/// `count` references cycling through the shape families with distinct seeds.
pub fn generate_references(count: usize, points: usize, seed: u64) -> Result<Vec<PointCloud>> {
    (0..count)
        .map(|i| {
            let shape = RefShape::ALL[i % RefShape::ALL.len()];
            let mut pc = generate_reference(shape, points, seed.wrapping_mul(1000).wrapping_add(i as u64))?;
            pc.name = format!("ref{i:02}_{}", shape.as_str());
            Ok(pc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{dist2, load_ply};
    use crate::metrics::luma;

    fn sphere(n: usize) -> PointCloud {
        generate_reference(RefShape::Sphere, n, 3).unwrap()
    }

    #[test]
    fn color_noise_keeps_coordinates() {
        let mut pc = sphere(500);
        pc = PointCloud::new(pc.coords().to_vec(), vec![[128; 3]; 500], "gray").unwrap();
        for level in 1..=5 {
            let d = apply_distortion(&pc, &DistortionSpec::new(DistortionKind::ColorNoise, level, 7).unwrap()).unwrap();
            assert_eq!(d.coords(), pc.coords());
            assert_ne!(d.colors(), pc.colors());
        }
    }

    #[test]
    fn octree_fixed_point() {
        // step = (1023/1024) / 1023 = 2^-10, every coordinate a multiple of it
        let step = 1.0 / 1024.0;
        let mut coords = vec![[0.0; 3], [1023.0 * step, 0.0, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            coords.push(std::array::from_fn(|_| rng.random_range(0..1024u32) as f64 * step));
        }
        coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
        coords.dedup();
        let n = coords.len();
        let pc = PointCloud::new(coords, vec![[9, 8, 7]; n], "grid").unwrap();
        let q = apply_distortion(&pc, &DistortionSpec::new(DistortionKind::OctreeQuantize, 1, 0).unwrap()).unwrap();
        assert_eq!(q.coords(), pc.coords());
        assert_eq!(q.colors(), pc.colors());
    }

    #[test]
    fn octree_merges_and_averages() {
        let pc = PointCloud::new(
            vec![[0.0; 3], [1e-6, 0.0, 0.0], [1.0, 1.0, 1.0]],
            vec![[10, 20, 30], [20, 40, 61], [0, 0, 0]],
            "m",
        )
        .unwrap();
        let q = octree_quantize(&pc, 6, "q").unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.colors()[0], [15, 30, 46]);
    }

    #[test]
    fn downsample_binomial_and_deterministic() {
        let pc = sphere(10_000);
        let spec = DistortionSpec::new(DistortionKind::Downsample, 3, 42).unwrap();
        let a = apply_distortion(&pc, &spec).unwrap();
        let b = apply_distortion(&pc, &spec).unwrap();
        // 99% two-sided normal interval of Binomial(10000, 0.5)
        let half = 2.5758 * (10_000.0f64 * 0.25).sqrt();
        assert!((a.len() as f64 - 5000.0).abs() <= half, "{}", a.len());
        assert_eq!(a, b);
    }

    #[test]
    fn downsample_to_nothing_fails() {
        let pc = PointCloud::new(vec![[0.0; 3]], vec![[0; 3]], "one").unwrap();
        let hits = (0..40u64)
            .filter(|&s| {
                matches!(
                    apply_distortion(&pc, &DistortionSpec::new(DistortionKind::Downsample, 5, s).unwrap()),
                    Err(Error::EmptyResult)
                )
            })
            .count();
        assert!(hits > 0);
    }

    #[test]
    fn invalid_level_rejected() {
        assert!(DistortionSpec::new(DistortionKind::Downsample, 0, 0).is_err());
        assert!(DistortionSpec::new(DistortionKind::Downsample, 6, 0).is_err());
    }

    #[test]
    fn every_kind_is_deterministic() {
        let pc = sphere(800);
        for kind in DistortionKind::ALL {
            let s = DistortionSpec::new(kind, 4, 11).unwrap();
            assert_eq!(apply_distortion(&pc, &s).unwrap(), apply_distortion(&pc, &s).unwrap());
        }
    }

    #[test]
    fn pseudo_mos_identity_and_term_separation() {
        let pc = sphere(600);
        assert_eq!(pseudo_mos(&pc, &pc), 10.0);
        let d = apply_distortion(&pc, &DistortionSpec::new(DistortionKind::ColorNoise, 3, 1).unwrap()).unwrap();
        let t = pseudo_mos_terms(&pc, &d);
        assert_eq!(t.geom_rmse, 0.0);
        let y_mse: f64 = pc
            .colors()
            .iter()
            .zip(d.colors())
            .map(|(a, b)| (luma(*a) - luma(*b)).powi(2))
            .sum::<f64>()
            / pc.len() as f64;
        assert!((t.y_rmse - y_mse.sqrt()).abs() < 1e-12);
        assert!((pseudo_mos(&pc, &d) - (10.0 - PSEUDO_MOS_B * y_mse.sqrt() / 255.0)).abs() < 1e-12);
    }

    #[test]
    fn pseudo_mos_strictly_decreasing_in_level() {
        for (i, shape) in RefShape::ALL.into_iter().enumerate() {
            let pc = generate_reference(shape, 3000, i as u64).unwrap();
            for kind in DistortionKind::ALL {
                let scores: Vec<f64> = (1..=5)
                    .map(|l| pseudo_mos(&pc, &apply_distortion(&pc, &DistortionSpec::new(kind, l, 5).unwrap()).unwrap()))
                    .collect();
                assert!(scores.windows(2).all(|w| w[1] < w[0]), "{shape:?} {kind}: {scores:?}");
                assert!(scores.iter().all(|s| (1.0..=10.0).contains(s)));
            }
        }
    }

    #[test]
    fn rmse_matches_brute_force() {
        let reference = sphere(1500);
        let d = apply_distortion(&reference, &DistortionSpec::new(DistortionKind::GeometryGaussian, 5, 2).unwrap()).unwrap();
        let (r, dn) = normalize_pair(&reference, &d).unwrap();
        let directed = |a: &PointCloud, b: &PointCloud| {
            a.coords()
                .iter()
                .map(|&p| b.coords().iter().map(|&q| dist2(p, q)).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / a.len() as f64
        };
        let brute = directed(&r, &dn).max(directed(&dn, &r)).sqrt();
        assert!((pseudo_mos_terms(&reference, &d).geom_rmse - brute).abs() < 1e-9);
    }

    #[test]
    fn corpus_counts_split_and_range() {
        let refs = generate_references(4, 1500, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = synthesize_corpus(&refs, &CorpusSpec::default(), dir.path()).unwrap();
        assert_eq!(m.entries.len(), 80);
        let src = |e: &ManifestEntry| e.path.to_string_lossy().split('_').take(2).collect::<Vec<_>>().join("_");
        let train: std::collections::HashSet<_> = m.split(Split::Train).map(src).collect();
        let test: std::collections::HashSet<_> = m.split(Split::Test).map(src).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(test.len(), 1);
        assert!(m.entries.iter().all(|e| (1.0..=10.0).contains(&e.mos)));
        let lo = m.entries.iter().map(|e| e.mos).fold(f64::INFINITY, f64::min);
        let hi = m.entries.iter().map(|e| e.mos).fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo >= 6.0, "span {lo}..{hi}");
        let back = crate::manifest::load_manifest(dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(back.entries, m.entries);
        let first = load_ply(dir.path().join(&m.entries[0].path)).unwrap();
        assert!(!first.is_empty());
        assert!(dir.path().join(SIDECAR_NAME).is_file());
    }

    #[test]
    fn corpus_is_byte_identical_across_runs() {
        let refs = generate_references(2, 400, 9).unwrap();
        let spec = CorpusSpec {
            levels: vec![2, 5],
            ..CorpusSpec::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        synthesize_corpus(&refs, &spec, a.path()).unwrap();
        synthesize_corpus(&refs, &spec, b.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 2 * 4 * 2 + 2);
        for n in names {
            assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
        }
    }
}
