//! Key-cluster extraction.
//!
//! A proximity graph over the normalized cloud is filtered with a polynomial
//! high-pass filter in the transition matrix `A = D^-1 W`. The points whose
//! filtered coordinates carry the most energy become key points, and each key
//! point is expanded into a cluster of its `K` nearest neighbors.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::cloud::{normalize_cloud, norm2, sub, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{SpatialGrid, DEFAULT_GROWTH_FACTOR, DEFAULT_GROWTH_R0};

pub const DEFAULT_BETA: usize = 1024;
pub const DEFAULT_K: usize = 16;
/// Features per cluster member: local xyz followed by rgb in `[0, 1]`.
pub const MEMBER_FEATURES: usize = 6;

const KCS_MAGIC: &[u8; 4] = b"PKCS";
const KCS_VERSION: u32 = 1;
const TAU_NN_MULTIPLE: f64 = 3.0;

/// Polynomial graph filter `h(A) = sum_l coeffs[l] A^l`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFilter {
    pub length: usize,
    pub coeffs: Vec<f64>,
}

impl Default for GraphFilter {
    fn default() -> Self {
        Self {
            length: 4,
            coeffs: vec![1.0, -1.0, 0.0, 0.0],
        }
    }
}

impl GraphFilter {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self {
            length: coeffs.len(),
            coeffs,
        }
    }

    fn check(&self) -> Result<()> {
        if self.coeffs.len() != self.length || self.length == 0 {
            return Err(Error::FilterLengthMismatch {
                declared: self.length,
                given: self.coeffs.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KceConfig {
    pub beta: usize,
    pub k: usize,
    pub filter: GraphFilter,
    /// Edge threshold; `None` picks 3x the mean nearest-neighbor distance.
    pub tau: Option<f64>,
    /// Edge kernel width; `None` picks the mean squared edge length.
    pub sigma2: Option<f64>,
    pub growth_r0: f64,
    pub growth_factor: f64,
}

impl Default for KceConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            k: DEFAULT_K,
            filter: GraphFilter::default(),
            tau: None,
            sigma2: None,
            growth_r0: DEFAULT_GROWTH_R0,
            growth_factor: DEFAULT_GROWTH_FACTOR,
        }
    }
}

/// Sparse proximity graph in CSR layout. Column indices within a row ascend.
#[derive(Debug, Clone)]
pub struct GeometryGraph {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub weights: Vec<f64>,
    pub degree: Vec<f64>,
    /// Entries of `A = D^-1 W`, aligned with `cols`.
    pub transition: Vec<f64>,
    pub sigma2: f64,
    pub tau: f64,
}

impl GeometryGraph {
    pub fn len(&self) -> usize {
        self.degree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degree.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.weights[r.clone()])
            .zip(&self.transition[r])
            .map(|((&j, &w), &a)| (j, w, a))
    }

    /// `A x` for an `N x 3` signal.
    pub fn apply_transition(&self, x: &[[f64; 3]]) -> Vec<[f64; 3]> {
        (0..self.len())
            .map(|i| {
                let mut acc = [0.0; 3];
                for (j, _, a) in self.row(i) {
                    for c in 0..3 {
                        acc[c] += a * x[j][c];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Mean distance from each point to its nearest other point.
pub fn mean_nn_distance(points: &[[f64; 3]]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let grid = SpatialGrid::new(points);
    let total: f64 = points
        .par_iter()
        .map(|&p| grid.knn(p, 2).map(|nn| nn.radius_used).unwrap_or(0.0))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / points.len() as f64
}

/// Default `tau`: a multiple of the mean nearest-neighbor spacing.
pub fn default_tau(points: &[[f64; 3]]) -> f64 {
    let t = TAU_NN_MULTIPLE * mean_nn_distance(points);
    if t > 0.0 {
        t
    } else {
        f64::MIN_POSITIVE
    }
}

fn neighbor_lists(points: &[[f64; 3]], tau: f64) -> Vec<Vec<(usize, f64)>> {
    let grid = SpatialGrid::new(points);
    points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut row: Vec<(usize, f64)> = grid
                .within(p, tau)
                .into_iter()
                .filter(|&(d2, j)| j != i && d2.sqrt() < tau)
                .map(|(d2, j)| (j, d2))
                .collect();
            row.sort_unstable_by_key(|e| e.0);
            row
        })
        .collect()
}

/// Default `sigma2`: mean squared length over edges admitted by `tau`.
pub fn default_sigma2(points: &[[f64; 3]], tau: f64) -> f64 {
    let lists = neighbor_lists(points, tau);
    let (sum, n) = lists
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), &(_, d2)| (s + d2, n + 1));
    if n == 0 || sum == 0.0 {
        1.0
    } else {
        sum / n as f64
    }
}

/// Gaussian-kernel proximity graph with edges between distinct points closer
/// than `tau`.
pub fn build_graph(pc: &PointCloud, tau: f64, sigma2: f64) -> Result<GeometryGraph> {
    if !(tau > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("tau = {tau}, sigma2 = {sigma2}")));
    }
    let lists = neighbor_lists(pc.coords(), tau);
    let n = pc.len();
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut weights = Vec::new();
    let mut degree = Vec::with_capacity(n);
    for row in &lists {
        let mut d = 0.0;
        for &(j, d2) in row {
            let w = (-d2 / sigma2).exp();
            cols.push(j);
            weights.push(w);
            d += w;
        }
        degree.push(d);
        row_ptr.push(cols.len());
    }
    let mut transition = Vec::with_capacity(weights.len());
    for i in 0..n {
        for &w in &weights[row_ptr[i]..row_ptr[i + 1]] {
            transition.push(if degree[i] > 0.0 { w / degree[i] } else { 0.0 });
        }
    }
    Ok(GeometryGraph {
        row_ptr,
        cols,
        weights,
        degree,
        transition,
        sigma2,
        tau,
    })
}

/// Per-point energy `||(h(A) x)_i||^2` of the filtered coordinates.
pub fn highpass_score(graph: &GeometryGraph, coords: &[[f64; 3]], filter: &GraphFilter) -> Result<Vec<f64>> {
    filter.check()?;
    if coords.len() != graph.len() {
        return Err(Error::ShapeMismatch(format!(
            "graph over {} points, signal has {}",
            graph.len(),
            coords.len()
        )));
    }
    let mut power = coords.to_vec();
    let h0 = filter.coeffs[0];
    let mut acc: Vec<[f64; 3]> = power.iter().map(|p| p.map(|v| h0 * v)).collect();
    for &h in &filter.coeffs[1..] {
        power = graph.apply_transition(&power);
        for (a, p) in acc.iter_mut().zip(&power) {
            for c in 0..3 {
                a[c] += h * p[c];
            }
        }
    }
    Ok(acc.into_iter().map(norm2).collect())
}

/// Resolves `tau`/`sigma2` for a normalized cloud and builds its graph.
pub fn graph_for(pc: &PointCloud, config: &KceConfig) -> Result<GeometryGraph> {
    let tau = config.tau.unwrap_or_else(|| default_tau(pc.coords()));
    let sigma2 = config
        .sigma2
        .unwrap_or_else(|| default_sigma2(pc.coords(), tau));
    build_graph(pc, tau, sigma2)
}

/// The `beta` highest-scoring points of a normalized cloud, best first.
pub fn extract_key_points(pc: &PointCloud, beta: usize, config: &KceConfig) -> Result<(Vec<usize>, Vec<f64>)> {
    config.filter.check()?;
    if beta == 0 || pc.len() < beta {
        return Err(Error::CloudTooSmall { n: pc.len(), beta });
    }
    let graph = graph_for(pc, config)?;
    let scores = highpass_score(&graph, pc.coords(), &config.filter)?;
    Ok(top_scores(&scores, beta))
}

pub(crate) fn top_scores(scores: &[f64], beta: usize) -> (Vec<usize>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(beta);
    let s = idx.iter().map(|&i| scores[i]).collect();
    (idx, s)
}

/// Key points expanded into fixed-size neighbor clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyClusterSet {
    pub beta: usize,
    pub k: usize,
    /// `beta * k * 6` row-major: local xyz then rgb in `[0, 1]`.
    pub clusters: Vec<f64>,
    /// Key point coordinates in the normalized frame.
    pub key_positions: Vec<[f64; 3]>,
    pub key_scores: Vec<f64>,
    pub source_name: String,
}

impl KeyClusterSet {
    pub fn member(&self, cluster: usize, member: usize) -> &[f64] {
        let o = (cluster * self.k + member) * MEMBER_FEATURES;
        &self.clusters[o..o + MEMBER_FEATURES]
    }

    pub fn summary(&self) -> String {
        let (lo, hi) = self
            .key_scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| (l.min(s), h.max(s)));
        format!(
            "source={} beta={} k={} features={} score_max={hi:.6e} score_min={lo:.6e}",
            self.source_name, self.beta, self.k, MEMBER_FEATURES
        )
    }

    /// 24-byte header (`PKCS`, version, beta, k) then little-endian f32:
    /// clusters, key positions, key scores.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(KCS_MAGIC)?;
        w.write_all(&KCS_VERSION.to_le_bytes())?;
        w.write_all(&(self.beta as u64).to_le_bytes())?;
        w.write_all(&(self.k as u64).to_le_bytes())?;
        let body = self
            .clusters
            .iter()
            .chain(self.key_positions.iter().flatten())
            .chain(&self.key_scores);
        for &v in body {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, source_name: impl Into<String>) -> Result<Self> {
        let mut head = [0u8; 24];
        r.read_exact(&mut head)
            .map_err(|_| Error::MalformedKeyClusters("short header".into()))?;
        if &head[..4] != KCS_MAGIC {
            return Err(Error::MalformedKeyClusters("bad magic".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != KCS_VERSION {
            return Err(Error::MalformedKeyClusters(format!("unsupported version {version}")));
        }
        let beta = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
        let k = u64::from_le_bytes(head[16..24].try_into().unwrap()) as usize;
        let total = beta
            .checked_mul(k * MEMBER_FEATURES + 4)
            .ok_or_else(|| Error::MalformedKeyClusters("size overflow".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::MalformedKeyClusters(e.to_string()))?;
        if bytes.len() != total * 4 {
            return Err(Error::MalformedKeyClusters(format!(
                "expected {} payload bytes, found {}",
                total * 4,
                bytes.len()
            )));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let nc = beta * k * MEMBER_FEATURES;
        Ok(Self {
            beta,
            k,
            clusters: vals[..nc].to_vec(),
            key_positions: vals[nc..nc + 3 * beta]
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect(),
            key_scores: vals[nc + 3 * beta..].to_vec(),
            source_name: source_name.into(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("write to vec");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::read_from(&mut &bytes[..], name)
    }
}

/// Expands each key point into its `k` nearest neighbors (key point first),
/// stored in the key point's local frame.
pub fn form_key_clusters(
    pc: &PointCloud,
    key_indices: &[usize],
    key_scores: &[f64],
    k: usize,
    growth_r0: f64,
    growth_factor: f64,
) -> Result<KeyClusterSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("cluster size k must be at least 1".into()));
    }
    if key_indices.len() != key_scores.len() {
        return Err(Error::LengthMismatch(key_indices.len(), key_scores.len()));
    }
    let pts = pc.coords();
    let colors = pc.colors();
    let grid = SpatialGrid::new(pts);
    let rows: Vec<Vec<f64>> = key_indices
        .par_iter()
        .map(|&key| -> Result<Vec<f64>> {
            let center = pts[key];
            let nn = grid.grow_radius_knn(center, k, growth_r0, growth_factor)?;
            let mut members = Vec::with_capacity(k);
            members.push(key);
            members.extend(nn.members.iter().copied().filter(|&m| m != key));
            members.truncate(k);
            let mut row = Vec::with_capacity(k * MEMBER_FEATURES);
            for m in members {
                row.extend(sub(pts[m], center));
                row.extend(colors[m].map(|c| c as f64 / 255.0));
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(KeyClusterSet {
        beta: key_indices.len(),
        k,
        clusters: rows.concat(),
        key_positions: key_indices.iter().map(|&i| pts[i]).collect(),
        key_scores: key_scores.to_vec(),
        source_name: pc.base_name().to_string(),
    })
}

/// Full extraction: normalize, score, select and cluster.
pub fn extract_key_clusters(pc: &PointCloud, config: &KceConfig) -> Result<KeyClusterSet> {
    if pc.len() < config.beta {
        return Err(Error::CloudTooSmall {
            n: pc.len(),
            beta: config.beta,
        });
    }
    let normalized = normalize_cloud(pc)?;
    let (idx, scores) = extract_key_points(&normalized, config.beta, config)?;
    form_key_clusters(
        &normalized,
        &idx,
        &scores,
        config.k,
        config.growth_r0,
        config.growth_factor,
    )
}

/// Distance from a cluster's key point to its farthest member.
pub fn cluster_extent(set: &KeyClusterSet, cluster: usize) -> f64 {
    (0..set.k)
        .map(|m| {
            let f = set.member(cluster, m);
            norm2([f[0], f[1], f[2]])
        })
        .fold(0.0, f64::max)
        .sqrt()
}
