//! Spatial primitives: k-nearest neighbors, farthest point sampling, ball
//! query and growing-radius k-NN.
//!
//! The free functions are brute force and define the semantics. [`SpatialGrid`]
//! answers the same queries faster on large clouds and returns identical
//! results. Distance ties always resolve toward the smaller index.

use crate::cloud::{bounding_box, dist2};
use crate::error::{Error, Result};

pub const DEFAULT_GROWTH_R0: f64 = 0.05;
pub const DEFAULT_GROWTH_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    /// Row of the query point when the query was issued from a cloud point.
    pub center_index: Option<usize>,
    pub members: Vec<usize>,
    pub radius_used: f64,
}

fn k_smallest(mut cand: Vec<(f64, usize)>, k: usize) -> Vec<(f64, usize)> {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand
}

fn finish(center_index: Option<usize>, best: Vec<(f64, usize)>) -> NeighborIndex {
    let radius_used = best.last().map_or(0.0, |b| b.0.sqrt());
    NeighborIndex {
        center_index,
        members: best.into_iter().map(|b| b.1).collect(),
        radius_used,
    }
}

/// The `k` points nearest to `center`, nearest first.
pub fn knn(points: &[[f64; 3]], center: [f64; 3], k: usize) -> Result<NeighborIndex> {
    if k == 0 || k > points.len() {
        return Err(Error::KTooLarge { k, m: points.len() });
    }
    let cand = points
        .iter()
        .enumerate()
        .map(|(i, &p)| (dist2(p, center), i))
        .collect();
    Ok(finish(None, k_smallest(cand, k)))
}

/// Greedy maximin subset starting at `seed_index`.
pub fn farthest_point_sampling(points: &[[f64; 3]], n: usize, seed_index: usize) -> Result<Vec<usize>> {
    let m = points.len();
    if n == 0 || n > m {
        return Err(Error::NTooLarge { n, m });
    }
    if seed_index >= m {
        return Err(Error::InvalidArgument(format!("seed index {seed_index} out of range {m}")));
    }
    let mut out = Vec::with_capacity(n);
    let mut min_d = vec![f64::INFINITY; m];
    let mut taken = vec![false; m];
    let mut cur = seed_index;
    for _ in 0..n {
        out.push(cur);
        taken[cur] = true;
        let c = points[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = dist2(*p, c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(out)
}

/// In-radius points in ascending index order, padded to `k` with the smallest
/// in-radius index.
pub fn ball_query(points: &[[f64; 3]], center: [f64; 3], radius: f64, k: usize) -> Result<NeighborIndex> {
    if !(radius > 0.0) || k == 0 {
        return Err(Error::InvalidArgument(format!("ball query radius {radius}, k {k}")));
    }
    let mut members: Vec<usize> = points
        .iter()
        .enumerate()
        .filter(|(_, &p)| dist2(p, center).sqrt() <= radius)
        .map(|(i, _)| i)
        .take(k)
        .collect();
    let Some(&first) = members.first() else {
        return Err(Error::EmptyBall(radius));
    };
    members.resize(k, first);
    Ok(NeighborIndex {
        center_index: None,
        members,
        radius_used: radius,
    })
}

/// k-NN found by growing a search radius from `r0` by `growth` until at least
/// `k` points fall inside; `radius_used` is the final search radius.
pub fn grow_radius_knn(
    points: &[[f64; 3]],
    center: [f64; 3],
    k: usize,
    r0: f64,
    growth: f64,
) -> Result<NeighborIndex> {
    check_growth(points.len(), k, r0, growth)?;
    let d2: Vec<f64> = points.iter().map(|&p| dist2(p, center)).collect();
    let mut r = r0;
    loop {
        let inside: Vec<(f64, usize)> = d2
            .iter()
            .enumerate()
            .filter(|(_, &d)| d.sqrt() <= r)
            .map(|(i, &d)| (d, i))
            .collect();
        if inside.len() >= k {
            let mut out = finish(None, k_smallest(inside, k));
            out.radius_used = r;
            return Ok(out);
        }
        r *= growth;
    }
}

fn check_growth(m: usize, k: usize, r0: f64, growth: f64) -> Result<()> {
    if k == 0 || k > m {
        return Err(Error::KTooLarge { k, m });
    }
    if !(r0 > 0.0) || !(growth > 1.0) {
        return Err(Error::InvalidArgument(format!("growth search needs r0 > 0 and growth > 1, got {r0}, {growth}")));
    }
    Ok(())
}

/// Uniform grid over a point set for radius and nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct SpatialGrid<'a> {
    points: &'a [[f64; 3]],
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    order: Vec<usize>,
}

const MAX_CELLS: usize = 1 << 21;

impl<'a> SpatialGrid<'a> {
    /// Grid with roughly a couple of points per occupied cell.
    pub fn new(points: &'a [[f64; 3]]) -> Self {
        let (lo, hi) = bounding_box(points);
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let per_axis = (points.len() as f64 / 2.0).sqrt().max(1.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        Self::with_cell(points, cell)
    }

    pub fn with_cell(points: &'a [[f64; 3]], mut cell: f64) -> Self {
        let (lo, hi) = bounding_box(points);
        let dims_for = |cell: f64| -> [usize; 3] {
            std::array::from_fn(|a| ((hi[a] - lo[a]) / cell).floor() as usize + 1)
        };
        let mut dims = dims_for(cell);
        while dims.iter().product::<usize>() > MAX_CELLS {
            cell *= 2.0;
            dims = dims_for(cell);
        }
        let ncell = dims.iter().product::<usize>();
        let mut grid = Self {
            points,
            origin: lo,
            cell,
            dims,
            starts: vec![0; ncell + 1],
            order: Vec::with_capacity(points.len()),
        };
        let ids: Vec<usize> = points.iter().map(|&p| grid.cell_id(p)).collect();
        for &c in &ids {
            grid.starts[c + 1] += 1;
        }
        for c in 0..ncell {
            grid.starts[c + 1] += grid.starts[c];
        }
        let mut fill = grid.starts.clone();
        grid.order = vec![0; points.len()];
        for (i, &c) in ids.iter().enumerate() {
            grid.order[fill[c]] = i;
            fill[c] += 1;
        }
        grid
    }

    pub fn points(&self) -> &'a [[f64; 3]] {
        self.points
    }

    fn axis_cell(&self, v: f64, a: usize) -> isize {
        ((v - self.origin[a]) / self.cell).floor() as isize
    }

    fn cell_id(&self, p: [f64; 3]) -> usize {
        let c: [usize; 3] =
            std::array::from_fn(|a| self.axis_cell(p[a], a).clamp(0, self.dims[a] as isize - 1) as usize);
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// `(squared distance, index)` of every point within `r` of `center`.
    pub fn within(&self, center: [f64; 3], r: f64) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        let range = |a: usize| {
            let lo = self.axis_cell(center[a] - r, a).max(0);
            let hi = self.axis_cell(center[a] + r, a).min(self.dims[a] as isize - 1);
            (lo, hi)
        };
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let c = (z as usize * self.dims[1] + y as usize) * self.dims[0] + x as usize;
                    for &i in &self.order[self.starts[c]..self.starts[c + 1]] {
                        let d = dist2(self.points[i], center);
                        if d.sqrt() <= r {
                            out.push((d, i));
                        }
                    }
                }
            }
        }
        out
    }

    /// Same result as [`grow_radius_knn`] over the grid's points.
    pub fn grow_radius_knn(&self, center: [f64; 3], k: usize, r0: f64, growth: f64) -> Result<NeighborIndex> {
        check_growth(self.points.len(), k, r0, growth)?;
        let mut r = r0;
        loop {
            let inside = self.within(center, r);
            if inside.len() >= k {
                let mut out = finish(None, k_smallest(inside, k));
                out.radius_used = r;
                return Ok(out);
            }
            r *= growth;
        }
    }

    /// Exact k nearest neighbors, same result as [`knn`].
    pub fn knn(&self, center: [f64; 3], k: usize) -> Result<NeighborIndex> {
        let mut out = self.grow_radius_knn(center, k, self.cell * 0.5, 2.0)?;
        out.radius_used = self.points[*out.members.last().unwrap()]
            .iter()
            .zip(center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Ok(out)
    }

    /// Nearest point as `(index, squared distance)`.
    pub fn nearest(&self, center: [f64; 3]) -> (usize, f64) {
        let nn = self.knn(center, 1).expect("grid holds at least one point");
        let i = nn.members[0];
        (i, dist2(self.points[i], center))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, m: usize) -> Vec<[f64; 3]> {
        (0..m).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
    }

    fn brute_sorted(points: &[[f64; 3]], c: [f64; 3]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.sort_by(|&a, &b| {
            dist2(points[a], c)
                .partial_cmp(&dist2(points[b], c))
                .unwrap()
                .then(a.cmp(&b))
        });
        idx
    }

    const SQUARE: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];

    #[test]
    fn knn_examples() {
        let line: Vec<[f64; 3]> = (0..4).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(knn(&line, [0.0; 3], 2).unwrap().members, vec![0, 1]);
        let one = knn(&line, [2.0, 0.0, 0.0], 1).unwrap();
        assert_eq!((one.members[0], one.radius_used), (2, 0.0));
        assert!(matches!(knn(&line, [0.0; 3], 5), Err(Error::KTooLarge { .. })));
        // equidistant: smaller index wins
        assert_eq!(knn(&line, [1.5, 0.0, 0.0], 1).unwrap().members, vec![1]);
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let pts = random_cloud(&mut rng, 50);
            let c = [rng.random(), rng.random(), rng.random()];
            assert_eq!(knn(&pts, c, 5).unwrap().members, brute_sorted(&pts, c)[..5]);
        }
    }

    #[test]
    fn fps_examples() {
        assert_eq!(farthest_point_sampling(&SQUARE, 2, 0).unwrap(), vec![0, 3]);
        let mut all = farthest_point_sampling(&SQUARE, 4, 2).unwrap();
        assert_eq!(all[0], 2);
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(farthest_point_sampling(&SQUARE, 5, 0).is_err());
        assert!(farthest_point_sampling(&SQUARE, 1, 9).is_err());
    }

    #[test]
    fn ball_query_examples() {
        let b = ball_query(&SQUARE, [0.0; 3], 1.5, 2).unwrap();
        assert_eq!(b.members, vec![0, 1]);
        let mut pts = vec![[10.0, 10.0, 10.0]; 10];
        pts[7] = [0.0; 3];
        assert_eq!(ball_query(&pts, [0.0; 3], 1.0, 4).unwrap().members, vec![7; 4]);
        assert!(matches!(ball_query(&SQUARE, [5.0; 3], 0.5, 2), Err(Error::EmptyBall(_))));
    }

    #[test]
    fn grow_radius_examples() {
        let line: Vec<[f64; 3]> = (0..4).map(|i| [i as f64, 0.0, 0.0]).collect();
        let g = grow_radius_knn(&line, [0.0; 3], 2, 5.0, 1.5).unwrap();
        assert_eq!(g.members, knn(&line, [0.0; 3], 2).unwrap().members);
        assert_eq!(g.radius_used, 5.0);
        let all = grow_radius_knn(&line, [0.0; 3], 4, 0.05, 1.5).unwrap();
        assert_eq!(all.members, vec![0, 1, 2, 3]);
        assert!(all.radius_used >= 3.0);
    }

    #[test]
    fn grid_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in [1usize, 2, 17, 300] {
            let pts = random_cloud(&mut rng, m);
            let grid = SpatialGrid::new(&pts);
            for _ in 0..10 {
                let c = [rng.random::<f64>() * 1.4 - 0.2, rng.random(), rng.random()];
                let k = rng.random_range(1..=m);
                let a = grow_radius_knn(&pts, c, k, 0.05, 1.5).unwrap();
                let b = grid.grow_radius_knn(c, k, 0.05, 1.5).unwrap();
                assert_eq!(a, b);
                let exact = knn(&pts, c, k).unwrap();
                let via = grid.knn(c, k).unwrap();
                assert_eq!(exact.members, via.members);
                assert_eq!(exact.radius_used, via.radius_used);
                let mut w: Vec<usize> = grid.within(c, 0.3).into_iter().map(|x| x.1).collect();
                w.sort();
                let brute: Vec<usize> =
                    (0..m).filter(|&i| dist2(pts[i], c).sqrt() <= 0.3).collect();
                assert_eq!(w, brute);
            }
        }
    }
}
