//! Correlation metrics, the 4-parameter logistic mapping used before
//! computing PLCC against objective metrics, and point-to-point PSNR.

use rayon::prelude::*;

use crate::cloud::{dist2, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::SpatialGrid;

/// Value reported for PSNR when the error is exactly zero.
pub const PSNR_SENTINEL_DB: f64 = 999.0;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two samples".into()));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson linear correlation coefficient.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantVector);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn has_ties(ranks: &[f64]) -> bool {
    ranks.iter().any(|r| r.fract() != 0.0) || {
        let mut s = ranks.to_vec();
        s.sort_by(f64::total_cmp);
        s.windows(2).any(|w| w[0] == w[1])
    }
}

/// Spearman rank-order correlation.
///
/// Tie-free inputs use `1 - 6 sum d^2 / (I (I^2 - 1))`; with ties the Pearson
/// correlation of average ranks is returned instead.
pub fn srocc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let constant = |r: &[f64]| r.iter().all(|&v| v == r[0]);
    if constant(&rx) || constant(&ry) {
        return Err(Error::ConstantVector);
    }
    if has_ties(&rx) || has_ties(&ry) {
        return plcc(&rx, &ry);
    }
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

/// Parameters of `s(o) = b1 (1/2 - 1/(1 + exp(b2 (o - b3)))) + b4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
}

impl LogisticParams {
    pub fn eval(&self, o: f64) -> f64 {
        self.b1 * (0.5 - logistic_s(self.b2 * (o - self.b3))) + self.b4
    }

    fn as_array(&self) -> [f64; 4] {
        [self.b1, self.b2, self.b3, self.b4]
    }

    fn from_array(b: [f64; 4]) -> Self {
        Self {
            b1: b[0],
            b2: b[1],
            b3: b[2],
            b4: b[3],
        }
    }
}

/// `1 / (1 + exp(z))` without overflow.
fn logistic_s(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub params: LogisticParams,
    /// Mapped objective scores; the raw scores when the fit diverged.
    pub mapped: Vec<f64>,
    pub sse: f64,
    pub initial_sse: f64,
    /// Set when least squares failed to reduce the initial residual.
    pub diverged: bool,
}

const LM_MAX_ITERS: usize = 2000;

fn sse_of(p: &LogisticParams, o: &[f64], mos: &[f64]) -> f64 {
    o.iter().zip(mos).map(|(&x, &y)| (y - p.eval(x)).powi(2)).sum()
}

/// Deterministic starting point of the logistic fit.
pub fn logistic_init(objective: &[f64], mos: &[f64]) -> LogisticParams {
    let mo = mean(objective);
    let sd = (objective.iter().map(|v| (v - mo).powi(2)).sum::<f64>() / objective.len() as f64).sqrt();
    let (lo, hi) = mos
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    LogisticParams {
        b1: hi - lo,
        b2: if sd > 0.0 { 1.0 / sd } else { 1.0 },
        b3: mo,
        b4: mean(mos),
    }
}

/// Least-squares fit of the 4-parameter logistic (Levenberg-Marquardt).
pub fn vqeg_logistic_fit(objective: &[f64], mos: &[f64]) -> Result<LogisticFit> {
    if objective.len() != mos.len() {
        return Err(Error::LengthMismatch(objective.len(), mos.len()));
    }
    if objective.len() < 5 {
        return Err(Error::InvalidArgument("logistic fit needs at least five points".into()));
    }
    if mos.iter().all(|&m| m == mos[0]) {
        return Err(Error::ConstantVector);
    }
    let init = logistic_init(objective, mos);
    let initial_sse = sse_of(&init, objective, mos);
    let mut b = init.as_array();
    let mut sse = initial_sse;
    let mut lambda = 1e-3;
    for _ in 0..LM_MAX_ITERS {
        let p = LogisticParams::from_array(b);
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&o, &y) in objective.iter().zip(mos) {
            let s = logistic_s(p.b2 * (o - p.b3));
            let ds = p.b1 * s * (1.0 - s);
            let j = [0.5 - s, ds * (o - p.b3), -ds * p.b2, 1.0];
            let r = y - p.eval(o);
            for a in 0..4 {
                jtr[a] += j[a] * r;
                for c in 0..4 {
                    jtj[a][c] += j[a] * j[c];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e20 {
            let mut m = jtj;
            for a in 0..4 {
                m[a][a] += lambda * (jtj[a][a] + 1e-12);
            }
            let Some(step) = solve4(m, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let cand: [f64; 4] = std::array::from_fn(|a| b[a] + step[a]);
            let cand_sse = sse_of(&LogisticParams::from_array(cand), objective, mos);
            if cand_sse.is_finite() && cand_sse < sse {
                let rel = (sse - cand_sse) / sse.max(f64::MIN_POSITIVE);
                b = cand;
                sse = cand_sse;
                lambda = (lambda / 10.0).max(1e-15);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let params = LogisticParams::from_array(b);
    let diverged = !(sse < initial_sse);
    let mapped = if diverged {
        objective.to_vec()
    } else {
        objective.iter().map(|&o| params.eval(o)).collect()
    };
    Ok(LogisticFit {
        params,
        mapped,
        sse,
        initial_sse,
        diverged,
    })
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// BT.601 luma of an 8-bit RGB triple.
pub fn luma(c: [u8; 3]) -> f64 {
    0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64
}

/// Mean squared geometry and luma errors from each point of `from` to its
/// nearest neighbor in `to`.
pub fn directed_nn_mse(from: &[[f64; 3]], from_colors: &[[u8; 3]], to: &[[f64; 3]], to_colors: &[[u8; 3]]) -> (f64, f64) {
    let grid = SpatialGrid::new(to);
    let per_point: Vec<(f64, f64)> = from
        .par_iter()
        .zip(from_colors)
        .map(|(&p, &c)| {
            let (j, d2) = grid.nearest(p);
            let dy = luma(c) - luma(to_colors[j]);
            (d2, dy * dy)
        })
        .collect();
    let n = from.len() as f64;
    let (g, y) = per_point
        .iter()
        .fold((0.0, 0.0), |(g, y), &(a, b)| (g + a, y + b));
    (g / n, y / n)
}

/// Symmetric (max over both directions) geometry and luma MSE.
pub fn symmetric_nn_mse(a: &PointCloud, b: &PointCloud) -> (f64, f64) {
    let (g1, y1) = directed_nn_mse(a.coords(), a.colors(), b.coords(), b.colors());
    let (g2, y2) = directed_nn_mse(b.coords(), b.colors(), a.coords(), a.colors());
    (g1.max(g2), y1.max(y2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrP2p {
    pub geom_db: f64,
    pub y_db: f64,
}

fn psnr_db(peak: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_SENTINEL_DB
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Point-to-point geometry PSNR and luma PSNR, peak geometry value being the
/// larger bounding-box diagonal of the two clouds.
pub fn psnr_p2p(reference: &PointCloud, distorted: &PointCloud) -> PsnrP2p {
    let peak = reference.bbox_diagonal().max(distorted.bbox_diagonal());
    psnr_p2p_with_peak(reference, distorted, peak)
}

pub fn psnr_p2p_with_peak(reference: &PointCloud, distorted: &PointCloud, geom_peak: f64) -> PsnrP2p {
    let (g, y) = symmetric_nn_mse(reference, distorted);
    PsnrP2p {
        geom_db: psnr_db(geom_peak, g),
        y_db: psnr_db(255.0, y),
    }
}

#[allow(dead_code)]
pub(crate) fn brute_nearest(p: [f64; 3], to: &[[f64; 3]]) -> usize {
    let mut best = 0;
    for (j, &q) in to.iter().enumerate() {
        if dist2(p, q) < dist2(p, to[best]) {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plcc_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((plcc(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((plcc(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        // centered (-1,0,1) vs (-1,1,0): 1 / (sqrt2 sqrt2)
        assert!((plcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(plcc(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ConstantVector)));
    }

    #[test]
    fn srocc_examples() {
        assert_eq!(srocc(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(srocc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let tied = srocc(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let expect = plcc(&[1.0, 2.5, 2.5, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(tied, expect);
    }

    #[test]
    fn srocc_formula_equals_pearson_of_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(2..=10);
            let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let a = srocc(&x, &y).unwrap();
            let b = plcc(&average_ranks(&x), &average_ranks(&y)).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn logistic_identity_fit() {
        let o: Vec<f64> = (0..20).map(|i| 1.0 + 0.4 * i as f64).collect();
        let fit = vqeg_logistic_fit(&o, &o).unwrap();
        assert!(!fit.diverged);
        assert!(plcc(&fit.mapped, &o).unwrap() > 1.0 - 1e-6, "{fit:?}");
    }

    #[test]
    fn logistic_recovers_generating_curve() {
        let truth = LogisticParams { b1: 8.0, b2: 1.5, b3: 2.0, b4: 5.0 };
        let o: Vec<f64> = (0..30).map(|i| i as f64 * 0.15).collect();
        let mos: Vec<f64> = o.iter().map(|&x| truth.eval(x)).collect();
        let fit = vqeg_logistic_fit(&o, &mos).unwrap();
        assert!(fit.sse < 1e-16);
        assert!((fit.params.b2 - 1.5).abs() < 1e-6 && (fit.params.b1 - 8.0).abs() < 1e-5);
    }

    #[test]
    fn logistic_rejects_small_or_constant() {
        assert!(vqeg_logistic_fit(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).is_err());
        assert!(matches!(vqeg_logistic_fit(&[1.0; 6], &[2.0; 6]), Err(Error::ConstantVector)));
    }

    #[test]
    fn psnr_examples() {
        let a = PointCloud::new(vec![[0.0; 3], [1.0, 1.0, 1.0]], vec![[10, 20, 30]; 2], "a").unwrap();
        let same = psnr_p2p(&a, &a);
        assert_eq!((same.geom_db, same.y_db), (PSNR_SENTINEL_DB, PSNR_SENTINEL_DB));

        let p = PointCloud::new(vec![[0.0; 3]], vec![[0; 3]], "p").unwrap();
        let q = PointCloud::new(vec![[0.3, 0.0, 0.0]], vec![[0; 3]], "q").unwrap();
        let r = psnr_p2p_with_peak(&p, &q, 2.0);
        assert!((r.geom_db - 20.0 * (2.0f64 / 0.3).log10()).abs() < 1e-12);
    }

    #[test]
    fn psnr_matches_brute_force_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mk = |rng: &mut ChaCha8Rng, n: usize| {
            let c: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let k: Vec<[u8; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            PointCloud::new(c, k, "r").unwrap()
        };
        let a = mk(&mut rng, 100);
        let b = mk(&mut rng, 100);
        let brute_dir = |x: &PointCloud, y: &PointCloud| {
            let mut g = 0.0;
            let mut l = 0.0;
            for (p, c) in x.coords().iter().zip(x.colors()) {
                let j = brute_nearest(*p, y.coords());
                g += dist2(*p, y.coords()[j]);
                l += (luma(*c) - luma(y.colors()[j])).powi(2);
            }
            (g / x.len() as f64, l / x.len() as f64)
        };
        let (g1, y1) = brute_dir(&a, &b);
        let (g2, y2) = brute_dir(&b, &a);
        let peak = a.bbox_diagonal().max(b.bbox_diagonal());
        let r = psnr_p2p(&a, &b);
        assert!((r.geom_db - 10.0 * (peak * peak / g1.max(g2)).log10()).abs() < 1e-9);
        assert!((r.y_db - 10.0 * (255.0f64.powi(2) / y1.max(y2)).log10()).abs() < 1e-9);
        assert_eq!(r, psnr_p2p(&b, &a));
    }

    /// Plain Nelder-Mead on the logistic residual, restarted until it stalls.
    fn nelder_mead_oracle(o: &[f64], mos: &[f64], start: [f64; 4]) -> [f64; 4] {
        let f = |b: &[f64; 4]| sse_of(&LogisticParams::from_array(*b), o, mos);
        let mut best = start;
        for _ in 0..30 {
            let mut simplex: Vec<[f64; 4]> = vec![best];
            for i in 0..4 {
                let mut v = best;
                v[i] += if v[i].abs() > 1e-3 { 0.05 * v[i] } else { 1e-3 };
                simplex.push(v);
            }
            for _ in 0..20000 {
                simplex.sort_by(|a, b| f(a).total_cmp(&f(b)));
                let c: [f64; 4] = std::array::from_fn(|i| simplex[..4].iter().map(|v| v[i]).sum::<f64>() / 4.0);
                let at = |t: f64| -> [f64; 4] { std::array::from_fn(|i| c[i] + t * (simplex[4][i] - c[i])) };
                let r = at(-1.0);
                if f(&r) < f(&simplex[0]) {
                    let e = at(-2.0);
                    simplex[4] = if f(&e) < f(&r) { e } else { r };
                } else if f(&r) < f(&simplex[3]) {
                    simplex[4] = r;
                } else {
                    let k = at(0.5);
                    if f(&k) < f(&simplex[4]) {
                        simplex[4] = k;
                    } else {
                        let b0 = simplex[0];
                        for v in simplex.iter_mut().skip(1) {
                            *v = std::array::from_fn(|i| b0[i] + 0.5 * (v[i] - b0[i]));
                        }
                    }
                }
            }
            simplex.sort_by(|a, b| f(a).total_cmp(&f(b)));
            let moved = (0..4).map(|i| (simplex[0][i] - best[i]).abs()).fold(0.0, f64::max);
            best = simplex[0];
            if moved < 1e-12 {
                break;
            }
        }
        best
    }

    #[test]
    fn logistic_matches_independent_minimizer() {
        let o = [0.5, 1.3, 2.1, 2.6, 3.4, 4.4];
        let mos = [1.4, 2.1, 4.6, 6.0, 8.1, 8.6];
        let fit = vqeg_logistic_fit(&o, &mos).unwrap();
        assert!(!fit.diverged);
        let oracle = nelder_mead_oracle(&o, &mos, logistic_init(&o, &mos).as_array());
        for (a, b) in fit.params.as_array().iter().zip(oracle) {
            assert!((a - b).abs() < 1e-4, "{:?} vs {oracle:?}", fit.params);
        }
    }

    #[test]
    fn logistic_mapping_helps_a_decreasing_metric() {
        // an RMSE-like score falls as quality rises
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mos: Vec<f64> = (0..40).map(|i| 1.0 + 9.0 * i as f64 / 39.0).collect();
        let rmse: Vec<f64> = mos.iter().map(|m| (11.0 - m).powf(1.7) * 0.01 + rng.random::<f64>() * 0.05).collect();
        let raw = plcc(&rmse, &mos).unwrap();
        let fit = vqeg_logistic_fit(&rmse, &mos).unwrap();
        assert!(!fit.diverged);
        assert!(raw < 0.0);
        assert!(plcc(&fit.mapped, &mos).unwrap() >= raw.abs());
    }

    proptest::proptest! {
        #[test]
        fn srocc_ignores_monotone_maps(
            pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30),
            a in 0.1f64..5.0,
            shift in -10.0f64..10.0,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(base) = srocc(&x, &y) {
                let fx: Vec<f64> = x.iter().map(|v| (a * v / 100.0).exp() + shift).collect();
                let gy: Vec<f64> = y.iter().map(|v| -(v.powi(3)) * a).collect();
                proptest::prop_assert!((srocc(&fx, &y).unwrap() - base).abs() < 1e-12);
                proptest::prop_assert!((srocc(&x, &gy).unwrap() + base).abs() < 1e-12);
            }
        }

        #[test]
        fn correlations_are_bounded(
            pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..40),
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = plcc(&x, &y) {
                proptest::prop_assert!(r.abs() <= 1.0);
            }
            if let Ok(r) = srocc(&x, &y) {
                proptest::prop_assert!(r.abs() <= 1.0);
            }
        }

        #[test]
        fn plcc_tracks_affine_sign(
            pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..40),
            a in -10.0f64..10.0,
            b in -100.0f64..100.0,
        ) {
            proptest::prop_assume!(a.abs() > 1e-3);
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(r) = plcc(&x, &y) {
                let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                proptest::prop_assert!((plcc(&ax, &y).unwrap() - a.signum() * r).abs() < 1e-9);
            }
        }
    }
}
