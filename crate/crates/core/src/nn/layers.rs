//! Row-major building blocks: every activation is a `rows x channels` matrix
//! and each forward has a matching backward.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `x W + b` with `W` stored `in x out`.
pub fn linear(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Returns `(dx, dW, db)`.
pub fn linear_backward(
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    (dy.dot(&w.t()), x.t().dot(&dy), dy.sum_axis(Axis(0)))
}

#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Array2<f64>,
    pub invstd: Array1<f64>,
    /// Batch statistics; `None` when running statistics were used.
    pub batch_stats: Option<(Array1<f64>, Array1<f64>)>,
}

/// Batch normalization over rows. With `running` set the given statistics
/// are used (inference); otherwise biased batch statistics.
pub fn batch_norm(
    x: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    running: Option<(ArrayView1<f64>, ArrayView1<f64>)>,
) -> (Array2<f64>, BnCache) {
    let (mean, var, batch) = match running {
        Some((m, v)) => (m.to_owned(), v.to_owned(), false),
        None => {
            let n = x.nrows() as f64;
            let mean = x.sum_axis(Axis(0)) / n;
            let mut var = Array1::zeros(x.ncols());
            for row in x.rows() {
                Zip::from(&mut var).and(&row).and(&mean).for_each(|v, &a, &m| *v += (a - m) * (a - m));
            }
            var /= n;
            (mean, var, true)
        }
    };
    let invstd = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let mut xhat = x.to_owned();
    xhat -= &mean;
    xhat *= &invstd;
    let mut y = &xhat * &gamma;
    y += &beta;
    let batch_stats = batch.then_some((mean, var));
    (
        y,
        BnCache {
            xhat,
            invstd,
            batch_stats,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward(
    cache: &BnCache,
    gamma: ArrayView1<f64>,
    dy: ArrayView2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dbeta = dy.sum_axis(Axis(0));
    let dgamma = (&dy * &cache.xhat).sum_axis(Axis(0));
    let dxhat = &dy * &gamma;
    let dx = if cache.batch_stats.is_some() {
        let n = dy.nrows() as f64;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let mut dx = dxhat * n;
        dx -= &sum_dxhat;
        dx -= &(&cache.xhat * &sum_dxhat_xhat);
        dx *= &(&cache.invstd / n);
        dx
    } else {
        dxhat * &cache.invstd
    };
    (dx, dgamma, dbeta)
}

/// Exponential update of running statistics; the variance fed in is the
/// unbiased batch estimate.
pub fn update_running(
    running_mean: &mut [f64],
    running_var: &mut [f64],
    batch_mean: ArrayView1<f64>,
    batch_var: ArrayView1<f64>,
    rows: usize,
) {
    let corr = if rows > 1 { rows as f64 / (rows as f64 - 1.0) } else { 1.0 };
    for (r, &m) in running_mean.iter_mut().zip(batch_mean) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
    }
    for (r, &v) in running_var.iter_mut().zip(batch_var) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * corr;
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given its input.
pub fn relu_backward(x: &Array2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
    let mut dx = dy.to_owned();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Max over consecutive blocks of `group` rows. Ties resolve to the first
/// row of the block holding the maximum.
pub fn max_pool_groups(x: ArrayView2<f64>, group: usize) -> (Array2<f64>, Vec<u32>) {
    let (rows, c) = x.dim();
    assert!(group > 0 && rows % group == 0, "rows {rows} not divisible by group {group}");
    let out_rows = rows / group;
    let mut y = Array2::zeros((out_rows, c));
    let mut arg = vec![0u32; out_rows * c];
    for g in 0..out_rows {
        let block = x.slice(s![g * group..(g + 1) * group, ..]);
        for ch in 0..c {
            let mut best = block[[0, ch]];
            let mut bi = 0;
            for r in 1..group {
                let v = block[[r, ch]];
                if v > best {
                    best = v;
                    bi = r;
                }
            }
            y[[g, ch]] = best;
            arg[g * c + ch] = (g * group + bi) as u32;
        }
    }
    (y, arg)
}

pub fn max_pool_backward(arg: &[u32], dy: ArrayView2<f64>, in_rows: usize) -> Array2<f64> {
    let c = dy.ncols();
    let mut dx = Array2::zeros((in_rows, c));
    for ((g, ch), &d) in dy.indexed_iter() {
        dx[[arg[g * c + ch] as usize, ch]] += d;
    }
    dx
}

/// Builds grouped rows `[rel | features[src]]`.
pub fn gather_concat(rel: ArrayView2<f64>, features: ArrayView2<f64>, src: &[usize]) -> Array2<f64> {
    let d = rel.ncols();
    let c = features.ncols();
    let mut out = Array2::zeros((src.len(), d + c));
    for (r, &j) in src.iter().enumerate() {
        out.slice_mut(s![r, ..d]).assign(&rel.row(r));
        out.slice_mut(s![r, d..]).assign(&features.row(j));
    }
    out
}

/// Scatter-adds the feature part of the grouped gradient back to its sources.
pub fn gather_concat_backward(dgrouped: ArrayView2<f64>, d: usize, src: &[usize], n_features: usize) -> Array2<f64> {
    let c = dgrouped.ncols() - d;
    let mut df = Array2::zeros((n_features, c));
    for (r, &j) in src.iter().enumerate() {
        let mut row = df.row_mut(j);
        row += &dgrouped.slice(s![r, d..]);
    }
    df
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn max_pool_is_exact_and_routes_gradient() {
        let x = array![[1.0, 5.0], [3.0, 5.0], [-1.0, 0.0], [-2.0, 4.0]];
        let (y, arg) = max_pool_groups(x.view(), 2);
        assert_eq!(y, array![[3.0, 5.0], [-1.0, 4.0]]);
        let dx = max_pool_backward(&arg, array![[1.0, 2.0], [3.0, 4.0]].view(), 4);
        assert_eq!(dx, array![[0.0, 2.0], [1.0, 0.0], [3.0, 0.0], [0.0, 4.0]]);
    }

    #[test]
    fn batch_norm_of_zeros_is_beta() {
        let x = Array2::zeros((5, 3));
        let (y, _) = batch_norm(x.view(), Array1::ones(3).view(), Array1::zeros(3).view(), None);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_normalizes() {
        let x = array![[1.0, 10.0], [2.0, 20.0], [3.0, 60.0]];
        let (y, c) = batch_norm(x.view(), Array1::ones(2).view(), Array1::zeros(2).view(), None);
        for col in y.columns() {
            assert!(col.sum().abs() < 1e-12);
            let var = col.mapv(|v| v * v).sum() / 3.0;
            assert!((var - 1.0).abs() < 1e-4);
        }
        let (m, v) = c.batch_stats.unwrap();
        assert_eq!(m[0], 2.0);
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gather_round_trip() {
        let rel = array![[0.1, 0.2, 0.3], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]];
        let f = array![[7.0], [8.0]];
        let g = gather_concat(rel.view(), f.view(), &[1, 0, 1]);
        assert_eq!(g.column(3).to_vec(), vec![8.0, 7.0, 8.0]);
        let df = gather_concat_backward(Array2::ones((3, 4)).view(), 3, &[1, 0, 1], 2);
        assert_eq!(df.column(0).to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(1000.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
