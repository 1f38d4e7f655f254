//! Squeeze-and-excitation gates over a point set `U` (M points x C channels).
//!
//! cSE gates channels from the mean feature `z`: `w = W1 relu(W2 z)` with
//! `W2` of shape `C/2 x C` and `W1` of shape `C x C/2`, output `sigmoid(w) * U`
//! per channel. sSE gates points: `q_i = sigmoid(<U_i, w_sq>)`. scSE sums both.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::layers::sigmoid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    None,
    Cse,
    Sse,
    Scse,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 4] = [AttentionKind::None, AttentionKind::Cse, AttentionKind::Sse, AttentionKind::Scse];

    pub fn has_channel(self) -> bool {
        matches!(self, AttentionKind::Cse | AttentionKind::Scse)
    }

    pub fn has_spatial(self) -> bool {
        matches!(self, AttentionKind::Sse | AttentionKind::Scse)
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::None => "none",
            AttentionKind::Cse => "cse",
            AttentionKind::Sse => "sse",
            AttentionKind::Scse => "scse",
        })
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AttentionKind::None),
            "cse" => Ok(AttentionKind::Cse),
            "sse" => Ok(AttentionKind::Sse),
            "scse" => Ok(AttentionKind::Scse),
            _ => Err(Error::InvalidConfig(format!("unknown attention kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CseCache {
    pub z: Array1<f64>,
    pub hidden_pre: Array1<f64>,
    pub hidden: Array1<f64>,
    pub gates: Array1<f64>,
}

fn check_cse_shapes(u: ArrayView2<f64>, w1: ArrayView2<f64>, w2: ArrayView2<f64>) -> Result<()> {
    let c = u.ncols();
    if c % 2 != 0 {
        return Err(Error::OddChannelCount(c));
    }
    if w1.dim() != (c, c / 2) || w2.dim() != (c / 2, c) {
        return Err(Error::ShapeMismatch(format!(
            "cSE weights {:?}/{:?} for {c} channels",
            w1.dim(),
            w2.dim()
        )));
    }
    if u.nrows() == 0 {
        return Err(Error::ShapeMismatch("cSE over an empty point set".into()));
    }
    Ok(())
}

pub fn cse_forward(u: ArrayView2<f64>, w1: ArrayView2<f64>, w2: ArrayView2<f64>) -> Result<(Array2<f64>, CseCache)> {
    check_cse_shapes(u, w1, w2)?;
    let z = u.mean_axis(Axis(0)).expect("non-empty");
    let hidden_pre = w2.dot(&z);
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let gates = w1.dot(&hidden).mapv(sigmoid);
    let out = &u * &gates;
    Ok((
        out,
        CseCache {
            z,
            hidden_pre,
            hidden,
            gates,
        },
    ))
}

/// Returns `(dU, dW1, dW2)`.
pub fn cse_backward(
    u: ArrayView2<f64>,
    w1: ArrayView2<f64>,
    w2: ArrayView2<f64>,
    cache: &CseCache,
    dout: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let m = u.nrows() as f64;
    let mut du = &dout * &cache.gates;
    let dgate = (&dout * &u).sum_axis(Axis(0));
    let dw = &dgate * &cache.gates.mapv(|g| g * (1.0 - g));
    let dw1 = outer(dw.view(), cache.hidden.view());
    let mut dh = w1.t().dot(&dw);
    dh.zip_mut_with(&cache.hidden_pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0
        }
    });
    let dw2 = outer(dh.view(), cache.z.view());
    let dz = w2.t().dot(&dh) / m;
    du += &dz;
    (du, dw1, dw2)
}

#[derive(Debug, Clone)]
pub struct SseCache {
    pub gates: Array1<f64>,
}

pub fn sse_forward(u: ArrayView2<f64>, wsq: ArrayView1<f64>) -> Result<(Array2<f64>, SseCache)> {
    if wsq.len() != u.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "sSE weight of length {} for {} channels",
            wsq.len(),
            u.ncols()
        )));
    }
    let gates = u.dot(&wsq).mapv(sigmoid);
    let out = &u * &gates.view().insert_axis(Axis(1));
    Ok((out, SseCache { gates }))
}

/// Returns `(dU, dWsq)`.
pub fn sse_backward(
    u: ArrayView2<f64>,
    wsq: ArrayView1<f64>,
    cache: &SseCache,
    dout: ArrayView2<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let q = cache.gates.view().insert_axis(Axis(1));
    let mut du = &dout * &q;
    let dq = (&dout * &u).sum_axis(Axis(1));
    let ds = &dq * &cache.gates.mapv(|g| g * (1.0 - g));
    let dwsq = u.t().dot(&ds);
    du += &outer(ds.view(), wsq);
    (du, dwsq)
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

pub fn cse_block(u: ArrayView2<f64>, w1: ArrayView2<f64>, w2: ArrayView2<f64>) -> Result<Array2<f64>> {
    cse_forward(u, w1, w2).map(|(o, _)| o)
}

pub fn sse_block(u: ArrayView2<f64>, wsq: ArrayView1<f64>) -> Result<Array2<f64>> {
    sse_forward(u, wsq).map(|(o, _)| o)
}

pub fn scse_block(u: ArrayView2<f64>, w1: ArrayView2<f64>, w2: ArrayView2<f64>, wsq: ArrayView1<f64>) -> Result<Array2<f64>> {
    Ok(cse_block(u, w1, w2)? + sse_block(u, wsq)?)
}

/// Parameters of one attention block; absent parts are `None`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights<'a> {
    pub w1: Option<ArrayView2<'a, f64>>,
    pub w2: Option<ArrayView2<'a, f64>>,
    pub wsq: Option<ArrayView1<'a, f64>>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub input: Array2<f64>,
    pub cse: Option<CseCache>,
    pub sse: Option<SseCache>,
}

#[derive(Debug, Clone, Default)]
pub struct AttentionGrads {
    pub dw1: Option<Array2<f64>>,
    pub dw2: Option<Array2<f64>>,
    pub dwsq: Option<Array1<f64>>,
}

/// Applies whichever gates are present and sums their outputs.
pub fn attention_forward(u: ArrayView2<f64>, w: &AttentionWeights<'_>) -> Result<(Array2<f64>, AttentionCache)> {
    let mut out: Option<Array2<f64>> = None;
    let mut cse = None;
    let mut sse = None;
    if let (Some(w1), Some(w2)) = (w.w1, w.w2) {
        let (o, c) = cse_forward(u, w1, w2)?;
        out = Some(o);
        cse = Some(c);
    }
    if let Some(wsq) = w.wsq {
        let (o, c) = sse_forward(u, wsq)?;
        out = Some(match out {
            Some(prev) => prev + o,
            None => o,
        });
        sse = Some(c);
    }
    let out = out.unwrap_or_else(|| u.to_owned());
    Ok((
        out,
        AttentionCache {
            input: u.to_owned(),
            cse,
            sse,
        },
    ))
}

pub fn attention_backward(w: &AttentionWeights<'_>, cache: &AttentionCache, dout: ArrayView2<f64>) -> (Array2<f64>, AttentionGrads) {
    let u = cache.input.view();
    let mut grads = AttentionGrads::default();
    let mut du: Option<Array2<f64>> = None;
    if let (Some(c), Some(w1), Some(w2)) = (&cache.cse, w.w1, w.w2) {
        let (d, dw1, dw2) = cse_backward(u, w1, w2, c, dout);
        du = Some(d);
        grads.dw1 = Some(dw1);
        grads.dw2 = Some(dw2);
    }
    if let (Some(c), Some(wsq)) = (&cache.sse, w.wsq) {
        let (d, dwsq) = sse_backward(u, wsq, c, dout);
        du = Some(match du {
            Some(prev) => prev + d,
            None => d,
        });
        grads.dwsq = Some(dwsq);
    }
    (du.unwrap_or_else(|| dout.to_owned()), grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn odd_channels_rejected() {
        let u = Array2::zeros((3, 3));
        let w1 = Array2::zeros((3, 1));
        let w2 = Array2::zeros((1, 3));
        assert!(matches!(cse_block(u.view(), w1.view(), w2.view()), Err(Error::OddChannelCount(3))));
    }

    #[test]
    fn constant_channels_give_exact_mean() {
        let u = array![[1.5, -2.0], [1.5, -2.0], [1.5, -2.0]];
        let (_, c) = cse_forward(u.view(), Array2::zeros((2, 1)).view(), Array2::zeros((1, 2)).view()).unwrap();
        assert_eq!(c.z.to_vec(), vec![1.5, -2.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, c) = (5, 4);
        let u = rand_mat(&mut rng, m, c);
        let w1 = rand_mat(&mut rng, c, c / 2);
        let w2 = rand_mat(&mut rng, c / 2, c);
        let wsq = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
        let dout = rand_mat(&mut rng, m, c);
        let w = AttentionWeights {
            w1: Some(w1.view()),
            w2: Some(w2.view()),
            wsq: Some(wsq.view()),
        };
        let (_, cache) = attention_forward(u.view(), &w).unwrap();
        let (du, g) = attention_backward(&w, &cache, dout.view());
        let loss = |u: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>, wsq: &Array1<f64>| {
            (scse_block(u.view(), w1.view(), w2.view(), wsq.view()).unwrap() * &dout).sum()
        };
        let h = 1e-6;
        for i in 0..m {
            for j in 0..c {
                let (mut a, mut b) = (u.clone(), u.clone());
                a[[i, j]] += h;
                b[[i, j]] -= h;
                let fd = (loss(&a, &w1, &w2, &wsq) - loss(&b, &w1, &w2, &wsq)) / (2.0 * h);
                assert!((fd - du[[i, j]]).abs() < 1e-7);
            }
        }
        let dw1 = g.dw1.unwrap();
        for i in 0..c {
            for j in 0..c / 2 {
                let (mut a, mut b) = (w1.clone(), w1.clone());
                a[[i, j]] += h;
                b[[i, j]] -= h;
                let fd = (loss(&u, &a, &w2, &wsq) - loss(&u, &b, &w2, &wsq)) / (2.0 * h);
                assert!((fd - dw1[[i, j]]).abs() < 1e-7);
            }
        }
        let dw2 = g.dw2.unwrap();
        for i in 0..c / 2 {
            for j in 0..c {
                let (mut a, mut b) = (w2.clone(), w2.clone());
                a[[i, j]] += h;
                b[[i, j]] -= h;
                let fd = (loss(&u, &w1, &a, &wsq) - loss(&u, &w1, &b, &wsq)) / (2.0 * h);
                assert!((fd - dw2[[i, j]]).abs() < 1e-7);
            }
        }
        let dwsq = g.dwsq.unwrap();
        for j in 0..c {
            let (mut a, mut b) = (wsq.clone(), wsq.clone());
            a[j] += h;
            b[j] -= h;
            let fd = (loss(&u, &w1, &w2, &a) - loss(&u, &w1, &w2, &b)) / (2.0 * h);
            assert!((fd - dwsq[j]).abs() < 1e-7);
        }
    }
}
