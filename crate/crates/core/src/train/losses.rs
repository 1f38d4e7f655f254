//! Cross-entropy over quality levels and the `(1 - PLCC)^2` regression loss.

use crate::error::{Error, Result};

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} outside 0..{}",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let loss = (lse - logits[label]).max(0.0);
    let mut grad: Vec<f64> = logits.iter().map(|&l| (l - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlccLoss {
    pub loss: f64,
    pub plcc: f64,
    /// Gradient with respect to each prediction.
    pub grad: Vec<f64>,
    /// Constant predictions or targets: loss fixed at 4 with zero gradient.
    pub degenerate: bool,
}

/// `(1 - r)^2` where `r` is the Pearson correlation of `pred` and `target`.
pub fn plcc_loss(pred: &[f64], target: &[f64]) -> Result<PlccLoss> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::InvalidArgument("plcc loss needs a batch of at least two".into()));
    }
    let mx = pred.iter().sum::<f64>() / n as f64;
    let my = target.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in pred.iter().zip(target) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(PlccLoss {
            loss: 4.0,
            plcc: 0.0,
            grad: vec![0.0; n],
            degenerate: true,
        });
    }
    let denom = (sxx * syy).sqrt();
    let r = sxy / denom;
    let scale = -2.0 * (1.0 - r);
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&x, &y)| scale * ((y - my) / denom - r * (x - mx) / sxx))
        .collect();
    Ok(PlccLoss {
        loss: (1.0 - r) * (1.0 - r),
        plcc: r,
        grad,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cross_entropy_examples() {
        for label in 0..3 {
            let (l, _) = cross_entropy(&[0.0; 3], label).unwrap();
            assert!((l - 3f64.ln()).abs() < 1e-15);
        }
        let (l, g) = cross_entropy(&[1000.0, 0.0, 0.0], 0).unwrap();
        assert!(l.is_finite() && l < 1e-300 + 1e-15);
        assert!(g.iter().all(|v| v.is_finite()));
        assert!(cross_entropy(&[0.0; 3], 3).is_err());
    }

    #[test]
    fn cross_entropy_matches_naive_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let logits: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let label = rng.random_range(0..3);
            let naive = -(logits[label].exp() / logits.iter().map(|l| l.exp()).sum::<f64>()).ln();
            assert!((cross_entropy(&logits, label).unwrap().0 - naive).abs() < 1e-10);
        }
    }

    #[test]
    fn cross_entropy_decreases_as_true_logit_grows() {
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let (l, _) = cross_entropy(&[0.3, i as f64 * 0.5, -0.2], 1).unwrap();
            assert!(l >= 0.0 && l < prev);
            prev = l;
        }
    }

    #[test]
    fn plcc_loss_examples() {
        let t = [1.0, 2.0, 4.0, 3.0];
        assert!(plcc_loss(&t, &t).unwrap().loss.abs() < 1e-15);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((plcc_loss(&neg, &t).unwrap().loss - 4.0).abs() < 1e-12);
        let d = plcc_loss(&[1.0; 4], &t).unwrap();
        assert!(d.degenerate && d.loss == 4.0 && d.grad.iter().all(|&g| g == 0.0));
        assert!(plcc_loss(&t, &[2.0; 4]).unwrap().degenerate);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p: Vec<f64> = (0..8).map(|_| rng.random()).collect();
            let t: Vec<f64> = (0..8).map(|_| rng.random()).collect();
            let g = plcc_loss(&p, &t).unwrap().grad;
            let h = 1e-6;
            let fd: Vec<f64> = (0..8)
                .map(|i| {
                    let (mut a, mut b) = (p.clone(), p.clone());
                    a[i] += h;
                    b[i] -= h;
                    (plcc_loss(&a, &t).unwrap().loss - plcc_loss(&b, &t).unwrap().loss) / (2.0 * h)
                })
                .collect();
            let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff / norm <= 1e-5, "{diff} {norm}");

            let logits: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let label = rng.random_range(0..3);
            let (_, gc) = cross_entropy(&logits, label).unwrap();
            for i in 0..3 {
                let (mut a, mut b) = (logits.clone(), logits.clone());
                a[i] += h;
                b[i] -= h;
                let fd = (cross_entropy(&a, label).unwrap().0 - cross_entropy(&b, label).unwrap().0) / (2.0 * h);
                assert!((fd - gc[i]).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn plcc_loss_ignores_positive_affine_maps(
            p in prop::collection::vec(-10.0f64..10.0, 4..12),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let t: Vec<f64> = (0..p.len()).map(|i| (i as f64 * 1.7).sin()).collect();
            let base = plcc_loss(&p, &t).unwrap();
            prop_assume!(!base.degenerate);
            let q: Vec<f64> = p.iter().map(|v| a * v + b).collect();
            prop_assert!((plcc_loss(&q, &t).unwrap().loss - base.loss).abs() < 1e-10);
        }
    }
}
