//! The example-weighted reverse transfer term coupling source labels with
//! target pseudo-labels through feature cosine similarity.

use crate::error::{Error, Result};
use crate::geometry::{dot, norm};

/// Value and gradients of the reverse loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseLoss {
    pub value: f64,
    pub grad_source: Vec<Vec<f64>>,
    pub grad_target: Vec<Vec<f64>>,
}

/// `sum_s sum_t d_s || cos(x_s, x_t) yhat_t - y_s ||^2` with one-hot labels
/// given as class indices. For one-hot vectors the squared norm expands to
/// `c^2 - 2 c [yhat_t == y_s] + 1`.
pub fn curricular_reverse_loss<P: AsRef<[f64]>>(
    source: &[P],
    labels: &[usize],
    target: &[P],
    pseudo_labels: &[usize],
    weights: &[f64],
) -> Result<f64> {
    Ok(reverse_loss_with_grad(source, labels, target, pseudo_labels, weights, false)?.value)
}

pub fn reverse_loss_with_grad<P: AsRef<[f64]>>(
    source: &[P],
    labels: &[usize],
    target: &[P],
    pseudo_labels: &[usize],
    weights: &[f64],
    with_grad: bool,
) -> Result<ReverseLoss> {
    if source.is_empty() {
        return Err(Error::Empty("source batch".into()));
    }
    if target.is_empty() {
        return Err(Error::Empty("target batch".into()));
    }
    for (what, found, expected) in [
        ("source labels", labels.len(), source.len()),
        ("example weights", weights.len(), source.len()),
        ("pseudo-labels", pseudo_labels.len(), target.len()),
    ] {
        if found != expected {
            return Err(Error::LengthMismatch { what, expected, found });
        }
    }
    if weights.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(Error::invalid("example weights", "must lie in [0, 1]"));
    }
    let dim = source[0].as_ref().len();
    let unit = |p: &P, side: &str, i: usize| -> Result<(Vec<f64>, f64)> {
        let v = p.as_ref();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        let n = norm(v);
        if n == 0.0 {
            return Err(Error::ZeroNorm(format!("{side} feature {i}")));
        }
        Ok((v.iter().map(|x| x / n).collect(), n))
    };
    let us: Vec<(Vec<f64>, f64)> = source.iter().enumerate().map(|(i, p)| unit(p, "source", i)).collect::<Result<_>>()?;
    let ut: Vec<(Vec<f64>, f64)> = target.iter().enumerate().map(|(i, p)| unit(p, "target", i)).collect::<Result<_>>()?;

    let mut value = 0.0;
    let mut gs = vec![vec![0.0; dim]; if with_grad { source.len() } else { 0 }];
    let mut gt = vec![vec![0.0; dim]; if with_grad { target.len() } else { 0 }];
    for (s, (u_s, n_s)) in us.iter().enumerate() {
        let d = weights[s];
        if d == 0.0 {
            continue;
        }
        for (t, (u_t, n_t)) in ut.iter().enumerate() {
            let c = dot(u_s, u_t);
            let m = if pseudo_labels[t] == labels[s] { 1.0 } else { 0.0 };
            value += d * (c * c - 2.0 * c * m + 1.0);
            if with_grad {
                let dc = d * (2.0 * c - 2.0 * m);
                for j in 0..dim {
                    gs[s][j] += dc * (u_t[j] - c * u_s[j]) / n_s;
                    gt[t][j] += dc * (u_s[j] - c * u_t[j]) / n_t;
                }
            }
        }
    }
    Ok(ReverseLoss {
        value,
        grad_source: gs,
        grad_target: gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero() {
        let s = vec![vec![1.0, 0.0], vec![0.3, 0.4]];
        let t = vec![vec![0.0, 1.0]];
        assert_eq!(curricular_reverse_loss(&s, &[0, 1], &t, &[1], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn perfect_pair_gives_zero() {
        let s = vec![vec![2.0, 1.0]];
        let t = vec![vec![4.0, 2.0]];
        assert!(curricular_reverse_loss(&s, &[1], &t, &[1], &[0.7]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_norm_is_an_error() {
        let s = vec![vec![0.0, 0.0]];
        let t = vec![vec![1.0, 0.0]];
        assert!(matches!(
            curricular_reverse_loss(&s, &[0], &t, &[0], &[0.5]),
            Err(Error::ZeroNorm(_))
        ));
    }
}
