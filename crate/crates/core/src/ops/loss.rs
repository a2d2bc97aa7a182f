//! Softmax, class-weighted categorical cross-entropy and L1/L2 penalties.

use crate::error::{arg_err, dim_err, Result};
use crate::tensor::{c, Scalar, Tensor};

/// Floor applied to probabilities before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Numerically stable softmax of one logit vector.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(arg_err!("softmax of an empty vector"));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Row-wise softmax of an `N×C` logit matrix.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, cls) = logits.dims2()?;
    let mut out = Vec::with_capacity(n * cls);
    for row in logits.data().chunks_exact(cls.max(1)) {
        out.extend(softmax(row)?);
    }
    Tensor::from_vec(&[n, cls], out)
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(arg_err!("label {l} out of range for {classes} classes"));
        }
        data[i * classes + l] = T::one();
    }
    Tensor::from_vec(&[labels.len(), classes], data)
}

/// Index of the hot entry in every row; fails if a row is not one-hot.
fn hot_indices<T: Scalar>(onehot: &Tensor<T>) -> Result<Vec<usize>> {
    let (_, cls) = onehot.dims2()?;
    onehot
        .data()
        .chunks_exact(cls.max(1))
        .enumerate()
        .map(|(r, row)| {
            let mut hot = None;
            for (j, &v) in row.iter().enumerate() {
                if v == T::one() && hot.is_none() {
                    hot = Some(j);
                } else if v != T::zero() {
                    return Err(arg_err!("label row {r} is not one-hot"));
                }
            }
            hot.ok_or_else(|| arg_err!("label row {r} has no hot entry"))
        })
        .collect()
}

fn check_weights<T: Scalar>(weights: &[T], classes: usize) -> Result<()> {
    if weights.len() != classes {
        return Err(dim_err!(
            "{} class weights for {classes} classes",
            weights.len()
        ));
    }
    if weights.iter().any(|&w| !(w > T::zero())) {
        return Err(arg_err!("class weights must be positive"));
    }
    Ok(())
}

/// `l1 * Σ|θ| + l2 * Σθ²` over the given tensors.
pub fn regularization_penalty<T: Scalar>(l1: T, l2: T, params: &[&Tensor<T>]) -> T {
    params
        .iter()
        .flat_map(|p| p.data())
        .fold(T::zero(), |acc, &v| acc + l1 * v.abs() + l2 * v * v)
}

/// Gradient of [`regularization_penalty`] for one tensor.
pub fn regularization_grad<T: Scalar>(l1: T, l2: T, param: &[T]) -> Vec<T> {
    let two: T = c(2.0);
    param
        .iter()
        .map(|&v| {
            let sign = if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            l1 * sign + two * l2 * v
        })
        .collect()
}

/// Mean class-weighted negative log-likelihood plus the L1/L2 penalty on
/// `regularized` parameters.
pub fn cross_entropy_loss<T: Scalar>(
    probs: &Tensor<T>,
    onehot: &Tensor<T>,
    class_weights: &[T],
    l1: T,
    l2: T,
    regularized: &[&Tensor<T>],
) -> Result<T> {
    probs.check_same_shape(onehot)?;
    let (n, cls) = probs.dims2()?;
    if n == 0 {
        return Err(arg_err!("cross entropy over an empty batch"));
    }
    check_weights(class_weights, cls)?;
    let hot = hot_indices(onehot)?;
    let floor: T = c(LOG_FLOOR);
    let nll: T = hot
        .iter()
        .enumerate()
        .map(|(r, &k)| -class_weights[k] * probs.data()[r * cls + k].max(floor).ln())
        .sum();
    Ok(nll / T::from_usize(n).unwrap() + regularization_penalty(l1, l2, regularized))
}

/// Gradient of the weighted cross-entropy with respect to the logits, taken
/// through the softmax: `w_n (p - y) / N`.
pub fn softmax_ce_grad<T: Scalar>(
    probs: &Tensor<T>,
    onehot: &Tensor<T>,
    class_weights: &[T],
) -> Result<Tensor<T>> {
    probs.check_same_shape(onehot)?;
    let (n, cls) = probs.dims2()?;
    check_weights(class_weights, cls)?;
    let hot = hot_indices(onehot)?;
    let inv_n = T::one() / T::from_usize(n.max(1)).unwrap();
    let mut g = Vec::with_capacity(n * cls);
    for (r, &k) in hot.iter().enumerate() {
        let w = class_weights[k] * inv_n;
        for j in 0..cls {
            g.push(w * (probs.data()[r * cls + j] - onehot.data()[r * cls + j]));
        }
    }
    Tensor::from_vec(&[n, cls], g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0f64, 0.0, 0.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        let p = softmax(&[1.0f64, 2.0, 3.0]).unwrap();
        for (a, b) in p.iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((a - b).abs() < 1e-5);
        }

        let p = softmax(&[1000.0f32, 0.0, 0.0]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p.iter().all(|v| v.is_finite()));

        assert!(softmax::<f64>(&[]).is_err());
    }

    #[test]
    fn loss_examples() {
        let y = one_hot::<f64>(&[0], 3).unwrap();
        let p = Tensor::from_vec(&[1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(cross_entropy_loss(&p, &y, &[1.0; 3], 0.0, 0.0, &[]).unwrap(), 0.0);

        let p = Tensor::full(&[1, 3], 1.0 / 3.0);
        let l = cross_entropy_loss(&p, &y, &[1.0; 3], 0.0, 0.0, &[]).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);

        let l2 = cross_entropy_loss(&p, &y, &[2.0, 1.0, 1.0], 0.0, 0.0, &[]).unwrap();
        assert!((l2 - 2.0 * l).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let y = one_hot::<f64>(&[1], 2).unwrap();
        let p = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let l = cross_entropy_loss(&p, &y, &[1.0; 2], 0.0, 0.0, &[]).unwrap();
        assert!((l + (1e-12f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn rejects_soft_labels() {
        let y = Tensor::<f64>::from_vec(&[1, 2], vec![0.5, 0.5]).unwrap();
        let p = Tensor::full(&[1, 2], 0.5);
        assert!(matches!(
            cross_entropy_loss(&p, &y, &[1.0; 2], 0.0, 0.0, &[]),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn penalty_and_gradient() {
        let w = Tensor::<f64>::from_vec(&[3], vec![-2.0, 0.0, 1.0]).unwrap();
        assert!((regularization_penalty(0.1, 0.01, &[&w]) - (0.3 + 0.05)).abs() < 1e-12);
        assert_eq!(
            regularization_grad(0.1, 0.01, w.data()),
            vec![-0.1 - 0.04, 0.0, 0.1 + 0.02]
        );
    }
}
