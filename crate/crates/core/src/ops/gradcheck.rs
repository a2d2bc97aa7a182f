//! Central-difference gradient checker for scalar-valued compositions.

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Compares analytic gradients against central differences.
///
/// `f` evaluates the scalar loss at the given inputs and returns the analytic
/// gradient for each input. Every coordinate of every input is perturbed by
/// `±epsilon`; the result is the maximum over coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], epsilon: f64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)>,
{
    let (loss, analytic) = f(inputs)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss} at the base point")));
    }
    if analytic.len() != inputs.len() {
        return Err(dim_err!(
            "{} analytic gradients for {} inputs",
            analytic.len(),
            inputs.len()
        ));
    }
    let mut probe = inputs.to_vec();
    let mut worst = 0.0f64;
    for (t, grad) in analytic.iter().enumerate() {
        inputs[t].check_same_shape(grad)?;
        for i in 0..inputs[t].len() {
            let orig = inputs[t].data()[i];
            probe[t].data_mut()[i] = orig + epsilon;
            let (up, _) = f(&probe)?;
            probe[t].data_mut()[i] = orig - epsilon;
            let (down, _) = f(&probe)?;
            probe[t].data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss perturbing input {t} coordinate {i}"
                )));
            }
            let numeric = (up - down) / (2.0 * epsilon);
            let a = grad.data()[i];
            if !a.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite analytic gradient at input {t} coordinate {i}"
                )));
            }
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
