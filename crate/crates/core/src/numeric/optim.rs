use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Plain gradient descent: `p <- p - learning_rate * grad(p)`, then clears
/// the gradient. Parameters that do not require a gradient are skipped.
pub fn sgd_step(params: &mut [&mut Tensor], learning_rate: f64) -> Result<()> {
    if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
        return Err(Error::Argument(format!(
            "learning rate must be finite and non-negative, got {learning_rate}"
        )));
    }
    // Validate first so a failure leaves every parameter untouched.
    for (i, p) in params.iter().enumerate() {
        if p.requires_grad() && p.grad().is_none() {
            return Err(Error::ContractViolation(format!(
                "parameter {i} (shape {:?}) has no gradient",
                p.shape()
            )));
        }
    }
    for p in params.iter_mut() {
        if !p.requires_grad() {
            continue;
        }
        let grad = p.grad().expect("checked above").to_vec();
        for (v, g) in p.data_mut().iter_mut().zip(&grad) {
            *v -= learning_rate * g;
        }
        p.clear_grad();
    }
    Ok(())
}
