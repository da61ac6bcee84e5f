//! Batch-averaged losses and the output-layer sensitivity.
//!
//! Both losses are averaged over the batch, so the sensitivities returned
//! here already carry the `1 / batch` factor and weight gradients assembled
//! from them are gradients of the mean loss.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// `½‖d − y‖²` per sample.
    HalfSquaredError,
    /// Cross-entropy of `softmax(y)` against the target distribution.
    SoftmaxCrossEntropy,
}

impl Loss {
    pub const ALL: [Loss; 2] = [Loss::HalfSquaredError, Loss::SoftmaxCrossEntropy];

    /// Mean loss over the batch.
    pub fn value(self, prediction: &Matrix, target: &Matrix) -> Result<f64> {
        check_dims("loss_value", prediction, target)?;
        let batch = prediction.rows();
        if batch == 0 {
            return Ok(0.0);
        }
        let total: f64 = match self {
            Loss::HalfSquaredError => prediction
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(y, d)| 0.5 * (d - y) * (d - y))
                .sum(),
            Loss::SoftmaxCrossEntropy => (0..batch)
                .map(|r| {
                    let logits = prediction.row(r);
                    let lse = log_sum_exp(logits);
                    logits
                        .iter()
                        .zip(target.row(r))
                        .map(|(&z, &d)| if d == 0.0 { 0.0 } else { -d * (z - lse) })
                        .sum::<f64>()
                })
                .sum(),
        };
        let mean = total / batch as f64;
        if mean.is_finite() {
            Ok(mean)
        } else {
            Err(Error::non_finite("loss value"))
        }
    }

    /// `∂J/∂a^L`: gradient of the mean loss with respect to the network output.
    pub fn output_gradient(self, prediction: &Matrix, target: &Matrix) -> Result<Matrix> {
        check_dims("loss_output_gradient", prediction, target)?;
        let inv_batch = 1.0 / prediction.rows().max(1) as f64;
        let grad = match self {
            Loss::HalfSquaredError => prediction.sub(target)?.scale(inv_batch),
            Loss::SoftmaxCrossEntropy => softmax_rows(prediction).sub(target)?.scale(inv_batch),
        };
        grad.ensure_finite(|| "loss gradient".to_string())?;
        Ok(grad)
    }
}

pub fn loss_value(loss: Loss, prediction: &Matrix, target: &Matrix) -> Result<f64> {
    loss.value(prediction, target)
}

/// `δ^L = f′(Z^L) ⊙ ∂J/∂a^L` (descent convention: for half-squared error this
/// is `f′(Z^L) ⊙ (a^L − D) / batch`).
pub fn loss_output_sensitivity(
    loss: Loss,
    prediction: &Matrix,
    target: &Matrix,
    z_last: &Matrix,
    f: Activation,
) -> Result<Matrix> {
    if z_last.dims() != prediction.dims() {
        return Err(Error::shape(
            "loss_output_sensitivity",
            z_last.dims(),
            prediction.dims(),
        ));
    }
    let grad = loss.output_gradient(prediction, target)?;
    if f == Activation::Identity {
        return Ok(grad);
    }
    grad.hadamard(&crate::activation::activate_derivative(f, z_last)?)
}

/// Row-wise softmax.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    let cols = m.cols().max(1);
    for row in out.as_mut_slice().chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn check_dims(op: &'static str, prediction: &Matrix, target: &Matrix) -> Result<()> {
    if prediction.dims() != target.dims() {
        return Err(Error::shape(op, prediction.dims(), target.dims()));
    }
    Ok(())
}
