//! Hessian-vector products by finite differences of gradients.

use super::graph::{Graph, NormMode};
use crate::data::Batch;
use crate::error::{Error, Result};

/// Step used when the caller does not supply one: `1e-4 * (1 + |theta|_inf)`.
pub fn default_eps(theta: &[f64]) -> f64 {
    let max = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-4 * (1.0 + max)
}

/// `H v ~= (grad(theta + eps * v_hat) - grad(theta)) / eps * |v|`, with
/// `v_hat = v / |v|`. The Hessian is never materialized.
pub fn finite_difference_hvp<F>(
    theta: &[f64],
    direction: &[f64],
    eps: Option<f64>,
    mut grad: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if theta.len() != direction.len() {
        return Err(Error::LengthMismatch(direction.len(), theta.len()));
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroDirection);
    }
    let eps = eps.unwrap_or_else(|| default_eps(theta));
    let g0 = grad(theta)?;
    let shifted: Vec<f64> = theta
        .iter()
        .zip(direction)
        .map(|(t, v)| t + eps * v / norm)
        .collect();
    let g1 = grad(&shifted)?;
    Ok(g1
        .iter()
        .zip(&g0)
        .map(|(a, b)| (a - b) / eps * norm)
        .collect())
}

impl Graph {
    /// Hessian of the cross-entropy loss on `batch` times `direction` (laid
    /// out like [`Graph::param_vector`]). Parameters are restored afterwards.
    pub fn hvp(&mut self, batch: &Batch, direction: &[f64], eps: Option<f64>) -> Result<Vec<f64>> {
        let theta = self.param_vector();
        let result = finite_difference_hvp(&theta, direction, eps, |p| {
            self.set_param_vector(p)?;
            self.forward_loss(&batch.inputs, &batch.labels, NormMode::BatchStats)?;
            self.backward_loss()?;
            Ok(self.grad_vector())
        });
        self.set_param_vector(&theta)?;
        result
    }

    /// Loss gradient on `batch`, laid out like [`Graph::param_vector`].
    pub fn loss_gradient(&mut self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let loss = self.forward_loss(&batch.inputs, &batch.labels, NormMode::BatchStats)?;
        self.backward_loss()?;
        Ok((loss, self.grad_vector()))
    }
}
