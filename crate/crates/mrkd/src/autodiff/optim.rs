//! Cosine-annealed SGD with classical momentum.
//!
//! The schedule is a pure function of (epoch, total_epochs); velocity
//! buffers are keyed by parameter id and materialize lazily, so frozen
//! or unused parameters never acquire state.

use std::collections::HashMap;

use super::graph::{Gradients, ParamId};
use super::tensor::{Element, Tensor};
use super::AutodiffError;

#[derive(Debug, Clone)]
pub struct OptimizerState<E: Element> {
    pub base_lr: E,
    pub momentum: E,
    pub epoch: u32,
    pub total_epochs: u32,
    velocity: HashMap<ParamId, Tensor<E>>,
}

impl<E: Element> OptimizerState<E> {
    pub fn new(base_lr: E, momentum: E, total_epochs: u32) -> Self {
        Self {
            base_lr,
            momentum,
            epoch: 0,
            total_epochs,
            velocity: HashMap::new(),
        }
    }

    pub fn advance_epoch(&mut self) {
        self.epoch += 1;
    }

    /// Number of parameters with live velocity buffers.
    pub fn tracked_params(&self) -> usize {
        self.velocity.len()
    }
}

/// lr(t) = 0.5 * base * (1 + cos(pi * t / total)).
pub fn cosine_lr<E: Element>(state: &OptimizerState<E>) -> Result<E, AutodiffError> {
    if state.total_epochs == 0 {
        return Err(AutodiffError::Parameter(
            "cosine schedule needs total_epochs >= 1".into(),
        ));
    }
    if state.epoch > state.total_epochs {
        return Err(AutodiffError::Parameter(format!(
            "epoch {} is past the end of the schedule ({})",
            state.epoch, state.total_epochs
        )));
    }
    let phase = std::f64::consts::PI * state.epoch as f64 / state.total_epochs as f64;
    Ok(E::from_f64(0.5 * state.base_lr.to_f64() * (1.0 + phase.cos())))
}

/// One SGD update: v = momentum * v + grad; p -= lr * v. Parameters
/// without a gradient are skipped and keep their velocity untouched.
/// Returns the learning rate that was applied.
pub fn sgd_step<'a, E: Element, I>(
    params: I,
    grads: &Gradients<E>,
    state: &mut OptimizerState<E>,
) -> Result<E, AutodiffError>
where
    I: IntoIterator<Item = (ParamId, &'a mut Tensor<E>)>,
{
    let lr = cosine_lr(state)?;
    let momentum = state.momentum;
    for (id, param) in params {
        let Some(grad) = grads.for_param(id) else {
            continue;
        };
        if grad.shape() != param.shape() {
            return Err(AutodiffError::Shape {
                op: "sgd_step",
                detail: format!(
                    "param {id:?} has shape {:?} but its gradient has shape {:?}",
                    param.shape(),
                    grad.shape()
                ),
            });
        }
        let velocity = state
            .velocity
            .entry(id)
            .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
        for ((v, &g), p) in velocity
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(param.data_mut().iter_mut())
        {
            *v = momentum * *v + g;
            *p -= lr * *v;
        }
    }
    Ok(lr)
}
