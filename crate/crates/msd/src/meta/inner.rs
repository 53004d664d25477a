//! The inner-loop update operator: k full-batch gradient-descent steps on
//! the support loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, ops, Graph, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::nn::{self, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerLoopConfig {
    pub steps: usize,
    pub inner_lr: f64,
    pub first_order: bool,
}

impl Default for InnerLoopConfig {
    fn default() -> Self {
        InnerLoopConfig { steps: 20, inner_lr: 0.05, first_order: false }
    }
}

impl InnerLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr > 0.0) {
            return Err(Error::Config(format!("inner_lr must be > 0, got {}", self.inner_lr)));
        }
        Ok(())
    }

    pub fn with_steps(&self, steps: usize) -> Self {
        InnerLoopConfig { steps, ..*self }
    }
}

/// Runs `steps` gradient-descent steps of `loss_fn` starting from `theta`.
///
/// With `retain_graph`, `theta` must be tracked and the returned parameters
/// stay differentiable with respect to it: every per-step gradient is itself
/// recorded on the tape (that is the second-order path). Without it, each
/// step detaches: the loop runs on value snapshots with a throwaway graph
/// per step.
///
/// A non-finite loss aborts with a divergence error carrying the step index.
pub fn inner_update_fn<F>(
    theta: &ParamSet,
    steps: usize,
    inner_lr: f64,
    retain_graph: bool,
    loss_fn: F,
) -> Result<ParamSet>
where
    F: Fn(&ParamSet) -> Result<Tensor>,
{
    if retain_graph {
        if !theta.is_tracked() {
            return Err(Error::Contract(
                "retain_graph inner update needs tracked parameters".into(),
            ));
        }
        let mut current = theta.clone();
        for step in 0..steps {
            let loss = loss_fn(&current)?;
            if !loss.item()?.is_finite() {
                return Err(Error::Divergence { step });
            }
            let grads = backward(&loss, &current, true)?;
            current = current.zip_map(&grads, |p, g| ops::sub(p, &ops::scale(g, inner_lr)?))?;
        }
        Ok(current)
    } else {
        let mut current = theta.snapshot();
        for step in 0..steps {
            let graph = Graph::new();
            let leaves = current.tracked_in(&graph);
            let loss = loss_fn(&leaves)?;
            if !loss.item()?.is_finite() {
                return Err(Error::Divergence { step });
            }
            let grads = backward(&loss, &leaves, false)?;
            current = current.add_scaled(&grads.snapshot(), -inner_lr)?;
        }
        Ok(current)
    }
}

/// Inner update on a support set: k steps of full-batch cross-entropy
/// descent. `tracked` requests the differentiable (second-order) path; it is
/// ignored when the config is first-order, matching the contract that
/// first-order updates detach per step.
pub fn inner_update(
    theta: &ParamSet,
    support_x: &Tensor,
    support_y: &[usize],
    spec: &ModelSpec,
    cfg: &InnerLoopConfig,
    tracked: bool,
) -> Result<ParamSet> {
    cfg.validate()?;
    let retain = tracked && !cfg.first_order;
    inner_update_fn(theta, cfg.steps, cfg.inner_lr, retain, |p| {
        nn::cross_entropy(&nn::predict(p, spec, support_x)?, support_y)
    })
}

/// Per-episode parameter view. With a shared classifier head, the stored
/// `[feat]` vector is tiled into the full `[feat, classes]` matrix so the
/// inner loop can untie the class columns; the tiling is an op on the tape,
/// so meta-gradients flow back to the single vector.
pub fn expand_task_params(theta: &ParamSet, spec: &ModelSpec) -> Result<ParamSet> {
    if !spec.shared_head {
        return Ok(theta.clone());
    }
    theta.map_values_named(|name, t| {
        if name == "head.w" {
            match t.shape() {
                [feat] => {
                    let col = ops::reshape(t, &[*feat, 1])?;
                    let ones = Tensor::filled(&[1, spec.num_classes], 1.0);
                    ops::matmul(&col, &ones)
                }
                other => Err(Error::invalid_shape("expand_task_params", other, &[0])),
            }
        } else {
            Ok(t.clone())
        }
    })
}

/// Adjoint of [`expand_task_params`] on gradients: column-tiled head
/// gradients collapse back to the single vector by summing over classes.
pub fn collapse_task_grads(grads: &ParamSet, spec: &ModelSpec) -> Result<ParamSet> {
    if !spec.shared_head {
        return Ok(grads.clone());
    }
    grads.map_values_named(|name, t| {
        if name == "head.w" {
            ops::row_sum(&t.detach())
        } else {
            Ok(t.detach())
        }
    })
}
