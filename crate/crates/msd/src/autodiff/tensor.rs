//! Dense row-major tensors of 64-bit reals.
//!
//! A tensor is either a plain value or *tracked*: recorded as a node on a
//! [`Graph`] so gradients can flow through it. Scalars have the empty shape
//! `[]`. Data buffers are shared (`Arc`), so cloning and detaching are cheap.

use std::sync::Arc;

use crate::autodiff::graph::{Graph, NodeId};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct Tracked {
    pub graph: Graph,
    pub id: NodeId,
    pub generation: u64,
}

impl Tracked {
    pub fn check_fresh(&self) -> Result<()> {
        self.graph.check_generation(self.generation)
    }
}

#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    tracked: Option<Tracked>,
}

pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Builds an untracked tensor, checking that the data length matches the
    /// shape product.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if numel_of(&shape) != data.len() {
            return Err(Error::invalid_shape("from_vec", &shape, &[data.len()]));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            tracked: None,
        })
    }

    /// Scalar tensor with the empty shape.
    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: Vec::new(),
            data: Arc::new(vec![value]),
            tracked: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; numel_of(shape)]),
            tracked: None,
        }
    }

    pub(crate) fn untracked(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
            tracked: None,
        }
    }

    pub(crate) fn untracked_shared(shape: Vec<usize>, data: Arc<Vec<f64>>) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            shape,
            data,
            tracked: None,
        }
    }

    pub(crate) fn tracked(
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
        graph: Graph,
        id: NodeId,
        generation: u64,
    ) -> Tensor {
        Tensor {
            shape,
            data,
            tracked: Some(Tracked { graph, id, generation }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        self.data.clone()
    }

    pub fn is_tracked(&self) -> bool {
        self.tracked.is_some()
    }

    pub(crate) fn tracked_ref(&self) -> Option<&Tracked> {
        self.tracked.as_ref()
    }

    /// Same values, no graph membership.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            tracked: None,
        }
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_scalar_shaped(&self) -> bool {
        self.numel() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Exact bit-for-bit equality of shape and values.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
