//! The computation tape.
//!
//! A [`Graph`] is an append-only list of nodes recorded during the forward
//! pass. Nodes refer to their parents by index, so the tape is topologically
//! ordered by construction. The backward pass (see [`super::backward`]) can
//! append *new* nodes while sweeping old ones, which is what makes gradients
//! themselves differentiable.

use std::sync::{Arc, Mutex};

use crate::autodiff::ops::OpKind;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

pub(crate) type NodeId = usize;

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub op: OpKind,
    pub parents: Vec<NodeId>,
    pub value: Arc<Vec<f64>>,
    pub shape: Vec<usize>,
}

#[derive(Debug)]
struct GraphInner {
    nodes: Vec<Node>,
    generation: u64,
}

/// Shared handle to one computation tape. Cloning the handle does not copy
/// the tape; all clones append to the same node list.
///
/// A graph is intended to live for one task (or one outer step) and be
/// dropped or [`Graph::clear`]ed wholesale afterwards. Tensors recorded on a
/// cleared graph fail with a contract error when used again.
#[derive(Debug, Clone)]
pub struct Graph {
    inner: Arc<Mutex<GraphInner>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            inner: Arc::new(Mutex::new(GraphInner {
                nodes: Vec::new(),
                generation: 0,
            })),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frees all recorded nodes and invalidates every tensor recorded so far.
    pub fn clear(&self) {
        let mut inner = self.inner.lock().unwrap();
        inner.nodes.clear();
        inner.generation += 1;
    }

    /// Records `values` as a tracked leaf on this graph.
    pub fn leaf(&self, values: &Tensor) -> Tensor {
        let data = values.data_arc();
        let shape = values.shape().to_vec();
        let id = self.push(Node {
            op: OpKind::Leaf,
            parents: Vec::new(),
            value: data.clone(),
            shape: shape.clone(),
        });
        Tensor::tracked(shape, data, self.clone(), id, self.generation())
    }

    pub(crate) fn push(&self, node: Node) -> NodeId {
        let mut inner = self.inner.lock().unwrap();
        let id = inner.nodes.len();
        inner.nodes.push(node);
        id
    }

    pub(crate) fn generation(&self) -> u64 {
        self.inner.lock().unwrap().generation
    }

    pub(crate) fn same_graph(&self, other: &Graph) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    /// Clones the node list. Cheap: node values are shared via `Arc`.
    pub(crate) fn snapshot_nodes(&self) -> Vec<Node> {
        self.inner.lock().unwrap().nodes.clone()
    }

    pub(crate) fn check_generation(&self, generation: u64) -> Result<()> {
        if self.generation() != generation {
            return Err(Error::Contract(
                "tensor belongs to a cleared graph generation".into(),
            ));
        }
        Ok(())
    }
}
