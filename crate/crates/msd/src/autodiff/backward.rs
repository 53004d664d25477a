//! Reverse-mode differentiation over the tape.
//!
//! The sweep walks the root's ancestors once, newest to oldest, accumulating
//! vector-Jacobian products. Each backward rule is written in terms of the
//! public operators, so with `create_graph` the produced gradients are
//! recorded on the same tape and can be differentiated again — that is the
//! whole second-order story.

use crate::autodiff::graph::{Node, NodeId};
use crate::autodiff::ops::{self, OpKind};
use crate::autodiff::params::ParamSet;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients of a scalar `root` with respect to `wrt` tensors.
///
/// Entries of `wrt` that are untracked or unreachable from `root` get zero
/// gradients. With `create_graph`, the returned tensors are tracked and a
/// further [`grad_tensors`] through them yields second-order derivatives.
pub fn grad_tensors(root: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if !root.is_scalar_shaped() {
        return Err(Error::Contract(format!(
            "backward root must be scalar-shaped, got {:?}",
            root.shape()
        )));
    }
    let tracked = root
        .tracked_ref()
        .ok_or_else(|| Error::Contract("backward root is not tracked".into()))?;
    tracked.check_fresh()?;
    for t in wrt {
        if let Some(tr) = t.tracked_ref() {
            tr.check_fresh()?;
            if !tr.graph.same_graph(&tracked.graph) {
                return Err(Error::Contract(
                    "wrt tensor belongs to a different graph than the root".into(),
                ));
            }
        }
    }

    let graph = tracked.graph.clone();
    let root_id = tracked.id;
    let nodes = graph.snapshot_nodes();

    // Mark the root's ancestors; only they can carry gradient.
    let mut reachable = vec![false; nodes.len()];
    let mut stack = vec![root_id];
    reachable[root_id] = true;
    while let Some(id) = stack.pop() {
        for &p in &nodes[id].parents {
            if !reachable[p] {
                reachable[p] = true;
                stack.push(p);
            }
        }
    }

    let remake = |id: NodeId| -> Tensor {
        let n = &nodes[id];
        if create_graph {
            Tensor::tracked(
                n.shape.clone(),
                n.value.clone(),
                graph.clone(),
                id,
                graph.generation(),
            )
        } else {
            Tensor::untracked_shared(n.shape.clone(), n.value.clone())
        }
    };

    let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
    grads[root_id] = Some(Tensor::filled(root.shape(), 1.0));

    for id in (0..=root_id).rev() {
        if !reachable[id] {
            continue;
        }
        let g = match grads[id].as_ref() {
            Some(g) => g.clone(),
            None => continue,
        };
        let node = &nodes[id];
        let contribs = vjp(node, id, &g, &remake)?;
        for (parent, contrib) in contribs {
            grads[parent] = Some(match grads[parent].take() {
                None => contrib,
                Some(acc) => ops::add(&acc, &contrib)?,
            });
        }
    }

    let mut out = Vec::with_capacity(wrt.len());
    for t in wrt {
        let g = t
            .tracked_ref()
            .and_then(|tr| grads[tr.id].clone())
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        out.push(g);
    }
    Ok(out)
}

/// Gradients of `root` with respect to every entry of a parameter set,
/// returned with the same names and shapes.
pub fn backward(root: &Tensor, wrt: &ParamSet, create_graph: bool) -> Result<ParamSet> {
    let tensors: Vec<&Tensor> = wrt.entries().map(|(_, t)| t).collect();
    let grads = grad_tensors(root, &tensors, create_graph)?;
    let mut out = ParamSet::new();
    for ((name, _), g) in wrt.entries().zip(grads) {
        out.push(name.clone(), g)?;
    }
    Ok(out)
}

/// Backward rule dispatch: gradient contributions to each parent of `node`.
fn vjp(
    node: &Node,
    id: NodeId,
    g: &Tensor,
    remake: &dyn Fn(NodeId) -> Tensor,
) -> Result<Vec<(NodeId, Tensor)>> {
    let p = &node.parents;
    let out = match &node.op {
        OpKind::Leaf => Vec::new(),
        OpKind::Add => vec![(p[0], g.clone()), (p[1], g.clone())],
        OpKind::Sub => vec![(p[0], g.clone()), (p[1], ops::neg(g)?)],
        OpKind::Mul => {
            let (a, b) = (remake(p[0]), remake(p[1]));
            vec![(p[0], ops::mul(g, &b)?), (p[1], ops::mul(g, &a)?)]
        }
        OpKind::Div => {
            let b = remake(p[1]);
            let out_t = remake(id);
            let ga = ops::div(g, &b)?;
            let gb = ops::neg(&ops::div(&ops::mul(g, &out_t)?, &b)?)?;
            vec![(p[0], ga), (p[1], gb)]
        }
        OpKind::Neg => vec![(p[0], ops::neg(g)?)],
        OpKind::Scale { factor } => vec![(p[0], ops::scale(g, *factor)?)],
        OpKind::ScaleByScalar => {
            let (t, s) = (remake(p[0]), remake(p[1]));
            vec![(p[0], ops::scale_by(g, &s)?), (p[1], ops::dot(g, &t)?)]
        }
        OpKind::Matmul => {
            let (a, b) = (remake(p[0]), remake(p[1]));
            let ga = ops::matmul(g, &ops::transpose(&b)?)?;
            let gb = ops::matmul(&ops::transpose(&a)?, g)?;
            vec![(p[0], ga), (p[1], gb)]
        }
        OpKind::Transpose => vec![(p[0], ops::transpose(g)?)],
        OpKind::Relu => {
            let mask: Vec<f64> = node
                .value
                .iter()
                .map(|v| if *v > 0.0 { 1.0 } else { 0.0 })
                .collect();
            let mask = Tensor::from_vec(node.shape.clone(), mask)?;
            vec![(p[0], ops::mul(g, &mask)?)]
        }
        OpKind::Exp => vec![(p[0], ops::mul(g, &remake(id))?)],
        OpKind::Sqrt => {
            let out_t = remake(id);
            vec![(p[0], ops::div(g, &ops::scale(&out_t, 2.0)?)?)]
        }
        OpKind::LogSoftmax => {
            let probs = ops::exp(&remake(id))?;
            let row_totals = ops::row_sum(g)?;
            let cols = node.shape[1];
            let correction = ops::mul(&probs, &ops::expand_cols(&row_totals, cols)?)?;
            vec![(p[0], ops::sub(g, &correction)?)]
        }
        OpKind::Sum => {
            let ones = Tensor::filled(&nodes_shape(remake, p[0]), 1.0);
            vec![(p[0], ops::scale_by(&ones, g)?)]
        }
        OpKind::Dot => {
            let (a, b) = (remake(p[0]), remake(p[1]));
            vec![(p[0], ops::scale_by(&b, g)?), (p[1], ops::scale_by(&a, g)?)]
        }
        OpKind::RowSum => {
            let cols = nodes_shape(remake, p[0])[1];
            vec![(p[0], ops::expand_cols(g, cols)?)]
        }
        OpKind::ColSum => {
            let rows = nodes_shape(remake, p[0])[0];
            vec![(p[0], ops::expand_rows(g, rows)?)]
        }
        OpKind::RowDot => {
            let (a, b) = (remake(p[0]), remake(p[1]));
            let cols = a.shape()[1];
            let ge = ops::expand_cols(g, cols)?;
            vec![(p[0], ops::mul(&ge, &b)?), (p[1], ops::mul(&ge, &a)?)]
        }
        OpKind::ExpandCols => vec![(p[0], ops::row_sum(g)?)],
        OpKind::ExpandRows => vec![(p[0], ops::col_sum(g)?)],
        OpKind::Reshape => {
            let shape = nodes_shape(remake, p[0]);
            vec![(p[0], ops::reshape(g, &shape)?)]
        }
        OpKind::Unfold { b, c, h, w } => vec![(p[0], ops::fold(g, *b, *c, *h, *w)?)],
        OpKind::Fold => vec![(p[0], ops::unfold(g)?)],
        OpKind::MeanPool2 { h, w } => vec![(p[0], ops::mean_unpool2(g, *h, *w)?)],
        OpKind::MeanUnpool2 => vec![(p[0], ops::mean_pool2(g)?)],
        OpKind::ChwFromHwc => vec![(p[0], ops::hwc_from_chw(g)?)],
        OpKind::HwcFromChw { b, c, h, w } => {
            vec![(p[0], ops::chw_from_hwc(g, *b, *c, *h, *w)?)]
        }
    };
    Ok(out)
}

fn nodes_shape(remake: &dyn Fn(NodeId) -> Tensor, id: NodeId) -> Vec<usize> {
    remake(id).shape().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::graph::Graph;

    #[test]
    fn square_has_gradient_two_x() {
        let g = Graph::new();
        let x = g.leaf(&Tensor::scalar(3.0));
        let y = ops::mul(&x, &x).unwrap();
        let grads = grad_tensors(&y, &[&x], false).unwrap();
        assert_eq!(grads[0].item().unwrap(), 6.0);
    }

    #[test]
    fn grad_of_grad_of_square_is_two() {
        let g = Graph::new();
        let x = g.leaf(&Tensor::scalar(3.0));
        let y = ops::mul(&x, &x).unwrap();
        let first = grad_tensors(&y, &[&x], true).unwrap().remove(0);
        assert!(first.is_tracked());
        assert_eq!(first.item().unwrap(), 6.0);
        let second = grad_tensors(&first, &[&x], false).unwrap().remove(0);
        assert_eq!(second.item().unwrap(), 2.0);
    }

    #[test]
    fn third_order_of_cube() {
        // y = x^3: y' = 3x^2, y'' = 6x, y''' = 6.
        let g = Graph::new();
        let x = g.leaf(&Tensor::scalar(2.0));
        let y = ops::mul(&ops::mul(&x, &x).unwrap(), &x).unwrap();
        let d1 = grad_tensors(&y, &[&x], true).unwrap().remove(0);
        assert_eq!(d1.item().unwrap(), 12.0);
        let d2 = grad_tensors(&d1, &[&x], true).unwrap().remove(0);
        assert_eq!(d2.item().unwrap(), 12.0);
        let d3 = grad_tensors(&d2, &[&x], false).unwrap().remove(0);
        assert_eq!(d3.item().unwrap(), 6.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let g = Graph::new();
        let x = g.leaf(&Tensor::zeros(&[2]));
        let err = grad_tensors(&x, &[&x], false).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn untracked_root_is_rejected() {
        let x = Tensor::scalar(1.0);
        assert!(matches!(
            grad_tensors(&x, &[&x], false),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn unreachable_wrt_gets_zero_gradient() {
        let g = Graph::new();
        let x = g.leaf(&Tensor::scalar(1.0));
        let z = g.leaf(&Tensor::zeros(&[3]));
        let y = ops::mul(&x, &x).unwrap();
        let grads = grad_tensors(&y, &[&z], false).unwrap();
        assert_eq!(grads[0].data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_is_linear_in_the_root() {
        // backward(a*f + b*g) == a*backward(f) + b*backward(g)
        let g = Graph::new();
        let x = g.leaf(&Tensor::from_vec(vec![2], vec![0.7, -1.3]).unwrap());
        let f = ops::dot(&x, &x).unwrap();
        let h = ops::sum(&ops::relu(&x).unwrap()).unwrap();
        let combo = ops::add(&ops::scale(&f, 2.5).unwrap(), &ops::scale(&h, -0.5).unwrap()).unwrap();
        let gc = grad_tensors(&combo, &[&x], false).unwrap().remove(0);
        let gf = grad_tensors(&f, &[&x], false).unwrap().remove(0);
        let gh = grad_tensors(&h, &[&x], false).unwrap().remove(0);
        for i in 0..2 {
            let expect = 2.5 * gf.data()[i] - 0.5 * gh.data()[i];
            assert!((gc.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_construction_is_bitwise_deterministic() {
        let run = || {
            let g = Graph::new();
            let x = g.leaf(&Tensor::from_vec(vec![3], vec![0.3, -0.2, 1.7]).unwrap());
            let y = ops::sum(&ops::mul(&ops::relu(&x).unwrap(), &x).unwrap()).unwrap();
            let grad = grad_tensors(&y, &[&x], false).unwrap().remove(0);
            (y.item().unwrap().to_bits(), grad.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }
}
