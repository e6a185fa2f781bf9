use std::collections::{HashMap, HashSet};

use super::ops::{backward_node, GradStore};
use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Gradients of a scalar with respect to the differentiable leaves of its graph.
pub struct Gradients<T: Scalar> {
    by_id: HashMap<u64, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, leaf: &Tensor<T>) -> Option<&Tensor<T>> {
        self.by_id.get(&leaf.id())
    }

    /// Gradient for `leaf`, or zeros of its shape when the loss never touched it.
    pub fn wrt(&self, leaf: &Tensor<T>) -> Tensor<T> {
        match self.get(leaf) {
            Some(g) => g.clone(),
            None => Tensor::zeros(leaf.shape()).expect("leaf has a valid shape"),
        }
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// Nodes reachable from `root` through differentiable edges, parents before children.
fn topo_order<T: Scalar>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // (node, children pushed?)
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        for p in t.0.op.parents().into_iter().rev() {
            if p.requires_grad() && !seen.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

/// Reverse-mode sweep from a single-element `loss`.
pub fn backward<T: Scalar>(loss: &Tensor<T>) -> Result<Gradients<T>> {
    if loss.numel() != 1 {
        return shape_err(format!("backward needs a scalar loss, got shape {:?}", loss.shape()));
    }
    let mut by_id = HashMap::new();
    if !loss.requires_grad() {
        return Ok(Gradients { by_id });
    }
    let order = topo_order(loss);
    let mut store = GradStore { bufs: HashMap::new() };
    store.bufs.insert(loss.id(), vec![T::one()]);
    for node in order.iter().rev() {
        let Some(g) = store.bufs.remove(&node.id()) else { continue };
        if node.is_leaf() {
            let grad = Tensor::from_vec(node.shape(), g).expect("gradient matches leaf shape");
            by_id.insert(node.id(), grad);
        } else {
            backward_node(&node.0.op, node.shape(), &g, &mut store);
        }
    }
    Ok(Gradients { by_id })
}
