//! Reverse-mode gradient computation.
//!
//! Backward rules are written in terms of ordinary tensor ops, so with
//! `create_graph` the returned gradients are themselves differentiable.

use std::collections::{HashMap, HashSet};

use crate::element::Element;
use crate::tensor::{with_grad_enabled, Tensor};

/// Gradients keyed by tensor identity.
#[derive(Default)]
pub struct Gradients<T: Element> {
    grads: HashMap<u64, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        self.grads.get(&t.id())
    }

    pub fn remove(&mut self, t: &Tensor<T>) -> Option<Tensor<T>> {
        self.grads.remove(&t.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Nodes reachable from `root` through recorded ops, in topological order
/// (inputs before outputs).
fn topo_order<T: Element>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    // iterative post-order DFS
    let mut stack: Vec<(Tensor<T>, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((node, child)) = stack.pop() {
        let inputs = node.0.grad_fn.as_ref().map(|g| g.inputs.as_slice()).unwrap_or(&[]);
        if child < inputs.len() {
            let next = inputs[child].clone();
            stack.push((node, child + 1));
            if next.requires_grad() && visited.insert(next.id()) {
                stack.push((next, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

fn run_backward<T: Element>(
    root: &Tensor<T>,
    seed: Tensor<T>,
    targets: Option<&HashSet<u64>>,
    create_graph: bool,
) -> HashMap<u64, Tensor<T>> {
    let order = topo_order(root);
    // which nodes lead to a requested tensor
    let mut relevant: HashSet<u64> = HashSet::new();
    for node in &order {
        let is_target = match targets {
            Some(t) => t.contains(&node.id()),
            None => node.is_leaf(),
        };
        let feeds = node
            .0
            .grad_fn
            .as_ref()
            .map(|g| g.inputs.iter().any(|i| relevant.contains(&i.id())))
            .unwrap_or(false);
        if is_target || feeds {
            relevant.insert(node.id());
        }
    }
    let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
    let mut result: HashMap<u64, Tensor<T>> = HashMap::new();
    if !relevant.contains(&root.id()) {
        return result;
    }
    pending.insert(root.id(), seed);
    with_grad_enabled(create_graph, || {
        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else { continue };
            let wanted = match targets {
                Some(t) => t.contains(&node.id()),
                None => node.is_leaf(),
            };
            if let Some(gf) = &node.0.grad_fn {
                let needs: Vec<bool> = gf
                    .inputs
                    .iter()
                    .map(|i| i.requires_grad() && relevant.contains(&i.id()))
                    .collect();
                if needs.iter().any(|&b| b) {
                    let input_grads = (gf.backward)(node, &grad, &gf.inputs, &needs);
                    debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{} backward arity", gf.name);
                    for ((input, g), need) in gf.inputs.iter().zip(input_grads).zip(&needs) {
                        let (Some(g), true) = (g, *need) else { continue };
                        debug_assert_eq!(g.shape(), input.shape(), "{} backward shape", gf.name);
                        let acc = match pending.remove(&input.id()) {
                            Some(prev) => prev.add(&g),
                            None => g,
                        };
                        pending.insert(input.id(), acc);
                    }
                }
            }
            if wanted {
                result.insert(node.id(), grad);
            }
        }
    });
    result
}

impl<T: Element> Tensor<T> {
    /// Gradients of this scalar with respect to every trainable leaf in its graph.
    pub fn backward(&self) -> Gradients<T> {
        assert_eq!(self.numel(), 1, "backward() needs a scalar, got {:?}", self.shape());
        let seed = Tensor::ones(self.shape());
        Gradients { grads: run_backward(self, seed, None, false) }
    }
}

/// Gradients of `output` (seeded with ones, i.e. of `output.sum()`) with
/// respect to `wrt`. With `create_graph`, the results carry their own graph so
/// they can be differentiated again.
///
/// Tensors in `wrt` that `output` does not depend on get `None`.
pub fn grad<T: Element>(output: &Tensor<T>, wrt: &[&Tensor<T>], create_graph: bool) -> Vec<Option<Tensor<T>>> {
    let targets: HashSet<u64> = wrt.iter().map(|t| t.id()).collect();
    let seed = Tensor::ones(output.shape());
    let mut grads = run_backward(output, seed, Some(&targets), create_graph);
    wrt.iter().map(|t| grads.remove(&t.id())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let a = Tensor::<f64>::param(vec![3.0], &[1]);
        let b = Tensor::<f64>::param(vec![4.0], &[1]);
        let y = a.mul(&b).add(&a).sum_all();
        let g = y.backward();
        assert_eq!(g.get(&a).unwrap().item(), 5.0);
        assert_eq!(g.get(&b).unwrap().item(), 3.0);
    }

    #[test]
    fn second_derivative_through_create_graph() {
        // y = x^3, dy/dx = 3x^2, d2y/dx2 = 6x
        let x = Tensor::<f64>::param(vec![2.0], &[1]);
        let y = x.mul(&x).mul(&x).sum_all();
        let dx = grad(&y, &[&x], true).remove(0).unwrap();
        assert_eq!(dx.item(), 12.0);
        let d2 = grad(&dx.sum_all(), &[&x], false).remove(0).unwrap();
        assert_eq!(d2.item(), 12.0);
    }

    #[test]
    fn unrelated_input_gets_none() {
        let a = Tensor::<f64>::param(vec![1.0], &[1]);
        let b = Tensor::<f64>::param(vec![1.0], &[1]);
        let y = a.mul_scalar(2.0).sum_all();
        let g = grad(&y, &[&a, &b], false);
        assert!(g[0].is_some() && g[1].is_none());
    }

    #[test]
    fn no_grad_records_nothing() {
        let a = Tensor::<f64>::param(vec![1.0], &[1]);
        let y = crate::no_grad(|| a.mul_scalar(2.0));
        assert!(!y.requires_grad());
    }
}
