//! Thread-local reverse-mode tape.
//!
//! One tape at a time per thread. Ops record nodes only while a tape is
//! active and at least one input participates; otherwise they are plain
//! evaluations. Backward consumes the tape in strict reverse topological
//! order (node index order, since the tape is append-only).

use std::cell::RefCell;

use crate::ops;
use crate::tensor::{Tensor, TensorError};

/// Identifies a node on a specific tape generation. Stale ids (from an
/// earlier, already-consumed tape) never alias nodes of a later one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapeId {
    pub(crate) gen: u64,
    pub(crate) index: usize,
}

type BackpropFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    parents: Vec<TapeId>,
    /// Maps the upstream gradient of this node's output to gradients for
    /// each parent, in `parents` order. Leaves have no parents.
    backprop: BackpropFn,
}

struct Tape {
    gen: u64,
    nodes: Vec<Node>,
}

thread_local! {
    static ACTIVE: RefCell<Option<Tape>> = const { RefCell::new(None) };
    static GENERATION: RefCell<u64> = const { RefCell::new(0) };
}

/// Begin recording. Errors if a tape is already active on this thread.
pub fn start_recording() -> crate::Result<()> {
    ACTIVE.with(|a| {
        let mut a = a.borrow_mut();
        if a.is_some() {
            return Err(TensorError::Tape(
                "a tape is already active on this thread".into(),
            ));
        }
        let gen = GENERATION.with(|g| {
            let mut g = g.borrow_mut();
            *g += 1;
            *g
        });
        *a = Some(Tape {
            gen,
            nodes: Vec::new(),
        });
        Ok(())
    })
}

pub fn is_recording() -> bool {
    ACTIVE.with(|a| a.borrow().is_some())
}

/// Drop the active tape without running backward.
pub fn abandon() {
    ACTIVE.with(|a| *a.borrow_mut() = None);
}

/// Register a leaf tensor on the active tape. The tensor must have been
/// created with `requires_grad`; errors if no tape is active.
pub fn watch(t: &mut Tensor) -> crate::Result<()> {
    if !t.requires_grad() {
        return Err(TensorError::Tape(
            "watch called on a tensor without requires_grad".into(),
        ));
    }
    ACTIVE.with(|a| {
        let mut a = a.borrow_mut();
        let tape = a
            .as_mut()
            .ok_or_else(|| TensorError::Tape("watch called with no active tape".into()))?;
        let id = TapeId {
            gen: tape.gen,
            index: tape.nodes.len(),
        };
        tape.nodes.push(Node {
            parents: Vec::new(),
            backprop: Box::new(|_| Vec::new()),
        });
        t.tape_id = Some(id);
        Ok(())
    })
}

/// Record a node for an op result. Returns the id to stamp on the output,
/// or `None` when not recording / no input participates.
pub(crate) fn record(parents: &[Option<TapeId>], backprop: BackpropFn) -> Option<TapeId> {
    ACTIVE.with(|a| {
        let mut a = a.borrow_mut();
        let tape = a.as_mut()?;
        let live: Vec<TapeId> = parents
            .iter()
            .flatten()
            .filter(|id| id.gen == tape.gen)
            .copied()
            .collect();
        if live.is_empty() {
            return None;
        }
        // Positions of live parents within the op's parent list, so backward
        // can route the right sub-gradient to each.
        let routing: Vec<usize> = parents
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p, Some(id) if id.gen == tape.gen))
            .map(|(i, _)| i)
            .collect();
        let wrapped: BackpropFn = Box::new(move |g| {
            let all = backprop(g);
            routing.iter().map(|&i| all[i].clone()).collect()
        });
        let id = TapeId {
            gen: tape.gen,
            index: tape.nodes.len(),
        };
        tape.nodes.push(Node {
            parents: live,
            backprop: wrapped,
        });
        Some(id)
    })
}

/// Gradient map produced by [`backward`]. Lookup is by tensor identity via
/// its tape id; tensors from other tapes return `None`.
pub struct Gradients {
    gen: u64,
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        match t.tape_id {
            Some(id) if id.gen == self.gen => self.by_node.get(id.index)?.as_ref(),
            _ => None,
        }
    }
}

/// Run reverse accumulation from a scalar loss. The active tape is consumed.
///
/// Every watched tensor reachable from `loss` has an entry in the returned
/// map with the same shape as the tensor.
pub fn backward(loss: &Tensor) -> crate::Result<Gradients> {
    if !loss.is_scalar() {
        return Err(TensorError::NotScalar {
            op: "backward",
            shape: loss.shape().to_vec(),
        });
    }
    let tape = ACTIVE
        .with(|a| a.borrow_mut().take())
        .ok_or_else(|| TensorError::Tape("backward called with no active tape".into()))?;
    let loss_id = match loss.tape_id {
        Some(id) if id.gen == tape.gen => id,
        _ => {
            return Err(TensorError::Tape(
                "loss tensor is not on the active tape".into(),
            ))
        }
    };

    let mut grads: Vec<Option<Tensor>> = (0..tape.nodes.len()).map(|_| None).collect();
    grads[loss_id.index] = Some(Tensor::scalar(1.0));

    for index in (0..tape.nodes.len()).rev() {
        let Some(g) = grads[index].clone() else {
            continue;
        };
        let node = &tape.nodes[index];
        if node.parents.is_empty() {
            continue;
        }
        let parent_grads = (node.backprop)(&g);
        debug_assert_eq!(parent_grads.len(), node.parents.len());
        for (pid, pg) in node.parents.iter().zip(parent_grads) {
            match &mut grads[pid.index] {
                Some(acc) => ops::accumulate(acc, &pg),
                slot @ None => *slot = Some(pg),
            }
        }
    }

    Ok(Gradients {
        gen: tape.gen,
        by_node: grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn single_active_tape_enforced() {
        start_recording().unwrap();
        assert!(start_recording().is_err());
        abandon();
        assert!(!is_recording());
    }

    #[test]
    fn backward_requires_scalar() {
        start_recording().unwrap();
        let mut x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        watch(&mut x).unwrap();
        let y = ops::scale(&x, 2.0);
        assert!(matches!(
            backward(&y),
            Err(TensorError::NotScalar { .. })
        ));
        abandon();
    }

    #[test]
    fn sum_gradient_is_ones() {
        start_recording().unwrap();
        let mut x = Tensor::param(&[2, 3], vec![1.0; 6]).unwrap();
        watch(&mut x).unwrap();
        let loss = ops::sum_all(&x);
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0; 6]);
        assert!(!is_recording());
    }

    #[test]
    fn reused_operand_accumulates() {
        // loss = sum(x * x) => grad = 2x
        start_recording().unwrap();
        let mut x = Tensor::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        watch(&mut x).unwrap();
        let sq = ops::mul(&x, &x).unwrap();
        let loss = ops::sum_all(&sq);
        let grads = backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn stale_ids_do_not_alias_new_tapes() {
        start_recording().unwrap();
        let mut x = Tensor::param(&[1], vec![2.0]).unwrap();
        watch(&mut x).unwrap();
        let loss = ops::sum_all(&x);
        let g1 = backward(&loss).unwrap();
        assert!(g1.get(&x).is_some());

        // New tape, x not watched: its stale id must not resolve.
        start_recording().unwrap();
        let mut y = Tensor::param(&[1], vec![3.0]).unwrap();
        watch(&mut y).unwrap();
        let loss2 = ops::sum_all(&y);
        let g2 = backward(&loss2).unwrap();
        assert!(g2.get(&x).is_none());
        assert!(g2.get(&y).is_some());
    }
}
