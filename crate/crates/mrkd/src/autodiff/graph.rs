//! The reverse-mode tape.

use std::collections::HashMap;

use super::tensor::{Element, Tensor};
use super::AutodiffError;

/// Stable identity of a trainable parameter across batches. Models hand
/// these out when they are built; gradient lookup and optimizer state are
/// keyed by them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub u64);

/// Handle to a node on one graph. Only meaningful for the graph that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) id: usize,
}

/// Turns a node's output gradient into per-parent gradients. Receives
/// every node value on the tape so closures capture indices, not clones.
pub(crate) type BackwardFn<E> =
    Box<dyn FnOnce(&[Tensor<E>], &Tensor<E>) -> Vec<Option<Tensor<E>>> + Send>;

struct Meta {
    op: &'static str,
    parents: Vec<usize>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// A single-use computation tape. Append nodes with the op methods, call
/// [`Graph::backward`] once on a scalar root.
pub struct Graph<E: Element> {
    values: Vec<Tensor<E>>,
    metas: Vec<Meta>,
    backwards: Vec<Option<BackwardFn<E>>>,
    spent: bool,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            metas: Vec::new(),
            backwards: Vec::new(),
            spent: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// A node that never receives gradient (inputs, targets, teachers).
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.append("constant", value, Vec::new(), None, false, None)
    }

    /// A trainable leaf; its gradient is retrievable by `id` after
    /// backward.
    pub fn leaf(&mut self, value: Tensor<E>, id: ParamId) -> Var {
        self.append("leaf", value, Vec::new(), None, true, Some(id))
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.values[v.id]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.metas[v.id].requires_grad
    }

    fn append(
        &mut self,
        op: &'static str,
        value: Tensor<E>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<E>>,
        requires_grad: bool,
        param: Option<ParamId>,
    ) -> Var {
        let id = self.values.len();
        self.values.push(value);
        self.metas.push(Meta {
            op,
            parents,
            requires_grad,
            param,
        });
        self.backwards.push(backward);
        Var { id }
    }

    /// Append an op node. Checks output finiteness; drops the backward
    /// closure when no parent is tracked.
    pub(crate) fn push(
        &mut self,
        op: &'static str,
        value: Tensor<E>,
        parents: Vec<Var>,
        backward: Option<BackwardFn<E>>,
    ) -> Result<Var, AutodiffError> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op });
        }
        let ids: Vec<usize> = parents.iter().map(|v| v.id).collect();
        let requires_grad = ids.iter().any(|&p| self.metas[p].requires_grad);
        let backward = if requires_grad { backward } else { None };
        Ok(self.append(op, value, ids, backward, requires_grad, None))
    }

    /// Reverse pass from a scalar root. Consumes the tape's closures, so
    /// it runs at most once per graph.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<E>, AutodiffError> {
        if self.spent {
            return Err(AutodiffError::Parameter(
                "backward already ran on this graph".into(),
            ));
        }
        self.spent = true;
        if self.values[root.id].len() != 1 {
            return Err(AutodiffError::Parameter(format!(
                "backward needs a scalar root, got shape {:?} from {}",
                self.values[root.id].shape(),
                self.metas[root.id].op
            )));
        }

        let mut grads: Vec<Option<Tensor<E>>> = (0..self.values.len()).map(|_| None).collect();
        if self.metas[root.id].requires_grad {
            grads[root.id] = Some(Tensor::scalar(E::ONE));
        }

        let values = &self.values;
        let metas = &self.metas;
        let backwards = &mut self.backwards;

        for id in (0..=root.id).rev() {
            if grads[id].is_none() {
                continue;
            }
            let Some(bwd) = backwards[id].take() else {
                continue;
            };
            let gout = grads[id].take().expect("checked above");
            let parent_grads = bwd(values, &gout);
            grads[id] = Some(gout);
            debug_assert_eq!(parent_grads.len(), metas[id].parents.len());
            for (pg, &pid) in parent_grads.into_iter().zip(&metas[id].parents) {
                let Some(pg) = pg else { continue };
                if !metas[pid].requires_grad {
                    continue;
                }
                if pg.shape() != values[pid].shape() {
                    return Err(AutodiffError::Shape {
                        op: metas[id].op,
                        detail: format!(
                            "backward produced gradient shape {:?} for a parent of shape {:?}",
                            pg.shape(),
                            values[pid].shape()
                        ),
                    });
                }
                match &mut grads[pid] {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let mut params = HashMap::new();
        for (id, meta) in metas.iter().enumerate() {
            if let Some(pid) = meta.param {
                params.insert(pid, id);
            }
        }
        Ok(Gradients { grads, params })
    }
}

/// Gradients from one backward pass.
pub struct Gradients<E: Element> {
    grads: Vec<Option<Tensor<E>>>,
    params: HashMap<ParamId, usize>,
}

impl<E: Element> Gradients<E> {
    /// Gradient of the root with respect to the named parameter. `None`
    /// when the loss did not depend on it.
    pub fn for_param(&self, id: ParamId) -> Option<&Tensor<E>> {
        self.params.get(&id).and_then(|&v| self.grads[v].as_ref())
    }

    /// Gradient with respect to any tracked node.
    pub fn for_var(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }
}
