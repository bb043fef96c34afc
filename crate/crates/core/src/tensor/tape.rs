use std::collections::BTreeMap;

use super::{Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Selects the backward rule used by nonlinearities.
///
/// `Guided` switches ELU to the guided-backpropagation gate (pass the
/// gradient only where both the forward input and the incoming gradient are
/// positive). Every other rule is unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackwardMode {
    #[default]
    Standard,
    Guided,
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>, &[f64], &mut GradSink<'_>)>;

struct Node {
    shape: Vec<usize>,
    op: &'static str,
    parents: Vec<Var>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Read-only view handed to backward closures.
pub(crate) struct BackwardCtx<'a> {
    values: &'a [Vec<f64>],
    pub(crate) mode: BackwardMode,
}

impl BackwardCtx<'_> {
    pub(crate) fn value(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }
}

/// Gradient accumulator handed to backward closures.
pub(crate) struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f64>>],
    requires: &'a [bool],
    sizes: &'a [usize],
}

impl GradSink<'_> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Mutable gradient buffer for `v`, allocated on first use. `None` when
    /// `v` does not require a gradient.
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.requires[v.0] {
            return None;
        }
        let size = self.sizes[v.0];
        Some(
            self.grads[v.0]
                .get_or_insert_with(|| vec![0.0; size])
                .as_mut_slice(),
        )
    }

    pub(crate) fn accumulate(&mut self, v: Var, g: &[f64]) {
        if let Some(slot) = self.slot(v) {
            for (s, x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }
    }
}

/// Records one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Vec<f64>>,
    grads: Vec<Option<Vec<f64>>>,
    hooks: BTreeMap<String, Var>,
    dropout_masks: Vec<Vec<f64>>,
    backward_done: bool,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("hooks", &self.hooks)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf node holding `tensor`.
    pub fn leaf(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        let Tensor { shape, data } = tensor;
        self.push_raw(shape, data, "leaf", Vec::new(), requires_grad, None)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor, false)
    }

    pub(crate) fn next_var(&self) -> Var {
        Var(self.nodes.len())
    }

    pub(crate) fn requires_any(&self, parents: &[Var]) -> bool {
        parents.iter().any(|p| self.nodes[p.0].requires_grad)
    }

    /// Appends an op result. `requires_grad` is inherited from the parents.
    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: &'static str,
        parents: Vec<Var>,
        backward: BackwardFn,
    ) -> Var {
        let requires = self.requires_any(&parents);
        let backward = if requires { Some(backward) } else { None };
        self.push_raw(shape, data, op, parents, requires, backward)
    }

    fn push_raw(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: &'static str,
        parents: Vec<Var>,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let v = Var(self.nodes.len());
        self.nodes.push(Node {
            shape,
            op,
            parents,
            requires_grad,
            backward,
        });
        self.values.push(data);
        self.grads.push(None);
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    pub fn parents(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].parents
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor {
            shape: self.nodes[v.0].shape.clone(),
            data: self.values[v.0].clone(),
        }
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].shape.clone(),
            data: g.clone(),
        })
    }

    /// Registers `v` under `name` so callers can read its activation and
    /// gradient after the backward pass. Hooked nodes always receive a
    /// gradient, so hook before building downstream ops.
    pub fn hook(&mut self, name: &str, v: Var) {
        self.nodes[v.0].requires_grad = true;
        self.hooks.insert(name.to_string(), v);
    }

    pub fn hooked(&self, name: &str) -> Result<Var> {
        self.hooks
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownHook(name.to_string()))
    }

    pub fn hook_names(&self) -> impl Iterator<Item = &str> {
        self.hooks.keys().map(String::as_str)
    }

    pub(crate) fn record_dropout_mask(&mut self, mask: Vec<f64>) {
        self.dropout_masks.push(mask);
    }

    /// Dropout masks drawn during this forward pass, in call order.
    pub fn dropout_masks(&self) -> &[Vec<f64>] {
        &self.dropout_masks
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_with(loss, BackwardMode::Standard)
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward_with(&mut self, loss: Var, mode: BackwardMode) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let shape = &self.nodes[loss.0].shape;
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape.clone()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::Detached);
        }
        self.backward_done = true;

        let requires: Vec<bool> = self.nodes.iter().map(|n| n.requires_grad).collect();
        let sizes: Vec<usize> = self.values.iter().map(Vec::len).collect();
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(backward) = self.nodes[idx].backward.as_ref() else {
                continue;
            };
            let Some(out_grad) = self.grads[idx].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                values: &self.values,
                mode,
            };
            let mut sink = GradSink {
                grads: &mut self.grads,
                requires: &requires,
                sizes: &sizes,
            };
            backward(&ctx, &out_grad, &mut sink);
            self.grads[idx] = Some(out_grad);
        }
        Ok(())
    }

    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_done = false;
    }
}
