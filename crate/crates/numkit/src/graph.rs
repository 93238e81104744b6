//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. Each
//! node keeps its value and, when any input needs a gradient, a closure that
//! maps the node's output gradient to gradients of its inputs. Calling
//! [`Graph::backward`] replays the tape in reverse.
//!
//! Parameters live outside the graph in a [`ParamStore`]; [`Graph::param`]
//! copies a parameter in as a leaf and remembers the mapping so gradients can
//! be routed back with [`Graph::accumulate_param_grads`].

use std::collections::BTreeMap;

use crate::error::{NumError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<R> {
    pub name: String,
    pub value: Tensor<R>,
    pub trainable: bool,
}

/// Named, ordered collection of model parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<R> {
    params: Vec<Param<R>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<R>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name `{name}`");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value, trainable });
        id
    }

    pub fn get(&self, id: ParamId) -> &Param<R> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<R> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<R> {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<R>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<R>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.grad = None;
        }
    }

    /// Sets every parameter value to zero.
    pub fn zero_values(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|x| *x = R::zero());
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.value.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = R::lit(max_norm / norm);
            for p in &mut self.params {
                if let Some(g) = p.value.grad.as_mut() {
                    g.iter_mut().for_each(|x| *x *= s);
                }
            }
        }
        norm
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Everything a backward closure can see.
pub struct BackCtx<'a, R> {
    /// Gradient flowing into this node's output.
    pub grad: &'a [R],
    /// This node's forward value.
    pub value: &'a Tensor<R>,
    /// Forward values of the inputs, in the order they were given.
    pub inputs: &'a [&'a Tensor<R>],
    /// Which inputs need a gradient.
    pub needs: &'a [bool],
}

pub type Backward<R> = Box<dyn Fn(&BackCtx<'_, R>) -> Vec<Option<Vec<R>>>>;

struct Node<R> {
    value: Tensor<R>,
    parents: Vec<Var>,
    backward: Option<Backward<R>>,
    requires_grad: bool,
}

pub struct Graph<R> {
    nodes: Vec<Node<R>>,
    grads: Vec<Option<Vec<R>>>,
    param_vars: BTreeMap<ParamId, Var>,
    names: BTreeMap<Var, String>,
    grad_enabled: bool,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_vars: BTreeMap::new(),
            names: BTreeMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph that records values only; no backward closures are kept.
    pub fn inference() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node<R>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
        })
    }

    /// Leaf that collects a gradient (used for input sensitivity checks).
    pub fn leaf(&mut self, value: Tensor<R>) -> Var {
        let rg = self.grad_enabled;
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: rg,
        })
    }

    /// Brings a stored parameter onto the tape. Repeated calls for the same id
    /// return the same node.
    pub fn param(&mut self, store: &ParamStore<R>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        let rg = self.grad_enabled && p.trainable;
        let v = self.push(Node {
            value: p.value.clone(),
            parents: Vec::new(),
            backward: None,
            requires_grad: rg,
        });
        self.param_vars.insert(id, v);
        self.names.insert(v, p.name.clone());
        v
    }

    pub fn set_name(&mut self, v: Var, name: impl Into<String>) {
        self.names.insert(v, name.into());
    }

    /// Human-readable name of a node, for error messages.
    pub fn name_of(&self, v: Var) -> String {
        self.names.get(&v).cloned().unwrap_or_else(|| format!("node#{}", v.0))
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a node computed outside the graph together with its vector-
    /// Jacobian product. This is how every op, built-in or external, is
    /// added to the tape.
    pub fn custom<F>(&mut self, inputs: &[Var], value: Tensor<R>, backward: F) -> Var
    where
        F: Fn(&BackCtx<'_, R>) -> Vec<Option<Vec<R>>> + 'static,
    {
        let rg = self.grad_enabled && inputs.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Node {
            value,
            parents: inputs.to_vec(),
            backward: if rg { Some(Box::new(backward)) } else { None },
            requires_grad: rg,
        })
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(NumError::Contract(format!(
                "backward requires a scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![R::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = self.grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<R>> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
            let ctx = BackCtx {
                grad: &grad,
                value: &node.value,
                inputs: &inputs,
                needs: &needs,
            };
            let pgrads = backward(&ctx);
            debug_assert_eq!(pgrads.len(), node.parents.len());
            for (p, g) in node.parents.iter().zip(pgrads) {
                let Some(g) = g else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), self.nodes[p.0].value.numel());
                match &mut self.grads[p.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    slot => *slot = Some(g),
                }
            }
            self.grads[i] = Some(grad);
        }
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[R]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds this graph's parameter gradients into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<R>) {
        for (&id, &v) in &self.param_vars {
            let Some(g) = self.grad(v) else { continue };
            let p = store.get_mut(id);
            match &mut p.value.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
                slot => *slot = Some(g.to_vec()),
            }
        }
    }
}
