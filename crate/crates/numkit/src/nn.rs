//! Parameterized layers built from graph ops.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::ops::{ConvSpec, GruVars};
use crate::real::Real;
use crate::tensor::Tensor;

pub fn uniform<R: Real>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<R> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| R::lit(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape, data).expect("positive shape")
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Real>(store: &mut ParamStore<R>, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform(&[d_in, d_out], bound, rng), true);
        let b = store.add(format!("{name}.b"), uniform(&[d_out], bound, rng), true);
        Linear { w, b, d_in, d_out }
    }

    /// `x[N×d_in] → [N×d_out]`
    pub fn forward<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: ConvSpec,
}

impl Conv1d {
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        spec: ConvSpec,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in / spec.groups * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.add(
            format!("{name}.w"),
            uniform(&[c_out, c_in / spec.groups, kernel], bound, rng),
            true,
        );
        let b = store.add(format!("{name}.b"), uniform(&[c_out], bound, rng), true);
        Conv1d { w, b, spec }
    }

    /// `x[C_in×T] → [C_out×T/stride]`
    pub fn forward<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv1d(x, w, Some(b), self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<R: Real>(store: &mut ParamStore<R>, name: &str, channels: usize, groups: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[channels], R::one()), true);
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true);
        GroupNorm { gamma, beta, groups }
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.group_norm(x, self.groups, gamma, beta)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<R: Real>(store: &mut ParamStore<R>, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[dim], R::one()), true);
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]), true);
        LayerNorm { gamma, beta }
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        vocab: usize,
        dim: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let table = store.add(
            format!("{name}.table"),
            uniform(&[vocab, dim], scale * 3f64.sqrt(), rng),
            true,
        );
        Embedding { table, vocab, dim }
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, ids: &[usize]) -> Result<Var> {
        let t = g.param(store, self.table);
        g.embedding(t, ids)
    }
}

/// One GRU direction.
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub d_in: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Real>(store: &mut ParamStore<R>, name: &str, d_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let h3 = 3 * hidden;
        Gru {
            w_ih: store.add(format!("{name}.w_ih"), uniform(&[d_in, h3], bound, rng), true),
            w_hh: store.add(format!("{name}.w_hh"), uniform(&[hidden, h3], bound, rng), true),
            b_ih: store.add(format!("{name}.b_ih"), uniform(&[h3], bound, rng), true),
            b_hh: store.add(format!("{name}.b_hh"), uniform(&[h3], bound, rng), true),
            d_in,
            hidden,
        }
    }

    pub fn vars<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>) -> GruVars {
        GruVars {
            w_ih: g.param(store, self.w_ih),
            w_hh: g.param(store, self.w_hh),
            b_ih: g.param(store, self.b_ih),
            b_hh: g.param(store, self.b_hh),
        }
    }

    /// `x[T×d_in] → [T×hidden]`, starting from zeros unless `h0` is given.
    pub fn forward<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, x: Var, h0: Option<Var>) -> Result<Var> {
        let p = self.vars(g, store);
        let h0 = match h0 {
            Some(h) => h,
            None => g.constant(Tensor::zeros(&[1, self.hidden])),
        };
        g.gru_sequence(x, h0, p)
    }

    /// Eager single step on raw parameter values.
    pub fn step_eager<R: Real>(&self, store: &ParamStore<R>, x: &[R], h: &[R]) -> Vec<R> {
        crate::kernels::gru_cell(
            x,
            h,
            store.value(self.w_ih).data(),
            store.value(self.w_hh).data(),
            store.value(self.b_ih).data(),
            store.value(self.b_hh).data(),
        )
    }
}

/// Bidirectional GRU: forward and time-reversed passes concatenated per step.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub fwd: Gru,
    pub bwd: Gru,
}

impl BiGru {
    pub fn new<R: Real>(store: &mut ParamStore<R>, name: &str, d_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        BiGru {
            fwd: Gru::new(store, &format!("{name}.fwd"), d_in, hidden, rng),
            bwd: Gru::new(store, &format!("{name}.bwd"), d_in, hidden, rng),
        }
    }

    /// `x[T×d_in] → [T×2·hidden]`
    pub fn forward<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, x: Var) -> Result<Var> {
        let f = self.fwd.forward(g, store, x, None)?;
        let xr = g.reverse_rows(x)?;
        let b = self.bwd.forward(g, store, xr, None)?;
        let b = g.reverse_rows(b)?;
        g.concat_cols(&[f, b])
    }
}
