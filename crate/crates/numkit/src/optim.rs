use crate::error::{check_dim, Result};
use crate::graph::ParamStore;
use crate::real::Real;

/// Per-parameter Adam moments and hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<R> {
    pub step: u64,
    pub m: Vec<R>,
    pub v: Vec<R>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<R: Real> AdamState<R> {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            step: 0,
            m: vec![R::zero(); len],
            v: vec![R::zero(); len],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<R: Real>(param: &mut [R], grad: &[R], st: &mut AdamState<R>) -> Result<()> {
    check_dim("adam_step", "gradient length", param.len(), grad.len())?;
    check_dim("adam_step", "first moment length", param.len(), st.m.len())?;
    check_dim("adam_step", "second moment length", param.len(), st.v.len())?;
    st.step += 1;
    let b1 = R::lit(st.beta1);
    let b2 = R::lit(st.beta2);
    let c1 = R::lit(1.0 - st.beta1.powi(st.step as i32));
    let c2 = R::lit(1.0 - st.beta2.powi(st.step as i32));
    let lr = R::lit(st.lr);
    let eps = R::lit(st.eps);
    for i in 0..param.len() {
        let g = grad[i];
        st.m[i] = b1 * st.m[i] + (R::one() - b1) * g;
        st.v[i] = b2 * st.v[i] + (R::one() - b2) * g * g;
        let mhat = st.m[i] / c1;
        let vhat = st.v[i] / c2;
        param[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every trainable parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam<R> {
    pub lr: f64,
    states: Vec<Option<AdamState<R>>>,
}

impl<R: Real> Adam<R> {
    pub fn new(lr: f64) -> Self {
        Adam { lr, states: Vec::new() }
    }

    /// Applies accumulated gradients and clears them.
    pub fn step(&mut self, store: &mut ParamStore<R>) -> Result<()> {
        if self.states.len() < store.len() {
            self.states.resize(store.len(), None);
        }
        let lr = self.lr;
        for (id, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let Some(grad) = p.value.grad.take() else {
                continue;
            };
            let st = self.states[id.index()].get_or_insert_with(|| AdamState::new(grad.len(), lr));
            st.lr = lr;
            adam_step(p.value.data_mut(), &grad, st)?;
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.iter().flatten().map(|s| s.step).max().unwrap_or(0)
    }
}
