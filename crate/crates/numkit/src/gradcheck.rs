//! Central-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, ParamStore, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many evenly spaced coordinates per tensor.
    pub max_per_tensor: Option<usize>,
    /// Smallest denominator of the relative error. Gradients below it are
    /// judged by their absolute error scaled by `floor`.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_per_tensor: None,
            floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    /// Coordinates whose gradient magnitude fell below the floor.
    pub below_floor: usize,
    /// Coordinates where either estimate was not finite.
    pub non_finite: Vec<(String, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.non_finite.is_empty() && self.max_rel_err < tol
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn rel_err(a: f64, n: f64) -> f64 {
    rel_err_floor(a, n, 1e-8)
}

/// `|a − n| / max(|a|, |n|, floor)`
pub fn rel_err_floor(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the reverse-mode gradient of the scalar built by `f` with a
/// central finite difference, for every trainable parameter in `store`.
pub fn grad_check<F>(store: &mut ParamStore<f64>, mut f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss)?;
    store.zero_grads();
    g.accumulate_param_grads(store);
    let analytic: Vec<Option<Vec<f64>>> = store.iter().map(|(_, p)| p.value.grad.clone()).collect();
    store.zero_grads();

    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::inference();
        let l = f(&mut g, store)?;
        Ok(g.value(l).data()[0])
    };

    let mut rep = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.get(id).trainable {
            continue;
        }
        let n = store.value(id).numel();
        let coords: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        for idx in coords {
            let orig = store.value(id).data()[idx];
            store.get_mut(id).value.data_mut()[idx] = orig + opts.eps;
            let fp = eval(store)?;
            store.get_mut(id).value.data_mut()[idx] = orig - opts.eps;
            let fm = eval(store)?;
            store.get_mut(id).value.data_mut()[idx] = orig;
            let num = (fp - fm) / (2.0 * opts.eps);
            let ana = analytic[id.index()].as_ref().map_or(0.0, |g| g[idx]);
            rep.checked += 1;
            let name = store.get(id).name.clone();
            if !num.is_finite() || !ana.is_finite() {
                rep.non_finite.push((name, idx));
                continue;
            }
            if ana.abs().max(num.abs()) < opts.floor {
                rep.below_floor += 1;
            }
            let e = rel_err_floor(ana, num, opts.floor);
            if e > rep.max_rel_err || rep.worst.is_none() {
                rep.max_rel_err = e;
                rep.worst = Some((name, idx));
                rep.analytic_at_worst = ana;
                rep.numeric_at_worst = num;
            }
        }
    }
    Ok(rep)
}
