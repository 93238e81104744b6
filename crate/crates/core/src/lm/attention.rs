//! Additive attention over the lyrics memory with location features from the
//! previous and cumulative alignment.

use numkit::nn::uniform;
use numkit::{ConvSpec, Graph, ParamId, ParamStore, Real, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Alignment carried between decoder steps, both `[1×N]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionState {
    pub prev: Var,
    pub cumulative: Var,
}

impl AttentionState {
    /// All weight on the first phoneme, nothing accumulated yet.
    pub fn initial<R: Real>(g: &mut Graph<R>, n: usize) -> Self {
        let mut d = vec![R::zero(); n];
        d[0] = R::one();
        AttentionState {
            prev: g.constant(Tensor::new(&[1, n], d).expect("delta shape")),
            cumulative: g.constant(Tensor::zeros(&[1, n])),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocationAttention {
    /// `[Dq×A]`
    pub w_query: ParamId,
    /// `[Dm×A]`
    pub w_memory: ParamId,
    /// `[A]`
    pub bias: ParamId,
    /// `[F×2×K]` convolution over stacked previous and cumulative weights.
    pub loc_conv: ParamId,
    /// `[F×A]`
    pub w_location: ParamId,
    /// `[A×1]`
    pub v: ParamId,
    pub dim: usize,
}

impl LocationAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Real>(
        s: &mut ParamStore<R>,
        name: &str,
        d_query: usize,
        d_memory: usize,
        dim: usize,
        filters: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let b = |fan: usize| 1.0 / (fan as f64).sqrt();
        LocationAttention {
            w_query: s.add(
                format!("{name}.w_query"),
                uniform(&[d_query, dim], b(d_query), rng),
                true,
            ),
            w_memory: s.add(
                format!("{name}.w_memory"),
                uniform(&[d_memory, dim], b(d_memory), rng),
                true,
            ),
            bias: s.add(format!("{name}.bias"), Tensor::zeros(&[dim]), true),
            loc_conv: s.add(
                format!("{name}.loc_conv"),
                uniform(&[filters, 2, kernel], b(2 * kernel), rng),
                true,
            ),
            w_location: s.add(
                format!("{name}.w_location"),
                uniform(&[filters, dim], b(filters), rng),
                true,
            ),
            v: s.add(format!("{name}.v"), uniform(&[dim, 1], b(dim), rng), true),
            dim,
        }
    }

    /// Memory projection `[N×A]` with the bias folded in; computed once per
    /// sequence.
    pub fn keys<R: Real>(&self, g: &mut Graph<R>, s: &ParamStore<R>, memory: Var) -> Result<Var> {
        let w = g.param(s, self.w_memory);
        let b = g.param(s, self.bias);
        let k = g.matmul(memory, w)?;
        Ok(g.add_row(k, b)?)
    }

    /// One attention step for `query[1×Dq]`. Returns the context `[1×Dm]`
    /// and the updated alignment.
    #[allow(clippy::too_many_arguments)]
    pub fn attend<R: Real>(
        &self,
        g: &mut Graph<R>,
        s: &ParamStore<R>,
        query: Var,
        memory: Var,
        keys: Var,
        mask: &[bool],
        st: &AttentionState,
    ) -> Result<(Var, AttentionState)> {
        let n = g.shape(memory)[0];
        if g.shape(st.prev) != [1, n] || g.shape(st.cumulative) != [1, n] || mask.len() != n {
            return Err(Error::Input(format!(
                "attention state of shape {:?} does not match memory length {n}",
                g.shape(st.prev)
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Input("attention memory is fully masked".into()));
        }
        let stacked = g.concat_rows(&[st.prev, st.cumulative])?;
        let conv_w = g.param(s, self.loc_conv);
        let feats = g.conv1d(stacked, conv_w, None, ConvSpec::default())?;
        let feats = g.transpose(feats)?;
        let wl = g.param(s, self.w_location);
        let loc = g.matmul(feats, wl)?;
        let wq = g.param(s, self.w_query);
        let q = g.matmul(query, wq)?;
        let pre = g.add(keys, loc)?;
        let pre = g.add_row(pre, q)?;
        let act = g.tanh(pre);
        let v = g.param(s, self.v);
        let e = g.matmul(act, v)?;
        let mut e = g.reshape(e, &[1, n])?;
        if mask.iter().any(|&m| !m) {
            let pen: Vec<R> = mask.iter().map(|&m| if m { R::zero() } else { R::lit(-1e9) }).collect();
            e = g.add_const(e, &Tensor::new(&[1, n], pen)?)?;
        }
        let w = g.softmax_rows(e)?;
        let context = g.matmul(w, memory)?;
        let cumulative = g.add(st.cumulative, w)?;
        Ok((context, AttentionState { prev: w, cumulative }))
    }
}

/// Width of the diagonal band in [`diagonal_penalty`], in normalised time.
pub const GUIDE_WIDTH: f64 = 0.2;

/// `[T×N]` penalty `1 − exp(−(n̂ − t̂)² / 2g²)` on attention weight far from
/// the diagonal, with step and phoneme positions taken at cell centres.
pub fn diagonal_penalty<R: Real>(steps: usize, n: usize, width: f64) -> Tensor<R> {
    let mut d = Vec::with_capacity(steps * n);
    for t in 0..steps {
        let tt = (t as f64 + 0.5) / steps as f64;
        for k in 0..n {
            let nn = (k as f64 + 0.5) / n as f64;
            d.push(R::lit(1.0 - (-(nn - tt).powi(2) / (2.0 * width * width)).exp()));
        }
    }
    Tensor::new(&[steps, n], d).expect("penalty shape")
}

/// Expected attended position `Σ n·w_n` of a weight row.
pub fn expected_position(weights: &[f64]) -> f64 {
    weights.iter().enumerate().map(|(n, &w)| n as f64 * w).sum()
}

/// Fraction of steps whose expected position moves back by more than `tol`.
pub fn monotonicity_violations(alignment: &[Vec<f64>], tol: f64) -> (usize, usize) {
    let pos: Vec<f64> = alignment.iter().map(|w| expected_position(w)).collect();
    let bad = pos.windows(2).filter(|p| p[1] < p[0] - tol).count();
    (bad, pos.len().saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (ParamStore<f64>, LocationAttention, Tensor<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::new();
        let att = LocationAttention::new(&mut s, "att", 6, 5, 4, 3, 7, &mut rng);
        let mem = uniform(&[n, 5], 1.0, &mut rng);
        let q = uniform(&[1, 6], 1.0, &mut rng);
        (s, att, mem, q)
    }

    #[test]
    fn diagonal_penalty_vanishes_on_the_diagonal() {
        let p: Tensor<f64> = diagonal_penalty(6, 6, GUIDE_WIDTH);
        for t in 0..6 {
            assert_eq!(p.data()[t * 6 + t], 0.0);
        }
        assert!(p.data()[5] > 0.99 && p.data()[30] > 0.99);
        let q: Tensor<f64> = diagonal_penalty(3, 5, GUIDE_WIDTH);
        assert_eq!(q.shape(), &[3, 5]);
        assert!(q.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn singleton_memory_gets_all_weight() {
        let (s, att, mem, q) = setup(1);
        let mut g = Graph::new();
        let m = g.constant(mem);
        let qv = g.constant(q);
        let k = att.keys(&mut g, &s, m).unwrap();
        let st = AttentionState::initial(&mut g, 1);
        let (_, st2) = att.attend(&mut g, &s, qv, m, k, &[true], &st).unwrap();
        assert_eq!(g.value(st2.prev).data(), &[1.0]);
    }

    #[test]
    fn weights_on_simplex_and_cumulative_is_running_sum() {
        let (s, att, mem, q) = setup(7);
        let mut g = Graph::new();
        let m = g.constant(mem);
        let qv = g.constant(q);
        let k = att.keys(&mut g, &s, m).unwrap();
        let mut st = AttentionState::initial(&mut g, 7);
        let mut running = vec![0.0; 7];
        for _ in 0..5 {
            let (_, next) = att.attend(&mut g, &s, qv, m, k, &[true; 7], &st).unwrap();
            let w = g.value(next.prev).data();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(w.iter().all(|&x| x >= 0.0));
            running.iter_mut().zip(w).for_each(|(r, &x)| *r += x);
            let cum = g.value(next.cumulative).data();
            for (a, b) in cum.iter().zip(&running) {
                assert!((a - b).abs() < 1e-12);
            }
            st = next;
        }
    }

    #[test]
    fn masked_positions_get_no_weight() {
        let (s, att, mem, q) = setup(4);
        let mut g = Graph::new();
        let m = g.constant(mem);
        let qv = g.constant(q);
        let k = att.keys(&mut g, &s, m).unwrap();
        let st = AttentionState::initial(&mut g, 4);
        let (_, st2) = att
            .attend(&mut g, &s, qv, m, k, &[true, true, false, true], &st)
            .unwrap();
        assert!(g.value(st2.prev).data()[2] < 1e-12);
        assert!(att.attend(&mut g, &s, qv, m, k, &[false; 4], &st).is_err());
        let bad = AttentionState::initial(&mut g, 3);
        assert!(att.attend(&mut g, &s, qv, m, k, &[true; 4], &bad).is_err());
    }

    #[test]
    fn zero_location_path_is_content_attention() {
        let (mut s, att, mem, q) = setup(6);
        s.get_mut(att.w_location)
            .value
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
        let mut g = Graph::new();
        let m = g.constant(mem.clone());
        let qv = g.constant(q.clone());
        let k = att.keys(&mut g, &s, m).unwrap();
        let st = AttentionState::initial(&mut g, 6);
        let (ctx, st2) = att.attend(&mut g, &s, qv, m, k, &[true; 6], &st).unwrap();

        // reference additive attention written out directly
        let (wq, wm, b, v) = (
            s.value(att.w_query),
            s.value(att.w_memory),
            s.value(att.bias),
            s.value(att.v),
        );
        let a = att.dim;
        let mut e = [0.0; 6];
        for (n, en) in e.iter_mut().enumerate() {
            for j in 0..a {
                let mut u = b.data()[j];
                for i in 0..6 {
                    u += q.data()[i] * wq.at2(i, j);
                }
                for i in 0..5 {
                    u += mem.at2(n, i) * wm.at2(i, j);
                }
                *en += u.tanh() * v.data()[j];
            }
        }
        let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = e.iter().map(|x| (x - mx).exp()).sum();
        let w: Vec<f64> = e.iter().map(|x| (x - mx).exp() / z).collect();
        for (a, b) in g.value(st2.prev).data().iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
        for i in 0..5 {
            let c: f64 = (0..6).map(|n| w[n] * mem.at2(n, i)).sum();
            assert!((g.value(ctx).data()[i] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn violation_counting() {
        let a = vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(monotonicity_violations(&a, 0.1), (1, 3));
    }
}
