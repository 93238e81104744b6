use crate::error::{check_dim, NumError, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;

impl<R: Real> Graph<R> {
    /// Group normalization of `x[C×T]`: statistics over each block of
    /// `C/n_groups` channels and all time steps, then a per-channel affine.
    pub fn group_norm(&mut self, x: Var, n_groups: usize, gamma: Var, beta: Var) -> Result<Var> {
        let (ch, t) = self.value(x).dims2("group_norm")?;
        if n_groups == 0 || ch % n_groups != 0 {
            return Err(NumError::Config(format!(
                "group_norm: {ch} channels not divisible by {n_groups} groups"
            )));
        }
        check_dim("group_norm", "gamma length", ch, self.value(gamma).numel())?;
        check_dim("group_norm", "beta length", ch, self.value(beta).numel())?;
        let block = (ch / n_groups) * t;
        let (xhat, inv) = kernels::normalize_blocks(self.value(x).data(), block);
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut data = xhat.clone();
        for c in 0..ch {
            for v in &mut data[c * t..(c + 1) * t] {
                *v = *v * gv[c] + bv[c];
            }
        }
        let value = Tensor::new(&[ch, t], data)?;
        Ok(self.custom(&[x, gamma, beta], value, move |c| {
            let gv = c.inputs[1].data();
            let gx = c.needs[0].then(|| {
                let mut dxhat = c.grad.to_vec();
                for ci in 0..ch {
                    dxhat[ci * t..(ci + 1) * t].iter_mut().for_each(|d| *d *= gv[ci]);
                }
                kernels::normalize_blocks_backward(&xhat, &inv, &dxhat, block)
            });
            let ggamma = c.needs[1].then(|| {
                (0..ch)
                    .map(|ci| {
                        let r = ci * t..(ci + 1) * t;
                        c.grad[r.clone()].iter().zip(&xhat[r]).map(|(&g, &h)| g * h).sum()
                    })
                    .collect()
            });
            let gbeta = c.needs[2].then(|| {
                (0..ch)
                    .map(|ci| c.grad[ci * t..(ci + 1) * t].iter().copied().sum())
                    .collect()
            });
            vec![gx, ggamma, gbeta]
        }))
    }

    /// Layer normalization over the last axis of `x[N×D]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2("layer_norm")?;
        check_dim("layer_norm", "gamma length", d, self.value(gamma).numel())?;
        check_dim("layer_norm", "beta length", d, self.value(beta).numel())?;
        let (xhat, inv) = kernels::normalize_blocks(self.value(x).data(), d);
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut data = xhat.clone();
        for row in data.chunks_mut(d) {
            for ((v, &g), &b) in row.iter_mut().zip(gv).zip(bv) {
                *v = *v * g + b;
            }
        }
        let value = Tensor::new(&[n, d], data)?;
        Ok(self.custom(&[x, gamma, beta], value, move |c| {
            let gv = c.inputs[1].data();
            let gx = c.needs[0].then(|| {
                let mut dxhat = c.grad.to_vec();
                for row in dxhat.chunks_mut(d) {
                    row.iter_mut().zip(gv).for_each(|(v, &g)| *v *= g);
                }
                kernels::normalize_blocks_backward(&xhat, &inv, &dxhat, d)
            });
            let ggamma = c.needs[1].then(|| {
                let mut gg = vec![R::zero(); d];
                for (grow, hrow) in c.grad.chunks(d).zip(xhat.chunks(d)) {
                    for ((o, &g), &h) in gg.iter_mut().zip(grow).zip(hrow) {
                        *o += g * h;
                    }
                }
                gg
            });
            let gbeta = c.needs[2].then(|| {
                let mut gb = vec![R::zero(); d];
                for grow in c.grad.chunks(d) {
                    gb.iter_mut().zip(grow).for_each(|(o, &g)| *o += g);
                }
                gb
            });
            vec![gx, ggamma, gbeta]
        }))
    }
}
