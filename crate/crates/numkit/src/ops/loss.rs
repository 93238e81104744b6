use crate::error::{check_dim, NumError, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;

impl<R: Real> Graph<R> {
    /// Row-wise softmax of `x[N×V]`.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, v) = self.value(x).dims2("softmax_rows")?;
        let value = Tensor::new(&[n, v], kernels::softmax_rows(self.value(x).data(), v))?;
        Ok(self.custom(&[x], value, move |c| {
            let y = c.value.data();
            let mut g = vec![R::zero(); n * v];
            for ((grow, yrow), orow) in c.grad.chunks(v).zip(y.chunks(v)).zip(g.chunks_mut(v)) {
                let s = kernels::dot(grow, yrow);
                for ((o, &gi), &yi) in orow.iter_mut().zip(grow).zip(yrow) {
                    *o = yi * (gi - s);
                }
            }
            vec![Some(g)]
        }))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, v) = self.value(x).dims2("log_softmax_rows")?;
        let value = Tensor::new(&[n, v], kernels::log_softmax_rows(self.value(x).data(), v))?;
        Ok(self.custom(&[x], value, move |c| {
            let ly = c.value.data();
            let mut g = vec![R::zero(); n * v];
            for ((grow, lrow), orow) in c.grad.chunks(v).zip(ly.chunks(v)).zip(g.chunks_mut(v)) {
                let s: R = grow.iter().copied().sum();
                for ((o, &gi), &li) in orow.iter_mut().zip(grow).zip(lrow) {
                    *o = gi - li.exp() * s;
                }
            }
            vec![Some(g)]
        }))
    }

    /// Mean cross-entropy of `logits[N×V]` against one class id per row,
    /// stabilized by max subtraction.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, v) = self.value(logits).dims2("cross_entropy")?;
        check_dim("cross_entropy", "targets", n, targets.len())?;
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(NumError::Index {
                op: "cross_entropy",
                index: bad,
                size: v,
            });
        }
        let lsm = kernels::log_softmax_rows(self.value(logits).data(), v);
        let total: R = targets.iter().enumerate().map(|(i, &t)| -lsm[i * v + t]).sum();
        let inv_n = R::lit(1.0 / n as f64);
        let targets = targets.to_vec();
        Ok(self.custom(&[logits], Tensor::scalar(total * inv_n), move |c| {
            let scale = c.grad[0] * inv_n;
            let mut g: Vec<R> = lsm.iter().map(|&l| l.exp() * scale).collect();
            for (i, &t) in targets.iter().enumerate() {
                g[i * v + t] -= scale;
            }
            vec![Some(g)]
        }))
    }

    /// `−log softmax(logits)[target]` for a single logit vector.
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Result<Var> {
        let v = self.value(logits).numel();
        let row = self.reshape(logits, &[1, v])?;
        self.cross_entropy(row, &[target])
    }

    /// Mean squared error between two same-shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }
}
