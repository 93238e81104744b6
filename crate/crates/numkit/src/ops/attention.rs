use crate::error::{check_dim, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;

impl<R: Real> Graph<R> {
    /// Causal linear attention over feature-mapped queries `pq[T×dk]`, keys
    /// `pk[T×dk]` and values `v[T×dv]`. Output row `t` only depends on rows
    /// `≤ t` of the inputs.
    pub fn causal_linear_attention(&mut self, pq: Var, pk: Var, v: Var) -> Result<Var> {
        let (t, dk) = self.value(pq).dims2("linear_attention")?;
        let (tk, dk2) = self.value(pk).dims2("linear_attention")?;
        let (tv, dv) = self.value(v).dims2("linear_attention")?;
        check_dim("linear_attention", "key length", t, tk)?;
        check_dim("linear_attention", "value length", t, tv)?;
        check_dim("linear_attention", "key dim", dk, dk2)?;
        let y = kernels::causal_linear_attention(
            self.value(pq).data(),
            self.value(pk).data(),
            self.value(v).data(),
            t,
            dk,
            dv,
        );
        let value = Tensor::new(&[t, dv], y)?;
        Ok(self.custom(&[pq, pk, v], value, move |c| {
            let (dq, dk_, dv_) = kernels::causal_linear_attention_backward(
                c.inputs[0].data(),
                c.inputs[1].data(),
                c.inputs[2].data(),
                c.value.data(),
                c.grad,
                t,
                dk,
                dv,
            );
            vec![Some(dq), Some(dk_), Some(dv_)]
        }))
    }
}
