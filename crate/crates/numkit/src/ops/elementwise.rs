use crate::error::{check_dim, NumError, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;

fn same_shape<R: Real>(g: &Graph<R>, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa.len() != sb.len() {
        return Err(NumError::Rank {
            op,
            expected: sa.len(),
            shape: sb.to_vec(),
        });
    }
    for (&x, &y) in sa.iter().zip(sb) {
        check_dim(op, "elementwise extent", x, y)?;
    }
    Ok(())
}

impl<R: Real> Graph<R> {
    fn unary<F, D>(&mut self, x: Var, f: F, df: D) -> Var
    where
        F: Fn(R) -> R,
        D: Fn(R, R) -> R + 'static,
    {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape(), data).expect("shape preserved");
        self.custom(&[x], value, move |c| {
            let gx = c.inputs[0]
                .data()
                .iter()
                .zip(c.value.data())
                .zip(c.grad)
                .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.custom(&[a, b], value, |c| vec![Some(c.grad.to_vec()), Some(c.grad.to_vec())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.custom(&[a, b], value, |c| {
            vec![Some(c.grad.to_vec()), Some(c.grad.iter().map(|&g| -g).collect())]
        }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.custom(&[a, b], value, |c| {
            let (a, b) = (c.inputs[0].data(), c.inputs[1].data());
            let ga = c.needs[0].then(|| c.grad.iter().zip(b).map(|(&g, &y)| g * y).collect());
            let gb = c.needs[1].then(|| c.grad.iter().zip(a).map(|(&g, &x)| g * x).collect());
            vec![ga, gb]
        }))
    }

    /// `x + offset` where the offset is a constant. The gradient passes
    /// through unchanged, which is exactly the straight-through estimator when
    /// `offset = sg(q − x)`.
    pub fn add_const(&mut self, x: Var, offset: &Tensor<R>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != offset.shape() {
            return Err(NumError::Dim {
                op: "add_const",
                axis: "numel",
                expected: xv.numel(),
                got: offset.numel(),
            });
        }
        let data = xv.data().iter().zip(offset.data()).map(|(&a, &b)| a + b).collect();
        let value = Tensor::new(xv.shape(), data)?;
        Ok(self.custom(&[x], value, |c| vec![Some(c.grad.to_vec())]))
    }

    pub fn scale(&mut self, x: Var, s: R) -> Var {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape(), xv.data().iter().map(|&v| v * s).collect()).expect("shape preserved");
        self.custom(&[x], value, move |c| {
            vec![Some(c.grad.iter().map(|&g| g * s).collect())]
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > R::zero() { v } else { R::zero() },
            |v, _| if v > R::zero() { R::one() } else { R::zero() },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), |_, y| R::one() - y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, |_, y| y * (R::one() - y))
    }

    pub fn elu_plus_one(&mut self, x: Var) -> Var {
        self.unary(x, kernels::elu_plus_one, |v, _| kernels::elu_plus_one_grad(v))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, |v, _| v + v)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: R = self.value(x).data().iter().copied().sum();
        let n = self.value(x).numel();
        self.custom(&[x], Tensor::scalar(s), move |c| vec![Some(vec![c.grad[0]; n])])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, R::lit(1.0 / n as f64))
    }

    /// Adds `b[M]` to every row of `x[N×M]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2("add_row")?;
        check_dim("add_row", "bias length", m, self.value(b).numel())?;
        let bv = self.value(b).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(m) {
            row.iter_mut().zip(&bv).for_each(|(o, &bb)| *o += bb);
        }
        let value = Tensor::new(&[n, m], data)?;
        Ok(self.custom(&[x, b], value, move |c| {
            let gb = c.needs[1].then(|| {
                let mut gb = vec![R::zero(); m];
                for row in c.grad.chunks(m) {
                    gb.iter_mut().zip(row).for_each(|(o, &g)| *o += g);
                }
                gb
            });
            vec![Some(c.grad.to_vec()), gb]
        }))
    }

    /// Multiplies every element of `x` by the scalar node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        check_dim("mul_scalar", "scalar numel", 1, self.value(s).numel())?;
        let sv = self.value(s).data()[0];
        let xv = self.value(x);
        let value = Tensor::new(xv.shape(), xv.data().iter().map(|&v| v * sv).collect())?;
        Ok(self.custom(&[x, s], value, |c| {
            let sv = c.inputs[1].data()[0];
            let gx = c.needs[0].then(|| c.grad.iter().map(|&g| g * sv).collect());
            let gs = c.needs[1].then(|| vec![c.grad.iter().zip(c.inputs[0].data()).map(|(&g, &x)| g * x).sum()]);
            vec![gx, gs]
        }))
    }
}
