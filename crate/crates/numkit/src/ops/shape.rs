use crate::error::{check_dim, NumError, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;

impl<R: Real> Graph<R> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        check_dim("matmul", "inner", k, k2)?;
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(&[m, n], data)?;
        Ok(self.custom(&[a, b], value, move |c| {
            let ga = c.needs[0].then(|| kernels::matmul_nt(c.grad, c.inputs[1].data(), m, n, k));
            let gb = c.needs[1].then(|| kernels::matmul_tn(c.inputs[0].data(), c.grad, m, k, n));
            vec![ga, gb]
        }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, cols) = self.value(x).dims2("transpose")?;
        let value = self.value(x).transposed()?;
        Ok(self.custom(&[x], value, move |c| {
            let mut g = vec![R::zero(); r * cols];
            for i in 0..r {
                for j in 0..cols {
                    g[i * cols + j] = c.grad[j * r + i];
                }
            }
            vec![Some(g)]
        }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.custom(&[x], value, |c| vec![Some(c.grad.to_vec())]))
    }

    /// Concatenates rank-2 tensors along columns.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let n = self.value(xs[0]).dims2("concat_cols")?.0;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, w) = self.value(x).dims2("concat_cols")?;
            check_dim("concat_cols", "rows", n, r)?;
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &x in xs {
                data.extend_from_slice(self.value(x).row(i));
            }
        }
        let value = Tensor::new(&[n, total], data)?;
        Ok(self.custom(xs, value, move |c| {
            let mut out: Vec<Vec<R>> = widths.iter().map(|&w| Vec::with_capacity(n * w)).collect();
            for row in c.grad.chunks(total) {
                let mut off = 0;
                for (o, &w) in out.iter_mut().zip(&widths) {
                    o.extend_from_slice(&row[off..off + w]);
                    off += w;
                }
            }
            out.into_iter().map(Some).collect()
        }))
    }

    /// Concatenates rank-2 tensors along rows.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let m = self.value(xs[0]).dims2("concat_rows")?.1;
        let mut sizes = Vec::with_capacity(xs.len());
        let mut data = Vec::new();
        for &x in xs {
            let (r, w) = self.value(x).dims2("concat_rows")?;
            check_dim("concat_rows", "columns", m, w)?;
            sizes.push(r * w);
            data.extend_from_slice(self.value(x).data());
        }
        let rows = data.len() / m;
        let value = Tensor::new(&[rows, m], data)?;
        Ok(self.custom(xs, value, move |c| {
            let mut off = 0;
            sizes
                .iter()
                .map(|&s| {
                    let g = c.grad[off..off + s].to_vec();
                    off += s;
                    Some(g)
                })
                .collect()
        }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.value(x).dims2("slice_rows")?;
        if start + len > n || len == 0 {
            return Err(NumError::Index {
                op: "slice_rows",
                index: start + len,
                size: n,
            });
        }
        let data = self.value(x).data()[start * m..(start + len) * m].to_vec();
        let value = Tensor::new(&[len, m], data)?;
        Ok(self.custom(&[x], value, move |c| {
            let mut g = vec![R::zero(); n * m];
            g[start * m..(start + len) * m].copy_from_slice(c.grad);
            vec![Some(g)]
        }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.value(x).dims2("slice_cols")?;
        if start + len > m || len == 0 {
            return Err(NumError::Index {
                op: "slice_cols",
                index: start + len,
                size: m,
            });
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let value = Tensor::new(&[n, len], data)?;
        Ok(self.custom(&[x], value, move |c| {
            let mut g = vec![R::zero(); n * m];
            for i in 0..n {
                g[i * m + start..i * m + start + len].copy_from_slice(&c.grad[i * len..(i + 1) * len]);
            }
            vec![Some(g)]
        }))
    }

    /// Reverses the row order of a rank-2 tensor (time reversal for `T×D`).
    pub fn reverse_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2("reverse_rows")?;
        let xv = self.value(x);
        let mut data = Vec::with_capacity(n * m);
        for i in (0..n).rev() {
            data.extend_from_slice(xv.row(i));
        }
        let value = Tensor::new(&[n, m], data)?;
        Ok(self.custom(&[x], value, move |c| {
            let mut g = Vec::with_capacity(n * m);
            for i in (0..n).rev() {
                g.extend_from_slice(&c.grad[i * m..(i + 1) * m]);
            }
            vec![Some(g)]
        }))
    }

    /// Nearest-neighbour upsampling of `x[C×T]` along time: `[C × T·factor]`.
    pub fn repeat_time(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (ch, t) = self.value(x).dims2("repeat_time")?;
        if factor == 0 {
            return Err(NumError::Config("repeat factor must be positive".into()));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(ch * t * factor);
        for c in 0..ch {
            for &v in xv.row(c) {
                data.extend(std::iter::repeat_n(v, factor));
            }
        }
        let value = Tensor::new(&[ch, t * factor], data)?;
        Ok(self.custom(&[x], value, move |c| {
            let g = c.grad.chunks(factor).map(|blk| blk.iter().copied().sum()).collect();
            vec![Some(g)]
        }))
    }

    /// Row lookup: `table[V×D]`, returns `[ids.len() × D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2("embedding")?;
        if ids.is_empty() {
            return Err(NumError::Contract("embedding lookup of zero ids".into()));
        }
        let tv = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= v {
                return Err(NumError::Index {
                    op: "embedding",
                    index: i,
                    size: v,
                });
            }
            data.extend_from_slice(tv.row(i));
        }
        let value = Tensor::new(&[ids.len(), d], data)?;
        let ids = ids.to_vec();
        Ok(self.custom(&[table], value, move |c| {
            let mut g = vec![R::zero(); v * d];
            for (row, &i) in ids.iter().enumerate() {
                g[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(&c.grad[row * d..(row + 1) * d])
                    .for_each(|(a, &b)| *a += b);
            }
            vec![Some(g)]
        }))
    }
}
