use crate::error::{check_dim, Result};
use crate::graph::{Graph, Var};
use crate::kernels::{self, GruStepCache};
use crate::real::Real;
use crate::tensor::Tensor;

/// Parameter nodes of one GRU direction. Gate order in the packed matrices
/// is (reset, update, candidate).
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    /// `[D_in × 3H]`
    pub w_ih: Var,
    /// `[H × 3H]`
    pub w_hh: Var,
    /// `[3H]`
    pub b_ih: Var,
    /// `[3H]`
    pub b_hh: Var,
}

impl<R: Real> Graph<R> {
    /// Runs a GRU over the rows of `x[T×D_in]` starting from `h0[1×H]`.
    /// Returns all hidden states `[T×H]`.
    pub fn gru_sequence(&mut self, x: Var, h0: Var, p: GruVars) -> Result<Var> {
        let (t, d_in) = self.value(x).dims2("gru")?;
        let (wr, h3) = self.value(p.w_ih).dims2("gru")?;
        check_dim("gru", "w_ih rows (input dim)", d_in, wr)?;
        let hd = h3 / 3;
        check_dim("gru", "w_ih columns (3·hidden)", 3 * hd, h3)?;
        let (whr, whc) = self.value(p.w_hh).dims2("gru")?;
        check_dim("gru", "w_hh rows (hidden)", hd, whr)?;
        check_dim("gru", "w_hh columns (3·hidden)", 3 * hd, whc)?;
        check_dim("gru", "b_ih length", 3 * hd, self.value(p.b_ih).numel())?;
        check_dim("gru", "b_hh length", 3 * hd, self.value(p.b_hh).numel())?;
        check_dim("gru", "h0 length", hd, self.value(h0).numel())?;
        for v in [x, h0] {
            self.value(v).check_finite(&self.name_of(v))?;
        }

        let xs = self.value(x).data();
        let mut gx = kernels::matmul(xs, self.value(p.w_ih).data(), t, d_in, 3 * hd);
        let bih = self.value(p.b_ih).data();
        for row in gx.chunks_mut(3 * hd) {
            row.iter_mut().zip(bih).for_each(|(a, &b)| *a += b);
        }
        let w_hh = self.value(p.w_hh).data();
        let b_hh = self.value(p.b_hh).data();
        let mut hs = vec![R::zero(); t * hd];
        let mut caches: Vec<GruStepCache<R>> = Vec::with_capacity(t);
        let mut h = self.value(h0).data().to_vec();
        for step in 0..t {
            let out = &mut hs[step * hd..(step + 1) * hd];
            caches.push(kernels::gru_step(
                &gx[step * 3 * hd..(step + 1) * 3 * hd],
                &h,
                w_hh,
                b_hh,
                out,
            ));
            h.copy_from_slice(out);
        }
        let value = Tensor::new(&[t, hd], hs)?;
        Ok(self.custom(&[x, h0, p.w_ih, p.w_hh, p.b_ih, p.b_hh], value, move |c| {
            let xs = c.inputs[0].data();
            let h0 = c.inputs[1].data();
            let w_ih = c.inputs[2].data();
            let w_hh = c.inputs[3].data();
            let hs = c.value.data();
            let mut dgx_all = vec![R::zero(); t * 3 * hd];
            let mut dw_hh = vec![R::zero(); hd * 3 * hd];
            let mut db_hh = vec![R::zero(); 3 * hd];
            let mut dh = vec![R::zero(); hd];
            let mut dgh = vec![R::zero(); 3 * hd];
            for step in (0..t).rev() {
                let cache = &caches[step];
                let h_prev = if step == 0 { h0 } else { &hs[(step - 1) * hd..step * hd] };
                let gout = &c.grad[step * hd..(step + 1) * hd];
                let dgx = &mut dgx_all[step * 3 * hd..(step + 1) * 3 * hd];
                let mut dh_prev = vec![R::zero(); hd];
                for i in 0..hd {
                    let d = dh[i] + gout[i];
                    let (r, z, n, hn) = (cache.r[i], cache.z[i], cache.n[i], cache.hn[i]);
                    let dn = d * z;
                    let dz = d * (n - h_prev[i]);
                    dh_prev[i] = d * (R::one() - z);
                    let dn_pre = dn * (R::one() - n * n);
                    let dr = dn_pre * hn;
                    let dr_pre = dr * r * (R::one() - r);
                    let dz_pre = dz * z * (R::one() - z);
                    dgx[i] = dr_pre;
                    dgx[hd + i] = dz_pre;
                    dgx[2 * hd + i] = dn_pre;
                    dgh[i] = dr_pre;
                    dgh[hd + i] = dz_pre;
                    dgh[2 * hd + i] = dn_pre * r;
                }
                for (j, &g) in dgh.iter().enumerate() {
                    db_hh[j] += g;
                }
                for i in 0..hd {
                    let hp = h_prev[i];
                    let wrow = &w_hh[i * 3 * hd..(i + 1) * 3 * hd];
                    dh_prev[i] += kernels::dot(wrow, &dgh);
                    if hp != R::zero() {
                        let drow = &mut dw_hh[i * 3 * hd..(i + 1) * 3 * hd];
                        drow.iter_mut().zip(&dgh).for_each(|(a, &g)| *a += hp * g);
                    }
                }
                dh = dh_prev;
            }
            let dx = c.needs[0].then(|| kernels::matmul_nt(&dgx_all, w_ih, t, 3 * hd, d_in));
            let dw_ih = c.needs[2].then(|| kernels::matmul_tn(xs, &dgx_all, t, d_in, 3 * hd));
            let db_ih = c.needs[4].then(|| {
                let mut b = vec![R::zero(); 3 * hd];
                for row in dgx_all.chunks(3 * hd) {
                    b.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                }
                b
            });
            vec![dx, Some(dh), dw_ih, Some(dw_hh), db_ih, Some(db_hh)]
        }))
    }

    /// Single GRU step: `x[1×D_in]`, `h[1×H]` → `[1×H]`.
    pub fn gru_cell(&mut self, x: Var, h: Var, p: GruVars) -> Result<Var> {
        self.gru_sequence(x, h, p)
    }
}
