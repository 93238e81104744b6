//! Eager numeric kernels on flat row-major slices.
//!
//! Graph ops wrap these for the forward pass, and step-wise inference code
//! calls them directly so both paths share the same arithmetic.

use crate::real::Real;

pub const NORM_EPS: f64 = 1e-5;
pub const LINEAR_ATTN_EPS: f64 = 1e-6;

#[inline]
pub fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

/// elu(u) + 1, the positive feature map used by linear attention.
#[inline]
pub fn elu_plus_one<R: Real>(x: R) -> R {
    if x > R::zero() {
        x + R::one()
    } else {
        x.exp()
    }
}

#[inline]
pub fn elu_plus_one_grad<R: Real>(x: R) -> R {
    if x > R::zero() {
        R::one()
    } else {
        x.exp()
    }
}

/// c[m×n] = a[m×k] · b[k×n]
pub fn matmul<R: Real>(a: &[R], b: &[R], m: usize, k: usize, n: usize) -> Vec<R> {
    let mut c = vec![R::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == R::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// c[m×n] = aᵀ · b with a[k×m], b[k×n]
pub fn matmul_tn<R: Real>(a: &[R], b: &[R], k: usize, m: usize, n: usize) -> Vec<R> {
    let mut c = vec![R::zero(); m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a[p * m + i];
            if a_pi == R::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += a_pi * bv;
            }
        }
    }
    c
}

/// c[m×n] = a · bᵀ with a[m×k], b[n×k]
pub fn matmul_nt<R: Real>(a: &[R], b: &[R], m: usize, k: usize, n: usize) -> Vec<R> {
    let mut c = vec![R::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = dot(arow, brow);
        }
    }
    c
}

#[inline]
pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut s = R::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// y[n] += x[k] · w[k×n]
pub fn vecmat_acc<R: Real>(x: &[R], w: &[R], n: usize, y: &mut [R]) {
    for (p, &xp) in x.iter().enumerate() {
        if xp == R::zero() {
            continue;
        }
        let wrow = &w[p * n..(p + 1) * n];
        for (yv, &wv) in y.iter_mut().zip(wrow) {
            *yv += xp * wv;
        }
    }
}

/// Geometry of a same-padded 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub t_in: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    /// Output length: the input is conceptually right-padded to a multiple of
    /// the stride, so the output is exactly `ceil(t_in / stride)`.
    pub fn t_out(&self) -> usize {
        self.t_in.div_ceil(self.stride)
    }

    /// Zero padding on the left; the remainder of `dilation·(K−1)` goes right.
    pub fn left_pad(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    fn valid_range(&self, kk: usize) -> (usize, usize) {
        // output index `to` reads input `to·stride + kk·dilation − left`
        let off = (kk * self.dilation) as isize - self.left_pad() as isize;
        let s = self.stride as isize;
        let lo = if off >= 0 {
            0
        } else {
            (((-off) + s - 1) / s).min(self.t_out() as isize)
        };
        let hi_excl = {
            let last = self.t_in as isize - 1 - off;
            if last < 0 {
                0
            } else {
                (last / s + 1).min(self.t_out() as isize)
            }
        };
        (lo as usize, (hi_excl.max(lo)) as usize)
    }

    fn offset(&self, kk: usize) -> isize {
        (kk * self.dilation) as isize - self.left_pad() as isize
    }
}

pub fn conv1d_forward<R: Real>(x: &[R], w: &[R], bias: Option<&[R]>, g: &ConvGeom) -> Vec<R> {
    let t_out = g.t_out();
    let cin_g = g.c_in / g.groups;
    let cout_g = g.c_out / g.groups;
    let mut out = vec![R::zero(); g.c_out * t_out];
    for co in 0..g.c_out {
        let grp = co / cout_g;
        let orow = &mut out[co * t_out..(co + 1) * t_out];
        if let Some(b) = bias {
            orow.iter_mut().for_each(|o| *o = b[co]);
        }
        for cl in 0..cin_g {
            let ci = grp * cin_g + cl;
            let xrow = &x[ci * g.t_in..(ci + 1) * g.t_in];
            for kk in 0..g.kernel {
                let wv = w[(co * cin_g + cl) * g.kernel + kk];
                if wv == R::zero() {
                    continue;
                }
                let (lo, hi) = g.valid_range(kk);
                if lo >= hi {
                    continue;
                }
                let off = g.offset(kk);
                if g.stride == 1 {
                    let start = (lo as isize + off) as usize;
                    let src = &xrow[start..start + (hi - lo)];
                    for (o, &xv) in orow[lo..hi].iter_mut().zip(src) {
                        *o += wv * xv;
                    }
                } else {
                    for to in lo..hi {
                        let ti = (to as isize * g.stride as isize + off) as usize;
                        orow[to] += wv * xrow[ti];
                    }
                }
            }
        }
    }
    out
}

/// Returns (dx, dw, dbias); each only computed when requested.
pub fn conv1d_backward<R: Real>(
    x: &[R],
    w: &[R],
    dout: &[R],
    g: &ConvGeom,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<Vec<R>>, Option<Vec<R>>, Option<Vec<R>>) {
    let t_out = g.t_out();
    let cin_g = g.c_in / g.groups;
    let cout_g = g.c_out / g.groups;
    let mut dx = need_x.then(|| vec![R::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![R::zero(); w.len()]);
    let db = need_b.then(|| {
        (0..g.c_out)
            .map(|co| dout[co * t_out..(co + 1) * t_out].iter().copied().sum())
            .collect::<Vec<R>>()
    });
    for co in 0..g.c_out {
        let grp = co / cout_g;
        let drow = &dout[co * t_out..(co + 1) * t_out];
        for cl in 0..cin_g {
            let ci = grp * cin_g + cl;
            for kk in 0..g.kernel {
                let widx = (co * cin_g + cl) * g.kernel + kk;
                let (lo, hi) = g.valid_range(kk);
                let off = g.offset(kk);
                if let Some(dw) = dw.as_mut() {
                    let xrow = &x[ci * g.t_in..(ci + 1) * g.t_in];
                    let mut s = R::zero();
                    for to in lo..hi {
                        let ti = (to as isize * g.stride as isize + off) as usize;
                        s += drow[to] * xrow[ti];
                    }
                    dw[widx] += s;
                }
                if let Some(dx) = dx.as_mut() {
                    let wv = w[widx];
                    if wv == R::zero() {
                        continue;
                    }
                    let dxrow = &mut dx[ci * g.t_in..(ci + 1) * g.t_in];
                    for to in lo..hi {
                        let ti = (to as isize * g.stride as isize + off) as usize;
                        dxrow[ti] += wv * drow[to];
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Normalization statistics over contiguous blocks of `block` elements,
/// returning (normalized values, inverse std per block).
pub fn normalize_blocks<R: Real>(x: &[R], block: usize) -> (Vec<R>, Vec<R>) {
    let nb = x.len() / block;
    let mut xhat = vec![R::zero(); x.len()];
    let mut inv = vec![R::zero(); nb];
    let n = R::lit(block as f64);
    let eps = R::lit(NORM_EPS);
    for b in 0..nb {
        let seg = &x[b * block..(b + 1) * block];
        let mean = seg.iter().copied().sum::<R>() / n;
        let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / n;
        let is = R::one() / (var + eps).sqrt();
        inv[b] = is;
        for (o, &v) in xhat[b * block..(b + 1) * block].iter_mut().zip(seg) {
            *o = (v - mean) * is;
        }
    }
    (xhat, inv)
}

/// Backward of block normalization given the gradient w.r.t. the normalized
/// values.
pub fn normalize_blocks_backward<R: Real>(xhat: &[R], inv: &[R], dxhat: &[R], block: usize) -> Vec<R> {
    let n = R::lit(block as f64);
    let mut dx = vec![R::zero(); xhat.len()];
    for (b, &is) in inv.iter().enumerate() {
        let r = b * block..(b + 1) * block;
        let sd: R = dxhat[r.clone()].iter().copied().sum();
        let sdx: R = dxhat[r.clone()]
            .iter()
            .zip(&xhat[r.clone()])
            .map(|(&d, &h)| d * h)
            .sum();
        for i in r {
            dx[i] = is / n * (n * dxhat[i] - sd - xhat[i] * sdx);
        }
    }
    dx
}

/// Saved activations of one GRU step.
#[derive(Clone, Debug)]
pub struct GruStepCache<R> {
    pub r: Vec<R>,
    pub z: Vec<R>,
    pub n: Vec<R>,
    pub hn: Vec<R>,
}

/// One GRU update given precomputed input gates `gx = x·W_ih + b_ih`
/// (gate order r, z, n). Writes the new hidden state into `h_out`.
///
/// `h' = (1 − z)·h + z·n`, `n = tanh(gx_n + r·(h·W_hn + b_hn))`.
pub fn gru_step<R: Real>(gx: &[R], h: &[R], w_hh: &[R], b_hh: &[R], h_out: &mut [R]) -> GruStepCache<R> {
    let hd = h.len();
    let mut gh = b_hh.to_vec();
    vecmat_acc(h, w_hh, 3 * hd, &mut gh);
    let mut r = vec![R::zero(); hd];
    let mut z = vec![R::zero(); hd];
    let mut n = vec![R::zero(); hd];
    let hn = gh[2 * hd..].to_vec();
    for i in 0..hd {
        r[i] = sigmoid(gx[i] + gh[i]);
        z[i] = sigmoid(gx[hd + i] + gh[hd + i]);
        n[i] = (gx[2 * hd + i] + r[i] * hn[i]).tanh();
        h_out[i] = (R::one() - z[i]) * h[i] + z[i] * n[i];
    }
    GruStepCache { r, z, n, hn }
}

/// Full single-step GRU cell from raw input.
pub fn gru_cell<R: Real>(x: &[R], h: &[R], w_ih: &[R], w_hh: &[R], b_ih: &[R], b_hh: &[R]) -> Vec<R> {
    let mut gx = b_ih.to_vec();
    vecmat_acc(x, w_ih, gx.len(), &mut gx);
    let mut out = vec![R::zero(); h.len()];
    gru_step(&gx, h, w_hh, b_hh, &mut out);
    out
}

/// Row-wise softmax of an `rows × cols` matrix.
pub fn softmax_rows<R: Real>(x: &[R], cols: usize) -> Vec<R> {
    let mut out = vec![R::zero(); x.len()];
    for (orow, xrow) in out.chunks_mut(cols).zip(x.chunks(cols)) {
        let m = xrow.iter().copied().fold(R::neg_infinity(), R::max);
        let mut s = R::zero();
        for (o, &v) in orow.iter_mut().zip(xrow) {
            *o = (v - m).exp();
            s += *o;
        }
        orow.iter_mut().for_each(|o| *o /= s);
    }
    out
}

pub fn log_softmax_rows<R: Real>(x: &[R], cols: usize) -> Vec<R> {
    let mut out = vec![R::zero(); x.len()];
    for (orow, xrow) in out.chunks_mut(cols).zip(x.chunks(cols)) {
        let m = xrow.iter().copied().fold(R::neg_infinity(), R::max);
        let lse = m + xrow.iter().map(|&v| (v - m).exp()).sum::<R>().ln();
        for (o, &v) in orow.iter_mut().zip(xrow) {
            *o = v - lse;
        }
    }
    out
}

/// Causal linear attention over already feature-mapped queries and keys.
///
/// `y_t = (φq_t · S_t) / (φq_t · z_t + ε)` with `S_t = Σ_{s≤t} φk_s v_sᵀ`
/// and `z_t = Σ_{s≤t} φk_s`.
pub fn causal_linear_attention<R: Real>(pq: &[R], pk: &[R], v: &[R], t: usize, dk: usize, dv: usize) -> Vec<R> {
    let mut state = LinearAttnState::new(dk, dv);
    let mut y = vec![R::zero(); t * dv];
    for s in 0..t {
        state.step(
            &pq[s * dk..(s + 1) * dk],
            &pk[s * dk..(s + 1) * dk],
            &v[s * dv..(s + 1) * dv],
            &mut y[s * dv..(s + 1) * dv],
        );
    }
    y
}

/// Running state of causal linear attention for one head.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearAttnState<R> {
    pub dk: usize,
    pub dv: usize,
    /// dk × dv accumulator of φ(k) vᵀ.
    pub s: Vec<R>,
    /// Accumulator of φ(k).
    pub z: Vec<R>,
}

impl<R: Real> LinearAttnState<R> {
    pub fn new(dk: usize, dv: usize) -> Self {
        LinearAttnState {
            dk,
            dv,
            s: vec![R::zero(); dk * dv],
            z: vec![R::zero(); dk],
        }
    }

    /// Absorbs one key/value pair and writes the attention output for the
    /// matching query into `y`.
    pub fn step(&mut self, pq: &[R], pk: &[R], v: &[R], y: &mut [R]) {
        let dv = self.dv;
        for (i, &k) in pk.iter().enumerate() {
            self.z[i] += k;
            let srow = &mut self.s[i * dv..(i + 1) * dv];
            for (sv, &vv) in srow.iter_mut().zip(v) {
                *sv += k * vv;
            }
        }
        let den = dot(pq, &self.z) + R::lit(LINEAR_ATTN_EPS);
        y.iter_mut().for_each(|o| *o = R::zero());
        vecmat_acc(pq, &self.s, dv, y);
        y.iter_mut().for_each(|o| *o /= den);
    }
}

/// Gradients of [`causal_linear_attention`] w.r.t. (φq, φk, v).
pub fn causal_linear_attention_backward<R: Real>(
    pq: &[R],
    pk: &[R],
    v: &[R],
    y: &[R],
    dy: &[R],
    t: usize,
    dk: usize,
    dv: usize,
) -> (Vec<R>, Vec<R>, Vec<R>) {
    let eps = R::lit(LINEAR_ATTN_EPS);
    let mut dpq = vec![R::zero(); t * dk];
    let mut dpk = vec![R::zero(); t * dk];
    let mut dvv = vec![R::zero(); t * dv];
    // per-step numerator/denominator gradients
    let mut gnum = vec![R::zero(); t * dv];
    let mut gden = vec![R::zero(); t];

    // forward sweep: rebuild S_t, z_t and get dφq
    let mut s = vec![R::zero(); dk * dv];
    let mut z = vec![R::zero(); dk];
    for step in 0..t {
        let q = &pq[step * dk..(step + 1) * dk];
        let k = &pk[step * dk..(step + 1) * dk];
        let vv = &v[step * dv..(step + 1) * dv];
        for i in 0..dk {
            z[i] += k[i];
            for j in 0..dv {
                s[i * dv + j] += k[i] * vv[j];
            }
        }
        let den = dot(q, &z) + eps;
        let dyt = &dy[step * dv..(step + 1) * dv];
        let yt = &y[step * dv..(step + 1) * dv];
        let gd = -dot(dyt, yt) / den;
        gden[step] = gd;
        for j in 0..dv {
            gnum[step * dv + j] = dyt[j] / den;
        }
        let gn = &gnum[step * dv..(step + 1) * dv];
        let dq = &mut dpq[step * dk..(step + 1) * dk];
        for i in 0..dk {
            dq[i] = dot(&s[i * dv..(i + 1) * dv], gn) + z[i] * gd;
        }
    }

    // backward sweep: R_s = Σ_{t≥s} φq_t g_num_tᵀ, r_s = Σ_{t≥s} g_den_t φq_t
    let mut racc = vec![R::zero(); dk * dv];
    let mut rvec = vec![R::zero(); dk];
    for step in (0..t).rev() {
        let q = &pq[step * dk..(step + 1) * dk];
        let gn = &gnum[step * dv..(step + 1) * dv];
        for i in 0..dk {
            rvec[i] += gden[step] * q[i];
            for j in 0..dv {
                racc[i * dv + j] += q[i] * gn[j];
            }
        }
        let k = &pk[step * dk..(step + 1) * dk];
        let vv = &v[step * dv..(step + 1) * dv];
        for i in 0..dk {
            dpk[step * dk + i] = dot(&racc[i * dv..(i + 1) * dv], vv) + rvec[i];
        }
        for j in 0..dv {
            let mut acc = R::zero();
            for i in 0..dk {
                acc += racc[i * dv + j] * k[i];
            }
            dvv[step * dv + j] = acc;
        }
    }
    (dpq, dpk, dvv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        (0..m * n)
            .map(|ij| (0..k).map(|p| a[ij / n * k + p] * b[p * n + ij % n]).sum())
            .collect()
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        (0..r * c).map(|ji| x[ji % r * c + ji / r]).collect()
    }

    #[test]
    fn matmul_variants_agree_with_the_triple_loop() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.61).cos()).collect();
        let c = naive(&a, &b, m, k, n);
        assert_eq!(matmul(&a, &b, m, k, n), c);
        let tn = matmul_tn(&transpose(&a, m, k), &b, k, m, n);
        let nt = matmul_nt(&a, &transpose(&b, k, n), m, k, n);
        for ((x, y), z) in c.iter().zip(&tn).zip(&nt) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions_and_match_log_softmax() {
        let x = [1000.0, 1001.0, 999.0, -3.0, 0.0, 2.0];
        let p = softmax_rows(&x, 3);
        let lp = log_softmax_rows(&x, 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for (a, b) in p.iter().zip(&lp) {
            assert!((a.ln() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn block_normalization_has_zero_mean_and_unit_variance() {
        let x: Vec<f64> = (0..12).map(|i| (i * i) as f64).collect();
        let (xhat, inv) = normalize_blocks(&x, 4);
        assert_eq!(inv.len(), 3);
        for seg in xhat.chunks(4) {
            let mean = seg.iter().sum::<f64>() / 4.0;
            let var = seg.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn conv_geometry_rounds_output_up() {
        let g = ConvGeom {
            c_in: 1,
            c_out: 1,
            t_in: 9,
            kernel: 4,
            stride: 2,
            dilation: 3,
            groups: 1,
        };
        assert_eq!(g.t_out(), 5);
        assert_eq!(g.left_pad(), 4);
    }

    #[test]
    fn identity_kernel_convolution_copies_input() {
        let g = ConvGeom {
            c_in: 2,
            c_out: 2,
            t_in: 5,
            kernel: 3,
            stride: 1,
            dilation: 1,
            groups: 1,
        };
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        // w[o][i][k] = 1 when o == i and k is the centre tap
        let mut w = vec![0.0; 2 * 2 * 3];
        w[1] = 1.0;
        w[3 * 3 + 1] = 1.0;
        assert_eq!(conv1d_forward(&x, &w, None, &g), x);
    }

    #[test]
    fn first_linear_attention_output_is_its_value() {
        let y: Vec<f64> = causal_linear_attention(&[0.3, 2.0], &[1.5, 0.7], &[4.0, -1.0, 0.5], 1, 2, 3);
        let qk = 0.3 * 1.5 + 2.0 * 0.7;
        for (a, b) in y.iter().zip([4.0, -1.0, 0.5]) {
            assert!((a - b * qk / (qk + LINEAR_ATTN_EPS)).abs() < 1e-12);
        }
    }
}
