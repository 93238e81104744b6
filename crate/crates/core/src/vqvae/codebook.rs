use rand::Rng;

use numkit::Real;

use crate::error::{Error, Result};

/// `M` prototypes of dimension `D` refreshed by exponential moving averages
/// of the encoder outputs assigned to them.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<R> {
    pub m: usize,
    pub d: usize,
    /// Row-major `M×D`.
    pub prototypes: Vec<R>,
    pub ema_counts: Vec<R>,
    pub ema_sums: Vec<R>,
    pub gamma: f64,
    pub eps: f64,
}

impl<R: Real> Codebook<R> {
    /// Prototypes uniform in `[−bound, bound]`; the EMA state starts as one
    /// observation of each prototype so the first update is well scaled.
    pub fn new(m: usize, d: usize, bound: f64, gamma: f64, eps: f64, rng: &mut impl Rng) -> Result<Self> {
        if m < 2 || d == 0 {
            return Err(Error::Config(format!(
                "codebook needs M ≥ 2 and D ≥ 1, got M={m} D={d}"
            )));
        }
        let prototypes: Vec<R> = (0..m * d).map(|_| R::lit(rng.gen_range(-bound..=bound))).collect();
        Ok(Codebook {
            m,
            d,
            ema_sums: prototypes.clone(),
            prototypes,
            ema_counts: vec![R::one(); m],
            gamma,
            eps,
        })
    }

    /// Replaces every prototype with a randomly drawn input row and resets
    /// the EMA state to one observation of it.
    pub fn init_from(&mut self, rows: &[R], rng: &mut impl Rng) -> Result<()> {
        if rows.is_empty() || !rows.len().is_multiple_of(self.d) {
            return Err(Error::Input(format!(
                "need a non-empty multiple of D={} values",
                self.d
            )));
        }
        let n = rows.len() / self.d;
        for j in 0..self.m {
            let i = rng.gen_range(0..n);
            self.prototypes[j * self.d..(j + 1) * self.d].copy_from_slice(&rows[i * self.d..(i + 1) * self.d]);
        }
        self.ema_sums = self.prototypes.clone();
        self.ema_counts = vec![R::one(); self.m];
        Ok(())
    }

    pub fn prototype(&self, j: usize) -> &[R] {
        &self.prototypes[j * self.d..(j + 1) * self.d]
    }

    /// Nearest prototype by squared distance; the lowest index wins ties.
    pub fn nearest(&self, h: &[R]) -> usize {
        let mut best = 0;
        let mut best_d = R::infinity();
        for j in 0..self.m {
            let dist = self
                .prototype(j)
                .iter()
                .zip(h)
                .map(|(&e, &x)| (x - e) * (x - e))
                .sum::<R>();
            if dist < best_d {
                best_d = dist;
                best = j;
            }
        }
        best
    }

    /// Codes for row-major `L×D` vectors.
    pub fn assign(&self, rows: &[R]) -> Result<Vec<usize>> {
        if !rows.len().is_multiple_of(self.d) {
            return Err(Error::Input(format!(
                "latent length {} is not a multiple of D={}",
                rows.len(),
                self.d
            )));
        }
        Ok(rows.chunks(self.d).map(|h| self.nearest(h)).collect())
    }

    /// Row-major `L×D` prototypes for the given codes.
    pub fn lookup(&self, codes: &[usize]) -> Result<Vec<R>> {
        let mut out = Vec::with_capacity(codes.len() * self.d);
        for &c in codes {
            if c >= self.m {
                return Err(Error::Input(format!("code {c} outside codebook of size {}", self.m)));
            }
            out.extend_from_slice(self.prototype(c));
        }
        Ok(out)
    }

    /// One EMA step from a batch of `L×D` vectors and their codes, followed
    /// by the Laplace-smoothed prototype refresh.
    pub fn ema_update(&mut self, rows: &[R], codes: &[usize]) -> Result<()> {
        if rows.len() != codes.len() * self.d {
            return Err(Error::Input(format!(
                "{} codes for {} latent values of dimension {}",
                codes.len(),
                rows.len(),
                self.d
            )));
        }
        let mut n = vec![0.0f64; self.m];
        let mut s = vec![0.0f64; self.m * self.d];
        for (h, &c) in rows.chunks(self.d).zip(codes) {
            if c >= self.m {
                return Err(Error::Input(format!("code {c} outside codebook of size {}", self.m)));
            }
            n[c] += 1.0;
            for (acc, &x) in s[c * self.d..(c + 1) * self.d].iter_mut().zip(h) {
                *acc += x.as_f64();
            }
        }
        let g = self.gamma;
        for j in 0..self.m {
            self.ema_counts[j] = R::lit(g * self.ema_counts[j].as_f64() + (1.0 - g) * n[j]);
        }
        for (e, &x) in self.ema_sums.iter_mut().zip(&s) {
            *e = R::lit(g * e.as_f64() + (1.0 - g) * x);
        }
        let total: f64 = self.ema_counts.iter().map(|c| c.as_f64()).sum();
        let denom = total + self.m as f64 * self.eps;
        for j in 0..self.m {
            let smoothed = (self.ema_counts[j].as_f64() + self.eps) / denom * total;
            for k in 0..self.d {
                let idx = j * self.d + k;
                self.prototypes[idx] = R::lit(self.ema_sums[idx].as_f64() / smoothed);
            }
        }
        Ok(())
    }

    pub fn cast<S: Real>(&self) -> Codebook<S> {
        let c = |v: &[R]| v.iter().map(|x| S::lit(x.as_f64())).collect();
        Codebook {
            m: self.m,
            d: self.d,
            prototypes: c(&self.prototypes),
            ema_counts: c(&self.ema_counts),
            ema_sums: c(&self.ema_sums),
            gamma: self.gamma,
            eps: self.eps,
        }
    }
}

/// `exp(H)` of the empirical code distribution.
pub fn perplexity(codes: &[usize], m: usize) -> f64 {
    if codes.is_empty() {
        return 1.0;
    }
    let mut counts = vec![0usize; m];
    for &c in codes {
        counts[c.min(m - 1)] += 1;
    }
    let n = codes.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn book(m: usize, d: usize, gamma: f64) -> Codebook<f64> {
        Codebook::new(m, d, 0.05, gamma, 1e-5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn exact_prototype_maps_to_itself() {
        let cb = book(8, 4, 0.99);
        assert_eq!(cb.nearest(cb.prototype(3)), 3);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut cb = book(3, 2, 0.99);
        cb.prototypes = vec![5.0, 5.0, 1.0, 0.0, -1.0, 0.0];
        assert_eq!(cb.nearest(&[0.0, 0.0]), 1);
        assert_eq!(cb.nearest(&[0.0, 3.0]), 1);
    }

    #[test]
    fn gamma_zero_snaps_to_batch_mean() {
        let mut cb = book(4, 2, 0.0);
        let rows = [1.0, 2.0, 3.0, 6.0];
        cb.ema_update(&rows, &[0, 0]).unwrap();
        // counts (2,0,0,0); smoothed count of code 0 is (2+ε)/(2+4ε)·2
        let sm = (2.0 + 1e-5) / (2.0 + 4e-5) * 2.0;
        assert!((cb.prototype(0)[0] - 4.0 / sm).abs() < 1e-12);
        assert!((cb.prototype(0)[1] - 8.0 / sm).abs() < 1e-12);
        assert!((cb.prototype(0)[0] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn unassigned_code_follows_scalar_recurrence() {
        let mut cb = book(2, 1, 0.99);
        let (mut c0, mut c1) = (1.0, 1.0);
        let (mut s0, mut s1) = (cb.ema_sums[0], cb.ema_sums[1]);
        for _ in 0..50 {
            cb.ema_update(&[0.7], &[0]).unwrap();
            c0 = 0.99 * c0 + 0.01;
            c1 *= 0.99;
            s0 = 0.99 * s0 + 0.01 * 0.7;
            s1 *= 0.99;
            let n = c0 + c1;
            let sm1 = (c1 + 1e-5) / (n + 2e-5) * n;
            let sm0 = (c0 + 1e-5) / (n + 2e-5) * n;
            assert!((cb.ema_counts[1] - c1).abs() < 1e-12);
            assert!((cb.prototypes[1] - s1 / sm1).abs() < 1e-9);
            assert!((cb.prototypes[0] - s0 / sm0).abs() < 1e-9);
        }
    }

    #[test]
    fn long_starvation_stays_finite() {
        let mut cb = book(4, 2, 0.99);
        for _ in 0..20_000 {
            cb.ema_update(&[0.1, 0.2], &[0]).unwrap();
        }
        assert!(cb.prototypes.iter().all(|v| v.is_finite()));
        assert!(cb.ema_counts.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn perplexity_bounds() {
        assert!((perplexity(&[2, 2, 2], 8) - 1.0).abs() < 1e-12);
        assert!((perplexity(&[0, 1, 2, 3], 8) - 4.0).abs() < 1e-12);
    }
}
