//! Temperature-scaled nucleus sampling.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub nucleus_p: f64,
    pub temperature: f64,
    pub seed: u64,
    pub max_top_len: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            nucleus_p: 0.9,
            temperature: 1.0,
            seed: 0,
            max_top_len: 256,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(Error::Config(format!("nucleus_p {} outside (0, 1]", self.nucleus_p)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.max_top_len == 0 {
            return Err(Error::Config("max_top_len must be positive".into()));
        }
        Ok(())
    }
}

/// Renormalized nucleus: `(token, probability)` in descending probability,
/// ties broken by the lower index.
pub fn nucleus(logits: &[f64], p: f64, temperature: f64) -> Vec<(usize, f64)> {
    let m = logits
        .iter()
        .map(|&v| v / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|&v| (v / temperature - m).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut cum = 0.0;
    for &i in &order {
        let q = w[i] / z;
        kept.push((i, q));
        cum += q;
        if cum >= p {
            break;
        }
    }
    let mass: f64 = kept.iter().map(|&(_, q)| q).sum();
    kept.into_iter().map(|(i, q)| (i, q / mass)).collect()
}

pub fn nucleus_sample(logits: &[f64], cfg: &SamplerConfig, rng: &mut impl Rng) -> usize {
    debug_assert!(logits.iter().all(|v| v.is_finite() || *v == f64::NEG_INFINITY));
    let kept = nucleus(logits, cfg.nucleus_p, cfg.temperature);
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for &(i, q) in &kept {
        cum += q;
        if u < cum {
            return i;
        }
    }
    kept.last().map(|&(i, _)| i).expect("nucleus keeps at least one token")
}
