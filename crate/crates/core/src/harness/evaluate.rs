//! Combined metrics report over both trained stages.

use std::path::Path;

use numkit::Real;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::extract::CodeDataset;
use super::train_lm::evaluate_lm;
use super::train_vq::evaluate_vq;
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::vqvae::VqVae;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recon_mse: f64,
    /// Top, middle, bottom.
    pub perplexity: [f64; 3],
    pub phoneme_error_rate: f64,
    /// Absent when no language model was evaluated.
    pub top_accuracy: Option<f64>,
    pub mixed_accuracy: Option<f64>,
    pub monotonic_violation_rate: Option<f64>,
}

impl EvalReport {
    pub fn validate(&self, codebook_size: usize) -> Result<()> {
        let lm = [self.top_accuracy, self.mixed_accuracy, self.monotonic_violation_rate];
        let finite = self.recon_mse.is_finite()
            && self.phoneme_error_rate.is_finite()
            && self.perplexity.iter().all(|p| p.is_finite())
            && lm.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Input(format!("non-finite metric in {self:?}")));
        }
        let m = codebook_size as f64;
        if self.perplexity.iter().any(|&p| !(1.0 - 1e-9..=m + 1e-9).contains(&p)) {
            return Err(Error::Input(format!(
                "perplexity {:?} outside [1, {m}]",
                self.perplexity
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

pub fn evaluate<A: Real, B: Real>(
    vq: &VqVae<A>,
    corpus: &Corpus,
    lm: Option<(&LanguageModel<B>, &CodeDataset)>,
) -> Result<EvalReport> {
    let v = evaluate_vq(vq, corpus)?;
    let l = lm.map(|(m, d)| evaluate_lm(m, d)).transpose()?;
    let report = EvalReport {
        recon_mse: v.recon_mse,
        perplexity: v.perplexity,
        phoneme_error_rate: v.per,
        top_accuracy: l.as_ref().map(|e| e.top_accuracy),
        mixed_accuracy: l.as_ref().map(|e| e.mixed_accuracy),
        monotonic_violation_rate: l.as_ref().map(|e| e.monotonic_violation_rate),
    };
    report.validate(vq.cfg.codebook_size)?;
    Ok(report)
}
