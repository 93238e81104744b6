//! Code language model: a lyrics-conditioned top-level decoder and a causal
//! decoder over interleaved middle/bottom codes.

pub mod attention;
pub mod interleave;
pub mod mixed;
pub mod sampling;
pub mod top;

use std::path::Path;

use numkit::{Graph, ParamStore, Real};
use rand::Rng;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::vqvae::{load_params, CodeTriple};

pub use attention::{diagonal_penalty, monotonicity_violations, AttentionState, LocationAttention, GUIDE_WIDTH};
pub use interleave::{deinterleave, interleave, tick, Level, MixedSequence};
pub use mixed::{MixedDecoder, MixedState, Upsampler};
pub use sampling::{nucleus_sample, SamplerConfig};
pub use top::{LyricsEncoder, LyricsMemory, TopDecoder};

pub const MAGIC: &[u8; 4] = b"KLM1";

#[derive(Clone, Debug, PartialEq)]
pub struct LmConfig {
    pub codebook_size: usize,
    pub n_phonemes: usize,
    pub phone_dim: usize,
    pub enc_convs: usize,
    pub enc_kernel: usize,
    pub norm_groups: usize,
    pub code_dim: usize,
    pub prenet_dim: usize,
    pub prenet_dropout: f64,
    pub att_rnn: usize,
    pub dec_rnn: usize,
    pub attn_dim: usize,
    pub loc_filters: usize,
    pub loc_kernel: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub up_dilations: Vec<usize>,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            codebook_size: 256,
            n_phonemes: 10,
            phone_dim: 64,
            enc_convs: 3,
            enc_kernel: 5,
            norm_groups: 4,
            code_dim: 64,
            prenet_dim: 64,
            prenet_dropout: 0.5,
            att_rnn: 128,
            dec_rnn: 128,
            attn_dim: 64,
            loc_filters: 32,
            loc_kernel: 31,
            d_model: 64,
            n_layers: 3,
            n_heads: 4,
            ffn_dim: 256,
            up_dilations: vec![1, 2, 4, 8],
        }
    }
}

impl LmConfig {
    pub fn memory_dim(&self) -> usize {
        self.phone_dim
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.codebook_size < 2 || self.n_phonemes == 0 {
            return err("codebook_size ≥ 2 and n_phonemes ≥ 1 required".into());
        }
        if !self.phone_dim.is_multiple_of(2) || !self.phone_dim.is_multiple_of(self.norm_groups) {
            return err(format!(
                "phone_dim {} must be even and divisible by norm_groups {}",
                self.phone_dim, self.norm_groups
            ));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return err(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.enc_kernel.is_multiple_of(2) || self.loc_kernel.is_multiple_of(2) {
            return err("encoder and location kernels must be odd".into());
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return err(format!("prenet_dropout {} outside [0, 1)", self.prenet_dropout));
        }
        let dims = [
            self.code_dim,
            self.prenet_dim,
            self.att_rnn,
            self.dec_rnn,
            self.attn_dim,
            self.loc_filters,
            self.d_model,
            self.ffn_dim,
        ];
        if dims.contains(&0) {
            return err("layer widths must be positive".into());
        }
        if self.up_dilations.contains(&0) {
            return err("upsampler dilations must be positive".into());
        }
        Ok(())
    }

    fn write(&self, c: &mut Container) {
        c.set("codebook_size", self.codebook_size);
        c.set("n_phonemes", self.n_phonemes);
        c.set("phone_dim", self.phone_dim);
        c.set("enc_convs", self.enc_convs);
        c.set("enc_kernel", self.enc_kernel);
        c.set("norm_groups", self.norm_groups);
        c.set("code_dim", self.code_dim);
        c.set("prenet_dim", self.prenet_dim);
        c.set("prenet_dropout", self.prenet_dropout);
        c.set("att_rnn", self.att_rnn);
        c.set("dec_rnn", self.dec_rnn);
        c.set("attn_dim", self.attn_dim);
        c.set("loc_filters", self.loc_filters);
        c.set("loc_kernel", self.loc_kernel);
        c.set("d_model", self.d_model);
        c.set("n_layers", self.n_layers);
        c.set("n_heads", self.n_heads);
        c.set("ffn_dim", self.ffn_dim);
        let dil: Vec<String> = self.up_dilations.iter().map(|d| d.to_string()).collect();
        c.set("up_dilations", dil.join(","));
    }

    fn read(c: &Container) -> Result<Self> {
        let dil: String = c.get("up_dilations")?;
        let up_dilations = dil
            .split(',')
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("bad dilation list `{dil}`")))
            })
            .collect::<Result<_>>()?;
        let cfg = LmConfig {
            codebook_size: c.get("codebook_size")?,
            n_phonemes: c.get("n_phonemes")?,
            phone_dim: c.get("phone_dim")?,
            enc_convs: c.get("enc_convs")?,
            enc_kernel: c.get("enc_kernel")?,
            norm_groups: c.get("norm_groups")?,
            code_dim: c.get("code_dim")?,
            prenet_dim: c.get("prenet_dim")?,
            prenet_dropout: c.get("prenet_dropout")?,
            att_rnn: c.get("att_rnn")?,
            dec_rnn: c.get("dec_rnn")?,
            attn_dim: c.get("attn_dim")?,
            loc_filters: c.get("loc_filters")?,
            loc_kernel: c.get("loc_kernel")?,
            d_model: c.get("d_model")?,
            n_layers: c.get("n_layers")?,
            n_heads: c.get("n_heads")?,
            ffn_dim: c.get("ffn_dim")?,
            up_dilations,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Losses and accuracies of one teacher-forced pass.
#[derive(Clone, Debug)]
pub struct LmForward {
    pub top_loss: numkit::Var,
    pub mixed_loss: numkit::Var,
    pub total: numkit::Var,
    /// Mean per-step off-diagonal attention mass, weighted by
    /// [`diagonal_penalty`]. Not part of `total`.
    pub guide_loss: numkit::Var,
    pub top_correct: usize,
    pub top_count: usize,
    pub mixed_correct: usize,
    pub mixed_count: usize,
    /// Attention weights of each top step.
    pub alignment: Vec<Vec<f64>>,
}

pub struct LanguageModel<R> {
    pub cfg: LmConfig,
    pub store: ParamStore<R>,
    pub encoder: LyricsEncoder,
    pub top: TopDecoder,
    pub upsampler: Upsampler,
    pub mixed: MixedDecoder,
}

fn argmax_hits<R: Real>(logits: &numkit::Tensor<R>, targets: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(targets)
        .filter(|(row, &t)| (0..k).fold(0, |b, i| if row[i] > row[b] { i } else { b }) == t)
        .count()
}

/// Output of sampling one section.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub codes: CodeTriple,
    /// The top decoder never produced STOP before `max_top_len`.
    pub truncated: bool,
}

impl<R: Real> LanguageModel<R> {
    pub fn new(cfg: LmConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut s = ParamStore::new();
        let encoder = LyricsEncoder::new(&mut s, &cfg, rng);
        let top = TopDecoder::new(&mut s, &cfg, rng);
        let upsampler = Upsampler::new(&mut s, &cfg, rng);
        let mixed = MixedDecoder::new(&mut s, &cfg, rng);
        Ok(LanguageModel {
            cfg,
            store: s,
            encoder,
            top,
            upsampler,
            mixed,
        })
    }

    fn check_phonemes(&self, ph: &[usize]) -> Result<()> {
        if ph.is_empty() {
            return Err(Error::EmptyLyric);
        }
        match ph.iter().find(|&&p| p == 0 || p > self.cfg.n_phonemes) {
            Some(&bad) => Err(Error::Input(format!(
                "phoneme id {bad} outside 1..={}",
                self.cfg.n_phonemes
            ))),
            None => Ok(()),
        }
    }

    pub fn encode_lyrics(&self, g: &mut Graph<R>, phonemes: &[usize]) -> Result<LyricsMemory> {
        self.check_phonemes(phonemes)?;
        self.encoder.encode(g, &self.store, phonemes)
    }

    /// Joint teacher-forced objective: top cross-entropy (including STOP)
    /// plus mixed cross-entropy averaged over all mixed tokens.
    /// Uses the parameters in `s`, which must have the layout of `self.store`.
    pub fn forward(
        &self,
        g: &mut Graph<R>,
        s: &ParamStore<R>,
        phonemes: &[usize],
        codes: &CodeTriple,
        dropout: Option<&mut dyn rand::RngCore>,
    ) -> Result<LmForward> {
        codes.check_range(self.cfg.codebook_size)?;
        self.check_phonemes(phonemes)?;
        let mem = self.encoder.encode(g, s, phonemes)?;
        let (logits, targets, align) = self.top.teacher_forced(g, s, &mem, &codes.top, dropout)?;
        let top_loss = g.cross_entropy(logits, &targets)?;
        let top_correct = argmax_hits(g.value(logits), &targets);

        let mix = interleave(&codes.mid, &codes.bot)?;
        let cond = self.upsampler.forward(g, s, &codes.top)?;
        let (lm, tm, lb, tb) = self.mixed.teacher_forced(g, s, &mix, cond)?;
        let ce_m = g.cross_entropy(lm, &tm)?;
        let ce_b = g.cross_entropy(lb, &tb)?;
        let n = (tm.len() + tb.len()) as f64;
        let wm = g.scale(ce_m, R::lit(tm.len() as f64 / n));
        let wb = g.scale(ce_b, R::lit(tb.len() as f64 / n));
        let mixed_loss = g.add(wm, wb)?;
        let mixed_correct = argmax_hits(g.value(lm), &tm) + argmax_hits(g.value(lb), &tb);
        let total = g.add(top_loss, mixed_loss)?;
        let weights = g.concat_rows(&align)?;
        let penalty = g.constant(diagonal_penalty(align.len(), phonemes.len(), GUIDE_WIDTH));
        let off = g.mul(weights, penalty)?;
        let off = g.sum(off);
        let guide_loss = g.scale(off, R::lit(1.0 / align.len() as f64));
        let alignment = align
            .iter()
            .map(|&w| g.value(w).data().iter().map(|v| v.as_f64()).collect())
            .collect();
        Ok(LmForward {
            top_loss,
            mixed_loss,
            total,
            guide_loss,
            top_correct,
            top_count: targets.len(),
            mixed_correct,
            mixed_count: mix.len(),
            alignment,
        })
    }

    /// Samples top codes, optionally continuing after a teacher-forced
    /// `prefix`. Returns only the new codes.
    fn sample_top(
        &self,
        phonemes: &[usize],
        prefix: &[usize],
        max_new: usize,
        cfg: &SamplerConfig,
        rng: &mut impl Rng,
    ) -> Result<(Vec<usize>, bool)> {
        let s = &self.store;
        let mut g = Graph::inference();
        let mem = self.encode_lyrics(&mut g, phonemes)?;
        let p = self.top.prepare(&mut g, s, &mem)?;
        let mut st = self.top.initial_state(&mut g, &p);
        let mut prev = self.top.start();
        for &c in prefix {
            let pre = self.top.prenet(&mut g, s, &[prev], None)?;
            st = self.top.step(&mut g, s, pre, &st, &p)?.1;
            prev = c;
        }
        let mut out = Vec::new();
        while out.len() < max_new {
            let pre = self.top.prenet(&mut g, s, &[prev], None)?;
            let (feat, next) = self.top.step(&mut g, s, pre, &st, &p)?;
            st = next;
            let logits = self.top.logits(&mut g, s, feat)?;
            let mut l: Vec<f64> = g.value(logits).data().iter().map(|v| v.as_f64()).collect();
            if out.is_empty() && prefix.is_empty() {
                // at least one frame per section
                l[self.top.stop()] = f64::NEG_INFINITY;
            }
            let c = nucleus_sample(&l, cfg, rng);
            if c == self.top.stop() {
                return Ok((out, false));
            }
            out.push(c);
            prev = c;
        }
        Ok((out, true))
    }

    /// Samples the mixed sequence for `top`, teacher-forcing its first
    /// `prefix.len()` tokens. Returns only the sampled tokens.
    fn sample_mixed(
        &self,
        top: &[usize],
        prefix: &[usize],
        cfg: &SamplerConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<usize>> {
        let s = &self.store;
        let mut g = Graph::inference();
        let cond = self.upsampler.forward(&mut g, s, top)?;
        let rows = mixed::rows_of(g.value(cond));
        let mut st = self.mixed.initial_state();
        let mut out = Vec::with_capacity(rows.len() - prefix.len());
        for (i, row) in rows.iter().enumerate() {
            if let Some(&t) = prefix.get(i) {
                self.mixed.advance(&mut st, t)?;
                continue;
            }
            let logits = self.mixed.step(s, &mut st, row)?;
            let l: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
            let t = nucleus_sample(&l, cfg, rng);
            self.mixed.advance(&mut st, t)?;
            out.push(t);
        }
        Ok(out)
    }

    /// Samples a code triple for one phoneme sequence.
    pub fn generate(&self, phonemes: &[usize], cfg: &SamplerConfig, rng: &mut impl Rng) -> Result<Generated> {
        cfg.validate()?;
        let (top, truncated) = self.sample_top(phonemes, &[], cfg.max_top_len, cfg, rng)?;
        if truncated {
            log::warn!("top decoder reached max_top_len={} without STOP", cfg.max_top_len);
        }
        let mixed = self.sample_mixed(&top, &[], cfg, rng)?;
        let (mid, bot) = deinterleave(&MixedSequence { tokens: mixed })?;
        Ok(Generated {
            codes: CodeTriple::new(top, mid, bot)?,
            truncated,
        })
    }

    /// Section-by-section sampling. Each section is primed with the last
    /// `window − hop` top frames generated so far (and their middle and
    /// bottom codes) as a teacher-forced prefix; only new codes are kept.
    /// Returns the concatenation and every primed window.
    pub fn windowed_generate(
        &self,
        sections: &[Vec<usize>],
        window: usize,
        hop: usize,
        cfg: &SamplerConfig,
        rng: &mut impl Rng,
    ) -> Result<(Generated, Vec<CodeTriple>)> {
        cfg.validate()?;
        if hop == 0 || hop > window || window > cfg.max_top_len {
            return Err(Error::Config(format!(
                "need 0 < hop ≤ window ≤ max_top_len, got hop={hop} window={window} max_top_len={}",
                cfg.max_top_len
            )));
        }
        if sections.is_empty() {
            return Err(Error::EmptyLyric);
        }
        let mut all: Option<CodeTriple> = None;
        let mut windows = Vec::new();
        let mut truncated = false;
        for ph in sections {
            let prefix = match &all {
                Some(c) => {
                    let k = (window - hop).min(c.len());
                    c.slice(c.len() - k, k)
                }
                None => CodeTriple::default(),
            };
            let k = prefix.len();
            let (new_top, trunc) = self.sample_top(ph, &prefix.top, cfg.max_top_len - k, cfg, rng)?;
            truncated |= trunc;
            if new_top.is_empty() {
                continue;
            }
            let mut top = prefix.top.clone();
            top.extend_from_slice(&new_top);
            let primed = interleave(&prefix.mid, &prefix.bot)?;
            let new_mix = self.sample_mixed(&top, &primed.tokens, cfg, rng)?;
            let (mid, bot) = deinterleave(&MixedSequence { tokens: new_mix })?;
            let fresh = CodeTriple::new(new_top, mid, bot)?;
            let mut win = prefix;
            win.extend(&fresh);
            windows.push(win);
            match &mut all {
                Some(c) => c.extend(&fresh),
                None => all = Some(fresh),
            }
        }
        let codes = all.ok_or(Error::EmptyLyric)?;
        Ok((Generated { codes, truncated }, windows))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        self.cfg.write(&mut c);
        for (_, p) in self.store.iter() {
            c.push(
                p.name.clone(),
                p.value.shape(),
                p.value.data().iter().map(|v| v.as_f64() as f32).collect(),
            );
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let cfg = LmConfig::read(c)?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let mut model = LanguageModel::new(cfg, &mut rng)?;
        load_params(&mut model.store, c)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path, MAGIC)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, MAGIC)?)
    }

    pub fn cast<S: Real>(&self) -> LanguageModel<S> {
        LanguageModel {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            top: self.top.clone(),
            upsampler: self.upsampler.clone(),
            mixed: self.mixed.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use numkit::gradcheck::{grad_check, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_cfg() -> LmConfig {
        LmConfig {
            codebook_size: 8,
            n_phonemes: 5,
            phone_dim: 8,
            enc_convs: 1,
            enc_kernel: 3,
            norm_groups: 2,
            code_dim: 6,
            prenet_dim: 6,
            prenet_dropout: 0.5,
            att_rnn: 8,
            dec_rnn: 8,
            attn_dim: 6,
            loc_filters: 3,
            loc_kernel: 3,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 12,
            up_dilations: vec![1, 2],
        }
    }

    fn random_codes(l: usize, m: usize, rng: &mut impl Rng) -> CodeTriple {
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(0..m)).collect();
        CodeTriple::new(draw(l), draw(2 * l), draw(4 * l)).unwrap()
    }

    fn model(seed: u64) -> LanguageModel<f64> {
        LanguageModel::new(tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(LmConfig::default().validate().is_ok());
        let bad = LmConfig {
            n_heads: 3,
            ..tiny_cfg()
        };
        assert!(bad.validate().is_err());
        let bad = LmConfig {
            loc_kernel: 4,
            ..tiny_cfg()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn forward_counts_and_finite_loss() {
        let lm = model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let codes = random_codes(5, 8, &mut rng);
        let mut g = Graph::new();
        let f = lm.forward(&mut g, &lm.store, &[1, 2, 3], &codes, None).unwrap();
        assert_eq!(f.top_count, 6);
        assert_eq!(f.mixed_count, 30);
        assert_eq!(f.alignment.len(), 6);
        let total = g.value(f.total).data()[0];
        assert!(total.is_finite() && total > 0.0);
        assert!(lm.forward(&mut g, &lm.store, &[0, 2], &codes, None).is_err());
        assert!(lm.forward(&mut g, &lm.store, &[6], &codes, None).is_err());
        assert!(lm.forward(&mut g, &lm.store, &[], &codes, None).is_err());
    }

    #[test]
    fn full_loss_gradients() {
        let mut lm = model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let codes = random_codes(3, 8, &mut rng);
        let mut store = std::mem::take(&mut lm.store);
        let rep = grad_check(
            &mut store,
            |g, s| {
                Ok(lm
                    .forward(g, s, &[2, 4, 1, 5], &codes, None)
                    .map_err(|e| numkit::NumError::Contract(e.to_string()))?
                    .total)
            },
            GradCheckOptions {
                eps: 1e-5,
                max_per_tensor: Some(6),
                ..GradCheckOptions::default()
            },
        )
        .unwrap();
        assert!(rep.passed(1e-4), "{rep:?}");
    }

    #[test]
    fn mixed_logits_ignore_future_tokens() {
        let lm = model(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let codes = random_codes(3, 8, &mut rng);
        let mix = interleave(&codes.mid, &codes.bot).unwrap();
        let mut g = Graph::inference();
        let cond = lm.upsampler.forward(&mut g, &lm.store, &codes.top).unwrap();
        let base = lm.mixed.all_logits(&mut g, &lm.store, &mix.tokens, cond).unwrap();
        for j in 0..mix.len() {
            let mut t = mix.tokens.clone();
            t[j] = (t[j] + 1 + rng.gen_range(0..7)) % 8;
            let out = lm.mixed.all_logits(&mut g, &lm.store, &t, cond).unwrap();
            for i in 0..=j {
                assert_eq!(out[i], base[i], "row {i} moved after perturbing token {j}");
            }
            if j + 1 < mix.len() {
                assert_ne!(out[j + 1], base[j + 1]);
            }
        }
    }

    #[test]
    fn incremental_path_matches_graph_path() {
        let lm = model(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let codes = random_codes(4, 8, &mut rng);
        let mix = interleave(&codes.mid, &codes.bot).unwrap();
        let mut g = Graph::inference();
        let cond = lm.upsampler.forward(&mut g, &lm.store, &codes.top).unwrap();
        let want = lm.mixed.all_logits(&mut g, &lm.store, &mix.tokens, cond).unwrap();
        let rows = mixed::rows_of(g.value(cond));
        let mut st = lm.mixed.initial_state();
        for (i, row) in rows.iter().enumerate() {
            let got = lm.mixed.step(&lm.store, &mut st, row).unwrap();
            for (a, b) in got.iter().zip(&want[i]) {
                assert!((a - b).abs() < 1e-9, "position {i}: {a} vs {b}");
            }
            lm.mixed.advance(&mut st, mix.tokens[i]).unwrap();
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let lm = model(9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.klm");
        lm.save(&path).unwrap();
        let back = LanguageModel::<f64>::load(&path).unwrap();
        assert_eq!(back.cfg, lm.cfg);
        for ((_, a), (_, b)) in lm.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert!(LanguageModel::<f64>::load(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn generation_is_seeded_and_well_formed() {
        let lm = model(10);
        let cfg = SamplerConfig {
            max_top_len: 12,
            ..SamplerConfig::default()
        };
        let a = lm
            .generate(&[1, 2, 3], &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let b = lm
            .generate(&[1, 2, 3], &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(a, b);
        let l = a.codes.len();
        assert!((1..=12).contains(&l));
        if a.truncated {
            assert_eq!(l, 12);
        }
        a.codes.check_range(8).unwrap();
        let short = SamplerConfig { max_top_len: 1, ..cfg };
        let c = lm.generate(&[4], &short, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(c.codes.len(), 1);
    }

    #[test]
    fn windows_are_primed_with_previous_output() {
        let lm = model(11);
        let cfg = SamplerConfig {
            max_top_len: 10,
            ..SamplerConfig::default()
        };
        let sections = vec![vec![1, 2], vec![3, 4, 5], vec![2]];
        let (out, windows) = lm
            .windowed_generate(&sections, 6, 4, &cfg, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        let fresh: usize = windows.len();
        assert!(fresh >= 1);
        let mut produced = CodeTriple::default();
        for w in &windows {
            let k = (6 - 4).min(produced.len());
            assert_eq!(w.slice(0, k), produced.slice(produced.len() - k, k));
            let new = w.slice(k, w.len() - k);
            produced.extend(&new);
        }
        assert_eq!(produced, out.codes);
        assert!(lm
            .windowed_generate(&sections, 4, 5, &cfg, &mut ChaCha8Rng::seed_from_u64(3))
            .is_err());
    }
}
