//! Three-level vector-quantized autoencoder over log-mel spectrograms with a
//! CTC phoneme head on the top level.

pub mod codebook;
pub mod codes;
pub mod ctc;

use std::path::Path;

use numkit::nn::{BiGru, Conv1d, GroupNorm, Linear};
use numkit::{ConvSpec, Graph, ParamStore, Real, Tensor, Var};
use rand::Rng;

use crate::audiofront::MelSpectrogram;
use crate::container::Container;
use crate::error::{Error, Result};

pub use codebook::{perplexity, Codebook};
pub use codes::CodeTriple;

pub const MAGIC: &[u8; 4] = b"KVQ1";

/// Hierarchy levels in storage order.
pub const LEVELS: [&str; 3] = ["top", "mid", "bot"];
/// Downsampling factor of each level relative to the mel frame rate.
pub const FACTORS: [usize; 3] = [4, 2, 1];

#[derive(Clone, Debug, PartialEq)]
pub struct VqConfig {
    pub n_mels: usize,
    pub channels: usize,
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub n_phonemes: usize,
    pub g3_blocks: usize,
    pub conv_groups: usize,
    pub norm_groups: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub ema_eps: f64,
    pub codebook_init: f64,
    pub ctc_post_quant: bool,
    /// Normalize every latent vector to zero mean and unit variance over its
    /// components before quantization.
    pub latent_norm: bool,
    pub mel_mean: f64,
    pub mel_std: f64,
    pub audio_fingerprint: String,
}

impl Default for VqConfig {
    fn default() -> Self {
        VqConfig {
            n_mels: 80,
            channels: 32,
            latent_dim: 16,
            codebook_size: 256,
            n_phonemes: 10,
            g3_blocks: 2,
            conv_groups: 4,
            norm_groups: 4,
            lambda: 0.25,
            alpha: 0.10,
            gamma: 0.99,
            ema_eps: 1e-5,
            codebook_init: 0.05,
            ctc_post_quant: false,
            latent_norm: false,
            mel_mean: 0.0,
            mel_std: 1.0,
            audio_fingerprint: String::new(),
        }
    }
}

impl VqConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        let err = |m: String| Err(Error::Config(m));
        if c == 0 || !c.is_multiple_of(2) {
            return err(format!("channels must be even and positive, got {c}"));
        }
        if !c.is_multiple_of(self.conv_groups) || !c.is_multiple_of(self.norm_groups) {
            return err(format!(
                "channels {c} not divisible by conv_groups {} / norm_groups {}",
                self.conv_groups, self.norm_groups
            ));
        }
        if self.codebook_size < 2 || self.codebook_size > u16::MAX as usize + 1 {
            return err(format!("codebook_size {} outside 2..=65536", self.codebook_size));
        }
        if self.latent_dim == 0 || self.n_mels == 0 || self.n_phonemes == 0 {
            return err("latent_dim, n_mels and n_phonemes must be positive".into());
        }
        if self.lambda < 0.0 || self.alpha < 0.0 {
            return err(format!("λ={} and α={} must be non-negative", self.lambda, self.alpha));
        }
        if !(0.0..1.0).contains(&self.gamma) || self.ema_eps <= 0.0 {
            return err(format!(
                "need 0 ≤ γ < 1 and ε > 0, got γ={} ε={}",
                self.gamma, self.ema_eps
            ));
        }
        if !(self.mel_std > 0.0) {
            return err(format!("mel_std must be positive, got {}", self.mel_std));
        }
        Ok(())
    }

    fn write(&self, c: &mut Container) {
        c.set("n_mels", self.n_mels);
        c.set("channels", self.channels);
        c.set("latent_dim", self.latent_dim);
        c.set("codebook_size", self.codebook_size);
        c.set("n_phonemes", self.n_phonemes);
        c.set("g3_blocks", self.g3_blocks);
        c.set("conv_groups", self.conv_groups);
        c.set("norm_groups", self.norm_groups);
        c.set("lambda", self.lambda);
        c.set("alpha", self.alpha);
        c.set("gamma", self.gamma);
        c.set("ema_eps", self.ema_eps);
        c.set("codebook_init", self.codebook_init);
        c.set("ctc_post_quant", self.ctc_post_quant);
        c.set("latent_norm", self.latent_norm);
        c.set("mel_mean", self.mel_mean);
        c.set("mel_std", self.mel_std);
        c.set("audio_fingerprint", &self.audio_fingerprint);
    }

    fn read(c: &Container) -> Result<Self> {
        Ok(VqConfig {
            n_mels: c.get("n_mels")?,
            channels: c.get("channels")?,
            latent_dim: c.get("latent_dim")?,
            codebook_size: c.get("codebook_size")?,
            n_phonemes: c.get("n_phonemes")?,
            g3_blocks: c.get("g3_blocks")?,
            conv_groups: c.get("conv_groups")?,
            norm_groups: c.get("norm_groups")?,
            lambda: c.get("lambda")?,
            alpha: c.get("alpha")?,
            gamma: c.get("gamma")?,
            ema_eps: c.get("ema_eps")?,
            codebook_init: c.get("codebook_init")?,
            ctc_post_quant: c.get("ctc_post_quant")?,
            latent_norm: c.get("latent_norm")?,
            mel_mean: c.get("mel_mean")?,
            mel_std: c.get("mel_std")?,
            audio_fingerprint: c.get("audio_fingerprint")?,
        })
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    a: Conv1d,
    b: Conv1d,
    skip: Conv1d,
}

impl ResBlock {
    fn new<R: Real>(
        s: &mut ParamStore<R>,
        name: &str,
        c_in: usize,
        c: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        ResBlock {
            a: Conv1d::new(s, &format!("{name}.a"), c_in, c, 3, ConvSpec::stride(stride), rng),
            b: Conv1d::new(s, &format!("{name}.b"), c, c, 3, ConvSpec::default(), rng),
            skip: Conv1d::new(s, &format!("{name}.skip"), c_in, c, 1, ConvSpec::stride(stride), rng),
        }
    }

    fn forward<R: Real>(&self, g: &mut Graph<R>, s: &ParamStore<R>, x: Var) -> Result<Var> {
        let h = self.a.forward(g, s, x)?;
        let h = g.relu(h);
        let h = self.b.forward(g, s, h)?;
        let r = self.skip.forward(g, s, x)?;
        let y = g.add(h, r)?;
        Ok(g.relu(y))
    }
}

#[derive(Clone, Debug)]
struct G3Block {
    gru: BiGru,
    conv: Conv1d,
    norm: GroupNorm,
}

impl G3Block {
    /// `x + relu(GN(conv(BiGRU(x))))` on `x[C×T]`.
    fn forward<R: Real>(&self, g: &mut Graph<R>, s: &ParamStore<R>, x: Var) -> Result<Var> {
        let xt = g.transpose(x)?;
        let h = self.gru.forward(g, s, xt)?;
        let h = g.transpose(h)?;
        let h = self.conv.forward(g, s, h)?;
        let h = self.norm.forward(g, s, h)?;
        let h = g.relu(h);
        Ok(g.add(x, h)?)
    }
}

#[derive(Clone, Debug)]
struct LevelDecoder {
    input: Conv1d,
    blocks: Vec<G3Block>,
    factor: usize,
    up: Option<Conv1d>,
    out: Conv1d,
}

impl LevelDecoder {
    fn forward<R: Real>(&self, g: &mut Graph<R>, s: &ParamStore<R>, hq: Var) -> Result<Var> {
        let mut x = self.input.forward(g, s, hq)?;
        for b in &self.blocks {
            x = b.forward(g, s, x)?;
        }
        if let Some(up) = &self.up {
            x = g.repeat_time(x, self.factor)?;
            x = up.forward(g, s, x)?;
        }
        Ok(self.out.forward(g, s, x)?)
    }
}

/// How latents are snapped to the codebook during a forward pass.
#[derive(Clone, Debug)]
pub enum Quantize<R> {
    /// Nearest prototype with a straight-through gradient.
    Nearest,
    /// Given codes and offsets `e_z − h` recorded at a base point; the
    /// forward value is `h + offset`, so the map is smooth for gradient checks.
    Frozen {
        codes: [Vec<usize>; 3],
        offsets: [Tensor<R>; 3],
    },
}

/// Graph handles and scalar values of one training forward pass.
#[derive(Clone, Debug)]
pub struct VqForward {
    /// `[T×n_mels]` in the normalized domain.
    pub recon: Var,
    /// Pre-quantization latents `[D×L]` per level, top first.
    pub latents: [Var; 3],
    pub codes: [Vec<usize>; 3],
    pub commits: [Var; 3],
    pub ctc_logits: Var,
    pub ctc: Option<Var>,
    pub mse: Var,
    pub total: Var,
    pub report: VqLossReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqLossReport {
    pub mse: f64,
    pub commit_top: f64,
    pub commit_mid: f64,
    pub commit_bot: f64,
    pub ctc: f64,
    pub total: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl VqLossReport {
    pub fn new(mse: f64, commits: [f64; 3], ctc: f64, lambda: f64, alpha: f64) -> Result<Self> {
        if lambda < 0.0 || alpha < 0.0 {
            return Err(Error::Config(format!("λ={lambda} and α={alpha} must be non-negative")));
        }
        Ok(VqLossReport {
            mse,
            commit_top: commits[0],
            commit_mid: commits[1],
            commit_bot: commits[2],
            ctc,
            total: mse + lambda * (commits[0] + commits[1] + commits[2]) + alpha * ctc,
            lambda,
            alpha,
        })
    }
}

pub struct VqVae<R> {
    pub cfg: VqConfig,
    pub store: ParamStore<R>,
    pub codebooks: [Codebook<R>; 3],
    /// Scale on the CTC gradient reaching the encoder; 0 trains only the
    /// CTC head. The loss value is unaffected.
    pub ctc_encoder_grad: f64,
    in_conv: Conv1d,
    blocks: Vec<ResBlock>,
    heads: [Conv1d; 3],
    decoders: [LevelDecoder; 3],
    ctc_head: Linear,
}

impl<R: Real> VqVae<R> {
    pub fn new(cfg: VqConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut s = ParamStore::new();
        let (c, d) = (cfg.channels, cfg.latent_dim);
        let in_conv = Conv1d::new(&mut s, "enc.in", cfg.n_mels, c, 3, ConvSpec::default(), rng);
        let blocks = (0..5)
            .map(|i| ResBlock::new(&mut s, &format!("enc.rb{i}"), c, c, if i >= 3 { 2 } else { 1 }, rng))
            .collect();
        let head = |s: &mut ParamStore<R>, lvl: &str, rng: &mut _| {
            Conv1d::new(s, &format!("enc.head.{lvl}"), c, d, 1, ConvSpec::default(), rng)
        };
        let heads = [
            head(&mut s, "top", rng),
            head(&mut s, "mid", rng),
            head(&mut s, "bot", rng),
        ];
        let decoder = |s: &mut ParamStore<R>, lvl: usize, rng: &mut _| {
            let name = format!("dec.{}", LEVELS[lvl]);
            let factor = FACTORS[lvl];
            LevelDecoder {
                input: Conv1d::new(s, &format!("{name}.in"), d, c, 1, ConvSpec::default(), rng),
                blocks: (0..cfg.g3_blocks)
                    .map(|i| G3Block {
                        gru: BiGru::new(s, &format!("{name}.g3.{i}.gru"), c, c / 2, rng),
                        conv: Conv1d::new(
                            s,
                            &format!("{name}.g3.{i}.conv"),
                            c,
                            c,
                            3,
                            ConvSpec::dilated(1 << (i % 3), cfg.conv_groups),
                            rng,
                        ),
                        norm: GroupNorm::new(s, &format!("{name}.g3.{i}.norm"), c, cfg.norm_groups),
                    })
                    .collect(),
                factor,
                up: (factor > 1).then(|| Conv1d::new(s, &format!("{name}.up"), c, c, 3, ConvSpec::default(), rng)),
                out: Conv1d::new(s, &format!("{name}.out"), c, cfg.n_mels, 1, ConvSpec::default(), rng),
            }
        };
        let decoders = [
            decoder(&mut s, 0, rng),
            decoder(&mut s, 1, rng),
            decoder(&mut s, 2, rng),
        ];
        let ctc_head = Linear::new(&mut s, "ctc.head", d, cfg.n_phonemes + 1, rng);
        let mut cb = || Codebook::new(cfg.codebook_size, d, cfg.codebook_init, cfg.gamma, cfg.ema_eps, rng);
        let codebooks = [cb()?, cb()?, cb()?];
        Ok(VqVae {
            cfg,
            store: s,
            codebooks,
            ctc_encoder_grad: 1.0,
            in_conv,
            blocks,
            heads,
            decoders,
            ctc_head,
        })
    }

    /// Normalized `[T×n_mels]` tensor for a mel spectrogram.
    pub fn normalize(&self, mel: &MelSpectrogram) -> Result<Tensor<R>> {
        if mel.n_mels != self.cfg.n_mels {
            return Err(Error::Mismatch(format!(
                "mel has {} bins, model expects {}",
                mel.n_mels, self.cfg.n_mels
            )));
        }
        let (m, s) = (self.cfg.mel_mean, self.cfg.mel_std);
        let data = mel.data.iter().map(|&v| R::lit((v as f64 - m) / s)).collect();
        Ok(Tensor::new(&[mel.n_frames, mel.n_mels], data)?)
    }

    /// Undoes `normalize` on a `[T×n_mels]` tensor.
    pub fn denormalize(&self, x: &Tensor<R>, fingerprint: &str) -> MelSpectrogram {
        let (m, s) = (self.cfg.mel_mean, self.cfg.mel_std);
        MelSpectrogram {
            n_frames: x.shape()[0],
            n_mels: x.shape()[1],
            data: x.data().iter().map(|v| (v.as_f64() * s + m) as f32).collect(),
            fingerprint: fingerprint.to_string(),
        }
    }

    /// Latents `[D×L]` for top, mid and bottom from a normalized `x[T×n_mels]`.
    pub fn encode(&self, g: &mut Graph<R>, x: Var) -> Result<[Var; 3]> {
        let t = g.shape(x)[0];
        if !t.is_multiple_of(4) {
            return Err(Error::Input(format!("frame count {t} is not a multiple of 4")));
        }
        let s = &self.store;
        let xt = g.transpose(x)?;
        let mut h = self.in_conv.forward(g, s, xt)?;
        for b in &self.blocks[..3] {
            h = b.forward(g, s, h)?;
        }
        let bot = self.head(g, 2, h)?;
        h = self.blocks[3].forward(g, s, h)?;
        let mid = self.head(g, 1, h)?;
        h = self.blocks[4].forward(g, s, h)?;
        let top = self.head(g, 0, h)?;
        Ok([top, mid, bot])
    }

    fn head(&self, g: &mut Graph<R>, lvl: usize, h: Var) -> Result<Var> {
        let z = self.heads[lvl].forward(g, &self.store, h)?;
        if !self.cfg.latent_norm {
            return Ok(z);
        }
        let d = self.cfg.latent_dim;
        let one = g.constant(Tensor::full(&[d], R::one()));
        let zero = g.constant(Tensor::zeros(&[d]));
        let rows = g.transpose(z)?;
        let n = g.layer_norm(rows, one, zero)?;
        Ok(g.transpose(n)?)
    }

    /// Sum of the three level decoders, `[T×n_mels]`.
    pub fn decode(&self, g: &mut Graph<R>, hq: &[Var; 3]) -> Result<Var> {
        let branches = self.decode_branches(g, hq)?;
        let s = g.add(branches[0], branches[1])?;
        let s = g.add(s, branches[2])?;
        Ok(g.transpose(s)?)
    }

    /// Per-level decoder outputs `[n_mels×T]` before summation.
    pub fn decode_branches(&self, g: &mut Graph<R>, hq: &[Var; 3]) -> Result<[Var; 3]> {
        let lt = g.shape(hq[0])[1];
        for (lvl, &f) in FACTORS.iter().enumerate() {
            let l = g.shape(hq[lvl])[1];
            if l != lt * 4 / f {
                return Err(Error::Input(format!(
                    "latent lengths {}/{}/{} violate the 1:2:4 ratio",
                    lt,
                    g.shape(hq[1])[1],
                    g.shape(hq[2])[1]
                )));
            }
        }
        let s = &self.store;
        Ok([
            self.decoders[0].forward(g, s, hq[0])?,
            self.decoders[1].forward(g, s, hq[1])?,
            self.decoders[2].forward(g, s, hq[2])?,
        ])
    }

    /// Quantizes one level. Returns codes, the quantized latent and the
    /// commitment loss `mean_l ‖h_l − sg(e_z)‖²`.
    pub fn quantize(&self, g: &mut Graph<R>, lvl: usize, h: Var, mode: &Quantize<R>) -> Result<(Vec<usize>, Var, Var)> {
        let (d, l) = g.value(h).dims2("quantize")?;
        let cb = &self.codebooks[lvl];
        if d != cb.d {
            return Err(Error::Input(format!(
                "latent dim {d} does not match codebook dim {}",
                cb.d
            )));
        }
        let rows = g.value(h).transposed()?;
        let (codes, hq) = match mode {
            Quantize::Nearest => {
                let codes = cb.assign(rows.data())?;
                let e = Tensor::new(&[l, d], cb.lookup(&codes)?)?.transposed()?;
                let hq = g.custom(&[h], e, |c| vec![Some(c.grad.to_vec())]);
                (codes, hq)
            }
            Quantize::Frozen { codes, offsets } => {
                let hq = g.add_const(h, &offsets[lvl])?;
                (codes[lvl].clone(), hq)
            }
        };
        let e = Tensor::new(&[l, d], cb.lookup(&codes)?)?.transposed()?;
        let neg = Tensor::new(&[d, l], e.data().iter().map(|&v| -v).collect())?;
        let diff = g.add_const(h, &neg)?;
        let sq = g.square(diff);
        let sum = g.sum(sq);
        let commit = g.scale(sum, R::lit(1.0 / l as f64));
        Ok((codes, hq, commit))
    }

    /// Offsets that make `Quantize::Frozen` reproduce nearest-neighbour
    /// quantization at the current parameters.
    pub fn freeze_quantization(&self, x: &Tensor<R>) -> Result<Quantize<R>> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let hs = self.encode(&mut g, xv)?;
        let mut codes: [Vec<usize>; 3] = Default::default();
        let mut offsets: Vec<Tensor<R>> = Vec::new();
        for lvl in 0..3 {
            let h = g.value(hs[lvl]);
            let (d, l) = h.dims2("freeze")?;
            let rows = h.transposed()?;
            let c = self.codebooks[lvl].assign(rows.data())?;
            let e = Tensor::new(&[l, d], self.codebooks[lvl].lookup(&c)?)?.transposed()?;
            let off = e.data().iter().zip(h.data()).map(|(&a, &b)| a - b).collect();
            offsets.push(Tensor::new(&[d, l], off)?);
            codes[lvl] = c;
        }
        let [o0, o1, o2]: [Tensor<R>; 3] = offsets.try_into().expect("three levels");
        Ok(Quantize::Frozen {
            codes,
            offsets: [o0, o1, o2],
        })
    }

    /// CTC logits `[L_top×(P+1)]` from a top latent `[D×L]`.
    pub fn ctc_logits(&self, g: &mut Graph<R>, h_top: Var) -> Result<Var> {
        let rows = g.transpose(h_top)?;
        Ok(self.ctc_head.forward(g, &self.store, rows)?)
    }

    /// Full objective on a normalized `x[T×n_mels]`. `phonemes` is skipped
    /// (ctc term 0) when `None` or when α = 0.
    pub fn forward(
        &self,
        g: &mut Graph<R>,
        x: &Tensor<R>,
        phonemes: Option<&[usize]>,
        mode: &Quantize<R>,
    ) -> Result<VqForward> {
        let xv = g.constant(x.clone());
        let hs = self.encode(g, xv)?;
        let mut codes: [Vec<usize>; 3] = Default::default();
        let mut hq = [hs[0]; 3];
        let mut commits = [hs[0]; 3];
        for lvl in 0..3 {
            let (c, q, k) = self.quantize(g, lvl, hs[lvl], mode)?;
            codes[lvl] = c;
            hq[lvl] = q;
            commits[lvl] = k;
        }
        let recon = self.decode(g, &hq)?;
        let mse = g.mse(recon, xv)?;
        let mut ctc_in = if self.cfg.ctc_post_quant { hq[0] } else { hs[0] };
        if self.ctc_encoder_grad <= 0.0 {
            ctc_in = g.constant(g.value(ctc_in).clone());
        } else if self.ctc_encoder_grad < 1.0 {
            let k = R::lit(self.ctc_encoder_grad);
            let v = g.value(ctc_in).clone();
            ctc_in = g.custom(&[ctc_in], v, move |c| {
                vec![Some(c.grad.iter().map(|&x| x * k).collect())]
            });
        }
        let ctc_logits = self.ctc_logits(g, ctc_in)?;
        let ctc = match phonemes {
            Some(y) if self.cfg.alpha > 0.0 => Some(ctc::ctc_loss(g, ctc_logits, y)?),
            _ => None,
        };
        let c01 = g.add(commits[0], commits[1])?;
        let csum = g.add(c01, commits[2])?;
        let wc = g.scale(csum, R::lit(self.cfg.lambda));
        let mut total = g.add(mse, wc)?;
        if let Some(c) = ctc {
            let wc = g.scale(c, R::lit(self.cfg.alpha));
            total = g.add(total, wc)?;
        }
        let scalar = |g: &Graph<R>, v: Var| g.value(v).data()[0].as_f64();
        let report = VqLossReport::new(
            scalar(g, mse),
            [scalar(g, commits[0]), scalar(g, commits[1]), scalar(g, commits[2])],
            ctc.map_or(0.0, |c| scalar(g, c)),
            self.cfg.lambda,
            self.cfg.alpha,
        )?;
        Ok(VqForward {
            recon,
            latents: hs,
            codes,
            commits,
            ctc_logits,
            ctc,
            mse,
            total,
            report,
        })
    }

    /// Codes for a whole mel spectrogram.
    pub fn encode_codes(&self, mel: &MelSpectrogram) -> Result<CodeTriple> {
        let x = self.normalize(mel)?;
        let mut g = Graph::inference();
        let xv = g.constant(x);
        let hs = self.encode(&mut g, xv)?;
        let mut out: [Vec<usize>; 3] = Default::default();
        for lvl in 0..3 {
            let rows = g.value(hs[lvl]).transposed()?;
            out[lvl] = self.codebooks[lvl].assign(rows.data())?;
        }
        let [top, mid, bot] = out;
        CodeTriple::new(top, mid, bot)
    }

    /// Greedy CTC transcription of a mel spectrogram.
    pub fn transcribe(&self, mel: &MelSpectrogram) -> Result<Vec<usize>> {
        let x = self.normalize(mel)?;
        let mut g = Graph::inference();
        let xv = g.constant(x);
        let hs = self.encode(&mut g, xv)?;
        let src = if self.cfg.ctc_post_quant {
            let rows = g.value(hs[0]).transposed()?;
            let codes = self.codebooks[0].assign(rows.data())?;
            let e = Tensor::new(&[codes.len(), self.cfg.latent_dim], self.codebooks[0].lookup(&codes)?)?;
            g.constant(e.transposed()?)
        } else {
            hs[0]
        };
        let logits = self.ctc_logits(&mut g, src)?;
        let v: Vec<f32> = g.value(logits).data().iter().map(|x| x.as_f64() as f32).collect();
        Ok(ctc::ctc_greedy_decode(&v, self.cfg.n_phonemes + 1))
    }

    /// Quantized latents `[D×L]` for a code triple, top first.
    pub fn lookup_latents(&self, codes: &CodeTriple) -> Result<[Tensor<R>; 3]> {
        codes.check_range(self.cfg.codebook_size)?;
        let d = self.cfg.latent_dim;
        let mk = |lvl: usize, c: &[usize]| -> Result<Tensor<R>> {
            Ok(Tensor::new(&[c.len(), d], self.codebooks[lvl].lookup(c)?)?.transposed()?)
        };
        Ok([mk(0, &codes.top)?, mk(1, &codes.mid)?, mk(2, &codes.bot)?])
    }

    /// Mel spectrogram (denormalized) for a code triple.
    pub fn decode_codes(&self, codes: &CodeTriple, fingerprint: &str) -> Result<MelSpectrogram> {
        let lat = self.lookup_latents(codes)?;
        let mut g = Graph::inference();
        let hq = [
            g.constant(lat[0].clone()),
            g.constant(lat[1].clone()),
            g.constant(lat[2].clone()),
        ];
        let y = self.decode(&mut g, &hq)?;
        Ok(self.denormalize(g.value(y), fingerprint))
    }

    /// Reconstruction MSE (normalized domain) of a mel through the full
    /// quantized autoencoder.
    pub fn recon_mse(&self, mel: &MelSpectrogram) -> Result<f64> {
        let x = self.normalize(mel)?;
        let codes = self.encode_codes(mel)?;
        let lat = self.lookup_latents(&codes)?;
        let mut g = Graph::inference();
        let hq = [
            g.constant(lat[0].clone()),
            g.constant(lat[1].clone()),
            g.constant(lat[2].clone()),
        ];
        let y = self.decode(&mut g, &hq)?;
        Ok(mse_of(g.value(y).data(), x.data()))
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
        for (lvl, cb) in self.codebooks.iter().enumerate() {
            let f = |v: &[R]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<f32>>();
            let n = LEVELS[lvl];
            c.push(format!("cb.{n}.prototypes"), &[cb.m, cb.d], f(&cb.prototypes));
            c.push(format!("cb.{n}.counts"), &[cb.m], f(&cb.ema_counts));
            c.push(format!("cb.{n}.sums"), &[cb.m, cb.d], f(&cb.ema_sums));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let cfg = VqConfig::read(c)?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let mut model = VqVae::new(cfg, &mut rng)?;
        load_params(&mut model.store, c)?;
        for (lvl, cb) in model.codebooks.iter_mut().enumerate() {
            let n = LEVELS[lvl];
            let read = |key: &str, len: usize| -> Result<Vec<R>> {
                let (_, d) = c.tensor(&format!("cb.{n}.{key}"))?;
                if d.len() != len {
                    return Err(Error::Config(format!("codebook tensor cb.{n}.{key} has wrong size")));
                }
                Ok(d.iter().map(|&v| R::lit(v as f64)).collect())
            };
            cb.prototypes = read("prototypes", cb.m * cb.d)?;
            cb.ema_counts = read("counts", cb.m)?;
            cb.ema_sums = read("sums", cb.m * cb.d)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path, MAGIC)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, MAGIC)?)
    }
}

/// Copies every parameter tensor of `store` from the container by name.
pub(crate) fn load_params<R: Real>(store: &mut ParamStore<R>, c: &Container) -> Result<()> {
    for (_, p) in store.iter_mut() {
        let (shape, data) = c.tensor(&p.name)?;
        if shape != p.value.shape() {
            return Err(Error::Config(format!(
                "tensor `{}` has shape {:?} in checkpoint, model expects {:?}",
                p.name,
                shape,
                p.value.shape()
            )));
        }
        for (dst, &v) in p.value.data_mut().iter_mut().zip(data) {
            *dst = R::lit(v as f64);
        }
    }
    Ok(())
}

pub fn mse_of<R: Real>(a: &[R], b: &[R]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> VqConfig {
        VqConfig {
            n_mels: 6,
            channels: 8,
            latent_dim: 4,
            codebook_size: 8,
            n_phonemes: 3,
            g3_blocks: 1,
            conv_groups: 2,
            norm_groups: 2,
            ..VqConfig::default()
        }
    }

    fn model() -> VqVae<f64> {
        VqVae::new(tiny(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    fn input(t: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[t, 6], (0..t * 6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn latent_lengths_halve() {
        let m = model();
        for t in [16, 32] {
            let mut g = Graph::inference();
            let x = g.constant(input(t, 1));
            let hs = m.encode(&mut g, x).unwrap();
            assert_eq!(g.shape(hs[2]), &[4, t]);
            assert_eq!(g.shape(hs[1]), &[4, t / 2]);
            assert_eq!(g.shape(hs[0]), &[4, t / 4]);
        }
        let mut g = Graph::inference();
        let x = g.constant(input(10, 1));
        assert!(matches!(m.encode(&mut g, x), Err(Error::Input(_))));
    }

    #[test]
    fn zero_model_zero_input_gives_zero_latents() {
        let mut m = model();
        m.store.zero_values();
        let mut g = Graph::inference();
        let x = g.constant(Tensor::zeros(&[8, 6]));
        for h in m.encode(&mut g, x).unwrap() {
            assert!(g.value(h).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn prototype_latent_passes_through_unchanged() {
        let m = model();
        let mut g = Graph::inference();
        let cb = &m.codebooks[1];
        let rows: Vec<f64> = [3, 5].iter().flat_map(|&j| cb.prototype(j).to_vec()).collect();
        let h = g.constant(Tensor::new(&[2, 4], rows).unwrap().transposed().unwrap());
        let (codes, hq, commit) = m.quantize(&mut g, 1, h, &Quantize::Nearest).unwrap();
        assert_eq!(codes, vec![3, 5]);
        assert_eq!(g.value(hq), g.value(h));
        assert_eq!(g.value(commit).data()[0], 0.0);
    }

    #[test]
    fn loss_report_identity() {
        let m = model();
        let mut g = Graph::new();
        let f = m
            .forward(&mut g, &input(16, 2), Some(&[1, 2]), &Quantize::Nearest)
            .unwrap();
        let r = &f.report;
        let again = r.mse + 0.25 * (r.commit_top + r.commit_mid + r.commit_bot) + 0.10 * r.ctc;
        assert!((r.total - again).abs() < 1e-12);
        assert!((g.value(f.total).data()[0] - r.total).abs() < 1e-12);
        assert!(r.ctc > 0.0);
    }

    #[test]
    fn alpha_zero_drops_ctc_term() {
        let mut cfg = tiny();
        cfg.alpha = 0.0;
        let m = VqVae::<f64>::new(cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut g = Graph::new();
        let f = m
            .forward(&mut g, &input(16, 2), Some(&[1, 2]), &Quantize::Nearest)
            .unwrap();
        assert_eq!(f.report.ctc, 0.0);
        assert!(f.ctc.is_none());
    }

    #[test]
    fn perfect_reconstruction_report_is_zero() {
        let r = VqLossReport::new(0.0, [0.0; 3], 0.0, 0.25, 0.1).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(VqLossReport::new(0.0, [0.0; 3], 0.0, -1.0, 0.1).is_err());
    }

    #[test]
    fn decoder_is_additive_over_levels() {
        let m = model();
        let mut g = Graph::inference();
        let x = g.constant(input(16, 3));
        let hs = m.encode(&mut g, x).unwrap();
        let br = m.decode_branches(&mut g, &hs).unwrap();
        let total = m.decode(&mut g, &hs).unwrap();
        assert_eq!(g.shape(total), &[16, 6]);
        // zeroing the top and middle output projections leaves the bottom branch
        let mut m2 = model();
        for name in ["dec.top.out.w", "dec.top.out.b", "dec.mid.out.w", "dec.mid.out.b"] {
            let id = m2.store.id(name).unwrap();
            m2.store.get_mut(id).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g2 = Graph::inference();
        let x2 = g2.constant(input(16, 3));
        let hs2 = m2.encode(&mut g2, x2).unwrap();
        let only = m2.decode(&mut g2, &hs2).unwrap();
        let bot_t = g.value(br[2]).transposed().unwrap();
        assert!(g2.value(only).max_abs_diff(&bot_t) < 1e-12);
    }

    #[test]
    fn decode_rejects_bad_ratio() {
        let m = model();
        let mut g = Graph::inference();
        let a = g.constant(Tensor::zeros(&[4, 2]));
        let b = g.constant(Tensor::zeros(&[4, 3]));
        let c = g.constant(Tensor::zeros(&[4, 8]));
        assert!(matches!(m.decode(&mut g, &[a, b, c]), Err(Error::Input(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        m.save(&p).unwrap();
        let back = VqVae::<f64>::load(&p).unwrap();
        assert_eq!(back.cfg, m.cfg);
        for ((_, a), (_, b)) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(a.name, b.name);
            assert!(a.value.max_abs_diff(&b.value) < 1e-6);
        }
        assert_eq!(back.codebooks[0].cast::<f32>(), m.codebooks[0].cast::<f32>());
    }
}
