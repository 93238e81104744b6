//! Autoencoder training on phoneme-aligned crops of the corpus.

use std::io::Write;
use std::path::{Path, PathBuf};

use numkit::{Adam, Graph, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::Settings;
use super::corpus::Corpus;
use crate::error::{Error, Result};
use crate::vqvae::ctc::edit_distance;
use crate::vqvae::{perplexity, Quantize, VqConfig, VqVae};

#[derive(Clone, Debug, PartialEq)]
pub struct VqTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Upper bound on crop length in mel frames.
    pub crop_frames: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub eval_every: usize,
    /// Draw the initial prototypes from encoder outputs.
    pub data_init: bool,
    /// Iterations in which the CTC term trains only its own head.
    pub ctc_head_only: usize,
    /// Iterations over which the CTC gradient into the encoder then ramps
    /// linearly to full strength.
    pub ctc_blend: usize,
    pub model: VqConfig,
}

const KEYS: [&str; 22] = [
    "preset",
    "iterations",
    "batch_size",
    "crop_frames",
    "lr",
    "grad_clip",
    "seed",
    "checkpoint_every",
    "eval_every",
    "data_init",
    "ctc_head_only",
    "ctc_blend",
    "channels",
    "latent_dim",
    "codebook_size",
    "g3_blocks",
    "lambda",
    "alpha",
    "gamma",
    "ema_eps",
    "ctc_post_quant",
    "latent_norm",
];

impl VqTrainConfig {
    /// `toy` (8 clips, 5k iterations) or `small` (64 clips, 30k iterations).
    pub fn preset(name: &str) -> Result<Self> {
        let toy = VqTrainConfig {
            iterations: 5000,
            batch_size: 4,
            crop_frames: 96,
            lr: 1e-3,
            grad_clip: 1.0,
            seed: 1,
            checkpoint_every: 1000,
            eval_every: 500,
            data_init: true,
            ctc_head_only: 500,
            ctc_blend: 1000,
            model: VqConfig {
                latent_norm: true,
                ..VqConfig::default()
            },
        };
        match name {
            "toy" => Ok(toy),
            "small" => Ok(VqTrainConfig {
                iterations: 30_000,
                batch_size: 8,
                crop_frames: 192,
                lr: 3e-4,
                model: VqConfig {
                    channels: 64,
                    latent_dim: 32,
                    latent_norm: true,
                    ..VqConfig::default()
                },
                ..toy
            }),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected toy or small)"
            ))),
        }
    }

    pub fn from_settings(s: &Settings) -> Result<Self> {
        s.check_known(&KEYS)?;
        let base = Self::preset(&s.get_or("preset", "toy".to_string())?)?;
        let m = &base.model;
        let cfg = VqTrainConfig {
            iterations: s.get_or("iterations", base.iterations)?,
            batch_size: s.get_or("batch_size", base.batch_size)?,
            crop_frames: s.get_or("crop_frames", base.crop_frames)?,
            lr: s.get_or("lr", base.lr)?,
            grad_clip: s.get_or("grad_clip", base.grad_clip)?,
            seed: s.get_or("seed", base.seed)?,
            checkpoint_every: s.get_or("checkpoint_every", base.checkpoint_every)?,
            eval_every: s.get_or("eval_every", base.eval_every)?,
            data_init: s.get_or("data_init", base.data_init)?,
            ctc_head_only: s.get_or("ctc_head_only", base.ctc_head_only)?,
            ctc_blend: s.get_or("ctc_blend", base.ctc_blend)?,
            model: VqConfig {
                channels: s.get_or("channels", m.channels)?,
                latent_dim: s.get_or("latent_dim", m.latent_dim)?,
                codebook_size: s.get_or("codebook_size", m.codebook_size)?,
                g3_blocks: s.get_or("g3_blocks", m.g3_blocks)?,
                lambda: s.get_or("lambda", m.lambda)?,
                alpha: s.get_or("alpha", m.alpha)?,
                gamma: s.get_or("gamma", m.gamma)?,
                ema_eps: s.get_or("ema_eps", m.ema_eps)?,
                ctc_post_quant: s.get_or("ctc_post_quant", m.ctc_post_quant)?,
                latent_norm: s.get_or("latent_norm", m.latent_norm)?,
                ..m.clone()
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.checkpoint_every == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "iteration, batch and cadence counts must be positive".into(),
            ));
        }
        if self.crop_frames < 4 || !self.crop_frames.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "crop_frames {} must be a positive multiple of 4",
                self.crop_frames
            )));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("lr and grad_clip must be positive".into()));
        }
        self.model.validate()
    }
}

/// A training example: mel frames `[start, start+len)` of one clip and the
/// phonemes sung entirely inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub clip: usize,
    pub start: usize,
    pub len: usize,
    pub phonemes: Vec<usize>,
}

/// Consecutive segments starting at a random one, as many as fit.
pub fn sample_crop(corpus: &Corpus, max_frames: usize, rng: &mut impl Rng) -> Result<Crop> {
    let clip = rng.gen_range(0..corpus.manifest.clips.len());
    let segs = &corpus.manifest.clips[clip].segments;
    let i = rng.gen_range(0..segs.len());
    let start = segs[i].start;
    let mut end = segs[i].end;
    let mut j = i + 1;
    while j < segs.len() && segs[j].end - start <= max_frames {
        end = segs[j].end;
        j += 1;
    }
    let symbols: Vec<String> = segs[i..j].iter().filter_map(|s| s.phoneme.clone()).collect();
    Ok(Crop {
        clip,
        start,
        len: end - start,
        phonemes: corpus.phoneme_ids(&symbols)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqEval {
    pub recon_mse: f64,
    pub perplexity: [f64; 3],
    /// Greedy CTC phoneme error rate over whole clips.
    pub per: f64,
}

pub fn evaluate_vq<R: Real>(model: &VqVae<R>, corpus: &Corpus) -> Result<VqEval> {
    let mut mse_sum = 0.0;
    let mut frames = 0usize;
    let mut codes: [Vec<usize>; 3] = Default::default();
    let (mut errs, mut total) = (0usize, 0usize);
    for (info, mel) in corpus.manifest.clips.iter().zip(&corpus.mels) {
        mse_sum += model.recon_mse(mel)? * mel.n_frames as f64;
        frames += mel.n_frames;
        let c = model.encode_codes(mel)?;
        codes[0].extend(c.top);
        codes[1].extend(c.mid);
        codes[2].extend(c.bot);
        let truth = corpus.phoneme_ids(&info.phonemes())?;
        errs += edit_distance(&model.transcribe(mel)?, &truth);
        total += truth.len();
    }
    let m = model.cfg.codebook_size;
    Ok(VqEval {
        recon_mse: mse_sum / frames as f64,
        perplexity: [
            perplexity(&codes[0], m),
            perplexity(&codes[1], m),
            perplexity(&codes[2], m),
        ],
        per: errs as f64 / total.max(1) as f64,
    })
}

pub struct VqTrainOutcome {
    pub model: VqVae<f32>,
    pub initial: VqEval,
    pub last: VqEval,
    pub checkpoint: PathBuf,
}

pub(crate) fn csv(path: &Path, header: &str) -> Result<std::fs::File> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{header}").map_err(|e| Error::io(path, e))?;
    Ok(f)
}

fn eval_row(it: usize, e: &VqEval) -> String {
    format!(
        "{it},{:.6},{:.4},{:.4},{:.4},{:.4}",
        e.recon_mse, e.perplexity[0], e.perplexity[1], e.perplexity[2], e.per
    )
}

/// Trains the autoencoder and writes `vqvae.kvq`, `vq_curve.csv` and
/// `vq_eval.csv` into `out_dir`.
pub fn train_vqvae(corpus: &Corpus, cfg: &VqTrainConfig, out_dir: &Path) -> Result<VqTrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mean, std) = corpus.mel_stats();
    let mcfg = VqConfig {
        n_mels: corpus.mels[0].n_mels,
        n_phonemes: corpus.lexicon.num_phonemes(),
        mel_mean: mean,
        mel_std: std,
        audio_fingerprint: corpus.manifest.audio_fingerprint.clone(),
        ..cfg.model.clone()
    };
    let mut model: VqVae<f32> = VqVae::new(mcfg, &mut rng)?;
    if cfg.data_init {
        let mut rows: [Vec<f32>; 3] = Default::default();
        for mel in &corpus.mels {
            let x = model.normalize(mel)?;
            let mut g = Graph::inference();
            let xv = g.constant(x);
            let hs = model.encode(&mut g, xv)?;
            for lvl in 0..3 {
                rows[lvl].extend_from_slice(g.value(hs[lvl]).transposed()?.data());
            }
        }
        for lvl in 0..3 {
            model.codebooks[lvl].init_from(&rows[lvl], &mut rng)?;
        }
    }
    let ckpt = out_dir.join("vqvae.kvq");
    let curve_path = out_dir.join("vq_curve.csv");
    let eval_path = out_dir.join("vq_eval.csv");
    let mut curve = csv(
        &curve_path,
        "iter,total,mse,commit_top,commit_mid,commit_bot,ctc,grad_norm",
    )?;
    let mut evals = csv(
        &eval_path,
        "iter,recon_mse,perplexity_top,perplexity_mid,perplexity_bot,per",
    )?;
    let initial = evaluate_vq(&model, corpus)?;
    writeln!(evals, "{}", eval_row(0, &initial)).map_err(|e| Error::io(&eval_path, e))?;
    log::info!("vq iter 0: {:?}", initial);

    let mut adam = Adam::new(cfg.lr);
    let inv_b = 1.0 / cfg.batch_size as f32;
    let mut last = initial.clone();
    for it in 1..=cfg.iterations {
        let ramp = it.saturating_sub(cfg.ctc_head_only) as f64 / cfg.ctc_blend.max(1) as f64;
        model.ctc_encoder_grad = ramp.min(1.0);
        let mut acc = [0.0f64; 6];
        let mut rows: [Vec<f32>; 3] = Default::default();
        let mut codes: [Vec<usize>; 3] = Default::default();
        model.store.zero_grads();
        for _ in 0..cfg.batch_size {
            let crop = sample_crop(corpus, cfg.crop_frames, &mut rng)?;
            let mel = corpus.mels[crop.clip].slice(crop.start, crop.len);
            let x = model.normalize(&mel)?;
            let mut g = Graph::new();
            let f = model.forward(&mut g, &x, Some(&crop.phonemes), &Quantize::Nearest)?;
            let r = &f.report;
            if !r.total.is_finite() {
                model.save(&out_dir.join("vqvae.last_good.kvq"))?;
                return Err(Error::Divergence(format!("non-finite loss at iteration {it}")));
            }
            for (a, v) in acc
                .iter_mut()
                .zip([r.total, r.mse, r.commit_top, r.commit_mid, r.commit_bot, r.ctc])
            {
                *a += v / cfg.batch_size as f64;
            }
            let loss = g.scale(f.total, inv_b);
            g.backward(loss)?;
            g.accumulate_param_grads(&mut model.store);
            for lvl in 0..3 {
                rows[lvl].extend_from_slice(g.value(f.latents[lvl]).transposed()?.data());
                codes[lvl].extend_from_slice(&f.codes[lvl]);
            }
        }
        let norm = model.store.clip_grad_norm(cfg.grad_clip);
        if !norm.is_finite() {
            model.save(&out_dir.join("vqvae.last_good.kvq"))?;
            return Err(Error::Divergence(format!("non-finite gradient at iteration {it}")));
        }
        adam.step(&mut model.store)?;
        for lvl in 0..3 {
            model.codebooks[lvl].ema_update(&rows[lvl], &codes[lvl])?;
        }
        writeln!(
            curve,
            "{it},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{norm:.4}",
            acc[0], acc[1], acc[2], acc[3], acc[4], acc[5]
        )
        .map_err(|e| Error::io(&curve_path, e))?;
        if it % cfg.eval_every == 0 || it == cfg.iterations {
            last = evaluate_vq(&model, corpus)?;
            writeln!(evals, "{}", eval_row(it, &last)).map_err(|e| Error::io(&eval_path, e))?;
            log::info!("vq iter {it}: {:?}", last);
        }
        if it % cfg.checkpoint_every == 0 || it == cfg.iterations {
            model.save(&ckpt)?;
        }
    }
    Ok(VqTrainOutcome {
        model,
        initial,
        last,
        checkpoint: ckpt,
    })
}

/// Reloads a checkpoint into 32-bit parameters.
pub fn load_vq(path: &Path) -> Result<VqVae<f32>> {
    VqVae::load(path)
}
